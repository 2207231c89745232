"""Validate every JSON file in an output directory against the published schema
and check that every CSV starts with a header row."""

import csv
import json
import pathlib
import sys

import jsonschema


def main() -> int:
    schema_path, out_dir = map(pathlib.Path, sys.argv[1:3])
    schema = json.loads(schema_path.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    problems = []
    json_files = sorted(out_dir.glob("*.json"))
    csv_files = sorted(out_dir.glob("*.csv"))
    if not json_files:
        problems.append(f"no JSON output in {out_dir}")

    for path in json_files:
        doc = json.loads(path.read_text())
        kind = doc.get("kind", "failures")
        sub = {"$ref": f"#/$defs/{kind}", "$defs": schema["$defs"]}
        for err in jsonschema.Draft202012Validator(sub).iter_errors(doc):
            problems.append(f"{path.name}: {err.json_path}: {err.message}")
        if not validator.is_valid(doc):
            problems.append(f"{path.name}: does not match the top-level schema")

    for path in csv_files:
        with path.open(newline="") as f:
            rows = list(csv.reader(f))
        if not rows:
            problems.append(f"{path.name}: empty file, header row missing")
            continue
        header = rows[0]
        if any(not name or name[0].isdigit() or name[0] == "-" for name in header):
            problems.append(f"{path.name}: first row is not a header: {header}")
        for i, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                problems.append(f"{path.name}:{i}: {len(row)} fields, header has {len(header)}")
                break

    for p in problems:
        print(p)
    print(f"checked {len(json_files)} JSON and {len(csv_files)} CSV files in {out_dir}")
    return 1 if problems else 0


if __name__ == "__main__":
    sys.exit(main())
