#include "nhmpc/certify_regulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace nhmpc {

namespace {

using std::numbers::pi;

// ceil() that ignores representation noise such as pi / (pi/4) = 4.0000000001.
int ceil_steps(double x) { return static_cast<int>(std::ceil(x - 1e-9)); }

double pow4(double x) { return (x * x) * (x * x); }

}  // namespace

void CertificateParams::validate() const {
  for (double v : {delta, q1, q2, q3, r1, r2, x_bar, y_bar, v_bar, omega_bar}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("certificate: parameters must be positive");
  }
  const double per_second = 1.0 / delta;
  if (std::abs(per_second - std::round(per_second)) > 1e-9) {
    throw std::invalid_argument("certificate: 1/delta must be an integer");
  }
  const double slack = 1e-12;
  if (r2 > q3 * delta / 2 * (1 + slack)) throw std::invalid_argument("certificate: r2 <= q3 delta / 2 violated");
  if (r1 > q1 * delta / 2 * (1 + slack)) throw std::invalid_argument("certificate: r1 <= q1 delta / 2 violated");
}

CertificateParams CertificateParams::table_cell(double delta, double q2) {
  CertificateParams p;
  p.delta = delta;
  p.q1 = 1.0;
  p.q2 = q2;
  p.q3 = 0.1;
  p.r1 = p.q1 * delta / 2;
  p.r2 = p.q3 * delta / 2;
  p.x_bar = 2.0;
  p.y_bar = 2.0;
  p.v_bar = 0.6;
  p.omega_bar = pi / 4;
  return p;
}

CertificateParams CertificateParams::scaled(double factor) const {
  CertificateParams p = *this;
  p.q1 *= factor;
  p.q2 *= factor;
  p.q3 *= factor;
  p.r1 *= factor;
  p.r2 *= factor;
  return p;
}

int CertificateParams::steps_per_second() const { return static_cast<int>(std::lround(1.0 / delta)); }

ManeuverSteps maneuver_steps(const CertificateParams& p, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("maneuver_steps: s must be positive");
  ManeuverSteps m;
  m.k_star_n2 = ceil_steps((pi / 2) / (std::min(p.omega_bar, pi / 2) * p.delta));
  m.l_star_n2 = ceil_steps(std::hypot(p.x_bar, p.y_bar) / (p.v_bar * p.delta));
  m.k_star_n1 = ceil_steps(pi / (std::min(p.omega_bar, pi) * p.delta));
  const double reach = std::pow(s / p.q1, 0.25);
  m.l_star_n1 = ceil_steps(reach / (std::min(p.v_bar, reach) * p.delta));
  return m;
}

std::vector<double> coeffs_n2(const CertificateParams& p, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("coeffs_n2: s must be positive");
  const auto steps = maneuver_steps(p, s);
  const int k = steps.k_star_n2;
  const int l = steps.l_star_n2;
  const double d3 = p.delta * p.delta * p.delta;
  const double turn = p.q3 * pow4(pi) / (16.0 * pow4(k) * s);

  std::vector<double> c;
  c.reserve(static_cast<size_t>(3 * k + l));
  c.insert(c.end(), static_cast<size_t>(k), 1.0);  // wait
  for (int i = 0; i < k; ++i) c.push_back(1.0 + turn * (pow4(i) + 1.0 / (2.0 * d3)));
  const double drive_extra = (p.q3 * pow4(pi / 2) + p.r1 * pow4(p.v_bar)) / s;
  for (int i = 0; i < l; ++i) {
    const double left = static_cast<double>(l - i) / l;
    c.push_back(left * left + drive_extra);
  }
  for (int i = 0; i < k; ++i) c.push_back(turn * (pow4(k - i) + 1.0 / (2.0 * d3)));
  return c;
}

std::vector<double> coeffs_n1(const CertificateParams& p, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("coeffs_n1: s must be positive");
  const auto steps = maneuver_steps(p, s);
  const int k = steps.k_star_n1;
  const int l = steps.l_star_n1;
  const int per_second = p.steps_per_second();
  const double ld = l * p.delta;

  std::vector<double> c;
  c.reserve(static_cast<size_t>(k + l + 4 * per_second));
  c.insert(c.end(), static_cast<size_t>(k), 1.0);  // wait
  c[0] = 1.0 + 1.0 / (2.0 * l * ld * ld * ld);   // overshoot of the drive to the y-axis
  c.insert(c.end(), static_cast<size_t>(l), 1.0);  // drive to the y-axis

  // Four one-second shuffle segments; `bound` is the (sqrt(s/q2) + 1.5)^4 / 64
  // estimate of v^4 / y0^2 used by every segment.
  const double bound = pow4(std::sqrt(s / p.q2) + 1.5) / 64.0;
  const double anchor[4] = {
      1.0 + bound * p.r1 / p.q2 + p.r2 / p.q2,
      9.0 / 16.0 + (p.q3 + p.r2 + (p.q1 + p.r1) * bound) / p.q2,
      1.0 / 4.0 + (p.r2 + (16.0 * p.q1 + p.r1) * bound) / p.q2,
      1.0 / 16.0 + (p.q3 + p.r2 + (p.q1 + p.r1) * bound) / p.q2,
  };
  const double between[4] = {
      (p.q1 * bound + p.q3) / p.q2,
      15.0 * p.q1 * bound / p.q2,
      p.q3 / p.q2,
      0.0,
  };
  for (int n = 0; n < 4; ++n) {
    c.push_back(anchor[n]);
    for (int i = 1; i < per_second; ++i) c.push_back(anchor[n] + between[n]);
  }
  return c;
}

std::vector<double> gamma_from_coeffs(std::span<const double> c) {
  if (c.empty()) throw std::invalid_argument("gamma_from_coeffs: empty coefficient sequence");
  for (double v : c) {
    if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("gamma_from_coeffs: negative coefficient");
  }
  std::vector<double> sorted(c.begin(), c.end());
  std::sort(sorted.begin() + 1, sorted.end(), std::greater<>());
  std::vector<double> gamma(sorted.size() + 1, 0.0);
  std::partial_sum(sorted.begin(), sorted.end(), gamma.begin() + 1);
  return gamma;
}

double gamma_at(std::span<const double> gamma, int i) {
  if (i < 0) throw std::invalid_argument("gamma_at: negative index");
  return gamma[std::min(static_cast<size_t>(i), gamma.size() - 1)];
}

double alpha_deficit(std::span<const double> g) {
  if (g.empty()) throw std::invalid_argument("alpha_n: need gamma_2..gamma_N");
  // 1 - alpha = (g_N - 1) P1 / (P0 - P1) with P0 = prod g_k, P1 = prod (g_k - 1),
  // evaluated through ratio = P1 / P0 so that long horizons do not overflow.
  double log_ratio = 0.0;
  for (double v : g) {
    if (!(v >= 1.0)) throw std::invalid_argument("alpha_n: gamma values must be >= 1");
    if (v == 1.0) return 0.0;  // P1 = 0
    log_ratio += std::log1p(-1.0 / v);
  }
  const double ratio = std::exp(log_ratio);
  if (!(ratio < 1.0)) return std::numeric_limits<double>::infinity();
  return (g.back() - 1.0) * ratio / -std::expm1(log_ratio);
}

double alpha_n(std::span<const double> g) { return 1.0 - alpha_deficit(g); }

std::vector<double> s_grid(const CertificateParams& p, const HorizonSearchOptions& opts) {
  const double s_max = p.q1 * pow4(p.x_bar) + p.q2 * p.y_bar * p.y_bar;
  std::vector<double> grid;
  if (opts.grid == SGrid::Linear) {
    const double step = opts.linear_step * p.q1;
    const auto count = static_cast<int>(std::floor(s_max / step + 1e-9));
    for (int i = 1; i <= count; ++i) grid.push_back(i * step);
  } else {
    const double lo = std::log(opts.geometric_min * p.q1);
    const double hi = std::log(s_max);
    for (int i = 0; i < opts.geometric_points; ++i) {
      grid.push_back(std::exp(lo + (hi - lo) * i / (opts.geometric_points - 1)));
    }
  }
  return grid;
}

namespace {

struct GammaTable {
  std::vector<double> s;
  std::vector<std::vector<double>> far;   // gamma^N2 per s
  std::vector<std::vector<double>> near;  // gamma^N1 per s

  GammaTable(const CertificateParams& p, const HorizonSearchOptions& opts) : s(s_grid(p, opts)) {
    far.reserve(s.size());
    near.reserve(s.size());
    for (double sv : s) {
      far.push_back(gamma_from_coeffs(coeffs_n2(p, sv)));
      near.push_back(gamma_from_coeffs(coeffs_n1(p, sv)));
    }
  }

  // Minimum over s of max(gamma^N2_N, gamma^N1_N); first minimizer wins ties.
  std::pair<double, double> best(int n) const {
    double value = std::numeric_limits<double>::infinity();
    double arg = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
      const double v = std::max(gamma_at(far[i], n), gamma_at(near[i], n));
      if (v < value) {
        value = v;
        arg = s[i];
      }
    }
    return {value, arg};
  }
};

}  // namespace

HorizonCertificate minimal_horizon(const CertificateParams& p, const HorizonSearchOptions& opts) {
  p.validate();
  const GammaTable table(p, opts);
  HorizonCertificate cert;
  for (int n = 2; n <= opts.n_cap; ++n) {
    const auto [g_star, s_star] = table.best(n);
    cert.gamma.push_back(std::min(static_cast<double>(n), g_star));
    cert.s_at.push_back(s_star);
    const double a = alpha_n(cert.gamma);
    cert.alpha.push_back(a);
    if (a > ALPHA_TOL) {
      cert.n_hat = n;
      cert.alpha_n_hat = a;
      cert.s_opt = s_star;
      return cert;
    }
  }
  std::ostringstream msg;
  msg << "minimal_horizon: no stabilizing horizon up to " << opts.n_cap << "; gamma tail:";
  for (size_t i = cert.gamma.size() > 5 ? cert.gamma.size() - 5 : 0; i < cert.gamma.size(); ++i) {
    msg << ' ' << cert.gamma[i];
  }
  throw std::runtime_error(msg.str());
}

AlphaCurve alpha_curve(const CertificateParams& p, int n_max, const HorizonSearchOptions& opts) {
  p.validate();
  const GammaTable table(p, opts);
  AlphaCurve curve;
  for (int n = 2; n <= n_max; ++n) {
    curve.gamma.push_back(std::min(static_cast<double>(n), table.best(n).first));
    curve.deficit.push_back(alpha_deficit(curve.gamma));
    curve.alpha.push_back(1.0 - curve.deficit.back());
  }
  return curve;
}

MonotonicityReport s_monotonicity(const CertificateParams& p, int horizon, const HorizonSearchOptions& opts) {
  p.validate();
  const GammaTable table(p, opts);
  MonotonicityReport rep;
  const double tol = 1e-12;
  for (size_t i = 1; i < table.s.size(); ++i) {
    ++rep.samples;
    if (gamma_at(table.far[i], horizon) > gamma_at(table.far[i - 1], horizon) + tol) ++rep.n2_increases;
    if (gamma_at(table.near[i], horizon) < gamma_at(table.near[i - 1], horizon) - tol) ++rep.n1_decreases;
  }
  return rep;
}

}  // namespace nhmpc
