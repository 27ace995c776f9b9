#pragma once

// Velocity damping nonlinearities f and their Nemytskii operators
// F(v)(x) = f(v(x)), evaluated on the sine grid and projected back onto H_N.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dampwave/errors.hpp"
#include "dampwave/noise.hpp"
#include "dampwave/spectral.hpp"

namespace dampwave {

struct NonlinearityModel {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> fprime;
  double a1 = 0.0;        // |f(xi)| <= a1 (1 + |xi|)
  double a2 = 0.0;        // inf f'(xi)
  double growth_c = 0.0;  // |f'(xi)| <= growth_c (1 + |xi|)
  std::optional<double> lip_L;
  // Declared constants come with a proof (the built-in catalogue) rather than
  // from user input; uncertified models are only accepted by the audit.
  bool certified = true;
  // f(xi) = linear_alpha * xi exactly; lets solvers skip the grid.
  std::optional<double> linear_alpha;

  bool is_zero() const { return linear_alpha && *linear_alpha == 0.0; }

  // The damping constraints a1 < (sqrt 2 / 2) eta and a2 > -eta.
  bool admissible_for(double eta) const {
    return certified && a1 < std::numbers::sqrt2 / 2.0 * eta && a2 > -eta;
  }
};

namespace models {

inline NonlinearityModel zero() {
  NonlinearityModel m;
  m.name = "zero";
  m.f = [](double) { return 0.0; };
  m.fprime = [](double) { return 0.0; };
  m.a1 = 0.0;  // any positive a1 works
  m.a2 = 0.0;
  m.growth_c = 0.0;
  m.lip_L = 0.0;
  m.linear_alpha = 0.0;
  return m;
}

inline NonlinearityModel linear(double alpha) {
  NonlinearityModel m;
  m.name = "linear";
  m.f = [alpha](double x) { return alpha * x; };
  m.fprime = [alpha](double) { return alpha; };
  m.a1 = std::abs(alpha);
  m.a2 = alpha;
  m.growth_c = std::abs(alpha);
  // ||alpha w||_{H^-1} <= |alpha| lambda_1^{-1/2} ||w||
  m.lip_L = std::abs(alpha) / std::numbers::pi;
  m.linear_alpha = alpha;
  return m;
}

inline NonlinearityModel sine(double amplitude) {
  NonlinearityModel m;
  m.name = "sine";
  m.f = [amplitude](double x) { return amplitude * std::sin(x); };
  m.fprime = [amplitude](double x) { return amplitude * std::cos(x); };
  m.a1 = std::abs(amplitude);
  m.a2 = -std::abs(amplitude);
  m.growth_c = std::abs(amplitude);
  return m;
}

inline NonlinearityModel arctan(double amplitude) {
  if (!(amplitude > 0.0)) throw DomainError("arctan model: amplitude must be positive");
  NonlinearityModel m;
  m.name = "arctan";
  m.f = [amplitude](double x) { return amplitude * std::atan(x); };
  m.fprime = [amplitude](double x) { return amplitude / (1.0 + x * x); };
  m.a1 = amplitude;  // |atan x| <= |x|
  m.a2 = 0.0;        // infimum of a/(1+x^2), approached at infinity
  m.growth_c = amplitude;
  return m;
}

// f(xi) = xi^2. Violates linear growth; only useful for exercising the audit.
inline NonlinearityModel quadratic() {
  NonlinearityModel m;
  m.name = "quadratic";
  m.f = [](double x) { return x * x; };
  m.fprime = [](double x) { return 2.0 * x; };
  m.a1 = std::numeric_limits<double>::infinity();
  m.a2 = -std::numeric_limits<double>::infinity();
  m.growth_c = 2.0;
  m.certified = false;
  return m;
}

// Sawtooth h with ever steeper rising segments, corners rounded by a C^1
// quadratic blend on [y - eps, y + eps].
//
// For x >= 0 with alpha_n = n(n+1)/2 - 1:
//   h(x) = (alpha_n - x)/2          on [alpha_n, alpha_n + n)
//   h(x) = n (x - alpha_{n+1})/2    on [alpha_n + n, alpha_{n+1})
// and h(-x) = -h(x). Slopes are -1/2 or n/2 and |h(x)| <= |x|.
class SmoothedSawtooth {
 public:
  explicit SmoothedSawtooth(double eps) : eps_(eps) {
    if (!(eps > 0.0 && eps < 0.5)) throw DomainError("smoothed sawtooth: eps must lie in (0, 0.5)");
  }

  double value(double x) const {
    if (x < 0.0) return -value(-x);
    if (auto c = corner_near(x)) {
      const double s = x - c->y + eps_;
      return c->h - c->left * eps_ + c->left * s + (c->right - c->left) * s * s / (4.0 * eps_);
    }
    return raw(x);
  }

  double slope(double x) const {
    if (x < 0.0) return slope(-x);
    if (auto c = corner_near(x)) {
      const double s = x - c->y + eps_;
      return c->left + (c->right - c->left) * s / (2.0 * eps_);
    }
    return raw_slope(x);
  }

  static double alpha(long n) { return static_cast<double>(n * (n + 1)) / 2.0 - 1.0; }

 private:
  struct Corner {
    double y, h, left, right;
  };

  // Largest n >= 1 with alpha_n <= x.
  static long segment(double x) {
    long n = static_cast<long>(std::floor((-1.0 + std::sqrt(9.0 + 8.0 * x)) / 2.0));
    n = std::max(n, 1L);
    while (alpha(n + 1) <= x) ++n;
    while (n > 1 && alpha(n) > x) --n;
    return n;
  }

  static double raw(double x) {
    const long n = segment(x);
    const double an = alpha(n);
    if (x < an + static_cast<double>(n)) return (an - x) / 2.0;
    return static_cast<double>(n) * (x - alpha(n + 1)) / 2.0;
  }

  static double raw_slope(double x) {
    const long n = segment(x);
    if (x < alpha(n) + static_cast<double>(n)) return -0.5;
    return static_cast<double>(n) / 2.0;
  }

  std::optional<Corner> corner_near(double x) const {
    const long n = segment(x);
    const double nn = static_cast<double>(n);
    // alpha_n + n: falling segment meets rising segment, h = -n/2
    const double y1 = alpha(n) + nn;
    if (std::abs(x - y1) < eps_) return Corner{y1, -nn / 2.0, -0.5, nn / 2.0};
    // alpha_m for m >= 2: rising segment of slope (m-1)/2 meets falling one, h = 0
    for (long m : {n, n + 1}) {
      if (m < 2) continue;
      const double y = alpha(m);
      if (std::abs(x - y) < eps_)
        return Corner{y, 0.0, static_cast<double>(m - 1) / 2.0, -0.5};
    }
    return std::nullopt;
  }

  double eps_;
};

// f = (eta/2) h_m: non-Lipschitz, |f| <= (eta/2)|xi|, f' >= -eta/4.
inline NonlinearityModel smoothed_hm(double eta, double eps = 0.1) {
  if (!(eta > 0.0)) throw DomainError("smoothed_hm: eta must be positive");
  SmoothedSawtooth h(eps);
  NonlinearityModel m;
  m.name = "smoothed_hm";
  m.f = [h, eta](double x) { return 0.5 * eta * h.value(x); };
  m.fprime = [h, eta](double x) { return 0.5 * eta * h.slope(x); };
  m.a1 = eta / 2.0;
  m.a2 = -eta / 4.0;
  // |h'| <= 1/2 on [0, 1 + eps); beyond, slope n/2 sits at |x| >= alpha_n + n - eps
  m.growth_c = eta / 4.0;
  return m;
}

}  // namespace models

// Built-in catalogue with default parameters tied to the damping eta.
inline std::map<std::string, NonlinearityModel> builtin_models(double eta) {
  if (!(eta > 0.0)) throw DomainError("builtin_models: eta must be positive");
  std::map<std::string, NonlinearityModel> cat;
  cat.emplace("zero", models::zero());
  cat.emplace("linear", models::linear(eta / 4.0));
  cat.emplace("sine", models::sine(eta / 4.0));
  cat.emplace("arctan", models::arctan(eta / 4.0));
  cat.emplace("smoothed_hm", models::smoothed_hm(eta));
  return cat;
}

// Nemytskii operator Pi_N F on a fixed (N, M) grid. Holds a copy of the model
// and scratch space, so one instance per trajectory.
class NemytskiiOperator {
 public:
  NemytskiiOperator(const NonlinearityModel& model, std::size_t n_modes, std::size_t m_points)
      : model_(model), basis_(n_modes, m_points), grid_(m_points), work_(m_points) {}

  const SineBasis& basis() const { return basis_; }
  const NonlinearityModel& model() const { return model_; }

  void apply(const SpectralField& v, SpectralField& out) {
    if (model_.linear_alpha) {
      const double a = *model_.linear_alpha;
      out = v;
      out *= a;
      return;
    }
    basis_.synthesize(v.coeffs(), grid_);
    for (double& g : grid_) g = model_.f(g);
    if (out.n_modes() != v.n_modes()) out = SpectralField(v.n_modes());
    basis_.analyze(grid_, out.coeffs());
  }

  SpectralField apply(const SpectralField& v) {
    SpectralField out(v.n_modes());
    apply(v, out);
    return out;
  }

  // Stores f'(v(x_j)) for subsequent jacobian_apply calls.
  void linearize(const SpectralField& v) {
    basis_.synthesize(v.coeffs(), grid_);
    deriv_.resize(grid_.size());
    for (std::size_t j = 0; j < grid_.size(); ++j) deriv_[j] = model_.fprime(grid_[j]);
  }

  // Pi_N (f'(v) w) with f'(v) from the last linearize().
  void jacobian_apply(const SpectralField& w, SpectralField& out) {
    if (model_.linear_alpha) {
      out = w;
      out *= *model_.linear_alpha;
      return;
    }
    basis_.synthesize(w.coeffs(), work_);
    for (std::size_t j = 0; j < work_.size(); ++j) work_[j] *= deriv_[j];
    if (out.n_modes() != w.n_modes()) out = SpectralField(w.n_modes());
    basis_.analyze(work_, out.coeffs());
  }

 private:
  NonlinearityModel model_;
  SineBasis basis_;
  std::vector<double> grid_;
  std::vector<double> work_;
  std::vector<double> deriv_;
};

inline SpectralField apply_F(const NonlinearityModel& model, const SpectralField& v,
                             std::size_t m_points) {
  if (m_points < v.n_modes())
    throw StructuralError("apply_F: grid of " + std::to_string(m_points) + " points aliases " +
                          std::to_string(v.n_modes()) + " modes");
  NemytskiiOperator op(model, v.n_modes(), m_points);
  return op.apply(v);
}

struct AuditReport {
  std::string model;
  double eta = 0.0;
  double radius = 0.0;
  std::size_t n_samples = 0;
  double max_growth_ratio = 0.0;   // sup |f| / (1 + |xi|)
  double min_fprime = 0.0;         // inf f'
  double max_fprime_growth = 0.0;  // sup |f'| / (1 + |xi|)
  double max_fd_error = 0.0;       // sup |f' - central difference|
  bool linear_growth_ok = false;
  bool derivative_bound_ok = false;
  bool derivative_growth_ok = false;
  bool fprime_consistent = false;
  std::optional<double> empirical_L;

  bool passed() const {
    return linear_growth_ok && derivative_bound_ok && derivative_growth_ok && fprime_consistent;
  }
};

// Scans f and f' on a uniform grid of [-R, R].
inline AuditReport audit_assumptions(const NonlinearityModel& model, double eta, double radius,
                                     std::size_t n_samples) {
  if (!(radius > 0.0)) throw DomainError("audit_assumptions: R must be positive");
  if (n_samples < 2) throw DomainError("audit_assumptions: need at least 2 samples");
  AuditReport r;
  r.model = model.name;
  r.eta = eta;
  r.radius = radius;
  r.n_samples = n_samples;
  r.min_fprime = std::numeric_limits<double>::infinity();
  const double h = 1e-7;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double xi = -radius + 2.0 * radius * static_cast<double>(i) / static_cast<double>(n_samples - 1);
    const double fx = model.f(xi);
    const double dfx = model.fprime(xi);
    const double w = 1.0 + std::abs(xi);
    r.max_growth_ratio = std::max(r.max_growth_ratio, std::abs(fx) / w);
    r.min_fprime = std::min(r.min_fprime, dfx);
    r.max_fprime_growth = std::max(r.max_fprime_growth, std::abs(dfx) / w);
    const double fd = (model.f(xi + h) - model.f(xi - h)) / (2.0 * h);
    r.max_fd_error = std::max(r.max_fd_error, std::abs(fd - dfx));
  }
  const double slack = 1e-12;
  const double a1_limit = std::numbers::sqrt2 / 2.0 * eta;
  r.linear_growth_ok = r.max_growth_ratio < a1_limit &&
                       (!model.certified || r.max_growth_ratio <= model.a1 + slack);
  r.derivative_bound_ok = r.min_fprime > -eta && (!model.certified || r.min_fprime >= model.a2 - slack);
  r.derivative_growth_ok = std::isfinite(r.max_fprime_growth) &&
                           (!model.certified || r.max_fprime_growth <= model.growth_c + slack);
  r.fprime_consistent = r.max_fd_error <= 1e-6;
  return r;
}

// Largest observed ||Pi_N F(v1) - Pi_N F(v2)||_{H^-1} / ||v1 - v2|| over random
// pairs. A lower estimate for the H^-1 Lipschitz constant, never a proof.
inline double estimate_lipschitz_hm1(const NonlinearityModel& model, std::size_t n_modes,
                                     std::size_t n_pairs, double amplitude, NormalStream& rng) {
  NemytskiiOperator op(model, n_modes, default_grid_points(n_modes));
  double best = 0.0;
  SpectralField f1(n_modes), f2(n_modes);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    SpectralField v1(n_modes), v2(n_modes);
    // spread the pair over several scales so both small and large differences are probed
    const double scale = amplitude * std::pow(10.0, -3.0 * static_cast<double>(p % 4) / 3.0);
    for (std::size_t i = 0; i < n_modes; ++i) {
      const double decay = 1.0 / static_cast<double>(i + 1);
      v1[i] = amplitude * decay * rng();
      v2[i] = v1[i] + scale * decay * rng();
    }
    op.apply(v1, f1);
    op.apply(v2, f2);
    const double den = sobolev_norm(v1 - v2, 0.0);
    if (den == 0.0) continue;
    best = std::max(best, sobolev_norm(f1 - f2, -1.0) / den);
  }
  return best;
}

}  // namespace dampwave
