#pragma once

// Long-time statistics of the discrete dynamics: energy functionals,
// observables with certified C_{p,gamma} seminorms, time averages, coupled
// contraction and one-dimensional Wasserstein distances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dampwave/errors.hpp"
#include "dampwave/integrator.hpp"
#include "dampwave/noise.hpp"
#include "dampwave/nonlinearity.hpp"
#include "dampwave/spectral.hpp"

namespace dampwave {

// Admissible range 0 < eps < min{(eta + a2) lambda_1^2 / (1 + 2 a1^2), 2}.
inline double lyapunov_epsilon_bound(double eta, const NonlinearityModel& model) {
  const double l1 = eigenvalue(1);
  return std::min((eta + model.a2) * l1 * l1 / (1.0 + 2.0 * model.a1 * model.a1), 2.0);
}

struct LyapunovParams {
  double epsilon = 0.0;
  double eta = 0.0;

  static LyapunovParams make(double epsilon, double eta, const NonlinearityModel& model) {
    if (!(eta > 0.0)) throw ConfigError("lyapunov.eta", "must be positive");
    const double bound = lyapunov_epsilon_bound(eta, model);
    if (!(epsilon > 0.0 && epsilon < bound))
      throw ConfigError("lyapunov.epsilon", "must lie in (0, " + std::to_string(bound) + ")");
    return {epsilon, eta};
  }

  // Half the smallest constraint on eps used by the energy and contraction
  // estimates; lip_hat is an H^-1 Lipschitz surrogate for F.
  static LyapunovParams default_for(double eta, const NonlinearityModel& model, double lip_hat) {
    const double contraction = (eta + model.a2) / (4.0 * (lip_hat * lip_hat + eta * eta + 1.0));
    const double eps = 0.5 * std::min(contraction, lyapunov_epsilon_bound(eta, model));
    return make(eps, eta, model);
  }
};

// H_2 = |u|_{H^2}^2 + |v|_{H^1}^2 + eps (<u, v>_{H^1} + eta/2 |u|_{H^1}^2)
inline double lyapunov_h2(const PhaseState& x, const LyapunovParams& p) {
  return sobolev_norm_sq(x.u, 2.0) + sobolev_norm_sq(x.v, 1.0) +
         p.epsilon * (sobolev_inner(x.u, x.v, 1.0) + 0.5 * p.eta * sobolev_norm_sq(x.u, 1.0));
}

// H_1 = |u|_{H^1}^2 + |v|^2 + eps (<u, v> + eta/2 |u|^2)
inline double lyapunov_h1(const PhaseState& x, const LyapunovParams& p) {
  return sobolev_norm_sq(x.u, 1.0) + sobolev_norm_sq(x.v, 0.0) +
         p.epsilon * (sobolev_inner(x.u, x.v, 0.0) + 0.5 * p.eta * sobolev_norm_sq(x.u, 0.0));
}

// Constants of the equivalence (2 - eps)/2 E <= H <= (eps + eps eta + 2)/2 E.
inline double lyapunov_lower_factor(const LyapunovParams& p) { return (2.0 - p.epsilon) / 2.0; }
inline double lyapunov_upper_factor(const LyapunovParams& p) {
  return (p.epsilon + p.epsilon * p.eta + 2.0) / 2.0;
}

// d_{p,gamma}(x1, x2) = |x1 - x2|^gamma (1 + |x1|^p + |x2|^p)^{1/2} with norms in H^1.
inline double d_p_gamma(const PhaseState& x1, const PhaseState& x2, double p, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("d_p_gamma: gamma must lie in (0, 1]");
  if (!(p >= 0.0)) throw DomainError("d_p_gamma: p must be nonnegative");
  const double diff = phase_norm(x1 - x2, 1.0);
  if (diff == 0.0) return 0.0;
  const double n1 = phase_norm(x1, 1.0), n2 = phase_norm(x2, 1.0);
  // fixed summation order keeps the value bitwise symmetric
  const double a = std::pow(std::min(n1, n2), p), b = std::pow(std::max(n1, n2), p);
  return std::pow(diff, gamma) * std::sqrt(1.0 + a + b);
}

// An observable together with an upper bound on its C_{p,gamma} seminorm on
// H^1_N. Bounds for h2_norm_sq and lyapunov_h2 depend on N (they are not
// continuous on H^1) and are computed for the given mode count.
struct CpGammaFunctional {
  std::string name;
  double p = 0.0;
  double gamma = 1.0;
  double seminorm = 0.0;
  std::function<double(const PhaseState&)> phi;

  double operator()(const PhaseState& x) const { return phi(x); }
};

inline CpGammaFunctional constant_observable(double c) {
  return {"constant", 0.0, 1.0, 0.0, [c](const PhaseState&) { return c; }};
}

// Names: h1_norm_sq, h2_norm_sq, v_norm_sq, mode_u(k), mode_v(k), lyapunov_h1, lyapunov_h2.
inline CpGammaFunctional make_observable(const std::string& name, std::size_t n_modes,
                                         std::optional<LyapunovParams> lyap = std::nullopt) {
  // |q(x1) - q(x2)| <= |Q| |x1 - x2| (|x1| + |x2|) <= sqrt 2 |Q| d_{2,1}(x1, x2)
  const double quad = std::numbers::sqrt2;
  const double lam_n = eigenvalue(n_modes);
  auto parse_mode = [&](const std::string& prefix) -> std::optional<std::size_t> {
    if (name.rfind(prefix + "(", 0) != 0 || name.back() != ')') return std::nullopt;
    const std::string inner = name.substr(prefix.size() + 1, name.size() - prefix.size() - 2);
    std::size_t pos = 0;
    unsigned long k = 0;
    try {
      k = std::stoul(inner, &pos);
    } catch (const std::exception&) {
      throw ConfigError("observable", "bad mode index in '" + name + "'");
    }
    if (pos != inner.size() || k == 0 || k > n_modes)
      throw ConfigError("observable", "mode index out of range in '" + name + "'");
    return static_cast<std::size_t>(k);
  };

  if (name == "h1_norm_sq")
    return {name, 2.0, 1.0, quad, [](const PhaseState& x) { return phase_norm_sq(x, 1.0); }};
  if (name == "h2_norm_sq")
    return {name, 2.0, 1.0, quad * lam_n, [](const PhaseState& x) { return phase_norm_sq(x, 2.0); }};
  if (name == "v_norm_sq")
    return {name, 2.0, 1.0, quad, [](const PhaseState& x) { return sobolev_norm_sq(x.v, 0.0); }};
  // linear functionals: |phi(x1) - phi(x2)| <= c |x1 - x2| = (c / sqrt 3) d_{0,1}
  if (auto k = parse_mode("mode_u")) {
    const std::size_t i = *k - 1;
    return {name, 0.0, 1.0, 1.0 / std::sqrt(3.0 * eigenvalue(*k)),
            [i](const PhaseState& x) { return x.u[i]; }};
  }
  if (auto k = parse_mode("mode_v")) {
    const std::size_t i = *k - 1;
    return {name, 0.0, 1.0, 1.0 / std::sqrt(3.0), [i](const PhaseState& x) { return x.v[i]; }};
  }
  if (name == "lyapunov_h1" || name == "lyapunov_h2") {
    if (!lyap) throw ConfigError("observable", name + " needs Lyapunov parameters");
    const LyapunovParams p = *lyap;
    const double c = quad * lyapunov_upper_factor(p);
    if (name == "lyapunov_h1")
      return {name, 2.0, 1.0, c, [p](const PhaseState& x) { return lyapunov_h1(x, p); }};
    return {name, 2.0, 1.0, c * lam_n, [p](const PhaseState& x) { return lyapunov_h2(x, p); }};
  }
  throw ConfigError("observable", "unknown observable '" + name + "'");
}

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  void merge(const CompensatedSum& o) {
    add(o.sum_);
    add(o.comp_);
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct Checkpoint {
  std::size_t count = 0;
  double average = 0.0;
};

// Running average of phi(X_1), phi(X_2), ... with dyadic checkpoints and a
// batch-means standard error. Batches start at size 1 and double (pairwise
// merge) whenever their number reaches 2 * target_batches.
class TimeAverageAccumulator {
 public:
  explicit TimeAverageAccumulator(std::size_t target_batches = 32) : target_(target_batches) {
    if (target_ < 2) throw DomainError("TimeAverageAccumulator: need at least 2 batches");
  }

  void add(double x) {
    total_.add(x);
    ++count_;
    current_.add(x);
    if (++in_current_ == batch_size_) {
      batches_.push_back(current_.value());
      current_ = CompensatedSum{};
      in_current_ = 0;
      if (batches_.size() >= 2 * target_) {
        for (std::size_t i = 0; i < target_; ++i) batches_[i] = batches_[2 * i] + batches_[2 * i + 1];
        batches_.resize(target_);
        batch_size_ *= 2;
      }
    }
    if ((count_ & (count_ - 1)) == 0) checkpoints_.push_back({count_, average()});
  }

  std::size_t count() const { return count_; }
  double sum() const { return total_.value(); }
  double average() const { return count_ ? total_.value() / static_cast<double>(count_) : 0.0; }
  const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }
  std::size_t batch_count() const { return batches_.size(); }

  // Standard error of the mean from complete batches; NaN with fewer than 2.
  double standard_error() const {
    const std::size_t b = batches_.size();
    if (b < 2) return std::numeric_limits<double>::quiet_NaN();
    const double bs = static_cast<double>(batch_size_);
    double mean = 0.0;
    for (double s : batches_) mean += s / bs;
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (double s : batches_) var += (s / bs - mean) * (s / bs - mean);
    var /= static_cast<double>(b - 1);
    return std::sqrt(var / static_cast<double>(b));
  }

  // Pools totals from another trajectory (associative and commutative in the
  // sum and count; checkpoints and batches stay per-trajectory).
  void merge_totals(const TimeAverageAccumulator& o) {
    total_.merge(o.total_);
    count_ += o.count_;
  }

 private:
  std::size_t target_;
  CompensatedSum total_;
  std::size_t count_ = 0;
  std::vector<Checkpoint> checkpoints_;
  std::vector<double> batches_;
  CompensatedSum current_;
  std::size_t in_current_ = 0;
  std::size_t batch_size_ = 1;
};

struct TimeAverageResult {
  std::vector<Checkpoint> checkpoints;
  double average = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
};

// Feeds phi(X_k) for k >= 1 (the initial state is skipped).
inline Observer time_average_observer(TimeAverageAccumulator& acc, const CpGammaFunctional& phi) {
  return [&acc, phi](std::size_t step, const PhaseState& x) {
    if (step > 0) acc.add(phi(x));
  };
}

inline TimeAverageResult time_average(TimeAverageAccumulator& acc, const CpGammaFunctional& phi,
                                      const std::vector<PhaseState>& path) {
  for (const auto& x : path) acc.add(phi(x));
  return {acc.checkpoints(), acc.average(), acc.standard_error(), acc.count()};
}

// Least-squares slope of log(y) against t over points with y above the floor.
inline double fit_log_slope(const std::vector<double>& t, const std::vector<double>& y, double floor) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(y[i] > floor)) continue;
    const double ly = std::log(y[i]);
    st += t[i];
    sy += ly;
    stt += t[i] * t[i];
    sty += t[i] * ly;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double dn = static_cast<double>(n);
  const double den = stt - st * st / dn;
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (sty - st * sy / dn) / den;
}

struct ContractionSeries {
  std::vector<double> times;
  std::vector<double> distance;  // |X_n - X~_n|_{H^1}, n = 0..n_steps
  double fitted_rate = std::numeric_limits<double>::quiet_NaN();  // -slope of log distance
  // Largest step-to-step increase of the squared distance (<= 0 when monotone).
  double max_sq_increase = -std::numeric_limits<double>::infinity();
  std::size_t monotonicity_violations = 0;
  double violation_slack = 0.0;
};

// Rate fit window: distance above 1e3 * machine epsilon * initial distance.
inline double contraction_fit_floor(double d0) {
  return 1e3 * std::numeric_limits<double>::epsilon() * d0;
}

// Two trajectories from different initial data under the same increments.
// A step counts as a monotonicity violation when the squared distance grows by
// more than slack_factor * tolerance * (1 + previous squared distance).
inline ContractionSeries coupled_contraction(const PhaseState& x0, const PhaseState& x0_tilde,
                                             const SchemeConfig& cfg, const NonlinearityModel& model,
                                             const NoiseSpec& spec, std::size_t n_steps,
                                             std::uint64_t seed, double slack_factor = 10.0) {
  if (x0.n_modes() != cfg.n_modes || x0_tilde.n_modes() != cfg.n_modes)
    throw StructuralError("coupled_contraction: initial states have wrong mode count");
  const NoiseSpec noise = spec.n_modes() == cfg.n_modes ? spec : spec.truncated(cfg.n_modes);
  BackwardEulerStepper a(cfg, model), b(cfg, model);
  NormalStream rng(seed);
  ContractionSeries out;
  out.violation_slack = slack_factor * cfg.solver.tolerance;
  PhaseState x = x0, y = x0_tilde;
  double prev_sq = phase_norm_sq(x - y, 1.0);
  out.times.push_back(0.0);
  out.distance.push_back(std::sqrt(prev_sq));
  for (std::size_t n = 0; n < n_steps; ++n) {
    const SpectralField dw = sample_increment(noise, cfg.tau, rng);
    try {
      x = a.step(x, dw).state;
      y = b.step(y, dw).state;
    } catch (const SolverFailure& e) {
      throw e.at_step(static_cast<long>(n));
    }
    const double sq = phase_norm_sq(x - y, 1.0);
    const double inc = sq - prev_sq;
    out.max_sq_increase = std::max(out.max_sq_increase, inc);
    if (inc > out.violation_slack * (1.0 + prev_sq)) ++out.monotonicity_violations;
    prev_sq = sq;
    out.times.push_back(static_cast<double>(n + 1) * cfg.tau);
    out.distance.push_back(std::sqrt(sq));
  }
  if (out.distance.front() > 0.0)
    out.fitted_rate = -fit_log_slope(out.times, out.distance, contraction_fit_floor(out.distance.front()));
  return out;
}

// W1 between the empirical measures of two scalar samples: the integral of
// |F_a^{-1} - F_b^{-1}| over (0, 1), exact for unequal sizes.
inline double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein1_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    CompensatedSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s.add(std::abs(a[i] - b[i]));
    return s.value() / static_cast<double>(a.size());
  }
  // walk the merged quantile breakpoints i/na and j/nb
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double t = 0.0;
  CompensatedSum s;
  while (i < a.size() && j < b.size()) {
    // compare (i+1)/na with (j+1)/nb exactly in integers
    const std::size_t ka = (i + 1) * b.size(), kb = (j + 1) * a.size();
    const double next = ka <= kb ? static_cast<double>(i + 1) / na : static_cast<double>(j + 1) / nb;
    s.add((next - t) * std::abs(a[i] - b[j]));
    t = next;
    if (ka <= kb) ++i;
    if (kb <= ka) ++j;
  }
  return s.value();
}

}  // namespace dampwave
