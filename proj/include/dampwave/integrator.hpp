#pragma once

// Time stepping for the spectral Galerkin system
//   du = v dt,  dv = -(Lambda_N u + eta v + Pi_N F(v)) dt + Pi_N dW
// by the backward Euler scheme
//   u_{n+1} = u_n + tau v_{n+1}
//   v_{n+1} = v_n - tau (Lambda_N u_{n+1} + eta v_{n+1} + Pi_N F(v_{n+1})) + Pi_N dW_n.
// Eliminating u_{n+1} leaves one monotone equation for v_{n+1}:
//   G(v) = D v + tau Pi_N F(v) - (v_n - tau Lambda_N u_n + dW_n) = 0,
//   D = diag(1 + tau eta + tau^2 lambda_k).

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dampwave/errors.hpp"
#include "dampwave/noise.hpp"
#include "dampwave/nonlinearity.hpp"
#include "dampwave/spectral.hpp"

namespace dampwave {

enum class SolverMethod { fixed_point, newton };

inline std::string to_string(SolverMethod m) {
  return m == SolverMethod::fixed_point ? "fixed_point" : "newton";
}

struct SolverOptions {
  double tolerance = 1e-12;  // relative: ||G(v)|| <= tolerance (1 + ||rhs||)
  std::size_t max_iters = 200;
  SolverMethod method = SolverMethod::fixed_point;
  // Fixed point hands over to Newton when it stalls instead of failing.
  bool newton_fallback = true;
};

struct SchemeConfig {
  std::size_t n_modes = 0;
  double tau = 0.0;
  double eta = 0.0;
  SolverOptions solver;
  std::size_t grid_points = 0;  // 0 selects 2N + 1

  std::size_t grid() const { return grid_points ? grid_points : default_grid_points(n_modes); }

  void validate() const {
    if (n_modes == 0) throw DomainError("SchemeConfig: N must be >= 1");
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("SchemeConfig: tau must lie in (0, 1)");
    if (!(eta > 0.0)) throw DomainError("SchemeConfig: eta must be positive");
    if (grid() < n_modes) throw StructuralError("SchemeConfig: grid aliases the Galerkin modes");
    if (!(solver.tolerance > 0.0)) throw DomainError("SchemeConfig: solver tolerance must be positive");
    if (solver.max_iters == 0) throw DomainError("SchemeConfig: solver max_iters must be >= 1");
  }
};

struct SolveResult {
  SpectralField v;
  std::size_t iterations = 0;
  double residual = 0.0;
  SolverMethod method = SolverMethod::fixed_point;
};

struct StepRecord {
  PhaseState state;
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Solver for D v + tau Pi_N F(v) = rhs. Owns grid scratch space; use one per
// trajectory.
class ImplicitSolver {
 public:
  ImplicitSolver(const SchemeConfig& cfg, const NonlinearityModel& model)
      : cfg_(cfg), op_(model, cfg.n_modes, cfg.grid()), diag_(cfg.n_modes) {
    cfg_.validate();
    for (std::size_t k = 1; k <= cfg_.n_modes; ++k)
      diag_[k - 1] = 1.0 + cfg_.tau * cfg_.eta + cfg_.tau * cfg_.tau * eigenvalue(k);
  }

  const SchemeConfig& config() const { return cfg_; }
  const std::vector<double>& diagonal() const { return diag_; }
  NemytskiiOperator& nemytskii() { return op_; }

  // G(v) = D v + tau Pi_N F(v) - rhs
  SpectralField residual_vector(const SpectralField& v, const SpectralField& rhs) {
    SpectralField fv(v.n_modes());
    op_.apply(v, fv);
    return assemble_residual(v, fv, rhs);
  }

  double residual_norm(const SpectralField& v, const SpectralField& rhs) {
    return l2(residual_vector(v, rhs));
  }

  SolveResult solve(const SpectralField& rhs) { return solve(rhs, rhs); }

  SolveResult solve(const SpectralField& rhs, const SpectralField& guess) {
    if (rhs.n_modes() != cfg_.n_modes || guess.n_modes() != cfg_.n_modes)
      throw StructuralError("implicit_solve: mode-count mismatch");
    if (!rhs.is_finite()) throw DomainError("implicit_solve: non-finite right-hand side");
    const double target = cfg_.solver.tolerance * (1.0 + sobolev_norm(rhs, 0.0));
    if (op_.model().linear_alpha) return solve_linear(rhs);
    if (cfg_.solver.method == SolverMethod::newton) return newton(rhs, guess, target, 0);
    return fixed_point(rhs, guess, target);
  }

 private:
  // Euclidean norm that lets NaN through instead of throwing, so a blown-up
  // residual surfaces as SolverFailure.
  static double l2(const SpectralField& r) {
    double s = 0.0;
    for (double x : r.coeffs()) s += x * x;
    return std::sqrt(s);
  }

  SpectralField assemble_residual(const SpectralField& v, const SpectralField& fv,
                                  const SpectralField& rhs) const {
    SpectralField r(v.n_modes());
    for (std::size_t i = 0; i < v.n_modes(); ++i) r[i] = diag_[i] * v[i] + cfg_.tau * fv[i] - rhs[i];
    return r;
  }

  SolveResult solve_linear(const SpectralField& rhs) {
    const double a = *op_.model().linear_alpha;
    SolveResult out;
    out.v = SpectralField(rhs.n_modes());
    for (std::size_t i = 0; i < rhs.n_modes(); ++i) out.v[i] = rhs[i] / (diag_[i] + cfg_.tau * a);
    out.iterations = 1;
    out.residual = residual_norm(out.v, rhs);
    out.method = cfg_.solver.method;
    return out;
  }

  // v <- D^{-1}(rhs - tau Pi_N F(v))
  SolveResult fixed_point(const SpectralField& rhs, const SpectralField& guess, double target) {
    SpectralField v = guess;
    SpectralField fv(v.n_modes());
    double prev = std::numeric_limits<double>::infinity();
    std::size_t growth = 0;
    std::size_t slow = 0;
    for (std::size_t it = 0;; ++it) {
      op_.apply(v, fv);
      const double res = l2(assemble_residual(v, fv, rhs));
      if (!std::isfinite(res))
        throw SolverFailure("implicit_solve: non-finite residual", res, it);
      if (res <= target) return {std::move(v), it, res, SolverMethod::fixed_point};
      growth = res > prev ? growth + 1 : 0;
      // contraction factor above 0.9 for several iterations counts as a stall
      slow = (std::isfinite(prev) && res > 0.9 * prev) ? slow + 1 : 0;
      const bool diverging = growth >= 10;
      const bool stalled = slow >= 5 || it >= cfg_.solver.max_iters;
      if (diverging || stalled) {
        if (cfg_.solver.newton_fallback) return newton(rhs, v, target, it);
        throw SolverFailure(diverging ? "implicit_solve: fixed-point iteration diverged"
                                      : "implicit_solve: fixed-point iteration stalled",
                            res, it);
      }
      prev = res;
      for (std::size_t i = 0; i < v.n_modes(); ++i) v[i] = (rhs[i] - cfg_.tau * fv[i]) / diag_[i];
    }
  }

  // Damped Newton. The Jacobian D + tau Pi_N f'(v) Pi_N^* is symmetric and,
  // because f' >= a2 > -eta, positive definite; inner solves use
  // Jacobi-preconditioned conjugate gradients applied matrix-free.
  SolveResult newton(const SpectralField& rhs, const SpectralField& guess, double target,
                     std::size_t spent) {
    SpectralField v = guess;
    SpectralField fv(v.n_modes());
    op_.apply(v, fv);
    SpectralField r = assemble_residual(v, fv, rhs);
    double res = l2(r);
    std::size_t growth = 0;
    for (std::size_t it = spent;; ++it) {
      if (!std::isfinite(res)) throw SolverFailure("implicit_solve: non-finite residual", res, it);
      if (res <= target) return {std::move(v), it, res, SolverMethod::newton};
      if (it >= cfg_.solver.max_iters + spent || growth >= 10)
        throw SolverFailure("implicit_solve: Newton iteration did not converge", res, it);
      op_.linearize(v);
      SpectralField delta = conjugate_gradient(r, 0.1 * target);
      // backtracking on ||G||
      double step = 1.0;
      SpectralField trial(v.n_modes());
      double trial_res = res;
      for (int ls = 0; ls < 30; ++ls) {
        for (std::size_t i = 0; i < v.n_modes(); ++i) trial[i] = v[i] - step * delta[i];
        op_.apply(trial, fv);
        r = assemble_residual(trial, fv, rhs);
        trial_res = l2(r);
        if (trial_res <= (1.0 - 1e-4 * step) * res || trial_res <= target) break;
        step *= 0.5;
      }
      growth = trial_res > res ? growth + 1 : 0;
      v = trial;
      res = trial_res;
    }
  }

  // Solves J x = b with J w = D w + tau Pi_N(f'(v) w).
  SpectralField conjugate_gradient(const SpectralField& b, double abs_tol) {
    const std::size_t n = b.n_modes();
    SpectralField x(n), r = b, z(n), p(n), jp(n), tmp(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag_[i];
    p = z;
    double rz = sobolev_inner(r, z, 0.0);
    for (std::size_t it = 0; it < 4 * n + 20; ++it) {
      if (l2(r) <= abs_tol) break;
      op_.jacobian_apply(p, tmp);
      for (std::size_t i = 0; i < n; ++i) jp[i] = diag_[i] * p[i] + cfg_.tau * tmp[i];
      const double pjp = sobolev_inner(p, jp, 0.0);
      if (!(pjp > 0.0)) break;
      const double alpha = rz / pjp;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * jp[i];
      }
      for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag_[i];
      const double rz_new = sobolev_inner(r, z, 0.0);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    return x;
  }

  SchemeConfig cfg_;
  NemytskiiOperator op_;
  std::vector<double> diag_;
};

inline SpectralField implicit_solve(const SpectralField& rhs, const SchemeConfig& cfg,
                                    const NonlinearityModel& model) {
  ImplicitSolver solver(cfg, model);
  return solver.solve(rhs).v;
}

class BackwardEulerStepper {
 public:
  BackwardEulerStepper(const SchemeConfig& cfg, const NonlinearityModel& model)
      : solver_(cfg, model) {}

  const SchemeConfig& config() const { return solver_.config(); }
  ImplicitSolver& solver() { return solver_; }

  // rhs = v_n - tau Lambda_N u_n + dW_n
  SpectralField right_hand_side(const PhaseState& x, const SpectralField& dw) const {
    const double tau = config().tau;
    SpectralField rhs(x.n_modes());
    for (std::size_t i = 0; i < x.n_modes(); ++i)
      rhs[i] = x.v[i] - tau * eigenvalue(i + 1) * x.u[i] + dw[i];
    return rhs;
  }

  StepRecord step(const PhaseState& x, const SpectralField& dw) {
    const std::size_t n = config().n_modes;
    if (x.n_modes() != n || dw.n_modes() != n)
      throw StructuralError("backward_euler_step: mode-count mismatch");
    const SpectralField rhs = right_hand_side(x, dw);
    SolveResult sol = solver_.solve(rhs, x.v);
    StepRecord rec;
    rec.iterations = sol.iterations;
    rec.residual = sol.residual;
    SpectralField u = x.u;
    const double tau = config().tau;
    for (std::size_t i = 0; i < n; ++i) u[i] += tau * sol.v[i];
    rec.state = PhaseState(std::move(u), std::move(sol.v));
    return rec;
  }

 private:
  ImplicitSolver solver_;
};

inline StepRecord backward_euler_step(const PhaseState& x, const SchemeConfig& cfg,
                                      const NonlinearityModel& model, const SpectralField& dw) {
  BackwardEulerStepper stepper(cfg, model);
  return stepper.step(x, dw);
}

// E(t) = exp(tA) for A = [[0, I], [-Lambda, 0]]; per mode a rotation in
// (sqrt(lambda_k) u_k, v_k).
inline PhaseState linear_propagator_apply(const PhaseState& x, double t) {
  if (!std::isfinite(t)) throw DomainError("linear_propagator_apply: t must be finite");
  PhaseState out(x.n_modes());
  for (std::size_t i = 0; i < x.n_modes(); ++i) {
    const double w = std::sqrt(eigenvalue(i + 1));
    const double c = std::cos(w * t), s = std::sin(w * t);
    out.u[i] = c * x.u[i] + s / w * x.v[i];
    out.v[i] = -w * s * x.u[i] + c * x.v[i];
  }
  return out;
}

// 2x2 helpers for the per-mode linear SDE.
struct Mat2 {
  double a = 0, b = 0, c = 0, d = 0;  // [[a, b], [c, d]]

  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2 transpose() const { return {a, c, b, d}; }
};

// exp(A) for a real 2x2 matrix: with mu = tr/2 and B = A - mu I, B^2 = delta^2 I.
inline Mat2 expm2(const Mat2& m) {
  const double mu = 0.5 * (m.a + m.d);
  const Mat2 bm{m.a - mu, m.b, m.c, m.d - mu};
  const double d2 = bm.a * bm.a + bm.b * bm.c;
  double ch, sh;  // cosh(delta), sinh(delta)/delta, continued analytically for d2 < 0
  if (std::abs(d2) < 1e-8) {
    ch = 1.0 + d2 / 2.0 + d2 * d2 / 24.0;
    sh = 1.0 + d2 / 6.0 + d2 * d2 / 120.0;
  } else if (d2 > 0.0) {
    const double del = std::sqrt(d2);
    ch = std::cosh(del);
    sh = std::sinh(del) / del;
  } else {
    const double del = std::sqrt(-d2);
    ch = std::cos(del);
    sh = std::sin(del) / del;
  }
  const double e = std::exp(mu);
  return {e * (ch + sh * bm.a), e * sh * bm.b, e * sh * bm.c, e * (ch + sh * bm.d)};
}

namespace detail {

// Romberg integration of a vector-valued integrand on [0, T]; stops when two
// successive diagonal extrapolants agree to rel_tol.
template <std::size_t K, class Fn>
std::array<double, K> romberg(Fn&& fn, double T, double rel_tol = 1e-14, int max_levels = 22) {
  using Vec = std::array<double, K>;
  std::vector<Vec> prev_row, row;
  auto add = [](Vec& acc, const Vec& x, double w) {
    for (std::size_t i = 0; i < K; ++i) acc[i] += w * x[i];
  };
  Vec f0 = fn(0.0), fT = fn(T);
  Vec trap{};
  add(trap, f0, 0.5 * T);
  add(trap, fT, 0.5 * T);
  prev_row.push_back(trap);
  std::size_t n_intervals = 1;
  for (int level = 1; level < max_levels; ++level) {
    const double h = T / static_cast<double>(2 * n_intervals);
    Vec mid{};
    for (std::size_t j = 0; j < n_intervals; ++j) add(mid, fn(h * static_cast<double>(2 * j + 1)), 1.0);
    n_intervals *= 2;
    Vec t{};
    add(t, prev_row[0], 0.5);
    add(t, mid, h);
    row.assign(1, t);
    double factor = 4.0;
    for (int j = 1; j <= level; ++j) {
      Vec e{};
      add(e, row[j - 1], factor / (factor - 1.0));
      add(e, prev_row[j - 1], -1.0 / (factor - 1.0));
      row.push_back(e);
      factor *= 4.0;
    }
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      diff = std::max(diff, std::abs(row.back()[i] - prev_row.back()[i]));
      scale = std::max(scale, std::abs(row.back()[i]));
    }
    if (level >= 4 && diff <= rel_tol * scale) return row.back();
    prev_row.swap(row);
  }
  return prev_row.back();
}

}  // namespace detail

// Exact transition of du = v dt, dv = (-lambda u - eta v) dt + sqrt(q) d beta over one step.
struct ModeTransition {
  Mat2 mean;          // exp(tau M)
  Mat2 cov;           // int_0^tau e^{sM} diag(0, q) e^{sM^T} ds
  std::array<double, 2> cross{};  // Cov(stochastic convolution, increment) = q int_0^tau e^{sM} e_2 ds
  double increment_var = 0.0;     // q tau
};

inline ModeTransition mode_transition(double lambda, double eta, double q, double tau) {
  const Mat2 gen{0.0, 1.0, -lambda, -eta};
  ModeTransition tr;
  tr.mean = expm2(gen * tau);
  tr.increment_var = q * tau;
  if (q == 0.0) return tr;
  // entries: cov_uu, cov_uv, cov_vv, cross_u, cross_v
  auto integrand = [&](double s) {
    const Mat2 e = expm2(gen * s);
    // e diag(0, q) e^T has entries q * (b b, b d, d d); e e_2 = (b, d)
    return std::array<double, 5>{q * e.b * e.b, q * e.b * e.d, q * e.d * e.d, q * e.b, q * e.d};
  };
  const auto r = detail::romberg<5>(integrand, tau);
  tr.cov = {r[0], r[1], r[1], r[2]};
  tr.cross = {r[3], r[4]};
  return tr;
}

// Exact Gaussian stepping for f = 0: the oracle for the linear case.
class ExactLinearStepper {
 public:
  ExactLinearStepper(std::size_t n_modes, double tau, double eta, const NoiseSpec& spec) : tau_(tau) {
    if (!(eta >= 0.0)) throw DomainError("exact_linear_step: eta must be nonnegative");
    if (spec.n_modes() < n_modes) throw StructuralError("exact_linear_step: noise spec has too few modes");
    modes_.reserve(n_modes);
    for (std::size_t k = 1; k <= n_modes; ++k) {
      Mode m;
      m.tr = mode_transition(eigenvalue(k), eta, spec.q[k - 1], tau);
      m.chol2 = cholesky2(m.tr.cov);
      m.chol3 = cholesky3(m.tr);
      modes_.push_back(m);
    }
  }

  std::size_t n_modes() const { return modes_.size(); }
  const ModeTransition& transition(std::size_t k) const { return modes_.at(k - 1).tr; }

  PhaseState step(const PhaseState& x, NormalStream& rng) const {
    require(x);
    PhaseState out(x.n_modes());
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const Mode& m = modes_[i];
      const double z1 = rng(), z2 = rng();
      out.u[i] = m.tr.mean.a * x.u[i] + m.tr.mean.b * x.v[i] + m.chol2[0] * z1;
      out.v[i] = m.tr.mean.c * x.u[i] + m.tr.mean.d * x.v[i] + m.chol2[1] * z1 + m.chol2[2] * z2;
    }
    return out;
  }

  // Exact step jointly sampled with the Brownian increment of the same
  // interval, for pathwise comparison against a scheme fed with *dw_out.
  PhaseState step_coupled(const PhaseState& x, NormalStream& rng, SpectralField& dw_out) const {
    require(x);
    PhaseState out(x.n_modes());
    dw_out = SpectralField(x.n_modes());
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const Mode& m = modes_[i];
      const double z1 = rng(), z2 = rng(), z3 = rng();
      const auto& L = m.chol3;  // lower triangular, order (dW, I_u, I_v)
      const double dw = L[0] * z1;
      const double iu = L[1] * z1 + L[2] * z2;
      const double iv = L[3] * z1 + L[4] * z2 + L[5] * z3;
      out.u[i] = m.tr.mean.a * x.u[i] + m.tr.mean.b * x.v[i] + iu;
      out.v[i] = m.tr.mean.c * x.u[i] + m.tr.mean.d * x.v[i] + iv;
      dw_out[i] = dw;
    }
    return out;
  }

 private:
  struct Mode {
    ModeTransition tr;
    std::array<double, 3> chol2{};  // l11, l21, l22
    std::array<double, 6> chol3{};  // l11, l21, l22, l31, l32, l33
  };

  void require(const PhaseState& x) const {
    if (x.n_modes() != modes_.size()) throw StructuralError("exact_linear_step: mode-count mismatch");
  }

  static double safe_sqrt(double x) { return x > 0.0 ? std::sqrt(x) : 0.0; }

  static std::array<double, 3> cholesky2(const Mat2& c) {
    const double l11 = safe_sqrt(c.a);
    const double l21 = l11 > 0.0 ? c.c / l11 : 0.0;
    const double l22 = safe_sqrt(c.d - l21 * l21);
    return {l11, l21, l22};
  }

  static std::array<double, 6> cholesky3(const ModeTransition& tr) {
    // covariance of (dW, I_u, I_v)
    const double s00 = tr.increment_var, s10 = tr.cross[0], s20 = tr.cross[1];
    const double s11 = tr.cov.a, s21 = tr.cov.c, s22 = tr.cov.d;
    const double l11 = safe_sqrt(s00);
    const double l21 = l11 > 0.0 ? s10 / l11 : 0.0;
    const double l31 = l11 > 0.0 ? s20 / l11 : 0.0;
    const double l22 = safe_sqrt(s11 - l21 * l21);
    const double l32 = l22 > 0.0 ? (s21 - l31 * l21) / l22 : 0.0;
    const double l33 = safe_sqrt(s22 - l31 * l31 - l32 * l32);
    return {l11, l21, l22, l31, l32, l33};
  }

  double tau_;
  std::vector<Mode> modes_;
};

inline PhaseState exact_linear_step(const PhaseState& x, double tau, double eta,
                                    const NoiseSpec& spec, NormalStream& rng) {
  ExactLinearStepper stepper(x.n_modes(), tau, eta, spec);
  return stepper.step(x, rng);
}

using Observer = std::function<void(std::size_t step, const PhaseState& state)>;

struct TrajectorySummary {
  PhaseState final_state;
  std::size_t n_steps = 0;
  std::size_t total_iterations = 0;
  double max_residual = 0.0;
};

// Observers see X_0, X_1, ..., X_n with their step index.
inline TrajectorySummary simulate_path(const PhaseState& x0, const SchemeConfig& cfg,
                                       const NonlinearityModel& model, const NoiseSpec& spec,
                                       std::size_t n_steps, NormalStream& rng,
                                       const std::vector<Observer>& observers = {}) {
  if (x0.n_modes() != cfg.n_modes) throw StructuralError("simulate_path: initial state has wrong mode count");
  const NoiseSpec noise = spec.n_modes() == cfg.n_modes ? spec : spec.truncated(cfg.n_modes);
  BackwardEulerStepper stepper(cfg, model);
  TrajectorySummary sum;
  sum.final_state = x0;
  for (const auto& ob : observers) ob(0, sum.final_state);
  for (std::size_t n = 0; n < n_steps; ++n) {
    const SpectralField dw = sample_increment(noise, cfg.tau, rng);
    StepRecord rec;
    try {
      rec = stepper.step(sum.final_state, dw);
    } catch (const SolverFailure& e) {
      throw e.at_step(static_cast<long>(n));
    }
    sum.total_iterations += rec.iterations;
    sum.max_residual = std::max(sum.max_residual, rec.residual);
    sum.final_state = std::move(rec.state);
    for (const auto& ob : observers) ob(n + 1, sum.final_state);
  }
  sum.n_steps = n_steps;
  return sum;
}

// Same, driven by a given Brownian path (restricted to the scheme's modes).
inline TrajectorySummary simulate_path(const PhaseState& x0, const SchemeConfig& cfg,
                                       const NonlinearityModel& model, const IncrementPath& path,
                                       const std::vector<Observer>& observers = {}) {
  if (x0.n_modes() != cfg.n_modes) throw StructuralError("simulate_path: initial state has wrong mode count");
  if (std::abs(path.step() - cfg.tau) > 1e-14 * cfg.tau)
    throw StructuralError("simulate_path: path step does not match tau");
  if (path.n_modes() < cfg.n_modes) throw StructuralError("simulate_path: path has too few modes");
  BackwardEulerStepper stepper(cfg, model);
  TrajectorySummary sum;
  sum.final_state = x0;
  for (const auto& ob : observers) ob(0, sum.final_state);
  for (std::size_t n = 0; n < path.n_steps(); ++n) {
    StepRecord rec;
    try {
      rec = stepper.step(sum.final_state, path.increment(n, cfg.n_modes));
    } catch (const SolverFailure& e) {
      throw e.at_step(static_cast<long>(n));
    }
    sum.total_iterations += rec.iterations;
    sum.max_residual = std::max(sum.max_residual, rec.residual);
    sum.final_state = std::move(rec.state);
    for (const auto& ob : observers) ob(n + 1, sum.final_state);
  }
  sum.n_steps = path.n_steps();
  return sum;
}

}  // namespace dampwave
