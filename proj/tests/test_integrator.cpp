#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "dampwave/integrator.hpp"

using namespace dampwave;

namespace {

SchemeConfig scheme(std::size_t n, double tau, double eta) {
  SchemeConfig c;
  c.n_modes = n;
  c.tau = tau;
  c.eta = eta;
  return c;
}

SpectralField random_field(std::size_t n, std::mt19937_64& g, double scale, double decay = 1.0) {
  std::normal_distribution<double> z;
  SpectralField f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = scale * z(g) * std::pow(static_cast<double>(i + 1), -decay);
  return f;
}

PhaseState random_state(std::size_t n, std::mt19937_64& g, double scale) {
  return PhaseState(random_field(n, g, scale, 2.0), random_field(n, g, scale, 1.0));
}

NoiseSpec zero_noise(std::size_t n) {
  NoiseSpec s;
  s.q.assign(n, 0.0);
  s.valid = true;
  s.kind = "tabulated";
  return s;
}

double energy_h2(const PhaseState& x) { return sobolev_norm_sq(x.u, 2.0) + sobolev_norm_sq(x.v, 1.0); }

}  // namespace

TEST(SchemeConfig, Validation) {
  EXPECT_NO_THROW(scheme(4, 0.5, 1.0).validate());
  EXPECT_THROW(scheme(4, 1.0, 1.0).validate(), DomainError);
  EXPECT_THROW(scheme(4, 0.0, 1.0).validate(), DomainError);
  EXPECT_THROW(scheme(4, 0.1, 0.0).validate(), DomainError);
  EXPECT_THROW(scheme(0, 0.1, 1.0).validate(), DomainError);
  SchemeConfig c = scheme(8, 0.1, 1.0);
  c.grid_points = 7;
  EXPECT_THROW(c.validate(), StructuralError);
  EXPECT_EQ(scheme(8, 0.1, 1.0).grid(), 17u);
}

TEST(BackwardEuler, SingleModeHandSolve) {
  // eta enters as (1 + tau eta); eta = 1e-300 reproduces the undamped formula bit for bit
  const double tau = 0.1, lam = eigenvalue(1), u0 = 0.7, v0 = -0.3;
  for (double eta : {1e-300, 0.5, 2.0}) {
    const PhaseState x0(SpectralField(std::vector<double>{u0}), SpectralField(std::vector<double>{v0}));
    const StepRecord r = backward_euler_step(x0, scheme(1, tau, eta), models::zero(), SpectralField(1));
    const double d = 1.0 + tau * eta + tau * tau * lam;
    EXPECT_NEAR(r.state.u[0], ((1.0 + tau * eta) * u0 + tau * v0) / d, 1e-15);
    EXPECT_NEAR(r.state.v[0], (v0 - tau * lam * u0) / d, 1e-15);
    if (eta < 1e-100) {
      EXPECT_NEAR(r.state.u[0], (u0 + tau * v0) / (1.0 + tau * tau * lam), 1e-15);
      EXPECT_NEAR(r.state.v[0], (v0 - tau * lam * u0) / (1.0 + tau * tau * lam), 1e-15);
    }
  }
}

TEST(BackwardEuler, ZeroStaysZero) {
  BackwardEulerStepper st(scheme(12, 0.05, 1.0), models::zero());
  PhaseState x(12);
  for (int n = 0; n < 100; ++n) x = st.step(x, SpectralField(12)).state;
  EXPECT_EQ(x, PhaseState(12));
}

TEST(BackwardEuler, SineResidualContract) {
  std::mt19937_64 g(4);
  const NonlinearityModel m = models::sine(0.25);
  const SchemeConfig cfg = scheme(16, 0.05, 1.0);
  BackwardEulerStepper st(cfg, m);
  for (int c = 0; c < 50; ++c) {
    const PhaseState x = random_state(16, g, 3.0);
    const SpectralField dw = random_field(16, g, 0.2, 2.0);
    const StepRecord r = st.step(x, dw);
    const SpectralField rhs = st.right_hand_side(x, dw);
    EXPECT_LE(st.solver().residual_norm(r.state.v, rhs), 1e-12 * (1.0 + sobolev_norm(rhs, 0.0)));
    EXPECT_LE(r.residual, 1e-12 * (1.0 + sobolev_norm(rhs, 0.0)));
    // u_{n+1} = u_n + tau v_{n+1}
    for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(r.state.u[i], x.u[i] + cfg.tau * r.state.v[i]);
  }
}

TEST(BackwardEuler, ModeMismatch) {
  EXPECT_THROW(backward_euler_step(PhaseState(3), scheme(4, 0.1, 1.0), models::zero(), SpectralField(4)),
               StructuralError);
}

TEST(ImplicitSolve, ZeroModelDiagonal) {
  std::mt19937_64 g(5);
  const SchemeConfig cfg = scheme(10, 0.1, 1.5);
  ImplicitSolver s(cfg, models::zero());
  const SpectralField rhs = random_field(10, g, 1.0);
  const SolveResult r = s.solve(rhs);
  EXPECT_EQ(r.iterations, 1u);
  for (std::size_t k = 1; k <= 10; ++k)
    EXPECT_DOUBLE_EQ(r.v[k - 1], rhs[k - 1] / (1.0 + 0.1 * 1.5 + 0.01 * eigenvalue(k)));
}

TEST(ImplicitSolve, LinearModelClosedForm) {
  std::mt19937_64 g(6);
  for (double alpha : {-0.5, 0.25, 3.0}) {
    const SchemeConfig cfg = scheme(12, 0.02, 1.0);
    const SpectralField rhs = random_field(12, g, 2.0);
    const SpectralField v = implicit_solve(rhs, cfg, models::linear(alpha));
    for (std::size_t k = 1; k <= 12; ++k)
      EXPECT_NEAR(v[k - 1], rhs[k - 1] / (1.0 + 0.02 + 0.02 * alpha + 0.0004 * eigenvalue(k)), 1e-12);
  }
}

TEST(ImplicitSolve, TwoGuessesAgree) {
  std::mt19937_64 g(7);
  for (SolverMethod method : {SolverMethod::fixed_point, SolverMethod::newton}) {
    SchemeConfig cfg = scheme(16, 0.1, 1.0);
    cfg.solver.method = method;
    for (const auto& m : {models::sine(0.25), models::smoothed_hm(1.0), models::arctan(0.25)}) {
      ImplicitSolver s(cfg, m);
      for (int c = 0; c < 20; ++c) {
        const SpectralField rhs = random_field(16, g, 5.0);
        const SolveResult a = s.solve(rhs, SpectralField(16));
        const SolveResult b = s.solve(rhs, rhs);
        const double tol = cfg.solver.tolerance * (1.0 + sobolev_norm(rhs, 0.0));
        EXPECT_LE(sobolev_norm(a.v - b.v, 0.0), 10.0 * tol) << m.name << " " << to_string(method);
      }
    }
  }
}

TEST(ImplicitSolve, NewtonMatchesFixedPoint) {
  std::mt19937_64 g(8);
  SchemeConfig fp = scheme(20, 0.2, 1.0), nt = fp;
  nt.solver.method = SolverMethod::newton;
  const NonlinearityModel m = models::smoothed_hm(1.0);
  ImplicitSolver a(fp, m), b(nt, m);
  for (int c = 0; c < 50; ++c) {
    const SpectralField rhs = random_field(20, g, 20.0);
    const SolveResult ra = a.solve(rhs), rb = b.solve(rhs);
    EXPECT_EQ(rb.method, SolverMethod::newton);
    EXPECT_LE(sobolev_norm(ra.v - rb.v, 0.0), 10.0 * 1e-12 * (1.0 + sobolev_norm(rhs, 0.0)));
  }
}

TEST(ImplicitSolve, FailureCarriesResidual) {
  SchemeConfig cfg = scheme(8, 0.5, 1.0);
  cfg.solver.max_iters = 1;
  cfg.solver.newton_fallback = false;
  ImplicitSolver s(cfg, models::sine(0.25));
  std::mt19937_64 g(9);
  const SpectralField rhs = random_field(8, g, 3.0);
  try {
    s.solve(rhs, SpectralField(8));
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    EXPECT_GT(e.residual(), 0.0);
    EXPECT_EQ(e.step(), -1);
  }
}

TEST(ImplicitSolve, NonFiniteRhsRejected) {
  SpectralField rhs(4);
  rhs[2] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(implicit_solve(rhs, scheme(4, 0.1, 1.0), models::sine(0.25)), DomainError);
}

TEST(Propagator, IdentityGroupAndEnergy) {
  std::mt19937_64 g(10);
  std::uniform_real_distribution<double> ut(-3.0, 3.0);
  const PhaseState x = random_state(9, g, 1.0);
  EXPECT_EQ(linear_propagator_apply(x, 0.0), x);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 24;
    const PhaseState y = random_state(n, g, 1.0);
    const double t = ut(g);
    const PhaseState back = linear_propagator_apply(linear_propagator_apply(y, t), -t);
    EXPECT_LE(phase_norm(back - y, 1.0), 1e-12 * (1.0 + phase_norm(y, 1.0)));
    const PhaseState z = linear_propagator_apply(y, t);
    EXPECT_LE(std::abs(phase_norm(z, 1.0) - phase_norm(y, 1.0)), 1e-12 * phase_norm(y, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      const double lam = eigenvalue(i + 1);
      const double e0 = lam * y.u[i] * y.u[i] + y.v[i] * y.v[i];
      const double e1 = lam * z.u[i] * z.u[i] + z.v[i] * z.v[i];
      EXPECT_LE(std::abs(e1 - e0), 1e-12 * e0);
    }
  }
  EXPECT_THROW(linear_propagator_apply(x, std::nan("")), DomainError);
}

TEST(ExactLinear, NoNoiseUndampedIsPropagator) {
  std::mt19937_64 g(11);
  NormalStream rng(1);
  for (double tau : {0.01, 0.3, 1.7}) {
    const PhaseState x = random_state(12, g, 1.0);
    const PhaseState a = exact_linear_step(x, tau, 0.0, zero_noise(12), rng);
    const PhaseState b = linear_propagator_apply(x, tau);
    EXPECT_LE(phase_norm(a - b, 1.0), 1e-10 * phase_norm(x, 1.0));
  }
}

TEST(ExactLinear, CovarianceMatchesStationaryIdentity) {
  // C(tau) = S - Phi S Phi^T with the stationary S = diag(q / (2 eta lambda), q / (2 eta))
  const double lam = std::numbers::pi * std::numbers::pi, eta = 1.0, q = 1.0, tau = 0.1;
  const ModeTransition tr = mode_transition(lam, eta, q, tau);
  const Mat2 s{q / (2 * eta * lam), 0.0, 0.0, q / (2 * eta)};
  const Mat2 c = s + (tr.mean * s * tr.mean.transpose()) * -1.0;
  EXPECT_NEAR(tr.cov.a, c.a, 1e-10);
  EXPECT_NEAR(tr.cov.b, c.b, 1e-10);
  EXPECT_NEAR(tr.cov.c, c.c, 1e-10);
  EXPECT_NEAR(tr.cov.d, c.d, 1e-10);
  EXPECT_DOUBLE_EQ(tr.increment_var, q * tau);
}

TEST(ExactLinear, CovarianceAcrossDampingRegimes) {
  // under-, critically and over-damped modes
  for (double eta : {0.3, 2.0 * std::numbers::pi, 40.0}) {
    for (std::size_t k : {1u, 3u}) {
      const double lam = eigenvalue(k), q = 0.5, tau = 0.05;
      const ModeTransition tr = mode_transition(lam, eta, q, tau);
      const Mat2 s{q / (2 * eta * lam), 0.0, 0.0, q / (2 * eta)};
      const Mat2 c = s + (tr.mean * s * tr.mean.transpose()) * -1.0;
      EXPECT_NEAR(tr.cov.a, c.a, 1e-12) << eta;
      EXPECT_NEAR(tr.cov.b, c.b, 1e-12) << eta;
      EXPECT_NEAR(tr.cov.d, c.d, 1e-12) << eta;
    }
  }
}

TEST(ExactLinear, CrossCovarianceSmallTau) {
  // for small tau, Cov(I_v, dW) ~ q tau and Cov(I_u, dW) ~ q tau^2 / 2
  const double tau = 1e-4, q = 2.0;
  const ModeTransition tr = mode_transition(eigenvalue(1), 1.0, q, tau);
  EXPECT_NEAR(tr.cross[1], q * tau, 1e-3 * q * tau);
  EXPECT_NEAR(tr.cross[0], q * tau * tau / 2.0, 1e-3 * q * tau * tau);
}

TEST(ExactLinear, StationaryVariances) {
  const std::size_t n = 4;
  const double eta = 1.0, tau = 0.1;
  const NoiseSpec spec = build_power_law_q(1.0, 4.0, n);
  ExactLinearStepper st(n, tau, eta, spec);
  NormalStream rng(2);
  PhaseState x(n);
  std::vector<double> su(n), sv(n);
  const int steps = 1000000;
  for (int s = 0; s < steps; ++s) {
    x = st.step(x, rng);
    for (std::size_t i = 0; i < n; ++i) {
      su[i] += x.u[i] * x.u[i];
      sv[i] += x.v[i] * x.v[i];
    }
  }
  for (std::size_t k = 1; k <= n; ++k) {
    const double q = spec.q[k - 1];
    EXPECT_NEAR(su[k - 1] / steps, q / (2 * eta * eigenvalue(k)), 0.05 * q / (2 * eta * eigenvalue(k)));
    EXPECT_NEAR(sv[k - 1] / steps, q / (2 * eta), 0.05 * q / (2 * eta));
  }
}

TEST(ExactLinear, CoupledIncrementHasRightLaw) {
  const double tau = 0.05;
  const NoiseSpec spec = build_power_law_q(1.0, 4.0, 2);
  ExactLinearStepper st(2, tau, 1.0, spec);
  NormalStream rng(3);
  SpectralField dw;
  double s = 0.0, cv = 0.0;
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    const PhaseState y = st.step_coupled(PhaseState(2), rng, dw);
    s += dw[0] * dw[0];
    cv += dw[0] * y.v[0];
  }
  EXPECT_NEAR(s / draws, tau, 0.02 * tau);
  EXPECT_NEAR(cv / draws, st.transition(1).cross[1], 0.03 * st.transition(1).cross[1]);
}

TEST(Simulate, ZeroStepsAndReplay) {
  const SchemeConfig cfg = scheme(8, 0.05, 1.0);
  const NoiseSpec spec = build_power_law_q(1.0, 4.0, 8);
  std::mt19937_64 g(12);
  const PhaseState x0 = random_state(8, g, 1.0);
  NormalStream r0(1);
  std::size_t seen = 0;
  const TrajectorySummary z = simulate_path(x0, cfg, models::sine(0.25), spec, 0, r0,
                                            {[&](std::size_t, const PhaseState&) { ++seen; }});
  EXPECT_EQ(z.final_state, x0);
  EXPECT_EQ(seen, 1u);

  auto run = [&] {
    NormalStream rng(derive_seed(99, 0, 0));
    std::vector<double> trace;
    simulate_path(x0, cfg, models::sine(0.25), spec, 200, rng,
                  {[&](std::size_t, const PhaseState& x) { trace.push_back(phase_norm(x, 1.0)); }});
    return trace;
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.size(), 201u);
  EXPECT_EQ(a, b);
}

TEST(Simulate, PathAndStreamAgree) {
  const SchemeConfig cfg = scheme(6, 0.1, 1.0);
  const NoiseSpec spec = build_power_law_q(1.0, 4.0, 6);
  NormalStream a(5), b(5);
  const IncrementPath p = sample_path(spec, 0.1, 50, a);
  const PhaseState x0(6);
  const PhaseState s1 = simulate_path(x0, cfg, models::arctan(0.25), spec, 50, b).final_state;
  const PhaseState s2 = simulate_path(x0, cfg, models::arctan(0.25), p).final_state;
  EXPECT_LE(phase_norm(s1 - s2, 1.0), 1e-12);
}

TEST(Simulate, SolverFailureReportsStep) {
  NonlinearityModel bad = models::sine(0.25);
  bad.name = "bad";
  bad.f = [](double x) { return std::abs(x) > 0.5 ? std::nan("") : 0.25 * std::sin(x); };
  const SchemeConfig cfg = scheme(4, 0.1, 1.0);
  PhaseState x0(4);
  x0.v[0] = 0.01;
  std::vector<SpectralField> incs(10, SpectralField(4));
  incs[6][0] = 5.0;
  const IncrementPath p = IncrementPath::from_increments(incs, 4, 0.1, 0);
  try {
    simulate_path(x0, cfg, bad, p);
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    EXPECT_EQ(e.step(), 6);
  }
}

TEST(Simulate, StrongErrorAgainstExactOracle) {
  // shared driving noise: the exact step is sampled jointly with its increment
  const std::size_t n = 8, samples = 32;
  const double eta = 1.0;
  const NoiseSpec spec = build_power_law_q(1.0, 4.0, n);
  std::vector<double> taus = {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
  std::vector<double> errs;
  PhaseState x0(n);
  for (std::size_t k = 1; k <= n; ++k) {
    x0.u[k - 1] = std::pow(static_cast<double>(k), -2.6);
    x0.v[k - 1] = std::pow(static_cast<double>(k), -1.6);
  }
  for (double tau : taus) {
    ExactLinearStepper ex(n, tau, eta, spec);
    BackwardEulerStepper be(scheme(n, tau, eta), models::zero());
    double sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      NormalStream rng(derive_seed(17, s));
      PhaseState xe = x0, xb = x0;
      SpectralField dw;
      for (std::size_t step = 0; step < static_cast<std::size_t>(std::llround(1.0 / tau)); ++step) {
        xe = ex.step_coupled(xe, rng, dw);
        xb = be.step(xb, dw).state;
      }
      sq += phase_norm_sq(xe - xb, 1.0) / samples;
    }
    errs.push_back(std::sqrt(sq));
  }
  for (std::size_t i = 1; i < errs.size(); ++i) EXPECT_LT(errs[i], errs[i - 1]);
  // log-log slope between first and last level
  const double slope = std::log(errs.front() / errs.back()) / std::log(taus.front() / taus.back());
  EXPECT_GT(slope, 0.4);
  EXPECT_LT(slope, 1.2);
}

TEST(Simulate, DeterministicMeanMapFirstOrder) {
  // asymptotic regime needs tau sqrt(lambda_N) small
  const std::size_t n = 4;
  std::mt19937_64 g(13);
  const PhaseState x0 = random_state(n, g, 1.0);
  std::vector<double> errs;
  for (double tau : {1.0 / 128, 1.0 / 256, 1.0 / 512, 1.0 / 1024}) {
    ExactLinearStepper ex(n, tau, 1.0, zero_noise(n));
    BackwardEulerStepper be(scheme(n, tau, 1.0), models::zero());
    NormalStream rng(0);
    PhaseState xe = x0, xb = x0;
    for (std::size_t s = 0; s < static_cast<std::size_t>(std::llround(1.0 / tau)); ++s) {
      xe = ex.step(xe, rng);
      xb = be.step(xb, SpectralField(n)).state;
    }
    errs.push_back(phase_norm(xe - xb, 1.0));
  }
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double order = std::log2(errs[i - 1] / errs[i]);
    EXPECT_GT(order, 0.85);
    EXPECT_LT(order, 1.15);
  }
}

TEST(IntegratorProperty, EnergyInequalityNoiseFree) {
  std::mt19937_64 g(14);
  const auto cat = builtin_models(1.0);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 16;
    const NonlinearityModel& m = std::next(cat.begin(), c % cat.size())->second;
    BackwardEulerStepper st(scheme(n, 0.05, 1.0), m);
    PhaseState x = random_state(n, g, 2.0);
    for (int s = 0; s < 5; ++s) {
      const PhaseState y = st.step(x, SpectralField(n)).state;
      EXPECT_LE(energy_h2(y), energy_h2(x) * (1.0 + 1e-12)) << m.name << " N=" << n;
      x = y;
    }
  }
}

TEST(IntegratorProperty, CouplingMonotonicity) {
  std::mt19937_64 g(15);
  const auto cat = builtin_models(1.0);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 16;
    const NonlinearityModel& m = std::next(cat.begin(), c % cat.size())->second;
    const SchemeConfig cfg = scheme(n, 0.05, 1.0);
    BackwardEulerStepper a(cfg, m), b(cfg, m);
    PhaseState x = random_state(n, g, 2.0), y = random_state(n, g, 2.0);
    double prev = phase_norm_sq(x - y, 1.0);
    for (int s = 0; s < 5; ++s) {
      const SpectralField dw = random_field(n, g, 0.3, 2.0);
      x = a.step(x, dw).state;
      y = b.step(y, dw).state;
      const double d = phase_norm_sq(x - y, 1.0);
      EXPECT_LE(d, prev + 10.0 * cfg.solver.tolerance * (1.0 + prev)) << m.name;
      prev = d;
    }
  }
}

TEST(IntegratorProperty, SolverResidualContract) {
  std::mt19937_64 g(16);
  const auto cat = builtin_models(1.0);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 20;
    const NonlinearityModel& m = std::next(cat.begin(), c % cat.size())->second;
    SchemeConfig cfg = scheme(n, 0.01 + 0.2 * (c % 7) / 7.0, 1.0);
    if (c % 2) cfg.solver.method = SolverMethod::newton;
    ImplicitSolver s(cfg, m);
    const SpectralField rhs = random_field(n, g, std::pow(10.0, (c % 4) - 1.0));
    const SolveResult r = s.solve(rhs);
    EXPECT_LE(s.residual_norm(r.v, rhs), cfg.solver.tolerance * (1.0 + sobolev_norm(rhs, 0.0)));
  }
}
