#include <gtest/gtest.h>

#include <cmath>

#include "dampwave/experiments.hpp"

using namespace dampwave;

namespace {

NoiseSpec tabulated(std::vector<double> q) {
  NoiseSpec s;
  s.q = std::move(q);
  s.valid = true;
  s.kind = "tabulated";
  for (std::size_t k = 1; k <= s.q.size(); ++k) {
    s.trace_q += s.q[k - 1];
    s.trace_lambda_q += eigenvalue(k) * s.q[k - 1];
  }
  return s;
}

StudyCommon common(std::size_t n, double eta, const NonlinearityModel& m, const NoiseSpec& noise) {
  StudyCommon c;
  c.scheme.n_modes = n;
  c.scheme.eta = eta;
  c.scheme.tau = 0.01;
  c.model = m;
  c.noise = noise;
  c.horizon = 1.0;
  c.samples = 8;
  c.seed = 17;
  return c;
}

double column(const StudyReport& r, std::size_t row, const std::string& name) {
  for (std::size_t i = 0; i < r.columns.size(); ++i)
    if (r.columns[i] == name) return r.rows.at(row).at(i);
  throw std::out_of_range(name);
}

}  // namespace

TEST(LineFit, ExactPowerLaw) {
  const LineFit f = fit_loglog({1, 2, 4, 8}, {3, 1.5, 0.75, 0.375});
  EXPECT_NEAR(f.slope, -1.0, 1e-14);
  EXPECT_NEAR(f.slope_stderr, 0.0, 1e-12);
  EXPECT_EQ(f.points, 4u);
  EXPECT_EQ(order_verdict(f, -1.25, -0.75, false), "pass");
  EXPECT_EQ(order_verdict(f, -0.6, -0.4, false), "superconvergent pass");
  EXPECT_EQ(order_verdict(f, -1.6, -1.4, false), "fail");
  EXPECT_EQ(order_verdict(fit_loglog({1}, {1}), 0.4, 0.6, true), "insufficient levels");
}

TEST(Monotone, SlackAndOrdering) {
  EXPECT_TRUE(monotone_in_refinement({0.1, 0.2, 0.4}, {1.0, 2.0, 4.0}, 0.0));
  EXPECT_FALSE(monotone_in_refinement({0.4, 0.2, 0.1}, {1.0, 2.0, 4.0}, 0.0));
  EXPECT_TRUE(monotone_in_refinement({0.4, 0.2, 0.1}, {4.0, 2.0, 2.1}, 0.10));
  EXPECT_FALSE(monotone_in_refinement({0.4, 0.2, 0.1}, {4.0, 2.0, 2.3}, 0.10));
}

TEST(ParallelFor, CoversAllIndicesAndRethrows) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(100, 3,
                            [](std::size_t i) {
                              if (i == 50) throw SolverFailure("boom", 1.0, 3);
                            }),
               SolverFailure);
}

TEST(TemporalStudy, SingleLevelIsInsufficient) {
  TemporalStudyConfig sc{common(4, 1.0, models::sine(0.25), build_power_law_q(1.0, 4.0, 4)), {1.0 / 8}, 1.0 / 64};
  const StudyReport r = temporal_order_study(sc);
  EXPECT_EQ(r.find("verdict"), "insufficient levels");
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_GT(column(r, 0, "rms_error_h1"), 0.0);
}

TEST(TemporalStudy, IncompatibleLadder) {
  TemporalStudyConfig sc{common(4, 1.0, models::zero(), build_power_law_q(1.0, 4.0, 4)), {0.3}, 1.0 / 64};
  EXPECT_THROW(temporal_order_study(sc), StructuralError);
  sc.tau_ladder = {1.0 / 8};
  sc.common.horizon = 1.0 / 8 * 3 + 1.0 / 64;
  EXPECT_THROW(temporal_order_study(sc), StructuralError);
}

TEST(TemporalStudy, DeterministicLinearIsFirstOrder) {
  // no noise and negligible damping: backward Euler on the rotation, slope 1
  StudyCommon c = common(2, 1e-300, models::zero(), tabulated({0.0, 0.0}));
  c.samples = 1;
  TemporalStudyConfig sc{c, {1.0 / 64, 1.0 / 128, 1.0 / 256, 1.0 / 512}, 1.0 / 16384, 0.85, 1.15};
  const StudyReport r = temporal_order_study(sc);
  EXPECT_EQ(r.find("verdict"), "pass") << r.number("fitted_slope");
  EXPECT_EQ(r.find("monotone_in_refinement"), "true");
}

TEST(TemporalStudy, StochasticSineSmall) {
  StudyCommon c = common(8, 1.0, models::sine(0.25), build_power_law_q(1.0, 4.0, 8));
  c.samples = 16;
  c.threads = 4;
  TemporalStudyConfig sc{c, {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}, 1.0 / 512};
  const StudyReport r = temporal_order_study(sc);
  ASSERT_EQ(r.rows.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_GT(column(r, l, "rms_error_h1"), 0.0);
    EXPECT_TRUE(std::isfinite(column(r, l, "rms_error_h1")));
    EXPECT_EQ(column(r, l, "steps"), 8.0 * std::pow(2.0, static_cast<double>(l)));
  }
  EXPECT_EQ(r.find("monotone_in_refinement"), "true");
  EXPECT_GT(r.number("fitted_slope"), 0.3);
}

TEST(SpatialStudy, ResolvedLinearIsExact) {
  std::vector<double> q(64, 0.0);
  for (std::size_t k = 0; k < 4; ++k) q[k] = 1.0 / std::pow(k + 1.0, 4.0);
  StudyCommon c = common(4, 1.0, models::zero(), tabulated(q));
  c.initial.kind = InitialData::Kind::single_mode;
  c.initial.mode = 3;
  c.initial.v_amplitude = 0.5;
  c.horizon = 0.5;
  SpatialStudyConfig sc{c, {4, 8, 16}, 64};
  const StudyReport r = spatial_order_study(sc);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(column(r, l, "rms_error_h1"), 0.0);
  EXPECT_EQ(r.find("verdict"), "exact");
  EXPECT_TRUE(r.passed);
}

TEST(SpatialStudy, ErrorsDecreaseInN) {
  StudyCommon c = common(4, 1.0, models::sine(0.25), build_power_law_q(1.0, 4.0, 32));
  c.scheme.tau = 1.0 / 64;
  c.horizon = 0.5;
  c.threads = 4;
  SpatialStudyConfig sc{c, {2, 4, 8}, 32};
  const StudyReport r = spatial_order_study(sc);
  EXPECT_EQ(r.find("monotone_in_refinement"), "true");
  EXPECT_LT(r.number("fitted_slope"), 0.0);
}

TEST(SpatialStudy, ReferenceTooCoarse) {
  SpatialStudyConfig sc{common(4, 1.0, models::zero(), build_power_law_q(1.0, 4.0, 32)), {4, 8}, 16};
  EXPECT_THROW(spatial_order_study(sc), StructuralError);
}

TEST(InvariantCovariance, SolvesChainEquationAndTendsToContinuum) {
  for (double lam : {eigenvalue(1), eigenvalue(5)})
    for (double tau : {0.1, 0.01}) {
      const double eta = 0.7, q = 0.3;
      const Mat2 s = backward_euler_stationary_covariance(lam, eta, q, tau);
      const double det = 1.0 + tau * eta + tau * tau * lam;
      const Mat2 r{(1.0 + tau * eta) / det, tau / det, -tau * lam / det, 1.0 / det};
      const Mat2 back = r * (s + Mat2{0, 0, 0, q * tau}) * r.transpose();
      EXPECT_NEAR(back.a, s.a, 1e-14 * std::abs(s.a) + 1e-18);
      EXPECT_NEAR(back.b, s.b, 1e-14 * std::abs(s.a) + 1e-18);
      EXPECT_NEAR(back.d, s.d, 1e-14 * std::abs(s.d));
      // cross term tau S_vv / 2 to leading order
      EXPECT_NEAR(s.b, tau * s.d / 2.0, 0.2 * tau * s.d);
    }
  const double lam = eigenvalue(2);
  const Mat2 fine = backward_euler_stationary_covariance(lam, 1.0, 1.0, 1e-6);
  EXPECT_NEAR(fine.d, 0.5, 1e-4);
  EXPECT_NEAR(fine.a, 0.5 / lam, 1e-4 / lam);
}

TEST(InvariantCheck, BiasShrinksWithTau) {
  InvariantCheckConfig ic;
  ic.scheme.n_modes = 4;
  ic.scheme.eta = 1.0;
  ic.scheme.tau = 0.02;
  ic.noise = build_power_law_q(1.0, 4.0, 4);
  ic.horizon = 2000.0;
  ic.seed = 5;
  const StudyReport coarse = invariant_linear_check(ic);
  ic.scheme.tau = 0.01;
  const StudyReport fine = invariant_linear_check(ic);
  const double b_coarse = std::abs(coarse.number("scheme_bias_v")), b_fine = std::abs(fine.number("scheme_bias_v"));
  EXPECT_LT(b_fine, 0.6 * b_coarse);
  EXPECT_GT(b_fine, 0.4 * b_coarse);
  for (const StudyReport* r : {&coarse, &fine}) {
    // the simulation tracks the chain's own stationary moments
    EXPECT_LT(std::abs(r->number("avg_v_norm_sq") - r->number("scheme_v_norm_sq")),
              4.0 * r->number("stderr_v_norm_sq"));
    EXPECT_EQ(r->rows.size(), 4u);
  }
  EXPECT_EQ(fine.find("cross_covariance_ok").has_value(), true);
}

TEST(Slln, ConstantIsExact) {
  SllnConfig sc;
  sc.scheme.n_modes = 3;
  sc.scheme.eta = 1.0;
  sc.scheme.tau = 0.1;
  sc.model = models::sine(0.25);
  sc.noise = build_power_law_q(1.0, 4.0, 3);
  sc.observable = "constant";
  sc.horizons = {1.0, 10.0};
  sc.replicas = 2;
  const StudyReport r = slln_decay_study(sc);
  for (const auto& row : r.rows) EXPECT_EQ(row[2], 0.0);
  EXPECT_EQ(r.find("verdict"), "exact");
}

TEST(Slln, LinearDecayNearHalf) {
  SllnConfig sc;
  sc.scheme.n_modes = 4;
  sc.scheme.eta = 1.0;
  sc.scheme.tau = 0.02;
  sc.model = models::zero();
  sc.noise = build_power_law_q(1.0, 4.0, 4);
  sc.horizons = {20.0, 200.0, 2000.0};
  sc.replicas = 24;
  sc.seed = 8;
  sc.threads = 4;
  const StudyReport r = slln_decay_study(sc);
  EXPECT_EQ(r.find("reference"), "stationary mean of the scheme");
  EXPECT_GT(r.number("fitted_slope"), -0.8);
  EXPECT_LT(r.number("fitted_slope"), -0.2);
}

TEST(Slln, SinePairedReplicasAgree) {
  SllnConfig sc;
  sc.scheme.n_modes = 4;
  sc.scheme.eta = 1.0;
  sc.scheme.tau = 0.02;
  sc.model = models::sine(0.25);
  sc.noise = build_power_law_q(1.0, 4.0, 4);
  sc.observable = "mode_v(1)";
  sc.initial.kind = InitialData::Kind::power_law;
  sc.initial.amplitude = 5.0;
  sc.horizons = {20.0, 200.0};
  sc.replicas = 4;
  sc.threads = 4;
  const StudyReport r = slln_decay_study(sc);
  EXPECT_EQ(r.find("reference"), "paired replicas");
  EXPECT_LT(r.number("max_pair_z"), 4.0);
}

TEST(ContractionStudy, IdenticalSkippedAndRatesConsistent) {
  ContractionStudyConfig cc;
  cc.scheme.n_modes = 8;
  cc.scheme.eta = 1.0;
  cc.scheme.tau = 0.01;
  cc.model = models::sine(0.25);
  cc.noise = build_power_law_q(1.0, 4.0, 8);
  cc.n_steps = 2000;
  cc.threads = 4;
  NormalStream rng(3);
  InitialData id;
  const PhaseState x0 = id.build(8);
  cc.pairs.push_back({x0, PhaseState(-1.0 * x0.u, -1.0 * x0.v)});
  cc.pairs.push_back({x0, x0});
  for (int i = 0; i < 4; ++i)
    cc.pairs.push_back({random_smooth_state(8, 2.0, 2.6, 1.6, rng), random_smooth_state(8, 2.0, 2.6, 1.6, rng)});
  const StudyReport r = contraction_rate_study(cc);
  EXPECT_EQ(r.number("pairs_skipped_identical"), 1.0);
  EXPECT_EQ(r.number("pairs_used"), 5.0);
  EXPECT_GT(column(r, 0, "fitted_rate"), 0.0);
  EXPECT_GT(r.number("min_rate"), 0.01);
  EXPECT_LE(r.number("rate_spread"), 2.0);
  EXPECT_EQ(r.number("monotonicity_violations"), 0.0);
  EXPECT_TRUE(r.passed);
}

TEST(MomentStudy, SmoothedSawtoothStaysBounded) {
  MomentStudyConfig mc;
  mc.scheme.n_modes = 8;
  mc.scheme.eta = 1.0;
  mc.scheme.tau = 0.01;
  mc.model = models::smoothed_hm(1.0, 0.1);
  mc.noise = build_power_law_q(1.0, 4.0, 8);
  mc.horizon = 100.0;
  mc.seed = 2;
  const StudyReport r = moment_bound_study(mc);
  EXPECT_EQ(r.find("all_finite"), "true");
  EXPECT_LT(r.number("final_decade_increase"), 0.10);
  EXPECT_GT(r.number("epsilon"), 0.0);
  EXPECT_TRUE(r.passed);
  EXPECT_THROW(
      {
        MomentStudyConfig bad = mc;
        bad.epsilon = 5.0;
        moment_bound_study(bad);
      },
      ConfigError);
}

TEST(Reproducibility, StudiesIgnoreThreadCount) {
  StudyCommon c = common(4, 1.0, models::sine(0.25), build_power_law_q(1.0, 4.0, 4));
  c.samples = 12;
  TemporalStudyConfig sc{c, {1.0 / 8, 1.0 / 16}, 1.0 / 64};
  const StudyReport a = temporal_order_study(sc);
  sc.common.threads = 5;
  const StudyReport b = temporal_order_study(sc);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.summary, b.summary);
  sc.common.seed = 18;
  EXPECT_NE(temporal_order_study(sc).rows, a.rows);
}
