#pragma once

// Subcommand dispatch: dampwave <subcommand> [--output P] [--format F] [--threads T] config.ini
//
// Exit status: 0 run completed, 2 invalid configuration or failed model audit,
// 3 solver failure, 4 I/O failure, 1 anything else.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dampwave/ergodics.hpp"
#include "dampwave/errors.hpp"
#include "dampwave/experiments.hpp"
#include "dampwave/integrator.hpp"
#include "dampwave/io.hpp"

namespace dampwave {

inline constexpr const char* kThreadEnv = "DAMPWAVE_THREADS";

namespace cli_detail {

inline double require_horizon(const ExperimentConfig& cfg) {
  if (!cfg.horizon) throw ConfigError("scheme.horizon", "required key is missing");
  return *cfg.horizon;
}

inline StudyCommon common_from(ExperimentConfig& cfg, std::size_t threads) {
  StudyCommon c;
  c.scheme = cfg.scheme;
  c.model = cfg.model;
  c.noise = cfg.noise;
  c.initial = cfg.initial;
  c.horizon = require_horizon(cfg);
  c.samples = cfg.table.count("experiment.samples");
  if (c.samples == 0) throw ConfigError("experiment.samples", "must be >= 1");
  c.seed = cfg.seed;
  c.threads = threads;
  return c;
}

inline std::optional<LyapunovParams> lyapunov_for(const ExperimentConfig& cfg) {
  NormalStream rng(derive_seed(cfg.seed, 0, 7));
  const double lip = estimate_lipschitz_hm1(cfg.model, std::min<std::size_t>(cfg.scheme.n_modes, 32), 64, 1.0, rng);
  return LyapunovParams::default_for(cfg.scheme.eta, cfg.model, lip);
}

inline StudyReport run_simulate(ExperimentConfig& cfg) {
  ConfigTable& t = cfg.table;
  const std::size_t n_steps = t.count("experiment.n_steps");
  const std::size_t every = t.count_or("experiment.record_every", 1);
  if (every == 0) throw ConfigError("experiment.record_every", "must be >= 1");
  std::vector<std::string> names = detail::split(t.raw("experiment.observables").value_or("h1_norm_sq,v_norm_sq"), ',');
  std::optional<LyapunovParams> lyap;
  for (const auto& name : names)
    if (name.rfind("lyapunov", 0) == 0) lyap = lyapunov_for(cfg);
  std::vector<CpGammaFunctional> obs;
  for (const auto& name : names) {
    try {
      obs.push_back(make_observable(name, cfg.scheme.n_modes, lyap));
    } catch (const std::exception& e) {
      throw ConfigError("experiment.observables", e.what());
    }
  }
  StudyReport rep;
  rep.kind = "simulate";
  rep.seed = cfg.seed;
  rep.columns = {"step", "time"};
  for (const auto& o : obs) rep.columns.push_back(o.name);
  const double tau = cfg.scheme.tau;
  Observer record = [&](std::size_t step, const PhaseState& x) {
    if (step % every != 0 && step != n_steps) return;
    std::vector<double> row = {static_cast<double>(step), static_cast<double>(step) * tau};
    for (const auto& o : obs) row.push_back(o(x));
    rep.rows.push_back(std::move(row));
  };
  NormalStream rng(derive_seed(cfg.seed, 0, 0));
  const TrajectorySummary s =
      simulate_path(cfg.initial.build(cfg.scheme.n_modes), cfg.scheme, cfg.model, cfg.noise, n_steps, rng, {record});
  rep.note("n_steps", static_cast<double>(s.n_steps));
  rep.note("total_iterations", static_cast<double>(s.total_iterations));
  rep.note("max_residual", s.max_residual);
  rep.passed = true;
  return rep;
}

inline StudyReport run_converge_time(ExperimentConfig& cfg, std::size_t threads) {
  TemporalStudyConfig sc;
  sc.common = common_from(cfg, threads);
  sc.tau_ladder = cfg.table.numbers("experiment.tau_ladder");
  sc.tau_ref = cfg.table.number("experiment.tau_ref");
  sc.band_lo = cfg.table.number_or("experiment.band_lo", 0.4);
  sc.band_hi = cfg.table.number_or("experiment.band_hi", 0.6);
  for (double tau : sc.tau_ladder)
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("experiment.tau_ladder", "every tau must lie in (0, 1)");
  if (!(sc.tau_ref > 0.0 && sc.tau_ref < 1.0)) throw ConfigError("experiment.tau_ref", "must lie in (0, 1)");
  try {
    return temporal_order_study(sc);
  } catch (const StructuralError& e) {
    throw ConfigError("experiment.tau_ladder", e.what());
  }
}

inline StudyReport run_converge_space(ExperimentConfig& cfg, std::size_t threads) {
  SpatialStudyConfig sc;
  sc.common = common_from(cfg, threads);
  sc.n_ladder = cfg.table.counts("experiment.n_ladder");
  sc.n_ref = cfg.table.count("experiment.n_ref");
  sc.band_lo = cfg.table.number_or("experiment.band_lo", -1.25);
  sc.band_hi = cfg.table.number_or("experiment.band_hi", -0.75);
  for (std::size_t n : sc.n_ladder)
    if (n == 0) throw ConfigError("experiment.n_ladder", "every N must be >= 1");
  sc.common.scheme.n_modes = sc.n_ref;
  sc.common.noise = build_power_law_q(cfg.noise.c, cfg.noise.s, sc.n_ref);
  try {
    return spatial_order_study(sc);
  } catch (const StructuralError& e) {
    throw ConfigError("experiment.n_ref", e.what());
  }
}

inline StudyReport run_invariant(ExperimentConfig& cfg) {
  if (!cfg.model.is_zero()) throw ConfigError("nonlinearity.name", "invariant-check requires the zero model");
  InvariantCheckConfig ic;
  ic.scheme = cfg.scheme;
  ic.noise = cfg.noise;
  ic.burn_in = cfg.table.number("experiment.burn_in");
  if (!(ic.burn_in >= 0.0)) throw ConfigError("experiment.burn_in", "must be nonnegative");
  ic.horizon = require_horizon(cfg);
  ic.rel_tol = cfg.table.number_or("experiment.rel_tol", 0.05);
  ic.z_max = cfg.table.number_or("experiment.z_max", 3.0);
  ic.seed = cfg.seed;
  return invariant_linear_check(ic);
}

inline StudyReport run_slln(ExperimentConfig& cfg, std::size_t threads) {
  SllnConfig sc;
  sc.scheme = cfg.scheme;
  sc.model = cfg.model;
  sc.noise = cfg.noise;
  sc.observable = cfg.table.raw("experiment.observable").value_or("v_norm_sq");
  sc.horizons = cfg.table.numbers("experiment.horizons");
  sc.replicas = cfg.table.count("experiment.replicas");
  if (sc.replicas == 0) throw ConfigError("experiment.replicas", "must be >= 1");
  sc.initial = cfg.initial;
  sc.seed = cfg.seed;
  sc.threads = threads;
  sc.band_lo = cfg.table.number_or("experiment.band_lo", -0.65);
  sc.band_hi = cfg.table.number_or("experiment.band_hi", -0.35);
  if (!std::is_sorted(sc.horizons.begin(), sc.horizons.end()))
    throw ConfigError("experiment.horizons", "horizons must increase");
  try {
    if (sc.observable != "constant") make_observable(sc.observable, sc.scheme.n_modes);
  } catch (const std::exception& e) {
    throw ConfigError("experiment.observable", e.what());
  }
  return slln_decay_study(sc);
}

inline StudyReport run_contraction(ExperimentConfig& cfg, std::size_t threads) {
  ContractionStudyConfig cc;
  cc.scheme = cfg.scheme;
  cc.model = cfg.model;
  cc.noise = cfg.noise;
  cc.seed = cfg.seed;
  cc.threads = threads;
  cc.min_rate = cfg.table.number_or("experiment.min_rate", 0.01);
  if (auto n = cfg.table.raw("experiment.n_steps"))
    cc.n_steps = ConfigTable::to_size("experiment.n_steps", *n);
  else
    cc.n_steps = static_cast<std::size_t>(std::llround(require_horizon(cfg) / cfg.scheme.tau));
  const std::size_t pairs = cfg.table.count("experiment.pairs");
  if (pairs == 0) throw ConfigError("experiment.pairs", "must be >= 1");
  const double amp = cfg.table.number_or("experiment.pair_amplitude", 1.0);
  const std::size_t n = cfg.scheme.n_modes;
  // pair 0 is antipodal around the configured initial data; the rest are random
  const PhaseState x0 = cfg.initial.build(n);
  PhaseState minus = x0;
  minus.u *= -1.0;
  minus.v *= -1.0;
  cc.pairs.emplace_back(x0, minus);
  for (std::size_t i = 1; i < pairs; ++i) {
    NormalStream rng(derive_seed(cfg.seed, i, 8));
    PhaseState a = random_smooth_state(n, amp, 2.6, 1.6, rng);
    PhaseState b = random_smooth_state(n, amp, 2.6, 1.6, rng);
    cc.pairs.emplace_back(std::move(a), std::move(b));
  }
  return contraction_rate_study(cc);
}

inline StudyReport run_audit(ExperimentConfig& cfg, std::string& failure) {
  const double radius = cfg.table.number_or("experiment.audit_radius", 10.0);
  const std::size_t samples = cfg.table.count_or("experiment.audit_samples", 10001);
  if (!(radius > 0.0)) throw ConfigError("experiment.audit_radius", "must be positive");
  if (samples < 2) throw ConfigError("experiment.audit_samples", "must be >= 2");
  const AuditReport a = audit_assumptions(cfg.model, cfg.scheme.eta, radius, samples);
  NormalStream rng(derive_seed(cfg.seed, 0, 9));
  const double lip = estimate_lipschitz_hm1(cfg.model, std::min<std::size_t>(cfg.scheme.n_modes, 32), 64, 1.0, rng);
  StudyReport rep;
  rep.kind = "audit-model";
  rep.seed = cfg.seed;
  rep.note("model", a.model);
  rep.note("eta", a.eta);
  rep.note("radius", a.radius);
  rep.note("max_growth_ratio", a.max_growth_ratio);
  rep.note("a1_limit", std::sqrt(2.0) / 2.0 * a.eta);
  rep.note("min_fprime", a.min_fprime);
  rep.note("max_fprime_growth", a.max_fprime_growth);
  rep.note("max_fd_error", a.max_fd_error);
  rep.note("linear_growth_ok", a.linear_growth_ok ? "true" : "false");
  rep.note("derivative_bound_ok", a.derivative_bound_ok ? "true" : "false");
  rep.note("derivative_growth_ok", a.derivative_growth_ok ? "true" : "false");
  rep.note("fprime_consistent", a.fprime_consistent ? "true" : "false");
  rep.note("lipschitz_hm1_lower_estimate", lip);
  rep.passed = a.passed();
  rep.note("verdict", rep.passed ? "pass" : "fail");
  if (!a.linear_growth_ok)
    failure = "nonlinearity.name: model '" + a.model + "' violates the linear-growth assumption |f(x)| <= a1 (1 + |x|) with a1 < (sqrt 2 / 2) eta";
  else if (!a.derivative_bound_ok)
    failure = "nonlinearity.name: model '" + a.model + "' violates the one-sided bound f' >= a2 > -eta";
  else if (!a.derivative_growth_ok)
    failure = "nonlinearity.name: model '" + a.model + "' violates the derivative growth bound |f'(x)| <= c (1 + |x|)";
  else if (!a.fprime_consistent)
    failure = "nonlinearity.name: model '" + a.model + "' has f' inconsistent with finite differences of f";
  return rep;
}

inline std::size_t resolve_threads(std::optional<std::size_t> flag, const ExperimentConfig& cfg) {
  if (flag) return std::max<std::size_t>(1, *flag);
  if (const char* env = std::getenv(kThreadEnv)) {
    try {
      return std::max<std::size_t>(1, ConfigTable::to_size(kThreadEnv, env));
    } catch (const ConfigError&) {
      throw ConfigError(kThreadEnv, std::string("expected a positive integer, got '") + env + "'");
    }
  }
  if (cfg.threads) return std::max<std::size_t>(1, *cfg.threads);
  return std::max<unsigned>(1, std::thread::hardware_concurrency());
}

inline std::string resolve_format(const std::optional<std::string>& flag, const ExperimentConfig& cfg,
                                  const std::string& output) {
  if (flag) return *flag;
  if (cfg.format) return *cfg.format;
  const auto ends = [&](const std::string& suf) {
    return output.size() >= suf.size() && output.compare(output.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends(".jsonl") || ends(".json") ? "json-lines" : "csv";
}

}  // namespace cli_detail

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"simulate", "converge-time", "converge-space",
                                                 "invariant-check", "contraction", "slln", "audit-model"};
  return names;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Spectral Galerkin / backward Euler studies for the damped stochastic wave equation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string config_path, output_flag, format_flag;
  std::size_t threads_flag = 0;
  for (const auto& name : subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "configuration file")->required();
    sub->add_option("--output,-o", output_flag, "result file, '-' for stdout");
    sub->add_option("--format,-f", format_flag, "csv or json-lines")->check(CLI::IsMember({"csv", "json-lines"}));
    sub->add_option("--threads,-j", threads_flag, "worker threads")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  const CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  const auto flag_set = [&](const char* name) { return chosen->count(name) > 0; };

  const auto t0 = std::chrono::steady_clock::now();
  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!cfg.experiment_kind.empty() && cfg.experiment_kind != command)
      throw ConfigError("experiment.kind", "config is for '" + cfg.experiment_kind + "', not '" + command + "'");
    const std::size_t threads =
        cli_detail::resolve_threads(flag_set("--threads") ? std::optional<std::size_t>(threads_flag) : std::nullopt, cfg);
    const std::string output = flag_set("--output") ? output_flag : cfg.output.value_or("-");
    const std::string format = cli_detail::resolve_format(
        flag_set("--format") ? std::optional<std::string>(format_flag) : std::nullopt, cfg, output);

    std::string audit_failure;
    StudyReport rep;
    if (command == "audit-model") {
      rep = cli_detail::run_audit(cfg, audit_failure);
    } else {
      validate_model(cfg);
      if (command == "simulate") rep = cli_detail::run_simulate(cfg);
      else if (command == "converge-time") rep = cli_detail::run_converge_time(cfg, threads);
      else if (command == "converge-space") rep = cli_detail::run_converge_space(cfg, threads);
      else if (command == "invariant-check") rep = cli_detail::run_invariant(cfg);
      else if (command == "slln") rep = cli_detail::run_slln(cfg, threads);
      else rep = cli_detail::run_contraction(cfg, threads);
    }
    const ResultRecord rec = make_record(command, cfg, rep);
    write_results(rec, output, format);
    std::ostream& human = output == "-" ? err : out;
    human << command << " (" << rec.config_hash << ")\n" << format_table(rec);
    err << "wall-clock: " << format_double(detail::seconds_since(t0)) << " s\n";
    if (!audit_failure.empty()) {
      err << "error: " << audit_failure << "\n";
      return 2;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StructuralError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SolverFailure& e) {
    err << "solver failure at step " << e.step() << ": " << e.what() << " (residual "
        << format_double(e.residual()) << ")\n";
    return 3;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dampwave
