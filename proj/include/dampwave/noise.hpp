#pragma once

// Diagonal trace-class covariance Q e_k = q_k e_k and Q-Wiener increments.
//
// Random streams: every trajectory owns one NormalStream seeded by
// derive_seed(experiment_seed, sample_index, stream_tag). Within a stream the
// draws are consumed step-major, mode-minor: the increment of step n uses
// draws n*N .. n*N+N-1. Two trajectories driven by the same (seed, sample,
// tag) therefore see the same Brownian path, which is what synchronous
// coupling and shared-path convergence studies rely on.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dampwave/errors.hpp"
#include "dampwave/spectral.hpp"

namespace dampwave {

struct NoiseSpec {
  std::vector<double> q;  // q_1..q_N
  double trace_q = 0.0;
  double trace_lambda_q = 0.0;
  // Whether the full (untruncated) family satisfies sum lambda_k q_k < inf
  // and sum q_k ||e_k||_inf^2 < inf.
  bool valid = false;
  std::string kind = "power_law";
  double c = 0.0;
  double s = 0.0;

  std::size_t n_modes() const { return q.size(); }

  // Same family truncated to n modes.
  NoiseSpec truncated(std::size_t n) const;
};

// q_k = c k^{-s}. Valid iff s > 3: lambda_k q_k ~ pi^2 c k^{2-s} must be summable.
inline NoiseSpec build_power_law_q(double c, double s, std::size_t n) {
  if (!(c > 0.0)) throw DomainError("build_power_law_q: c must be positive");
  if (n == 0) throw DomainError("build_power_law_q: N must be >= 1");
  NoiseSpec spec;
  spec.c = c;
  spec.s = s;
  spec.q.resize(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const double qk = c * std::pow(static_cast<double>(k), -s);
    spec.q[k - 1] = qk;
    spec.trace_q += qk;
    spec.trace_lambda_q += eigenvalue(k) * qk;
  }
  spec.valid = s > 3.0;
  return spec;
}

inline NoiseSpec NoiseSpec::truncated(std::size_t n) const {
  if (kind == "power_law") return build_power_law_q(c, s, n);
  if (n > q.size()) throw StructuralError("NoiseSpec::truncated: cannot extend a tabulated spec");
  NoiseSpec out = *this;
  out.q.resize(n);
  out.trace_q = 0.0;
  out.trace_lambda_q = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    out.trace_q += out.q[k - 1];
    out.trace_lambda_q += eigenvalue(k) * out.q[k - 1];
  }
  return out;
}

// SplitMix64 finalizer over the tuple (seed, a, b).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

// Standard normal draws from a seeded 64-bit Mersenne twister.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double operator()() { return normal_(engine_); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// One Q-Wiener increment over a step of length tau: mode k ~ N(0, q_k tau).
inline SpectralField sample_increment(const NoiseSpec& spec, double tau, NormalStream& rng) {
  if (!spec.valid) throw DomainError("sample_increment: noise spec violates the trace condition");
  if (!(tau >= 0.0)) throw DomainError("sample_increment: tau must be nonnegative");
  SpectralField dw(spec.n_modes());
  const double st = std::sqrt(tau);
  for (std::size_t i = 0; i < spec.n_modes(); ++i) dw[i] = std::sqrt(spec.q[i]) * st * rng();
  return dw;
}

// A sampled Brownian path stored by its node values W(t_0) = 0, W(t_1), ...
// Increments are node differences, so restricting to every r-th node is an
// exact coarsening and nested coarsenings commute.
class IncrementPath {
 public:
  IncrementPath() = default;
  IncrementPath(std::vector<SpectralField> nodes, double step, std::uint64_t seed)
      : nodes_(std::move(nodes)), step_(step), seed_(seed) {
    if (nodes_.empty()) throw StructuralError("IncrementPath: needs at least the origin node");
  }

  static IncrementPath from_increments(const std::vector<SpectralField>& increments,
                                       std::size_t n_modes, double step, std::uint64_t seed) {
    std::vector<SpectralField> nodes;
    nodes.reserve(increments.size() + 1);
    nodes.emplace_back(n_modes);
    for (const auto& dw : increments) nodes.push_back(nodes.back() + dw);
    return IncrementPath(std::move(nodes), step, seed);
  }

  std::size_t n_steps() const { return nodes_.size() - 1; }
  std::size_t n_modes() const { return nodes_.front().n_modes(); }
  double step() const { return step_; }
  std::uint64_t seed() const { return seed_; }
  const SpectralField& node(std::size_t n) const { return nodes_.at(n); }
  const std::vector<SpectralField>& nodes() const { return nodes_; }

  SpectralField increment(std::size_t n) const { return nodes_.at(n + 1) - nodes_.at(n); }

  // Increment restricted to the first n modes (shared noise across Galerkin levels).
  SpectralField increment(std::size_t n, std::size_t n_modes) const {
    return project(increment(n), n_modes);
  }

 private:
  std::vector<SpectralField> nodes_;
  double step_ = 0.0;
  std::uint64_t seed_ = 0;
};

inline IncrementPath sample_path(const NoiseSpec& spec, double tau, std::size_t n_steps,
                                 NormalStream& rng) {
  std::vector<SpectralField> incs;
  incs.reserve(n_steps);
  for (std::size_t n = 0; n < n_steps; ++n) incs.push_back(sample_increment(spec, tau, rng));
  return IncrementPath::from_increments(incs, spec.n_modes(), tau, rng.seed());
}

inline IncrementPath coarsen_path(const IncrementPath& fine, std::size_t ratio) {
  if (ratio == 0) throw StructuralError("coarsen_path: ratio must be >= 1");
  if (fine.n_steps() % ratio != 0)
    throw StructuralError("coarsen_path: ratio " + std::to_string(ratio) + " does not divide " +
                          std::to_string(fine.n_steps()) + " steps");
  std::vector<SpectralField> nodes;
  nodes.reserve(fine.n_steps() / ratio + 1);
  for (std::size_t n = 0; n <= fine.n_steps(); n += ratio) nodes.push_back(fine.node(n));
  return IncrementPath(std::move(nodes), fine.step() * static_cast<double>(ratio), fine.seed());
}

}  // namespace dampwave
