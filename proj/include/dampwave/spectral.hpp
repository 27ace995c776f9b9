#pragma once

// Dirichlet-Laplacian eigenbasis on the unit interval.
//
// Fields are stored by their coefficients in the orthonormal basis
// e_k(x) = sqrt(2) sin(k pi x), k = 1..N, with eigenvalues lambda_k = (k pi)^2.
// Coefficient k lives at index k-1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dampwave/errors.hpp"

namespace dampwave {

inline double eigenvalue(std::size_t k) {
  if (k == 0) throw DomainError("eigenvalue: mode index must be >= 1");
  const double w = static_cast<double>(k) * std::numbers::pi;
  return w * w;
}

class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(std::size_t n_modes) : coeffs_(n_modes, 0.0) {}
  explicit SpectralField(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {}

  // Unit vector e_k in a space with n_modes modes.
  static SpectralField unit(std::size_t k, std::size_t n_modes) {
    if (k == 0 || k > n_modes) throw DomainError("SpectralField::unit: mode out of range");
    SpectralField f(n_modes);
    f.coeffs_[k - 1] = 1.0;
    return f;
  }

  std::size_t n_modes() const { return coeffs_.size(); }
  double& operator[](std::size_t i) { return coeffs_[i]; }
  double operator[](std::size_t i) const { return coeffs_[i]; }
  // 1-based access matching the mode index.
  double mode(std::size_t k) const { return coeffs_.at(k - 1); }

  std::span<const double> coeffs() const { return coeffs_; }
  std::span<double> coeffs() { return coeffs_; }
  const std::vector<double>& vec() const { return coeffs_; }

  bool is_finite() const {
    for (double c : coeffs_)
      if (!std::isfinite(c)) return false;
    return true;
  }

  SpectralField& operator+=(const SpectralField& o) {
    require_same(o);
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += o.coeffs_[i];
    return *this;
  }
  SpectralField& operator-=(const SpectralField& o) {
    require_same(o);
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] -= o.coeffs_[i];
    return *this;
  }
  SpectralField& operator*=(double a) {
    for (double& c : coeffs_) c *= a;
    return *this;
  }
  friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
  friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
  friend SpectralField operator*(double s, SpectralField a) { return a *= s; }
  friend SpectralField operator*(SpectralField a, double s) { return a *= s; }
  friend bool operator==(const SpectralField&, const SpectralField&) = default;

  void require_same(const SpectralField& o) const {
    if (o.coeffs_.size() != coeffs_.size())
      throw StructuralError("mode-count mismatch: " + std::to_string(coeffs_.size()) + " vs " +
                            std::to_string(o.coeffs_.size()));
  }

 private:
  std::vector<double> coeffs_;
};

// X = (u, v) with u in H^beta and v in H^{beta-1}.
struct PhaseState {
  SpectralField u;
  SpectralField v;

  PhaseState() = default;
  explicit PhaseState(std::size_t n_modes) : u(n_modes), v(n_modes) {}
  PhaseState(SpectralField u_, SpectralField v_) : u(std::move(u_)), v(std::move(v_)) {
    u.require_same(v);
  }

  std::size_t n_modes() const { return u.n_modes(); }
  bool is_finite() const { return u.is_finite() && v.is_finite(); }

  friend PhaseState operator-(const PhaseState& a, const PhaseState& b) {
    return PhaseState(a.u - b.u, a.v - b.v);
  }
  friend bool operator==(const PhaseState&, const PhaseState&) = default;
};

// lambda_k^r, with the integer orders used by the energy functionals kept exact.
inline double sobolev_weight(std::size_t k, double r) {
  const double lam = eigenvalue(k);
  if (r == 0.0) return 1.0;
  if (r == 1.0) return lam;
  if (r == 2.0) return lam * lam;
  if (r == -1.0) return 1.0 / lam;
  return std::pow(lam, r);
}

namespace detail {
inline void require_finite(const SpectralField& f, const char* where) {
  if (!f.is_finite()) throw DomainError(std::string(where) + ": non-finite coefficient");
}
}  // namespace detail

// <x, y>_{H^r} = sum_k lambda_k^r x_k y_k
inline double sobolev_inner(const SpectralField& x, const SpectralField& y, double r) {
  x.require_same(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.n_modes(); ++i) {
    const double w = sobolev_weight(i + 1, r);
    s += w * x[i] * y[i];
  }
  return s;
}

inline double sobolev_norm_sq(const SpectralField& psi, double r) {
  detail::require_finite(psi, "sobolev_norm");
  double s = 0.0;
  for (std::size_t i = 0; i < psi.n_modes(); ++i) {
    const double w = sobolev_weight(i + 1, r);
    s += w * psi[i] * psi[i];
  }
  return s;
}

inline double sobolev_norm(const SpectralField& psi, double r) {
  return std::sqrt(sobolev_norm_sq(psi, r));
}

inline double phase_norm_sq(const PhaseState& x, double beta) {
  x.u.require_same(x.v);
  return sobolev_norm_sq(x.u, beta) + sobolev_norm_sq(x.v, beta - 1.0);
}

inline double phase_norm(const PhaseState& x, double beta) {
  return std::sqrt(phase_norm_sq(x, beta));
}

// Truncation Pi_N. Also zero-pads when N exceeds the current mode count, so
// that fields can be lifted into a finer Galerkin space.
inline SpectralField project(const SpectralField& psi, std::size_t n) {
  if (n == 0) throw DomainError("project: N must be >= 1");
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < std::min(n, psi.n_modes()); ++i) c[i] = psi[i];
  return SpectralField(std::move(c));
}

inline PhaseState project(const PhaseState& x, std::size_t n) {
  return PhaseState(project(x.u, n), project(x.v, n));
}

// Values at the interior points x_j = j/(M+1), j = 1..M.
struct GridField {
  std::vector<double> values;
  std::size_t m_points() const { return values.size(); }
};

inline double grid_point(std::size_t j, std::size_t m) {
  return static_cast<double>(j) / static_cast<double>(m + 1);
}

// Tabulated sqrt(2) sin(k pi x_j) for synthesis and analysis on a fixed (N, M) pair.
// Analysis uses the discrete orthogonality
//   sum_{j=1}^M 2 sin(k pi x_j) sin(l pi x_j) = (M+1) delta_kl,  1 <= k, l <= M,
// so from_grid(to_grid(psi)) recovers psi exactly whenever N <= M.
class SineBasis {
 public:
  SineBasis(std::size_t n_modes, std::size_t m_points) : n_(n_modes), m_(m_points) {
    if (n_ == 0) throw DomainError("SineBasis: N must be >= 1");
    if (m_ < n_)
      throw StructuralError("SineBasis: grid of " + std::to_string(m_) +
                            " points aliases " + std::to_string(n_) + " modes");
    table_.resize(m_ * n_);
    const std::size_t period = 2 * (m_ + 1);
    const double h = std::numbers::pi / static_cast<double>(m_ + 1);
    for (std::size_t j = 1; j <= m_; ++j)
      for (std::size_t k = 1; k <= n_; ++k) {
        // reduce k*j mod 2(M+1) before the sine so large products stay exact
        const std::size_t r = (k * j) % period;
        table_[(j - 1) * n_ + (k - 1)] = std::numbers::sqrt2 * std::sin(h * static_cast<double>(r));
      }
  }

  std::size_t n_modes() const { return n_; }
  std::size_t m_points() const { return m_; }

  void synthesize(std::span<const double> coeffs, std::span<double> out) const {
    for (std::size_t j = 0; j < m_; ++j) {
      const double* row = &table_[j * n_];
      double s = 0.0;
      for (std::size_t k = 0; k < n_; ++k) s += row[k] * coeffs[k];
      out[j] = s;
    }
  }

  void analyze(std::span<const double> values, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < m_; ++j) {
      const double* row = &table_[j * n_];
      const double g = values[j];
      for (std::size_t k = 0; k < n_; ++k) out[k] += row[k] * g;
    }
    const double inv = 1.0 / static_cast<double>(m_ + 1);
    for (std::size_t k = 0; k < n_; ++k) out[k] *= inv;
  }

  GridField to_grid(const SpectralField& psi) const {
    if (psi.n_modes() != n_) throw StructuralError("SineBasis::to_grid: mode-count mismatch");
    GridField g{std::vector<double>(m_)};
    synthesize(psi.coeffs(), g.values);
    return g;
  }

  SpectralField from_grid(const GridField& g) const {
    if (g.m_points() != m_) throw StructuralError("SineBasis::from_grid: grid-size mismatch");
    SpectralField f(n_);
    analyze(g.values, f.coeffs());
    return f;
  }

 private:
  std::size_t n_;
  std::size_t m_;
  std::vector<double> table_;  // row j-1, column k-1
};

inline GridField to_grid(const SpectralField& psi, std::size_t m) {
  return SineBasis(psi.n_modes(), m).to_grid(psi);
}

inline SpectralField from_grid(const GridField& g, std::size_t n) {
  return SineBasis(n, g.m_points()).from_grid(g);
}

inline std::size_t default_grid_points(std::size_t n_modes) { return 2 * n_modes + 1; }

}  // namespace dampwave
