#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace mzgle {

/// Uniform grid t_i = i dt, i = 0..steps.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double T, double dt) : T_(T), dt_(dt) {
    if (!(dt > 0) || !std::isfinite(dt)) throw ValidationError("time step must be positive");
    if (!(T >= 0) || !std::isfinite(T)) throw ValidationError("horizon must be non-negative");
    const double r = T / dt;
    steps_ = static_cast<std::size_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(steps_)) > 1e-8 * std::max(1.0, r))
      throw ValidationError("horizon " + std::to_string(T) + " is not a multiple of dt " + std::to_string(dt));
  }

  static TimeGrid from_steps(std::size_t steps, double dt) { return TimeGrid(static_cast<double>(steps) * dt, dt); }

  double T() const { return T_; }
  double dt() const { return dt_; }
  std::size_t steps() const { return steps_; }
  std::size_t size() const { return steps_ + 1; }
  double t(std::size_t i) const { return static_cast<double>(i) * dt_; }

  /// Grid with every `stride`-th node.
  TimeGrid coarsened(std::size_t stride) const {
    if (stride == 0 || steps_ % stride != 0) throw ValidationError("stride does not divide the grid");
    return from_steps(steps_ / stride, dt_ * static_cast<double>(stride));
  }

  bool operator==(const TimeGrid& o) const { return steps_ == o.steps_ && dt_ == o.dt_; }

 private:
  double T_ = 0.0;
  double dt_ = 1.0;
  std::size_t steps_ = 0;
};

/// Values on a grid, optionally with standard errors.
struct Series {
  TimeGrid grid;
  std::vector<double> values;
  std::vector<double> stderrs;

  Series() = default;
  Series(TimeGrid g, std::vector<double> v, std::vector<double> se = {}) : grid(g), values(std::move(v)), stderrs(std::move(se)) {
    if (values.size() != grid.size()) throw ValidationError("series length does not match its grid");
    if (!stderrs.empty() && stderrs.size() != values.size()) throw ValidationError("standard-error column has the wrong length");
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  bool has_errors() const { return !stderrs.empty(); }

  /// Linear interpolation; t is clamped to [0, T].
  double at(double t) const {
    if (t <= 0) return values.front();
    const double x = t / grid.dt();
    const double nearest = std::round(x);
    if (std::abs(x - nearest) < 1e-9) {
      const auto k = static_cast<std::size_t>(nearest);
      return k >= grid.steps() ? values.back() : values[k];
    }
    std::size_t i = static_cast<std::size_t>(x);
    if (i >= grid.steps()) return values.back();
    const double w = x - static_cast<double>(i);
    return (1 - w) * values[i] + w * values[i + 1];
  }
};

inline Series tabulate(const std::function<double(double)>& f, const TimeGrid& g) {
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) v[i] = f(g.t(i));
  return Series(g, std::move(v));
}

/// Sup-norm difference of two series on the same grid.
inline double sup_distance(const Series& a, const Series& b) {
  if (!(a.grid == b.grid)) throw ValidationError("series live on different grids");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fourth-order finite-difference derivative (order 1 or 2) on a uniform grid.
inline std::vector<double> fd_derivative(std::span<const double> f, double h, int order) {
  const std::size_t n = f.size();
  if (n < 6) throw ValidationError("finite-difference derivative needs at least 6 nodes");
  std::vector<double> d(n);
  if (order == 1) {
    auto fwd0 = [&](auto g) { return (-25 * g(0) + 48 * g(1) - 36 * g(2) + 16 * g(3) - 3 * g(4)) / (12 * h); };
    auto fwd1 = [&](auto g) { return (-3 * g(0) - 10 * g(1) + 18 * g(2) - 6 * g(3) + g(4)) / (12 * h); };
    auto head = [&](std::size_t k) { return f[k]; };
    auto tail = [&](std::size_t k) { return f[n - 1 - k]; };
    d[0] = fwd0(head);
    d[1] = fwd1(head);
    d[n - 1] = -fwd0(tail);
    d[n - 2] = -fwd1(tail);
    for (std::size_t i = 2; i + 2 < n; ++i) d[i] = (-f[i + 2] + 8 * f[i + 1] - 8 * f[i - 1] + f[i - 2]) / (12 * h);
  } else if (order == 2) {
    const double h2 = 12 * h * h;
    auto fwd0 = [&](auto g) { return (45 * g(0) - 154 * g(1) + 214 * g(2) - 156 * g(3) + 61 * g(4) - 10 * g(5)) / h2; };
    auto fwd1 = [&](auto g) { return (10 * g(0) - 15 * g(1) - 4 * g(2) + 14 * g(3) - 6 * g(4) + g(5)) / h2; };
    auto head = [&](std::size_t k) { return f[k]; };
    auto tail = [&](std::size_t k) { return f[n - 1 - k]; };
    d[0] = fwd0(head);
    d[1] = fwd1(head);
    d[n - 1] = fwd0(tail);
    d[n - 2] = fwd1(tail);
    for (std::size_t i = 2; i + 2 < n; ++i) d[i] = (-f[i + 2] + 16 * f[i + 1] - 30 * f[i] + 16 * f[i - 1] - f[i - 2]) / h2;
  } else {
    throw ValidationError("derivative order must be 1 or 2");
  }
  return d;
}

inline Series derivative(const Series& s, int order = 1) { return Series(s.grid, fd_derivative(s.values, s.grid.dt(), order)); }

/// u' = omega u + int_0^t K(t-s) u(s) ds + f(t), u(0) = u0, by the implicit trapezoidal
/// rule with trapezoidal convolution; each step is a scalar linear equation. `f` may be empty.
inline std::vector<double> solve_forced(double omega, std::span<const double> K, double dt, double u0,
                                        std::span<const double> f = {}) {
  const std::size_t n = K.size();
  if (!f.empty() && f.size() != n) throw ValidationError("forcing length does not match the kernel grid");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(K[i])) throw NumericError("non-finite kernel value at node " + std::to_string(i));
  std::vector<double> u(n, 0.0);
  if (n == 0) return u;
  u[0] = u0;
  auto force = [&](std::size_t i) { return f.empty() ? 0.0 : f[i]; };
  double F_prev = omega * u0 + force(0);
  const double pivot = 1.0 - 0.5 * dt * (omega + 0.5 * dt * K[0]);
  if (std::abs(pivot) < 1e-14) throw NumericError("singular time step in Volterra solve");
  for (std::size_t i = 1; i < n; ++i) {
    double R = 0.5 * K[i] * u[0];
    for (std::size_t j = 1; j < i; ++j) R += K[i - j] * u[j];
    R *= dt;
    const double rest = R + force(i);
    u[i] = (u[i - 1] + 0.5 * dt * (F_prev + rest)) / pivot;
    F_prev = omega * u[i] + rest + 0.5 * dt * K[0] * u[i];
  }
  return u;
}

/// Normalized correlation C' = omega C + int_0^t K(t-s) C(s) ds with C(0) = 1.
inline Series solve_correlation(double omega, const Series& K) {
  return Series(K.grid, solve_forced(omega, K.values, K.grid.dt(), 1.0));
}

inline Series solve_correlation(double omega, const std::function<double(double)>& K, const TimeGrid& grid) {
  return solve_correlation(omega, tabulate(K, grid));
}

/// Kernel from a tabulated normalized correlation. Differentiating the correlation
/// equation gives the second-kind form
///   C(0) K(t) = C''(t) - omega C'(t) - int_0^t K(s) C'(t-s) ds,
/// discretized with the trapezoidal rule; K(0) = C''(0) - omega C'(0).
inline Series extract_kernel(const Series& C, double omega) {
  const std::size_t n = C.size();
  if (n < 6) throw ValidationError("extract_kernel needs at least 6 nodes");
  if (std::abs(C[0] - 1.0) > 1e-9) throw ValidationError("extract_kernel expects a normalized correlation (C(0) = 1)");
  const double dt = C.grid.dt();
  auto d1 = fd_derivative(C.values, dt, 1);
  auto d2 = fd_derivative(C.values, dt, 2);
  std::vector<double> K(n);
  K[0] = (d2[0] - omega * d1[0]) / C[0];
  const double pivot = C[0] + 0.5 * dt * d1[0];
  if (std::abs(pivot) < 1e-12) throw NumericError("ill-conditioned deconvolution step (pivot " + std::to_string(pivot) + ")");
  for (std::size_t i = 1; i < n; ++i) {
    double conv = 0.5 * K[0] * d1[i];
    for (std::size_t j = 1; j < i; ++j) conv += K[j] * d1[i - j];
    K[i] = (d2[i] - omega * d1[i] - dt * conv) / pivot;
    if (!std::isfinite(K[i])) throw NumericError("deconvolution diverged at node " + std::to_string(i));
  }
  return Series(C.grid, std::move(K));
}

/// Memory kernel given explicitly on the grid.
struct GeneralKernel {
  Series K;
};

/// Kernel expanded in the fluctuation modes, K = sum_ij sqrt(l_i l_j) v_ij e_i(0) h_j(t).
struct GeneralVMatrix {
  Eigen::MatrixXd v;
};

/// Second fluctuation-dissipation form K = -sum_j l_j h_j(0) h_j(t) / <u^2>.
struct Hamiltonian {
  double gram = 1.0;
};

using FluctuationSpec = std::variant<GeneralKernel, GeneralVMatrix, Hamiltonian>;

/// Fluctuation modes h_k(t) = e_k'(t) - omega e_k(t) - int_0^t K(t-s) e_k(s) ds.
/// For implicit kernels (K linear in the current h) each step solves the rank-one system
/// in {h_k(t_i)} exactly.
inline std::vector<Series> solve_fluctuation_modes(const std::vector<Series>& e, const std::vector<double>& lambda, double omega,
                                                   const FluctuationSpec& spec) {
  const std::size_t K = e.size();
  if (lambda.size() != K) throw ValidationError("eigenvalue count does not match mode count");
  std::vector<Series> h;
  if (K == 0) return h;
  const TimeGrid grid = e[0].grid;
  for (const auto& ek : e)
    if (!(ek.grid == grid)) throw ValidationError("modes live on different grids");
  for (double l : lambda)
    if (!(l > 0)) throw ValidationError("fluctuation modes need positive eigenvalues");
  const std::size_t n = grid.size();
  const double dt = grid.dt();

  std::vector<std::vector<double>> de(K), base(K);
  for (std::size_t k = 0; k < K; ++k) {
    de[k] = fd_derivative(e[k].values, dt, 1);
    base[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) base[k][i] = de[k][i] - omega * e[k][i];
  }

  if (const auto* g = std::get_if<GeneralKernel>(&spec)) {
    if (!(g->K.grid == grid)) throw ValidationError("kernel and modes live on different grids");
    const auto& Kv = g->K.values;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> hk(n);
      for (std::size_t i = 0; i < n; ++i) {
        double conv = 0;
        if (i > 0) {
          conv = 0.5 * (Kv[i] * e[k][0] + Kv[0] * e[k][i]);
          for (std::size_t l = 1; l < i; ++l) conv += Kv[i - l] * e[k][l];
        }
        hk[i] = base[k][i] - dt * conv;
      }
      h.emplace_back(grid, std::move(hk));
    }
    return h;
  }

  // Implicit forms: Khat(t_i) = sum_j c_j h_j(t_i).
  std::vector<double> c(K, 0.0);
  if (const auto* gv = std::get_if<GeneralVMatrix>(&spec)) {
    if (gv->v.rows() != static_cast<Eigen::Index>(K) || gv->v.cols() != static_cast<Eigen::Index>(K))
      throw ValidationError("v-matrix has the wrong shape");
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t i = 0; i < K; ++i) c[j] += std::sqrt(lambda[i] * lambda[j]) * gv->v(i, j) * e[i][0];
  } else {
    const double gram = std::get<Hamiltonian>(spec).gram;
    if (!(gram > 0)) throw ValidationError("gram must be positive");
    for (std::size_t j = 0; j < K; ++j) c[j] = -lambda[j] * base[j][0] / gram;
  }

  std::vector<std::vector<double>> hv(K, std::vector<double>(n));
  std::vector<double> Khat(n, 0.0), rhs(K);
  for (std::size_t k = 0; k < K; ++k) hv[k][0] = base[k][0];
  for (std::size_t k = 0; k < K; ++k) Khat[0] += c[k] * hv[k][0];
  double ce0 = 0;
  for (std::size_t k = 0; k < K; ++k) ce0 += c[k] * e[k][0];
  const double denom = 1.0 + 0.5 * dt * ce0;
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(denom) < 1e-12) throw NumericError("singular fluctuation-mode step at node " + std::to_string(i));
    double crhs = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double conv = 0.5 * Khat[0] * e[k][i];
      for (std::size_t l = 1; l < i; ++l) conv += Khat[i - l] * e[k][l];
      rhs[k] = base[k][i] - dt * conv;
      crhs += c[k] * rhs[k];
    }
    const double Ki = crhs / denom;
    for (std::size_t k = 0; k < K; ++k) hv[k][i] = rhs[k] - 0.5 * dt * e[k][0] * Ki;
    Khat[i] = Ki;
  }
  for (auto& v : hv) h.emplace_back(grid, std::move(v));
  return h;
}

/// -sum_j l_j h_j(0) h_j(t) / gram.
inline Series fdt_kernel(const std::vector<Series>& h, const std::vector<double>& lambda, double gram) {
  if (h.empty()) throw ValidationError("no fluctuation modes");
  if (h.size() != lambda.size()) throw ValidationError("eigenvalue count does not match mode count");
  std::vector<double> K(h[0].size(), 0.0);
  for (std::size_t j = 0; j < h.size(); ++j)
    for (std::size_t i = 0; i < K.size(); ++i) K[i] -= lambda[j] * h[j][0] * h[j][i] / gram;
  return Series(h[0].grid, std::move(K));
}

}  // namespace mzgle
