#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "measure.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "volterra.hpp"

namespace mzgle {

inline std::vector<double> trapezoid_weights(const TimeGrid& g) {
  std::vector<double> w(g.size(), g.dt());
  w.front() *= 0.5;
  if (w.size() > 1) w.back() *= 0.5;
  if (w.size() == 1) w[0] = 0.0;
  return w;
}

/// Truncated Karhunen-Loeve basis of a stationary process on [0, T].
struct KLBasis {
  TimeGrid grid;
  std::vector<double> lambda;  ///< descending
  std::vector<Series> modes;   ///< orthonormal under the trapezoidal inner product
  double mean = 0.0;
  Series covariance;           ///< the C(t) the basis was built from

  std::size_t rank() const { return lambda.size(); }

  /// First `k` modes.
  KLBasis truncated(std::size_t k) const {
    KLBasis b = *this;
    k = std::min(k, rank());
    b.lambda.resize(k);
    b.modes.resize(k);
    return b;
  }
};

struct KLOptions {
  double energy_floor = 1e-8;       ///< drop modes with lambda_k / lambda_1 below this
  double negative_tolerance = 1e-10;  ///< eigenvalues below -tol * lambda_1 reject the input
};

/// Nystrom discretization of int_0^T C(|t-s|) e(s) ds = lambda e(t) with trapezoid
/// weights W, solved as the symmetric problem W^1/2 C W^1/2.
inline KLBasis kl_decompose(const Series& C, std::size_t kmax, const KLOptions& opt = {}, double mean = 0.0) {
  const std::size_t n = C.size();
  if (n < 2) throw ValidationError("KL decomposition needs at least two grid nodes");
  if (kmax == 0) throw ValidationError("Kmax must be positive");
  if (!(C[0] > 0)) throw ValidationError("invalid covariance: C(0) must be positive");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(C[i]) || std::abs(C[i]) > C[0] * (1 + 1e-6))
      throw ValidationError("invalid covariance: |C(t)| exceeds C(0) at node " + std::to_string(i));
  const auto w = trapezoid_weights(C.grid);
  Eigen::VectorXd sw(n);
  for (std::size_t i = 0; i < n; ++i) sw(static_cast<Eigen::Index>(i)) = std::sqrt(w[i]);
  Eigen::MatrixXd A(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          sw(static_cast<Eigen::Index>(i)) * C[i > j ? i - j : j - i] * sw(static_cast<Eigen::Index>(j));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw NumericError("KL eigensolver failed");
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  const double top = ev(ev.size() - 1);
  if (!(top > 0)) throw ValidationError("invalid covariance: no positive eigenvalue");
  if (ev(0) < -opt.negative_tolerance * top)
    throw ValidationError("invalid covariance: eigenvalue " + std::to_string(ev(0)) + " is negative beyond tolerance");

  KLBasis b;
  b.grid = C.grid;
  b.mean = mean;
  b.covariance = C;
  for (Eigen::Index c = ev.size() - 1; c >= 0 && b.lambda.size() < kmax; --c) {
    const double l = ev(c);
    if (!(l > 0) || l < opt.energy_floor * top) break;
    std::vector<double> e(n);
    // Fix the sign so the first node of larger magnitude is positive.
    double ref = 0;
    for (std::size_t i = 0; i < n && std::abs(ref) < 1e-8; ++i) ref = es.eigenvectors()(static_cast<Eigen::Index>(i), c);
    const double s = ref < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = sw(static_cast<Eigen::Index>(i));
      e[i] = wi > 0 ? s * es.eigenvectors()(static_cast<Eigen::Index>(i), c) / wi : 0.0;
    }
    b.lambda.push_back(l);
    b.modes.emplace_back(C.grid, std::move(e));
  }
  return b;
}

/// sum_k lambda_k e_k(t_i) e_k(t_j).
inline Eigen::MatrixXd mercer_matrix(const KLBasis& b) {
  const auto n = static_cast<Eigen::Index>(b.grid.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < b.rank(); ++k) {
    Eigen::Map<const Eigen::VectorXd> e(b.modes[k].values.data(), n);
    M.noalias() += b.lambda[k] * e * e.transpose();
  }
  return M;
}

/// One-time target distribution with a quantile function.
class MarginalSpec {
 public:
  static MarginalSpec gaussian(double mean, double variance) {
    if (!(variance > 0)) throw ValidationError("Gaussian marginal needs a positive variance");
    MarginalSpec m;
    m.mean_ = mean;
    m.var_ = variance;
    return m;
  }

  /// Distribution of X + shift with X drawn from `d`.
  static MarginalSpec from_density(const Density1D& d, double shift = 0.0, std::size_t table = 20001) {
    MarginalSpec m;
    m.density_ = d;
    const double mu = d.moment(1);
    m.mean_ = mu + shift;
    m.var_ = d.moment(2) - mu * mu;
    const double a = d.support_half_width();
    m.x_.resize(table);
    m.cdf_.resize(table);
    std::vector<double> logp(table);
    double mx = -INFINITY;
    for (std::size_t i = 0; i < table; ++i) {
      m.x_[i] = -a + 2 * a * static_cast<double>(i) / static_cast<double>(table - 1) + shift;
      logp[i] = d.log_density(m.x_[i] - shift);
      mx = std::max(mx, logp[i]);
    }
    double acc = 0;
    m.cdf_[0] = 0;
    for (std::size_t i = 1; i < table; ++i) {
      acc += 0.5 * (std::exp(logp[i - 1] - mx) + std::exp(logp[i] - mx)) * (m.x_[i] - m.x_[i - 1]);
      m.cdf_[i] = acc;
    }
    for (auto& c : m.cdf_) c /= acc;
    return m;
  }

  bool is_gaussian() const { return !density_.has_value(); }
  double mean() const { return mean_; }
  double variance() const { return var_; }
  double stddev() const { return std::sqrt(var_); }
  const std::optional<Density1D>& density() const { return density_; }

  /// <(X - mean)^m>.
  double central_moment(unsigned m) const {
    if (is_gaussian()) {
      if (m & 1u) return 0.0;
      double v = 1;
      for (unsigned k = m; k > 1; k -= 2) v *= k - 1;
      return v * std::pow(var_, m / 2.0);
    }
    const double mu = density_->moment(1);
    double s = 0, binom = 1;
    for (unsigned k = 0; k <= m; ++k) {
      s += binom * density_->moment(k) * std::pow(-mu, static_cast<double>(m - k));
      binom = binom * (m - k) / (k + 1);
    }
    return s;
  }

  double quantile(double p) const {
    if (!(p > 0 && p < 1)) throw ValidationError("quantile probability must lie in (0, 1)");
    if (is_gaussian()) return boost::math::quantile(boost::math::normal(mean_, std::sqrt(var_)), p);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), p);
    std::size_t j = static_cast<std::size_t>(it - cdf_.begin());
    if (j == 0) return x_.front();
    if (j >= cdf_.size()) return x_.back();
    const double c0 = cdf_[j - 1], c1 = cdf_[j];
    const double w = c1 > c0 ? (p - c0) / (c1 - c0) : 0.5;
    return x_[j - 1] + w * (x_[j] - x_[j - 1]);
  }

  std::string describe() const {
    if (is_gaussian()) return "gaussian(mean=" + std::to_string(mean_) + ", variance=" + std::to_string(var_) + ")";
    return "density(" + density_->describe() + ")";
  }

 private:
  double mean_ = 0, var_ = 1;
  std::optional<Density1D> density_;
  std::vector<double> x_, cdf_;
};

struct SamplerOptions {
  int iterations = 10;
  double quantile_tolerance = 0.01;  ///< pooled quantile error, in target standard deviations
  double acf_tolerance = 0.05;       ///< sup error of the stationary ACF relative to C(0)
  std::size_t monitor_samples = 5000;
};

/// KL amplitudes xi (samples x modes) and the basis that turns them into paths.
struct SampleEnsemble {
  KLBasis basis;
  std::shared_ptr<const Eigen::MatrixXd> xi;
  std::uint64_t seed = 0;
  int iterations = 0;       ///< re-projection updates performed
  double quantile_error = 0;
  double acf_error = 0;
  bool converged = false;

  std::size_t size() const { return xi ? static_cast<std::size_t>(xi->rows()) : 0; }

  /// u_i(t) = mean + sum_{k < rank} sqrt(lambda_k) xi_ik e_k(t).
  void path(std::size_t i, std::span<double> out, std::size_t rank = SIZE_MAX) const {
    rank = std::min(rank, basis.rank());
    std::fill(out.begin(), out.end(), basis.mean);
    for (std::size_t k = 0; k < rank; ++k) {
      const double a = std::sqrt(basis.lambda[k]) * (*xi)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      const auto& e = basis.modes[k].values;
      for (std::size_t t = 0; t < out.size(); ++t) out[t] += a * e[t];
    }
  }
};

/// Stationary m-th power ACF: per path, x = u^m and a(tau) = mean over origins s of
/// x(s) x(s + tau); then the ensemble mean. The standard errors are those of the
/// ensemble mean (the delete-one jackknife of a mean reduces to this).
template <typename PathFn>
Series stationary_acf(std::size_t count, const TimeGrid& g, unsigned m, PathFn&& path, std::size_t block = 256) {
  if (m < 1) throw ValidationError("ACF power must be at least 1");
  if (count < 2) throw ValidationError("ACF estimate needs at least two paths");
  const std::size_t n = g.size();
  const std::size_t nblocks = (count + block - 1) / block;
  std::vector<std::vector<double>> s1(nblocks, std::vector<double>(n, 0.0)), s2(nblocks, std::vector<double>(n, 0.0));
  parallel_blocks(count, block, [&](std::size_t b0, std::size_t b1, std::size_t bi) {
    std::vector<double> u(n), x(n), a(n);
    for (std::size_t i = b0; i < b1; ++i) {
      path(i, std::span<double>(u));
      for (std::size_t t = 0; t < n; ++t) x[t] = std::pow(u[t], static_cast<int>(m));
      for (std::size_t tau = 0; tau < n; ++tau) {
        double s = 0;
        for (std::size_t o = 0; o + tau < n; ++o) s += x[o] * x[o + tau];
        a[tau] = s / static_cast<double>(n - tau);
      }
      for (std::size_t t = 0; t < n; ++t) {
        s1[bi][t] += a[t];
        s2[bi][t] += a[t] * a[t];
      }
    }
  });
  std::vector<double> mean(n, 0.0), se(n, 0.0);
  const double N = static_cast<double>(count);
  for (std::size_t t = 0; t < n; ++t) {
    double a = 0, q = 0;
    for (std::size_t b = 0; b < nblocks; ++b) {
      a += s1[b][t];
      q += s2[b][t];
    }
    mean[t] = a / N;
    const double var = std::max(0.0, (q - a * a / N) / (N - 1));
    se[t] = std::sqrt(var / N);
  }
  return Series(g, std::move(mean), std::move(se));
}

namespace detail {

// Symmetric whitening: centered columns with identity sample covariance.
inline void whiten(Eigen::MatrixXd& X) {
  const Eigen::Index N = X.rows();
  Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  Eigen::MatrixXd S = (X.transpose() * X) / static_cast<double>(N - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw NumericError("KL amplitudes became linearly dependent during sampling");
  Eigen::MatrixXd W = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  X = X * W;
}

}  // namespace detail

/// Marginal-matching sampler. Each pass builds the paths one block of time nodes at a
/// time, rank-remaps every time column onto the target quantiles and re-projects the
/// remapped paths onto the modes; the new amplitudes are whitened. The loop stops once
/// the pooled quantile error and the ACF error are within tolerance, or after
/// `iterations` updates. Paths are always the KL paths of the returned amplitudes.
inline SampleEnsemble sample_ensemble(const KLBasis& basis, const MarginalSpec& marginal, std::size_t N, std::uint64_t seed,
                                      const SamplerOptions& opt = {}) {
  const std::size_t K = basis.rank();
  if (K == 0) throw ValidationError("cannot sample a KL basis without modes");
  if (N < 10 * K) throw ValidationError("sample count must be at least 10 x the number of modes");
  if (opt.iterations < 0) throw ValidationError("iteration count must be non-negative");
  const std::size_t n = basis.grid.size();
  const auto Ni = static_cast<Eigen::Index>(N), Ki = static_cast<Eigen::Index>(K);

  auto X = std::make_shared<Eigen::MatrixXd>(Ni, Ki);
  parallel_blocks(N, 1024, [&](std::size_t b0, std::size_t b1, std::size_t) {
    for (std::size_t i = b0; i < b1; ++i) {
      auto rng = stream_rng(seed, i);
      NormalSource normal;
      for (std::size_t k = 0; k < K; ++k) (*X)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = normal(rng);
    }
  });
  detail::whiten(*X);

  // B(k, t) = sqrt(lambda_k) e_k(t); P(k, t) = w_t e_k(t) / sqrt(lambda_k).
  const auto w = trapezoid_weights(basis.grid);
  Eigen::MatrixXd B(Ki, static_cast<Eigen::Index>(n)), P(Ki, static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t t = 0; t < n; ++t) {
      B(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::sqrt(basis.lambda[k]) * basis.modes[k][t];
      P(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = w[t] * basis.modes[k][t] / std::sqrt(basis.lambda[k]);
    }

  std::vector<double> target(N);
  for (std::size_t r = 0; r < N; ++r) target[r] = marginal.quantile((static_cast<double>(r) + 0.5) / static_cast<double>(N));
  static constexpr double probs[] = {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};
  constexpr std::size_t np = std::size(probs);
  double target_q[np];
  for (std::size_t j = 0; j < np; ++j) target_q[j] = marginal.quantile(probs[j]);

  SampleEnsemble ens;
  ens.basis = basis;
  ens.seed = seed;
  const std::size_t chunk = 32;
  const std::size_t monitor = std::min(N, opt.monitor_samples);
  for (int pass = 0;; ++pass) {
    Eigen::MatrixXd Xnew = Eigen::MatrixXd::Zero(Ni, Ki);
    std::vector<double> pooled(np, 0.0);
    for (std::size_t t0 = 0; t0 < n; t0 += chunk) {
      const std::size_t wdt = std::min(chunk, n - t0);
      const auto Wi = static_cast<Eigen::Index>(wdt);
      Eigen::MatrixXd U = (*X) * B.middleCols(static_cast<Eigen::Index>(t0), Wi);
      U.array() += basis.mean;
      std::vector<std::array<double, np>> colq(wdt);
      parallel_blocks(wdt, 1, [&](std::size_t c0, std::size_t c1, std::size_t) {
        std::vector<std::pair<double, std::uint32_t>> order(N);
        for (std::size_t c = c0; c < c1; ++c) {
          const auto ci = static_cast<Eigen::Index>(c);
          for (std::size_t i = 0; i < N; ++i) order[i] = {U(static_cast<Eigen::Index>(i), ci), static_cast<std::uint32_t>(i)};
          std::sort(order.begin(), order.end());
          for (std::size_t j = 0; j < np; ++j)
            colq[c][j] = order[std::min(N - 1, static_cast<std::size_t>(probs[j] * static_cast<double>(N)))].first;
          for (std::size_t r = 0; r < N; ++r) U(static_cast<Eigen::Index>(order[r].second), ci) = target[r] - basis.mean;
        }
      });
      for (std::size_t c = 0; c < wdt; ++c)
        for (std::size_t j = 0; j < np; ++j) pooled[j] += colq[c][j];
      Xnew.noalias() += U * P.middleCols(static_cast<Eigen::Index>(t0), Wi).transpose();
    }
    double qerr = 0;
    for (std::size_t j = 0; j < np; ++j)
      qerr = std::max(qerr, std::abs(pooled[j] / static_cast<double>(n) - target_q[j]) / marginal.stddev());

    const Eigen::MatrixXd& Xc = *X;
    auto acf = stationary_acf(monitor, basis.grid, 1, [&](std::size_t i, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t k = 0; k < K; ++k) {
        const double a = Xc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        for (std::size_t t = 0; t < n; ++t) out[t] += a * B(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t));
      }
    });
    double aerr = 0;
    for (std::size_t t = 0; t < n; ++t) aerr = std::max(aerr, std::abs(acf[t] - basis.covariance[t]));
    aerr /= basis.covariance[0];

    ens.quantile_error = qerr;
    ens.acf_error = aerr;
    ens.converged = qerr <= opt.quantile_tolerance && aerr <= opt.acf_tolerance;
    if (ens.converged || pass >= opt.iterations) break;
    detail::whiten(Xnew);
    *X = std::move(Xnew);
    ens.iterations = pass + 1;
  }
  ens.xi = std::move(X);
  return ens;
}

/// Ensemble ACF of u^m (paths reconstructed from the KL amplitudes).
inline Series higher_order_acf(const SampleEnsemble& ens, unsigned m, std::size_t rank = SIZE_MAX) {
  return stationary_acf(ens.size(), ens.basis.grid, m,
                        [&](std::size_t i, std::span<double> out) { ens.path(i, out, rank); });
}

/// Per-sample fluctuation paths f_i(t) = fbar + sum_k sqrt(lambda_k) xi_ik h_k(t).
struct FluctuationProcess {
  TimeGrid grid;
  std::shared_ptr<const Eigen::MatrixXd> xi;
  Eigen::MatrixXd H;  ///< H(k, t) = sqrt(lambda_k) h_k(t)
  double fbar = 0.0;

  std::size_t size() const { return xi ? static_cast<std::size_t>(xi->rows()) : 0; }

  void path(std::size_t i, std::span<double> out) const {
    std::fill(out.begin(), out.end(), fbar);
    for (Eigen::Index k = 0; k < H.rows(); ++k) {
      const double a = (*xi)(static_cast<Eigen::Index>(i), k);
      for (std::size_t t = 0; t < out.size(); ++t) out[t] += a * H(k, static_cast<Eigen::Index>(t));
    }
  }
};

inline FluctuationProcess build_fluctuation_process(const KLBasis& basis, const std::vector<Series>& h, const SampleEnsemble& ens,
                                                    double fbar = 0.0) {
  if (h.size() != basis.rank() || ens.basis.rank() != basis.rank())
    throw ValidationError("fluctuation modes, basis and ensemble disagree on the mode count");
  FluctuationProcess f;
  f.grid = basis.grid;
  f.xi = ens.xi;
  f.fbar = fbar;
  f.H.resize(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(basis.grid.size()));
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (!(h[k].grid == basis.grid)) throw ValidationError("fluctuation mode lives on a different grid");
    for (std::size_t t = 0; t < h[k].size(); ++t)
      f.H(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::sqrt(basis.lambda[k]) * h[k][t];
  }
  return f;
}

/// Sample paths stored row-wise.
struct PathEnsemble {
  TimeGrid grid;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> paths;

  std::size_t size() const { return static_cast<std::size_t>(paths.rows()); }
  void path(std::size_t i, std::span<double> out) const {
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = paths(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
  }
};

inline Series higher_order_acf(const PathEnsemble& ens, unsigned m) {
  return stationary_acf(ens.size(), ens.grid, m, [&](std::size_t i, std::span<double> out) { ens.path(i, out); });
}

/// Solves u' = omega u + int K u + f_i per sample from u_i(0) = u0[i].
inline PathEnsemble gle_sample_paths(double omega, const Series& K, const FluctuationProcess& f, std::span<const double> u0) {
  if (!(f.grid == K.grid)) throw ValidationError("kernel and forcing live on different grids");
  if (u0.size() != f.size()) throw ValidationError("initial-value count does not match the forcing ensemble");
  PathEnsemble out;
  out.grid = K.grid;
  const std::size_t n = K.size();
  out.paths.resize(static_cast<Eigen::Index>(u0.size()), static_cast<Eigen::Index>(n));
  parallel_blocks(u0.size(), 256, [&](std::size_t b0, std::size_t b1, std::size_t) {
    std::vector<double> fi(n);
    for (std::size_t i = b0; i < b1; ++i) {
      f.path(i, fi);
      auto u = solve_forced(omega, K.values, K.grid.dt(), u0[i], fi);
      for (std::size_t t = 0; t < n; ++t) out.paths(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = u[t];
    }
  });
  return out;
}

/// v_ij = <xi_i, L xi_j> / <u^2> from the dispersion relation:
/// (lambda_i lambda_j)^-1/2 / gram * int int C'(t - s) e_i(s) e_j(t) ds dt.
inline Eigen::MatrixXd v_matrix(const KLBasis& b, double gram) {
  const std::size_t n = b.grid.size(), K = b.rank();
  auto dC = fd_derivative(b.covariance.values, b.grid.dt(), 1);
  const auto w = trapezoid_weights(b.grid);
  Eigen::MatrixXd D(n, n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t s = 0; s < n; ++s)
      D(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = w[t] * w[s] * (t > s ? dC[t - s] : t < s ? -dC[s - t] : 0.0);
  Eigen::MatrixXd E(n, K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t t = 0; t < n; ++t) E(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = b.modes[k][t];
  Eigen::MatrixXd V = E.transpose() * D.transpose() * E;  // V(i, j) = sum_s sum_t e_i(s) D(t, s) e_j(t)
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j)
      V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) /= std::sqrt(b.lambda[i] * b.lambda[j]) * gram;
  return V;
}

}  // namespace mzgle
