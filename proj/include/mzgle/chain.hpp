#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "liouville.hpp"
#include "measure.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "volterra.hpp"

namespace mzgle {

/// Periodic chain H = sum p^2/(2m) + sum (alpha1 r^2/2 + beta1 r^4/4) at inverse temperature gamma.
struct ChainParams {
  std::size_t N = 100;
  double mass = 1.0;
  double alpha1 = 1.0;
  double beta1 = 0.0;
  double gamma = 1.0;

  void validate() const {
    if (N < 3) throw ValidationError("chain needs N >= 3");
    if (!(mass > 0)) throw ValidationError("chain needs mass > 0");
    if (!(alpha1 > 0)) throw ValidationError("chain needs alpha1 > 0");
    if (!(beta1 >= 0)) throw ValidationError("chain needs beta1 >= 0");
    if (!(gamma > 0)) throw ValidationError("chain needs gamma > 0");
  }

  double force(double r) const { return alpha1 * r + beta1 * r * r * r; }
  double potential(double r) const { return 0.5 * alpha1 * r * r + 0.25 * beta1 * r * r * r * r; }
};

struct ChainState {
  std::vector<double> r, p;
};

inline double energy(const ChainState& s, const ChainParams& c) {
  CompensatedSum e;
  for (std::size_t j = 0; j < s.r.size(); ++j) {
    e.add(0.5 * s.p[j] * s.p[j] / c.mass);
    e.add(c.potential(s.r[j]));
  }
  return e.value();
}

/// Equilibrium sampler: p Gaussian(0, m/gamma); r by rejection from a Gaussian envelope
/// whose width maximizes the acceptance rate.
class EquilibriumSampler {
 public:
  explicit EquilibriumSampler(const ChainParams& c) : c_(c) {
    c.validate();
    const double ga = c.gamma * c.alpha1, gb = c.gamma * c.beta1;
    if (gb == 0) {
      sigma_ = 1 / std::sqrt(ga);
      log_m_ = 0;
      acceptance_ = 1;
      return;
    }
    const double Z = Density1D::quartic_gibbs(c.gamma, c.alpha1, c.beta1).normalization();
    // log of the acceptance rate for envelope width sigma
    auto log_acc = [&](double ls) {
      const double s = std::exp(ls);
      const double a = std::max(0.0, 0.5 * (1 / (s * s) - ga));
      const double hmax = a * a / gb;
      return std::log(Z) - hmax - std::log(std::sqrt(2 * M_PI) * s);
    };
    double lo = std::log(1e-3 / std::sqrt(ga + std::sqrt(gb))), hi = std::log(1 / std::sqrt(ga));
    for (int it = 0; it < 200; ++it) {  // golden section
      const double m1 = hi - 0.6180339887498949 * (hi - lo), m2 = lo + 0.6180339887498949 * (hi - lo);
      if (log_acc(m1) < log_acc(m2)) lo = m1; else hi = m2;
    }
    const double ls = 0.5 * (lo + hi);
    sigma_ = std::exp(ls);
    const double a = std::max(0.0, 0.5 * (1 / (sigma_ * sigma_) - ga));
    log_m_ = a * a / gb;
    acceptance_ = std::exp(log_acc(ls));
    if (acceptance_ < 0.01)
      throw NumericError("rejection envelope acceptance " + std::to_string(acceptance_) + " is below 1%; retune the envelope");
  }

  double expected_acceptance() const { return acceptance_; }
  double envelope_sigma() const { return sigma_; }

  template <typename Rng>
  double draw_r(Rng& rng, NormalSource& normal, std::uint64_t* tries = nullptr) const {
    const double ga = c_.gamma * c_.alpha1, gb = c_.gamma * c_.beta1;
    for (;;) {
      const double x = sigma_ * normal(rng);
      if (tries) ++*tries;
      if (gb == 0) return x;
      const double s = x * x;
      const double logratio = -0.5 * ga * s - 0.25 * gb * s * s + 0.5 * s / (sigma_ * sigma_) - log_m_;
      if (std::log(NormalSource::uniform(rng)) < logratio) return x;
    }
  }

  template <typename Rng>
  ChainState sample(Rng& rng, std::uint64_t* tries = nullptr) const {
    NormalSource normal;
    ChainState s;
    s.r.resize(c_.N);
    s.p.resize(c_.N);
    const double sp = std::sqrt(c_.mass / c_.gamma);
    for (std::size_t j = 0; j < c_.N; ++j) s.r[j] = draw_r(rng, normal, tries);
    for (std::size_t j = 0; j < c_.N; ++j) s.p[j] = sp * normal(rng);
    return s;
  }

 private:
  ChainParams c_;
  double sigma_ = 1, log_m_ = 0, acceptance_ = 1;
};

template <typename Rng>
ChainState sample_equilibrium(const ChainParams& c, Rng& rng) {
  return EquilibriumSampler(c).sample(rng);
}

namespace detail {
inline void kick(ChainState& s, const ChainParams& c, double h) {
  const std::size_t N = s.r.size();
  double first = c.force(s.r[0]), cur = first;
  for (std::size_t j = 0; j < N; ++j) {
    const double next = j + 1 < N ? c.force(s.r[j + 1]) : first;
    s.p[j] += h * (next - cur);
    cur = next;
  }
}
inline void drift(ChainState& s, const ChainParams& c, double h) {
  const std::size_t N = s.r.size();
  const double hm = h / c.mass;
  double prev = s.p[N - 1];
  for (std::size_t j = 0; j < N; ++j) {
    const double pj = s.p[j];
    s.r[j] += hm * (pj - prev);
    prev = pj;
  }
}
}  // namespace detail

/// Velocity Verlet in (r, p): r_j' = (p_j - p_{j-1})/m, p_j' = V'(r_{j+1}) - V'(r_j).
inline void step_verlet(ChainState& s, const ChainParams& c, double dt) {
  detail::kick(s, c, 0.5 * dt);
  detail::drift(s, c, dt);
  detail::kick(s, c, 0.5 * dt);
}

enum class Field { r, p };

inline Field parse_field(const std::string& s) {
  if (s == "r") return Field::r;
  if (s == "p") return Field::p;
  throw ValidationError("unknown field '" + s + "' (expected r or p)");
}

struct ChainObservable {
  Field field = Field::p;
  unsigned power = 1;
  std::size_t site = 0;
  bool site_average = true;  ///< average over all sites (translation invariance)
};

struct MCOptions {
  double dt = 1e-3;
  std::size_t block = 64;
};

/// <obs(0) obs(t)> over independent equilibrium trajectories for several powers of one
/// field in a single sweep, output on `grid` (its spacing must be a multiple of the
/// integration step). Standard errors are those of the mean over trajectories.
inline std::vector<Series> mc_autocorrelations(const ChainParams& c, Field field, const std::vector<unsigned>& powers,
                                               std::size_t site, bool site_average, std::size_t nsamples, const TimeGrid& grid,
                                               std::uint64_t seed, const MCOptions& opt = {}) {
  c.validate();
  if (nsamples < 2) throw ValidationError("Monte-Carlo needs at least two samples");
  if (powers.empty()) throw ValidationError("no observable powers requested");
  for (unsigned p : powers)
    if (p < 1) throw ValidationError("observable power must be at least 1");
  if (!site_average && site >= c.N) throw ValidationError("observable site out of range");
  const double ratio = grid.dt() / opt.dt;
  const auto sub = static_cast<std::size_t>(std::llround(ratio));
  if (sub == 0 || std::abs(ratio - static_cast<double>(sub)) > 1e-9 * ratio)
    throw ValidationError("output spacing must be a multiple of the integration step");
  const double h = grid.dt() / static_cast<double>(sub);
  const EquilibriumSampler sampler(c);
  const std::size_t n = grid.size(), P = powers.size();
  const std::size_t nblocks = (nsamples + opt.block - 1) / opt.block;
  std::vector<std::vector<double>> s1(nblocks, std::vector<double>(n * P)), s2(nblocks, std::vector<double>(n * P));
  const std::size_t j0 = site_average ? 0 : site, j1 = site_average ? c.N : site + 1;
  const double norm = 1.0 / static_cast<double>(j1 - j0);
  parallel_blocks(nsamples, opt.block, [&](std::size_t b0, std::size_t b1, std::size_t bi) {
    std::vector<double> x0(c.N * P);
    for (std::size_t i = b0; i < b1; ++i) {
      auto rng = stream_rng(seed, i);
      ChainState s = sampler.sample(rng);
      const auto& f0 = field == Field::r ? s.r : s.p;
      for (std::size_t j = j0; j < j1; ++j)
        for (std::size_t k = 0; k < P; ++k) x0[j * P + k] = std::pow(f0[j], static_cast<int>(powers[k]));
      for (std::size_t t = 0; t < n; ++t) {
        if (t > 0)
          for (std::size_t q = 0; q < sub; ++q) step_verlet(s, c, h);
        const auto& f = field == Field::r ? s.r : s.p;
        for (std::size_t k = 0; k < P; ++k) {
          double a = 0;
          for (std::size_t j = j0; j < j1; ++j) a += x0[j * P + k] * std::pow(f[j], static_cast<int>(powers[k]));
          a *= norm;
          s1[bi][k * n + t] += a;
          s2[bi][k * n + t] += a * a;
        }
      }
    }
  });
  std::vector<Series> out;
  const double N = static_cast<double>(nsamples);
  for (std::size_t k = 0; k < P; ++k) {
    std::vector<double> mean(n), se(n);
    for (std::size_t t = 0; t < n; ++t) {
      CompensatedSum a, q;
      for (std::size_t b = 0; b < nblocks; ++b) {
        a.add(s1[b][k * n + t]);
        q.add(s2[b][k * n + t]);
      }
      mean[t] = a.value() / N;
      se[t] = std::sqrt(std::max(0.0, (q.value() - a.value() * a.value() / N) / (N - 1)) / N);
    }
    out.emplace_back(grid, std::move(mean), std::move(se));
  }
  return out;
}

inline Series mc_autocorrelation(const ChainParams& c, const ChainObservable& obs, std::size_t nsamples, const TimeGrid& grid,
                                 std::uint64_t seed, const MCOptions& opt = {}) {
  return mc_autocorrelations(c, obs.field, {obs.power}, obs.site, obs.site_average, nsamples, grid, seed, opt).front();
}

/// Classical RK4 for x' = F(x) with F read from a Liouville operator. Rows of the result
/// are grid nodes.
template <typename C>
Eigen::MatrixXd integrate_poly_ode(const LiouvilleOperator<C>& L, const std::vector<double>& x0, const TimeGrid& grid) {
  const std::size_t d = L.dimension();
  if (x0.size() != d) throw ValidationError("initial state has the wrong dimension");
  std::vector<std::pair<std::size_t, Polynomial<double>>> rhs;
  for (std::size_t k = 0; k < d; ++k)
    if (const auto* f = L.rhs(static_cast<VarIndex>(k))) rhs.emplace_back(k, f->template convert<double>());
  auto F = [&](const std::vector<double>& x, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& [k, f] : rhs) out[k] = f.evaluate(x);
  };
  const std::size_t n = grid.size();
  Eigen::MatrixXd traj(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> x = x0, k1(d), k2(d), k3(d), k4(d), tmp(d);
  const double h = grid.dt();
  for (std::size_t t = 0; t < n; ++t) {
    double norm = 0;
    for (std::size_t k = 0; k < d; ++k) {
      traj(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = x[k];
      norm += x[k] * x[k];
    }
    if (!(std::sqrt(norm) <= 1e12)) throw NumericError("trajectory blew up at t = " + std::to_string(grid.t(t)));
    if (t + 1 == n) break;
    F(x, k1);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * h * k1[k];
    F(tmp, k2);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * h * k2[k];
    F(tmp, k3);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + h * k3[k];
    F(tmp, k4);
    for (std::size_t k = 0; k < d; ++k) x[k] += h / 6 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
  }
  return traj;
}

}  // namespace mzgle
