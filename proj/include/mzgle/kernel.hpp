#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "liouville.hpp"
#include "measure.hpp"

namespace mzgle {

/// Scalar observable u(x) together with its normalization G = <u, u>.
template <typename C>
struct ObservableSpec {
  Polynomial<C> u0;
  double gram = 0.0;
  std::optional<Rational> exact_gram;
};

namespace detail {

/// Per-variable moment lookup built once for a hot loop.
class MomentLookup {
 public:
  explicit MomentLookup(const ProductMeasure& mu) : mu_(mu) {}

  double operator()(VarIndex v, unsigned e) {
    if (e == 0) return 1.0;
    if (v >= table_.size()) table_.resize(v + 1);
    auto& row = table_[v];
    if (row.size() <= e) {
      const Density1D& d = mu_.density(v);
      std::size_t old = row.size();
      row.resize(e + 1);
      for (std::size_t k = old; k <= e; ++k) row[k] = d.moment(static_cast<unsigned>(k));
    }
    return row[e];
  }

  Rational exact(VarIndex v, unsigned e) {
    auto m = mu_.density(v).exact_moment(e);
    if (!m) throw ValidationError("density of variable " + std::to_string(v) + " has no exact moments");
    return *m;
  }

 private:
  const ProductMeasure& mu_;
  std::vector<std::vector<double>> table_;
};

// Moment of x^(a+b) for two canonical monomials; stops at the first zero factor.
template <typename Get>
auto joint_moment(const Monomial& a, const Monomial& b, Get&& get) {
  using R = decltype(get(VarIndex{}, 0u));
  R v(1);
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    VarIndex var;
    unsigned e;
    if (j == b.size() || (i < a.size() && a.var(i) < b.var(j))) {
      var = a.var(i);
      e = a.exp(i++);
    } else if (i == a.size() || b.var(j) < a.var(i)) {
      var = b.var(j);
      e = b.exp(j++);
    } else {
      var = a.var(i);
      e = a.exp(i++) + b.exp(j++);
    }
    v *= get(var, e);
    if (is_zero(v)) return v;
  }
  return v;
}

template <typename C>
void check_covered(const Polynomial<C>& p, const ProductMeasure& mu) {
  for (VarIndex v : support(p))
    if (!mu.covers(v)) throw ValidationError("missing density for variable " + std::to_string(v));
}

}  // namespace detail

/// <p q> under a product measure, in floating point.
template <typename C>
double inner_product(const Polynomial<C>& p, const Polynomial<C>& q, const ProductMeasure& mu) {
  detail::check_covered(p, mu);
  detail::check_covered(q, mu);
  detail::MomentLookup lookup(mu);
  auto get = [&](VarIndex v, unsigned e) { return lookup(v, e); };
  const bool same = &p == &q;
  if (same && mu.all_even()) {
    // b_i + b_j is even in every variable only when both monomials share a parity
    // pattern; all other pairs vanish.
    std::map<Monomial, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < p.size(); ++i) groups[p.terms()[i].mono.parity()].push_back(i);
    CompensatedSum total;
    for (const auto& [key, idx] : groups) {
      CompensatedSum s;
      for (std::size_t a = 0; a < idx.size(); ++a) {
        const auto& ti = p.terms()[idx[a]];
        const double ci = to_double(ti.coeff);
        s.add(ci * ci * detail::joint_moment(ti.mono, ti.mono, get));
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
          const auto& tj = p.terms()[idx[b]];
          double m = detail::joint_moment(ti.mono, tj.mono, get);
          if (m != 0.0) s.add(2.0 * ci * to_double(tj.coeff) * m);
        }
      }
      total.add(s.value());
    }
    return total.value();
  }
  CompensatedSum s;
  for (const auto& ti : p.terms())
    for (const auto& tj : q.terms()) {
      double m = detail::joint_moment(ti.mono, tj.mono, get);
      if (m != 0.0) s.add(to_double(ti.coeff) * to_double(tj.coeff) * m);
    }
  return s.value();
}

/// Exact <p q> when every density involved has rational moments.
inline Rational inner_product_exact(const Polynomial<Rational>& p, const Polynomial<Rational>& q, const ProductMeasure& mu) {
  detail::check_covered(p, mu);
  detail::check_covered(q, mu);
  detail::MomentLookup lookup(mu);
  std::map<std::pair<VarIndex, unsigned>, Rational> cache;
  auto get = [&](VarIndex v, unsigned e) -> Rational {
    auto [it, inserted] = cache.try_emplace({v, e});
    if (inserted) it->second = lookup.exact(v, e);
    return it->second;
  };
  Rational s = 0;
  if (&p == &q && mu.all_even()) {
    std::map<Monomial, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < p.size(); ++i) groups[p.terms()[i].mono.parity()].push_back(i);
    for (const auto& [key, idx] : groups)
      for (std::size_t a = 0; a < idx.size(); ++a) {
        const auto& ti = p.terms()[idx[a]];
        s += ti.coeff * ti.coeff * detail::joint_moment(ti.mono, ti.mono, get);
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
          const auto& tj = p.terms()[idx[b]];
          s += 2 * ti.coeff * tj.coeff * detail::joint_moment(ti.mono, tj.mono, get);
        }
      }
    return s;
  }
  for (const auto& ti : p.terms())
    for (const auto& tj : q.terms()) s += ti.coeff * tj.coeff * detail::joint_moment(ti.mono, tj.mono, get);
  return s;
}

template <typename C>
ObservableSpec<C> make_observable(Polynomial<C> u0, const ProductMeasure& mu) {
  ObservableSpec<C> obs;
  obs.u0 = std::move(u0);
  if constexpr (is_rational_v<C>) {
    if (mu.exact_capable()) {
      obs.exact_gram = inner_product_exact(obs.u0, obs.u0, mu);
      obs.gram = to_double(*obs.exact_gram);
    } else {
      obs.gram = inner_product(obs.u0, obs.u0, mu);
    }
  } else {
    obs.gram = inner_product(obs.u0, obs.u0, mu);
  }
  if (!(obs.gram > 0)) throw ValidationError("observable has zero norm under the measure");
  return obs;
}

/// gamma_i = <L^i u, u> / <u, u>, i = 1..n. `exact` is filled in rational mode.
struct GammaSequence {
  std::vector<double> values;
  std::vector<Rational> exact;
  bool skew_adjoint = false;

  int size() const { return static_cast<int>(values.size()); }
  bool is_exact() const { return !exact.empty(); }
  double operator[](int i) const { return values.at(static_cast<std::size_t>(i - 1)); }
};

/// mu_i = <L (QL)^(i-1) u, u> / <u, u>, i = 1..n.
struct MuSequence {
  std::vector<double> values;
  std::vector<Rational> exact;

  int size() const { return static_cast<int>(values.size()); }
  bool is_exact() const { return !exact.empty(); }
  double operator[](int i) const { return values.at(static_cast<std::size_t>(i - 1)); }
};

/// gamma_1..gamma_n for the observable. With `skew`, L is taken to be skew-adjoint
/// under mu: gamma_{2m} = (-1)^m <L^m u, L^m u>/G needs only L^m u, and odd entries are
/// set to zero. Rational coefficients with rational moments give exact values.
template <typename C>
GammaSequence gamma_sequence(const LiouvilleOperator<C>& L, const ObservableSpec<C>& obs, const ProductMeasure& mu,
                             int n, bool skew, std::size_t term_cap = kDefaultTermCap) {
  if (n < 1) throw ValidationError("gamma_sequence requires n >= 1");
  GammaSequence g;
  g.skew_adjoint = skew;
  const bool exact = is_rational_v<C> && obs.exact_gram.has_value() && mu.exact_capable();
  const int top = skew ? (n + 1) / 2 : n;
  auto powers = liouville_powers(L, obs.u0, std::max(top, 1), term_cap);
  g.values.assign(static_cast<std::size_t>(n), 0.0);
  if constexpr (is_rational_v<C>) {
    if (exact) g.exact.assign(static_cast<std::size_t>(n), Rational(0));
  }
  for (int i = 1; i <= n; ++i) {
    if (skew && (i & 1)) continue;
    const auto& p = skew ? powers[static_cast<std::size_t>(i / 2)] : powers[static_cast<std::size_t>(i)];
    const auto& q = skew ? p : obs.u0;
    const double sign = (skew && ((i / 2) & 1)) ? -1.0 : 1.0;
    if constexpr (is_rational_v<C>) {
      if (exact) {
        Rational v = inner_product_exact(p, q, mu) / *obs.exact_gram;
        if (sign < 0) v = -v;
        g.exact[static_cast<std::size_t>(i - 1)] = v;
        g.values[static_cast<std::size_t>(i - 1)] = to_double(v);
        continue;
      }
    }
    g.values[static_cast<std::size_t>(i - 1)] = sign * inner_product(p, q, mu) / obs.gram;
  }
  return g;
}

/// mu_1 = gamma_1, mu_k = gamma_k - sum_{j<k} mu_{k-j} gamma_j. For a skew-adjoint
/// sequence only even indices are visited.
inline MuSequence mu_sequence(const GammaSequence& g) {
  MuSequence m;
  const int n = g.size();
  m.values.assign(static_cast<std::size_t>(n), 0.0);
  auto idx = [](int i) { return static_cast<std::size_t>(i - 1); };
  if (g.is_exact()) {
    m.exact.assign(static_cast<std::size_t>(n), Rational(0));
    for (int k = 1; k <= n; ++k) {
      if (g.skew_adjoint && (k & 1)) continue;
      Rational v = g.exact[idx(k)];
      for (int j = 1; j < k; ++j) {
        if (g.skew_adjoint && (j & 1)) continue;
        v -= m.exact[idx(k - j)] * g.exact[idx(j)];
      }
      m.exact[idx(k)] = v;
      m.values[idx(k)] = to_double(v);
    }
    return m;
  }
  for (int k = 1; k <= n; ++k) {
    if (g.skew_adjoint && (k & 1)) continue;
    long double v = g.values[idx(k)];
    for (int j = 1; j < k; ++j) {
      if (g.skew_adjoint && (j & 1)) continue;
      v -= static_cast<long double>(m.values[idx(k - j)]) * g.values[idx(j)];
    }
    m.values[idx(k)] = static_cast<double>(v);
  }
  return m;
}

enum class Basis { dyson, faber };

inline std::string to_string(Basis b) { return b == Basis::dyson ? "dyson" : "faber"; }

inline Basis parse_basis(const std::string& s) {
  if (s == "dyson") return Basis::dyson;
  if (s == "faber") return Basis::faber;
  throw ValidationError("unknown basis '" + s + "' (expected dyson or faber)");
}

/// Faber recurrence parameters and the operator scaling delta (L -> delta L).
struct FaberParams {
  double c0 = 0.0;
  double c1 = -0.25;
  double delta = 1.0;
};

inline void validate(const FaberParams& fp) {
  if (!(fp.delta > 0)) throw ValidationError("delta must be positive");
  if (!(fp.c1 < 0)) throw ValidationError("Faber modes need c1 < 0");
}

/// Row q holds the monomial coefficients of F_q(z):
/// F_0 = 1, F_1 = z - c0, F_2 = (z - c0) F_1 - 2 c1, F_{q+1} = (z - c0) F_q - c1 F_{q-1}.
inline std::vector<std::vector<double>> faber_polynomial_coeffs(const FaberParams& fp, int n) {
  if (n < 0) throw ValidationError("Faber order must be non-negative");
  std::vector<std::vector<long double>> F;
  F.push_back({1.0L});
  if (n >= 1) F.push_back({-static_cast<long double>(fp.c0), 1.0L});
  for (int q = 1; q < n; ++q) {
    const auto& cur = F[static_cast<std::size_t>(q)];
    const auto& prev = F[static_cast<std::size_t>(q - 1)];
    const long double c1 = q == 1 ? 2.0L * fp.c1 : static_cast<long double>(fp.c1);
    std::vector<long double> next(cur.size() + 1, 0.0L);
    for (std::size_t j = 0; j < cur.size(); ++j) {
      next[j + 1] += cur[j];
      next[j] -= fp.c0 * cur[j];
    }
    for (std::size_t j = 0; j < prev.size(); ++j) next[j] -= c1 * prev[j];
    F.push_back(std::move(next));
  }
  std::vector<std::vector<double>> out;
  for (auto& row : F) out.emplace_back(row.begin(), row.end());
  return out;
}

/// Temporal mode g_q(t): t^q/q! (Dyson) or e^{c0 t} J_q(2t sqrt(-c1)) / sqrt(-c1)^q (Faber).
inline double temporal_mode(Basis basis, const FaberParams& fp, int q, double t) {
  if (basis == Basis::dyson) {
    double v = 1.0;
    for (int k = 1; k <= q; ++k) v *= t / k;
    return v;
  }
  if (!(fp.c1 < 0)) throw ValidationError("Faber modes need c1 < 0");
  const double a = std::sqrt(-fp.c1);
  if (t == 0.0) return q == 0 ? 1.0 : 0.0;
  return std::exp(fp.c0 * t) * std::cyl_bessel_j(static_cast<double>(q), 2.0 * t * a) / std::pow(a, q);
}

/// Truncated memory-kernel series K(t) = delta^-2 sum_q g_q(t/delta) M_q.
struct KernelExpansion {
  Basis basis = Basis::faber;
  FaberParams params;
  int order = 0;
  std::vector<double> coeffs;  ///< M_0..M_n for the scaled operator delta L
  double omega_scaled = 0.0;   ///< delta * mu_1
  double gram = 1.0;

  /// Streaming coefficient in physical time.
  double omega() const { return omega_scaled / params.delta; }

  double operator()(double t) const {
    const double tau = t / params.delta;
    long double s = 0.0L;
    for (int q = 0; q <= order; ++q) s += static_cast<long double>(temporal_mode(basis, params, q, tau)) * coeffs[static_cast<std::size_t>(q)];
    return static_cast<double>(s / (static_cast<long double>(params.delta) * params.delta));
  }
};

/// M_q for the chosen basis at order n: Dyson M_q = delta^{q+2} mu_{q+2};
/// Faber M_q = sum_j phi_{qj} delta^{j+2} mu_{j+2}.
inline KernelExpansion build_kernel(const MuSequence& mu, Basis basis, const FaberParams& fp, double gram, int n) {
  validate(fp);
  if (n < 0) throw ValidationError("kernel order must be non-negative");
  if (mu.size() < n + 2)
    throw ValidationError("kernel of order " + std::to_string(n) + " needs " + std::to_string(n + 2) + " mu coefficients, got " +
                          std::to_string(mu.size()));
  KernelExpansion k;
  k.basis = basis;
  k.params = fp;
  k.order = n;
  k.gram = gram;
  k.omega_scaled = fp.delta * mu[1];
  std::vector<long double> scaled(static_cast<std::size_t>(n) + 1);
  long double dpow = static_cast<long double>(fp.delta) * fp.delta;
  for (int j = 0; j <= n; ++j) {
    scaled[static_cast<std::size_t>(j)] = dpow * mu[j + 2];
    dpow *= fp.delta;
  }
  k.coeffs.assign(static_cast<std::size_t>(n) + 1, 0.0);
  if (basis == Basis::dyson) {
    for (int q = 0; q <= n; ++q) k.coeffs[static_cast<std::size_t>(q)] = static_cast<double>(scaled[static_cast<std::size_t>(q)]);
    return k;
  }
  auto phi = faber_polynomial_coeffs(fp, n);
  for (int q = 0; q <= n; ++q) {
    long double s = 0.0L;
    for (int j = 0; j <= q; ++j) s += static_cast<long double>(phi[static_cast<std::size_t>(q)][static_cast<std::size_t>(j)]) * scaled[static_cast<std::size_t>(j)];
    k.coeffs[static_cast<std::size_t>(q)] = static_cast<double>(s);
  }
  return k;
}

inline double kernel_eval(const KernelExpansion& k, double t) { return k(t); }

/// Gamma sequence of a linear system x' = A x (A row-major N x N) for observable
/// x_obs: gamma_j = sum_l (A^j)_{obs,l} <x_l x_obs> / <x_obs^2>, iterating w <- A^T w.
template <typename C>
GammaSequence linear_gamma(const std::vector<C>& A, std::size_t N, VarIndex obs, const ProductMeasure& mu, int n) {
  if (A.size() != N * N) throw ValidationError("linear_gamma: matrix is not N x N");
  if (obs >= N) throw ValidationError("linear_gamma: observable index out of range");
  if (mu.dimension() < N) throw ValidationError("linear_gamma: measure does not cover the system");
  for (std::size_t l = 0; l < N; ++l)
    if (!mu.covers(static_cast<VarIndex>(l))) throw ValidationError("linear_gamma: measure does not cover variable " + std::to_string(l));
  GammaSequence g;
  g.values.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<C> w(N, C(0)), next(N, C(0));
  w[obs] = C(1);
  const bool exact = is_rational_v<C> && mu.exact_capable();
  auto second = [&](std::size_t l) -> C {
    const auto& dl = mu.density(static_cast<VarIndex>(l));
    const auto& dobs = mu.density(obs);
    if constexpr (is_rational_v<C>) {
      if (exact) return l == obs ? *dl.exact_moment(2) : Rational(*dl.exact_moment(1) * *dobs.exact_moment(1));
    }
    return C(l == obs ? dl.moment(2) : dl.moment(1) * dobs.moment(1));
  };
  std::vector<C> cov(N);
  for (std::size_t l = 0; l < N; ++l) cov[l] = second(l);
  if constexpr (is_rational_v<C>) {
    if (exact) g.exact.assign(static_cast<std::size_t>(n), Rational(0));
  }
  for (int j = 1; j <= n; ++j) {
    std::fill(next.begin(), next.end(), C(0));
    for (std::size_t k = 0; k < N; ++k) {
      if (is_zero(w[k])) continue;
      for (std::size_t l = 0; l < N; ++l)
        if (!is_zero(A[k * N + l])) next[l] += w[k] * A[k * N + l];
    }
    std::swap(w, next);
    C s(0);
    for (std::size_t l = 0; l < N; ++l)
      if (!is_zero(w[l]) && !is_zero(cov[l])) s += w[l] * cov[l];
    s /= cov[obs];
    g.values[static_cast<std::size_t>(j - 1)] = to_double(s);
    if constexpr (is_rational_v<C>) {
      if (exact) g.exact[static_cast<std::size_t>(j - 1)] = s;
    }
  }
  return g;
}

/// c0 = 0, c1 = -1/4 and delta = min(1, 1/R): the spectrum [-iR, iR] of L is mapped into
/// the Faber segment {iy : |y| <= 2 sqrt(-c1) = 1}.
inline FaberParams scaling_for_radius(double R) {
  if (!(R > 0) || !std::isfinite(R)) throw ValidationError("spectral radius must be positive and finite");
  FaberParams fp;
  fp.c0 = 0.0;
  fp.c1 = -0.25;
  fp.delta = std::min(1.0, 1.0 / R);
  return fp;
}

/// Starting values from the spectral radius estimate R = max_j |gamma_j|^{1/j}.
inline FaberParams estimate_scaling(const GammaSequence& g) {
  double R = 0.0;
  for (int j = 1; j <= g.size(); ++j)
    if (g[j] != 0.0) R = std::max(R, std::pow(std::abs(g[j]), 1.0 / j));
  if (R == 0.0) throw NumericError("all gamma coefficients vanish; no scaling estimate is possible");
  return scaling_for_radius(R);
}

/// Radius of the linearized chain spectrum, 2 sqrt(alpha1 / m).
inline double chain_linear_radius(double alpha1, double mass) {
  if (!(alpha1 > 0) || !(mass > 0)) throw ValidationError("linear radius needs alpha1 > 0 and mass > 0");
  return 2.0 * std::sqrt(alpha1 / mass);
}

}  // namespace mzgle
