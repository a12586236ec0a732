#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "parallel.hpp"
#include "polynomial.hpp"

namespace mzgle {

/// Default cap on the number of merged terms a single operator application may produce.
inline constexpr std::size_t kDefaultTermCap = 10'000'000;

/// First-order operator L = sum_k F_k(x) d/dx_k with polynomial F_k. Each target
/// variable appears at most once; every variable used is below `dimension()`.
template <typename C>
class LiouvilleOperator {
 public:
  using coeff_type = C;

  LiouvilleOperator() = default;

  explicit LiouvilleOperator(std::size_t dimension, std::vector<std::string> names = {})
      : dimension_(dimension), names_(std::move(names)), slot_(dimension, -1) {
    if (!names_.empty() && names_.size() != dimension_)
      throw ValidationError("variable table size does not match the dimension");
    if (names_.empty())
      for (std::size_t i = 0; i < dimension_; ++i) names_.push_back("x" + std::to_string(i));
    std::vector<std::string> sorted = names_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ValidationError("duplicate variable name");
  }

  /// Registers d/dx_target with coefficient rhs. Adding a zero rhs is a no-op.
  void add_term(VarIndex target, Polynomial<C> rhs) {
    if (target >= dimension_) throw ValidationError("Liouville target " + std::to_string(target) + " out of range");
    if (slot_[target] >= 0) throw ValidationError("Liouville target " + names_[target] + " appears twice");
    if (!rhs.is_zero() && rhs.max_var() >= dimension_)
      throw ValidationError("rhs of " + names_[target] + " uses a variable outside the system");
    if (rhs.is_zero()) return;
    slot_[target] = static_cast<int>(terms_.size());
    terms_.emplace_back(target, std::move(rhs));
  }

  std::size_t dimension() const { return dimension_; }
  const std::vector<std::pair<VarIndex, Polynomial<C>>>& terms() const { return terms_; }
  const std::vector<std::string>& names() const { return names_; }

  const std::string& name(VarIndex v) const { return names_.at(v); }

  std::optional<VarIndex> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<VarIndex>(i);
    return std::nullopt;
  }

  /// F_v, or nullptr when L has no d/dx_v component.
  const Polynomial<C>* rhs(VarIndex v) const {
    if (v >= dimension_ || slot_[v] < 0) return nullptr;
    return &terms_[static_cast<std::size_t>(slot_[v])].second;
  }

  template <typename D>
  LiouvilleOperator<D> convert() const {
    LiouvilleOperator<D> out(dimension_, names_);
    for (const auto& [target, rhs] : terms_) out.add_term(target, rhs.template convert<D>());
    return out;
  }

  /// Relabels variables; perm[v] is the new id of v.
  LiouvilleOperator relabeled(std::span<const VarIndex> perm) const {
    std::vector<std::string> names(dimension_);
    for (std::size_t v = 0; v < dimension_; ++v) names[perm[v]] = names_[v];
    LiouvilleOperator out(dimension_, std::move(names));
    for (const auto& [target, rhs] : terms_) out.add_term(perm[target], rhs.relabeled(perm));
    return out;
  }

  bool is_linear() const {
    for (const auto& [target, rhs] : terms_)
      for (const auto& t : rhs.terms())
        if (t.mono.degree() != 1) return false;
    return true;
  }

  std::string to_string() const {
    std::string s;
    auto nm = [this](VarIndex v) { return names_[v]; };
    for (const auto& [target, rhs] : terms_) s += "d" + names_[target] + "/dt = " + rhs.to_string(nm) + "\n";
    return s;
  }

 private:
  std::size_t dimension_ = 0;
  std::vector<std::string> names_;
  std::vector<int> slot_;
  std::vector<std::pair<VarIndex, Polynomial<C>>> terms_;
};

/// Applies L to p: every monomial a*x^b is sent, for each variable v in its support
/// and each monomial z*x^c of F_v, to (a*z*b_v, b - e_v + c); like terms are merged.
template <typename C>
Polynomial<C> apply_liouville(const LiouvilleOperator<C>& L, const Polynomial<C>& p,
                              std::size_t term_cap = kDefaultTermCap) {
  if (!p.is_zero() && p.max_var() >= L.dimension())
    throw ValidationError("polynomial variable out of range for the Liouville operator (dimension mismatch)");
  using Map = std::unordered_map<Monomial, C, MonomialHash>;
  const auto& in = p.terms();

  auto accumulate = [&](std::size_t begin, std::size_t end, Map& acc) {
    C scaled;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& term = in[i];
      for (std::size_t k = 0; k < term.mono.size(); ++k) {
        const VarIndex v = term.mono.var(k);
        const Polynomial<C>* F = L.rhs(v);
        if (!F) continue;
        const C base = term.coeff * C(term.mono.exp(k));
        for (const auto& f : F->terms()) {
          scaled = base * f.coeff;
          auto [it, inserted] = acc.try_emplace(term.mono.derivative_shift(v, f.mono), scaled);
          if (!inserted) it->second += scaled;
        }
      }
      if (acc.size() > term_cap)
        throw ResourceError("term count cap of " + std::to_string(term_cap) + " exceeded");
    }
  };

  constexpr std::size_t kBlock = 4096;
  const std::size_t nblocks = (in.size() + kBlock - 1) / kBlock;
  if (nblocks <= 1 || thread_count() == 1) {
    Map acc;
    acc.reserve(in.size() * 2);
    accumulate(0, in.size(), acc);
    return Polynomial<C>::from_map(std::move(acc));
  }
  // Exact merge is order independent; the canonical sort fixes the output order.
  std::vector<Map> partial(nblocks);
  parallel_blocks(in.size(), kBlock, [&](std::size_t b, std::size_t e, std::size_t idx) { accumulate(b, e, partial[idx]); });
  Map acc = std::move(partial[0]);
  for (std::size_t b = 1; b < nblocks; ++b) {
    for (auto& [mono, c] : partial[b]) {
      auto [it, inserted] = acc.try_emplace(mono, c);
      if (!inserted) it->second += c;
    }
    partial[b].clear();
    if (acc.size() > term_cap) throw ResourceError("term count cap of " + std::to_string(term_cap) + " exceeded");
  }
  return Polynomial<C>::from_map(std::move(acc));
}

/// [u0, L u0, ..., L^n u0]. A ResourceError carries the power that overflowed the cap.
template <typename C>
std::vector<Polynomial<C>> liouville_powers(const LiouvilleOperator<C>& L, const Polynomial<C>& u0, int n,
                                            std::size_t term_cap = kDefaultTermCap) {
  if (n < 1) throw ValidationError("liouville_powers requires n >= 1");
  std::vector<Polynomial<C>> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  out.push_back(u0);
  for (int i = 1; i <= n; ++i) {
    try {
      out.push_back(apply_liouville(L, out.back(), term_cap));
    } catch (const ResourceError& e) {
      throw ResourceError(std::string(e.what()) + " while computing L^" + std::to_string(i), i);
    }
  }
  return out;
}

namespace systems {

/// Kraichnan-Orszag three-mode problem: x1' = x1 x3, x2' = -x2 x3, x3' = x2^2 - x1^2.
/// Variables x1, x2, x3 have ids 0, 1, 2.
inline LiouvilleOperator<Rational> kraichnan_orszag() {
  LiouvilleOperator<Rational> L(3, {"x1", "x2", "x3"});
  auto mono = [](std::vector<std::pair<VarIndex, unsigned>> p) { return Monomial::from_pairs(std::move(p)); };
  L.add_term(0, Polynomial<Rational>::monomial(1, mono({{0, 1}, {2, 1}})));
  L.add_term(1, Polynomial<Rational>::monomial(-1, mono({{1, 1}, {2, 1}})));
  L.add_term(2, Polynomial<Rational>::from_terms({{mono({{1, 2}}), 1}, {mono({{0, 2}}), -1}}));
  return L;
}

/// Index layout of a periodic chain in (r, p) coordinates.
struct ChainLayout {
  std::size_t sites;
  VarIndex r(long j) const { return static_cast<VarIndex>(wrap(j)); }
  VarIndex p(long j) const { return static_cast<VarIndex>(sites + wrap(j)); }
  std::size_t wrap(long j) const {
    long n = static_cast<long>(sites);
    return static_cast<std::size_t>(((j % n) + n) % n);
  }
};

/// Periodic FPU beta-chain with V(x) = alpha1 x^2/2 + beta1 x^4/4 and mass m:
///   r_j' = (p_j - p_{j-1}) / m,   p_j' = V'(r_{j+1}) - V'(r_j).
/// r_j has id j and p_j has id N + j.
inline LiouvilleOperator<Rational> fpu_chain(std::size_t N, const Rational& alpha1, const Rational& beta1,
                                             const Rational& mass = 1) {
  if (N < 3) throw ValidationError("chain needs at least 3 sites");
  if (sgn(mass) <= 0) throw ValidationError("chain mass must be positive");
  std::vector<std::string> names;
  for (std::size_t j = 0; j < N; ++j) names.push_back("r" + std::to_string(j));
  for (std::size_t j = 0; j < N; ++j) names.push_back("p" + std::to_string(j));
  LiouvilleOperator<Rational> L(2 * N, std::move(names));
  ChainLayout lay{N};
  const Rational inv_m = 1 / mass;
  for (long j = 0; j < static_cast<long>(N); ++j) {
    using P = Polynomial<Rational>;
    L.add_term(lay.r(j), P::monomial(inv_m, Monomial::variable(lay.p(j))) -
                             P::monomial(inv_m, Monomial::variable(lay.p(j - 1))));
    P force = P::monomial(alpha1, Monomial::variable(lay.r(j + 1))) - P::monomial(alpha1, Monomial::variable(lay.r(j))) +
              P::monomial(beta1, Monomial::variable(lay.r(j + 1), 3)) - P::monomial(beta1, Monomial::variable(lay.r(j), 3));
    L.add_term(lay.p(j), std::move(force));
  }
  return L;
}

/// Harmonic chain: the FPU chain with beta1 = 0.
inline LiouvilleOperator<Rational> harmonic_chain(std::size_t N, const Rational& alpha1 = 1, const Rational& mass = 1) {
  return fpu_chain(N, alpha1, 0, mass);
}

}  // namespace systems

/// Dense matrix A of a linear operator, with L x_k = sum_l A(k, l) x_l; row-major.
template <typename C>
std::vector<C> linear_matrix(const LiouvilleOperator<C>& L) {
  const std::size_t n = L.dimension();
  std::vector<C> A(n * n, C(0));
  for (const auto& [target, rhs] : L.terms())
    for (const auto& t : rhs.terms()) {
      if (t.mono.size() != 1 || t.mono.exp(0) != 1) throw ValidationError("operator is not linear");
      A[target * n + t.mono.var(0)] += t.coeff;
    }
  return A;
}

}  // namespace mzgle
