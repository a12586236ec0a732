#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "error.hpp"
#include "rational.hpp"

namespace mzgle {

/// Dense id of a phase variable, 0..N-1.
using VarIndex = std::uint32_t;

/// Product of variable powers. Stored as a sorted list of packed (var, exponent)
/// words; zero exponents are never stored, so the packed list is the canonical key.
class Monomial {
 public:
  static constexpr unsigned kExpBits = 12;
  static constexpr unsigned kMaxExp = (1u << kExpBits) - 1;
  static constexpr VarIndex kMaxVar = (1u << (32 - kExpBits)) - 1;

  Monomial() = default;

  static Monomial variable(VarIndex v, unsigned e = 1) {
    Monomial m;
    if (e > 0) m.words_.push_back(pack(v, e));
    return m;
  }

  /// Builds from unordered (var, exp) pairs; repeated variables are multiplied.
  static Monomial from_pairs(std::vector<std::pair<VarIndex, unsigned>> pairs) {
    std::sort(pairs.begin(), pairs.end());
    Monomial m;
    for (std::size_t i = 0; i < pairs.size();) {
      VarIndex v = pairs[i].first;
      unsigned long e = 0;
      for (; i < pairs.size() && pairs[i].first == v; ++i) e += pairs[i].second;
      if (e > 0) m.words_.push_back(pack(v, e));
    }
    return m;
  }

  std::size_t size() const { return words_.size(); }
  bool is_constant() const { return words_.empty(); }
  VarIndex var(std::size_t i) const { return words_[i] >> kExpBits; }
  unsigned exp(std::size_t i) const { return words_[i] & kMaxExp; }

  unsigned exponent(VarIndex v) const {
    auto it = std::lower_bound(words_.begin(), words_.end(), pack_raw(v, 0));
    if (it != words_.end() && (*it >> kExpBits) == v) return *it & kMaxExp;
    return 0;
  }

  unsigned degree() const {
    unsigned d = 0;
    for (auto w : words_) d += w & kMaxExp;
    return d;
  }

  Monomial operator*(const Monomial& other) const {
    Monomial out;
    out.words_.reserve(words_.size() + other.words_.size());
    std::size_t i = 0, j = 0;
    while (i < words_.size() || j < other.words_.size()) {
      if (j == other.words_.size() || (i < words_.size() && var(i) < other.var(j))) {
        out.words_.push_back(words_[i++]);
      } else if (i == words_.size() || other.var(j) < var(i)) {
        out.words_.push_back(other.words_[j++]);
      } else {
        out.words_.push_back(pack(var(i), static_cast<unsigned long>(exp(i)) + other.exp(j)));
        ++i;
        ++j;
      }
    }
    return out;
  }

  /// x^b -> x^(b - e_v) * factor, the exponent part of one Liouville term acting on
  /// this monomial. Requires exponent(v) > 0.
  Monomial derivative_shift(VarIndex v, const Monomial& factor) const {
    Monomial out;
    out.words_.reserve(words_.size() + factor.words_.size());
    std::size_t i = 0, j = 0;
    auto emit = [&](VarIndex var_id, unsigned long e) {
      if (e > 0) out.words_.push_back(pack(var_id, e));
    };
    while (i < words_.size() || j < factor.words_.size()) {
      if (j == factor.words_.size() || (i < words_.size() && var(i) < factor.var(j))) {
        emit(var(i), exp(i) - (var(i) == v ? 1u : 0u));
        ++i;
      } else if (i == words_.size() || factor.var(j) < var(i)) {
        emit(factor.var(j), factor.exp(j));
        ++j;
      } else {
        emit(var(i), static_cast<unsigned long>(exp(i)) + factor.exp(j) - (var(i) == v ? 1u : 0u));
        ++i;
        ++j;
      }
    }
    return out;
  }

  /// Monomial of the variables carrying an odd exponent (each to the first power).
  Monomial parity() const {
    Monomial out;
    for (std::size_t i = 0; i < size(); ++i)
      if (exp(i) & 1u) out.words_.push_back(pack(var(i), 1));
    return out;
  }

  /// Applies a variable relabeling; `perm[v]` is the new id of v.
  Monomial relabeled(std::span<const VarIndex> perm) const {
    std::vector<std::pair<VarIndex, unsigned>> pairs;
    pairs.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) pairs.emplace_back(perm[var(i)], exp(i));
    return from_pairs(std::move(pairs));
  }

  VarIndex max_var() const { return words_.empty() ? 0 : var(words_.size() - 1); }

  std::size_t hash() const {
    std::uint64_t h = 0x9e3779b97f4a7c15ull ^ words_.size();
    for (auto w : words_) {
      h ^= w + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      h *= 0xff51afd7ed558ccdull;
    }
    return static_cast<std::size_t>(h ^ (h >> 33));
  }

  auto operator<=>(const Monomial&) const = default;
  bool operator==(const Monomial&) const = default;

 private:
  static std::uint32_t pack_raw(VarIndex v, unsigned e) { return (v << kExpBits) | e; }
  static std::uint32_t pack(VarIndex v, unsigned long e) {
    if (v > kMaxVar) throw ResourceError("variable index exceeds monomial packing range");
    if (e > kMaxExp) throw ResourceError("exponent exceeds monomial packing range");
    return pack_raw(v, static_cast<unsigned>(e));
  }

  std::vector<std::uint32_t> words_;
};

struct MonomialHash {
  std::size_t operator()(const Monomial& m) const { return m.hash(); }
};

template <typename C>
struct Term {
  Monomial mono;
  C coeff;
};

/// Sparse multivariate polynomial in canonical merged form: unique monomials in
/// ascending order, no zero coefficients. Coefficients are `Rational` (exact) or
/// `double`.
template <typename C>
class Polynomial {
 public:
  using coeff_type = C;

  Polynomial() = default;

  static Polynomial constant(const C& c) { return monomial(c, Monomial{}); }
  static Polynomial variable(VarIndex v, unsigned e = 1) { return monomial(C(1), Monomial::variable(v, e)); }
  static Polynomial monomial(const C& c, Monomial m) {
    Polynomial p;
    if (!mzgle::is_zero(c)) p.terms_.push_back({std::move(m), c});
    return p;
  }

  /// Canonicalizes an arbitrary term list: merges like terms, drops zeros, sorts.
  static Polynomial from_terms(std::vector<Term<C>> terms) {
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.mono < b.mono; });
    Polynomial p;
    p.terms_.reserve(terms.size());
    for (auto& t : terms) {
      if (!p.terms_.empty() && p.terms_.back().mono == t.mono)
        p.terms_.back().coeff += t.coeff;
      else
        p.terms_.push_back(std::move(t));
    }
    p.drop_zeros();
    return p;
  }

  /// Builds from a merge map; output order is canonical regardless of map order.
  static Polynomial from_map(std::unordered_map<Monomial, C, MonomialHash>&& acc) {
    Polynomial p;
    p.terms_.reserve(acc.size());
    for (auto& [mono, coeff] : acc)
      if (!mzgle::is_zero(coeff)) p.terms_.push_back({mono, std::move(coeff)});
    std::sort(p.terms_.begin(), p.terms_.end(), [](const auto& a, const auto& b) { return a.mono < b.mono; });
    return p;
  }

  const std::vector<Term<C>>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool is_zero() const { return terms_.empty(); }

  /// Coefficient of `m` (zero if absent).
  C coefficient(const Monomial& m) const {
    auto it = find(m);
    return it == terms_.end() ? C(0) : it->coeff;
  }

  /// Adds c*m in place, keeping canonical form.
  void add_term(const Monomial& m, const C& c) {
    auto it = std::lower_bound(terms_.begin(), terms_.end(), m,
                               [](const Term<C>& t, const Monomial& key) { return t.mono < key; });
    if (it != terms_.end() && it->mono == m) {
      it->coeff += c;
      if (mzgle::is_zero(it->coeff)) terms_.erase(it);
    } else if (!mzgle::is_zero(c)) {
      terms_.insert(it, Term<C>{m, c});
    }
  }

  /// Removes the term with monomial m; returns its coefficient (zero if absent).
  C remove_term(const Monomial& m) {
    auto it = find(m);
    if (it == terms_.end()) return C(0);
    C c = it->coeff;
    terms_.erase(it);
    return c;
  }

  Polynomial operator+(const Polynomial& o) const { return combine(o, C(1)); }
  Polynomial operator-(const Polynomial& o) const { return combine(o, C(-1)); }

  Polynomial operator*(const C& s) const {
    if (mzgle::is_zero(s)) return {};
    Polynomial p = *this;
    for (auto& t : p.terms_) t.coeff *= s;
    p.drop_zeros();  // double underflow
    return p;
  }

  Polynomial operator*(const Polynomial& o) const {
    std::unordered_map<Monomial, C, MonomialHash> acc;
    acc.reserve(terms_.size() * o.terms_.size());
    for (const auto& a : terms_)
      for (const auto& b : o.terms_) {
        C prod = a.coeff * b.coeff;
        acc[a.mono * b.mono] += prod;
      }
    return from_map(std::move(acc));
  }

  bool operator==(const Polynomial& o) const {
    if (terms_.size() != o.terms_.size()) return false;
    for (std::size_t i = 0; i < terms_.size(); ++i)
      if (terms_[i].mono != o.terms_[i].mono || terms_[i].coeff != o.terms_[i].coeff) return false;
    return true;
  }

  template <typename D>
  Polynomial<D> convert() const {
    std::vector<Term<D>> out;
    out.reserve(terms_.size());
    for (const auto& t : terms_) {
      if constexpr (std::is_same_v<D, double>)
        out.push_back({t.mono, to_double(t.coeff)});
      else if constexpr (std::is_same_v<C, double>)
        out.push_back({t.mono, rational_from_double(t.coeff)});
      else
        out.push_back({t.mono, D(t.coeff)});
    }
    return Polynomial<D>::from_terms(std::move(out));
  }

  Polynomial relabeled(std::span<const VarIndex> perm) const {
    std::vector<Term<C>> out;
    out.reserve(terms_.size());
    for (const auto& t : terms_) out.push_back({t.mono.relabeled(perm), t.coeff});
    return from_terms(std::move(out));
  }

  double evaluate(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
      double v = to_double(t.coeff);
      for (std::size_t i = 0; i < t.mono.size(); ++i) v *= ipow(x[t.mono.var(i)], t.mono.exp(i));
      s += v;
    }
    return s;
  }

  unsigned degree() const {
    unsigned d = 0;
    for (const auto& t : terms_) d = std::max(d, t.mono.degree());
    return d;
  }

  /// Largest variable id present (0 for constants).
  VarIndex max_var() const {
    VarIndex v = 0;
    for (const auto& t : terms_) v = std::max(v, t.mono.max_var());
    return v;
  }

  std::string to_string(const std::function<std::string(VarIndex)>& name = default_name) const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& t : terms_) {
      std::string c = coeff_string(t.coeff);
      bool neg = !c.empty() && c[0] == '-';
      if (neg) c.erase(0, 1);
      os << (first ? (neg ? "-" : "") : (neg ? " - " : " + "));
      first = false;
      bool unit = c == "1";
      if (!unit || t.mono.is_constant()) os << c;
      for (std::size_t i = 0; i < t.mono.size(); ++i) {
        if (i > 0 || !unit) os << '*';
        os << name(t.mono.var(i));
        if (t.mono.exp(i) != 1) os << '^' << t.mono.exp(i);
      }
    }
    return os.str();
  }

  static std::string default_name(VarIndex v) { return "x" + std::to_string(v); }

 private:
  static double ipow(double x, unsigned e) {
    double r = 1.0;
    while (e) {
      if (e & 1u) r *= x;
      x *= x;
      e >>= 1;
    }
    return r;
  }

  static std::string coeff_string(const C& c) {
    if constexpr (is_rational_v<C>) {
      return c.get_str();
    } else {
      std::ostringstream os;
      os.precision(17);
      os << c;
      return os.str();
    }
  }

  typename std::vector<Term<C>>::const_iterator find(const Monomial& m) const {
    auto it = std::lower_bound(terms_.begin(), terms_.end(), m,
                               [](const Term<C>& t, const Monomial& key) { return t.mono < key; });
    return (it != terms_.end() && it->mono == m) ? it : terms_.end();
  }

  typename std::vector<Term<C>>::iterator find(const Monomial& m) {
    auto it = std::lower_bound(terms_.begin(), terms_.end(), m,
                               [](const Term<C>& t, const Monomial& key) { return t.mono < key; });
    return (it != terms_.end() && it->mono == m) ? it : terms_.end();
  }

  Polynomial combine(const Polynomial& o, const C& sign) const {
    Polynomial p;
    p.terms_.reserve(terms_.size() + o.terms_.size());
    std::size_t i = 0, j = 0;
    while (i < terms_.size() || j < o.terms_.size()) {
      if (j == o.terms_.size() || (i < terms_.size() && terms_[i].mono < o.terms_[j].mono)) {
        p.terms_.push_back(terms_[i++]);
      } else if (i == terms_.size() || o.terms_[j].mono < terms_[i].mono) {
        p.terms_.push_back({o.terms_[j].mono, C(o.terms_[j].coeff * sign)});
        ++j;
      } else {
        C c = terms_[i].coeff + o.terms_[j].coeff * sign;
        if (!mzgle::is_zero(c)) p.terms_.push_back({terms_[i].mono, c});
        ++i;
        ++j;
      }
    }
    return p;
  }

  void drop_zeros() {
    std::erase_if(terms_, [](const Term<C>& t) { return mzgle::is_zero(t.coeff); });
  }

  std::vector<Term<C>> terms_;
};

template <typename C>
Polynomial<C> operator*(const C& s, const Polynomial<C>& p) {
  return p * s;
}

/// Variables appearing with positive exponent, ascending.
template <typename C>
std::vector<VarIndex> support(const Polynomial<C>& p) {
  std::vector<VarIndex> vars;
  for (const auto& t : p.terms())
    for (std::size_t i = 0; i < t.mono.size(); ++i) vars.push_back(t.mono.var(i));
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  return vars;
}

}  // namespace mzgle
