#pragma once

#include <gmpxx.h>

#include <cmath>
#include <string>
#include <type_traits>

#include "error.hpp"

namespace mzgle {

/// Exact coefficient type: arbitrary-precision rational.
using Rational = mpq_class;

template <typename T>
inline constexpr bool is_rational_v = std::is_same_v<T, Rational>;

inline double to_double(const Rational& q) { return q.get_d(); }
inline double to_double(double x) { return x; }

inline bool is_zero(const Rational& q) { return sgn(q) == 0; }
inline bool is_zero(double x) { return x == 0.0; }

/// Builds num/den in canonical form.
inline Rational make_rational(long num, long den = 1) {
  if (den == 0) throw ValidationError("rational with zero denominator");
  Rational q(num, den);
  q.canonicalize();
  return q;
}

/// Parses "3", "-7/4" or a finite decimal such as "0.01" exactly.
inline Rational parse_rational(const std::string& text) {
  auto dot = text.find('.');
  auto exp = text.find_first_of("eE");
  if (dot == std::string::npos && exp == std::string::npos) {
    Rational q;
    if (q.set_str(text, 10) != 0) throw ValidationError("cannot parse rational '" + text + "'");
    q.canonicalize();
    return q;
  }
  // decimal mantissa with optional exponent
  std::string mant = exp == std::string::npos ? text : text.substr(0, exp);
  long e10 = exp == std::string::npos ? 0 : std::stol(text.substr(exp + 1));
  std::string digits;
  long frac = 0;
  bool seen_dot = false;
  for (char c : mant) {
    if (c == '.') {
      seen_dot = true;
      continue;
    }
    digits.push_back(c);
    if (seen_dot) ++frac;
  }
  mpz_class num;
  if (num.set_str(digits, 10) != 0) throw ValidationError("cannot parse rational '" + text + "'");
  e10 -= frac;
  mpz_class scale;
  mpz_ui_pow_ui(scale.get_mpz_t(), 10, static_cast<unsigned long>(std::labs(e10)));
  Rational q = e10 >= 0 ? Rational(num * scale) : Rational(num, scale);
  q.canonicalize();
  return q;
}

/// Exact conversion of a finite double (every double is a dyadic rational).
inline Rational rational_from_double(double x) {
  if (!std::isfinite(x)) throw ValidationError("non-finite value cannot become a rational");
  return Rational(x);
}

inline std::string to_string(const Rational& q) { return q.get_str(); }

}  // namespace mzgle
