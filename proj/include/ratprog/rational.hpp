#pragma once

// Exact rational arithmetic for the program interpreter.  Values are
// arbitrary-precision fractions kept in canonical form (denominator > 0,
// gcd(|num|, den) = 1), so equality tests are exact and representation
// growth stays bounded under repeated arithmetic.

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ratprog {

using BigInt = boost::multiprecision::cpp_int;
// cpp_rational auto-canonicalizes after every operation.
using Rational = boost::multiprecision::cpp_rational;

struct DivisionByZero : std::runtime_error {
  DivisionByZero() : std::runtime_error("division by zero") {}
  explicit DivisionByZero(const std::string& what) : std::runtime_error(what) {}
};

// Mathematical floor: greatest integer <= x (so rat_floor(-7/2) = -4).
inline BigInt rat_floor(const Rational& x) {
  BigInt n = numerator(x), d = denominator(x);  // d > 0
  BigInt q = n / d;                             // truncates toward zero
  if (n % d != 0 && n < 0) --q;
  return q;
}

// Mathematical ceiling: least integer >= x (so rat_ceil(-7/2) = -3).
inline BigInt rat_ceil(const Rational& x) {
  BigInt n = numerator(x), d = denominator(x);
  BigInt q = n / d;
  if (n % d != 0 && n > 0) ++q;
  return q;
}

inline Rational floor_div(const Rational& a, const Rational& b) {
  if (b == 0) throw DivisionByZero("floor_div: zero divisor");
  return Rational(rat_floor(a / b));
}

inline Rational ceil_div(const Rational& a, const Rational& b) {
  if (b == 0) throw DivisionByZero("ceil_div: zero divisor");
  return Rational(rat_ceil(a / b));
}

// Euclidean division over rationals: the unique integer q with
// a = q*b + r and 0 <= r < |b|.
inline Rational euclid_quot(const Rational& a, const Rational& b) {
  if (b == 0) throw DivisionByZero("euclid_quot: zero divisor");
  return b > 0 ? Rational(rat_floor(a / b)) : Rational(rat_ceil(a / b));
}

inline Rational euclid_rem(const Rational& a, const Rational& b) {
  if (b == 0) throw DivisionByZero("euclid_rem: zero divisor");
  return a - euclid_quot(a, b) * b;
}

inline bool is_integer(const Rational& x) { return denominator(x) == 1; }

// Safe construction from an arbitrary numerator/denominator pair; unlike the
// cpp_rational constructor this accepts a negative denominator.
inline Rational make_rational(BigInt n, BigInt d) {
  if (d == 0) throw DivisionByZero("make_rational: zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  return Rational(n, d);
}

// "n" when the value is an integer, "n/d" otherwise.
inline std::string to_string(const Rational& x) {
  std::string s = numerator(x).str();
  if (denominator(x) != 1) {
    s += '/';
    s += denominator(x).str();
  }
  return s;
}

inline double to_double(const Rational& x) { return x.convert_to<double>(); }

// Exact conversion; every finite binary64 is a dyadic rational.
inline Rational rational_from_double(double v) {
  if (!std::isfinite(v))
    throw std::invalid_argument("rational_from_double: non-finite value");
  int exp = 0;
  double frac = std::frexp(v, &exp);  // v = frac * 2^exp, |frac| in [0.5, 1)
  // 53 doublings make the mantissa integral.
  BigInt mant = static_cast<long long>(std::ldexp(frac, 53));
  int e2 = exp - 53;
  Rational r(mant);
  if (e2 > 0)
    r *= Rational(BigInt(1) << e2);
  else if (e2 < 0)
    r /= Rational(BigInt(1) << -e2);
  return r;
}

// Accepts "n", "n/d", and decimal "i.f" forms, each with an optional
// leading '-'.  Decimals convert exactly (p/10^k).  Throws
// std::invalid_argument on anything else, including a zero denominator.
inline Rational parse_rational(std::string_view text) {
  auto fail = [&](const char* why) {
    throw std::invalid_argument("bad rational literal '" + std::string(text) +
                                "': " + why);
  };
  if (text.empty()) fail("empty");
  std::size_t pos = 0;
  bool negative = false;
  if (text[pos] == '-') {
    negative = true;
    ++pos;
  }
  auto read_digits = [&]() -> std::string {
    std::size_t start = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
    if (pos == start) fail("expected digits");
    return std::string(text.substr(start, pos - start));
  };
  std::string ipart = read_digits();
  Rational value;
  if (pos < text.size() && text[pos] == '/') {
    ++pos;
    std::string den = read_digits();
    if (pos != text.size()) fail("trailing characters");
    BigInt d(den);
    if (d == 0) fail("zero denominator");
    value = Rational(BigInt(ipart), d);
  } else if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::string fpart = read_digits();
    if (pos != text.size()) fail("trailing characters");
    BigInt scale = 1;
    for (std::size_t i = 0; i < fpart.size(); ++i) scale *= 10;
    value = Rational(BigInt(ipart) * scale + BigInt(fpart), scale);
  } else {
    if (pos != text.size()) fail("trailing characters");
    value = Rational(BigInt(ipart));
  }
  return negative ? Rational(-value) : value;
}

}  // namespace ratprog
