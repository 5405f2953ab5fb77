#include <catch2/catch_amalgamated.hpp>

#include "ratprog/rational.hpp"

using namespace ratprog;

TEST_CASE("rationals are canonical", "[rational]") {
  CHECK(Rational(2, 4) == Rational(1, 2));
  CHECK(Rational(-2, 4) == Rational(-1, 2));
  CHECK(Rational(0, 7) == Rational(0));
  CHECK(denominator(make_rational(3, -6)) == 2);  // sign moves to numerator
  CHECK(numerator(make_rational(3, -6)) == -1);
  CHECK_THROWS_AS(make_rational(1, 0), DivisionByZero);
  Rational sum = Rational(1, 3) + Rational(1, 6);
  CHECK(sum == Rational(1, 2));
  CHECK(to_string(sum) == "1/2");
  CHECK(to_string(Rational(4, 2)) == "2");
  CHECK(to_string(Rational(-22, 7)) == "-22/7");
}

TEST_CASE("floor and ceiling match mathematical convention", "[rational]") {
  CHECK(rat_floor(Rational(7, 2)) == 3);
  CHECK(rat_ceil(Rational(7, 2)) == 4);
  CHECK(rat_floor(Rational(-7, 2)) == -4);
  CHECK(rat_ceil(Rational(-7, 2)) == -3);
  CHECK(rat_floor(Rational(6)) == 6);
  CHECK(rat_ceil(Rational(6)) == 6);
  CHECK(rat_floor(Rational(-6)) == -6);
}

TEST_CASE("floor_div and ceil_div", "[rational]") {
  CHECK(floor_div(Rational(7), Rational(2)) == 3);
  CHECK(ceil_div(Rational(7), Rational(2)) == 4);
  CHECK(floor_div(Rational(-7), Rational(2)) == -4);
  CHECK(ceil_div(Rational(-7), Rational(2)) == -3);
  CHECK(floor_div(Rational(7), Rational(-2)) == -4);
  CHECK(floor_div(Rational(8), Rational(2)) == 4);
  // Rational operands are allowed: floor((7/2)/(1/3)) = floor(10.5) = 10.
  CHECK(floor_div(Rational(7, 2), Rational(1, 3)) == 10);
  CHECK_THROWS_AS(floor_div(Rational(1), Rational(0)), DivisionByZero);
  CHECK_THROWS_AS(ceil_div(Rational(1), Rational(0)), DivisionByZero);
}

TEST_CASE("euclidean division leaves a remainder in [0, |b|)", "[rational]") {
  // 7 = 3*2 + 1
  CHECK(euclid_quot(Rational(7), Rational(2)) == 3);
  CHECK(euclid_rem(Rational(7), Rational(2)) == 1);
  // -7 = -4*2 + 1
  CHECK(euclid_quot(Rational(-7), Rational(2)) == -4);
  CHECK(euclid_rem(Rational(-7), Rational(2)) == 1);
  // 7 = -3*-2 + 1
  CHECK(euclid_quot(Rational(7), Rational(-2)) == -3);
  CHECK(euclid_rem(Rational(7), Rational(-2)) == 1);
  // -7 = 4*-2 + 1
  CHECK(euclid_quot(Rational(-7), Rational(-2)) == 4);
  CHECK(euclid_rem(Rational(-7), Rational(-2)) == 1);
  // Rational operands: 7/2 = 10*(1/3) + 1/6, with 0 <= 1/6 < 1/3.
  CHECK(euclid_quot(Rational(7, 2), Rational(1, 3)) == 10);
  CHECK(euclid_rem(Rational(7, 2), Rational(1, 3)) == Rational(1, 6));
  CHECK_THROWS_AS(euclid_quot(Rational(5), Rational(0)), DivisionByZero);
  CHECK_THROWS_AS(euclid_rem(Rational(5), Rational(0)), DivisionByZero);

  // Property sweep: remainder range and reconstruction identity.
  for (int an = -20; an <= 20; ++an)
    for (int bd = 1; bd <= 4; ++bd)
      for (int bn = -9; bn <= 9; ++bn) {
        if (bn == 0) continue;
        Rational a(an, 3), b(bn, bd);
        Rational q = euclid_quot(a, b), r = euclid_rem(a, b);
        REQUIRE(is_integer(q));
        REQUIRE(r >= 0);
        REQUIRE(r < abs(b));
        REQUIRE(q * b + r == a);
      }
}

TEST_CASE("parse_rational handles integer, fraction and decimal forms",
          "[rational]") {
  CHECK(parse_rational("22/7") == Rational(22, 7));
  CHECK(parse_rational("-3/2") == Rational(-3, 2));
  CHECK(parse_rational("7") == Rational(7));
  CHECK(parse_rational("-7") == Rational(-7));
  CHECK(parse_rational("4/2") == Rational(2));  // canonicalizes
  CHECK(parse_rational("0") == Rational(0));
  CHECK(parse_rational("1.25") == Rational(5, 4));
  CHECK(parse_rational("-0.5") == Rational(-1, 2));
  CHECK_THROWS_AS(parse_rational("1/0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_rational(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_rational("x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_rational("1/2/3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_rational("1.2.3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_rational("--1"), std::invalid_argument);
}

TEST_CASE("round trip between rationals and text", "[rational]") {
  const char* cases[] = {"0", "1", "-1", "22/7", "-22/7", "123456789/1024"};
  for (const char* c : cases) CHECK(to_string(parse_rational(c)) == c);
}

TEST_CASE("exact conversion from binary64", "[rational]") {
  CHECK(rational_from_double(0.5) == Rational(1, 2));
  CHECK(rational_from_double(-0.75) == Rational(-3, 4));
  CHECK(rational_from_double(3.0) == Rational(3));
  CHECK(rational_from_double(0.0) == Rational(0));
  // 0.1 is not exactly representable; conversion must reproduce the actual
  // binary64 value bit-for-bit.
  Rational tenth = rational_from_double(0.1);
  CHECK(to_double(tenth) == 0.1);
  CHECK(tenth != Rational(1, 10));
  CHECK(to_double(rational_from_double(1e300)) == 1e300);
  CHECK(to_double(rational_from_double(5e-324)) == 5e-324);
  CHECK_THROWS_AS(rational_from_double(std::nan("")), std::invalid_argument);
}
