#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rdinv/expression.hpp"

using namespace rdinv;

namespace {
double eval(const char* text, double x = 0.0, double u = 0.0, double t = 0.0) {
    return Expression::parse(text)(Variables{x, u, t});
}
}  // namespace

TEST_CASE("arithmetic and precedence") {
    CHECK(eval("1 + 2*3") == 7.0);
    CHECK(eval("(1 + 2)*3") == 9.0);
    CHECK(eval("8/4/2") == 1.0);
    CHECK(eval("2^3^2") == 512.0);
    CHECK(eval("-2^2") == -4.0);
    CHECK(eval("2^-1") == 0.5);
    CHECK(eval("1 - -1") == 2.0);
    CHECK(eval("+3") == 3.0);
    CHECK(eval("1.5e2") == 150.0);
    CHECK(eval(".5") == 0.5);
}

TEST_CASE("functions, constants and variables") {
    CHECK(eval("pi") == std::numbers::pi);
    CHECK(eval("sin(pi/2)") == doctest::Approx(1.0));
    CHECK(eval("cos(0) + exp(0) + abs(-2)") == 4.0);
    CHECK(eval("x*u + t", 2.0, 3.0, 4.0) == 10.0);
    CHECK(eval("1 + 0.1*sin(pi*x)", 0.5) == doctest::Approx(1.1));
    CHECK(eval("x^2*(1-x)^2", 0.5) == doctest::Approx(0.0625));
}

TEST_CASE("variable usage is tracked") {
    const Expression e = Expression::parse("sin(2*u) + t");
    CHECK(e.uses_u());
    CHECK(e.uses_t());
    CHECK_FALSE(e.uses_x());
    CHECK(e.text() == "sin(2*u) + t");
    CHECK(e.eval_u(0.25) == doctest::Approx(std::sin(0.5)));
    CHECK(Expression::parse("x").eval_x(3.0) == 3.0);
    CHECK(Expression::parse("x + t").eval_xt(1.0, 2.0) == 3.0);
}

TEST_CASE("malformed input reports a position") {
    const auto position_of = [](const char* text) -> long {
        try {
            (void)Expression::parse(text);
        } catch (const ExpressionError& e) {
            return static_cast<long>(e.position());
        }
        return -1;
    };
    CHECK(position_of("sin(") == 4);
    CHECK(position_of("1 +") == 3);
    CHECK(position_of("2 * foo") == 4);
    CHECK(position_of("(1 + 2") == 0);
    CHECK(position_of("1 2") == 2);
    CHECK(position_of("sin 1") == 4);
    CHECK(position_of("#") == 0);
    try {
        (void)Expression::parse("sin(");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("at position 4") != std::string::npos);
    }
}
