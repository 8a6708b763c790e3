#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "rdinv/errors.hpp"

namespace rdinv {

/// Malformed expression; `position` is the 0-based offset of the offending character.
class ExpressionError : public ConfigError {
public:
    ExpressionError(const std::string& what, std::size_t position)
        : ConfigError(what + " at position " + std::to_string(position)), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Values bound to the variables an expression may use.
struct Variables {
    double x = 0.0;
    double u = 0.0;
    double t = 0.0;
};

/// Small arithmetic language for ground-truth declarations:
///   numbers, `pi`, variables x, u, t, binary + - * / ^ (right associative),
///   unary minus, parentheses and the functions sin, cos, exp, abs.
/// `^` binds tighter than unary minus, so -x^2 = -(x^2).
class Expression {
public:
    static Expression parse(std::string_view text);

    double operator()(const Variables& v) const;
    double eval_x(double x) const { return (*this)(Variables{x, 0.0, 0.0}); }
    double eval_u(double u) const { return (*this)(Variables{0.0, u, 0.0}); }
    double eval_xt(double x, double t) const { return (*this)(Variables{x, 0.0, t}); }

    const std::string& text() const noexcept { return text_; }
    bool uses_x() const noexcept { return uses_ & 1u; }
    bool uses_u() const noexcept { return uses_ & 2u; }
    bool uses_t() const noexcept { return uses_ & 4u; }

    struct Node;

private:
    Expression(std::string text, std::shared_ptr<const Node> root, unsigned uses)
        : text_(std::move(text)), root_(std::move(root)), uses_(uses) {}

    std::string text_;
    std::shared_ptr<const Node> root_;
    unsigned uses_;
};

}  // namespace rdinv
