#include "rdinv/expression.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <vector>

namespace rdinv {

struct Expression::Node {
    enum class Kind { Number, VarX, VarU, VarT, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Abs };
    Kind kind;
    double value = 0.0;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
};

namespace {

using Node = Expression::Node;
using NodePtr = std::shared_ptr<const Node>;

NodePtr make(Node::Kind k, NodePtr l = nullptr, NodePtr r = nullptr, double v = 0.0) {
    return std::make_shared<const Node>(Node{k, v, std::move(l), std::move(r)});
}

class Parser {
public:
    explicit Parser(std::string_view s) : s_(s) {}

    NodePtr parse() {
        NodePtr root = expr();
        skip();
        if (pos_ != s_.size()) {
            throw ExpressionError("unexpected '" + std::string(1, s_[pos_]) + "'", pos_);
        }
        return root;
    }

    unsigned uses() const noexcept { return uses_; }

private:
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) {
            ++pos_;
        }
    }

    bool accept(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    // expr := term (('+' | '-') term)*
    NodePtr expr() {
        NodePtr left = term();
        for (;;) {
            if (accept('+')) {
                left = make(Node::Kind::Add, left, term());
            } else if (accept('-')) {
                left = make(Node::Kind::Sub, left, term());
            } else {
                return left;
            }
        }
    }

    // term := unary (('*' | '/') unary)*
    NodePtr term() {
        NodePtr left = unary();
        for (;;) {
            if (accept('*')) {
                left = make(Node::Kind::Mul, left, unary());
            } else if (accept('/')) {
                left = make(Node::Kind::Div, left, unary());
            } else {
                return left;
            }
        }
    }

    // unary := ('-' | '+') unary | power
    NodePtr unary() {
        if (accept('-')) {
            return make(Node::Kind::Neg, unary());
        }
        if (accept('+')) {
            return unary();
        }
        return power();
    }

    // power := primary ('^' unary)?
    NodePtr power() {
        NodePtr base = primary();
        if (accept('^')) {
            return make(Node::Kind::Pow, base, unary());
        }
        return base;
    }

    NodePtr primary() {
        skip();
        if (pos_ >= s_.size()) {
            throw ExpressionError("unexpected end of expression", pos_);
        }
        const char c = s_[pos_];
        if (c == '(') {
            const std::size_t open = pos_++;
            NodePtr inner = expr();
            if (!accept(')')) {
                throw ExpressionError("unclosed '('", open);
            }
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            return number();
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            return name();
        }
        throw ExpressionError("unexpected '" + std::string(1, c) + "'", pos_);
    }

    NodePtr number() {
        const std::size_t start = pos_;
        double v = 0.0;
        const auto [end, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
        if (ec != std::errc()) {
            throw ExpressionError("malformed number", start);
        }
        pos_ = static_cast<std::size_t>(end - s_.data());
        return make(Node::Kind::Number, nullptr, nullptr, v);
    }

    NodePtr name() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) {
            ++pos_;
        }
        const std::string_view id = s_.substr(start, pos_ - start);
        if (id == "x") {
            uses_ |= 1u;
            return make(Node::Kind::VarX);
        }
        if (id == "u") {
            uses_ |= 2u;
            return make(Node::Kind::VarU);
        }
        if (id == "t") {
            uses_ |= 4u;
            return make(Node::Kind::VarT);
        }
        if (id == "pi") {
            return make(Node::Kind::Number, nullptr, nullptr, std::numbers::pi);
        }
        Node::Kind fn;
        if (id == "sin") {
            fn = Node::Kind::Sin;
        } else if (id == "cos") {
            fn = Node::Kind::Cos;
        } else if (id == "exp") {
            fn = Node::Kind::Exp;
        } else if (id == "abs") {
            fn = Node::Kind::Abs;
        } else {
            throw ExpressionError("unknown name '" + std::string(id) + "'", start);
        }
        if (!accept('(')) {
            throw ExpressionError("expected '(' after " + std::string(id), pos_);
        }
        NodePtr arg = expr();
        if (!accept(')')) {
            throw ExpressionError("expected ')'", pos_);
        }
        return make(fn, arg);
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    unsigned uses_ = 0;
};

double eval(const Node& n, const Variables& v) {
    using K = Node::Kind;
    switch (n.kind) {
    case K::Number: return n.value;
    case K::VarX: return v.x;
    case K::VarU: return v.u;
    case K::VarT: return v.t;
    case K::Neg: return -eval(*n.lhs, v);
    case K::Add: return eval(*n.lhs, v) + eval(*n.rhs, v);
    case K::Sub: return eval(*n.lhs, v) - eval(*n.rhs, v);
    case K::Mul: return eval(*n.lhs, v) * eval(*n.rhs, v);
    case K::Div: return eval(*n.lhs, v) / eval(*n.rhs, v);
    case K::Pow: return std::pow(eval(*n.lhs, v), eval(*n.rhs, v));
    case K::Sin: return std::sin(eval(*n.lhs, v));
    case K::Cos: return std::cos(eval(*n.lhs, v));
    case K::Exp: return std::exp(eval(*n.lhs, v));
    case K::Abs: return std::abs(eval(*n.lhs, v));
    }
    return 0.0;
}

}  // namespace

Expression Expression::parse(std::string_view text) {
    Parser p(text);
    NodePtr root = p.parse();
    return Expression(std::string(text), std::move(root), p.uses());
}

double Expression::operator()(const Variables& v) const {
    return eval(*root_, v);
}

}  // namespace rdinv
