#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include "fuio/errors.hpp"

namespace fuio {

namespace detail {

// expr    := term (('+'|'-') term)*
// term    := unary (('*'|'/') unary)*
// unary   := '-' unary | primary
// primary := number | 't' | ("sin"|"cos"|"exp") '(' expr ')' | '(' expr ')'
struct ExprNode {
    enum class Kind { number, time, neg, add, sub, mul, div, sin, cos, exp };

    Kind kind;
    double value = 0.0;  // number only
    std::shared_ptr<const ExprNode> lhs;
    std::shared_ptr<const ExprNode> rhs;  // binary only
};

using NodePtr = std::shared_ptr<const ExprNode>;

inline NodePtr make_number(double v) {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::number;
    n->value = v;
    return n;
}

inline NodePtr make_node(ExprNode::Kind k, NodePtr lhs, NodePtr rhs = nullptr) {
    auto n = std::make_shared<ExprNode>();
    n->kind = k;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    return n;
}

inline double eval_node(const ExprNode& n, double t) {
    using K = ExprNode::Kind;
    switch (n.kind) {
        case K::number: return n.value;
        case K::time: return t;
        case K::neg: return -eval_node(*n.lhs, t);
        case K::add: return eval_node(*n.lhs, t) + eval_node(*n.rhs, t);
        case K::sub: return eval_node(*n.lhs, t) - eval_node(*n.rhs, t);
        case K::mul: return eval_node(*n.lhs, t) * eval_node(*n.rhs, t);
        case K::div: {
            const double d = eval_node(*n.rhs, t);
            if (d == 0.0) throw EvalError("division by zero", t);
            return eval_node(*n.lhs, t) / d;
        }
        case K::sin: return std::sin(eval_node(*n.lhs, t));
        case K::cos: return std::cos(eval_node(*n.lhs, t));
        case K::exp: return std::exp(eval_node(*n.lhs, t));
    }
    throw Error("corrupt expression node");
}

inline bool depends_on_time(const ExprNode& n) {
    using K = ExprNode::Kind;
    if (n.kind == K::time) return true;
    if (n.kind == K::number) return false;
    if (depends_on_time(*n.lhs)) return true;
    return n.rhs && depends_on_time(*n.rhs);
}

// Collapses every t-free subtree into a literal. Division by zero inside a
// constant subtree is left unfolded so eval can report it with its t.
inline NodePtr fold_node(const NodePtr& n) {
    using K = ExprNode::Kind;
    if (n->kind == K::number || n->kind == K::time) return n;
    NodePtr lhs = fold_node(n->lhs);
    NodePtr rhs = n->rhs ? fold_node(n->rhs) : nullptr;
    const bool folded_const = lhs->kind == K::number && (!rhs || rhs->kind == K::number);
    if (folded_const && !(n->kind == K::div && rhs->value == 0.0)) {
        ExprNode tmp;
        tmp.kind = n->kind;
        tmp.lhs = lhs;
        tmp.rhs = rhs;
        return make_number(eval_node(tmp, 0.0));
    }
    if (lhs == n->lhs && rhs == n->rhs) return n;
    return make_node(n->kind, std::move(lhs), std::move(rhs));
}

inline int precedence(ExprNode::Kind k) {
    using K = ExprNode::Kind;
    switch (k) {
        case K::add:
        case K::sub: return 1;
        case K::mul:
        case K::div: return 2;
        case K::neg: return 3;
        default: return 4;  // atoms and calls never need parentheses
    }
}

inline void print_node(const ExprNode& n, std::string& out) {
    using K = ExprNode::Kind;
    auto child = [&out](const ExprNode& c, int min_prec) {
        if (precedence(c.kind) < min_prec) {
            out += '(';
            print_node(c, out);
            out += ')';
        } else {
            print_node(c, out);
        }
    };
    switch (n.kind) {
        case K::number: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", n.value);
            out += buf;
            return;
        }
        case K::time: out += 't'; return;
        case K::neg:
            out += '-';
            child(*n.lhs, precedence(K::neg));
            return;
        case K::add:
        case K::sub:
            child(*n.lhs, 1);
            out += (n.kind == K::add) ? '+' : '-';
            // right operand needs strictly higher precedence (left associativity)
            child(*n.rhs, 2);
            return;
        case K::mul:
        case K::div:
            child(*n.lhs, 2);
            out += (n.kind == K::mul) ? '*' : '/';
            child(*n.rhs, 3);
            return;
        case K::sin: out += "sin("; break;
        case K::cos: out += "cos("; break;
        case K::exp: out += "exp("; break;
    }
    print_node(*n.lhs, out);
    out += ')';
}

class ExprParser {
public:
    explicit ExprParser(std::string_view text) : text_(text) {}

    NodePtr parse() {
        if (text_.empty()) throw ParseError("empty expression", 0);
        NodePtr root = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
        return root;
    }

private:
    using K = ExprNode::Kind;

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            skip_ws();
            if (accept('+')) {
                lhs = make_node(K::add, std::move(lhs), parse_term());
            } else if (accept('-')) {
                lhs = make_node(K::sub, std::move(lhs), parse_term());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            skip_ws();
            if (accept('*')) {
                lhs = make_node(K::mul, std::move(lhs), parse_unary());
            } else if (accept('/')) {
                lhs = make_node(K::div, std::move(lhs), parse_unary());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_unary() {
        skip_ws();
        if (accept('-')) return make_node(K::neg, parse_unary());
        return parse_primary();
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of expression", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            const std::size_t open = pos_++;
            NodePtr inner = parse_expr();
            skip_ws();
            if (!accept(')')) throw ParseError("unbalanced parenthesis", open);
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_identifier();
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    NodePtr parse_number() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (pos_ < text_.size() && text_[pos_] == '.') {
            ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        }
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                pos_ = mark;  // 'e' was not an exponent; leave it for the identifier scanner
            } else {
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            }
        }
        double value = 0.0;
        const auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (res.ec != std::errc() || res.ptr != text_.data() + pos_)
            throw ParseError("malformed number", start);
        return make_number(value);
    }

    NodePtr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        const std::string_view name = text_.substr(start, pos_ - start);
        if (name == "t") return make_node(K::time, nullptr);
        K fn;
        if (name == "sin") fn = K::sin;
        else if (name == "cos") fn = K::cos;
        else if (name == "exp") fn = K::exp;
        else throw ParseError("unknown identifier '" + std::string(name) + "'", start);
        skip_ws();
        if (!accept('(')) throw ParseError("expected '(' after function name", pos_);
        NodePtr arg = parse_expr();
        skip_ws();
        if (!accept(')')) throw ParseError("unbalanced parenthesis", start);
        return make_node(fn, std::move(arg));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Immutable scalar expression of time. Values are cheap to copy and safe to
// share across threads.
class TimeExpr {
public:
    TimeExpr() : root_(detail::make_number(0.0)) {}

    static TimeExpr constant(double v) { return TimeExpr(detail::make_number(v)); }
    static TimeExpr time() { return TimeExpr(detail::make_node(detail::ExprNode::Kind::time, nullptr)); }

    double eval(double t) const { return detail::eval_node(*root_, t); }
    double operator()(double t) const { return eval(t); }

    bool depends_on_time() const { return detail::depends_on_time(*root_); }

    // Constant-fold every t-free subtree.
    TimeExpr folded() const { return TimeExpr(detail::fold_node(root_)); }

    // Structural zero: the constant-folded tree is the literal 0.
    bool is_structurally_zero() const {
        const auto f = detail::fold_node(root_);
        return f->kind == detail::ExprNode::Kind::number && f->value == 0.0;
    }

    std::string to_string() const {
        std::string out;
        detail::print_node(*root_, out);
        return out;
    }

    const detail::ExprNode& root() const { return *root_; }

private:
    friend TimeExpr parse_time_expr(std::string_view);
    explicit TimeExpr(detail::NodePtr root) : root_(std::move(root)) {}

    detail::NodePtr root_;
};

inline TimeExpr parse_time_expr(std::string_view text) {
    return TimeExpr(detail::ExprParser(text).parse());
}

}  // namespace fuio
