#pragma once

// Arithmetic expressions over node coordinates.
//
//   expr   := term (('+' | '-') term)*
//   term   := unary (('*' | '/') unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' unary)?
//   atom   := number | 'x' | 'y' | 'pi' | func '(' expr ')' | '(' expr ')'
//   func   := sin | cos | exp | sqrt | abs

#include <cctype>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "errors.hpp"

namespace vdg {

class Expression {
public:
    static Expression parse(const std::string& text) {
        Parser p{text, 0};
        Expression e;
        e.root_ = p.expr();
        p.skip();
        if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
        e.text_ = text;
        return e;
    }

    double operator()(double x, double y = 0.0) const { return eval(*root_, x, y); }
    const std::string& text() const noexcept { return text_; }

private:
    enum class Op { Num, X, Y, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp, Sqrt, Abs };
    struct Node {
        Op op;
        double value = 0.0;
        std::shared_ptr<const Node> a, b;
    };
    using Ptr = std::shared_ptr<const Node>;

    static Ptr make(Op op, Ptr a = nullptr, Ptr b = nullptr, double v = 0.0) {
        return std::make_shared<const Node>(Node{op, v, std::move(a), std::move(b)});
    }

    static double eval(const Node& n, double x, double y) {
        switch (n.op) {
        case Op::Num: return n.value;
        case Op::X: return x;
        case Op::Y: return y;
        case Op::Add: return eval(*n.a, x, y) + eval(*n.b, x, y);
        case Op::Sub: return eval(*n.a, x, y) - eval(*n.b, x, y);
        case Op::Mul: return eval(*n.a, x, y) * eval(*n.b, x, y);
        case Op::Div: return eval(*n.a, x, y) / eval(*n.b, x, y);
        case Op::Pow: return std::pow(eval(*n.a, x, y), eval(*n.b, x, y));
        case Op::Neg: return -eval(*n.a, x, y);
        case Op::Sin: return std::sin(eval(*n.a, x, y));
        case Op::Cos: return std::cos(eval(*n.a, x, y));
        case Op::Exp: return std::exp(eval(*n.a, x, y));
        case Op::Sqrt: return std::sqrt(eval(*n.a, x, y));
        case Op::Abs: return std::abs(eval(*n.a, x, y));
        }
        return 0.0;
    }

    struct Parser {
        const std::string& s;
        std::size_t pos;

        [[noreturn]] void fail(const std::string& msg) const {
            throw DomainError("expression: " + msg + " at column " + std::to_string(pos + 1));
        }
        void skip() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool accept(char c) {
            skip();
            if (pos < s.size() && s[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        }

        Ptr expr() {
            Ptr lhs = term();
            for (;;) {
                if (accept('+')) lhs = make(Op::Add, lhs, term());
                else if (accept('-')) lhs = make(Op::Sub, lhs, term());
                else return lhs;
            }
        }
        Ptr term() {
            Ptr lhs = unary();
            for (;;) {
                if (accept('*')) lhs = make(Op::Mul, lhs, unary());
                else if (accept('/')) lhs = make(Op::Div, lhs, unary());
                else return lhs;
            }
        }
        Ptr unary() {
            if (accept('-')) return make(Op::Neg, unary());
            return power();
        }
        Ptr power() {
            Ptr base = atom();
            if (accept('^')) return make(Op::Pow, base, unary());
            return base;
        }
        Ptr atom() {
            skip();
            if (pos >= s.size()) fail("unexpected end of input");
            const char c = s[pos];
            if (accept('(')) {
                Ptr e = expr();
                if (!accept(')')) fail("expected ')'");
                return e;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                std::size_t used = 0;
                double v = 0.0;
                try {
                    v = std::stod(s.substr(pos), &used);
                } catch (const std::exception&) {
                    fail("bad number");
                }
                pos += used;
                return make(Op::Num, nullptr, nullptr, v);
            }
            if (std::isalpha(static_cast<unsigned char>(c))) {
                const std::size_t start = pos;
                while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos]))) ++pos;
                const std::string id = s.substr(start, pos - start);
                if (id == "x") return make(Op::X);
                if (id == "y") return make(Op::Y);
                if (id == "pi") return make(Op::Num, nullptr, nullptr, std::numbers::pi);
                Op op;
                if (id == "sin") op = Op::Sin;
                else if (id == "cos") op = Op::Cos;
                else if (id == "exp") op = Op::Exp;
                else if (id == "sqrt") op = Op::Sqrt;
                else if (id == "abs") op = Op::Abs;
                else {
                    pos = start;
                    fail("unknown identifier '" + id + "'");
                }
                if (!accept('(')) fail("expected '(' after " + id);
                Ptr arg = expr();
                if (!accept(')')) fail("expected ')'");
                return make(op, arg);
            }
            fail("unexpected '" + std::string(1, c) + "'");
        }
    };

    Ptr root_;
    std::string text_;
};

} // namespace vdg
