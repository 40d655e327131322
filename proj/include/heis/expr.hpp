#pragma once

// Arithmetic expressions over x, y, t.
//
//   map    := expr ',' expr ',' expr
//   expr   := term (('+' | '-') term)*
//   term   := unary (('*' | '/') unary)*
//   unary  := ('+' | '-') unary | power
//   power  := atom ('^' unary)?
//   atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//
// Functions: sin cos exp log sqrt abs. Constant: pi. '^' is right associative
// and binds tighter than unary minus, so -x^2 is -(x^2).

#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "heis/errors.hpp"
#include "heis/point.hpp"

namespace heis {

class Expr {
 public:
  enum class Op { Num, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Log, Sqrt, Abs };

  struct Node {
    Op op;
    double value = 0.0;  // Num
    int var = 0;         // Var: 0 = x, 1 = y, 2 = t
    int a = -1;
    int b = -1;
  };

  Expr() : Expr(constant(0.0)) {}

  static Expr constant(double v) {
    Expr e(std::make_shared<std::vector<Node>>());
    e.root_ = e.push({Op::Num, v});
    return e;
  }

  /// Parses a single expression; the whole input must be consumed.
  static Expr parse(std::string_view src);

  double operator()(double x, double y, double t) const noexcept {
    const std::array<double, 3> v{x, y, t};
    return eval(root_, v);
  }
  double operator()(const Point& p) const noexcept { return (*this)(p.x, p.y, p.t); }

  /// Symbolic partial derivative with respect to variable 0, 1 or 2.
  Expr derivative(int var) const {
    Expr out(std::make_shared<std::vector<Node>>());
    out.root_ = diff(out, root_, var);
    return out;
  }

  bool depends_on(int var) const noexcept { return depends(root_, var); }

  std::string str() const { return print(root_); }

 private:
  friend class ExprParser;

  explicit Expr(std::shared_ptr<std::vector<Node>> nodes) : nodes_(std::move(nodes)) {}

  int push(Node n) {
    nodes_->push_back(n);
    return static_cast<int>(nodes_->size()) - 1;
  }

  double eval(int i, const std::array<double, 3>& v) const noexcept {
    const Node& n = (*nodes_)[i];
    switch (n.op) {
      case Op::Num: return n.value;
      case Op::Var: return v[n.var];
      case Op::Neg: return -eval(n.a, v);
      case Op::Add: return eval(n.a, v) + eval(n.b, v);
      case Op::Sub: return eval(n.a, v) - eval(n.b, v);
      case Op::Mul: return eval(n.a, v) * eval(n.b, v);
      case Op::Div: return eval(n.a, v) / eval(n.b, v);
      case Op::Pow: {
        const Node& e = (*nodes_)[n.b];
        const double base = eval(n.a, v);
        if (e.op == Op::Num && e.value == std::round(e.value) && std::abs(e.value) <= 64) {
          // Integer powers of negative bases are common (x^3).
          double r = 1.0;
          const int k = static_cast<int>(std::abs(e.value));
          for (int j = 0; j < k; ++j) r *= base;
          return e.value < 0 ? 1.0 / r : r;
        }
        return std::pow(base, eval(n.b, v));
      }
      case Op::Sin: return std::sin(eval(n.a, v));
      case Op::Cos: return std::cos(eval(n.a, v));
      case Op::Exp: return std::exp(eval(n.a, v));
      case Op::Log: return std::log(eval(n.a, v));
      case Op::Sqrt: return std::sqrt(eval(n.a, v));
      case Op::Abs: return std::abs(eval(n.a, v));
    }
    return 0.0;
  }

  bool depends(int i, int var) const noexcept {
    const Node& n = (*nodes_)[i];
    if (n.op == Op::Var) return n.var == var;
    if (n.op == Op::Num) return false;
    return depends(n.a, var) || (n.b >= 0 && depends(n.b, var));
  }

  // Copies subtree i of this expression into out.
  int copy(Expr& out, int i) const {
    const Node& n = (*nodes_)[i];
    Node m = n;
    if (n.a >= 0) m.a = copy(out, n.a);
    if (n.b >= 0) m.b = copy(out, n.b);
    return out.push(m);
  }

  static bool is_num(const Expr& e, int i, double v) {
    const Node& n = (*e.nodes_)[i];
    return n.op == Op::Num && n.value == v;
  }

  static int mk(Expr& out, Op op, int a, int b = -1) {
    // Light folding keeps derivatives readable.
    if (op == Op::Mul) {
      if (is_num(out, a, 0.0) || is_num(out, b, 0.0)) return out.push({Op::Num, 0.0});
      if (is_num(out, a, 1.0)) return b;
      if (is_num(out, b, 1.0)) return a;
    }
    if (op == Op::Add) {
      if (is_num(out, a, 0.0)) return b;
      if (is_num(out, b, 0.0)) return a;
    }
    if (op == Op::Sub && is_num(out, b, 0.0)) return a;
    if (op == Op::Sub && is_num(out, a, 0.0)) return mk(out, Op::Neg, b);
    if (op == Op::Neg && is_num(out, a, 0.0)) return a;
    if (op == Op::Div && is_num(out, a, 0.0)) return a;
    Node n{op};
    n.a = a;
    n.b = b;
    return out.push(n);
  }

  static int num(Expr& out, double v) { return out.push({Op::Num, v}); }

  int diff(Expr& out, int i, int var) const {
    const Node& n = (*nodes_)[i];
    if (!depends(i, var)) return num(out, 0.0);
    switch (n.op) {
      case Op::Num: return num(out, 0.0);
      case Op::Var: return num(out, 1.0);
      case Op::Neg: return mk(out, Op::Neg, diff(out, n.a, var));
      case Op::Add: return mk(out, Op::Add, diff(out, n.a, var), diff(out, n.b, var));
      case Op::Sub: return mk(out, Op::Sub, diff(out, n.a, var), diff(out, n.b, var));
      case Op::Mul:
        return mk(out, Op::Add, mk(out, Op::Mul, diff(out, n.a, var), copy(out, n.b)),
                  mk(out, Op::Mul, copy(out, n.a), diff(out, n.b, var)));
      case Op::Div: {
        const int num_part = mk(out, Op::Sub, mk(out, Op::Mul, diff(out, n.a, var), copy(out, n.b)),
                                mk(out, Op::Mul, copy(out, n.a), diff(out, n.b, var)));
        return mk(out, Op::Div, num_part, mk(out, Op::Mul, copy(out, n.b), copy(out, n.b)));
      }
      case Op::Pow: {
        if (!depends(n.b, var)) {
          // d(u^c) = c u^(c-1) du
          const int c = copy(out, n.b);
          const int cm1 = mk(out, Op::Sub, copy(out, n.b), num(out, 1.0));
          return mk(out, Op::Mul, mk(out, Op::Mul, c, mk(out, Op::Pow, copy(out, n.a), cm1)), diff(out, n.a, var));
        }
        // d(u^w) = u^w (w' log u + w u'/u)
        const int uw = copy(out, i);
        const int t1 = mk(out, Op::Mul, diff(out, n.b, var), mk(out, Op::Log, copy(out, n.a)));
        const int t2 = mk(out, Op::Div, mk(out, Op::Mul, copy(out, n.b), diff(out, n.a, var)), copy(out, n.a));
        return mk(out, Op::Mul, uw, mk(out, Op::Add, t1, t2));
      }
      case Op::Sin: return mk(out, Op::Mul, mk(out, Op::Cos, copy(out, n.a)), diff(out, n.a, var));
      case Op::Cos:
        return mk(out, Op::Neg, mk(out, Op::Mul, mk(out, Op::Sin, copy(out, n.a)), diff(out, n.a, var)));
      case Op::Exp: return mk(out, Op::Mul, copy(out, i), diff(out, n.a, var));
      case Op::Log: return mk(out, Op::Div, diff(out, n.a, var), copy(out, n.a));
      case Op::Sqrt:
        return mk(out, Op::Div, diff(out, n.a, var), mk(out, Op::Mul, num(out, 2.0), copy(out, i)));
      case Op::Abs: {
        // sign(u) du, written as u/|u| du.
        return mk(out, Op::Mul, mk(out, Op::Div, copy(out, n.a), copy(out, i)), diff(out, n.a, var));
      }
    }
    return num(out, 0.0);
  }

  std::string print(int i) const {
    const Node& n = (*nodes_)[i];
    auto bin = [&](const char* op) { return "(" + print(n.a) + " " + op + " " + print(n.b) + ")"; };
    auto fn = [&](const char* name) { return std::string(name) + "(" + print(n.a) + ")"; };
    switch (n.op) {
      case Op::Num: {
        std::ostringstream os;
        os.precision(17);
        os << n.value;
        return os.str();
      }
      case Op::Var: return n.var == 0 ? "x" : n.var == 1 ? "y" : "t";
      case Op::Neg: return "(-" + print(n.a) + ")";
      case Op::Add: return bin("+");
      case Op::Sub: return bin("-");
      case Op::Mul: return bin("*");
      case Op::Div: return bin("/");
      case Op::Pow: return bin("^");
      case Op::Sin: return fn("sin");
      case Op::Cos: return fn("cos");
      case Op::Exp: return fn("exp");
      case Op::Log: return fn("log");
      case Op::Sqrt: return fn("sqrt");
      case Op::Abs: return fn("abs");
    }
    return "?";
  }

  std::shared_ptr<std::vector<Node>> nodes_;
  int root_ = 0;
};

class ExprParser {
 public:
  explicit ExprParser(std::string_view src) : src_(src) {}

  Expr parse_one() {
    Expr e(std::make_shared<std::vector<Expr::Node>>());
    e.root_ = expr(e);
    skip();
    if (pos_ != src_.size()) throw ParseError(pos_, "end of input");
    return e;
  }

  std::array<Expr, 3> parse_triple() {
    std::array<Expr, 3> out;
    for (int k = 0; k < 3; ++k) {
      Expr e(std::make_shared<std::vector<Expr::Node>>());
      e.root_ = expr(e);
      out[k] = e;
      skip();
      if (k < 2) {
        if (pos_ >= src_.size() || src_[pos_] != ',') throw ParseError(pos_, "','");
        ++pos_;
      }
    }
    if (pos_ != src_.size()) throw ParseError(pos_, "end of input");
    return out;
  }

 private:
  using Op = Expr::Op;

  void skip() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  int binary(Expr& e, Op op, int a, int b) {
    Expr::Node n{op};
    n.a = a;
    n.b = b;
    return e.push(n);
  }

  int expr(Expr& e) {
    int lhs = term(e);
    for (;;) {
      if (accept('+')) lhs = binary(e, Op::Add, lhs, term(e));
      else if (accept('-')) lhs = binary(e, Op::Sub, lhs, term(e));
      else return lhs;
    }
  }

  int term(Expr& e) {
    int lhs = unary(e);
    for (;;) {
      if (accept('*')) lhs = binary(e, Op::Mul, lhs, unary(e));
      else if (accept('/')) lhs = binary(e, Op::Div, lhs, unary(e));
      else return lhs;
    }
  }

  int unary(Expr& e) {
    if (accept('+')) return unary(e);
    if (accept('-')) return binary(e, Op::Neg, unary(e), -1);
    return power(e);
  }

  int power(Expr& e) {
    const int base = atom(e);
    if (accept('^')) return binary(e, Op::Pow, base, unary(e));
    return base;
  }

  int atom(Expr& e) {
    skip();
    if (pos_ >= src_.size()) throw ParseError(pos_, "number, identifier or '('");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      const int inner = expr(e);
      if (!accept(')')) throw ParseError(pos_, "')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const std::string rest(src_.substr(pos_));
      char* end = nullptr;
      const double v = std::strtod(rest.c_str(), &end);
      if (end == rest.c_str()) throw ParseError(pos_, "number");
      pos_ += static_cast<std::size_t>(end - rest.c_str());
      return e.push({Op::Num, v});
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        ++pos_;
      }
      const std::string name(src_.substr(start, pos_ - start));
      if (name == "x" || name == "y" || name == "t") {
        Expr::Node n{Op::Var};
        n.var = name == "x" ? 0 : name == "y" ? 1 : 2;
        return e.push(n);
      }
      if (name == "pi") return e.push({Op::Num, std::numbers::pi});
      Op fn;
      if (name == "sin") fn = Op::Sin;
      else if (name == "cos") fn = Op::Cos;
      else if (name == "exp") fn = Op::Exp;
      else if (name == "log") fn = Op::Log;
      else if (name == "sqrt") fn = Op::Sqrt;
      else if (name == "abs") fn = Op::Abs;
      else throw NameError(start, name);
      if (!accept('(')) throw ParseError(pos_, "'(' after " + name);
      const int arg = expr(e);
      if (!accept(')')) throw ParseError(pos_, "')'");
      return binary(e, fn, arg, -1);
    }
    throw ParseError(pos_, "number, identifier or '('");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

inline Expr Expr::parse(std::string_view src) { return ExprParser(src).parse_one(); }

/// Parses "fx, fy, ft".
inline std::array<Expr, 3> parse_expr_triple(std::string_view src) { return ExprParser(src).parse_triple(); }

}  // namespace heis
