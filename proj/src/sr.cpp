#include "rdbinn/sr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/rng.hpp"

namespace rdbinn {

int arity(ExprOp op) {
  switch (op) {
    case ExprOp::kConst:
    case ExprOp::kVar: return 0;
    case ExprOp::kNeg:
    case ExprOp::kExp:
    case ExprOp::kSquare:
    case ExprOp::kSqrt: return 1;
    default: return 2;
  }
}

namespace {

constexpr double kDivGuard = 1e-12;

const char* op_label(ExprOp op) {
  switch (op) {
    case ExprOp::kConst: return "const";
    case ExprOp::kVar: return "U";
    case ExprOp::kNeg: return "neg";
    case ExprOp::kExp: return "exp";
    case ExprOp::kSquare: return "square";
    case ExprOp::kSqrt: return "sqrt";
    case ExprOp::kAdd: return "+";
    case ExprOp::kSub: return "-";
    case ExprOp::kMul: return "*";
    case ExprOp::kDiv: return "/";
    case ExprOp::kPow: return "^";
  }
  return "?";
}

bool eval_onto_stack(const Expr& e, double U, std::vector<double>& st, double& out) {
  st.clear();
  for (const ExprNode& n : e.nodes) {
    switch (n.op) {
      case ExprOp::kConst: st.push_back(n.value); break;
      case ExprOp::kVar: st.push_back(U); break;
      case ExprOp::kNeg: st.back() = -st.back(); break;
      case ExprOp::kExp: st.back() = std::exp(st.back()); break;
      case ExprOp::kSquare: st.back() = st.back() * st.back(); break;
      case ExprOp::kSqrt:
        if (st.back() < 0.0) return false;
        st.back() = std::sqrt(st.back());
        break;
      case ExprOp::kAdd:
      case ExprOp::kSub:
      case ExprOp::kMul:
      case ExprOp::kDiv:
      case ExprOp::kPow: {
        const double b = st.back();
        st.pop_back();
        double& a = st.back();
        if (n.op == ExprOp::kAdd) a += b;
        else if (n.op == ExprOp::kSub) a -= b;
        else if (n.op == ExprOp::kMul) a *= b;
        else if (n.op == ExprOp::kDiv) {
          if (std::abs(b) < kDivGuard) return false;
          a /= b;
        } else {
          if (a < 0.0) return false;
          a = std::pow(a, b);
        }
        break;
      }
    }
    if (!std::isfinite(st.back())) return false;
  }
  if (st.size() != 1) throw InputError("expression is not well formed");
  out = st.back();
  return true;
}

std::size_t subtree_begin(const std::vector<ExprNode>& nodes, std::size_t end) {
  std::size_t i = end + 1;
  int count = 1;
  while (count > 0) {
    --i;
    count += arity(nodes[i].op) - 1;
  }
  return i;
}

// ---- Parser ----

struct Parser {
  const std::string& s;
  std::size_t pos = 0;
  std::vector<ExprNode> out;

  explicit Parser(const std::string& text) : s(text) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw InputError("expression error at position " + std::to_string(at + 1) +
                     ": " + msg + " in '" + s + "'");
  }

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'", pos);
  }

  void parse_expr() {
    parse_term();
    for (;;) {
      skip_ws();
      if (eat('+')) {
        parse_term();
        out.push_back({ExprOp::kAdd, 0.0});
      } else if (eat('-')) {
        parse_term();
        out.push_back({ExprOp::kSub, 0.0});
      } else {
        return;
      }
    }
  }

  void parse_term() {
    parse_factor();
    for (;;) {
      skip_ws();
      if (eat('*')) {
        parse_factor();
        out.push_back({ExprOp::kMul, 0.0});
      } else if (eat('/')) {
        parse_factor();
        out.push_back({ExprOp::kDiv, 0.0});
      } else {
        return;
      }
    }
  }

  void parse_factor() {
    skip_ws();
    if (eat('-')) {
      parse_factor();
      out.push_back({ExprOp::kNeg, 0.0});
      return;
    }
    parse_power();
  }

  void parse_power() {
    parse_atom();
    skip_ws();
    if (eat('^')) {
      parse_factor();  // right-associative exponent
      out.push_back({ExprOp::kPow, 0.0});
    }
  }

  void parse_atom() {
    skip_ws();
    if (pos >= s.size()) fail("unexpected end of expression", pos);
    const char c = s[pos];
    if (c == '(') {
      ++pos;
      parse_expr();
      expect(')');
      return;
    }
    if ((c >= '0' && c <= '9') || c == '.') {
      const char* start = s.c_str() + pos;
      char* end = nullptr;
      const double v = std::strtod(start, &end);
      if (end == start) fail("malformed number", pos);
      pos += std::size_t(end - start);
      out.push_back({ExprOp::kConst, v});
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t at = pos;
      std::string name;
      while (pos < s.size() &&
             (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
        name.push_back(s[pos++]);
      if (name == "U") {
        out.push_back({ExprOp::kVar, 0.0});
        return;
      }
      ExprOp op;
      if (name == "exp") op = ExprOp::kExp;
      else if (name == "sqrt") op = ExprOp::kSqrt;
      else if (name == "square") op = ExprOp::kSquare;
      else fail("unknown function or variable '" + name + "'", at);
      expect('(');
      parse_expr();
      expect(')');
      out.push_back({op, 0.0});
      return;
    }
    fail(std::string("unexpected character '") + c + "'", pos);
  }
};

// ---- Printer ----

int op_prec(ExprOp op) {
  switch (op) {
    case ExprOp::kAdd:
    case ExprOp::kSub: return 1;
    case ExprOp::kMul:
    case ExprOp::kDiv: return 2;
    case ExprOp::kNeg: return 3;
    case ExprOp::kPow: return 4;
    default: return 5;
  }
}

std::string print_subtree(const std::vector<ExprNode>& nodes, std::size_t end,
                          int needed) {
  const ExprNode& n = nodes[end];
  std::string text;
  int prec = op_prec(n.op);
  switch (n.op) {
    case ExprOp::kConst:
      text = io::fmt(n.value);
      if (n.value < 0.0) prec = 0;  // force parentheses in any operand position
      break;
    case ExprOp::kVar: text = "U"; break;
    case ExprOp::kNeg:
      text = "-" + print_subtree(nodes, end - 1, 4);
      break;
    case ExprOp::kExp:
    case ExprOp::kSquare:
    case ExprOp::kSqrt:
      text = std::string(op_label(n.op)) + "(" + print_subtree(nodes, end - 1, 0) + ")";
      break;
    default: {
      const std::size_t rhs = end - 1;
      const std::size_t lhs = subtree_begin(nodes, rhs) - 1;
      const bool spaced = n.op == ExprOp::kAdd || n.op == ExprOp::kSub;
      const int lneed = n.op == ExprOp::kPow ? 5 : prec;
      const int rneed = n.op == ExprOp::kPow ? 4 : prec + 1;
      text = print_subtree(nodes, lhs, lneed) +
             (spaced ? std::string(" ") + op_label(n.op) + " " : op_label(n.op)) +
             print_subtree(nodes, rhs, rneed);
      break;
    }
  }
  if (prec < needed) return "(" + text + ")";
  return text;
}

// ---- Normalization ----

using Nodes = std::vector<ExprNode>;

bool is_const(const Nodes& n) { return n.size() == 1 && n[0].op == ExprOp::kConst; }
bool is_neg(const Nodes& n) { return !n.empty() && n.back().op == ExprOp::kNeg; }

Nodes strip_neg(Nodes n) {
  n.pop_back();
  return n;
}

Nodes make_unary(ExprOp op, Nodes a) {
  a.push_back({op, 0.0});
  return a;
}

Nodes make_binary(ExprOp op, Nodes a, const Nodes& b) {
  a.insert(a.end(), b.begin(), b.end());
  a.push_back({op, 0.0});
  return a;
}

// Child ranges of a subtree whose root is a binary operator.
void split_binary(const Nodes& a, Nodes& lhs, Nodes& rhs) {
  const std::size_t rhs_begin = subtree_begin(a, a.size() - 2);
  lhs.assign(a.begin(), a.begin() + std::ptrdiff_t(rhs_begin));
  rhs.assign(a.begin() + std::ptrdiff_t(rhs_begin), a.end() - 1);
}

Nodes norm_subtree(const Nodes& nodes, std::size_t end) {
  const ExprNode& n = nodes[end];
  if (arity(n.op) == 0) return {n};

  if (arity(n.op) == 1) {
    Nodes a = norm_subtree(nodes, end - 1);
    if (n.op == ExprOp::kNeg) {
      if (is_const(a)) return {{ExprOp::kConst, -a[0].value}};
      if (is_neg(a)) return strip_neg(std::move(a));
      if (a.back().op == ExprOp::kSub) {
        Nodes x, y;
        split_binary(a, x, y);
        return make_binary(ExprOp::kSub, std::move(y), x);
      }
      return make_unary(ExprOp::kNeg, std::move(a));
    }
    if (is_const(a)) {
      Expr probe{make_unary(n.op, a)};
      double v;
      if (try_expr_eval(probe, 0.0, v)) return {{ExprOp::kConst, v}};
      return std::move(probe.nodes);
    }
    if (n.op == ExprOp::kSquare && is_neg(a))
      return make_unary(ExprOp::kSquare, strip_neg(std::move(a)));
    // square(exp(x)) -> exp(2*x), sqrt(exp(x)) -> exp(0.5*x): the exponent
    // scale becomes an ordinary constant instead of hiding in the shape.
    if ((n.op == ExprOp::kSquare || n.op == ExprOp::kSqrt) &&
        a.back().op == ExprOp::kExp) {
      Nodes inner(a.begin(), a.end() - 1);
      const double k = n.op == ExprOp::kSquare ? 2.0 : 0.5;
      return make_unary(ExprOp::kExp,
                        make_binary(ExprOp::kMul, {{ExprOp::kConst, k}},
                                    std::move(inner)));
    }
    // Lift constants out of wrappers so equivalent fits share a shape.
    if (!a.empty() && arity(a.back().op) == 2) {
      const ExprOp inner = a.back().op;
      Nodes x, y;
      split_binary(a, x, y);
      if (inner == ExprOp::kMul && (n.op == ExprOp::kSquare || n.op == ExprOp::kSqrt)) {
        if (is_const(y)) std::swap(x, y);
        if (is_const(x)) {
          const double c = x[0].value;
          const double f = n.op == ExprOp::kSquare ? c * c : std::sqrt(c);
          if (std::isfinite(f) && (n.op == ExprOp::kSquare || c > 0.0))
            return make_binary(ExprOp::kMul, {{ExprOp::kConst, f}},
                               make_unary(n.op, std::move(y)));
        }
      }
      if (n.op == ExprOp::kExp && (inner == ExprOp::kAdd || inner == ExprOp::kSub)) {
        // exp(x +/- c) -> e^(+/-c)*exp(x); exp(c - y) -> e^c*exp(-y)
        double c = 0.0;
        Nodes rest;
        bool have = false;
        if (is_const(y)) {
          c = inner == ExprOp::kAdd ? y[0].value : -y[0].value;
          rest = std::move(x);
          have = true;
        } else if (is_const(x)) {
          c = x[0].value;
          rest = inner == ExprOp::kAdd ? std::move(y)
                                       : make_unary(ExprOp::kNeg, std::move(y));
          have = true;
        }
        if (have) {
          const double f = std::exp(c);
          if (std::isfinite(f) && f > 0.0)
            return make_binary(ExprOp::kMul, {{ExprOp::kConst, f}},
                               make_unary(ExprOp::kExp, std::move(rest)));
        }
      }
    }
    return make_unary(n.op, std::move(a));
  }

  const std::size_t rhs_end = end - 1;
  const std::size_t lhs_end = subtree_begin(nodes, rhs_end) - 1;
  Nodes a = norm_subtree(nodes, lhs_end);
  Nodes b = norm_subtree(nodes, rhs_end);

  if (is_const(a) && is_const(b)) {
    Expr probe{make_binary(n.op, a, b)};
    double v;
    if (try_expr_eval(probe, 0.0, v)) return {{ExprOp::kConst, v}};
    return std::move(probe.nodes);
  }

  switch (n.op) {
    case ExprOp::kAdd:
      if (a == b)
        return make_binary(ExprOp::kMul, {{ExprOp::kConst, 2.0}}, std::move(a));
      if (is_neg(b)) return make_binary(ExprOp::kSub, std::move(a), strip_neg(std::move(b)));
      if (is_const(b) && b[0].value < 0.0)
        return make_binary(ExprOp::kSub, std::move(a), {{ExprOp::kConst, -b[0].value}});
      if (is_neg(a)) return make_binary(ExprOp::kSub, std::move(b), strip_neg(std::move(a)));
      if (is_const(a) && a[0].value < 0.0)
        return make_binary(ExprOp::kSub, std::move(b), {{ExprOp::kConst, -a[0].value}});
      break;
    case ExprOp::kSub:
      if (is_neg(b)) return make_binary(ExprOp::kAdd, std::move(a), strip_neg(std::move(b)));
      if (is_const(b) && b[0].value < 0.0)
        return make_binary(ExprOp::kAdd, std::move(a), {{ExprOp::kConst, -b[0].value}});
      break;
    case ExprOp::kMul:
      if (is_const(a) && a[0].value < 0.0)
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kMul, {{ExprOp::kConst, -a[0].value}},
                                      std::move(b)));
      if (is_const(b) && b[0].value < 0.0)
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kMul, std::move(a),
                                      {{ExprOp::kConst, -b[0].value}}));
      if (is_neg(a) && is_neg(b))
        return make_binary(ExprOp::kMul, strip_neg(std::move(a)), strip_neg(std::move(b)));
      if (is_neg(a))
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kMul, strip_neg(std::move(a)), std::move(b)));
      if (is_neg(b))
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kMul, std::move(a), strip_neg(std::move(b))));
      if (a == b) return make_unary(ExprOp::kSquare, std::move(a));
      // c1*(c2*x) -> (c1*c2)*x in any arrangement
      {
        const Nodes* cn = is_const(a) ? &a : is_const(b) ? &b : nullptr;
        const Nodes* mn = is_const(a) ? &b : &a;
        if (cn != nullptr && !mn->empty() && mn->back().op == ExprOp::kMul) {
          Nodes x, y;
          split_binary(*mn, x, y);
          if (is_const(y)) std::swap(x, y);
          if (is_const(x)) {
            const double f = (*cn)[0].value * x[0].value;
            if (std::isfinite(f))
              return make_binary(ExprOp::kMul, {{ExprOp::kConst, f}}, std::move(y));
          }
        }
        // c*(k +/- x) with k constant distributes, so the c*k part folds and
        // the whole tree joins the k' + c*x family. Size-neutral after the
        // fold, so it never inflates complexity.
        if (cn != nullptr && !mn->empty() &&
            (mn->back().op == ExprOp::kAdd || mn->back().op == ExprOp::kSub)) {
          Nodes x, y;
          split_binary(*mn, x, y);
          if (is_const(x) || is_const(y))
            return make_binary(mn->back().op, make_binary(ExprOp::kMul, *cn, x),
                               make_binary(ExprOp::kMul, *cn, y));
        }
      }
      break;
    case ExprOp::kDiv:
      if (is_const(a) && a[0].value < 0.0)
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kDiv, {{ExprOp::kConst, -a[0].value}},
                                      std::move(b)));
      if (is_const(b) && b[0].value < 0.0)
        return make_unary(ExprOp::kNeg,
                          make_binary(ExprOp::kDiv, std::move(a),
                                      {{ExprOp::kConst, -b[0].value}}));
      break;
    default: break;
  }
  return make_binary(n.op, std::move(a), std::move(b));
}

// ---- Template key ----

std::string template_key(const Nodes& nodes, std::size_t end) {
  const ExprNode& n = nodes[end];
  switch (n.op) {
    case ExprOp::kConst: return "C";
    case ExprOp::kVar: return "U";
    case ExprOp::kNeg:
    case ExprOp::kExp:
    case ExprOp::kSquare:
    case ExprOp::kSqrt:
      return std::string(op_label(n.op)) + "(" + template_key(nodes, end - 1) + ")";
    default: {
      const std::size_t rhs = end - 1;
      const std::size_t lhs = subtree_begin(nodes, rhs) - 1;
      std::string a = template_key(nodes, lhs);
      std::string b = template_key(nodes, rhs);
      if ((n.op == ExprOp::kAdd || n.op == ExprOp::kMul) && b < a) std::swap(a, b);
      return "(" + a + op_label(n.op) + b + ")";
    }
  }
}

}  // namespace

bool try_expr_eval(const Expr& e, double U, double& out) {
  if (e.nodes.empty()) throw InputError("empty expression");
  std::vector<double> st;
  st.reserve(e.nodes.size());
  return eval_onto_stack(e, U, st, out);
}

double expr_eval(const Expr& e, double U) {
  double out;
  if (!try_expr_eval(e, U, out))
    throw NumericError("expression guard tripped evaluating '" + expr_to_string(e) +
                       "' at U=" + io::fmt(U));
  return out;
}

Expr parse_expression(const std::string& text) {
  Parser p(text);
  p.parse_expr();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("unexpected trailing input", p.pos);
  Expr e{std::move(p.out)};
  // Validate arity/shape once so later evaluations can trust the layout.
  double v;
  try_expr_eval(e, 0.5, v);
  return e;
}

std::string expr_to_string(const Expr& e) {
  if (e.nodes.empty()) throw InputError("empty expression");
  return print_subtree(e.nodes, e.nodes.size() - 1, 0);
}

Expr normalize(const Expr& e) {
  if (e.nodes.empty()) throw InputError("empty expression");
  Nodes cur = e.nodes;
  for (int pass = 0; pass < 10; ++pass) {
    Nodes next = norm_subtree(cur, cur.size() - 1);
    if (next == cur) break;
    cur = std::move(next);
  }
  return Expr{std::move(cur)};
}

std::string canonical_template(const Expr& e) {
  const Expr n = normalize(e);
  return template_key(n.nodes, n.nodes.size() - 1);
}

void SrConfig::validate() const {
  if (population < 4) throw InputError("sr config: population must be >= 4");
  if (generations < 1) throw InputError("sr config: generations must be >= 1");
  if (max_complexity < 3) throw InputError("sr config: max_complexity must be >= 3");
  if (parsimony < 0.0) throw InputError("sr config: parsimony must be >= 0");
  if (const_opt_iters < 0) throw InputError("sr config: const_opt_iters must be >= 0");
  if (repeats < 1) throw InputError("sr config: repeats must be >= 1");
}

namespace {

// ---- GP engine ----

struct GpContext {
  const EnsembleCurve* curve;
  const SrConfig* cfg;
  std::vector<ExprOp> bin_ops, un_ops;
  std::vector<Expr> library;  // enumerated small building blocks
  double weight_sum = 0.0;
  std::vector<double> stack;
};

double weighted_mse(GpContext& ctx, const Expr& e) {
  const EnsembleCurve& c = *ctx.curve;
  double acc = 0.0;
  for (std::size_t k = 0; k < c.U.size(); ++k) {
    double pred;
    if (!eval_onto_stack(e, c.U[k], ctx.stack, pred))
      return std::numeric_limits<double>::infinity();
    const double d = pred - c.values[k];
    acc += c.weights[k] * d * d;
  }
  const double mse = acc / ctx.weight_sum;
  return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

double rand_const(Rng& rng) {
  if (rng.uniform01() < 0.5) return rng.uniform(-1.0, 1.0);
  const double mag = std::pow(10.0, rng.uniform(-2.5, 0.5));
  return rng.uniform01() < 0.5 ? mag : -mag;
}

void gen_tree(GpContext& ctx, Rng& rng, int depth, Nodes& out) {
  if (depth <= 0 || rng.uniform01() < 0.25) {
    if (rng.uniform01() < 0.6) out.push_back({ExprOp::kVar, 0.0});
    else out.push_back({ExprOp::kConst, rand_const(rng)});
    return;
  }
  if (rng.uniform01() < 0.7) {
    const ExprOp op = ctx.bin_ops[rng.below(ctx.bin_ops.size())];
    gen_tree(ctx, rng, depth - 1, out);
    gen_tree(ctx, rng, depth - 1, out);
    out.push_back({op, 0.0});
  } else {
    const ExprOp op = ctx.un_ops[rng.below(ctx.un_ops.size())];
    gen_tree(ctx, rng, depth - 1, out);
    out.push_back({op, 0.0});
  }
}

Expr random_expr(GpContext& ctx, Rng& rng) {
  for (int tries = 0; tries < 20; ++tries) {
    Expr e;
    gen_tree(ctx, rng, 3, e.nodes);
    if (e.complexity() <= ctx.cfg->max_complexity) return e;
  }
  return Expr{{{ExprOp::kVar, 0.0}}};
}

// Every shape of the forms f(U), f(c*U), U*f(U), f(U)*g(U) and f(U)*g(c*U)
// over the whole unary set. Random tree growth assembles such blocks far too
// rarely for the products to be discovered reliably, so they are kept on
// hand as seeds and crossover donors.
void build_library(GpContext& ctx) {
  const Nodes u{{ExprOp::kVar, 0.0}};
  const Nodes cu = make_binary(ExprOp::kMul, {{ExprOp::kConst, 1.0}}, u);
  const auto add = [&](Nodes n) {
    Expr e{std::move(n)};
    if (e.complexity() <= ctx.cfg->max_complexity) ctx.library.push_back(std::move(e));
  };
  for (ExprOp f : ctx.un_ops) {
    add(make_unary(f, u));
    add(make_unary(f, cu));
    add(make_binary(ExprOp::kMul, u, make_unary(f, u)));
  }
  for (std::size_t a = 0; a < ctx.un_ops.size(); ++a)
    for (std::size_t b = 0; b < ctx.un_ops.size(); ++b) {
      if (a <= b)
        add(make_binary(ExprOp::kMul, make_unary(ctx.un_ops[a], u),
                        make_unary(ctx.un_ops[b], u)));
      add(make_binary(ExprOp::kMul, make_unary(ctx.un_ops[a], u),
                      make_unary(ctx.un_ops[b], cu)));
    }
}

// A library shape with freshly drawn constants.
Expr library_draw(GpContext& ctx, Rng& rng) {
  Expr e = ctx.library[rng.below(ctx.library.size())];
  for (ExprNode& n : e.nodes)
    if (n.op == ExprOp::kConst) n.value = rand_const(rng);
  return e;
}

Expr crossover(Rng& rng, const Expr& a, const Expr& b) {
  const std::size_t ia = rng.below(a.nodes.size());
  const std::size_t ib = rng.below(b.nodes.size());
  const std::size_t a_beg = subtree_begin(a.nodes, ia);
  const std::size_t b_beg = subtree_begin(b.nodes, ib);
  Expr child;
  child.nodes.assign(a.nodes.begin(), a.nodes.begin() + std::ptrdiff_t(a_beg));
  child.nodes.insert(child.nodes.end(), b.nodes.begin() + std::ptrdiff_t(b_beg),
                     b.nodes.begin() + std::ptrdiff_t(ib) + 1);
  child.nodes.insert(child.nodes.end(), a.nodes.begin() + std::ptrdiff_t(ia) + 1,
                     a.nodes.end());
  return child;
}

void mutate(GpContext& ctx, Rng& rng, Expr& e) {
  const std::uint64_t kind = rng.below(3);
  if (kind == 0) {
    std::vector<std::size_t> consts;
    for (std::size_t i = 0; i < e.nodes.size(); ++i)
      if (e.nodes[i].op == ExprOp::kConst) consts.push_back(i);
    if (!consts.empty()) {
      double& c = e.nodes[consts[rng.below(consts.size())]].value;
      c = c * (1.0 + 0.3 * rng.normal()) + 0.02 * rng.normal();
      return;
    }
    // no constants to jitter: fall through to an op swap
  }
  if (kind <= 1) {
    const std::size_t i = rng.below(e.nodes.size());
    ExprNode& n = e.nodes[i];
    if (arity(n.op) == 2) {
      n.op = ctx.bin_ops[rng.below(ctx.bin_ops.size())];
    } else if (arity(n.op) == 1) {
      n.op = ctx.un_ops[rng.below(ctx.un_ops.size())];
    } else if (n.op == ExprOp::kVar) {
      n = {ExprOp::kConst, rand_const(rng)};
    } else {
      n = {ExprOp::kVar, 0.0};
    }
    return;
  }
  const std::size_t i = rng.below(e.nodes.size());
  const std::size_t beg = subtree_begin(e.nodes, i);
  Nodes repl;
  gen_tree(ctx, rng, 2, repl);
  Nodes next(e.nodes.begin(), e.nodes.begin() + std::ptrdiff_t(beg));
  next.insert(next.end(), repl.begin(), repl.end());
  next.insert(next.end(), e.nodes.begin() + std::ptrdiff_t(i) + 1, e.nodes.end());
  e.nodes = std::move(next);
}

struct FrontMember {
  Expr expr;  // normalized
  std::string tpl;
  double loss = std::numeric_limits<double>::infinity();
};

// Per complexity, keep the best few structurally distinct members. A single
// slot is not enough: the best raw loss at a size often belongs to an
// awkward parameterization of the law whose constants refine poorly, and it
// would shadow the clean form.
constexpr std::size_t kFrontTemplatesPerSize = 6;

void refine_constants_budget(GpContext& ctx, Expr& e, double& loss, int max_sweeps,
                             int line_iters);

// Tries to earn the candidate a front slot. The first sighting of a structure
// gets a quick constant refinement before it is judged: raw evolved constants
// make good structures look bad, and a front (or a population) ranked on raw
// losses converges on whatever is easiest to hit by luck. On success the
// refined form is written back through expr/loss so the population carries it.
bool front_insert(GpContext& ctx, std::map<int, std::vector<FrontMember>>& front,
                  Expr& expr, double& loss) {
  if (!std::isfinite(loss)) return false;
  Expr norm = normalize(expr);
  const int c = norm.complexity();
  if (c > ctx.cfg->max_complexity) return false;  // sign lifting can add a node
  std::string tpl = template_key(norm.nodes, norm.nodes.size() - 1);
  std::vector<FrontMember>& slot = front[c];
  FrontMember* same = nullptr;
  for (FrontMember& m : slot)
    if (m.tpl == tpl) same = &m;

  if (same != nullptr && loss >= same->loss) return false;

  refine_constants_budget(ctx, norm, loss, 3, 12);
  if (same != nullptr) {
    if (loss < same->loss) {
      same->expr = norm;
      same->loss = loss;
    }
  } else if (slot.size() < kFrontTemplatesPerSize) {
    slot.push_back({norm, std::move(tpl), loss});
  } else {
    std::size_t worst = 0;
    for (std::size_t i = 1; i < slot.size(); ++i)
      if (slot[i].loss > slot[worst].loss) worst = i;
    if (loss < slot[worst].loss) slot[worst] = {norm, std::move(tpl), loss};
  }
  expr = std::move(norm);
  return true;
}

// Coordinate descent: each sweep runs one golden-section line search per
// constant, bracketing around the current value. Re-centering the bracket
// every sweep lets a constant escape an initial bracket that misses the
// optimum. Stops when a sweep no longer improves the loss meaningfully.
void refine_constants_budget(GpContext& ctx, Expr& e, double& loss, int max_sweeps,
                             int line_iters) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  std::vector<std::size_t> consts;
  for (std::size_t i = 0; i < e.nodes.size(); ++i)
    if (e.nodes[i].op == ExprOp::kConst) consts.push_back(i);
  if (consts.empty() || !std::isfinite(loss)) return;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double before = loss;
    for (std::size_t ci : consts) {
      double& c = e.nodes[ci].value;
      const double keep = c;
      const double delta = std::max(1.0, std::abs(keep));
      double lo = keep - delta, hi = keep + delta;
      double best_x = keep, best_f = loss;
      const auto probe = [&](double x) {
        c = x;
        const double f = weighted_mse(ctx, e);
        if (f < best_f) {
          best_f = f;
          best_x = x;
        }
        return f;
      };
      double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
      double f1 = probe(x1), f2 = probe(x2);
      for (int it = 0; it < line_iters; ++it) {
        if (f1 <= f2) {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - phi * (hi - lo);
          f1 = probe(x1);
        } else {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + phi * (hi - lo);
          f2 = probe(x2);
        }
      }
      c = best_x;
      loss = best_f;
    }
    if (before - loss <= 1e-13 * before) break;
  }
}

// Nelder-Mead over all constants jointly. Coordinate descent stalls in the
// curved valley that coupled nonlinear constants form (a scale against an
// exponent trades off along a banana), so the final refinement polishes with
// a simplex that can move diagonally. Guard-tripped points rank as infinite.
void nelder_mead(GpContext& ctx, Expr& e, double& loss,
                 const std::vector<std::size_t>& consts, double rel_step) {
  const std::size_t n = consts.size();
  const auto eval_at = [&](const std::vector<double>& x) {
    for (std::size_t i = 0; i < n; ++i) e.nodes[consts[i]].value = x[i];
    return weighted_mse(ctx, e);
  };
  std::vector<std::vector<double>> vx(n + 1);
  std::vector<double> vf(n + 1);
  std::vector<double> x0(n);
  for (std::size_t i = 0; i < n; ++i) x0[i] = e.nodes[consts[i]].value;
  vx[0] = x0;
  vf[0] = loss;
  for (std::size_t i = 0; i < n; ++i) {
    vx[i + 1] = x0;
    vx[i + 1][i] += rel_step * std::max(std::abs(x0[i]), 1.0);
    vf[i + 1] = eval_at(vx[i + 1]);
  }

  const int max_iter = 200 + 100 * static_cast<int>(n);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::size_t b = 0, w = 0;
    for (std::size_t i = 1; i <= n; ++i) {
      if (vf[i] < vf[b]) b = i;
      if (vf[i] > vf[w]) w = i;
    }
    std::size_t sw = b;
    for (std::size_t i = 0; i <= n; ++i)
      if (i != w && vf[i] > vf[sw]) sw = i;
    if (!(vf[w] - vf[b] > 1e-15 * std::max(vf[b], 1e-300))) break;

    std::vector<double> cen(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != w)
        for (std::size_t j = 0; j < n; ++j) cen[j] += vx[i][j];
    for (double& v : cen) v /= double(n);
    const auto mix = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t j = 0; j < n; ++j) x[j] = cen[j] + t * (cen[j] - vx[w][j]);
      return x;
    };

    std::vector<double> xr = mix(1.0);
    const double fr = eval_at(xr);
    if (fr < vf[b]) {
      std::vector<double> xe = mix(2.0);
      const double fe = eval_at(xe);
      if (fe < fr) {
        vx[w] = std::move(xe);
        vf[w] = fe;
      } else {
        vx[w] = std::move(xr);
        vf[w] = fr;
      }
    } else if (fr < vf[sw]) {
      vx[w] = std::move(xr);
      vf[w] = fr;
    } else {
      const bool outside = fr < vf[w];
      std::vector<double> xc = mix(outside ? 0.5 : -0.5);
      const double fc = eval_at(xc);
      if (fc < (outside ? fr : vf[w])) {
        vx[w] = std::move(xc);
        vf[w] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == b) continue;
          for (std::size_t j = 0; j < n; ++j)
            vx[i][j] = vx[b][j] + 0.5 * (vx[i][j] - vx[b][j]);
          vf[i] = eval_at(vx[i]);
        }
      }
    }
  }

  std::size_t b = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if (vf[i] < vf[b]) b = i;
  if (vf[b] < loss) {
    loss = vf[b];
    for (std::size_t i = 0; i < n; ++i) e.nodes[consts[i]].value = vx[b][i];
  } else {
    for (std::size_t i = 0; i < n; ++i) e.nodes[consts[i]].value = x0[i];
  }
}

void refine_constants(GpContext& ctx, Expr& e, double& loss) {
  refine_constants_budget(ctx, e, loss, ctx.cfg->const_opt_iters, 32);
  if (!std::isfinite(loss)) return;
  std::vector<std::size_t> consts;
  for (std::size_t i = 0; i < e.nodes.size(); ++i)
    if (e.nodes[i].op == ExprOp::kConst) consts.push_back(i);
  if (consts.size() < 2) return;  // one constant is solved exactly by the line search
  nelder_mead(ctx, e, loss, consts, 0.35);
  nelder_mead(ctx, e, loss, consts, 0.04);
  refine_constants_budget(ctx, e, loss, 2, 32);
}

}  // namespace

Candidate sr_fit(const EnsembleCurve& curve, const SrConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (curve.U.size() < 8) throw InputError("sr_fit: curve has fewer than 8 points");
  if (curve.U.size() != curve.values.size() || curve.U.size() != curve.weights.size())
    throw InputError("sr_fit: curve column lengths differ");

  GpContext ctx;
  ctx.curve = &curve;
  ctx.cfg = &cfg;
  ctx.bin_ops = {ExprOp::kAdd, ExprOp::kSub, ExprOp::kMul};
  if (cfg.use_div) ctx.bin_ops.push_back(ExprOp::kDiv);
  if (cfg.use_pow) ctx.bin_ops.push_back(ExprOp::kPow);
  ctx.un_ops = {ExprOp::kNeg, ExprOp::kExp, ExprOp::kSquare, ExprOp::kSqrt};
  build_library(ctx);
  for (double w : curve.weights) {
    if (w < 0.0) throw InputError("sr_fit: negative curve weight");
    ctx.weight_sum += w;
  }
  if (ctx.weight_sum <= 0.0) throw InputError("sr_fit: curve weights sum to zero");

  struct Individual {
    Expr expr;
    double mse = std::numeric_limits<double>::infinity();
    double fitness = std::numeric_limits<double>::infinity();
  };

  std::map<int, std::vector<FrontMember>> front;

  for (int attempt = 0; attempt <= 3; ++attempt) {
    Rng rng(derive_seed(seed, 7000 + std::uint64_t(attempt)));
    std::vector<Individual> pop(std::size_t(cfg.population));

    const auto assess = [&](Individual& ind) {
      ind.mse = weighted_mse(ctx, ind.expr);
      front_insert(ctx, front, ind.expr, ind.mse);
      ind.fitness = ind.mse + cfg.parsimony * ind.expr.complexity();
    };

    bool any_finite = false;
    const std::size_t seeded = std::min(ctx.library.size(), pop.size() / 4);
    for (std::size_t i = 0; i < pop.size(); ++i) {
      pop[i].expr = i < seeded ? library_draw(ctx, rng) : random_expr(ctx, rng);
      assess(pop[i]);
      any_finite = any_finite || std::isfinite(pop[i].mse);
    }
    if (!any_finite) continue;

    const auto tournament = [&]() -> const Individual& {
      const Individual* best = &pop[rng.below(pop.size())];
      for (int k = 1; k < 5; ++k) {
        const Individual& challenger = pop[rng.below(pop.size())];
        if (challenger.fitness < best->fitness) best = &challenger;
      }
      return *best;
    };

    for (int gen = 0; gen < cfg.generations; ++gen) {
      std::vector<Individual> next;
      next.reserve(pop.size());
      // elitism: carry the two best forward unchanged
      std::size_t b0 = 0, b1 = 0;
      for (std::size_t i = 1; i < pop.size(); ++i)
        if (pop[i].fitness < pop[b0].fitness) b0 = i;
      for (std::size_t i = 0; i < pop.size(); ++i)
        if (i != b0 && (b1 == b0 || pop[i].fitness < pop[b1].fitness)) b1 = i;
      next.push_back(pop[b0]);
      if (b1 != b0) next.push_back(pop[b1]);

      while (next.size() < pop.size()) {
        Individual child;
        const Individual& p1 = tournament();
        const double roll = rng.uniform01();
        if (roll < 0.05) {
          // a library donor keeps building blocks in circulation all run
          child.expr = crossover(rng, p1.expr, library_draw(ctx, rng));
        } else if (roll < 0.7) {
          const Individual& p2 = tournament();
          child.expr = crossover(rng, p1.expr, p2.expr);
        } else {
          child.expr = p1.expr;
        }
        if (rng.uniform01() < 0.25) mutate(ctx, rng, child.expr);
        if (child.expr.complexity() > cfg.max_complexity) child.expr = p1.expr;
        assess(child);
        next.push_back(std::move(child));
      }
      pop = std::move(next);
    }
    break;
  }

  if (front.empty())
    throw NumericError("sr_fit: population collapsed under guard errors after 3 restarts");

  // Refine every kept member's constants first: a member whose evolved
  // constants are sloppy may still be the right structure, so pruning on
  // unrefined losses would discard it. Refined constants can flip sign, so
  // re-normalize (keeping the old form if that would exceed the cap), then
  // keep only members that strictly improve on every simpler one.
  std::vector<FrontMember> members;
  for (auto& [c, slot] : front) {
    FrontMember* best = nullptr;
    for (FrontMember& m : slot) {
      refine_constants(ctx, m.expr, m.loss);
      if (best == nullptr || m.loss < best->loss) best = &m;
    }
    Expr renorm = normalize(best->expr);
    if (renorm.complexity() <= cfg.max_complexity) best->expr = std::move(renorm);
    members.push_back(std::move(*best));
  }
  std::sort(members.begin(), members.end(),
            [](const FrontMember& a, const FrontMember& b) {
              const int ca = a.expr.complexity(), cb = b.expr.complexity();
              if (ca != cb) return ca < cb;
              if (a.loss != b.loss) return a.loss < b.loss;
              return expr_to_string(a.expr) < expr_to_string(b.expr);
            });
  std::vector<FrontMember> pruned;
  double best_seen = std::numeric_limits<double>::infinity();
  for (FrontMember& m : members) {
    if (m.loss < best_seen) {
      best_seen = m.loss;
      pruned.push_back(std::move(m));
    }
  }

  if (std::getenv("RDBINN_SR_DEBUG") != nullptr) {
    for (const FrontMember& m : pruned)
      std::cerr << "front c=" << m.expr.complexity() << " loss=" << m.loss << "  "
                << expr_to_string(m.expr) << "\n";
  }

  // Selection: among members whose loss is within 1.5x of the front's best,
  // the one with the steepest per-complexity drop in log loss relative to
  // the previous front member. Losses are clamped to a floor far below the
  // curve's scale so fits that are perfect to machine precision compare as
  // ties and the simplest of them wins the drop.
  double y_scale = 0.0;
  for (std::size_t k = 0; k < curve.values.size(); ++k)
    y_scale += curve.weights[k] * curve.values[k] * curve.values[k];
  y_scale /= ctx.weight_sum;
  const double floor_loss = std::max(1e-12 * y_scale, 1e-300);
  const auto eff = [&](double loss) { return std::max(loss, floor_loss); };
  const double cutoff = 1.5 * eff(pruned.back().loss);
  std::size_t pick = pruned.size() - 1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pruned.size(); ++i) {
    if (eff(pruned[i].loss) > cutoff) continue;
    double score = 0.0;
    if (i > 0) {
      const double dl = std::log(eff(pruned[i - 1].loss)) - std::log(eff(pruned[i].loss));
      score = dl / double(pruned[i].expr.complexity() - pruned[i - 1].expr.complexity());
    }
    if (score > best_score) {
      best_score = score;
      pick = i;
    }
  }

  Candidate cand;
  cand.expr = pruned[pick].expr;
  cand.sq_error = pruned[pick].loss;
  cand.seed = seed;
  cand.kind = curve.kind;
  return cand;
}

std::vector<Candidate> sr_fit_repeats(const EnsembleCurve& curve, const SrConfig& cfg,
                                      std::uint64_t base_seed) {
  cfg.validate();
  std::vector<Candidate> out;
  out.reserve(std::size_t(cfg.repeats));
  for (int rep = 0; rep < cfg.repeats; ++rep)
    out.push_back(sr_fit(curve, cfg, derive_seed(base_seed, std::uint64_t(rep))));
  return out;
}

SymbolicModel select_best(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw InputError("select_best: no candidates");

  struct Group {
    int freq = 0;
    int complexity = std::numeric_limits<int>::max();
    const Candidate* best = nullptr;
  };
  std::map<std::string, Group> groups;
  for (const Candidate& c : candidates) {
    Group& g = groups[canonical_template(c.expr)];
    ++g.freq;
    g.complexity = std::min(g.complexity, c.expr.complexity());
    if (g.best == nullptr || c.sq_error < g.best->sq_error ||
        (c.sq_error == g.best->sq_error &&
         expr_to_string(c.expr) < expr_to_string(g.best->expr)))
      g.best = &c;
  }

  const std::string* win_key = nullptr;
  const Group* win = nullptr;
  for (const auto& [key, g] : groups) {
    bool better = false;
    if (win == nullptr) better = true;
    else if (g.freq != win->freq) better = g.freq > win->freq;
    else if (g.complexity != win->complexity) better = g.complexity < win->complexity;
    else if (g.best->sq_error != win->best->sq_error)
      better = g.best->sq_error < win->best->sq_error;
    // equal on all counts: keep the lexicographically first key (map order)
    if (better) {
      win = &g;
      win_key = &key;
    }
  }

  SymbolicModel m;
  m.kind = win->best->kind;
  m.expression = expr_to_string(win->best->expr);
  m.template_key = *win_key;
  m.sq_error = win->best->sq_error;
  m.complexity = win->best->expr.complexity();
  m.votes = win->freq;
  m.n_candidates = static_cast<int>(candidates.size());
  return m;
}

std::string symbolic_model_to_json(const SymbolicModel& m) {
  nlohmann::json j;
  j["kind"] = m.kind == CurveKind::kDiffusion ? "diffusion" : "growth";
  j["expression"] = m.expression;
  j["template"] = m.template_key;
  j["sq_error"] = m.sq_error;
  j["complexity"] = m.complexity;
  j["votes"] = m.votes;
  j["n_candidates"] = m.n_candidates;
  return j.dump(2) + "\n";
}

SymbolicModel symbolic_model_from_json(const std::string& text,
                                       const std::string& context) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(context + ": invalid JSON: " + e.what());
  }
  SymbolicModel m;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "diffusion") m.kind = CurveKind::kDiffusion;
    else if (kind == "growth") m.kind = CurveKind::kGrowth;
    else throw InputError("unknown kind '" + kind + "'");
    m.expression = j.at("expression").get<std::string>();
    m.template_key = j.at("template").get<std::string>();
    m.sq_error = j.at("sq_error").get<double>();
    m.complexity = j.at("complexity").get<int>();
    m.votes = j.at("votes").get<int>();
    m.n_candidates = j.at("n_candidates").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(context + ": " + e.what());
  }
  parse_expression(m.expression);  // must be readable by our own grammar
  return m;
}

}  // namespace rdbinn
