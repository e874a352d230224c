#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "rdbinn/ensemble.hpp"

namespace rdbinn {

// Expression over one variable U, stored in postfix order so a subtree is
// always a contiguous node range. Complexity = node count.
enum class ExprOp : std::uint8_t {
  kConst,
  kVar,
  kNeg,
  kExp,
  kSquare,
  kSqrt,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
};

int arity(ExprOp op);

struct ExprNode {
  ExprOp op = ExprOp::kConst;
  double value = 0.0;  // constants only

  bool operator==(const ExprNode&) const = default;
};

struct Expr {
  std::vector<ExprNode> nodes;
  int complexity() const { return static_cast<int>(nodes.size()); }
};

// Evaluation with domain guards: sqrt or pow of a negative base, division
// by |den| < 1e-12, or a non-finite intermediate. try_expr_eval reports a
// guard trip by returning false; expr_eval throws NumericError.
bool try_expr_eval(const Expr& e, double U, double& out);
double expr_eval(const Expr& e, double U);

// Infix grammar (also used for synthetic-model specs in run configs):
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-' factor | power
//   power  := atom ('^' factor)?          (right-associative)
//   atom   := NUMBER | 'U' | 'exp' '(' expr ')' | 'sqrt' '(' expr ')'
//           | 'square' '(' expr ')' | '(' expr ')'
// Errors carry the 1-based character position.
Expr parse_expression(const std::string& text);
std::string expr_to_string(const Expr& e);

// Value-preserving cleanup: constant folding, double-negation removal,
// sign lifting (a + (-b) -> a - b, (-c)*x -> -(c*x)), x*x -> square(x), and
// lifting constants out of wrappers (exp(x+c) -> e^c*exp(x), square(c*x) ->
// c^2*square(x), sqrt(c*x) -> sqrt(c)*sqrt(x) for c > 0) so equivalent fits
// share a shape. Identity values are never folded (1*x keeps its constant
// slot) so the template of a shape cannot depend on its constant values.
Expr normalize(const Expr& e);

// Structural key with every constant replaced by the placeholder "C";
// commutative children sorted; signs preserved (C - C*U differs from
// C + C*U). Equal keys mean equal templates.
std::string canonical_template(const Expr& e);

struct SrConfig {
  int population = 200;
  int generations = 200;
  int max_complexity = 15;
  double parsimony = 1e-6;  // complexity penalty added to the GP fitness
  bool use_div = false;     // division and power are opt-in search operators;
  bool use_pow = false;     // the parser always accepts them
  int const_opt_iters = 50; // coordinate-descent sweeps over the constants
  int repeats = 10;

  void validate() const;
};

struct Candidate {
  Expr expr;  // normalized
  double sq_error = 0.0;  // weighted mean squared error on the curve
  std::uint64_t seed = 0;
  CurveKind kind = CurveKind::kDiffusion;
};

// One GP run: evolve a population against the curve (weights as sample
// weights), refine the Pareto front's constants, pick the front member with
// the steepest per-complexity log-loss drop. Deterministic per seed. A
// population whose
// members all trip guards is restarted up to 3 times, then raises
// NumericError.
Candidate sr_fit(const EnsembleCurve& curve, const SrConfig& cfg, std::uint64_t seed);

// cfg.repeats independent runs with seeds derived from base_seed.
std::vector<Candidate> sr_fit_repeats(const EnsembleCurve& curve, const SrConfig& cfg,
                                      std::uint64_t base_seed);

struct SymbolicModel {
  CurveKind kind = CurveKind::kDiffusion;
  std::string expression;    // winning expression, infix text
  std::string template_key;  // its canonical template
  double sq_error = 0.0;
  int complexity = 0;
  int votes = 0;  // candidates sharing the winning template
  int n_candidates = 0;
};

// Majority template across candidates; ties broken by lower complexity,
// then lower best sq_error. Within the winning template the lowest-error
// candidate's constants are kept. Order-invariant.
SymbolicModel select_best(std::span<const Candidate> candidates);

std::string symbolic_model_to_json(const SymbolicModel& m);
SymbolicModel symbolic_model_from_json(const std::string& text,
                                       const std::string& context);

}  // namespace rdbinn
