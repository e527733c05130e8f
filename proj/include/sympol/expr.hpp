#ifndef SYMPOL_EXPR_HPP
#define SYMPOL_EXPR_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sympol/action.hpp"
#include "sympol/rng.hpp"

namespace sympol {

// The twelve operators of the search space. Binary: add..geq, unary: the rest.
enum class OpKind {
  add,
  sub,
  mul,
  div,
  leq,
  geq,
  lnot,  // rendered as "not"
  square,
  cube,
  sqrt,
  exp,
  log,
};

constexpr int kNumOps = 12;

int arity(OpKind op);
std::string_view op_name(OpKind op);
bool op_from_name(std::string_view name, OpKind* out);

// Protected operator application: total on finite inputs, always returns a
// finite value. Conventions:
//   div(a, b)  = 1 when |b| < 1e-6, else a / b
//   leq / geq  = 1.0 (true) / 0.0 (false)
//   not(x)     = 1.0 when |x| < 0.5, else 0.0
//   square/cube clamped to +-1e30
//   sqrt(x)    = sqrt(|x|)
//   exp(x)     = exp(min(x, 80))
//   log(x)     = log(|x|), log(0) = 0
double apply_op(OpKind op, double a, double b = 0.0);

// Partial derivatives of apply_op at (a, b). Comparisons and not contribute
// zero; protected regions take the protected value's subgradient (zero where
// the output is pinned).
void op_partials(OpKind op, double a, double b, double* da, double* db);

struct ExprNode {
  enum class Kind { constant, variable, op };
  Kind kind = Kind::constant;
  OpKind op = OpKind::add;
  double value = 0.0;   // constant payload
  bool trainable = true;
  int var = 0;          // variable payload

  static ExprNode make_const(double v, bool trainable = true);
  static ExprNode make_var(int index);
  static ExprNode make_op(OpKind k);
};

bool same_node(const ExprNode& a, const ExprNode& b);

// Immutable expression tree stored as a prefix-order node vector.
// Construction validates arities, variable indices and constant finiteness.
class ExprTree {
 public:
  ExprTree();  // (const 0), zero features
  ExprTree(std::vector<ExprNode> prefix, int num_features, std::string metadata = "");

  const std::vector<ExprNode>& nodes() const { return nodes_; }
  int num_features() const { return num_features_; }
  const std::string& metadata() const { return metadata_; }
  void set_metadata(std::string m) { metadata_ = std::move(m); }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int depth() const { return depth_; }

  // Exclusive end of the subtree rooted at node i.
  int subtree_end(int i) const { return span_end_[i]; }
  int subtree_depth(int i) const;

  // Prefix-order indices of trainable constants (the gradient ordering).
  const std::vector<int>& constant_indices() const { return const_idx_; }
  int num_constants() const { return static_cast<int>(const_idx_.size()); }

  bool structurally_equal(const ExprTree& other) const;

 private:
  std::vector<ExprNode> nodes_;
  int num_features_ = 0;
  std::string metadata_;
  std::vector<int> span_end_;
  std::vector<int> const_idx_;
  int depth_ = 1;
};

// N_A trees composing one policy; all trees share num_features.
struct Forest {
  std::vector<ExprTree> trees;
  ActionMode action_mode = ActionMode::continuous;

  int action_dim() const { return static_cast<int>(trees.size()); }
  int num_features() const { return trees.empty() ? 0 : trees.front().num_features(); }
};

void validate_forest(const Forest& f);

// --- Evaluation -------------------------------------------------------------

double eval(const ExprTree& tree, std::span<const double> features);

std::vector<double> eval_forest(const Forest& forest, std::span<const double> features);

// d(upstream * eval(tree, x)) / dc for each trainable constant c, in
// prefix (depth-first left-to-right) order.
std::vector<double> grad_constants(const ExprTree& tree, std::span<const double> features,
                                   double upstream = 1.0);

struct EvalGrad {
  double value = 0.0;
  std::vector<double> dconstants;
};

// Value and constant gradient in one pass (gradient scaled by upstream).
EvalGrad eval_with_grad(const ExprTree& tree, std::span<const double> features,
                        double upstream = 1.0);

// Smallest distance from any protected-operator or comparison switching
// boundary encountered while evaluating. Used by gradient tests to reject
// inputs where finite differences straddle a non-smooth point.
double switch_distance(const ExprTree& tree, std::span<const double> features);

// --- Action selection (Eq-style composition) --------------------------------

std::vector<double> softmax(std::span<const double> values);
int argmax_index(std::span<const double> values);  // lowest-index tie-break
int sample_softmax(std::span<const double> values, Rng& rng);

// Continuous mode returns the values unchanged; discrete mode samples from
// softmax(values), or takes argmax when deterministic.
Action select_action(const std::vector<double>& values, ActionMode mode, Rng& rng,
                     bool deterministic = false);

// --- Text formats -----------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, size_t position);
  size_t position() const { return position_; }

 private:
  size_t position_;
};

// Prefix s-expressions over the twelve operators, "(var i)" and "(const v)".
// num_features < 0 infers the feature count as max var index + 1.
ExprTree parse_expr(std::string_view text, int num_features = -1);

std::string render(const ExprTree& tree);        // round-trips exactly
std::string render_infix(const ExprTree& tree);  // human-readable
std::string format_constant(double v);           // 17 significant digits

// Graphviz export: one graph node per ExprNode.
std::string to_dot(const ExprTree& tree, const std::string& graph_name = "tree");

// --- Generation and simplification -------------------------------------------

struct TreeGenConfig {
  int num_features = 1;
  int min_depth = 2;
  int max_depth = 6;
  double leaf_prob = 0.3;  // grow method, non-forced positions
  double var_prob = 0.7;   // leaf is a variable (vs constant)
  double const_min = -5.0;
  double const_max = 5.0;
  std::vector<int> allowed_vars;  // empty = all features
};

// Ramped half-and-half: target depth uniform in [min_depth, max_depth],
// full/grow methods alternated at random.
ExprTree random_tree(const TreeGenConfig& cfg, Rng& rng);

// Constant folding plus identity elimination (x*1, x+0, x-0, x/1, x*0).
// Preserves eval on all inputs.
ExprTree simplify(const ExprTree& tree);

}  // namespace sympol

#endif
