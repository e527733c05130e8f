#include "sympol/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace sympol {

namespace {

constexpr double kDivEps = 1e-6;
constexpr double kNotThreshold = 0.5;
constexpr double kExpClamp = 80.0;
constexpr double kValueClamp = 1e30;

double clamp_value(double x) { return std::clamp(x, -kValueClamp, kValueClamp); }

}  // namespace

int arity(OpKind op) {
  switch (op) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div:
    case OpKind::leq:
    case OpKind::geq:
      return 2;
    default:
      return 1;
  }
}

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::leq: return "leq";
    case OpKind::geq: return "geq";
    case OpKind::lnot: return "not";
    case OpKind::square: return "square";
    case OpKind::cube: return "cube";
    case OpKind::sqrt: return "sqrt";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
  }
  return "?";
}

bool op_from_name(std::string_view name, OpKind* out) {
  static const std::pair<std::string_view, OpKind> table[] = {
      {"add", OpKind::add},     {"sub", OpKind::sub},   {"mul", OpKind::mul},
      {"div", OpKind::div},     {"leq", OpKind::leq},   {"geq", OpKind::geq},
      {"not", OpKind::lnot},    {"square", OpKind::square}, {"cube", OpKind::cube},
      {"sqrt", OpKind::sqrt},   {"exp", OpKind::exp},   {"log", OpKind::log},
  };
  for (const auto& [n, k] : table) {
    if (n == name) {
      *out = k;
      return true;
    }
  }
  return false;
}

double apply_op(OpKind op, double a, double b) {
  switch (op) {
    case OpKind::add: return clamp_value(a + b);
    case OpKind::sub: return clamp_value(a - b);
    case OpKind::mul: return clamp_value(a * b);
    case OpKind::div: return std::abs(b) < kDivEps ? 1.0 : clamp_value(a / b);
    case OpKind::leq: return a <= b ? 1.0 : 0.0;
    case OpKind::geq: return a >= b ? 1.0 : 0.0;
    case OpKind::lnot: return std::abs(a) < kNotThreshold ? 1.0 : 0.0;
    case OpKind::square: return clamp_value(a * a);
    case OpKind::cube: return clamp_value(a * a * a);
    case OpKind::sqrt: return std::sqrt(std::abs(a));
    case OpKind::exp: return std::exp(std::min(a, kExpClamp));
    case OpKind::log: return a == 0.0 ? 0.0 : std::log(std::abs(a));
  }
  return 0.0;
}

void op_partials(OpKind op, double a, double b, double* da, double* db) {
  *da = 0.0;
  *db = 0.0;
  switch (op) {
    case OpKind::add:
      if (std::abs(a + b) < kValueClamp) { *da = 1.0; *db = 1.0; }
      break;
    case OpKind::sub:
      if (std::abs(a - b) < kValueClamp) { *da = 1.0; *db = -1.0; }
      break;
    case OpKind::mul:
      if (std::abs(a * b) < kValueClamp) { *da = b; *db = a; }
      break;
    case OpKind::div:
      if (std::abs(b) >= kDivEps && std::abs(a / b) < kValueClamp) {
        *da = 1.0 / b;
        *db = -a / (b * b);
      }
      break;
    case OpKind::leq:
    case OpKind::geq:
    case OpKind::lnot:
      break;  // zero-gradient convention
    case OpKind::square:
      if (std::abs(a * a) < kValueClamp) *da = 2.0 * a;
      break;
    case OpKind::cube:
      if (std::abs(a * a * a) < kValueClamp) *da = 3.0 * a * a;
      break;
    case OpKind::sqrt:
      if (a != 0.0) *da = (a > 0.0 ? 0.5 : -0.5) / std::sqrt(std::abs(a));
      break;
    case OpKind::exp:
      if (a < kExpClamp) *da = std::exp(a);
      break;
    case OpKind::log:
      if (a != 0.0) *da = 1.0 / a;
      break;
  }
}

ExprNode ExprNode::make_const(double v, bool trainable) {
  ExprNode n;
  n.kind = Kind::constant;
  n.value = v;
  n.trainable = trainable;
  return n;
}

ExprNode ExprNode::make_var(int index) {
  ExprNode n;
  n.kind = Kind::variable;
  n.var = index;
  return n;
}

ExprNode ExprNode::make_op(OpKind k) {
  ExprNode n;
  n.kind = Kind::op;
  n.op = k;
  return n;
}

bool same_node(const ExprNode& a, const ExprNode& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case ExprNode::Kind::constant: return a.value == b.value;
    case ExprNode::Kind::variable: return a.var == b.var;
    case ExprNode::Kind::op: return a.op == b.op;
  }
  return false;
}

ExprTree::ExprTree() : ExprTree({ExprNode::make_const(0.0)}, 0) {}

ExprTree::ExprTree(std::vector<ExprNode> prefix, int num_features, std::string metadata)
    : nodes_(std::move(prefix)), num_features_(num_features), metadata_(std::move(metadata)) {
  if (nodes_.empty()) throw std::invalid_argument("ExprTree: empty node list");
  if (num_features_ < 0) throw std::invalid_argument("ExprTree: negative feature count");
  const int n = node_count();
  span_end_.assign(n, 0);
  std::vector<int> depth_of(n, 1);

  // walk computes spans and depths, validating shape along the way
  auto walk = [&](auto&& self, int i) -> int {
    if (i >= n) throw std::invalid_argument("ExprTree: truncated expression");
    const ExprNode& node = nodes_[i];
    switch (node.kind) {
      case ExprNode::Kind::constant:
        if (!std::isfinite(node.value))
          throw std::invalid_argument("ExprTree: non-finite constant");
        span_end_[i] = i + 1;
        return i + 1;
      case ExprNode::Kind::variable:
        if (node.var < 0 || node.var >= num_features_)
          throw std::invalid_argument("ExprTree: variable index out of range");
        span_end_[i] = i + 1;
        return i + 1;
      case ExprNode::Kind::op: {
        int end = i + 1;
        int d = 0;
        for (int c = 0; c < arity(node.op); ++c) {
          int child = end;
          end = self(self, child);
          d = std::max(d, depth_of[child]);
        }
        depth_of[i] = d + 1;
        span_end_[i] = end;
        return end;
      }
    }
    throw std::invalid_argument("ExprTree: bad node kind");
  };
  int end = walk(walk, 0);
  if (end != n) throw std::invalid_argument("ExprTree: trailing nodes after expression");
  depth_ = depth_of[0];

  for (int i = 0; i < n; ++i) {
    if (nodes_[i].kind == ExprNode::Kind::constant && nodes_[i].trainable)
      const_idx_.push_back(i);
  }
}

int ExprTree::subtree_depth(int i) const {
  const ExprNode& node = nodes_[i];
  if (node.kind != ExprNode::Kind::op) return 1;
  int d = 0;
  int c = i + 1;
  for (int k = 0; k < arity(node.op); ++k) {
    d = std::max(d, subtree_depth(c));
    c = span_end_[c];
  }
  return d + 1;
}

bool ExprTree::structurally_equal(const ExprTree& other) const {
  if (node_count() != other.node_count()) return false;
  for (int i = 0; i < node_count(); ++i)
    if (!same_node(nodes_[i], other.nodes_[i])) return false;
  return true;
}

void validate_forest(const Forest& f) {
  if (f.trees.empty()) throw std::invalid_argument("Forest: no trees");
  for (const auto& t : f.trees)
    if (t.num_features() != f.trees.front().num_features())
      throw std::invalid_argument("Forest: trees disagree on feature count");
}

// --- Evaluation -------------------------------------------------------------

namespace {

// Fills values[i] for every node; reverse prefix order visits children first.
void forward_values(const ExprTree& t, std::span<const double> x, std::vector<double>& values) {
  const auto& nodes = t.nodes();
  const int n = t.node_count();
  values.resize(n);
  for (int i = n - 1; i >= 0; --i) {
    const ExprNode& node = nodes[i];
    switch (node.kind) {
      case ExprNode::Kind::constant:
        values[i] = node.value;
        break;
      case ExprNode::Kind::variable:
        values[i] = x[node.var];
        break;
      case ExprNode::Kind::op: {
        int c1 = i + 1;
        if (arity(node.op) == 1) {
          values[i] = apply_op(node.op, values[c1]);
        } else {
          int c2 = t.subtree_end(c1);
          values[i] = apply_op(node.op, values[c1], values[c2]);
        }
        break;
      }
    }
  }
}

void check_features(const ExprTree& t, std::span<const double> x) {
  if (static_cast<int>(x.size()) != t.num_features())
    throw std::invalid_argument("eval: feature vector length mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("eval: non-finite feature");
}

}  // namespace

double eval(const ExprTree& tree, std::span<const double> features) {
  check_features(tree, features);
  thread_local std::vector<double> values;  // scratch; eval is a hot path
  forward_values(tree, features, values);
  return values[0];
}

std::vector<double> eval_forest(const Forest& forest, std::span<const double> features) {
  std::vector<double> out(forest.trees.size());
  for (size_t i = 0; i < forest.trees.size(); ++i) out[i] = eval(forest.trees[i], features);
  return out;
}

EvalGrad eval_with_grad(const ExprTree& tree, std::span<const double> features, double upstream) {
  check_features(tree, features);
  if (!std::isfinite(upstream)) throw std::invalid_argument("grad_constants: non-finite upstream");
  thread_local std::vector<double> values;
  forward_values(tree, features, values);

  const auto& nodes = tree.nodes();
  const int n = tree.node_count();
  thread_local std::vector<double> adj;
  adj.assign(n, 0.0);
  adj[0] = upstream;
  // prefix order: parents precede children, so adjoints are complete in one pass
  for (int i = 0; i < n; ++i) {
    const ExprNode& node = nodes[i];
    if (node.kind != ExprNode::Kind::op) continue;
    int c1 = i + 1;
    double da = 0.0, db = 0.0;
    if (arity(node.op) == 1) {
      op_partials(node.op, values[c1], 0.0, &da, &db);
      adj[c1] += adj[i] * da;
    } else {
      int c2 = tree.subtree_end(c1);
      op_partials(node.op, values[c1], values[c2], &da, &db);
      adj[c1] += adj[i] * da;
      adj[c2] += adj[i] * db;
    }
  }

  EvalGrad out;
  out.value = values[0];
  out.dconstants.reserve(tree.constant_indices().size());
  for (int idx : tree.constant_indices()) out.dconstants.push_back(adj[idx]);
  return out;
}

std::vector<double> grad_constants(const ExprTree& tree, std::span<const double> features,
                                   double upstream) {
  return eval_with_grad(tree, features, upstream).dconstants;
}

double switch_distance(const ExprTree& tree, std::span<const double> features) {
  check_features(tree, features);
  std::vector<double> values;
  forward_values(tree, features, values);
  const auto& nodes = tree.nodes();
  double dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tree.node_count(); ++i) {
    const ExprNode& node = nodes[i];
    if (node.kind != ExprNode::Kind::op) continue;
    int c1 = i + 1;
    double a = values[c1];
    double b = arity(node.op) == 2 ? values[tree.subtree_end(c1)] : 0.0;
    switch (node.op) {
      case OpKind::add: dist = std::min(dist, kValueClamp - std::abs(a + b)); break;
      case OpKind::sub: dist = std::min(dist, kValueClamp - std::abs(a - b)); break;
      case OpKind::mul: dist = std::min(dist, kValueClamp - std::abs(a * b)); break;
      case OpKind::div: dist = std::min(dist, std::abs(std::abs(b) - kDivEps)); break;
      case OpKind::leq:
      case OpKind::geq: dist = std::min(dist, std::abs(a - b)); break;
      case OpKind::lnot: dist = std::min(dist, std::abs(std::abs(a) - kNotThreshold)); break;
      case OpKind::square: dist = std::min(dist, kValueClamp - a * a); break;
      case OpKind::cube: dist = std::min(dist, kValueClamp - std::abs(a * a * a)); break;
      case OpKind::sqrt:
      case OpKind::log: dist = std::min(dist, std::abs(a)); break;
      case OpKind::exp: dist = std::min(dist, std::abs(a - kExpClamp)); break;
    }
  }
  return dist;
}

// --- Action selection --------------------------------------------------------

std::vector<double> softmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("softmax: empty input");
  double m = *std::max_element(values.begin(), values.end());
  std::vector<double> p(values.size());
  double sum = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    p[i] = std::exp(values[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

int argmax_index(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

int sample_softmax(std::span<const double> values, Rng& rng) {
  std::vector<double> p = softmax(values);
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

Action select_action(const std::vector<double>& values, ActionMode mode, Rng& rng,
                     bool deterministic) {
  if (values.empty()) throw std::invalid_argument("select_action: empty value vector");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("select_action: non-finite value");
  if (mode == ActionMode::continuous) return Action::continuous(values);
  return Action::discrete(deterministic ? argmax_index(values) : sample_softmax(values, rng));
}

// --- Text formats -----------------------------------------------------------

ParseError::ParseError(const std::string& msg, size_t position)
    : std::runtime_error(msg + " (at position " + std::to_string(position) + ")"),
      position_(position) {}

namespace {

struct Parser {
  std::string_view text;
  size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  char peek() {
    skip_ws();
    if (pos >= text.size()) throw ParseError("unexpected end of input", pos);
    return text[pos];
  }

  void expect(char c) {
    if (peek() != c) throw ParseError(std::string("expected '") + c + "'", pos);
    ++pos;
  }

  std::string_view atom() {
    skip_ws();
    size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    if (pos == start) throw ParseError("expected atom", pos);
    return text.substr(start, pos - start);
  }

  void parse_node(std::vector<ExprNode>& out) {
    expect('(');
    size_t head_pos = pos;
    std::string_view head = atom();
    if (head == "var") {
      size_t arg_pos = pos;
      std::string_view a = atom();
      int idx = 0;
      auto [p, ec] = std::from_chars(a.data(), a.data() + a.size(), idx);
      if (ec != std::errc() || p != a.data() + a.size() || idx < 0)
        throw ParseError("malformed variable index '" + std::string(a) + "'", arg_pos);
      out.push_back(ExprNode::make_var(idx));
    } else if (head == "const") {
      size_t arg_pos = pos;
      std::string_view a = atom();
      char* endp = nullptr;
      std::string buf(a);
      double v = std::strtod(buf.c_str(), &endp);
      if (endp != buf.c_str() + buf.size() || !std::isfinite(v))
        throw ParseError("malformed constant '" + buf + "'", arg_pos);
      out.push_back(ExprNode::make_const(v));
    } else {
      OpKind op;
      if (!op_from_name(head, &op))
        throw ParseError("unknown operator '" + std::string(head) + "'", head_pos);
      out.push_back(ExprNode::make_op(op));
      int count = 0;
      while (peek() != ')') {
        parse_node(out);
        ++count;
      }
      if (count != arity(op))
        throw ParseError("operator '" + std::string(head) + "' expects " +
                             std::to_string(arity(op)) + " operand(s), got " +
                             std::to_string(count),
                         head_pos);
    }
    expect(')');
  }
};

void render_node(const ExprTree& t, int i, std::string& out) {
  const ExprNode& node = t.nodes()[i];
  switch (node.kind) {
    case ExprNode::Kind::variable:
      out += "(var " + std::to_string(node.var) + ")";
      break;
    case ExprNode::Kind::constant:
      out += "(const " + format_constant(node.value) + ")";
      break;
    case ExprNode::Kind::op: {
      out += "(";
      out += op_name(node.op);
      int c = i + 1;
      for (int k = 0; k < arity(node.op); ++k) {
        out += " ";
        render_node(t, c, out);
        c = t.subtree_end(c);
      }
      out += ")";
      break;
    }
  }
}

void render_infix_node(const ExprTree& t, int i, std::string& out) {
  const ExprNode& node = t.nodes()[i];
  char buf[64];
  switch (node.kind) {
    case ExprNode::Kind::variable:
      out += "x" + std::to_string(node.var);
      break;
    case ExprNode::Kind::constant:
      std::snprintf(buf, sizeof(buf), "%.6g", node.value);
      out += buf;
      break;
    case ExprNode::Kind::op: {
      int c1 = i + 1;
      if (arity(node.op) == 1) {
        out += op_name(node.op);
        out += "(";
        render_infix_node(t, c1, out);
        out += ")";
      } else {
        const char* sym = nullptr;
        switch (node.op) {
          case OpKind::add: sym = " + "; break;
          case OpKind::sub: sym = " - "; break;
          case OpKind::mul: sym = " * "; break;
          case OpKind::div: sym = " / "; break;
          case OpKind::leq: sym = " <= "; break;
          case OpKind::geq: sym = " >= "; break;
          default: sym = " ? "; break;
        }
        out += "(";
        render_infix_node(t, c1, out);
        out += sym;
        render_infix_node(t, t.subtree_end(c1), out);
        out += ")";
      }
      break;
    }
  }
}

}  // namespace

ExprTree parse_expr(std::string_view text, int num_features) {
  Parser p{text};
  std::vector<ExprNode> nodes;
  p.parse_node(nodes);
  p.skip_ws();
  if (p.pos != text.size()) throw ParseError("trailing characters after expression", p.pos);
  if (num_features < 0) {
    int max_var = -1;
    for (const auto& n : nodes)
      if (n.kind == ExprNode::Kind::variable) max_var = std::max(max_var, n.var);
    num_features = max_var + 1;
  }
  return ExprTree(std::move(nodes), num_features);
}

std::string format_constant(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string render(const ExprTree& tree) {
  std::string out;
  render_node(tree, 0, out);
  return out;
}

std::string render_infix(const ExprTree& tree) {
  std::string out;
  render_infix_node(tree, 0, out);
  return out;
}

std::string to_dot(const ExprTree& tree, const std::string& graph_name) {
  std::ostringstream os;
  os << "digraph " << graph_name << " {\n";
  const auto& nodes = tree.nodes();
  for (int i = 0; i < tree.node_count(); ++i) {
    os << "  n" << i << " [label=\"";
    switch (nodes[i].kind) {
      case ExprNode::Kind::variable: os << "x" << nodes[i].var; break;
      case ExprNode::Kind::constant: {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", nodes[i].value);
        os << buf;
        break;
      }
      case ExprNode::Kind::op: os << op_name(nodes[i].op); break;
    }
    os << "\"];\n";
  }
  // edges follow the prefix layout
  auto emit = [&](auto&& self, int i) -> int {
    const ExprNode& node = nodes[i];
    if (node.kind != ExprNode::Kind::op) return i + 1;
    int c = i + 1;
    for (int k = 0; k < arity(node.op); ++k) {
      os << "  n" << i << " -> n" << c << ";\n";
      c = self(self, c);
    }
    return c;
  };
  emit(emit, 0);
  os << "}\n";
  return os.str();
}

// --- Generation and simplification -------------------------------------------

namespace {

ExprNode random_leaf(const TreeGenConfig& cfg, Rng& rng) {
  bool can_var = cfg.num_features > 0 || !cfg.allowed_vars.empty();
  if (can_var && rng.bernoulli(cfg.var_prob)) {
    if (!cfg.allowed_vars.empty())
      return ExprNode::make_var(cfg.allowed_vars[rng.uniform_int(
          static_cast<int>(cfg.allowed_vars.size()))]);
    return ExprNode::make_var(rng.uniform_int(cfg.num_features));
  }
  return ExprNode::make_const(rng.uniform(cfg.const_min, cfg.const_max));
}

void grow_node(const TreeGenConfig& cfg, Rng& rng, int budget, bool full,
               std::vector<ExprNode>& out) {
  if (budget <= 1 || (!full && rng.uniform() < cfg.leaf_prob)) {
    out.push_back(random_leaf(cfg, rng));
    return;
  }
  OpKind op = static_cast<OpKind>(rng.uniform_int(kNumOps));
  out.push_back(ExprNode::make_op(op));
  for (int k = 0; k < arity(op); ++k) grow_node(cfg, rng, budget - 1, full, out);
}

}  // namespace

ExprTree random_tree(const TreeGenConfig& cfg, Rng& rng) {
  int lo = std::max(1, cfg.min_depth);
  int hi = std::max(lo, cfg.max_depth);
  int depth = lo + rng.uniform_int(hi - lo + 1);
  bool full = rng.bernoulli(0.5);
  std::vector<ExprNode> nodes;
  grow_node(cfg, rng, depth, full, nodes);
  return ExprTree(std::move(nodes), cfg.num_features);
}

namespace {

bool is_const(const std::vector<ExprNode>& v, double value) {
  return v.size() == 1 && v[0].kind == ExprNode::Kind::constant && v[0].value == value;
}

std::vector<ExprNode> simplify_node(const ExprTree& t, int i) {
  const ExprNode& node = t.nodes()[i];
  if (node.kind != ExprNode::Kind::op) return {node};

  std::vector<std::vector<ExprNode>> children;
  int c = i + 1;
  for (int k = 0; k < arity(node.op); ++k) {
    children.push_back(simplify_node(t, c));
    c = t.subtree_end(c);
  }

  bool all_const = true;
  for (const auto& ch : children)
    all_const = all_const && ch.size() == 1 && ch[0].kind == ExprNode::Kind::constant;
  if (all_const) {
    double a = children[0][0].value;
    double b = children.size() > 1 ? children[1][0].value : 0.0;
    bool trainable = children[0][0].trainable || (children.size() > 1 && children[1][0].trainable);
    return {ExprNode::make_const(apply_op(node.op, a, b), trainable)};
  }

  if (arity(node.op) == 2) {
    auto& lhs = children[0];
    auto& rhs = children[1];
    switch (node.op) {
      case OpKind::mul:
        if (is_const(lhs, 1.0)) return rhs;
        if (is_const(rhs, 1.0)) return lhs;
        if (is_const(lhs, 0.0)) return lhs;
        if (is_const(rhs, 0.0)) return rhs;
        break;
      case OpKind::add:
        if (is_const(lhs, 0.0)) return rhs;
        if (is_const(rhs, 0.0)) return lhs;
        break;
      case OpKind::sub:
        if (is_const(rhs, 0.0)) return lhs;
        break;
      case OpKind::div:
        if (is_const(rhs, 1.0)) return lhs;
        break;
      default:
        break;
    }
  }

  std::vector<ExprNode> out;
  out.push_back(node);
  for (const auto& ch : children) out.insert(out.end(), ch.begin(), ch.end());
  return out;
}

}  // namespace

ExprTree simplify(const ExprTree& tree) {
  return ExprTree(simplify_node(tree, 0), tree.num_features(), tree.metadata());
}

}  // namespace sympol
