#include <cmath>
#include <vector>

#include "doctest.h"
#include "sympol/expr.hpp"

using namespace sympol;

namespace {

std::vector<double> random_features(int n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform(-3.0, 3.0);
  return x;
}

ExprTree with_constant(const ExprTree& t, int const_ordinal, double value) {
  auto nodes = t.nodes();
  nodes[t.constant_indices()[const_ordinal]].value = value;
  return ExprTree(nodes, t.num_features(), t.metadata());
}

}  // namespace

TEST_CASE("eval: direct arithmetic") {
  ExprTree t = parse_expr("(add (var 0) (mul (const 2) (var 1)))");
  CHECK(eval(t, std::vector<double>{1.0, 3.0}) == doctest::Approx(7.0));
}

TEST_CASE("eval: division by learned constant") {
  ExprTree t = parse_expr("(div (var 0) (const 0.175))");
  CHECK(eval(t, std::vector<double>{0.35}) == doctest::Approx(2.0));
}

TEST_CASE("eval: protected division") {
  ExprTree t = parse_expr("(div (const 1) (const 0))");
  CHECK(eval(t, std::vector<double>{}) == 1.0);
}

TEST_CASE("eval: dimension mismatch rejected") {
  ExprTree t = parse_expr("(var 0)");
  CHECK_THROWS_AS(eval(t, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("eval: protected operators keep everything finite") {
  Rng rng(7001);
  TreeGenConfig cfg;
  cfg.num_features = 4;
  cfg.max_depth = 8;
  for (int i = 0; i < 2000; ++i) {
    ExprTree t = random_tree(cfg, rng);
    std::vector<double> x(4);
    for (double& v : x) v = rng.uniform(-1e6, 1e6);
    CHECK(std::isfinite(eval(t, x)));
  }
}

TEST_CASE("eval_forest") {
  SUBCASE("identical constant trees") {
    Forest f;
    for (int i = 0; i < 3; ++i) f.trees.push_back(parse_expr("(const 0)", 0));
    auto v = eval_forest(f, std::vector<double>{});
    CHECK(v == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("mixed trees") {
    Forest f;
    f.trees.push_back(parse_expr("(var 0)", 1));
    f.trees.push_back(parse_expr("(const 5)", 1));
    auto v = eval_forest(f, std::vector<double>{2.0});
    CHECK(v == std::vector<double>{2.0, 5.0});
  }
  SUBCASE("distilled cartpole form") {
    Forest f;
    f.trees.push_back(
        parse_expr("(add (var 2) (add (mul (const 2) (var 3)) (mul (const 3) (var 4))))", 5));
    auto v = eval_forest(f, std::vector<double>{0.0, 0.0, 1.0, 1.0, 1.0});
    REQUIRE(v.size() == 1);
    CHECK(v[0] == doctest::Approx(6.0));
  }
}

TEST_CASE("select_action") {
  Rng rng(42);
  SUBCASE("continuous is identity") {
    Action a = select_action({0.3, -1.2}, ActionMode::continuous, rng);
    CHECK(a.values == std::vector<double>{0.3, -1.2});
  }
  SUBCASE("uniform softmax sampling") {
    std::vector<int> counts(3, 0);
    for (int i = 0; i < 100000; ++i)
      counts[select_action({0.0, 0.0, 0.0}, ActionMode::discrete, rng).index]++;
    for (int c : counts) CHECK(std::abs(c / 100000.0 - 1.0 / 3.0) < 0.01);
  }
  SUBCASE("dominant logit deterministic") {
    Action a = select_action({1000.0, 0.0, 0.0}, ActionMode::discrete, rng, true);
    CHECK(a.index == 0);
  }
  SUBCASE("empty vector rejected") {
    CHECK_THROWS_AS(select_action({}, ActionMode::discrete, rng), std::invalid_argument);
  }
  SUBCASE("argmax ties break to lowest index") {
    CHECK(argmax_index(std::vector<double>{2.0, 2.0, 1.0}) == 0);
  }
}

TEST_CASE("softmax: normalization and shift invariance") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(3 + rng.uniform_int(4));
    for (double& x : v) x = rng.uniform(-5.0, 5.0);
    auto p = softmax(v);
    double sum = 0.0;
    for (double x : p) sum += x;
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    double k = rng.uniform(-10.0, 10.0);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += k;
    auto p2 = softmax(shifted);
    for (size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(p2[i]).epsilon(1e-9));
    CHECK(argmax_index(v) == argmax_index(shifted));
  }
}

TEST_CASE("parse: basic structure") {
  ExprTree t = parse_expr("(add (var 0) (const 2.5))");
  REQUIRE(t.node_count() == 3);
  CHECK(t.nodes()[0].kind == ExprNode::Kind::op);
  CHECK(t.nodes()[0].op == OpKind::add);
  CHECK(t.nodes()[1].kind == ExprNode::Kind::variable);
  CHECK(t.nodes()[1].var == 0);
  CHECK(t.nodes()[2].kind == ExprNode::Kind::constant);
  CHECK(t.nodes()[2].value == 2.5);
  CHECK(t.num_features() == 1);
}

TEST_CASE("parse/render round trip on random trees") {
  Rng rng(1234);
  TreeGenConfig cfg;
  cfg.num_features = 5;
  for (int i = 0; i < 300; ++i) {
    ExprTree t = random_tree(cfg, rng);
    ExprTree back = parse_expr(render(t), t.num_features());
    CHECK(t.structurally_equal(back));
  }
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_expr("(add (var 0))"), ParseError);
  CHECK_THROWS_AS(parse_expr("(sin (var 0))"), ParseError);
  CHECK_THROWS_AS(parse_expr("(const zzz)"), ParseError);
  CHECK_THROWS_AS(parse_expr("(var -1)"), ParseError);
  CHECK_THROWS_AS(parse_expr("(add (var 0) (var 1)) junk"), ParseError);
  try {
    parse_expr("(mul (var 0) (nope (var 1)))");
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.position() > 0);
  }
}

TEST_CASE("grad_constants: hand-checked cases") {
  SUBCASE("d(c*x)/dc = x") {
    ExprTree t = parse_expr("(mul (const 1) (var 0))");
    auto g = grad_constants(t, std::vector<double>{3.0}, 1.0);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == doctest::Approx(3.0));
  }
  SUBCASE("d(exp c)/dc at 0") {
    ExprTree t = parse_expr("(exp (const 0))", 0);
    auto g = grad_constants(t, std::vector<double>{}, 1.0);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == doctest::Approx(1.0));
  }
  SUBCASE("comparisons pass zero gradient") {
    ExprTree t = parse_expr("(leq (var 0) (const 1))");
    auto g = grad_constants(t, std::vector<double>{0.3}, 1.0);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == 0.0);
  }
  SUBCASE("upstream scales the gradient") {
    ExprTree t = parse_expr("(mul (const 2) (var 0))");
    auto g = grad_constants(t, std::vector<double>{3.0}, -0.5);
    CHECK(g[0] == doctest::Approx(-1.5));
  }
}

TEST_CASE("grad_constants matches central finite differences") {
  Rng rng(4242);
  TreeGenConfig cfg;
  cfg.num_features = 3;
  cfg.max_depth = 6;
  const double h = 1e-5;
  int accepted = 0;
  int guard = 0;
  while (accepted < 100 && guard++ < 100000) {
    ExprTree t = random_tree(cfg, rng);
    if (t.num_constants() == 0) continue;
    std::vector<double> x = random_features(3, rng);
    if (switch_distance(t, x) < 1e-3) continue;
    if (std::abs(eval(t, x)) > 1e4) continue;

    double upstream = rng.uniform(-2.0, 2.0);
    auto g = grad_constants(t, x, upstream);
    bool sample_ok = true;
    double max_rel = 0.0;
    for (int j = 0; j < t.num_constants() && sample_ok; ++j) {
      double c = t.nodes()[t.constant_indices()[j]].value;
      auto fd_at = [&](double step) {
        double fp = upstream * eval(with_constant(t, j, c + step), x);
        double fm = upstream * eval(with_constant(t, j, c - step), x);
        return (fp - fm) / (2.0 * step);
      };
      double fd = fd_at(h);
      // reject samples where the function is locally non-smooth in c
      if (std::abs(fd - fd_at(h / 2)) > 1e-6 * std::max(1.0, std::abs(fd))) {
        sample_ok = false;
        break;
      }
      max_rel = std::max(max_rel, std::abs(g[j] - fd) / std::max(1.0, std::abs(fd)));
    }
    if (!sample_ok) continue;
    ++accepted;
    CHECK(max_rel <= 1e-4);
  }
  CHECK(accepted == 100);
}

TEST_CASE("random_tree") {
  Rng rng(77);
  SUBCASE("depth bound one forces a leaf") {
    TreeGenConfig cfg;
    cfg.num_features = 2;
    cfg.min_depth = 1;
    cfg.max_depth = 1;
    for (int i = 0; i < 50; ++i) {
      ExprTree t = random_tree(cfg, rng);
      CHECK(t.node_count() == 1);
      CHECK(t.depth() == 1);
    }
  }
  SUBCASE("invariants hold over many samples") {
    TreeGenConfig cfg;
    cfg.num_features = 4;
    cfg.min_depth = 2;
    cfg.max_depth = 5;
    for (int i = 0; i < 1000; ++i) {
      ExprTree t = random_tree(cfg, rng);  // constructor validates arity/finiteness
      CHECK(t.depth() <= 5);
      CHECK(t.node_count() >= 1);
    }
  }
  SUBCASE("seeded determinism") {
    TreeGenConfig cfg;
    cfg.num_features = 4;
    Rng a(123), b(123);
    for (int i = 0; i < 20; ++i)
      CHECK(random_tree(cfg, a).structurally_equal(random_tree(cfg, b)));
  }
  SUBCASE("allowed_vars restricts sampling") {
    TreeGenConfig cfg;
    cfg.num_features = 6;
    cfg.allowed_vars = {1, 4};
    for (int i = 0; i < 200; ++i) {
      ExprTree t = random_tree(cfg, rng);
      for (const auto& n : t.nodes())
        if (n.kind == ExprNode::Kind::variable) CHECK((n.var == 1 || n.var == 4));
    }
  }
}

TEST_CASE("simplify") {
  SUBCASE("constant folding") {
    ExprTree t = simplify(parse_expr("(add (const 1) (const 2))", 0));
    CHECK(t.structurally_equal(parse_expr("(const 3)", 0)));
  }
  SUBCASE("multiplicative identity") {
    ExprTree t = simplify(parse_expr("(mul (var 0) (const 1))"));
    CHECK(t.structurally_equal(parse_expr("(var 0)")));
  }
  SUBCASE("no foldable constants") {
    ExprTree t = simplify(parse_expr("(div (var 0) (const 0.175))"));
    CHECK(t.structurally_equal(parse_expr("(div (var 0) (const 0.175))")));
  }
  SUBCASE("eval preserved on random trees") {
    Rng rng(31337);
    TreeGenConfig cfg;
    cfg.num_features = 3;
    for (int i = 0; i < 1000; ++i) {
      ExprTree t = random_tree(cfg, rng);
      ExprTree s = simplify(t);
      std::vector<double> x = random_features(3, rng);
      CHECK(std::abs(eval(t, x) - eval(s, x)) <= 1e-9);
      CHECK(s.depth() <= t.depth());
    }
  }
}

TEST_CASE("to_dot emits one node per ExprNode") {
  ExprTree t = parse_expr("(add (var 0) (const 2.5))");
  std::string dot = to_dot(t);
  CHECK(dot.find("digraph") != std::string::npos);
  CHECK(dot.find("add") != std::string::npos);
  CHECK(dot.find("x0") != std::string::npos);
  CHECK(dot.find("2.5") != std::string::npos);
  CHECK(dot.find("n0 -> n1") != std::string::npos);
  CHECK(dot.find("n0 -> n2") != std::string::npos);
}

TEST_CASE("render_infix") {
  CHECK(render_infix(parse_expr("(div (var 2) (const 0.175))")) == "(x2 / 0.175)");
  CHECK(render_infix(parse_expr("(not (sqrt (var 0)))")) == "not(sqrt(x0))");
}
