#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "sympol/expr.hpp"
#include "sympol/tinynn.hpp"

using namespace sympol;

namespace {

// flat view over every trainable parameter, in a fixed order
std::vector<double*> param_ptrs(MlpPolicy& p) {
  std::vector<double*> out;
  for (auto& layer : p.w)
    for (double& v : layer) out.push_back(&v);
  for (auto& layer : p.b)
    for (double& v : layer) out.push_back(&v);
  for (double& v : p.w_actor) out.push_back(&v);
  for (double& v : p.b_actor) out.push_back(&v);
  for (double& v : p.w_critic) out.push_back(&v);
  out.push_back(&p.b_critic);
  for (double& v : p.log_std) out.push_back(&v);
  return out;
}

std::vector<double*> grad_ptrs(Gradients& g) {
  std::vector<double*> out;
  for (auto& layer : g.w)
    for (double& v : layer) out.push_back(&v);
  for (auto& layer : g.b)
    for (double& v : layer) out.push_back(&v);
  for (double& v : g.w_actor) out.push_back(&v);
  for (double& v : g.b_actor) out.push_back(&v);
  for (double& v : g.w_critic) out.push_back(&v);
  out.push_back(&g.b_critic);
  for (double& v : g.log_std) out.push_back(&v);
  return out;
}

MlpPolicy zero_policy(int input_dim, std::vector<int> hidden, int action_dim, ActionMode mode) {
  Rng rng(1);
  MlpPolicy p = make_policy(input_dim, std::move(hidden), action_dim, mode, rng);
  for (double* v : param_ptrs(p)) *v = 0.0;
  return p;
}

}  // namespace

TEST_CASE("forward: zero parameters give zero outputs") {
  MlpPolicy p = zero_policy(3, {4, 4}, 2, ActionMode::discrete);
  auto r = forward(p, std::vector<double>{0.5, -1.0, 2.0});
  CHECK(r.logits == std::vector<double>{0.0, 0.0});
  CHECK(r.value == 0.0);
}

TEST_CASE("forward: identity actor head on a trunk-free net") {
  MlpPolicy p = zero_policy(2, {}, 2, ActionMode::continuous);
  p.w_actor = {1.0, 0.0, 0.0, 1.0};
  auto r = forward(p, std::vector<double>{1.0, 2.0});
  CHECK(r.logits == std::vector<double>{1.0, 2.0});
}

TEST_CASE("forward: tanh saturates at one") {
  MlpPolicy p = zero_policy(1, {1}, 1, ActionMode::discrete);
  p.w[0] = {1000.0};
  p.w_actor = {1.0};
  auto r = forward(p, std::vector<double>{5.0});
  CHECK(r.logits[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("forward: dimension mismatch rejected") {
  MlpPolicy p = zero_policy(3, {4}, 2, ActionMode::discrete);
  CHECK_THROWS_AS(forward(p, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("backward: sum-of-logits loss puts ones in the actor bias") {
  MlpPolicy p = zero_policy(2, {}, 3, ActionMode::discrete);
  std::vector<std::vector<double>> batch{{0.3, -0.7}};
  auto res = backward(p, batch, [](const std::vector<double>& logits, double, int) {
    LossSlope s;
    s.loss = logits[0] + logits[1] + logits[2];
    s.dlogits = {1.0, 1.0, 1.0};
    return s;
  });
  CHECK(res.grads.b_actor == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward: zero loss gives zero gradients") {
  Rng rng(5);
  MlpPolicy p = make_policy(3, {4}, 2, ActionMode::discrete, rng);
  std::vector<std::vector<double>> batch{{0.1, 0.2, 0.3}, {-1.0, 0.5, 0.0}};
  auto res = backward(p, batch, [](const std::vector<double>& logits, double, int) {
    LossSlope s;
    s.loss = 0.0;
    s.dlogits.assign(logits.size(), 0.0);
    return s;
  });
  Gradients g = res.grads;
  for (double* v : grad_ptrs(g)) CHECK(*v == 0.0);
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(99);
  const double h = 1e-5;
  for (int trial = 0; trial < 8; ++trial) {
    ActionMode mode = trial % 2 == 0 ? ActionMode::continuous : ActionMode::discrete;
    MlpPolicy p = make_policy(3, {4}, 2, mode, rng);
    REQUIRE(p.num_params() <= 64);

    std::vector<std::vector<double>> batch;
    for (int i = 0; i < 5; ++i)
      batch.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    std::vector<double> target{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    double vtarget = rng.uniform(-1, 1);

    // quadratic pull of logits, value and (continuous) log_std toward targets
    auto make_loss = [&](const MlpPolicy& pol) {
      return [&, &pol = pol](const std::vector<double>& logits, double value, int) {
        LossSlope s;
        s.dlogits.resize(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) {
          double d = logits[i] - target[i];
          s.loss += d * d;
          s.dlogits[i] = 2.0 * d;
        }
        double dv = value - vtarget;
        s.loss += dv * dv;
        s.dvalue = 2.0 * dv;
        s.dlog_std.resize(pol.log_std.size());
        for (size_t i = 0; i < pol.log_std.size(); ++i) {
          double d = pol.log_std[i] + 0.3;
          s.loss += d * d;
          s.dlog_std[i] = 2.0 * d;
        }
        return s;
      };
    };

    auto res = backward(p, batch, make_loss(p));
    Gradients g = res.grads;
    auto gp = grad_ptrs(g);

    MlpPolicy probe = p;
    auto pp = param_ptrs(probe);
    double max_rel = 0.0;
    for (size_t i = 0; i < pp.size(); ++i) {
      double orig = *pp[i];
      *pp[i] = orig + h;
      double lp = backward(probe, batch, make_loss(probe)).loss;
      *pp[i] = orig - h;
      double lm = backward(probe, batch, make_loss(probe)).loss;
      *pp[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      max_rel = std::max(max_rel, std::abs(*gp[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    CHECK(max_rel <= 1e-4);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    Rng rng(3);
    MlpPolicy p = make_policy(2, {3}, 2, ActionMode::discrete, rng);
    MlpPolicy before = p;
    OptimState opt = OptimState::init(p);
    adam_step(p, Gradients::zeros_like(p), opt);
    auto pa = param_ptrs(p), pb = param_ptrs(before);
    for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
    CHECK(opt.step == 1);
  }
  SUBCASE("first step moves by about lr") {
    MlpPolicy p = zero_policy(1, {}, 1, ActionMode::discrete);
    OptimState opt = OptimState::init(p, 0.01);
    Gradients g = Gradients::zeros_like(p);
    g.b_actor[0] = 3.7;  // any constant gradient
    adam_step(p, g, opt);
    CHECK(std::abs(p.b_actor[0]) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.b_actor[0] < 0.0);
  }
  SUBCASE("zero learning rate is a no-op") {
    Rng rng(4);
    MlpPolicy p = make_policy(2, {3}, 1, ActionMode::continuous, rng);
    MlpPolicy before = p;
    OptimState opt = OptimState::init(p, 0.0);
    Gradients g = Gradients::zeros_like(p);
    g.b_critic = 1.0;
    adam_step(p, g, opt);
    auto pa = param_ptrs(p), pb = param_ptrs(before);
    for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
  }
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  Rng rng(7);
  MlpPolicy p = make_policy(4, {8, 8}, 3, ActionMode::continuous, rng);
  OptimState opt = OptimState::init(p, 0.0005);
  // dirty the optimizer state a little
  Gradients g = Gradients::zeros_like(p);
  g.b_critic = 0.25;
  adam_step(p, g, opt);

  OptimState opt2 = OptimState::init(p);
  MlpPolicy q = policy_from_json(policy_to_json(p, &opt), &opt2);

  std::vector<double> state{0.1, -0.2, 0.33, 1.5};
  auto rp = forward(p, state);
  auto rq = forward(q, state);
  CHECK(rp.value == rq.value);  // bitwise
  for (size_t i = 0; i < rp.logits.size(); ++i) CHECK(rp.logits[i] == rq.logits[i]);
  CHECK(opt2.step == opt.step);
  CHECK(opt2.m.b_critic == opt.m.b_critic);
}

TEST_CASE("discrete sampling from network logits matches softmax") {
  Rng rng(11);
  MlpPolicy p = make_policy(2, {8}, 3, ActionMode::discrete, rng);
  // scale up the actor head so the logits are not almost uniform
  for (double& v : p.w_actor) v *= 200.0;
  auto r = forward(p, std::vector<double>{0.4, -0.9});
  auto probs = softmax(r.logits);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 100000; ++i)
    counts[select_action(r.logits, ActionMode::discrete, rng).index]++;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / 100000.0 - probs[k]) < 0.01);
}

TEST_CASE("num_params matches the analytic formula") {
  Rng rng(2);
  MlpPolicy p = make_policy(5, {64, 64}, 3, ActionMode::continuous, rng);
  int expect = 64 * 5 + 64 + 64 * 64 + 64 + 3 * 64 + 3 + 64 + 1 + 3;
  CHECK(p.num_params() == expect);
  MlpPolicy q = make_policy(5, {64, 64}, 3, ActionMode::continuous, rng);
  auto qp = param_ptrs(q);
  CHECK(static_cast<int>(qp.size()) == expect);
}
