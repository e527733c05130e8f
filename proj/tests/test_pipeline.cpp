#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "sympol/pipeline.hpp"

using namespace sympol;

namespace {

Transition make_tr(double reward, double value, bool done = false) {
  Transition t;
  t.reward = reward;
  t.value = value;
  t.done = done;
  return t;
}

// independent brute-force evaluation of the n-step advantage formula
std::vector<double> brute_force_advantages(const std::vector<double>& rewards,
                                           const std::vector<double>& values, bool terminal,
                                           double bootstrap, double gamma) {
  const int n = static_cast<int>(rewards.size());
  std::vector<double> adv(n);
  double v_end = terminal ? 0.0 : bootstrap;
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    double p = 1.0;
    for (int k = t; k < n; ++k) {
      acc += p * rewards[k];
      p *= gamma;
    }
    acc += p * v_end;
    adv[t] = acc - values[t];
  }
  return adv;
}

std::vector<double*> all_params(MlpPolicy& p) {
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

std::vector<double> all_grads(const Gradients& g) {
  std::vector<double> out;
  for (const auto& layer : g.w)
    for (double v : layer) out.push_back(v);
  for (const auto& layer : g.b)
    for (double v : layer) out.push_back(v);
  for (double v : g.w_actor) out.push_back(v);
  for (double v : g.b_actor) out.push_back(v);
  for (double v : g.w_critic) out.push_back(v);
  out.push_back(g.b_critic);
  for (double v : g.log_std) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("compute_advantages: worked example") {
  RolloutBuffer buf;
  buf.transitions = {make_tr(1.0, 0.5), make_tr(2.0, 0.25)};
  buf.bootstrap_value = 1.0;
  compute_advantages(buf, 0.9);
  CHECK(buf.transitions[0].advantage == doctest::Approx(3.11).epsilon(1e-12));
  CHECK(buf.transitions[0].return_target == doctest::Approx(3.61).epsilon(1e-12));
}

TEST_CASE("compute_advantages: zeros stay zero") {
  RolloutBuffer buf;
  for (int i = 0; i < 5; ++i) buf.transitions.push_back(make_tr(0.0, 0.0));
  buf.bootstrap_value = 0.0;
  compute_advantages(buf, 0.9);
  for (const auto& t : buf.transitions) CHECK(t.advantage == 0.0);
}

TEST_CASE("compute_advantages: single terminal step") {
  RolloutBuffer buf;
  buf.transitions = {make_tr(1.0, 0.0, true)};
  buf.bootstrap_value = 123.0;  // must be ignored on terminal segments
  compute_advantages(buf, 0.9);
  CHECK(buf.transitions[0].advantage == 1.0);
}

TEST_CASE("compute_advantages: empty buffer rejected") {
  RolloutBuffer buf;
  CHECK_THROWS_AS(compute_advantages(buf, 0.9), std::invalid_argument);
}

TEST_CASE("compute_advantages matches the brute-force oracle bitwise") {
  Rng rng(2718);
  for (int episode = 0; episode < 50; ++episode) {
    std::vector<double> rewards(10), values(10);
    for (int i = 0; i < 10; ++i) {
      rewards[i] = rng.uniform(-2.0, 2.0);
      values[i] = rng.uniform(-1.0, 1.0);
    }
    bool terminal = rng.bernoulli(0.5);
    double bootstrap = rng.uniform(-1.0, 1.0);
    double gamma = rng.uniform(0.5, 1.0);

    RolloutBuffer buf;
    for (int i = 0; i < 10; ++i) buf.transitions.push_back(make_tr(rewards[i], values[i]));
    buf.transitions.back().done = terminal;
    buf.bootstrap_value = bootstrap;
    compute_advantages(buf, gamma);

    auto oracle = brute_force_advantages(rewards, values, terminal, bootstrap, gamma);
    for (int i = 0; i < 10; ++i) {
      CHECK(buf.transitions[i].advantage == oracle[i]);  // bitwise
      CHECK(buf.transitions[i].return_target == oracle[i] + values[i]);
    }
  }
}

TEST_CASE("clipped objective: the three textbook cases") {
  CHECK(clipped_objective(1.3, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_objective(1.0, 0.7, 0.2) == doctest::Approx(0.7));
}

TEST_CASE("clipped objective: limits") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    double r = rng.uniform(0.1, 3.0);
    double a = rng.uniform(-2.0, 2.0);
    CHECK(clipped_objective(r, a, 1e9) == doctest::Approx(r * a));  // eps -> inf
    CHECK(clipped_objective(r, 0.0, 0.2) == 0.0);                   // zero advantage
  }
}

TEST_CASE("ppo_loss: ratio one makes the policy term the mean advantage") {
  Rng rng(31);
  MlpPolicy p = make_policy(3, {8}, 2, ActionMode::discrete, rng);
  PpoConfig cfg;
  std::vector<Transition> batch;
  double mean_adv = 0.0;
  for (int i = 0; i < 6; ++i) {
    Transition t;
    t.features = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    ForwardResult fr = forward(p, t.features);
    t.action = Action::discrete(i % 2);
    t.logprob_old = categorical_logprob(fr.logits, t.action.index);  // ratio == 1
    t.advantage = rng.uniform(-1, 1);
    t.return_target = rng.uniform(-1, 1);
    mean_adv += t.advantage;
    batch.push_back(t);
  }
  mean_adv /= batch.size();
  PpoLossTerms terms = ppo_loss(p, batch, cfg);
  CHECK(terms.policy == doctest::Approx(mean_adv).epsilon(1e-9));
  CHECK(terms.total ==
        doctest::Approx(terms.policy - cfg.value_coeff * terms.value +
                        cfg.entropy_coeff * terms.entropy));
}

TEST_CASE("ppo_gradients match finite differences of the loss") {
  Rng rng(47);
  const double h = 1e-6;
  for (int trial = 0; trial < 4; ++trial) {
    ActionMode mode = trial % 2 == 0 ? ActionMode::discrete : ActionMode::continuous;
    MlpPolicy p = make_policy(2, {4}, 2, mode, rng);
    PpoConfig cfg;
    std::vector<Transition> batch;
    for (int i = 0; i < 5; ++i) {
      Transition t;
      t.features = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      ForwardResult fr = forward(p, t.features);
      if (mode == ActionMode::discrete) {
        t.action = Action::discrete(rng.uniform_int(2));
      } else {
        std::vector<double> a{fr.logits[0] + 0.3 * rng.normal(),
                              fr.logits[1] + 0.3 * rng.normal()};
        t.action = Action::continuous(a);
      }
      // a logprob_old slightly off the current policy puts ratios near 1
      t.logprob_old = (mode == ActionMode::discrete
                           ? categorical_logprob(fr.logits, t.action.index)
                           : gaussian_logprob(t.action.values, fr.logits, p.log_std)) +
                      rng.uniform(-0.05, 0.05);
      t.advantage = rng.uniform(-1, 1);
      t.return_target = rng.uniform(-1, 1);
      batch.push_back(t);
    }

    auto grads = all_grads(ppo_gradients(p, batch, cfg).grads);
    auto params = all_params(p);
    double max_rel = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
      double orig = *params[i];
      *params[i] = orig + h;
      double lp = -ppo_loss(p, batch, cfg).total;
      *params[i] = orig - h;
      double lm = -ppo_loss(p, batch, cfg).total;
      *params[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      max_rel = std::max(max_rel, std::abs(grads[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    CHECK(max_rel <= 1e-4);
  }
}

TEST_CASE("collect_distill_dataset: exact row count and widths") {
  Rng rng(3);
  auto env = make_env("cartpole-cont");
  IdentityFeatures fs;
  MlpPolicy teacher = make_policy(4, {8}, 1, ActionMode::continuous, rng);
  DataMatrix x, y;
  collect_distill_dataset(teacher, *env, fs, 500, 7, &x, &y);
  CHECK(x.rows == 500);
  CHECK(x.cols == 4);  // classic control: F = state_dim
  CHECK(y.rows == 500);
  CHECK(y.cols == 1);
  // Y rows are the teacher means at X rows
  for (int i = 0; i < 20; ++i)
    CHECK(y.row(i)[0] == forward(teacher, x.row(i)).logits[0]);
}

TEST_CASE("distill_forest: structure and reproducibility") {
  Rng rng(11);
  DataMatrix x;
  x.rows = 300;
  x.cols = 2;
  for (int i = 0; i < 600; ++i) x.data.push_back(rng.uniform(-1, 1));

  SUBCASE("single column gives a single tree") {
    DataMatrix y;
    y.rows = 300;
    y.cols = 1;
    for (int i = 0; i < 300; ++i) y.data.push_back(2.0 * x.row(i)[0]);
    GpConfig cfg;
    cfg.generations = 60;
    cfg.seed = 5;
    Forest f = distill_forest(x, y, cfg, ActionMode::continuous);
    CHECK(f.trees.size() == 1);
    CHECK(tree_mse(f.trees[0], x, std::vector<double>(y.data)) < 1e-6);
  }
  SUBCASE("duplicated columns give equal MSE") {
    DataMatrix y;
    y.rows = 300;
    y.cols = 2;
    for (int i = 0; i < 300; ++i) {
      double v = x.row(i)[0] + 0.5 * x.row(i)[1];
      y.data.push_back(v);
      y.data.push_back(v);
    }
    GpConfig cfg;
    cfg.generations = 25;
    cfg.seed = 9;
    Forest f = distill_forest(x, y, cfg, ActionMode::discrete);
    REQUIRE(f.trees.size() == 2);
    std::vector<double> col(300);
    for (int i = 0; i < 300; ++i) col[i] = y.row(i)[0];
    CHECK(tree_mse(f.trees[0], x, col) == tree_mse(f.trees[1], x, col));
    CHECK(render(f.trees[0]) == render(f.trees[1]));
  }
}

TEST_CASE("active_feature_columns skips constant columns") {
  DataMatrix x;
  x.rows = 10;
  x.cols = 3;
  for (int i = 0; i < 10; ++i) {
    x.data.push_back(0.7);          // constant
    x.data.push_back(i * 0.1);      // varies
    x.data.push_back(0.0);          // constant zero (padding)
  }
  CHECK(active_feature_columns(x) == std::vector<int>{1});
}

TEST_CASE("mixed policy") {
  Rng rng(21);
  MlpPolicy teacher = make_policy(5, {8}, 3, ActionMode::discrete, rng);

  SUBCASE("zero symbolic slots is bitwise the teacher") {
    auto env = make_env("objectpong");
    IdentityFeatures fs;
    MixedPolicy mp = mixed_from_teacher(teacher);
    EvalReport a = evaluate_policy(*env, fs, teacher_actor(teacher, false), 10, 99);
    EvalReport b = evaluate_policy(*env, fs, mixed_actor(mp, false), 10, 99);
    REQUIRE(a.per_episode.size() == b.per_episode.size());
    for (size_t i = 0; i < a.per_episode.size(); ++i)
      CHECK(a.per_episode[i] == b.per_episode[i]);  // bitwise
  }
  SUBCASE("all slots symbolic ignores the teacher") {
    Forest f;
    for (int i = 0; i < 3; ++i) f.trees.push_back(parse_expr("(const " + std::to_string(i) + ")", 5));
    f.action_mode = ActionMode::discrete;
    MixedPolicy mp = mixed_from_forest(f);
    CHECK(mp.teacher == nullptr);
    std::vector<double> features(5, 0.3);
    CHECK(mixed_logits(mp, features) == std::vector<double>{0.0, 1.0, 2.0});
  }
  SUBCASE("a dominant symbolic slot wins every sample") {
    MixedPolicy mp = mixed_from_teacher(teacher);
    mp.slots[0] = parse_expr("(const 1000000)", 5);
    std::vector<double> features(5, 0.1);
    for (int i = 0; i < 50; ++i) CHECK(mixed_act(mp, features, rng).index == 0);
  }
}

TEST_CASE("evaluate_policy") {
  auto env = make_env("objectpong");
  IdentityFeatures fs;
  // the scripted perfect tracker as an ActFn over raw state features
  ActFn tracker = [](std::span<const double> f, Rng&) {
    double ball_y = f[1], paddle_y = f[4];
    return Action::discrete(ball_y < paddle_y - 1.0 ? 0 : (ball_y > paddle_y + 1.0 ? 2 : 1));
  };
  SUBCASE("tracker hit rate is one") {
    EvalReport r = evaluate_policy(*env, fs, tracker, 20, 500);
    CHECK(r.info_totals["misses"] == 0.0);
    CHECK(r.info_totals["hits"] > 0.0);
    CHECK(r.mean == doctest::Approx(r.info_totals["hits"] / 20.0));
  }
  SUBCASE("same seed gives identical per-episode rewards") {
    EvalReport a = evaluate_policy(*env, fs, tracker, 5, 42);
    EvalReport b = evaluate_policy(*env, fs, tracker, 5, 42);
    CHECK(a.per_episode == b.per_episode);
  }
  SUBCASE("zero episodes rejected") {
    CHECK_THROWS_AS(evaluate_policy(*env, fs, tracker, 0, 1), std::invalid_argument);
  }
}

TEST_CASE("train_teacher: same seed gives identical curves") {
  auto env = make_env("cartpole-cont");
  IdentityFeatures fs;
  PpoConfig cfg;
  cfg.total_steps = 4096;
  cfg.rollout_len = 1024;
  cfg.epochs = 2;
  cfg.eval_every_updates = 2;
  cfg.eval_episodes = 3;
  TeacherResult a = train_teacher(*env, fs, cfg, 7, 1e9);
  TeacherResult b = train_teacher(*env, fs, cfg, 7, 1e9);
  REQUIRE(a.curve.size() == b.curve.size());
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].steps == b.curve[i].steps);
    bool both_nan = std::isnan(a.curve[i].rollout_reward) && std::isnan(b.curve[i].rollout_reward);
    if (!both_nan) CHECK(a.curve[i].rollout_reward == b.curve[i].rollout_reward);
  }
  CHECK(a.eval_reward == b.eval_reward);
  CHECK_FALSE(a.reached_threshold);  // threshold deliberately unreachable
}

TEST_CASE("objectpong feature source produces 4 m_bar features") {
  auto env = make_env("objectpong");
  env->reset(3);
  ExtractorConfig cfg;
  ObjectFeatures fs(cfg);
  fs.begin_episode(3);
  auto f = fs.observe(*env);
  CHECK(f.size() == 64);
  int nonzero = 0;
  for (double v : f) nonzero += v != 0.0;
  CHECK(nonzero >= 4);  // ball and paddle positions at least
}
