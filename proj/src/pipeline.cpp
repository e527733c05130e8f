#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "sympol/pipeline.hpp"

namespace sympol {

namespace {

constexpr uint64_t kStreamMaster = 101;
constexpr uint64_t kStreamFitnessSeeds = 102;
constexpr uint64_t kStreamAssembledEval = 103;
constexpr uint64_t kStreamBuffer = 104;
constexpr uint64_t kStreamProbe = 105;
constexpr double kLogRatioClamp = 20.0;

}  // namespace

// --- Distillation -------------------------------------------------------------------

std::vector<int> active_feature_columns(const DataMatrix& x) {
  std::vector<int> active;
  for (int j = 0; j < x.cols; ++j) {
    double lo = x.row(0)[j], hi = lo;
    for (int i = 1; i < x.rows; ++i) {
      lo = std::min(lo, x.row(i)[j]);
      hi = std::max(hi, x.row(i)[j]);
    }
    if (hi - lo > 1e-12) active.push_back(j);
  }
  return active;
}

Forest distill_forest(const DataMatrix& x, const DataMatrix& y, GpConfig cfg,
                      ActionMode action_mode, const DistillLogger& log) {
  if (x.rows != y.rows || x.rows < 1) throw std::invalid_argument("distill_forest: bad dataset");
  cfg.treegen.num_features = x.cols;
  cfg.treegen.allowed_vars = active_feature_columns(x);

  Forest forest;
  forest.action_mode = action_mode;
  std::vector<double> column(x.rows);
  for (int a = 0; a < y.cols; ++a) {
    for (int i = 0; i < y.rows; ++i) column[i] = y.row(i)[a];
    GenerationCallback cb;
    if (log) {
      cb = [&, a](int gen, const std::vector<Candidate>& pop, const Candidate& best,
                  double wall) { log(a, gen, pop, best, wall); };
    }
    RegressionResult r = run_regression(x, column, cfg, cb);
    ExprTree tree = r.best;
    tree.set_metadata("action_" + std::to_string(a));
    forest.trees.push_back(std::move(tree));
  }
  validate_forest(forest);
  return forest;
}

// --- Neural-guided fine-tuning --------------------------------------------------------

namespace {

// PPO-surrogate training sample for the SGD oracle, everything but the
// candidate slot's logit precomputed.
struct SurrogateSample {
  std::vector<double> features;
  std::vector<double> base_logits;  // slot i overwritten per candidate
  Action action;
  double advantage = 0.0;
  double logprob_old = 0.0;
};

struct SurrogateBuffer {
  std::vector<SurrogateSample> samples;
  int slot = 0;
  ActionMode mode = ActionMode::discrete;
  std::vector<double> log_std;  // continuous mode
};

double categorical_prob_of_index(const std::vector<double>& logits, int index) {
  double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return std::exp(logits[index] - m) / sum;
}

// min(rA, clip(r)A) and its derivative w.r.t. the new logprob
std::pair<double, double> surrogate_term(double lp_new, double lp_old, double advantage,
                                         double clip_eps) {
  double log_ratio = std::clamp(lp_new - lp_old, -kLogRatioClamp, kLogRatioClamp);
  double ratio = std::exp(log_ratio);
  double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  double obj = std::min(ratio * advantage, clipped * advantage);
  double dobj = ratio * advantage <= clipped * advantage ? ratio * advantage : 0.0;
  return {obj, dobj};
}

// loss = -mean surrogate objective; gradient over the candidate's constants
LossEval surrogate_loss(const ExprTree& tree, const SurrogateBuffer& buf, double clip_eps) {
  LossEval out;
  out.grad.assign(tree.num_constants(), 0.0);
  thread_local std::vector<double> logits;
  for (const auto& s : buf.samples) {
    EvalGrad eg = eval_with_grad(tree, s.features, 1.0);
    logits = s.base_logits;
    logits[buf.slot] = eg.value;

    double lp_new, dlp_dlogit;
    if (buf.mode == ActionMode::discrete) {
      lp_new = categorical_logprob(logits, s.action.index);
      double p_slot = categorical_prob_of_index(logits, buf.slot);
      dlp_dlogit = (s.action.index == buf.slot ? 1.0 : 0.0) - p_slot;
    } else {
      lp_new = gaussian_logprob(s.action.values, logits, buf.log_std);
      double sigma = std::exp(buf.log_std[buf.slot]);
      dlp_dlogit = (s.action.values[buf.slot] - logits[buf.slot]) / (sigma * sigma);
    }
    auto [obj, dobj_dlp] = surrogate_term(lp_new, s.logprob_old, s.advantage, clip_eps);
    out.loss -= obj;
    double upstream = -dobj_dlp * dlp_dlogit;
    for (size_t j = 0; j < eg.dconstants.size(); ++j) out.grad[j] += upstream * eg.dconstants[j];
  }
  double inv = 1.0 / static_cast<double>(buf.samples.size());
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

MixedPolicy build_mixed(const MlpPolicy& teacher, const std::vector<const ExprTree*>& slot_trees,
                        ActionMode mode) {
  MixedPolicy mp;
  mp.teacher = &teacher;
  mp.mode = mode;
  for (const ExprTree* t : slot_trees) {
    if (t)
      mp.slots.emplace_back(*t);
    else
      mp.slots.emplace_back(std::nullopt);
  }
  return mp;
}

// Stochastic rollout of a mixed policy into a PPO-surrogate buffer; values
// come from the teacher critic.
SurrogateBuffer collect_surrogate_buffer(const MlpPolicy& teacher, const MixedPolicy& mp,
                                         int slot, const Env& env_proto,
                                         const FeatureSource& fs_proto, const PpoConfig& cfg,
                                         uint64_t seed) {
  auto env = env_proto.clone_config();
  auto fs = fs_proto.clone();
  Rng act_rng = Rng::derive(seed, kStreamBuffer);

  RolloutBuffer rb;
  rb.transitions.reserve(cfg.rollout_len);
  std::vector<SurrogateSample> pending;
  pending.reserve(cfg.rollout_len);

  bool active = false;
  long episode = 0;
  std::vector<double> features;
  while (static_cast<int>(rb.transitions.size()) < cfg.rollout_len) {
    if (!active) {
      uint64_t ep_seed = Rng::derive(seed, kStreamBuffer + 1).next_u64() + episode;
      env->reset(ep_seed);
      fs->begin_episode(ep_seed);
      features = fs->observe(*env);
      active = true;
      ++episode;
    }
    std::vector<double> logits = mixed_logits(mp, features);
    Action action = [&] {
      if (mp.mode == ActionMode::discrete) return Action::discrete(sample_softmax(logits, act_rng));
      std::vector<double> a(logits.size());
      for (size_t i = 0; i < logits.size(); ++i)
        a[i] = logits[i] + std::exp(teacher.log_std[i]) * act_rng.normal();
      return Action::continuous(std::move(a));
    }();
    double lp = mp.mode == ActionMode::discrete
                    ? categorical_logprob(logits, action.index)
                    : gaussian_logprob(action.values, logits, teacher.log_std);
    double value = forward(teacher, features).value;
    StepResult sr = env->step(action);

    Transition tr;
    tr.features = features;
    tr.action = action;
    tr.reward = sr.reward;
    tr.done = sr.done;
    tr.logprob_old = lp;
    tr.value = value;
    rb.transitions.push_back(tr);

    SurrogateSample ss;
    ss.features = features;
    ss.base_logits = logits;
    ss.action = action;
    ss.logprob_old = lp;
    pending.push_back(std::move(ss));

    if (sr.done)
      active = false;
    else
      features = fs->observe(*env);
  }
  rb.bootstrap_value = active ? forward(teacher, features).value : 0.0;
  compute_advantages(rb, cfg.gamma);

  if (cfg.normalize_advantages) {
    double mean = 0.0;
    for (const auto& t : rb.transitions) mean += t.advantage;
    mean /= rb.transitions.size();
    double var = 0.0;
    for (const auto& t : rb.transitions) var += (t.advantage - mean) * (t.advantage - mean);
    double sd = std::sqrt(var / rb.transitions.size());
    for (auto& t : rb.transitions) t.advantage = (t.advantage - mean) / (sd + 1e-8);
  }
  SurrogateBuffer buf;
  buf.slot = slot;
  buf.mode = mp.mode;
  buf.log_std = teacher.log_std;
  for (size_t i = 0; i < pending.size(); ++i) {
    pending[i].advantage = rb.transitions[i].advantage;
    buf.samples.push_back(std::move(pending[i]));
  }
  return buf;
}

std::vector<Candidate> seed_slot_population(const ExprTree* warm, const GpConfig& cfg, Rng& rng) {
  std::vector<Candidate> pop;
  pop.reserve(cfg.population_size);
  if (warm) {
    pop.push_back(Candidate{*warm, std::nullopt, 0});
    int mutants = (cfg.population_size - 1) * 3 / 5;
    for (int k = 0; k < mutants; ++k) {
      ExprTree m = k % 3 == 0 ? point_mutation(*warm, cfg.treegen, rng)
                              : subtree_mutation(*warm, cfg.treegen, cfg.max_depth, rng);
      pop.push_back(Candidate{std::move(m), std::nullopt, 0});
    }
  }
  while (static_cast<int>(pop.size()) < cfg.population_size)
    pop.push_back(Candidate{random_tree(cfg.treegen, rng), std::nullopt, 0});
  return pop;
}

}  // namespace

FinetuneResult neural_guided_finetune(const MlpPolicy& teacher, const Forest& init_forest,
                                      const Env& env_proto, const FeatureSource& fs_proto,
                                      GpConfig gp_cfg, const PpoConfig& ppo_cfg,
                                      const FinetuneOptions& options, uint64_t seed,
                                      const FinetuneLogger& log) {
  const EnvSpec& spec = env_proto.spec();
  const int n_actions = spec.action_dim;
  if (init_forest.action_dim() != n_actions)
    throw std::invalid_argument("neural_guided_finetune: forest/env action dimension mismatch");
  {
    auto env = env_proto.clone_config();
    if (fs_proto.dim(*env) != init_forest.num_features() ||
        teacher.input_dim != init_forest.num_features())
      throw std::invalid_argument("neural_guided_finetune: feature dimension mismatch");
  }
  gp_cfg.validate();
  gp_cfg.treegen.num_features = init_forest.num_features();
  if (!options.use_sgd_strategy && gp_cfg.strategy_probs.sgd > 0.0)
    gp_cfg.strategy_probs = StrategyProbs::vanilla();

  // restrict variables to features that actually vary under the teacher
  {
    MixedPolicy probe_mp = mixed_from_teacher(teacher);
    SurrogateBuffer probe = collect_surrogate_buffer(teacher, probe_mp, 0, env_proto, fs_proto,
                                                     ppo_cfg, Rng::derive(seed, kStreamProbe).next_u64());
    DataMatrix probe_x;
    probe_x.rows = static_cast<int>(probe.samples.size());
    probe_x.cols = init_forest.num_features();
    for (const auto& s : probe.samples)
      probe_x.data.insert(probe_x.data.end(), s.features.begin(), s.features.end());
    gp_cfg.treegen.allowed_vars = active_feature_columns(probe_x);
  }

  Rng master = Rng::derive(seed, kStreamMaster);
  const uint64_t assembled_seed = Rng::derive(seed, kStreamAssembledEval).next_u64();
  auto t0 = std::chrono::steady_clock::now();
  auto wall = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  auto eval_assembled = [&](const std::vector<ExprTree>& trees) {
    Forest f;
    f.trees = trees;
    f.action_mode = spec.action_mode;
    return evaluate_policy(env_proto, fs_proto, forest_actor(f, true),
                           options.fitness_episodes, assembled_seed)
        .mean;
  };

  FinetuneResult result;
  std::vector<ExprTree> best_trees;
  for (const auto& t : init_forest.trees) best_trees.push_back(t);
  result.warm_start_reward = eval_assembled(best_trees);

  std::vector<ExprTree> best_overall = best_trees;
  double best_overall_reward = result.warm_start_reward;

  // one population per action slot
  std::vector<std::vector<Candidate>> pops(n_actions);
  for (int i = 0; i < n_actions; ++i)
    pops[i] = seed_slot_population(options.warm_start ? &init_forest.trees[i] : nullptr, gp_cfg,
                                   master);
  if (!options.warm_start) {
    // without a warm start the working forest comes from the random seeds
    for (int i = 0; i < n_actions; ++i) best_trees[i] = pops[i][0].tree;
  }

  int global_gen = 0;
  bool target_reached = false;

  // simultaneous ablation mode: all trees of a candidate forest evolve at
  // once and fitness is the full-forest reward; no teacher routing
  if (options.mode == FinetuneMode::simultaneous) {
    struct ForestCand {
      std::vector<ExprTree> trees;
      std::optional<double> fitness;
    };
    auto forest_fitness = [&](const std::vector<ExprTree>& trees, int generation) {
      Forest f;
      f.trees = trees;
      f.action_mode = spec.action_mode;
      uint64_t s = Rng::derive(seed, kStreamFitnessSeeds).next_u64() +
                   static_cast<uint64_t>(generation) * 7919u;
      return evaluate_policy(env_proto, fs_proto, forest_actor(f, true),
                             options.fitness_episodes, s)
          .mean;
    };
    auto node_total = [](const std::vector<ExprTree>& trees) {
      int n = 0;
      for (const auto& t : trees) n += t.node_count();
      return n;
    };

    std::vector<ForestCand> pop(gp_cfg.population_size);
    for (int k = 0; k < gp_cfg.population_size; ++k) {
      ForestCand fc;
      for (int i = 0; i < n_actions; ++i) fc.trees.push_back(pops[i][k].tree);
      pop[k] = std::move(fc);
    }
    const int workers = std::max(1, gp_cfg.workers);
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (int k = 0; k < gp_cfg.population_size; ++k)
      pop[k].fitness = forest_fitness(pop[k].trees, 0);

    auto tournament = [&](Rng& rng) -> int {
      int winner = -1;
      double ws = 0.0;
      for (int t = 0; t < gp_cfg.tournament_size; ++t) {
        int i = rng.uniform_int(gp_cfg.population_size);
        double score = *pop[i].fitness - gp_cfg.parsimony_coeff * node_total(pop[i].trees);
        if (winner < 0 || score > ws) {
          winner = i;
          ws = score;
        }
      }
      return winner;
    };

    for (int it = 1; it <= options.iterations && !target_reached; ++it) {
      // buffer for the SGD strategy, regenerated every generation
      int best_idx = 0;
      for (int k = 1; k < gp_cfg.population_size; ++k)
        if (*pop[k].fitness > *pop[best_idx].fitness) best_idx = k;
      std::vector<SurrogateBuffer> buffers;
      if (gp_cfg.strategy_probs.sgd > 0.0) {
        std::vector<const ExprTree*> slot_ptrs;
        for (const auto& t : pop[best_idx].trees) slot_ptrs.push_back(&t);
        MixedPolicy mp = build_mixed(teacher, slot_ptrs, spec.action_mode);
        for (int i = 0; i < n_actions; ++i)
          buffers.push_back(collect_surrogate_buffer(
              teacher, mp, i, env_proto, fs_proto, ppo_cfg,
              Rng::derive(seed, kStreamBuffer + 10 + global_gen).next_u64() + i));
      }

      std::vector<ForestCand> next;
      next.push_back(pop[best_idx]);  // elitism
      struct PendingSgd {
        int cand;
        int slot;
      };
      std::vector<PendingSgd> pending;
      while (static_cast<int>(next.size()) < gp_cfg.population_size) {
        const ForestCand& parent = pop[tournament(master)];
        ForestCand child;
        child.trees = parent.trees;
        for (int i = 0; i < n_actions; ++i) {
          Strategy s = draw_strategy(gp_cfg.strategy_probs, master);
          switch (s) {
            case Strategy::crossover: {
              const ForestCand& donor = pop[tournament(master)];
              child.trees[i] = crossover(parent.trees[i], donor.trees[i], gp_cfg.max_depth, master);
              break;
            }
            case Strategy::subtree:
              child.trees[i] =
                  subtree_mutation(parent.trees[i], gp_cfg.treegen, gp_cfg.max_depth, master);
              break;
            case Strategy::hoist:
              child.trees[i] = hoist_mutation(parent.trees[i], master);
              break;
            case Strategy::point:
              child.trees[i] = point_mutation(parent.trees[i], gp_cfg.treegen, master);
              break;
            case Strategy::reproduction:
              break;
            case Strategy::sgd:
              pending.push_back({static_cast<int>(next.size()), i});
              break;
          }
        }
        next.push_back(std::move(child));
      }
      const int n_next = static_cast<int>(next.size());
#pragma omp parallel for schedule(dynamic) num_threads(workers)
      for (int k = 0; k < n_next; ++k) {
        for (const auto& p : pending) {
          if (p.cand != k) continue;
          const SurrogateBuffer& buf = buffers[p.slot];
          next[k].trees[p.slot] = sgd_refine(
              next[k].trees[p.slot],
              [&](const ExprTree& t) { return surrogate_loss(t, buf, ppo_cfg.clip_eps); },
              gp_cfg.sgd_steps, gp_cfg.sgd_lr);
        }
        if (!next[k].fitness) next[k].fitness = forest_fitness(next[k].trees, it);
      }
      pop = std::move(next);
      ++global_gen;

      int bi = 0;
      for (int k = 1; k < gp_cfg.population_size; ++k)
        if (*pop[k].fitness > *pop[bi].fitness) bi = k;
      double assembled = eval_assembled(pop[bi].trees);
      if (assembled > best_overall_reward) {
        best_overall_reward = assembled;
        best_overall = pop[bi].trees;
      }
      FinetuneGenRecord rec{it, -1, global_gen, *pop[bi].fitness, assembled, wall()};
      result.records.push_back(rec);
      if (log) log(rec);
      if (assembled >= options.reward_target) target_reached = true;
    }
  } else {
    // per-action neural guidance: slots already fine-tuned act symbolically,
    // slots not yet visited in the first pass route to the teacher
    const int e_fit = options.fitness_episodes;
    for (int it = 1; it <= options.iterations && !target_reached; ++it) {
      for (int i = 0; i < n_actions && !target_reached; ++i) {
        std::vector<const ExprTree*> slot_ptrs(n_actions, nullptr);
        for (int j = 0; j < n_actions; ++j) {
          if (j == i) continue;
          bool symbolic = j < i || it > 1;
          if (symbolic) slot_ptrs[j] = &best_trees[j];
        }

        FitnessFn fn;
        fn.fitness = [&, i](const ExprTree& tree, const EvalContext& ctx) {
          std::vector<const ExprTree*> ptrs = slot_ptrs;
          ptrs[i] = &tree;
          MixedPolicy mp = build_mixed(teacher, ptrs, spec.action_mode);
          uint64_t s = Rng::derive(seed, kStreamFitnessSeeds).next_u64() +
                       static_cast<uint64_t>(ctx.generation) * 7919u;
          return evaluate_policy(env_proto, fs_proto, mixed_actor(mp, true), e_fit, s).mean;
        };
        if (gp_cfg.strategy_probs.sgd > 0.0) {
          std::vector<const ExprTree*> ptrs = slot_ptrs;
          ptrs[i] = &best_trees[i];
          MixedPolicy mp = build_mixed(teacher, ptrs, spec.action_mode);
          auto buf = std::make_shared<SurrogateBuffer>(collect_surrogate_buffer(
              teacher, mp, i, env_proto, fs_proto, ppo_cfg,
              Rng::derive(seed, kStreamBuffer + 20 + global_gen).next_u64()));
          fn.loss_oracle = [buf, &ppo_cfg](const ExprTree& t) {
            return surrogate_loss(t, *buf, ppo_cfg.clip_eps);
          };
        }

        evaluate_population(pops[i], fn, gp_cfg, global_gen);
        pops[i] = evolve_generation(pops[i], fn, gp_cfg, global_gen + 1, master);
        ++global_gen;

        best_trees[i] = pops[i][best_candidate_index(pops[i])].tree;
        double assembled = eval_assembled(best_trees);
        if (assembled > best_overall_reward) {
          best_overall_reward = assembled;
          best_overall = best_trees;
        }
        FinetuneGenRecord rec{it, i, global_gen,
                              *pops[i][best_candidate_index(pops[i])].fitness, assembled, wall()};
        result.records.push_back(rec);
        if (log) log(rec);
        if (assembled >= options.reward_target) target_reached = true;
      }
    }
  }

  result.forest.trees = best_overall;
  result.forest.action_mode = spec.action_mode;
  result.forest_reward = best_overall_reward;
  result.generations_run = global_gen;
  return result;
}

}  // namespace sympol
