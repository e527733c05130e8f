#include "sympol/gp.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace sympol {

StrategyProbs StrategyProbs::vanilla() {
  StrategyProbs p;
  double classical = p.crossover + p.subtree + p.hoist + p.point + p.reproduction;
  p.crossover /= classical;
  p.subtree /= classical;
  p.hoist /= classical;
  p.point /= classical;
  p.reproduction /= classical;
  p.sgd = 0.0;
  return p;
}

Strategy draw_strategy(const StrategyProbs& probs, Rng& rng) {
  double u = rng.uniform() * probs.sum();
  if ((u -= probs.crossover) < 0.0) return Strategy::crossover;
  if ((u -= probs.subtree) < 0.0) return Strategy::subtree;
  if ((u -= probs.hoist) < 0.0) return Strategy::hoist;
  if ((u -= probs.point) < 0.0) return Strategy::point;
  if ((u -= probs.reproduction) < 0.0) return Strategy::reproduction;
  return Strategy::sgd;
}

void GpConfig::validate() const {
  if (population_size < 1) throw std::invalid_argument("GpConfig: population_size < 1");
  if (tournament_size < 1 || tournament_size > population_size)
    throw std::invalid_argument("GpConfig: need population_size >= tournament_size >= 1");
  if (std::abs(strategy_probs.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("GpConfig: strategy probabilities must sum to 1");
  if (parsimony_coeff < 0.0) throw std::invalid_argument("GpConfig: negative parsimony_coeff");
  if (max_depth < 1) throw std::invalid_argument("GpConfig: max_depth < 1");
}

// --- Variation operators ------------------------------------------------------

namespace {

// Replaces nodes [at, end_at) of t with the donor subtree.
std::vector<ExprNode> splice(const ExprTree& t, int at, std::span<const ExprNode> donor) {
  std::vector<ExprNode> out;
  const auto& nodes = t.nodes();
  out.reserve(nodes.size());
  out.insert(out.end(), nodes.begin(), nodes.begin() + at);
  out.insert(out.end(), donor.begin(), donor.end());
  out.insert(out.end(), nodes.begin() + t.subtree_end(at), nodes.end());
  return out;
}

std::span<const ExprNode> subtree_span(const ExprTree& t, int at) {
  return std::span<const ExprNode>(t.nodes().data() + at, t.subtree_end(at) - at);
}

}  // namespace

ExprTree crossover(const ExprTree& a, const ExprTree& b, int max_depth, Rng& rng) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    int at = rng.uniform_int(a.node_count());
    int from = rng.uniform_int(b.node_count());
    ExprTree child(splice(a, at, subtree_span(b, from)), a.num_features(), a.metadata());
    if (child.depth() <= max_depth) return child;
  }
  return reproduction(a);
}

ExprTree subtree_mutation(const ExprTree& t, const TreeGenConfig& gen_cfg, int max_depth,
                          Rng& rng) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    int at = rng.uniform_int(t.node_count());
    ExprTree fresh = random_tree(gen_cfg, rng);
    ExprTree child(splice(t, at, std::span<const ExprNode>(fresh.nodes())), t.num_features(),
                   t.metadata());
    if (child.depth() <= max_depth) return child;
  }
  return reproduction(t);
}

ExprTree hoist_mutation(const ExprTree& t, Rng& rng) {
  int at = rng.uniform_int(t.node_count());
  int size = t.subtree_end(at) - at;
  int inner = at + rng.uniform_int(size);
  return ExprTree(splice(t, at, subtree_span(t, inner)), t.num_features(), t.metadata());
}

ExprTree point_mutation_at(const ExprTree& t, int node_index, const TreeGenConfig& gen_cfg,
                           Rng& rng) {
  auto nodes = t.nodes();
  ExprNode& node = nodes[node_index];
  if (node.kind == ExprNode::Kind::op) {
    // same-arity replacement, never the original operator
    std::vector<OpKind> pool;
    for (int k = 0; k < kNumOps; ++k) {
      OpKind cand = static_cast<OpKind>(k);
      if (cand != node.op && arity(cand) == arity(node.op)) pool.push_back(cand);
    }
    node.op = pool[rng.uniform_int(static_cast<int>(pool.size()))];
  } else {
    bool can_var = gen_cfg.num_features > 0 || !gen_cfg.allowed_vars.empty();
    if (can_var && rng.bernoulli(gen_cfg.var_prob)) {
      if (!gen_cfg.allowed_vars.empty())
        node = ExprNode::make_var(
            gen_cfg.allowed_vars[rng.uniform_int(static_cast<int>(gen_cfg.allowed_vars.size()))]);
      else
        node = ExprNode::make_var(rng.uniform_int(gen_cfg.num_features));
    } else {
      node = ExprNode::make_const(rng.uniform(gen_cfg.const_min, gen_cfg.const_max));
    }
  }
  return ExprTree(std::move(nodes), t.num_features(), t.metadata());
}

ExprTree point_mutation(const ExprTree& t, const TreeGenConfig& gen_cfg, Rng& rng) {
  return point_mutation_at(t, rng.uniform_int(t.node_count()), gen_cfg, rng);
}

ExprTree reproduction(const ExprTree& t) { return t; }

ExprTree sgd_refine(const ExprTree& t, const std::function<LossEval(const ExprTree&)>& oracle,
                    int steps, double lr) {
  if (!oracle || t.num_constants() == 0 || steps <= 0 || lr == 0.0) return t;

  LossEval e = oracle(t);
  if (!std::isfinite(e.loss)) return t;

  ExprTree current = t;
  double current_loss = e.loss;
  double step_lr = lr;
  for (int step = 0; step < steps; ++step) {
    for (double g : e.grad)
      if (!std::isfinite(g)) return t;

    auto nodes = current.nodes();
    const auto& idx = current.constant_indices();
    for (size_t j = 0; j < idx.size(); ++j) {
      double updated = nodes[idx[j]].value - step_lr * e.grad[j];
      if (!std::isfinite(updated)) return t;
      nodes[idx[j]].value = updated;
    }
    ExprTree candidate(std::move(nodes), t.num_features(), t.metadata());
    LossEval ce = oracle(candidate);
    if (std::isfinite(ce.loss) && ce.loss <= current_loss) {
      current = std::move(candidate);
      current_loss = ce.loss;
      e = std::move(ce);
      step_lr = std::min(step_lr * 1.2, lr * 1e4);
    } else {
      // guarded step: reject and back the learning rate off
      step_lr *= 0.5;
      if (step_lr < lr * 1e-8) break;
    }
  }
  return current;
}

// --- Population machinery -----------------------------------------------------

std::vector<Candidate> init_population(const GpConfig& cfg, Rng& rng) {
  std::vector<Candidate> pop;
  pop.reserve(cfg.population_size);
  for (int i = 0; i < cfg.population_size; ++i)
    pop.push_back(Candidate{random_tree(cfg.treegen, rng), std::nullopt, 0});
  return pop;
}

void evaluate_population_serial(std::vector<Candidate>& pop, const FitnessFn& fn,
                                int generation) {
  for (size_t i = 0; i < pop.size(); ++i) {
    if (pop[i].fitness) continue;
    EvalContext ctx{generation, static_cast<int>(i), static_cast<int>(pop.size())};
    pop[i].fitness = fn.fitness(pop[i].tree, ctx);
  }
}

void evaluate_population_parallel(std::vector<Candidate>& pop, const FitnessFn& fn,
                                  int generation, int workers) {
  const int n = static_cast<int>(pop.size());
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (int i = 0; i < n; ++i) {
    if (pop[i].fitness) continue;
    EvalContext ctx{generation, i, n};
    pop[i].fitness = fn.fitness(pop[i].tree, ctx);
  }
}

void evaluate_population(std::vector<Candidate>& pop, const FitnessFn& fn, const GpConfig& cfg,
                         int generation) {
  if (cfg.workers > 1)
    evaluate_population_parallel(pop, fn, generation, cfg.workers);
  else
    evaluate_population_serial(pop, fn, generation);
}

int best_candidate_index(const std::vector<Candidate>& pop) {
  int best = -1;
  for (size_t i = 0; i < pop.size(); ++i) {
    if (!pop[i].fitness) continue;
    if (best < 0 || *pop[i].fitness > *pop[best].fitness) best = static_cast<int>(i);
  }
  if (best < 0) throw std::logic_error("best_candidate_index: no evaluated candidates");
  return best;
}

namespace {

double penalized_fitness(const Candidate& c, double parsimony_coeff) {
  return *c.fitness - parsimony_coeff * c.tree.node_count();
}

int tournament_select(const std::vector<Candidate>& pop, const GpConfig& cfg, Rng& rng) {
  int winner = -1;
  double winner_score = 0.0;
  for (int k = 0; k < cfg.tournament_size; ++k) {
    int i = rng.uniform_int(static_cast<int>(pop.size()));
    double score = penalized_fitness(pop[i], cfg.parsimony_coeff);
    if (winner < 0 || score > winner_score || (score == winner_score && i < winner)) {
      winner = i;
      winner_score = score;
    }
  }
  return winner;
}

// Tournament for the SGD strategy: among the drawn candidates, prefer the
// best one that actually has trainable constants; refinement on a
// constant-free tree is a wasted draw.
int tournament_select_refinable(const std::vector<Candidate>& pop, const GpConfig& cfg,
                                Rng& rng) {
  int winner = -1, winner_refinable = -1;
  double winner_score = 0.0, refinable_score = 0.0;
  for (int k = 0; k < cfg.tournament_size; ++k) {
    int i = rng.uniform_int(static_cast<int>(pop.size()));
    double score = penalized_fitness(pop[i], cfg.parsimony_coeff);
    if (winner < 0 || score > winner_score || (score == winner_score && i < winner)) {
      winner = i;
      winner_score = score;
    }
    if (pop[i].tree.num_constants() > 0 &&
        (winner_refinable < 0 || score > refinable_score ||
         (score == refinable_score && i < winner_refinable))) {
      winner_refinable = i;
      refinable_score = score;
    }
  }
  return winner_refinable >= 0 ? winner_refinable : winner;
}

}  // namespace

std::vector<Candidate> evolve_generation(const std::vector<Candidate>& pop, const FitnessFn& fn,
                                         const GpConfig& cfg, int generation, Rng& rng) {
  cfg.validate();
  if (pop.empty()) throw std::invalid_argument("evolve_generation: empty population");
  for (const auto& c : pop)
    if (!c.fitness) throw std::invalid_argument("evolve_generation: unevaluated candidate");

  std::vector<Candidate> next;
  next.reserve(cfg.population_size);

  // elitism: the raw-fitness best survives unmodified, fitness carried over
  Candidate elite = pop[best_candidate_index(pop)];
  elite.age += 1;
  next.push_back(elite);

  // sequential breeding with the master stream keeps results independent of
  // the worker count; SGD refinement is deterministic and deferred so it can
  // run inside the parallel evaluation loop.
  std::vector<char> needs_sgd(cfg.population_size, 0);
  while (static_cast<int>(next.size()) < cfg.population_size) {
    Strategy s = draw_strategy(cfg.strategy_probs, rng);
    const Candidate& parent = pop[s == Strategy::sgd ? tournament_select_refinable(pop, cfg, rng)
                                                     : tournament_select(pop, cfg, rng)];
    Candidate child;
    child.age = 0;
    switch (s) {
      case Strategy::crossover: {
        const Candidate& donor = pop[tournament_select(pop, cfg, rng)];
        child.tree = crossover(parent.tree, donor.tree, cfg.max_depth, rng);
        break;
      }
      case Strategy::subtree:
        child.tree = subtree_mutation(parent.tree, cfg.treegen, cfg.max_depth, rng);
        break;
      case Strategy::hoist:
        child.tree = hoist_mutation(parent.tree, rng);
        break;
      case Strategy::point:
        child.tree = point_mutation(parent.tree, cfg.treegen, rng);
        break;
      case Strategy::reproduction:
        child.tree = reproduction(parent.tree);
        break;
      case Strategy::sgd:
        child.tree = parent.tree;
        needs_sgd[next.size()] = 1;
        break;
    }
    next.push_back(std::move(child));
  }

  const int n = cfg.population_size;
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, cfg.workers))
  for (int i = 0; i < n; ++i) {
    if (needs_sgd[i])
      next[i].tree = sgd_refine(next[i].tree, fn.loss_oracle, cfg.sgd_steps, cfg.sgd_lr);
    if (!next[i].fitness) {
      EvalContext ctx{generation, i, n};
      next[i].fitness = fn.fitness(next[i].tree, ctx);
    }
  }
  return next;
}

// --- Symbolic regression driver -----------------------------------------------

double tree_mse(const ExprTree& t, const DataMatrix& x, std::span<const double> y) {
  double acc = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    double d = eval(t, x.row(i)) - y[i];
    acc += d * d;
  }
  return acc / x.rows;
}

FitnessFn make_mse_fitness(const DataMatrix& x, std::span<const double> y) {
  if (x.rows < 1 || x.cols < 1) throw std::invalid_argument("make_mse_fitness: empty dataset");
  if (static_cast<int>(y.size()) != x.rows)
    throw std::invalid_argument("make_mse_fitness: X/Y row mismatch");
  for (double v : x.data)
    if (!std::isfinite(v)) throw std::invalid_argument("make_mse_fitness: non-finite feature");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("make_mse_fitness: non-finite target");

  FitnessFn fn;
  fn.fitness = [&x, y](const ExprTree& t, const EvalContext&) { return -tree_mse(t, x, y); };
  fn.loss_oracle = [&x, y](const ExprTree& t) {
    LossEval out;
    out.grad.assign(t.num_constants(), 0.0);
    for (int i = 0; i < x.rows; ++i) {
      EvalGrad eg = eval_with_grad(t, x.row(i), 1.0);
      double resid = eg.value - y[i];
      out.loss += resid * resid;
      for (size_t j = 0; j < eg.dconstants.size(); ++j)
        out.grad[j] += 2.0 * resid * eg.dconstants[j];
    }
    out.loss /= x.rows;
    for (double& g : out.grad) g /= x.rows;
    return out;
  };
  return fn;
}

RegressionResult run_regression(const DataMatrix& x, std::span<const double> y, GpConfig cfg,
                                const GenerationCallback& on_generation) {
  cfg.validate();
  if (x.rows < 1 || x.cols < 1) throw std::invalid_argument("run_regression: empty dataset");
  cfg.treegen.num_features = x.cols;

  // degenerate target: nothing to search for
  double ymin = *std::min_element(y.begin(), y.end());
  double ymax = *std::max_element(y.begin(), y.end());
  if (ymax - ymin < 1e-15) {
    RegressionResult r{ExprTree({ExprNode::make_const(y[0])}, x.cols), 0.0, 0};
    return r;
  }

  FitnessFn fn = make_mse_fitness(x, y);
  Rng rng(cfg.seed);
  auto t0 = std::chrono::steady_clock::now();
  auto wall = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  std::vector<Candidate> pop = init_population(cfg, rng);
  evaluate_population(pop, fn, cfg, 0);
  int best = best_candidate_index(pop);
  if (on_generation) on_generation(0, pop, pop[best], wall());

  // random immigrants break plateaus: after kStagnationLimit generations with
  // no improvement of the best MSE, the worse half restarts from scratch
  constexpr int kStagnationLimit = 15;
  int stagnant = 0;
  double best_mse = -*pop[best].fitness;

  int gen = 0;
  while (gen < cfg.generations && best_mse >= cfg.early_stop_mse) {
    ++gen;
    pop = evolve_generation(pop, fn, cfg, gen, rng);
    best = best_candidate_index(pop);

    double mse_now = -*pop[best].fitness;
    if (mse_now < best_mse * (1.0 - 1e-12)) {
      stagnant = 0;
    } else if (++stagnant >= kStagnationLimit) {
      std::vector<int> order(pop.size());
      for (size_t i = 0; i < pop.size(); ++i) order[i] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (*pop[a].fitness != *pop[b].fitness) return *pop[a].fitness < *pop[b].fitness;
        return a < b;
      });
      for (size_t k = 0; k < pop.size() / 2; ++k)
        pop[order[k]] = Candidate{random_tree(cfg.treegen, rng), std::nullopt, 0};
      evaluate_population(pop, fn, cfg, gen);
      best = best_candidate_index(pop);
      mse_now = -*pop[best].fitness;
      stagnant = 0;
    }
    best_mse = mse_now;
    if (on_generation) on_generation(gen, pop, pop[best], wall());
  }

  RegressionResult r{pop[best].tree, best_mse, gen};
  return r;
}

}  // namespace sympol
