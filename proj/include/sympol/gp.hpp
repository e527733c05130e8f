#ifndef SYMPOL_GP_HPP
#define SYMPOL_GP_HPP

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sympol/expr.hpp"
#include "sympol/rng.hpp"

namespace sympol {

enum class Strategy { crossover, subtree, hoist, point, reproduction, sgd };

// Probabilities of the breeding strategies. The five classical options share
// 0.8; SGD coefficient refinement takes the remaining 0.2. The classical
// split leans harder on subtree/point mutation than toolkit defaults do:
// at population 50 a crossover-dominated mix loses constant-bearing
// structures before coefficient refinement can act on them.
struct StrategyProbs {
  double crossover = 0.55;
  double subtree = 0.12;
  double hoist = 0.03;
  double point = 0.08;
  double reproduction = 0.02;
  double sgd = 0.2;

  double sum() const { return crossover + subtree + hoist + point + reproduction + sgd; }

  // SGD disabled, classical strategies renormalized to mass 1.
  static StrategyProbs vanilla();
};

Strategy draw_strategy(const StrategyProbs& probs, Rng& rng);

struct GpConfig {
  int population_size = 50;
  int generations = 300;
  int tournament_size = 4;
  StrategyProbs strategy_probs;
  double sgd_lr = 0.005;
  int sgd_steps = 200;
  double parsimony_coeff = 0.001;
  int max_depth = 12;
  uint64_t seed = 0;
  int workers = 1;
  TreeGenConfig treegen;
  double early_stop_mse = 1e-10;

  void validate() const;
};

struct Candidate {
  ExprTree tree;
  std::optional<double> fitness;
  int age = 0;
};

struct EvalContext {
  int generation = 0;
  int index = 0;
  int population_size = 0;
  uint64_t stream_id() const {
    return static_cast<uint64_t>(generation) * static_cast<uint64_t>(population_size) +
           static_cast<uint64_t>(index);
  }
};

struct LossEval {
  double loss = 0.0;
  std::vector<double> grad;  // over trainable constants, prefix order
};

// Candidate evaluator. fitness: higher is better, deterministic given the
// context's derived stream. loss_oracle (optional) backs the SGD strategy.
struct FitnessFn {
  std::function<double(const ExprTree&, const EvalContext&)> fitness;
  std::function<LossEval(const ExprTree&)> loss_oracle;
};

// --- Variation operators ------------------------------------------------------

ExprTree crossover(const ExprTree& a, const ExprTree& b, int max_depth, Rng& rng);
ExprTree subtree_mutation(const ExprTree& t, const TreeGenConfig& gen_cfg, int max_depth,
                          Rng& rng);
ExprTree hoist_mutation(const ExprTree& t, Rng& rng);
ExprTree point_mutation(const ExprTree& t, const TreeGenConfig& gen_cfg, Rng& rng);
ExprTree point_mutation_at(const ExprTree& t, int node_index, const TreeGenConfig& gen_cfg,
                           Rng& rng);
ExprTree reproduction(const ExprTree& t);

// Full-batch gradient descent on the tree's trainable constants. Returns the
// refined copy when the final loss does not exceed the initial loss, the
// input tree otherwise. Non-finite losses or gradients abort the refinement.
ExprTree sgd_refine(const ExprTree& t, const std::function<LossEval(const ExprTree&)>& oracle,
                    int steps, double lr);

// --- Population machinery -----------------------------------------------------

std::vector<Candidate> init_population(const GpConfig& cfg, Rng& rng);

// Evaluates every candidate without a fitness value. The serial variant is
// the reference; the parallel variant distributes candidates across OpenMP
// threads and must produce identical results for any worker count.
void evaluate_population_serial(std::vector<Candidate>& pop, const FitnessFn& fn, int generation);
void evaluate_population_parallel(std::vector<Candidate>& pop, const FitnessFn& fn,
                                  int generation, int workers);
void evaluate_population(std::vector<Candidate>& pop, const FitnessFn& fn, const GpConfig& cfg,
                         int generation);

// Breeds one generation: elitism of one, tournament selection on the
// parsimony-penalized fitness, strategy mix per cfg.strategy_probs. The
// returned population has every fitness set.
std::vector<Candidate> evolve_generation(const std::vector<Candidate>& pop, const FitnessFn& fn,
                                         const GpConfig& cfg, int generation, Rng& rng);

int best_candidate_index(const std::vector<Candidate>& pop);

// --- Symbolic regression driver -----------------------------------------------

// Row-major matrix of feature rows.
struct DataMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  std::span<const double> row(int i) const {
    return std::span<const double>(data.data() + static_cast<size_t>(i) * cols, cols);
  }
};

double tree_mse(const ExprTree& t, const DataMatrix& x, std::span<const double> y);

// fitness = -MSE; loss oracle = MSE with its constant gradient.
FitnessFn make_mse_fitness(const DataMatrix& x, std::span<const double> y);

using GenerationCallback = std::function<void(int generation, const std::vector<Candidate>& pop,
                                              const Candidate& best, double wall_time_s)>;

struct RegressionResult {
  ExprTree best;
  double mse = 0.0;
  int generations_run = 0;
};

RegressionResult run_regression(const DataMatrix& x, std::span<const double> y, GpConfig cfg,
                                const GenerationCallback& on_generation = nullptr);

}  // namespace sympol

#endif
