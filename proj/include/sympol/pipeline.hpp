#ifndef SYMPOL_PIPELINE_HPP
#define SYMPOL_PIPELINE_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sympol/envs.hpp"
#include "sympol/expr.hpp"
#include "sympol/gp.hpp"
#include "sympol/objects.hpp"
#include "sympol/tinynn.hpp"

namespace sympol {

// --- Feature sources ------------------------------------------------------------

// Maps the current env state to the operand vector policies consume.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual int dim(const Env& env) const = 0;
  virtual void begin_episode(uint64_t seed) = 0;
  virtual std::vector<double> observe(const Env& env) = 0;
  virtual std::unique_ptr<FeatureSource> clone() const = 0;
};

// Raw state pass-through (classic control).
class IdentityFeatures : public FeatureSource {
 public:
  int dim(const Env& env) const override { return env.spec().state_dim; }
  void begin_episode(uint64_t) override {}
  std::vector<double> observe(const Env& env) override { return env.state(); }
  std::unique_ptr<FeatureSource> clone() const override {
    return std::make_unique<IdentityFeatures>();
  }
};

// Object pipeline for ObjectPong: oracle objects or connected components on
// the rendered frame, then noise/drop injection, cross-frame alignment with
// velocities, and top-m_bar featurization.
class ObjectFeatures : public FeatureSource {
 public:
  explicit ObjectFeatures(ExtractorConfig cfg) : cfg_(std::move(cfg)), rng_(0) {}
  int dim(const Env&) const override { return 4 * cfg_.m_bar; }
  void begin_episode(uint64_t seed) override;
  std::vector<double> observe(const Env& env) override;
  std::unique_ptr<FeatureSource> clone() const override {
    return std::make_unique<ObjectFeatures>(cfg_);
  }
  const ExtractorConfig& config() const { return cfg_; }

 private:
  ExtractorConfig cfg_;
  ObjectSet prev_;
  bool has_prev_ = false;
  Rng rng_;
};

// Identity for classic control, ObjectFeatures for objectpong variants.
std::unique_ptr<FeatureSource> make_feature_source(const std::string& env_id,
                                                   const ExtractorConfig& cfg);

// --- PPO -----------------------------------------------------------------------

struct PpoConfig {
  double gamma = 0.9;
  double clip_eps = 0.2;
  int rollout_len = 2048;
  int minibatch_size = 64;
  int epochs = 10;
  long total_steps = 300000;
  double lr = 0.0005;
  double value_coeff = 0.5;
  double entropy_coeff = 0.01;
  bool normalize_advantages = true;
  bool anneal_lr = true;  // linear decay of the Adam step size over total_steps
  std::vector<int> hidden = {64, 64};
  double log_std_init = -0.5;
  int eval_episodes = 20;
  int eval_every_updates = 5;

  void validate() const;
};

struct Transition {
  std::vector<double> features;
  Action action;
  double reward = 0.0;
  bool done = false;  // true terminal (not a rollout cut)
  double logprob_old = 0.0;
  double value = 0.0;
  double advantage = 0.0;
  double return_target = 0.0;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  double bootstrap_value = 0.0;  // V of the state after the last transition; 0 if terminal
};

// n-step advantages per the fine-tuning objective: for each t within its
// segment, A_t = -V(s_t) + sum_k gamma^{k-t} r_k + gamma^{T-t} V(s_T), with
// V(s_T) = 0 on terminal segments. Direct summation, no GAE.
void compute_advantages(RolloutBuffer& buffer, double gamma);

// min(r*A, clip(r, 1-eps, 1+eps)*A) for one sample.
double clipped_objective(double ratio, double advantage, double clip_eps);

struct PpoLossTerms {
  double policy = 0.0;   // mean clipped surrogate (maximized)
  double value = 0.0;    // mean squared value error
  double entropy = 0.0;  // mean policy entropy
  double total = 0.0;    // policy - value_coeff*value + entropy_coeff*entropy
};

PpoLossTerms ppo_loss(const MlpPolicy& policy, std::span<const Transition> batch,
                      const PpoConfig& cfg);

// Gradients of -ppo_loss(...).total (the minimized loss), batch mean.
BackwardResult ppo_gradients(const MlpPolicy& policy, std::span<const Transition> batch,
                             const PpoConfig& cfg);

// --- Teacher training (stage I) ---------------------------------------------------

// Per-env training budget and eval bar used when a run config does not
// override them. Classic-control budgets fit a laptop CPU; mountaincar's
// teacher is expected to miss its bar (sparse goal under gamma 0.9) and the
// reward-driven fine-tuning stage recovers the policy.
PpoConfig default_ppo_config(const std::string& env_id);
double default_teacher_threshold(const std::string& env_id);

struct CurvePoint {
  long steps = 0;
  double rollout_reward = 0.0;  // mean episode reward inside the rollout window
  double eval_reward = 0.0;     // deterministic eval (NaN when not evaluated)
};

struct TeacherResult {
  MlpPolicy policy;  // best checkpoint by deterministic eval
  double eval_reward = 0.0;
  bool reached_threshold = false;
  std::vector<CurvePoint> curve;
};

TeacherResult train_teacher(const Env& env_proto, const FeatureSource& fs_proto,
                            const PpoConfig& cfg, uint64_t seed, double threshold);

// --- Distillation (stage II) -------------------------------------------------------

// N rows of (features, teacher output) sampled from stochastic teacher
// rollouts. Y holds pre-softmax logits (discrete) or action means
// (continuous).
void collect_distill_dataset(const MlpPolicy& teacher, const Env& env_proto,
                             const FeatureSource& fs_proto, int n, uint64_t seed, DataMatrix* x,
                             DataMatrix* y);

using DistillLogger =
    std::function<void(int action_index, int generation, const std::vector<Candidate>& pop,
                       const Candidate& best, double wall_s)>;

// Independent symbolic regression per action column. Variables with zero
// variance in X are excluded from the search space.
Forest distill_forest(const DataMatrix& x, const DataMatrix& y, GpConfig cfg,
                      ActionMode action_mode, const DistillLogger& log = nullptr);

std::vector<int> active_feature_columns(const DataMatrix& x);

// --- Mixed policy and evaluation ---------------------------------------------------

// Teacher logits with symbolic overrides in the non-empty slots.
struct MixedPolicy {
  const MlpPolicy* teacher = nullptr;
  std::vector<std::optional<ExprTree>> slots;
  ActionMode mode = ActionMode::discrete;

  int action_dim() const { return static_cast<int>(slots.size()); }
  bool fully_symbolic() const;
};

MixedPolicy mixed_from_teacher(const MlpPolicy& teacher);
MixedPolicy mixed_from_forest(const Forest& forest);

std::vector<double> mixed_logits(const MixedPolicy& mp, std::span<const double> features);
Action mixed_act(const MixedPolicy& mp, std::span<const double> features, Rng& rng,
                 bool deterministic = false);

using ActFn = std::function<Action(std::span<const double> features, Rng& rng)>;

ActFn teacher_actor(const MlpPolicy& teacher, bool deterministic);
ActFn forest_actor(const Forest& forest, bool deterministic);
ActFn mixed_actor(const MixedPolicy& mp, bool deterministic);

struct EvalReport {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_episode;
  std::map<std::string, double> info_totals;  // summed episode-final info values
};

EvalReport evaluate_policy(const Env& env_proto, const FeatureSource& fs_proto, const ActFn& act,
                           int episodes, uint64_t seed);

// --- Neural-guided fine-tuning (stage III) -----------------------------------------

enum class FinetuneMode { per_action, simultaneous };

struct FinetuneOptions {
  int iterations = 50;            // outer loops; one GP generation per action each
  int fitness_episodes = 5;       // E, fixed seed set per generation
  FinetuneMode mode = FinetuneMode::per_action;
  bool warm_start = true;         // seed populations from the initial forest
  double reward_target = std::numeric_limits<double>::infinity();  // early stop when reached
  bool use_sgd_strategy = true;
};

struct FinetuneGenRecord {
  int iteration = 0;
  int action = 0;
  int generation = 0;  // cumulative across the run
  double best_fitness = 0.0;
  double forest_reward = 0.0;  // assembled full-symbolic forest, fixed eval seeds
  double wall_time_s = 0.0;
};

struct FinetuneResult {
  Forest forest;
  double forest_reward = 0.0;        // recorded eval fitness of the returned forest
  double warm_start_reward = 0.0;    // same seed set, initial forest
  int generations_run = 0;
  std::vector<FinetuneGenRecord> records;
};

using FinetuneLogger = std::function<void(const FinetuneGenRecord&)>;

FinetuneResult neural_guided_finetune(const MlpPolicy& teacher, const Forest& init_forest,
                                      const Env& env_proto, const FeatureSource& fs_proto,
                                      GpConfig gp_cfg, const PpoConfig& ppo_cfg,
                                      const FinetuneOptions& options, uint64_t seed,
                                      const FinetuneLogger& log = nullptr);

}  // namespace sympol

#endif
