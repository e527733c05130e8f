#ifndef SYMPOL_TINYNN_HPP
#define SYMPOL_TINYNN_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sympol/action.hpp"
#include "sympol/rng.hpp"

namespace sympol {

// Dense actor-critic network with tanh hidden layers, a linear actor head of
// action_dim outputs (logits or Gaussian means) and a linear scalar critic
// head. Weights are row-major [out][in]. Gradients are computed by hand;
// there is deliberately no autodiff framework behind this.
struct MlpPolicy {
  int input_dim = 0;
  std::vector<int> hidden;  // widths, e.g. {64, 64}
  int action_dim = 0;
  ActionMode mode = ActionMode::discrete;

  std::vector<std::vector<double>> w;  // trunk weights per layer
  std::vector<std::vector<double>> b;  // trunk biases per layer
  std::vector<double> w_actor, b_actor;
  std::vector<double> w_critic;
  double b_critic = 0.0;
  std::vector<double> log_std;  // continuous mode only, state-independent

  int num_params() const;
  int last_hidden_width() const { return hidden.empty() ? input_dim : hidden.back(); }
};

MlpPolicy make_policy(int input_dim, std::vector<int> hidden, int action_dim, ActionMode mode,
                      Rng& rng, double log_std_init = -0.5);

struct ForwardResult {
  std::vector<double> logits;  // actor outputs (logits or means)
  double value = 0.0;
};

ForwardResult forward(const MlpPolicy& policy, std::span<const double> state);

// Same shapes as the policy parameters.
struct Gradients {
  std::vector<std::vector<double>> w, b;
  std::vector<double> w_actor, b_actor;
  std::vector<double> w_critic;
  double b_critic = 0.0;
  std::vector<double> log_std;

  static Gradients zeros_like(const MlpPolicy& p);
  void add_scaled(const Gradients& other, double scale);
};

// Per-sample loss derivative w.r.t. the actor outputs, the value and (in
// continuous mode) the log-std vector. The loss itself is reported back so
// callers can track it.
struct LossSlope {
  double loss = 0.0;
  std::vector<double> dlogits;
  double dvalue = 0.0;
  std::vector<double> dlog_std;
};

using LossDef = std::function<LossSlope(const std::vector<double>& logits, double value,
                                        int sample_index)>;

struct BackwardResult {
  Gradients grads;   // summed over the batch
  double loss = 0.0; // summed over the batch
};

BackwardResult backward(const MlpPolicy& policy, std::span<const std::vector<double>> states,
                        const LossDef& loss_def);

// Adam optimizer state; moments mirror the parameter shapes.
struct OptimState {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Gradients m, v;

  static OptimState init(const MlpPolicy& p, double lr = 0.0005);
};

void adam_step(MlpPolicy& policy, const Gradients& grads, OptimState& opt);

// Diagonal-Gaussian and categorical helpers shared by PPO and evaluation.
double gaussian_logprob(std::span<const double> action, std::span<const double> mean,
                        std::span<const double> log_std);
double categorical_logprob(std::span<const double> logits, int index);

// JSON checkpoint (versioned). Round-trips parameters bit-exactly.
std::string policy_to_json(const MlpPolicy& policy, const OptimState* opt = nullptr);
MlpPolicy policy_from_json(const std::string& text, OptimState* opt = nullptr);
void save_policy(const std::string& path, const MlpPolicy& policy,
                 const OptimState* opt = nullptr);
MlpPolicy load_policy(const std::string& path, OptimState* opt = nullptr);

}  // namespace sympol

#endif
