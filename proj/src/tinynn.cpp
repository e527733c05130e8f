#include "sympol/tinynn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sympol {

namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2*pi))

void matvec(std::span<const double> w, std::span<const double> x, std::span<const double> bias,
            std::vector<double>& out) {
  const int rows = static_cast<int>(bias.size());
  const int cols = static_cast<int>(x.size());
  out.resize(rows);
  for (int r = 0; r < rows; ++r) {
    double acc = bias[r];
    const double* row = w.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

// rows of a Gaussian matrix, Gram-Schmidt orthogonalized where possible,
// then scaled by gain / sqrt(fan_in)-style norm (orthonormal rows get norm 1)
std::vector<double> orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (double& v : row) v = rng.normal();
  for (int r = 0; r < rows; ++r) {
    for (int p = 0; p < std::min(r, cols); ++p) {
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += m[r][c] * m[p][c];
      for (int c = 0; c < cols; ++c) m[r][c] -= dot * m[p][c];
    }
    double norm = 0.0;
    for (double v : m[r]) norm += v * v;
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& v : m[r]) v = v / norm * gain;
  }
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(rows) * cols);
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return flat;
}

}  // namespace

int MlpPolicy::num_params() const {
  int n = 0;
  int in = input_dim;
  for (int h : hidden) {
    n += h * in + h;
    in = h;
  }
  n += action_dim * in + action_dim;  // actor head
  n += in + 1;                        // critic head
  if (mode == ActionMode::continuous) n += action_dim;
  return n;
}

MlpPolicy make_policy(int input_dim, std::vector<int> hidden, int action_dim, ActionMode mode,
                      Rng& rng, double log_std_init) {
  if (input_dim < 1 || action_dim < 1) throw std::invalid_argument("make_policy: bad dims");
  MlpPolicy p;
  p.input_dim = input_dim;
  p.hidden = std::move(hidden);
  p.action_dim = action_dim;
  p.mode = mode;
  int in = input_dim;
  for (int h : p.hidden) {
    if (h < 1) throw std::invalid_argument("make_policy: bad hidden width");
    p.w.push_back(orthogonal_init(h, in, 1.0, rng));
    p.b.push_back(std::vector<double>(h, 0.0));
    in = h;
  }
  p.w_actor = orthogonal_init(action_dim, in, 0.01, rng);
  p.b_actor.assign(action_dim, 0.0);
  p.w_critic = orthogonal_init(1, in, 1.0, rng);
  p.b_critic = 0.0;
  if (mode == ActionMode::continuous) p.log_std.assign(action_dim, log_std_init);
  return p;
}

ForwardResult forward(const MlpPolicy& policy, std::span<const double> state) {
  if (static_cast<int>(state.size()) != policy.input_dim)
    throw std::invalid_argument("forward: state dimension mismatch");
  std::vector<double> h(state.begin(), state.end());
  std::vector<double> z;
  for (size_t l = 0; l < policy.w.size(); ++l) {
    matvec(policy.w[l], h, policy.b[l], z);
    for (double& v : z) v = std::tanh(v);
    h = z;
  }
  ForwardResult out;
  matvec(policy.w_actor, h, policy.b_actor, out.logits);
  double v = policy.b_critic;
  for (size_t i = 0; i < h.size(); ++i) v += policy.w_critic[i] * h[i];
  out.value = v;
  return out;
}

Gradients Gradients::zeros_like(const MlpPolicy& p) {
  Gradients g;
  for (size_t l = 0; l < p.w.size(); ++l) {
    g.w.push_back(std::vector<double>(p.w[l].size(), 0.0));
    g.b.push_back(std::vector<double>(p.b[l].size(), 0.0));
  }
  g.w_actor.assign(p.w_actor.size(), 0.0);
  g.b_actor.assign(p.b_actor.size(), 0.0);
  g.w_critic.assign(p.w_critic.size(), 0.0);
  g.b_critic = 0.0;
  g.log_std.assign(p.log_std.size(), 0.0);
  return g;
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (size_t l = 0; l < w.size(); ++l) {
    for (size_t i = 0; i < w[l].size(); ++i) w[l][i] += scale * other.w[l][i];
    for (size_t i = 0; i < b[l].size(); ++i) b[l][i] += scale * other.b[l][i];
  }
  for (size_t i = 0; i < w_actor.size(); ++i) w_actor[i] += scale * other.w_actor[i];
  for (size_t i = 0; i < b_actor.size(); ++i) b_actor[i] += scale * other.b_actor[i];
  for (size_t i = 0; i < w_critic.size(); ++i) w_critic[i] += scale * other.w_critic[i];
  b_critic += scale * other.b_critic;
  for (size_t i = 0; i < log_std.size(); ++i) log_std[i] += scale * other.log_std[i];
}

BackwardResult backward(const MlpPolicy& policy, std::span<const std::vector<double>> states,
                        const LossDef& loss_def) {
  if (states.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult out;
  out.grads = Gradients::zeros_like(policy);

  const int layers = static_cast<int>(policy.w.size());
  std::vector<std::vector<double>> acts(layers + 1);  // acts[0] = input
  std::vector<double> z;

  for (int s = 0; s < static_cast<int>(states.size()); ++s) {
    const auto& state = states[s];
    if (static_cast<int>(state.size()) != policy.input_dim)
      throw std::invalid_argument("backward: state dimension mismatch");
    acts[0] = state;
    for (int l = 0; l < layers; ++l) {
      matvec(policy.w[l], acts[l], policy.b[l], z);
      for (double& v : z) v = std::tanh(v);
      acts[l + 1] = z;
    }
    const auto& top = acts[layers];
    std::vector<double> logits;
    matvec(policy.w_actor, top, policy.b_actor, logits);
    double value = policy.b_critic;
    for (size_t i = 0; i < top.size(); ++i) value += policy.w_critic[i] * top[i];

    LossSlope slope = loss_def(logits, value, s);
    if (!std::isfinite(slope.loss)) throw std::runtime_error("backward: non-finite loss");
    out.loss += slope.loss;

    // heads
    const int top_n = static_cast<int>(top.size());
    std::vector<double> dh(top_n, 0.0);
    for (int r = 0; r < policy.action_dim; ++r) {
      double d = slope.dlogits[r];
      out.grads.b_actor[r] += d;
      for (int c = 0; c < top_n; ++c) {
        out.grads.w_actor[static_cast<size_t>(r) * top_n + c] += d * top[c];
        dh[c] += d * policy.w_actor[static_cast<size_t>(r) * top_n + c];
      }
    }
    out.grads.b_critic += slope.dvalue;
    for (int c = 0; c < top_n; ++c) {
      out.grads.w_critic[c] += slope.dvalue * top[c];
      dh[c] += slope.dvalue * policy.w_critic[c];
    }
    for (size_t i = 0; i < slope.dlog_std.size(); ++i) out.grads.log_std[i] += slope.dlog_std[i];

    // trunk, backwards through tanh layers
    for (int l = layers - 1; l >= 0; --l) {
      const auto& h_out = acts[l + 1];
      const auto& h_in = acts[l];
      const int rows = static_cast<int>(h_out.size());
      const int cols = static_cast<int>(h_in.size());
      std::vector<double> dz(rows);
      for (int r = 0; r < rows; ++r) dz[r] = dh[r] * (1.0 - h_out[r] * h_out[r]);
      std::vector<double> dh_prev(cols, 0.0);
      for (int r = 0; r < rows; ++r) {
        out.grads.b[l][r] += dz[r];
        const size_t base = static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          out.grads.w[l][base + c] += dz[r] * h_in[c];
          dh_prev[c] += dz[r] * policy.w[l][base + c];
        }
      }
      dh = std::move(dh_prev);
    }
  }
  return out;
}

OptimState OptimState::init(const MlpPolicy& p, double lr) {
  OptimState o;
  o.lr = lr;
  o.m = Gradients::zeros_like(p);
  o.v = Gradients::zeros_like(p);
  return o;
}

namespace {

void adam_update(double& param, double g, double& m, double& v, const OptimState& o,
                 double corr1, double corr2) {
  m = o.beta1 * m + (1.0 - o.beta1) * g;
  v = o.beta2 * v + (1.0 - o.beta2) * g * g;
  param -= o.lr * (m / corr1) / (std::sqrt(v / corr2) + o.eps);
}

}  // namespace

void adam_step(MlpPolicy& policy, const Gradients& grads, OptimState& opt) {
  opt.step += 1;
  const double corr1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double corr2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (size_t l = 0; l < policy.w.size(); ++l) {
    if (grads.w[l].size() != policy.w[l].size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (size_t i = 0; i < policy.w[l].size(); ++i)
      adam_update(policy.w[l][i], grads.w[l][i], opt.m.w[l][i], opt.v.w[l][i], opt, corr1, corr2);
    for (size_t i = 0; i < policy.b[l].size(); ++i)
      adam_update(policy.b[l][i], grads.b[l][i], opt.m.b[l][i], opt.v.b[l][i], opt, corr1, corr2);
  }
  for (size_t i = 0; i < policy.w_actor.size(); ++i)
    adam_update(policy.w_actor[i], grads.w_actor[i], opt.m.w_actor[i], opt.v.w_actor[i], opt,
                corr1, corr2);
  for (size_t i = 0; i < policy.b_actor.size(); ++i)
    adam_update(policy.b_actor[i], grads.b_actor[i], opt.m.b_actor[i], opt.v.b_actor[i], opt,
                corr1, corr2);
  for (size_t i = 0; i < policy.w_critic.size(); ++i)
    adam_update(policy.w_critic[i], grads.w_critic[i], opt.m.w_critic[i], opt.v.w_critic[i], opt,
                corr1, corr2);
  adam_update(policy.b_critic, grads.b_critic, opt.m.b_critic, opt.v.b_critic, opt, corr1, corr2);
  for (size_t i = 0; i < policy.log_std.size(); ++i)
    adam_update(policy.log_std[i], grads.log_std[i], opt.m.log_std[i], opt.v.log_std[i], opt,
                corr1, corr2);
}

double gaussian_logprob(std::span<const double> action, std::span<const double> mean,
                        std::span<const double> log_std) {
  double lp = 0.0;
  for (size_t i = 0; i < action.size(); ++i) {
    double sigma = std::exp(log_std[i]);
    double z = (action[i] - mean[i]) / sigma;
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
  }
  return lp;
}

double categorical_logprob(std::span<const double> logits, int index) {
  double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return logits[index] - m - std::log(sum);
}

// --- Serialization ------------------------------------------------------------

namespace {

using nlohmann::json;

json grads_to_json(const Gradients& g) {
  json j;
  j["w"] = g.w;
  j["b"] = g.b;
  j["w_actor"] = g.w_actor;
  j["b_actor"] = g.b_actor;
  j["w_critic"] = g.w_critic;
  j["b_critic"] = g.b_critic;
  j["log_std"] = g.log_std;
  return j;
}

Gradients grads_from_json(const json& j) {
  Gradients g;
  g.w = j.at("w").get<std::vector<std::vector<double>>>();
  g.b = j.at("b").get<std::vector<std::vector<double>>>();
  g.w_actor = j.at("w_actor").get<std::vector<double>>();
  g.b_actor = j.at("b_actor").get<std::vector<double>>();
  g.w_critic = j.at("w_critic").get<std::vector<double>>();
  g.b_critic = j.at("b_critic").get<double>();
  g.log_std = j.at("log_std").get<std::vector<double>>();
  return g;
}

}  // namespace

std::string policy_to_json(const MlpPolicy& policy, const OptimState* opt) {
  json j;
  j["format"] = "sympol-mlp";
  j["version"] = 1;
  j["input_dim"] = policy.input_dim;
  j["hidden"] = policy.hidden;
  j["action_dim"] = policy.action_dim;
  j["mode"] = policy.mode == ActionMode::discrete ? "discrete" : "continuous";
  j["w"] = policy.w;
  j["b"] = policy.b;
  j["w_actor"] = policy.w_actor;
  j["b_actor"] = policy.b_actor;
  j["w_critic"] = policy.w_critic;
  j["b_critic"] = policy.b_critic;
  j["log_std"] = policy.log_std;
  if (opt) {
    json o;
    o["lr"] = opt->lr;
    o["step"] = opt->step;
    o["m"] = grads_to_json(opt->m);
    o["v"] = grads_to_json(opt->v);
    j["optimizer"] = o;
  }
  return j.dump(2);
}

MlpPolicy policy_from_json(const std::string& text, OptimState* opt) {
  json j = json::parse(text);
  if (j.value("format", "") != "sympol-mlp")
    throw std::runtime_error("policy_from_json: not a policy checkpoint");
  MlpPolicy p;
  p.input_dim = j.at("input_dim").get<int>();
  p.hidden = j.at("hidden").get<std::vector<int>>();
  p.action_dim = j.at("action_dim").get<int>();
  p.mode = j.at("mode").get<std::string>() == "discrete" ? ActionMode::discrete
                                                         : ActionMode::continuous;
  p.w = j.at("w").get<std::vector<std::vector<double>>>();
  p.b = j.at("b").get<std::vector<std::vector<double>>>();
  p.w_actor = j.at("w_actor").get<std::vector<double>>();
  p.b_actor = j.at("b_actor").get<std::vector<double>>();
  p.w_critic = j.at("w_critic").get<std::vector<double>>();
  p.b_critic = j.at("b_critic").get<double>();
  p.log_std = j.at("log_std").get<std::vector<double>>();
  if (opt && j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    opt->lr = o.at("lr").get<double>();
    opt->step = o.at("step").get<long>();
    opt->m = grads_from_json(o.at("m"));
    opt->v = grads_from_json(o.at("v"));
  }
  return p;
}

void save_policy(const std::string& path, const MlpPolicy& policy, const OptimState* opt) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_policy: cannot open " + path);
  f << policy_to_json(policy, opt);
}

MlpPolicy load_policy(const std::string& path, OptimState* opt) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_policy: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return policy_from_json(ss.str(), opt);
}

}  // namespace sympol
