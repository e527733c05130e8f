#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sympol/pipeline.hpp"

// stream ids for deriving independent generators from one master seed
namespace {
constexpr uint64_t kStreamInit = 1;
constexpr uint64_t kStreamAct = 2;
constexpr uint64_t kStreamTrain = 3;
constexpr uint64_t kStreamEpisode = 4;
constexpr uint64_t kStreamEvalDuring = 5;
constexpr uint64_t kStreamEvalFinal = 6;
constexpr uint64_t kStreamDataset = 7;
constexpr uint64_t kStreamDatasetEpisode = 8;
constexpr uint64_t kStreamFeature = 9;
constexpr uint64_t kStreamEvalAct = 10;
}  // namespace

namespace sympol {

// --- Feature sources ------------------------------------------------------------

void ObjectFeatures::begin_episode(uint64_t seed) {
  prev_ = ObjectSet{};
  has_prev_ = false;
  rng_ = Rng::derive(seed, kStreamFeature);
}

std::vector<double> ObjectFeatures::observe(const Env& env) {
  const auto* pong = dynamic_cast<const ObjectPongEnv*>(&env);
  if (!pong) throw std::invalid_argument("ObjectFeatures: env has no object interface");

  ObjectSet objects = cfg_.mode == ExtractorMode::oracle ? pong->oracle_objects()
                                                         : extract(pong->render_frame(), cfg_);
  const int w = ObjectPongEnv::kWidth, h = ObjectPongEnv::kHeight;
  objects = inject_noise(objects, cfg_, rng_, w, h);
  objects = inject_drop(objects, cfg_, rng_);
  ObjectSet aligned = has_prev_
                          ? align_and_velocity(prev_, objects, cfg_.match_radius_frac * w)
                          : objects;
  prev_ = objects;
  has_prev_ = true;
  return featurize(aligned, cfg_, w, h).values;
}

std::unique_ptr<FeatureSource> make_feature_source(const std::string& env_id,
                                                   const ExtractorConfig& cfg) {
  if (env_id.rfind("objectpong", 0) == 0) return std::make_unique<ObjectFeatures>(cfg);
  return std::make_unique<IdentityFeatures>();
}

// --- PPO -----------------------------------------------------------------------

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("PpoConfig: need 0 < gamma <= 1");
  if (!(clip_eps > 0.0 && clip_eps < 1.0))
    throw std::invalid_argument("PpoConfig: need 0 < clip_eps < 1");
  if (rollout_len < 1 || minibatch_size < 1 || epochs < 1 || total_steps < 1)
    throw std::invalid_argument("PpoConfig: sizes must be positive");
}

void compute_advantages(RolloutBuffer& buffer, double gamma) {
  auto& ts = buffer.transitions;
  if (ts.empty()) throw std::invalid_argument("compute_advantages: empty buffer");

  size_t start = 0;
  while (start < ts.size()) {
    size_t end = start;
    while (end < ts.size() && !ts[end].done) ++end;
    bool terminal = end < ts.size();
    if (terminal) ++end;  // include the terminal transition
    double v_end = terminal ? 0.0 : buffer.bootstrap_value;

    // direct summation of the n-step formula for every t
    for (size_t t = start; t < end; ++t) {
      double acc = 0.0;
      double p = 1.0;
      for (size_t k = t; k < end; ++k) {
        acc += p * ts[k].reward;
        p *= gamma;
      }
      acc += p * v_end;
      ts[t].advantage = acc - ts[t].value;
      ts[t].return_target = ts[t].advantage + ts[t].value;
    }
    start = end;
  }
}

double clipped_objective(double ratio, double advantage, double clip_eps) {
  double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

constexpr double kLogRatioClamp = 20.0;

struct SampledAction {
  Action action;
  double logprob = 0.0;
};

SampledAction sample_from_logits(const std::vector<double>& logits, ActionMode mode,
                                 std::span<const double> log_std, Rng& rng) {
  SampledAction out;
  if (mode == ActionMode::discrete) {
    int idx = sample_softmax(logits, rng);
    out.action = Action::discrete(idx);
    out.logprob = categorical_logprob(logits, idx);
  } else {
    std::vector<double> a(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
      a[i] = logits[i] + std::exp(log_std[i]) * rng.normal();
    out.logprob = gaussian_logprob(a, logits, log_std);
    out.action = Action::continuous(std::move(a));
  }
  return out;
}

double logprob_of(const std::vector<double>& logits, const Action& a,
                  std::span<const double> log_std) {
  if (a.mode == ActionMode::discrete) return categorical_logprob(logits, a.index);
  return gaussian_logprob(a.values, logits, log_std);
}

// Per-sample PPO slope w.r.t. logits / value / log_std. Scale lets the caller
// turn summed gradients into batch means.
LossSlope ppo_sample_slope(const MlpPolicy& policy, const Transition& tr,
                           const std::vector<double>& logits, double value,
                           const PpoConfig& cfg, double scale) {
  LossSlope s;
  s.dlogits.assign(logits.size(), 0.0);
  s.dlog_std.assign(policy.log_std.size(), 0.0);

  double lp_new = logprob_of(logits, tr.action, policy.log_std);
  double log_ratio = std::clamp(lp_new - tr.logprob_old, -kLogRatioClamp, kLogRatioClamp);
  double ratio = std::exp(log_ratio);
  double objective = clipped_objective(ratio, tr.advantage, cfg.clip_eps);

  // d objective / d lp_new: active only on the unclipped branch
  double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  double dobj_dlp = ratio * tr.advantage <= clipped * tr.advantage ? ratio * tr.advantage : 0.0;

  double entropy = 0.0;
  if (policy.mode == ActionMode::discrete) {
    std::vector<double> p = softmax(logits);
    for (size_t j = 0; j < p.size(); ++j)
      if (p[j] > 0.0) entropy -= p[j] * std::log(p[j]);
    for (size_t j = 0; j < logits.size(); ++j) {
      double dlp_dlj = (static_cast<int>(j) == tr.action.index ? 1.0 : 0.0) - p[j];
      double dH_dlj = p[j] > 0.0 ? -p[j] * (std::log(p[j]) + entropy) : 0.0;
      // loss = -(objective + entropy_coeff * H) + value_coeff * value_error
      s.dlogits[j] = scale * (-(dobj_dlp * dlp_dlj) - cfg.entropy_coeff * dH_dlj);
    }
  } else {
    for (size_t j = 0; j < logits.size(); ++j) {
      double sigma = std::exp(policy.log_std[j]);
      double z = (tr.action.values[j] - logits[j]) / sigma;
      entropy += policy.log_std[j] + 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
      double dlp_dmu = z / sigma;
      double dlp_dls = z * z - 1.0;
      s.dlogits[j] = scale * (-(dobj_dlp * dlp_dmu));
      s.dlog_std[j] = scale * (-(dobj_dlp * dlp_dls) - cfg.entropy_coeff * 1.0);
    }
  }

  double verr = value - tr.return_target;
  s.dvalue = scale * cfg.value_coeff * 2.0 * verr;
  s.loss = scale * (-(objective + cfg.entropy_coeff * entropy) + cfg.value_coeff * verr * verr);
  return s;
}

}  // namespace

PpoLossTerms ppo_loss(const MlpPolicy& policy, std::span<const Transition> batch,
                      const PpoConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("ppo_loss: empty batch");
  PpoLossTerms terms;
  for (const Transition& tr : batch) {
    ForwardResult fr = forward(policy, tr.features);
    double lp_new = logprob_of(fr.logits, tr.action, policy.log_std);
    double log_ratio = std::clamp(lp_new - tr.logprob_old, -kLogRatioClamp, kLogRatioClamp);
    double ratio = std::exp(log_ratio);
    terms.policy += clipped_objective(ratio, tr.advantage, cfg.clip_eps);
    double verr = fr.value - tr.return_target;
    terms.value += verr * verr;
    if (policy.mode == ActionMode::discrete) {
      std::vector<double> p = softmax(fr.logits);
      for (double pi : p)
        if (pi > 0.0) terms.entropy -= pi * std::log(pi);
    } else {
      for (double ls : policy.log_std)
        terms.entropy += ls + 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
    }
  }
  const double n = static_cast<double>(batch.size());
  terms.policy /= n;
  terms.value /= n;
  terms.entropy /= n;
  terms.total = terms.policy - cfg.value_coeff * terms.value + cfg.entropy_coeff * terms.entropy;
  return terms;
}

PpoConfig default_ppo_config(const std::string& env_id) {
  PpoConfig cfg;
  if (env_id == "cartpole-cont") cfg.total_steps = 150000;
  else if (env_id == "mountaincar-cont") cfg.total_steps = 150000;
  else if (env_id == "pendulum") cfg.total_steps = 1000000;
  else if (env_id.rfind("objectpong", 0) == 0) cfg.total_steps = 300000;
  return cfg;
}

double default_teacher_threshold(const std::string& env_id) {
  if (env_id == "cartpole-cont") return 1000.0;
  if (env_id == "mountaincar-cont") return 90.0;
  if (env_id == "pendulum") return -200.0;
  if (env_id.rfind("objectpong", 0) == 0) return 15.0;
  return std::numeric_limits<double>::infinity();
}

BackwardResult ppo_gradients(const MlpPolicy& policy, std::span<const Transition> batch,
                             const PpoConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("ppo_gradients: empty batch");
  std::vector<std::vector<double>> states;
  states.reserve(batch.size());
  for (const auto& tr : batch) states.push_back(tr.features);
  double scale = 1.0 / static_cast<double>(batch.size());
  return backward(policy, states,
                  [&](const std::vector<double>& logits, double value, int sample) {
                    return ppo_sample_slope(policy, batch[sample], logits, value, cfg, scale);
                  });
}

// --- Teacher training ------------------------------------------------------------

namespace {

void normalize_advantages_inplace(std::vector<Transition>& ts) {
  double mean = 0.0;
  for (const auto& t : ts) mean += t.advantage;
  mean /= ts.size();
  double var = 0.0;
  for (const auto& t : ts) var += (t.advantage - mean) * (t.advantage - mean);
  double sd = std::sqrt(var / ts.size());
  for (auto& t : ts) t.advantage = (t.advantage - mean) / (sd + 1e-8);
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
}

}  // namespace

TeacherResult train_teacher(const Env& env_proto, const FeatureSource& fs_proto,
                            const PpoConfig& cfg, uint64_t seed, double threshold) {
  cfg.validate();
  auto env = env_proto.clone_config();
  auto fs = fs_proto.clone();
  const EnvSpec& spec = env->spec();

  Rng init_rng = Rng::derive(seed, kStreamInit);
  Rng act_rng = Rng::derive(seed, kStreamAct);
  Rng train_rng = Rng::derive(seed, kStreamTrain);

  MlpPolicy policy = make_policy(fs->dim(*env), cfg.hidden, spec.action_dim, spec.action_mode,
                                 init_rng, cfg.log_std_init);
  OptimState opt = OptimState::init(policy, cfg.lr);

  TeacherResult result;
  result.policy = policy;
  result.eval_reward = -std::numeric_limits<double>::infinity();

  long steps = 0;
  long episode_counter = 0;
  int update = 0;
  bool episode_active = false;
  std::vector<double> features;
  double episode_reward = 0.0;

  auto begin_episode = [&]() {
    uint64_t ep_seed = Rng::derive(seed, kStreamEpisode).next_u64() + episode_counter;
    env->reset(ep_seed);
    fs->begin_episode(ep_seed);
    features = fs->observe(*env);
    episode_active = true;
    episode_reward = 0.0;
    ++episode_counter;
  };

  while (steps < cfg.total_steps) {
    RolloutBuffer buffer;
    buffer.transitions.reserve(cfg.rollout_len);
    std::vector<double> finished_rewards;

    for (int i = 0; i < cfg.rollout_len; ++i) {
      if (!episode_active) begin_episode();
      ForwardResult fr = forward(policy, features);
      SampledAction sa = sample_from_logits(fr.logits, spec.action_mode, policy.log_std, act_rng);
      StepResult sr = env->step(sa.action);

      Transition tr;
      tr.features = features;
      tr.action = sa.action;
      tr.reward = sr.reward;
      tr.done = sr.done;
      tr.logprob_old = sa.logprob;
      tr.value = fr.value;
      buffer.transitions.push_back(std::move(tr));
      episode_reward += sr.reward;
      ++steps;

      if (sr.done) {
        episode_active = false;
        finished_rewards.push_back(episode_reward);
      } else {
        features = fs->observe(*env);
      }
    }
    buffer.bootstrap_value = episode_active ? forward(policy, features).value : 0.0;
    compute_advantages(buffer, cfg.gamma);
    if (cfg.normalize_advantages) normalize_advantages_inplace(buffer.transitions);

    if (cfg.anneal_lr)
      opt.lr = cfg.lr * std::max(0.05, 1.0 - static_cast<double>(steps) / cfg.total_steps);

    std::vector<int> idx(buffer.transitions.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle_indices(idx, train_rng);
      for (size_t off = 0; off < idx.size(); off += cfg.minibatch_size) {
        size_t mb_end = std::min(idx.size(), off + cfg.minibatch_size);
        std::vector<Transition> minibatch;
        minibatch.reserve(mb_end - off);
        for (size_t k = off; k < mb_end; ++k) minibatch.push_back(buffer.transitions[idx[k]]);
        BackwardResult br = ppo_gradients(policy, minibatch, cfg);
        adam_step(policy, br.grads, opt);
      }
    }
    ++update;

    CurvePoint pt;
    pt.steps = steps;
    pt.rollout_reward = finished_rewards.empty()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : std::accumulate(finished_rewards.begin(), finished_rewards.end(), 0.0) /
                                  finished_rewards.size();
    pt.eval_reward = std::numeric_limits<double>::quiet_NaN();

    if (update % cfg.eval_every_updates == 0 || steps >= cfg.total_steps) {
      EvalReport er = evaluate_policy(env_proto, fs_proto, teacher_actor(policy, true), 5,
                                      Rng::derive(seed, kStreamEvalDuring).next_u64());
      pt.eval_reward = er.mean;
      if (er.mean > result.eval_reward) {
        result.eval_reward = er.mean;
        result.policy = policy;
      }
      // confirm an apparent threshold pass on the full eval budget and stop early
      if (er.mean >= threshold) {
        EvalReport full = evaluate_policy(env_proto, fs_proto, teacher_actor(policy, true),
                                          cfg.eval_episodes,
                                          Rng::derive(seed, kStreamEvalFinal).next_u64());
        if (full.mean >= threshold) {
          result.policy = policy;
          result.eval_reward = full.mean;
          result.reached_threshold = true;
          result.curve.push_back(pt);
          return result;
        }
      }
    }
    result.curve.push_back(pt);
  }

  // pick the better of (best checkpoint, final policy) on the full eval budget
  uint64_t final_seed = Rng::derive(seed, kStreamEvalFinal).next_u64();
  EvalReport best_er = evaluate_policy(env_proto, fs_proto, teacher_actor(result.policy, true),
                                       cfg.eval_episodes, final_seed);
  EvalReport last_er = evaluate_policy(env_proto, fs_proto, teacher_actor(policy, true),
                                       cfg.eval_episodes, final_seed);
  if (last_er.mean >= best_er.mean) {
    result.policy = policy;
    result.eval_reward = last_er.mean;
  } else {
    result.eval_reward = best_er.mean;
  }
  result.reached_threshold = result.eval_reward >= threshold;
  return result;
}

// --- Dataset collection ------------------------------------------------------------

void collect_distill_dataset(const MlpPolicy& teacher, const Env& env_proto,
                             const FeatureSource& fs_proto, int n, uint64_t seed, DataMatrix* x,
                             DataMatrix* y) {
  if (n < 1) throw std::invalid_argument("collect_distill_dataset: n must be positive");
  auto env = env_proto.clone_config();
  auto fs = fs_proto.clone();
  const EnvSpec& spec = env->spec();

  x->rows = n;
  x->cols = fs->dim(*env);
  x->data.clear();
  x->data.reserve(static_cast<size_t>(n) * x->cols);
  y->rows = n;
  y->cols = spec.action_dim;
  y->data.clear();
  y->data.reserve(static_cast<size_t>(n) * y->cols);

  Rng act_rng = Rng::derive(seed, kStreamDataset);
  long episode = 0;
  int rows = 0;
  while (rows < n) {
    uint64_t ep_seed = Rng::derive(seed, kStreamDatasetEpisode).next_u64() + episode;
    env->reset(ep_seed);
    fs->begin_episode(ep_seed);
    ++episode;
    bool done = false;
    while (!done && rows < n) {
      std::vector<double> features = fs->observe(*env);
      ForwardResult fr = forward(teacher, features);
      x->data.insert(x->data.end(), features.begin(), features.end());
      y->data.insert(y->data.end(), fr.logits.begin(), fr.logits.end());
      ++rows;
      SampledAction sa = sample_from_logits(fr.logits, spec.action_mode, teacher.log_std, act_rng);
      done = env->step(sa.action).done;
    }
  }
}

// --- Mixed policy -------------------------------------------------------------------

bool MixedPolicy::fully_symbolic() const {
  for (const auto& s : slots)
    if (!s) return false;
  return true;
}

MixedPolicy mixed_from_teacher(const MlpPolicy& teacher) {
  MixedPolicy mp;
  mp.teacher = &teacher;
  mp.slots.assign(teacher.action_dim, std::nullopt);
  mp.mode = teacher.mode;
  return mp;
}

MixedPolicy mixed_from_forest(const Forest& forest) {
  MixedPolicy mp;
  mp.teacher = nullptr;
  mp.mode = forest.action_mode;
  for (const auto& t : forest.trees) mp.slots.emplace_back(t);
  return mp;
}

std::vector<double> mixed_logits(const MixedPolicy& mp, std::span<const double> features) {
  std::vector<double> logits;
  if (mp.fully_symbolic()) {
    logits.resize(mp.slots.size());
  } else {
    if (!mp.teacher)
      throw std::invalid_argument("mixed_logits: teacher required for non-symbolic slots");
    logits = forward(*mp.teacher, features).logits;
  }
  for (size_t i = 0; i < mp.slots.size(); ++i)
    if (mp.slots[i]) logits[i] = eval(*mp.slots[i], features);
  return logits;
}

Action mixed_act(const MixedPolicy& mp, std::span<const double> features, Rng& rng,
                 bool deterministic) {
  std::vector<double> logits = mixed_logits(mp, features);
  if (deterministic) {
    if (mp.mode == ActionMode::discrete) return Action::discrete(argmax_index(logits));
    return Action::continuous(std::move(logits));
  }
  std::span<const double> log_std =
      mp.teacher ? std::span<const double>(mp.teacher->log_std) : std::span<const double>();
  if (mp.mode == ActionMode::continuous && log_std.empty())
    return Action::continuous(std::move(logits));  // no noise model without a teacher
  return sample_from_logits(logits, mp.mode, log_std, rng).action;
}

ActFn teacher_actor(const MlpPolicy& teacher, bool deterministic) {
  return [&teacher, deterministic](std::span<const double> features, Rng& rng) {
    ForwardResult fr = forward(teacher, features);
    if (deterministic) {
      if (teacher.mode == ActionMode::discrete) return Action::discrete(argmax_index(fr.logits));
      return Action::continuous(fr.logits);
    }
    return sample_from_logits(fr.logits, teacher.mode, teacher.log_std, rng).action;
  };
}

ActFn forest_actor(const Forest& forest, bool deterministic) {
  return [mp = std::make_shared<MixedPolicy>(mixed_from_forest(forest)), deterministic](
             std::span<const double> features, Rng& rng) {
    return mixed_act(*mp, features, rng, deterministic);
  };
}

ActFn mixed_actor(const MixedPolicy& mp, bool deterministic) {
  return [&mp, deterministic](std::span<const double> features, Rng& rng) {
    return mixed_act(mp, features, rng, deterministic);
  };
}

// --- Evaluation ----------------------------------------------------------------------

EvalReport evaluate_policy(const Env& env_proto, const FeatureSource& fs_proto, const ActFn& act,
                           int episodes, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be positive");
  auto env = env_proto.clone_config();
  auto fs = fs_proto.clone();
  EvalReport report;
  for (int ep = 0; ep < episodes; ++ep) {
    uint64_t ep_seed = seed + static_cast<uint64_t>(ep);
    env->reset(ep_seed);
    fs->begin_episode(ep_seed);
    Rng rng = Rng::derive(ep_seed, kStreamEvalAct);
    double total = 0.0;
    while (true) {
      std::vector<double> features = fs->observe(*env);
      StepResult sr = env->step(act(features, rng));
      total += sr.reward;
      if (sr.done) {
        for (const auto& [k, v] : sr.info) report.info_totals[k] += v;
        break;
      }
    }
    report.per_episode.push_back(total);
  }
  double sum = 0.0;
  for (double r : report.per_episode) sum += r;
  report.mean = sum / episodes;
  double var = 0.0;
  for (double r : report.per_episode) var += (r - report.mean) * (r - report.mean);
  report.stddev = std::sqrt(var / episodes);
  return report;
}

}  // namespace sympol
