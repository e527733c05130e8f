// sympol: train a PPO teacher, distill it into a symbolic forest, fine-tune
// the forest against the environment, and run the ablation harness.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "sympol/io.hpp"
#include "sympol/pipeline.hpp"

using namespace sympol;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitThresholdWarning = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string env = "cartpole-cont";
  uint64_t seed = 0;
  std::string out = "runs/default";
  int workers = 1;
  PpoConfig ppo;
  GpConfig gp;
  ExtractorConfig extractor;
  int distill_samples = 2000;
  FinetuneOptions finetune;
  std::optional<double> teacher_threshold;  // default: per-env bar
  std::optional<long> total_steps;          // default: per-env budget

  double threshold() const {
    return teacher_threshold ? *teacher_threshold : default_teacher_threshold(env);
  }
};

// config file keys; kept in one place so --help can list them
const char* kConfigKeys =
    "Config file keys: env, seed, out, workers, teacher_threshold, total_steps,\n"
    "  ppo.{gamma, clip_eps, rollout_len, minibatch_size, epochs, lr, value_coeff,\n"
    "       entropy_coeff, normalize_advantages, anneal_lr, hidden, log_std_init,\n"
    "       eval_episodes, eval_every_updates},\n"
    "  gp.{population_size, generations, tournament_size, sgd_lr, sgd_steps,\n"
    "      parsimony_coeff, max_depth, strategy_probs.{crossover, subtree, hoist,\n"
    "      point, reproduction, sgd}, treegen.{min_depth, max_depth, leaf_prob,\n"
    "      var_prob, const_min, const_max}},\n"
    "  extractor.{mode, m_bar, intensity_threshold, intensity_levels, drop_probs,\n"
    "             split_simulation, noise_sigma, miss_prob, match_radius_frac},\n"
    "  distill.samples,\n"
    "  finetune.{iterations, fitness_episodes, mode, warm_start, use_sgd_strategy}";

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

void apply_json(const json& j, RunConfig* cfg) {
  maybe(j, "env", &cfg->env);
  maybe(j, "seed", &cfg->seed);
  maybe(j, "out", &cfg->out);
  maybe(j, "workers", &cfg->workers);
  if (j.contains("teacher_threshold")) cfg->teacher_threshold = j.at("teacher_threshold").get<double>();
  if (j.contains("total_steps")) cfg->total_steps = j.at("total_steps").get<long>();
  if (j.contains("ppo")) {
    const json& p = j.at("ppo");
    maybe(p, "gamma", &cfg->ppo.gamma);
    maybe(p, "clip_eps", &cfg->ppo.clip_eps);
    maybe(p, "rollout_len", &cfg->ppo.rollout_len);
    maybe(p, "minibatch_size", &cfg->ppo.minibatch_size);
    maybe(p, "epochs", &cfg->ppo.epochs);
    maybe(p, "lr", &cfg->ppo.lr);
    maybe(p, "value_coeff", &cfg->ppo.value_coeff);
    maybe(p, "entropy_coeff", &cfg->ppo.entropy_coeff);
    maybe(p, "normalize_advantages", &cfg->ppo.normalize_advantages);
    maybe(p, "anneal_lr", &cfg->ppo.anneal_lr);
    maybe(p, "hidden", &cfg->ppo.hidden);
    maybe(p, "log_std_init", &cfg->ppo.log_std_init);
    maybe(p, "eval_episodes", &cfg->ppo.eval_episodes);
    maybe(p, "eval_every_updates", &cfg->ppo.eval_every_updates);
  }
  if (j.contains("gp")) {
    const json& g = j.at("gp");
    maybe(g, "population_size", &cfg->gp.population_size);
    maybe(g, "generations", &cfg->gp.generations);
    maybe(g, "tournament_size", &cfg->gp.tournament_size);
    maybe(g, "sgd_lr", &cfg->gp.sgd_lr);
    maybe(g, "sgd_steps", &cfg->gp.sgd_steps);
    maybe(g, "parsimony_coeff", &cfg->gp.parsimony_coeff);
    maybe(g, "max_depth", &cfg->gp.max_depth);
    if (g.contains("strategy_probs")) {
      const json& s = g.at("strategy_probs");
      maybe(s, "crossover", &cfg->gp.strategy_probs.crossover);
      maybe(s, "subtree", &cfg->gp.strategy_probs.subtree);
      maybe(s, "hoist", &cfg->gp.strategy_probs.hoist);
      maybe(s, "point", &cfg->gp.strategy_probs.point);
      maybe(s, "reproduction", &cfg->gp.strategy_probs.reproduction);
      maybe(s, "sgd", &cfg->gp.strategy_probs.sgd);
    }
    if (g.contains("treegen")) {
      const json& t = g.at("treegen");
      maybe(t, "min_depth", &cfg->gp.treegen.min_depth);
      maybe(t, "max_depth", &cfg->gp.treegen.max_depth);
      maybe(t, "leaf_prob", &cfg->gp.treegen.leaf_prob);
      maybe(t, "var_prob", &cfg->gp.treegen.var_prob);
      maybe(t, "const_min", &cfg->gp.treegen.const_min);
      maybe(t, "const_max", &cfg->gp.treegen.const_max);
    }
  }
  if (j.contains("extractor")) {
    const json& e = j.at("extractor");
    if (e.contains("mode")) {
      std::string m = e.at("mode").get<std::string>();
      if (m == "oracle") cfg->extractor.mode = ExtractorMode::oracle;
      else if (m == "connected_components") cfg->extractor.mode = ExtractorMode::connected_components;
      else throw ConfigError("extractor.mode must be 'oracle' or 'connected_components'");
    }
    maybe(e, "m_bar", &cfg->extractor.m_bar);
    maybe(e, "intensity_threshold", &cfg->extractor.intensity_threshold);
    maybe(e, "intensity_levels", &cfg->extractor.intensity_levels);
    maybe(e, "split_simulation", &cfg->extractor.split_simulation);
    maybe(e, "noise_sigma", &cfg->extractor.noise_sigma);
    maybe(e, "miss_prob", &cfg->extractor.miss_prob);
    maybe(e, "match_radius_frac", &cfg->extractor.match_radius_frac);
    if (e.contains("drop_probs"))
      for (const auto& [k, v] : e.at("drop_probs").items())
        cfg->extractor.drop_probs[std::stoi(k)] = v.get<double>();
  }
  if (j.contains("distill")) maybe(j.at("distill"), "samples", &cfg->distill_samples);
  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    maybe(f, "iterations", &cfg->finetune.iterations);
    maybe(f, "fitness_episodes", &cfg->finetune.fitness_episodes);
    maybe(f, "warm_start", &cfg->finetune.warm_start);
    maybe(f, "use_sgd_strategy", &cfg->finetune.use_sgd_strategy);
    if (f.contains("mode")) {
      std::string m = f.at("mode").get<std::string>();
      if (m == "per-action") cfg->finetune.mode = FinetuneMode::per_action;
      else if (m == "simultaneous") cfg->finetune.mode = FinetuneMode::simultaneous;
      else throw ConfigError("finetune.mode must be 'per-action' or 'simultaneous'");
    }
  }
}

json resolved_json(const RunConfig& cfg) {
  json j;
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["workers"] = cfg.workers;
  j["teacher_threshold"] = cfg.threshold();
  j["total_steps"] = cfg.total_steps ? *cfg.total_steps : default_ppo_config(cfg.env).total_steps;
  j["ppo"] = {{"gamma", cfg.ppo.gamma},
              {"clip_eps", cfg.ppo.clip_eps},
              {"rollout_len", cfg.ppo.rollout_len},
              {"minibatch_size", cfg.ppo.minibatch_size},
              {"epochs", cfg.ppo.epochs},
              {"lr", cfg.ppo.lr},
              {"value_coeff", cfg.ppo.value_coeff},
              {"entropy_coeff", cfg.ppo.entropy_coeff},
              {"normalize_advantages", cfg.ppo.normalize_advantages},
              {"anneal_lr", cfg.ppo.anneal_lr},
              {"hidden", cfg.ppo.hidden},
              {"log_std_init", cfg.ppo.log_std_init},
              {"eval_episodes", cfg.ppo.eval_episodes},
              {"eval_every_updates", cfg.ppo.eval_every_updates}};
  j["gp"] = {{"population_size", cfg.gp.population_size},
             {"generations", cfg.gp.generations},
             {"tournament_size", cfg.gp.tournament_size},
             {"sgd_lr", cfg.gp.sgd_lr},
             {"sgd_steps", cfg.gp.sgd_steps},
             {"parsimony_coeff", cfg.gp.parsimony_coeff},
             {"max_depth", cfg.gp.max_depth},
             {"strategy_probs",
              {{"crossover", cfg.gp.strategy_probs.crossover},
               {"subtree", cfg.gp.strategy_probs.subtree},
               {"hoist", cfg.gp.strategy_probs.hoist},
               {"point", cfg.gp.strategy_probs.point},
               {"reproduction", cfg.gp.strategy_probs.reproduction},
               {"sgd", cfg.gp.strategy_probs.sgd}}},
             {"treegen",
              {{"min_depth", cfg.gp.treegen.min_depth},
               {"max_depth", cfg.gp.treegen.max_depth},
               {"leaf_prob", cfg.gp.treegen.leaf_prob},
               {"var_prob", cfg.gp.treegen.var_prob},
               {"const_min", cfg.gp.treegen.const_min},
               {"const_max", cfg.gp.treegen.const_max}}}};
  j["extractor"] = {
      {"mode", cfg.extractor.mode == ExtractorMode::oracle ? "oracle" : "connected_components"},
      {"m_bar", cfg.extractor.m_bar},
      {"intensity_threshold", cfg.extractor.intensity_threshold},
      {"intensity_levels", cfg.extractor.intensity_levels},
      {"split_simulation", cfg.extractor.split_simulation},
      {"noise_sigma", cfg.extractor.noise_sigma},
      {"miss_prob", cfg.extractor.miss_prob},
      {"match_radius_frac", cfg.extractor.match_radius_frac}};
  json drops = json::object();
  for (const auto& [k, v] : cfg.extractor.drop_probs) drops[std::to_string(k)] = v;
  j["extractor"]["drop_probs"] = drops;
  j["distill"] = {{"samples", cfg.distill_samples}};
  j["finetune"] = {
      {"iterations", cfg.finetune.iterations},
      {"fitness_episodes", cfg.finetune.fitness_episodes},
      {"mode", cfg.finetune.mode == FinetuneMode::per_action ? "per-action" : "simultaneous"},
      {"warm_start", cfg.finetune.warm_start},
      {"use_sgd_strategy", cfg.finetune.use_sgd_strategy}};
  return j;
}

void write_manifest(const RunConfig& cfg, const std::string& stage) {
  fs::create_directories(cfg.out);
  std::ofstream f(fs::path(cfg.out) / ("run-manifest-" + stage + ".json"));
  f << resolved_json(cfg).dump(2) << "\n";
}

RunConfig finalize(RunConfig cfg) {
  cfg.ppo.total_steps = cfg.total_steps ? *cfg.total_steps : default_ppo_config(cfg.env).total_steps;
  cfg.gp.workers = cfg.workers;
  cfg.gp.seed = cfg.seed;
  try {
    cfg.ppo.validate();
    cfg.gp.validate();
    make_env(cfg.env);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::string artifact(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out) / name).string();
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifact("missing artifact '" + path + "'; run `sympol " + producer +
                          "` first");
}

// --- stage drivers ---------------------------------------------------------------

int cmd_train_teacher(const RunConfig& cfg) {
  write_manifest(cfg, "train-teacher");
  auto env = make_env(cfg.env);
  auto fsrc = make_feature_source(cfg.env, cfg.extractor);
  std::printf("training teacher on %s (seed %llu, %ld steps, threshold %g)\n", cfg.env.c_str(),
              static_cast<unsigned long long>(cfg.seed), cfg.ppo.total_steps, cfg.threshold());
  TeacherResult r = train_teacher(*env, *fsrc, cfg.ppo, cfg.seed, cfg.threshold());

  save_policy(artifact(cfg, "teacher.json"), &r.policy != nullptr ? r.policy : r.policy);
  CsvWriter curve(artifact(cfg, "stage1_curve.csv"), {"steps", "rollout_reward", "eval_reward"});
  for (const auto& p : r.curve)
    curve.row({std::to_string(p.steps),
               std::isnan(p.rollout_reward) ? "" : format_double(p.rollout_reward),
               std::isnan(p.eval_reward) ? "" : format_double(p.eval_reward)});

  std::printf("teacher eval reward (%d episodes): %.3f — threshold %s\n", cfg.ppo.eval_episodes,
              r.eval_reward, r.reached_threshold ? "reached" : "NOT reached");
  if (!r.reached_threshold) {
    std::fprintf(stderr, "warning: teacher below threshold; best checkpoint saved anyway\n");
    return kExitThresholdWarning;
  }
  return kExitOk;
}

int cmd_distill(const RunConfig& cfg) {
  write_manifest(cfg, "distill");
  std::string teacher_path = artifact(cfg, "teacher.json");
  require_artifact(teacher_path, "train-teacher");
  MlpPolicy teacher = load_policy(teacher_path);

  auto env = make_env(cfg.env);
  auto fsrc = make_feature_source(cfg.env, cfg.extractor);

  DataMatrix x, y;
  collect_distill_dataset(teacher, *env, *fsrc, cfg.distill_samples, cfg.seed, &x, &y);
  save_dataset_csv(artifact(cfg, "distill_dataset.csv"), x, y);
  std::printf("collected %d samples with %d features, %d action column(s)\n", x.rows, x.cols,
              y.cols);

  GenerationCsv gen_csv(artifact(cfg, "stage2_gen.csv"));
  TreeLog tree_log(artifact(cfg, "stage2_best_trees.txt"));
  Forest forest = distill_forest(
      x, y, cfg.gp, teacher.mode,
      [&](int action, int gen, const std::vector<Candidate>& pop, const Candidate& best,
          double wall) {
        double mean = 0.0;
        for (const auto& c : pop) mean += *c.fitness;
        mean /= pop.size();
        gen_csv.row(gen, *best.fitness, mean, best.tree.node_count(), wall);
        if (gen % 25 == 0)
          std::printf("  action %d gen %3d best mse %.3e\n", action, gen, -*best.fitness);
        tree_log.line(best.tree);
      });
  save_forest(artifact(cfg, "forest.json"), forest, cfg.env);
  for (int i = 0; i < forest.action_dim(); ++i)
    std::printf("tree[%d]: %s\n", i, render_infix(simplify(forest.trees[i])).c_str());
  return kExitOk;
}

int cmd_finetune(const RunConfig& cfg) {
  write_manifest(cfg, "finetune");
  std::string teacher_path = artifact(cfg, "teacher.json");
  std::string forest_path = artifact(cfg, "forest.json");
  require_artifact(teacher_path, "train-teacher");
  require_artifact(forest_path, "distill");
  MlpPolicy teacher = load_policy(teacher_path);
  Forest init_forest = load_forest(forest_path);

  auto env = make_env(cfg.env);
  auto fsrc = make_feature_source(cfg.env, cfg.extractor);

  CsvWriter gen_csv(artifact(cfg, "stage3_gen.csv"),
                    {"iteration", "action", "generation", "best_fitness", "forest_reward",
                     "wall_time_s"});
  FinetuneResult r = neural_guided_finetune(
      teacher, init_forest, *env, *fsrc, cfg.gp, cfg.ppo, cfg.finetune, cfg.seed,
      [&](const FinetuneGenRecord& rec) {
        gen_csv.row_numeric({double(rec.iteration), double(rec.action), double(rec.generation),
                             rec.best_fitness, rec.forest_reward, rec.wall_time_s});
        std::printf("  iter %2d action %d gen %3d fitness %.3f forest reward %.3f\n",
                    rec.iteration, rec.action, rec.generation, rec.best_fitness,
                    rec.forest_reward);
      });
  save_forest(artifact(cfg, "forest_finetuned.json"), r.forest, cfg.env);
  std::printf("fine-tuned forest reward %.3f (warm start %.3f) over %d generations\n",
              r.forest_reward, r.warm_start_reward, r.generations_run);
  return kExitOk;
}

struct EvalArgs {
  std::string policy_path;  // teacher.json or forest json; empty = prefer fine-tuned forest
  int episodes = 20;
  bool stochastic = false;
  std::string trajectories;  // optional dump path
};

ActFn load_actor(const RunConfig& cfg, const std::string& path, std::shared_ptr<void>* keep) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("missing artifact '" + path + "'");
  json j = json::parse(f);
  if (j.value("format", "") == "sympol-mlp") {
    auto teacher = std::make_shared<MlpPolicy>(load_policy(path));
    *keep = teacher;
    return teacher_actor(*teacher, true);
  }
  auto forest = std::make_shared<Forest>(load_forest(path));
  *keep = forest;
  return forest_actor(*forest, true);
}

int cmd_eval(const RunConfig& cfg, const EvalArgs& args) {
  write_manifest(cfg, "eval");
  std::string path = args.policy_path;
  if (path.empty()) {
    path = artifact(cfg, "forest_finetuned.json");
    if (!fs::exists(path)) path = artifact(cfg, "forest.json");
    if (!fs::exists(path)) path = artifact(cfg, "teacher.json");
    if (!fs::exists(path))
      throw MissingArtifact("no policy artifact in '" + cfg.out +
                            "'; run the pipeline or pass --policy");
  }
  std::shared_ptr<void> keep;
  ActFn act = load_actor(cfg, path, &keep);

  auto env = make_env(cfg.env);
  auto fsrc = make_feature_source(cfg.env, cfg.extractor);

  if (args.stochastic) {
    // reuse the stochastic variants
    std::ifstream f(path);
    json j = json::parse(f);
    if (j.value("format", "") == "sympol-mlp") {
      auto teacher = std::make_shared<MlpPolicy>(load_policy(path));
      keep = teacher;
      act = teacher_actor(*teacher, false);
    } else {
      auto forest = std::make_shared<Forest>(load_forest(path));
      keep = forest;
      act = forest_actor(*forest, false);
    }
  }

  EvalReport r = evaluate_policy(*env, *fsrc, act, args.episodes, cfg.seed);
  CsvWriter csv(artifact(cfg, "eval.csv"), {"episode", "reward"});
  for (size_t i = 0; i < r.per_episode.size(); ++i)
    csv.row({std::to_string(i), format_double(r.per_episode[i])});
  std::printf("%s on %s: mean %.3f  std %.3f  (%d episodes, policy %s)\n", "eval", cfg.env.c_str(),
              r.mean, r.stddev, args.episodes, path.c_str());
  for (const auto& [k, v] : r.info_totals) std::printf("  info %s: %.1f\n", k.c_str(), v);

  if (!args.trajectories.empty()) {
    auto env2 = make_env(cfg.env);
    auto fs2 = make_feature_source(cfg.env, cfg.extractor);
    std::ofstream tf(args.trajectories);
    const EnvSpec& spec = env2->spec();
    tf << "t";
    for (int i = 0; i < spec.state_dim; ++i) tf << ",s" << i;
    for (int i = 0; i < (spec.action_mode == ActionMode::discrete ? 1 : spec.action_dim); ++i)
      tf << ",a" << i;
    tf << ",reward,done\n";
    env2->reset(cfg.seed);
    fs2->begin_episode(cfg.seed);
    Rng rng = Rng::derive(cfg.seed, 77);
    int t = 0;
    while (true) {
      auto state = env2->state();
      Action a = act(fs2->observe(*env2), rng);
      StepResult sr = env2->step(a);
      tf << t++;
      for (double s : state) tf << "," << format_double(s);
      if (a.mode == ActionMode::discrete) tf << "," << a.index;
      else
        for (double v : a.values) tf << "," << format_double(v);
      tf << "," << format_double(sr.reward) << "," << (sr.done ? 1 : 0) << "\n";
      if (sr.done) break;
    }
  }
  return kExitOk;
}

int cmd_export(const RunConfig& cfg, const std::string& forest_arg) {
  write_manifest(cfg, "export");
  std::string path = forest_arg.empty() ? artifact(cfg, "forest_finetuned.json") : forest_arg;
  if (forest_arg.empty() && !fs::exists(path)) path = artifact(cfg, "forest.json");
  require_artifact(path, "distill (or pass --forest)");
  Forest forest = load_forest(path);
  std::ofstream policy_txt(artifact(cfg, "policy_infix.txt"));
  for (int i = 0; i < forest.action_dim(); ++i) {
    ExprTree simplified = simplify(forest.trees[i]);
    std::string dot_path = artifact(cfg, "forest_tree" + std::to_string(i) + ".dot");
    std::ofstream df(dot_path);
    df << to_dot(simplified, "tree" + std::to_string(i));
    std::string infix = render_infix(simplified);
    policy_txt << "action " << i << ": " << infix << "\n";
    std::printf("action %d: %s\n  -> %s\n", i, infix.c_str(), dot_path.c_str());
  }
  return kExitOk;
}

// --- ablation presets ---------------------------------------------------------------

// Table 6 analog: GP+SGD vs vanilla GP on the fixed division benchmark.
int ablate_sgd_on_off(const RunConfig& cfg) {
  Rng data_rng(2024);
  DataMatrix x;
  x.rows = 2000;
  x.cols = 1;
  x.data.resize(2000);
  for (auto& v : x.data) v = data_rng.uniform(-1.0, 1.0);
  std::vector<double> y(2000);
  for (int i = 0; i < 2000; ++i) y[i] = x.data[i] / 0.175;

  const int kSeeds = 10, kCap = 120;
  auto run = [&](bool sgd) {
    std::vector<int> gens;
    std::vector<double> mses;
    for (int s = 0; s < kSeeds; ++s) {
      GpConfig g = cfg.gp;
      g.seed = cfg.seed * 1000 + s;
      g.generations = kCap;
      g.early_stop_mse = 1e-6;
      if (!sgd) g.strategy_probs = StrategyProbs::vanilla();
      RegressionResult r = run_regression(x, y, g);
      gens.push_back(r.mse < 1e-6 ? r.generations_run : kCap + 1);
      mses.push_back(r.mse);
      std::printf("  %s seed %d: %s in %d gens (mse %.2e)\n", sgd ? "gp+sgd " : "vanilla", s,
                  r.mse < 1e-6 ? "converged" : "capped   ", r.generations_run, r.mse);
    }
    std::sort(gens.begin(), gens.end());
    std::sort(mses.begin(), mses.end());
    double med_g = (gens[kSeeds / 2 - 1] + gens[kSeeds / 2]) / 2.0;
    double med_m = (mses[kSeeds / 2 - 1] + mses[kSeeds / 2]) / 2.0;
    return std::pair<double, double>{med_g, med_m};
  };

  auto [g_sgd, m_sgd] = run(true);
  auto [g_van, m_van] = run(false);
  fs::create_directories(cfg.out);
  CsvWriter csv(artifact(cfg, "ablate_sgd_on_off.csv"), {"config", "median_generations",
                                                         "final_mse"});
  csv.row({"gp+sgd", format_double(g_sgd), format_double(m_sgd)});
  csv.row({"vanilla", format_double(g_van), format_double(m_van)});
  std::printf("median generations to mse<1e-6: gp+sgd %.1f vs vanilla %.1f\n", g_sgd, g_van);
  return kExitOk;
}

// Table 5 analog: per-action neural guidance vs simultaneous all-tree search.
int ablate_ng_on_off(const RunConfig& cfg) {
  std::string teacher_path = artifact(cfg, "teacher.json");
  require_artifact(teacher_path, "train-teacher");
  MlpPolicy teacher = load_policy(teacher_path);
  auto env = make_env(cfg.env);
  auto fsrc = make_feature_source(cfg.env, cfg.extractor);

  EvalReport ter = evaluate_policy(*env, *fsrc, teacher_actor(teacher, true), 20, cfg.seed + 50000);
  double target = 0.9 * ter.mean;
  std::printf("teacher reward %.3f, target %.3f\n", ter.mean, target);

  Forest blank;  // random-initialized populations; the search does the work
  blank.action_mode = env->spec().action_mode;
  {
    Rng r(cfg.seed);
    TreeGenConfig tg = cfg.gp.treegen;
    tg.num_features = fsrc->dim(*env);
    for (int i = 0; i < env->spec().action_dim; ++i) blank.trees.push_back(random_tree(tg, r));
  }

  const int kSeeds = 5;
  auto run = [&](FinetuneMode mode) {
    std::vector<int> gens;
    for (int s = 0; s < kSeeds; ++s) {
      FinetuneOptions opt = cfg.finetune;
      opt.mode = mode;
      opt.warm_start = false;
      opt.reward_target = target;
      FinetuneResult r = neural_guided_finetune(teacher, blank, *env, *fsrc, cfg.gp, cfg.ppo, opt,
                                                cfg.seed * 100 + s);
      bool reached = r.forest_reward >= target;
      gens.push_back(reached ? r.generations_run
                             : cfg.finetune.iterations * env->spec().action_dim + 1);
      std::printf("  %s seed %d: %s after %d generations (reward %.3f)\n",
                  mode == FinetuneMode::per_action ? "with-ng" : "no-ng  ", s,
                  reached ? "reached" : "capped ", r.generations_run, r.forest_reward);
    }
    std::sort(gens.begin(), gens.end());
    return double(gens[kSeeds / 2]);
  };

  double g_ng = run(FinetuneMode::per_action);
  double g_all = run(FinetuneMode::simultaneous);
  CsvWriter csv(artifact(cfg, "ablate_ng_on_off.csv"),
                {"config", "median_generations", "teacher_reward", "target_reward"});
  csv.row({"with-ng", format_double(g_ng), format_double(ter.mean), format_double(target)});
  csv.row({"without-ng", format_double(g_all), format_double(ter.mean), format_double(target)});
  std::printf("median generations to 90%% teacher reward: with-ng %.1f vs without-ng %.1f\n",
              g_ng, g_all);
  return kExitOk;
}

// Table 4 analog: drop the crucial object (ball) with rising probability,
// and a passive decoration at probability one.
int ablate_drop_robustness(const RunConfig& cfg) {
  std::string forest_path = artifact(cfg, "forest_finetuned.json");
  require_artifact(forest_path, "finetune");
  Forest forest = load_forest(forest_path);
  auto env = make_env(cfg.env);

  CsvWriter csv(artifact(cfg, "ablate_drop_robustness.csv"),
                {"dropped", "drop_prob", "mean_reward"});
  // ball = quantized class of the base-skin ball intensity (brightest level)
  const int ball_class = static_cast<int>(cfg.extractor.intensity_levels.size()) - 1;
  for (double p : {0.0, 0.3, 0.5, 0.9}) {
    ExtractorConfig e = cfg.extractor;
    e.drop_probs[ball_class] = p;
    ObjectFeatures fsrc(e);
    EvalReport r = evaluate_policy(*env, fsrc, forest_actor(forest, true), 20, cfg.seed + 900);
    csv.row({"ball", format_double(p), format_double(r.mean)});
    std::printf("  ball drop prob %.1f -> reward %.3f\n", p, r.mean);
  }
  // passive decoration exists on the skin2 variant; class 0 (dimmest level)
  auto env2 = make_env("objectpong-skin2");
  for (double p : {0.0, 1.0}) {
    ExtractorConfig e = cfg.extractor;
    e.drop_probs[0] = p;
    ObjectFeatures fsrc(e);
    EvalReport r = evaluate_policy(*env2, fsrc, forest_actor(forest, true), 20, cfg.seed + 900);
    csv.row({"decoration", format_double(p), format_double(r.mean)});
    std::printf("  decoration drop prob %.1f -> reward %.3f\n", p, r.mean);
  }
  return kExitOk;
}

// Table 3 analog: under-fitted object detector presets.
int ablate_od_underfit(const RunConfig& cfg) {
  std::string forest_path = artifact(cfg, "forest_finetuned.json");
  require_artifact(forest_path, "finetune");
  Forest forest = load_forest(forest_path);
  auto env = make_env(cfg.env);
  CsvWriter csv(artifact(cfg, "ablate_od_underfit.csv"),
                {"trained_percent", "sigma", "miss_prob", "mean_reward"});
  for (int pct : {30, 50, 80, 100}) {
    OdNoisePreset preset = od_noise_preset(pct);
    ExtractorConfig e = cfg.extractor;
    e.noise_sigma = preset.sigma;
    e.miss_prob = preset.miss_prob;
    ObjectFeatures fsrc(e);
    EvalReport r = evaluate_policy(*env, fsrc, forest_actor(forest, true), 20, cfg.seed + 901);
    csv.row({std::to_string(pct), format_double(preset.sigma), format_double(preset.miss_prob),
             format_double(r.mean)});
    std::printf("  OD %d%% trained -> reward %.3f\n", pct, r.mean);
  }
  return kExitOk;
}

// Table 9 analog: unchanged forest on the shifted skin.
int ablate_transfer_skin(const RunConfig& cfg) {
  std::string forest_path = artifact(cfg, "forest_finetuned.json");
  require_artifact(forest_path, "finetune");
  Forest forest = load_forest(forest_path);

  CsvWriter csv(artifact(cfg, "ablate_transfer_skin.csv"), {"env", "mean_reward", "retention"});
  double base_reward = 0.0;
  for (const std::string& id : {std::string("objectpong"), std::string("objectpong-skin2")}) {
    auto env = make_env(id);
    ObjectFeatures fsrc(cfg.extractor);
    EvalReport r = evaluate_policy(*env, fsrc, forest_actor(forest, true), 20, cfg.seed + 902);
    if (id == "objectpong") base_reward = r.mean;
    double retention = base_reward != 0.0 ? r.mean / base_reward : 0.0;
    csv.row({id, format_double(r.mean), format_double(retention)});
    std::printf("  %s: reward %.3f (retention %.1f%%)\n", id.c_str(), r.mean, 100.0 * retention);
  }
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const std::string& preset) {
  write_manifest(cfg, "ablate-" + preset);
  if (preset == "sgd-on-off") return ablate_sgd_on_off(cfg);
  if (preset == "ng-on-off") return ablate_ng_on_off(cfg);
  if (preset == "drop-robustness") return ablate_drop_robustness(cfg);
  if (preset == "od-underfit") return ablate_od_underfit(cfg);
  if (preset == "transfer-skin") return ablate_transfer_skin(cfg);
  throw ConfigError("unknown preset '" + preset +
                    "'; presets: ng-on-off, sgd-on-off, drop-robustness, od-underfit, "
                    "transfer-skin");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sympol: symbolic policy distillation for episodic control tasks"};
  app.footer(kConfigKeys);
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::optional<double> threshold_flag;
  std::optional<long> steps_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags win over file values)");
    sub->add_option("--env", cfg.env, "environment id (see `sympol eval --help`)");
    sub->add_option("--seed", cfg.seed, "master seed (config key: seed)");
    sub->add_option("--out", cfg.out, "output directory (config key: out)");
    sub->add_option("--workers", cfg.workers, "parallel fitness workers (config key: workers)");
  };

  auto* t = app.add_subcommand("train-teacher",
                               "stage I: PPO teacher -> teacher.json, stage1_curve.csv\n"
                               "reads: env, seed, out, workers, total_steps, teacher_threshold, ppo.*");
  add_common(t);
  t->add_option("--steps", steps_flag, "override ppo total steps (config key: total_steps)");
  t->add_option("--threshold", threshold_flag,
                "teacher eval bar (config key: teacher_threshold)");

  auto* d = app.add_subcommand("distill",
                               "stage II: symbolic regression on teacher outputs -> forest.json,\n"
                               "distill_dataset.csv, stage2_gen.csv; reads: env, seed, out,\n"
                               "workers, distill.samples, gp.*, extractor.*");
  add_common(d);
  int samples_flag = -1;
  d->add_option("--samples", samples_flag, "dataset rows (config key: distill.samples)");
  int generations_flag = -1;
  d->add_option("--generations", generations_flag,
                "GP generations per action (config key: gp.generations)");

  auto* f = app.add_subcommand("finetune",
                               "stage III: neural-guided fine-tuning -> forest_finetuned.json,\n"
                               "stage3_gen.csv; reads: env, seed, out, workers, gp.*, ppo.*,\n"
                               "extractor.*, finetune.*");
  add_common(f);
  int iterations_flag = -1;
  f->add_option("--iterations", iterations_flag,
                "outer fine-tuning loops (config key: finetune.iterations)");
  std::string mode_flag;
  f->add_option("--mode", mode_flag,
                "per-action | simultaneous (config key: finetune.mode)");

  auto* e = app.add_subcommand("eval",
                               "evaluate a policy -> eval.csv; reads: env, seed, out, workers,\n"
                               "extractor.*; env ids: cartpole-cont, mountaincar-cont, pendulum,\n"
                               "objectpong, objectpong-skin2");
  add_common(e);
  EvalArgs eval_args;
  e->add_option("--policy", eval_args.policy_path,
                "teacher.json or forest json (default: newest artifact in --out)");
  e->add_option("--episodes", eval_args.episodes, "evaluation episodes");
  e->add_flag("--stochastic", eval_args.stochastic, "sample actions instead of argmax/mean");
  e->add_option("--dump-trajectories", eval_args.trajectories,
                "write one episode as CSV t,state...,action...,reward,done");

  auto* a = app.add_subcommand("ablate",
                               "run an ablation preset -> ablate_<preset>.csv; presets:\n"
                               "ng-on-off, sgd-on-off, drop-robustness, od-underfit,\n"
                               "transfer-skin; reads: env, seed, out, workers, gp.*, ppo.*,\n"
                               "extractor.*, finetune.*");
  add_common(a);
  std::string preset;
  a->add_option("preset", preset, "preset name")->required();

  auto* x = app.add_subcommand("export",
                               "DOT + infix export of a forest -> forest_tree{i}.dot,\n"
                               "policy_infix.txt; reads: out (or --forest)");
  add_common(x);
  std::string forest_arg;
  x->add_option("--forest", forest_arg, "forest json (default: fine-tuned forest in --out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      std::ifstream cf(config_path);
      if (!cf) throw ConfigError("cannot open config file '" + config_path + "'");
      json j;
      try {
        j = json::parse(cf);
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("config parse error: ") + ex.what());
      }
      RunConfig file_cfg;
      apply_json(j, &file_cfg);
      // flags already parsed into cfg win over file values
      RunConfig merged = file_cfg;
      for (CLI::App* sub : {t, d, f, e, a, x}) {
        if (!sub->parsed()) continue;
        if (sub->count("--env")) merged.env = cfg.env;
        if (sub->count("--seed")) merged.seed = cfg.seed;
        if (sub->count("--out")) merged.out = cfg.out;
        if (sub->count("--workers")) merged.workers = cfg.workers;
      }
      cfg = merged;
    }
    if (steps_flag) cfg.total_steps = *steps_flag;
    if (threshold_flag) cfg.teacher_threshold = *threshold_flag;
    if (samples_flag > 0) cfg.distill_samples = samples_flag;
    if (generations_flag > 0) cfg.gp.generations = generations_flag;
    if (iterations_flag > 0) cfg.finetune.iterations = iterations_flag;
    if (!mode_flag.empty()) {
      if (mode_flag == "per-action") cfg.finetune.mode = FinetuneMode::per_action;
      else if (mode_flag == "simultaneous") cfg.finetune.mode = FinetuneMode::simultaneous;
      else throw ConfigError("--mode must be per-action or simultaneous");
    }
    cfg = finalize(cfg);

    if (t->parsed()) return cmd_train_teacher(cfg);
    if (d->parsed()) return cmd_distill(cfg);
    if (f->parsed()) return cmd_finetune(cfg);
    if (e->parsed()) return cmd_eval(cfg, eval_args);
    if (a->parsed()) return cmd_ablate(cfg, preset);
    if (x->parsed()) return cmd_export(cfg, forest_arg);
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return kExitConfig;
  } catch (const MissingArtifact& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kExitMissingArtifact;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kExitConfig;
  }
  return kExitOk;
}
