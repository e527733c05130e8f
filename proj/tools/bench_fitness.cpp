// Benchmark of population fitness evaluation: the serial reference loop vs
// the OpenMP-parallel kernel, on the regression workload and on episodic
// rollouts. Verifies that both paths produce identical fitness values.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "sympol/envs.hpp"
#include "sympol/gp.hpp"
#include "sympol/pipeline.hpp"

using namespace sympol;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void clear_fitness(std::vector<Candidate>& pop) {
  for (auto& c : pop) c.fitness.reset();
}

bool same_fitness(const std::vector<Candidate>& a, const std::vector<Candidate>& b) {
  for (size_t i = 0; i < a.size(); ++i)
    if (*a[i].fitness != *b[i].fitness) return false;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  const int population = argc > 1 ? std::atoi(argv[1]) : 200;
  const int rows = argc > 2 ? std::atoi(argv[2]) : 20000;
  const int workers = argc > 3 ? std::atoi(argv[3]) : omp_get_max_threads();
  const int repeats = 5;

  std::printf("population %d, dataset rows %d, workers %d\n", population, rows, workers);

  // regression fitness workload
  {
    Rng rng(1);
    DataMatrix x;
    x.rows = rows;
    x.cols = 4;
    x.data.resize(static_cast<size_t>(rows) * 4);
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    std::vector<double> y(rows);
    for (int i = 0; i < rows; ++i) {
      auto r = x.row(i);
      y[i] = r[0] / 0.175 + r[1] * r[2];
    }
    FitnessFn fn = make_mse_fitness(x, y);

    GpConfig cfg;
    cfg.population_size = population;
    cfg.treegen.num_features = 4;
    cfg.treegen.max_depth = 8;
    Rng pop_rng(7);
    std::vector<Candidate> pop = init_population(cfg, pop_rng);

    std::vector<Candidate> serial = pop;
    double t0 = now_s();
    for (int r = 0; r < repeats; ++r) {
      clear_fitness(serial);
      evaluate_population_serial(serial, fn, 0);
    }
    double t_serial = (now_s() - t0) / repeats;

    std::vector<Candidate> parallel = pop;
    t0 = now_s();
    for (int r = 0; r < repeats; ++r) {
      clear_fitness(parallel);
      evaluate_population_parallel(parallel, fn, 0, workers);
    }
    double t_parallel = (now_s() - t0) / repeats;

    std::printf("regression fitness: serial %.3fs, parallel %.3fs, speedup %.2fx, identical %s\n",
                t_serial, t_parallel, t_serial / t_parallel,
                same_fitness(serial, parallel) ? "yes" : "NO");
    if (!same_fitness(serial, parallel)) return 1;
  }

  // episodic fitness workload (mixed-policy rollouts on objectpong)
  {
    auto env = make_env("objectpong");
    ExtractorConfig ecfg;
    ObjectFeatures fsrc(ecfg);

    GpConfig cfg;
    cfg.population_size = std::min(population, 50);
    cfg.treegen.num_features = 64;
    Rng pop_rng(11);
    std::vector<Candidate> pop = init_population(cfg, pop_rng);

    FitnessFn fn;
    fn.fitness = [&](const ExprTree& tree, const EvalContext& ctx) {
      Forest f;
      for (int i = 0; i < 3; ++i) f.trees.push_back(tree);
      f.action_mode = ActionMode::discrete;
      return evaluate_policy(*env, fsrc, forest_actor(f, true), 2,
                             1000 + static_cast<uint64_t>(ctx.generation))
          .mean;
    };

    std::vector<Candidate> serial = pop;
    double t0 = now_s();
    clear_fitness(serial);
    evaluate_population_serial(serial, fn, 0);
    double t_serial = now_s() - t0;

    std::vector<Candidate> parallel = pop;
    t0 = now_s();
    clear_fitness(parallel);
    evaluate_population_parallel(parallel, fn, 0, workers);
    double t_parallel = now_s() - t0;

    std::printf("episodic fitness:   serial %.3fs, parallel %.3fs, speedup %.2fx, identical %s\n",
                t_serial, t_parallel, t_serial / t_parallel,
                same_fitness(serial, parallel) ? "yes" : "NO");
    if (!same_fitness(serial, parallel)) return 1;
  }
  return 0;
}
