#ifndef SYMPOL_IO_HPP
#define SYMPOL_IO_HPP

#include <fstream>
#include <string>
#include <vector>

#include "sympol/expr.hpp"
#include "sympol/gp.hpp"

namespace sympol {

// Forest file: { "env", "action_mode", "num_features", "trees": [s-expr, ...] }
std::string forest_to_json(const Forest& forest, const std::string& env_id);
Forest forest_from_json(const std::string& text, std::string* env_id = nullptr);
void save_forest(const std::string& path, const Forest& forest, const std::string& env_id);
Forest load_forest(const std::string& path, std::string* env_id = nullptr);

// Distillation dataset CSV: header f0..f{F-1},y0..y{N_A-1}.
void save_dataset_csv(const std::string& path, const DataMatrix& x, const DataMatrix& y);
void load_dataset_csv(const std::string& path, DataMatrix* x, DataMatrix* y);

// Appends `generation,best_fitness,mean_fitness,best_node_count,wall_time_s`.
class GenerationCsv {
 public:
  GenerationCsv() = default;
  explicit GenerationCsv(const std::string& path, bool append = false);
  void row(int generation, double best_fitness, double mean_fitness, int best_node_count,
           double wall_time_s);
  bool open() const { return file_.is_open(); }

 private:
  std::ofstream file_;
};

// One s-expression line per generation.
class TreeLog {
 public:
  TreeLog() = default;
  explicit TreeLog(const std::string& path, bool append = false);
  void line(const ExprTree& tree);

 private:
  std::ofstream file_;
};

// Generic CSV writer for small metric tables.
class CsvWriter {
 public:
  CsvWriter() = default;
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row_numeric(const std::vector<double>& cells);
  bool open() const { return file_.is_open(); }

 private:
  std::ofstream file_;
};

std::string format_double(double v);  // shortest round-trip friendly (17 sig digits)

}  // namespace sympol

#endif
