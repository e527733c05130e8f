#include "sympol/io.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sympol {

using nlohmann::json;

std::string forest_to_json(const Forest& forest, const std::string& env_id) {
  validate_forest(forest);
  json j;
  j["env"] = env_id;
  j["action_mode"] = forest.action_mode == ActionMode::discrete ? "discrete" : "continuous";
  j["num_features"] = forest.num_features();
  std::vector<std::string> trees;
  for (const auto& t : forest.trees) trees.push_back(render(t));
  j["trees"] = trees;
  return j.dump(2);
}

Forest forest_from_json(const std::string& text, std::string* env_id) {
  json j = json::parse(text);
  Forest f;
  std::string mode = j.at("action_mode").get<std::string>();
  if (mode != "discrete" && mode != "continuous")
    throw std::runtime_error("forest_from_json: bad action_mode '" + mode + "'");
  f.action_mode = mode == "discrete" ? ActionMode::discrete : ActionMode::continuous;
  int num_features = j.at("num_features").get<int>();
  for (const auto& s : j.at("trees").get<std::vector<std::string>>())
    f.trees.push_back(parse_expr(s, num_features));
  if (env_id) *env_id = j.at("env").get<std::string>();
  validate_forest(f);
  return f;
}

void save_forest(const std::string& path, const Forest& forest, const std::string& env_id) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_forest: cannot open " + path);
  f << forest_to_json(forest, env_id) << "\n";
}

Forest load_forest(const std::string& path, std::string* env_id) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_forest: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return forest_from_json(ss.str(), env_id);
}

std::string format_double(double v) { return format_constant(v); }

void save_dataset_csv(const std::string& path, const DataMatrix& x, const DataMatrix& y) {
  if (x.rows != y.rows) throw std::invalid_argument("save_dataset_csv: row mismatch");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  for (int j = 0; j < x.cols; ++j) f << "f" << j << ",";
  for (int j = 0; j < y.cols; ++j) f << "y" << j << (j + 1 < y.cols ? "," : "");
  f << "\n";
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) f << format_double(x.row(i)[j]) << ",";
    for (int j = 0; j < y.cols; ++j)
      f << format_double(y.row(i)[j]) << (j + 1 < y.cols ? "," : "");
    f << "\n";
  }
}

void load_dataset_csv(const std::string& path, DataMatrix* x, DataMatrix* y) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  std::string header;
  if (!std::getline(f, header)) throw std::runtime_error("load_dataset_csv: empty file");
  int fcols = 0, ycols = 0;
  {
    std::stringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell.rfind('f', 0) == 0) ++fcols;
      else if (cell.rfind('y', 0) == 0) ++ycols;
      else throw std::runtime_error("load_dataset_csv: unexpected column '" + cell + "'");
    }
  }
  x->cols = fcols;
  y->cols = ycols;
  x->data.clear();
  y->data.clear();
  x->rows = y->rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < fcols; ++j) {
      std::getline(ss, cell, ',');
      x->data.push_back(std::stod(cell));
    }
    for (int j = 0; j < ycols; ++j) {
      std::getline(ss, cell, ',');
      y->data.push_back(std::stod(cell));
    }
    ++x->rows;
    ++y->rows;
  }
}

GenerationCsv::GenerationCsv(const std::string& path, bool append)
    : file_(path, append ? std::ios::app : std::ios::trunc) {
  if (!file_) throw std::runtime_error("GenerationCsv: cannot open " + path);
  if (!append || file_.tellp() == 0)
    file_ << "generation,best_fitness,mean_fitness,best_node_count,wall_time_s\n";
}

void GenerationCsv::row(int generation, double best_fitness, double mean_fitness,
                        int best_node_count, double wall_time_s) {
  file_ << generation << "," << format_double(best_fitness) << "," << format_double(mean_fitness)
        << "," << best_node_count << "," << format_double(wall_time_s) << "\n";
  file_.flush();
}

TreeLog::TreeLog(const std::string& path, bool append)
    : file_(path, append ? std::ios::app : std::ios::trunc) {
  if (!file_) throw std::runtime_error("TreeLog: cannot open " + path);
}

void TreeLog::line(const ExprTree& tree) {
  file_ << render(tree) << "\n";
  file_.flush();
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : file_(path) {
  if (!file_) throw std::runtime_error("CsvWriter: cannot open " + path);
  for (size_t i = 0; i < header.size(); ++i) file_ << header[i] << (i + 1 < header.size() ? "," : "");
  file_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) file_ << cells[i] << (i + 1 < cells.size() ? "," : "");
  file_ << "\n";
  file_.flush();
}

void CsvWriter::row_numeric(const std::vector<double>& cells) {
  std::vector<std::string> s;
  for (double v : cells) s.push_back(format_double(v));
  row(s);
}

}  // namespace sympol
