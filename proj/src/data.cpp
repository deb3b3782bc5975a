#include "quantloss/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "quantloss/errors.hpp"

namespace quantloss {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

std::string to_string(TaskKind t) {
  return t == TaskKind::Regression ? "regression" : "classification";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "regression") return TaskKind::Regression;
  if (name == "classification") return TaskKind::Classification;
  throw ParameterError("unknown task kind '" + name + "'");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.feature_names = feature_names;
  out.target_name = target_name;
  out.task = task;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(r);
  }
  return out;
}

void Dataset::validate() const {
  if (features.rows() != targets.rows()) throw DataError("feature and target row counts differ");
  if (!features.allFinite() || !targets.allFinite()) {
    throw DataError("dataset contains non-finite values");
  }
  if (task == TaskKind::Classification) {
    for (Eigen::Index i = 0; i < targets.size(); ++i) {
      const double v = targets.data()[i];
      if (v != 0.0 && v != 1.0) throw DataError("classification targets must be 0 or 1");
    }
  }
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  if (schema.header) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) break;
    }
    header = split(trim(line), schema.delimiter);
  }

  std::vector<std::vector<double>> rows;
  std::size_t ncols = header.size();
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++data_row;
    const auto cells = split(trim(line), schema.delimiter);
    if (ncols == 0) ncols = cells.size();
    if (cells.size() != ncols) {
      throw DataError(path + ": row " + std::to_string(data_row) + " has " +
                      std::to_string(cells.size()) + " fields, expected " + std::to_string(ncols));
    }
    std::vector<double> values(ncols);
    for (std::size_t c = 0; c < ncols; ++c) {
      if (!parse_double(cells[c], values[c])) {
        const std::string col = header.empty() ? std::to_string(c) : header[c];
        throw DataError(path + ": row " + std::to_string(data_row) + ", column '" + col +
                        "': cannot parse '" + cells[c] + "' as a number");
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError(path + ": dataset is empty");
  if (ncols < 2) throw DataError(path + ": need at least one feature and a target column");

  std::size_t target = ncols - 1;
  if (!schema.target_column.empty()) {
    if (!header.empty()) {
      auto it = std::find(header.begin(), header.end(), schema.target_column);
      if (it == header.end()) {
        throw DataError(path + ": target column '" + schema.target_column + "' not in header");
      }
      target = static_cast<std::size_t>(it - header.begin());
    } else {
      double idx = 0;
      if (!parse_double(schema.target_column, idx) || idx < 0 || idx >= static_cast<double>(ncols)) {
        throw DataError(path + ": bad target column index '" + schema.target_column + "'");
      }
      target = static_cast<std::size_t>(idx);
    }
  }

  Dataset ds;
  ds.task = schema.task;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncols - 1));
  ds.targets.resize(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t c = 0; c < ncols; ++c) {
    const std::string name = header.empty() ? "x" + std::to_string(c) : header[c];
    if (c == target) {
      ds.target_name = name;
    } else {
      ds.feature_names.push_back(name);
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Index fc = 0;
    for (std::size_t c = 0; c < ncols; ++c) {
      if (c == target) {
        ds.targets(static_cast<Eigen::Index>(r), 0) = rows[r][c];
      } else {
        ds.features(static_cast<Eigen::Index>(r), fc++) = rows[r][c];
      }
    }
  }
  if (ds.task == TaskKind::Classification) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double v = rows[r][target];
      if (v != 0.0 && v != 1.0) {
        throw DataError(path + ": row " + std::to_string(r + 1) + ", column '" + ds.target_name +
                        "': classification target must be 0 or 1");
      }
    }
  }
  return ds;
}

Eigen::MatrixXd StandardizeStats::apply(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
  if (features.cols() != mean.size()) {
    throw ParameterError("standardizer fitted on " + std::to_string(mean.size()) +
                         " features, got " + std::to_string(features.cols()));
  }
  Eigen::MatrixXd out = features.rowwise() - mean;
  out.array().rowwise() /= stddev.array();
  return out;
}

StandardizeStats fit_standardizer(const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (features.rows() == 0) throw ParameterError("cannot standardize an empty dataset");
  StandardizeStats s;
  const double n = static_cast<double>(features.rows());
  s.mean = features.colwise().mean();
  s.stddev.resize(features.cols());
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    const double var = (features.col(c).array() - s.mean(c)).square().sum() / n;
    if (var < kVarianceFloor) {
      s.warnings.push_back("feature " + std::to_string(c) +
                           " has (near) zero variance; variance floored at 1e-12");
    }
    s.stddev(c) = std::sqrt(std::max(var, kVarianceFloor));
  }
  return s;
}

Standardized standardize(const Dataset& train) {
  Standardized out;
  out.stats = fit_standardizer(train.features);
  out.data = train;
  out.data.features = out.stats.apply(train.features);
  return out;
}

Dataset apply_standardizer(const StandardizeStats& stats, const Dataset& other) {
  Dataset out = other;
  out.features = stats.apply(other.features);
  return out;
}

FoldPlan stratified_kfold(const Dataset& ds, int k, double val_fraction, std::uint64_t seed) {
  if (k < 2) throw ParameterError("k-fold needs k >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ParameterError("validation fraction must lie in [0,1)");
  }
  const std::size_t n = ds.size();
  if (n == 0) throw ParameterError("cannot split an empty dataset");

  std::mt19937_64 rng(seed);
  // Group rows into strata: one per class, or a single stratum for regression.
  std::map<long, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const long key = ds.task == TaskKind::Classification
                         ? static_cast<long>(ds.targets(static_cast<Eigen::Index>(i), 0))
                         : 0L;
    strata[key].push_back(i);
  }

  FoldPlan plan;
  plan.seed = seed;
  std::vector<std::vector<std::size_t>> fold_members(static_cast<std::size_t>(k));
  std::size_t deal = 0;
  for (auto& [label, rows] : strata) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(rows.size())));
    const std::size_t n_pool = rows.size() - n_val;
    if (ds.task == TaskKind::Classification && n_pool < static_cast<std::size_t>(k)) {
      throw ParameterError("class " + std::to_string(label) + " has only " +
                           std::to_string(n_pool) + " pool members, fewer than k=" +
                           std::to_string(k));
    }
    plan.validation.insert(plan.validation.end(), rows.begin(),
                           rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    for (std::size_t j = n_val; j < rows.size(); ++j) {
      fold_members[deal % static_cast<std::size_t>(k)].push_back(rows[j]);
      plan.pool.push_back(rows[j]);
      ++deal;
    }
  }
  if (plan.pool.size() < static_cast<std::size_t>(k)) {
    throw ParameterError("fewer pool rows than folds");
  }
  std::sort(plan.validation.begin(), plan.validation.end());
  std::sort(plan.pool.begin(), plan.pool.end());
  for (int f = 0; f < k; ++f) {
    Fold fold;
    fold.test = fold_members[static_cast<std::size_t>(f)];
    std::sort(fold.test.begin(), fold.test.end());
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      const auto& m = fold_members[static_cast<std::size_t>(g)];
      fold.train.insert(fold.train.end(), m.begin(), m.end());
    }
    std::sort(fold.train.begin(), fold.train.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

}  // namespace quantloss
