#include "quantloss/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "quantloss/errors.hpp"

namespace quantloss {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ParameterError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ParameterError("unknown config field '" + where + (where.empty() ? "" : ".") +
                           it.key() + "'");
    }
  }
}

template <typename T>
T get_field(const json& obj, const std::string& key, const T& fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParameterError("config field '" + where + key + "' has the wrong type");
  }
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "lalr-adam") return OptimizerKind::LalrAdam;
  if (s == "lbfgs") return OptimizerKind::LBFGS;
  throw ParameterError("config field 'optimizer' must be adam, lalr-adam or lbfgs, got '" + s + "'");
}

LRPolicy policy_from_string(const std::string& s) {
  if (s == "constant") return LRPolicy::Constant;
  if (s == "exp_decay") return LRPolicy::ExpDecay;
  if (s == "lalr") return LRPolicy::Lalr;
  throw ParameterError("config field 'lr_policy' must be constant, exp_decay or lalr, got '" + s + "'");
}

}  // namespace

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::LalrAdam: return "lalr-adam";
    case OptimizerKind::LBFGS: return "lbfgs";
  }
  return "unknown";
}

std::string to_string(LRPolicy p) {
  switch (p) {
    case LRPolicy::Constant: return "constant";
    case LRPolicy::ExpDecay: return "exp_decay";
    case LRPolicy::Lalr: return "lalr";
  }
  return "unknown";
}

double exp_decay_lr(double lr, int epoch) { return lr * 0.9 * std::exp(-0.0001 * epoch); }

void ObjectiveSpec::validate() const {
  if (kind == ObjectiveKind::Regression) {
    regression.validate();
  } else if (!(tau > 0.0 && tau < 1.0)) {
    throw ParameterError("config field 'loss.tau' must lie strictly inside (0,1)");
  }
}

void OptimizerSpec::validate() const {
  if (!(lr > 0.0)) throw ParameterError("config field 'lr' must be positive");
  if (!(lr_min > 0.0 && lr_min <= lr_max)) {
    throw ParameterError("config fields 'lr_min'/'lr_max' need 0 < lr_min <= lr_max");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("config field 'beta1' must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("config field 'beta2' must be in [0,1)");
  if (m_hist < 1) throw ParameterError("config field 'm_hist' must be at least 1");
  if (max_line_search < 1) throw ParameterError("config field 'max_line_search' must be at least 1");
  if (kind == OptimizerKind::LBFGS && lr_policy != LRPolicy::Constant) {
    throw ParameterError("config field 'lr_policy' does not apply to lbfgs");
  }
}

int TrainConfig::effective_batch_size(std::size_t n_rows) const {
  if (optimizer.kind == OptimizerKind::LBFGS) {
    return lbfgs_batch > 0 ? std::min(lbfgs_batch, static_cast<int>(n_rows))
                           : static_cast<int>(n_rows);
  }
  int b = batch_size;
  if (b <= 0) b = objective.task() == TaskKind::Classification ? 64 : 256;
  return std::min(b, static_cast<int>(n_rows));
}

void TrainConfig::validate() const {
  objective.validate();
  optimizer.validate();
  if (epochs < 1) throw ParameterError("config field 'epochs' must be at least 1");
  if (repeats < 1) throw ParameterError("config field 'repeats' must be at least 1");
  if (k_folds < 2) throw ParameterError("config field 'k_folds' must be at least 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ParameterError("config field 'val_fraction' must lie in [0,1)");
  }
  if (batch_size < 0) throw ParameterError("config field 'batch_size' must be nonnegative");
  if (lbfgs_batch < 0) throw ParameterError("config field 'lbfgs_batch' must be nonnegative");
  if (threads < 0) throw ParameterError("config field 'threads' must be nonnegative");
  for (int h : hidden_sizes) {
    if (h <= 0) throw ParameterError("config field 'architecture.hidden_sizes' must be positive");
  }
  if (!dropout.empty() && dropout.size() != hidden_sizes.size()) {
    throw ParameterError("config field 'architecture.dropout' needs one rate per hidden layer");
  }
  for (double d : dropout) {
    if (!(d >= 0.0 && d < 1.0)) throw ParameterError("config field 'architecture.dropout' must be in [0,1)");
  }
  if (!(crossing_weight >= 0.0)) {
    throw ParameterError("config field 'quantiles.crossing_weight' must be nonnegative");
  }
  for (std::size_t i = 0; i < tau_grid.size(); ++i) {
    if (!(tau_grid[i] > 0.0 && tau_grid[i] < 1.0) || (i > 0 && tau_grid[i] <= tau_grid[i - 1])) {
      throw ParameterError("config field 'quantiles.tau_grid' must be strictly increasing in (0,1)");
    }
  }
}

TrainConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "loss", "optimizer", "lr_policy", "lr", "lr_min", "lr_max", "beta1",
                  "beta2", "m_hist", "max_line_search", "architecture", "epochs", "batch_size",
                  "lbfgs_batch", "repeats", "k_folds", "val_fraction", "seed", "threads",
                  "quantiles"},
                 "");
  TrainConfig c;

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"kind", "h", "tau", "delta"}, "loss");
    const auto kind = get_field<std::string>(l, "kind", "logcosh", "loss.");
    if (kind == "sbqc") {
      c.objective.kind = ObjectiveKind::SBQC;
    } else if (kind == "bce") {
      c.objective.kind = ObjectiveKind::BCE;
    } else {
      c.objective.kind = ObjectiveKind::Regression;
      c.objective.regression.kind = loss_kind_from_string(kind);
    }
    c.objective.regression.h = get_field<double>(l, "h", 1.0, "loss.");
    c.objective.regression.tau = get_field<double>(l, "tau", 0.5, "loss.");
    c.objective.regression.delta = get_field<double>(l, "delta", 1.0, "loss.");
    c.objective.tau = c.objective.regression.tau;
  }

  c.optimizer.kind = optimizer_from_string(get_field<std::string>(j, "optimizer", "adam", ""));
  c.optimizer.lr_policy = policy_from_string(get_field<std::string>(
      j, "lr_policy", c.optimizer.kind == OptimizerKind::LalrAdam ? "lalr" : "constant", ""));
  c.optimizer.lr = get_field<double>(j, "lr", c.optimizer.lr, "");
  c.optimizer.lr_min = get_field<double>(j, "lr_min", c.optimizer.lr_min, "");
  c.optimizer.lr_max = get_field<double>(j, "lr_max", c.optimizer.lr_max, "");
  c.optimizer.beta1 = get_field<double>(j, "beta1", c.optimizer.beta1, "");
  c.optimizer.beta2 = get_field<double>(j, "beta2", c.optimizer.beta2, "");
  c.optimizer.m_hist = get_field<int>(j, "m_hist", c.optimizer.m_hist, "");
  c.optimizer.max_line_search = get_field<int>(j, "max_line_search", c.optimizer.max_line_search, "");

  if (j.contains("architecture")) {
    const json& a = j.at("architecture");
    reject_unknown(a, {"hidden_sizes", "dropout", "activation"}, "architecture");
    c.hidden_sizes = get_field<std::vector<int>>(a, "hidden_sizes", c.hidden_sizes, "architecture.");
    c.dropout = get_field<std::vector<double>>(a, "dropout", {}, "architecture.");
    c.activation = activation_from_string(get_field<std::string>(a, "activation", "relu", "architecture."));
  }

  const bool classification = c.objective.task() == TaskKind::Classification;
  c.epochs = get_field<int>(j, "epochs", classification ? 50 : 500, "");
  c.batch_size = get_field<int>(j, "batch_size", 0, "");
  c.lbfgs_batch = get_field<int>(j, "lbfgs_batch", 0, "");
  c.repeats = get_field<int>(j, "repeats", 20, "");
  c.k_folds = get_field<int>(j, "k_folds", 5, "");
  c.val_fraction = get_field<double>(j, "val_fraction", 0.2, "");
  c.seed = get_field<std::uint64_t>(j, "seed", 0, "");
  c.threads = get_field<int>(j, "threads", 0, "");

  c.csv.task = c.objective.task();
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"path", "target", "delimiter", "header", "task"}, "dataset");
    c.dataset_path = get_field<std::string>(d, "path", "", "dataset.");
    c.csv.target_column = get_field<std::string>(d, "target", "", "dataset.");
    const auto delim = get_field<std::string>(d, "delimiter", ",", "dataset.");
    if (delim.size() != 1) throw ParameterError("config field 'dataset.delimiter' must be one character");
    c.csv.delimiter = delim[0];
    c.csv.header = get_field<bool>(d, "header", true, "dataset.");
    if (d.contains("task")) {
      c.csv.task = task_kind_from_string(get_field<std::string>(d, "task", "", "dataset."));
      if (c.csv.task != c.objective.task()) {
        throw ParameterError("config field 'dataset.task' does not match the loss kind");
      }
    }
  }

  if (j.contains("quantiles")) {
    const json& q = j.at("quantiles");
    reject_unknown(q, {"tau_grid", "crossing_weight"}, "quantiles");
    c.tau_grid = get_field<std::vector<double>>(q, "tau_grid", {}, "quantiles.");
    c.crossing_weight = get_field<double>(q, "crossing_weight", 1.0, "quantiles.");
  }

  c.validate();
  return c;
}

json config_to_json(const TrainConfig& c) {
  json loss;
  switch (c.objective.kind) {
    case ObjectiveKind::Regression:
      loss = {{"kind", std::string(to_string(c.objective.regression.kind))},
              {"h", c.objective.regression.h},
              {"tau", c.objective.regression.tau},
              {"delta", c.objective.regression.delta}};
      break;
    case ObjectiveKind::SBQC:
      loss = {{"kind", "sbqc"}, {"tau", c.objective.tau}};
      break;
    case ObjectiveKind::BCE:
      loss = {{"kind", "bce"}};
      break;
  }
  return {{"dataset",
           {{"path", c.dataset_path},
            {"target", c.csv.target_column},
            {"delimiter", std::string(1, c.csv.delimiter)},
            {"header", c.csv.header},
            {"task", to_string(c.csv.task)}}},
          {"loss", loss},
          {"optimizer", to_string(c.optimizer.kind)},
          {"lr_policy", to_string(c.optimizer.effective_policy())},
          {"lr", c.optimizer.lr},
          {"lr_min", c.optimizer.lr_min},
          {"lr_max", c.optimizer.lr_max},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"m_hist", c.optimizer.m_hist},
          {"max_line_search", c.optimizer.max_line_search},
          {"architecture",
           {{"hidden_sizes", c.hidden_sizes},
            {"dropout", c.dropout},
            {"activation", std::string(to_string(c.activation))}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lbfgs_batch", c.lbfgs_batch},
          {"repeats", c.repeats},
          {"k_folds", c.k_folds},
          {"val_fraction", c.val_fraction},
          {"seed", c.seed},
          {"threads", c.threads},
          {"quantiles", {{"tau_grid", c.tau_grid}, {"crossing_weight", c.crossing_weight}}}};
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("config file not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParameterError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::vector<double> parse_tau_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParameterError("tau grid entry '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ParameterError("tau grid is empty");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0 && out[i] < 1.0) || (i > 0 && out[i] <= out[i - 1])) {
      throw ParameterError("tau grid must be strictly increasing inside (0,1)");
    }
  }
  return out;
}

}  // namespace quantloss
