// quantloss command-line entry point.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
// 3 a verification property or gradient check was violated.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "quantloss/classify.hpp"
#include "quantloss/config.hpp"
#include "quantloss/data.hpp"
#include "quantloss/errors.hpp"
#include "quantloss/network.hpp"
#include "quantloss/optim.hpp"
#include "quantloss/trainer.hpp"
#include "quantloss/verify.hpp"

namespace fs = std::filesystem;
using namespace quantloss;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitViolation = 3;

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string tau_grid;
};

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.dataset.empty()) cfg.dataset_path = c.dataset;
  if (!c.tau_grid.empty()) cfg.tau_grid = parse_tau_grid(c.tau_grid);
  cfg.validate();
  return cfg;
}

Dataset load_dataset(const TrainConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ParameterError("no dataset: set dataset.path or pass --dataset");
  CsvSchema schema = cfg.csv;
  schema.task = cfg.objective.task();
  return load_csv(cfg.dataset_path, schema);
}

std::string dataset_name(const TrainConfig& cfg) { return fs::path(cfg.dataset_path).stem().string(); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

nlohmann::json stats_to_json(const StandardizeStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}};
}

StandardizeStats stats_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("stddev").get<std::vector<double>>();
  StandardizeStats s;
  s.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.stddev = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  return s;
}

int print_checks(const std::vector<PropertyCheck>& checks) {
  std::cout << format_checks(checks);
  const auto failed = std::count_if(checks.begin(), checks.end(), [](const auto& c) { return !c.passed; });
  std::cout << (checks.size() - static_cast<std::size_t>(failed)) << "/" << checks.size() << " checks passed\n";
  return failed == 0 ? 0 : kExitViolation;
}

int cmd_train(const Common& c) {
  const TrainConfig cfg = resolve_config(c);
  const Dataset ds = load_dataset(cfg);
  const FoldPlan plan = stratified_kfold(ds, cfg.k_folds, cfg.val_fraction, cfg.seed);
  const RunReport report = train(cfg, plan, ds);
  const std::string name = dataset_name(cfg);

  const fs::path out(c.out);
  fs::create_directories(out / "checkpoints");
  write_file(out / "report.json", report_to_json(report, name, cfg).dump(2) + "\n");
  write_file(out / "summary.csv", report_summary_csv(report, name, cfg));
  for (const auto& r : report.runs) {
    const std::string stem = "r" + std::to_string(r.repeat) + "_f" + std::to_string(r.fold);
    save_checkpoint(r.best_model, (out / "checkpoints" / (stem + ".json")).string());
    write_file(out / "checkpoints" / (stem + ".stats.json"), stats_to_json(r.stats).dump() + "\n");
  }
  int diverged = 0;
  for (const auto& r : report.runs) diverged += r.diverged;
  std::cout << report_summary_csv(report, name, cfg);
  if (diverged > 0) std::cerr << diverged << " run(s) diverged; see report.json\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const TrainConfig cfg = resolve_config(c);
  const Dataset raw = load_dataset(cfg);
  const MLPModel model = load_checkpoint(checkpoint);
  fs::path stats_path(checkpoint);
  stats_path.replace_extension(".stats.json");
  Dataset ds = raw;
  if (fs::exists(stats_path)) {
    std::ifstream f(stats_path);
    ds = apply_standardizer(stats_from_json(nlohmann::json::parse(f)), raw);
  } else {
    std::cerr << "note: no " << stats_path.string() << "; features are used unscaled\n";
  }
  if (static_cast<int>(ds.num_features()) != model.spec.input_dim) {
    throw ParameterError("checkpoint expects " + std::to_string(model.spec.input_dim) + " features, dataset has " +
                         std::to_string(ds.num_features()));
  }
  const nlohmann::json metrics = score(cfg.objective, model, ds);
  std::cout << nlohmann::json{{"dataset", dataset_name(cfg)}, {"checkpoint", checkpoint}, {"metrics", metrics}}.dump(2)
            << "\n";
  return 0;
}

int cmd_lipschitz(const Common& c, std::optional<double> tau, int m, double y_norm, double k_z) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : resolve_config(c);
  if (!tau) tau = cfg.objective.kind == ObjectiveKind::SBQC ? cfg.objective.tau : 0.5;
  if (!(*tau > 0.0 && *tau < 1.0)) throw ParameterError("--tau must lie in (0,1)");
  LipschitzContext ctx{m, y_norm, k_z, 0.0, *tau};
  ctx.validate();
  const double thm4 = sbqc_lipschitz_constant(*tau);
  const double reg = regression_lipschitz_constant(ctx);
  const double cls = classification_lipschitz_constant(ctx);
  const double lr_min = cfg.optimizer.lr_min, lr_max = cfg.optimizer.lr_max;
  std::cout << std::setprecision(8);
  std::cout << "tau                          " << *tau << "\n";
  std::cout << "sbqc constant                " << thm4 << "\n";
  std::cout << "sbqc exact slope supremum    " << sbqc_lipschitz_sup(*tau) << "\n";
  std::cout << "batch m=" << m << " y_norm=" << y_norm << " k_z=" << k_z << "\n";
  std::cout << "log-cosh last-layer constant " << reg << "  lr " << lalr_lr(reg, lr_min, lr_max) << "\n";
  std::cout << "sbqc last-layer constant     " << cls << "  lr " << lalr_lr(cls, lr_min, lr_max) << "\n";
  return 0;
}

int cmd_quantiles(const Common& c, const std::string& feature, int points) {
  TrainConfig cfg = resolve_config(c);
  cfg.objective.kind = ObjectiveKind::SBQC;
  if (cfg.tau_grid.empty()) cfg.tau_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  if (points < 2) throw ParameterError("--points must be at least 2");
  const Dataset raw = load_dataset(cfg);

  int index = -1;
  const auto it = std::find(raw.feature_names.begin(), raw.feature_names.end(), feature);
  if (it != raw.feature_names.end()) {
    index = static_cast<int>(it - raw.feature_names.begin());
  } else {
    try {
      std::size_t used = 0;
      index = std::stoi(feature, &used);
      if (used != feature.size()) index = -1;
    } catch (const std::exception&) {
      index = -1;
    }
  }
  if (index < 0 || index >= static_cast<int>(raw.num_features())) {
    throw ParameterError("unknown feature '" + feature + "'");
  }

  const Standardized st = standardize(raw);
  const MultiQuantileResult res = multi_quantile_train(st.data, cfg.tau_grid, cfg, cfg.crossing_weight);

  Eigen::RowVectorXd background(raw.num_features());
  for (Eigen::Index j = 0; j < background.size(); ++j) {
    std::vector<double> col(raw.features.col(j).data(), raw.features.col(j).data() + raw.features.rows());
    std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(col.size() / 2), col.end());
    background(j) = col[col.size() / 2];
  }
  const double lo = raw.features.col(index).minCoeff();
  const double hi = raw.features.col(index).maxCoeff();
  std::vector<double> sweep(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) sweep[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);

  const QuantileCurve curve = quantile_curve(res.heads, cfg.tau_grid, index, sweep, background, &st.stats);
  const std::string name = raw.feature_names.empty() ? std::to_string(index)
                                                     : raw.feature_names[static_cast<std::size_t>(index)];
  const fs::path out(c.out);
  fs::create_directories(out);
  const std::string csv = quantile_curve_csv(curve);
  write_file(out / "quantile_curve.csv", csv);
  write_file(out / "quantile_curve.json", quantile_curve_json(curve, name).dump(2) + "\n");
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantloss: log-cosh loss family, sBQC classification and LALR / L-BFGS training"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", common.config, "Run config (JSON)");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Seed override");
    sub->add_option("--dataset", common.dataset, "Dataset CSV (overrides the config)");
    sub->add_option("--tau-grid", common.tau_grid, "Comma-separated tau grid, e.g. 0.1,0.5,0.9");
  };

  auto* train_cmd = app.add_subcommand("train", "Run the repeats x folds protocol for a config");
  add_common(train_cmd);
  train_cmd->get_option("--config")->required();

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  add_common(eval_cmd);
  eval_cmd->get_option("--config")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();

  int gc_cases = 200;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  add_common(gc_cmd, false);
  gc_cmd->add_option("--cases", gc_cases, "Random cases per target");

  std::optional<double> tau;
  int lip_m = 64;
  double lip_y = 1.0, lip_k = 1.0;
  auto* lip_cmd = app.add_subcommand("lipschitz", "Print Lipschitz constants and LALR rates");
  add_common(lip_cmd);
  lip_cmd->add_option("--tau", tau, "Quantile marker");
  lip_cmd->add_option("--batch", lip_m, "Batch size m");
  lip_cmd->add_option("--y-norm", lip_y, "Max label norm");
  lip_cmd->add_option("--k-z", lip_k, "Max |activation| entering the last layer");

  std::string feature = "0";
  int points = 25;
  auto* q_cmd = app.add_subcommand("quantiles", "Train a tau grid and export the quantile curve");
  add_common(q_cmd);
  q_cmd->get_option("--config")->required();
  q_cmd->add_option("--feature", feature, "Feature name or zero-based index to sweep");
  q_cmd->add_option("--points", points, "Number of sweep points");

  auto* verify_cmd = app.add_subcommand("verify", "Run the property suite");
  add_common(verify_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  const std::uint64_t seed = common.seed.value_or(20240101ULL);
  try {
    if (*train_cmd) return cmd_train(common);
    if (*eval_cmd) return cmd_eval(common, checkpoint);
    if (*gc_cmd) return print_checks(gradcheck_suite(seed, gc_cases));
    if (*lip_cmd) return cmd_lipschitz(common, tau, lip_m, lip_y, lip_k);
    if (*q_cmd) return cmd_quantiles(common, feature, points);
    if (*verify_cmd) return print_checks(property_suite(seed));
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInvalid;
}
