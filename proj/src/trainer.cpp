#include "quantloss/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "quantloss/classify.hpp"
#include "quantloss/errors.hpp"
#include "quantloss/losses.hpp"
#include "quantloss/metrics.hpp"
#include "quantloss/optim.hpp"

namespace quantloss {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool finite_params(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<std::size_t>& order,
                        std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(order[i]));
  }
  return out;
}

struct FlatEval {
  double value;
  std::vector<double> grad;
};

// Full objective and flat gradient at `params`, dropout off.
FlatEval eval_flat(const ObjectiveSpec& spec, MLPModel& scratch, std::span<const double> params,
                   const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  unflatten_params(scratch, params);
  ForwardResult fr = forward(scratch, x, false, 0);
  BatchObjective obj = evaluate_objective(spec, fr.outputs, y);
  if (!std::isfinite(obj.value)) return {obj.value, std::vector<double>(params.size(), 0.0)};
  return {obj.value, flatten_gradients(backward(scratch, fr.trace, obj.output_grad))};
}

double objective_value(const ObjectiveSpec& spec, const MLPModel& model, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& y) {
  if (x.rows() == 0) return 0.0;
  return evaluate_objective(spec, forward(model, x, false, 0).outputs, y).value;
}

double headline_metric(const ObjectiveSpec& spec, const MLPModel& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto m = score(spec, model, data);
  return spec.task() == TaskKind::Regression ? m.at("rmse") : m.at("accuracy");
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, SeedStream stream) {
  std::uint64_t x = splitmix64(base ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
  x = splitmix64(x ^ a);
  return splitmix64(x + b);
}

std::uint64_t run_seed(std::uint64_t config_seed, int repeat, int fold) {
  return derive_seed(config_seed, static_cast<std::uint64_t>(repeat),
                     static_cast<std::uint64_t>(fold), SeedStream::Run);
}

std::vector<std::size_t> batch_order(std::size_t n_rows, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(epoch), 0, SeedStream::Shuffle));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LayerSpec layer_spec_for(const TrainConfig& config, int input_dim, int output_dim) {
  LayerSpec s;
  s.input_dim = input_dim;
  s.output_dim = output_dim;
  s.hidden_sizes = config.hidden_sizes;
  s.dropout = config.dropout;
  s.activation = config.activation;
  s.output_activation = Activation::Identity;
  s.validate();
  return s;
}

double max_label_norm(const Eigen::Ref<const Eigen::MatrixXd>& targets) {
  if (targets.rows() == 0) return 0.0;
  return targets.rowwise().norm().maxCoeff();
}

BatchObjective evaluate_objective(const ObjectiveSpec& spec,
                                  const Eigen::Ref<const Eigen::MatrixXd>& outputs,
                                  const Eigen::Ref<const Eigen::MatrixXd>& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw ParameterError("objective: outputs and targets have different shapes");
  }
  if (outputs.rows() == 0) throw ParameterError("objective: empty batch");
  const double m = static_cast<double>(outputs.rows());
  BatchObjective res;
  res.output_grad.resize(outputs.rows(), outputs.cols());

  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
      const double z = outputs(i, c);
      const double t = targets(i, c);
      if (!std::isfinite(z)) {
        res.value = std::numeric_limits<double>::quiet_NaN();
        res.output_grad.setZero();
        return res;
      }
      double value = 0.0;
      double grad = 0.0;
      switch (spec.kind) {
        case ObjectiveKind::Regression: {
          const LossEval e = eval_loss(spec.regression, z - t);
          value = e.value;
          grad = e.grad;
          break;
        }
        case ObjectiveKind::SBQC: {
          const LatentLoss l = sbqc_loss(t, z, spec.tau);
          value = l.value;
          grad = l.grad_z;
          break;
        }
        case ObjectiveKind::BCE: {
          const LatentLoss l = bce_loss(t, z);
          value = l.value;
          grad = l.grad_z;
          break;
        }
      }
      res.value += value;
      res.output_grad(i, c) = grad / m;
    }
  }
  res.value /= m;
  return res;
}

double batch_lipschitz_constant(const ObjectiveSpec& spec, int m, double y_norm, double k_z,
                                double g_at_zero) {
  LipschitzContext ctx{m, y_norm, k_z, g_at_zero, spec.tau};
  switch (spec.kind) {
    case ObjectiveKind::SBQC:
      return classification_lipschitz_constant(ctx);
    case ObjectiveKind::BCE:
      ctx.validate();
      return std::max(k_z / m, kLipschitzFloor);
    case ObjectiveKind::Regression:
      break;
  }
  const LossSpec& loss = spec.regression;
  switch (loss.kind) {
    case LossKind::LogCosh: {
      if (loss.h == 1.0) return regression_lipschitz_constant(ctx);
      ctx.validate();
      const double k = std::tanh(std::abs(g_at_zero - y_norm) / loss.h) / loss.h * k_z / m;
      return std::max(k, kLipschitzFloor);
    }
    case LossKind::TiltedLogCosh:
      return std::max(std::max(loss.tau, 1.0 - loss.tau) * regression_lipschitz_constant(ctx),
                      kLipschitzFloor);
    default:
      // No loss-specific constant: generic 1-Lipschitz bound on dE/da.
      ctx.validate();
      return std::max(k_z / m, kLipschitzFloor);
  }
}

Eigen::MatrixXd predict(const ObjectiveSpec& spec, const MLPModel& model,
                        const Eigen::Ref<const Eigen::MatrixXd>& features) {
  Eigen::MatrixXd out = forward(model, features, false, 0).outputs;
  if (spec.kind == ObjectiveKind::Regression) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double z = out.data()[i];
    const double p = spec.kind == ObjectiveKind::SBQC ? predict_prob(z, spec.tau) : logistic_prob(z);
    out.data()[i] = p >= 0.5 ? 1.0 : 0.0;
  }
  return out;
}

std::map<std::string, double> score(const ObjectiveSpec& spec, const MLPModel& model,
                                    const Dataset& data) {
  std::map<std::string, double> out;
  if (data.size() == 0) return out;
  const Eigen::MatrixXd outputs = forward(model, data.features, false, 0).outputs;
  out["loss"] = evaluate_objective(spec, outputs, data.targets).value;
  if (spec.kind == ObjectiveKind::Regression) {
    out["rmse"] = rmse(std::span<const double>(outputs.data(), static_cast<std::size_t>(outputs.size())),
                       std::span<const double>(data.targets.data(),
                                               static_cast<std::size_t>(data.targets.size())));
    return out;
  }
  const Eigen::MatrixXd labels = predict(spec, model, data.features);
  const ConfusionMatrix cm = confusion_matrix(
      std::span<const double>(labels.data(), static_cast<std::size_t>(labels.size())),
      std::span<const double>(data.targets.data(), static_cast<std::size_t>(data.targets.size())));
  const ClassificationMetrics cmx = classification_metrics(cm);
  out["accuracy"] = cmx.accuracy;
  out["f1"] = cmx.f1;
  out["jaccard"] = cmx.jaccard;
  out["kappa"] = cmx.kappa;
  return out;
}

RunRecord train_run(const TrainConfig& config, const Dataset& train_raw, const Dataset& val_raw,
                    const Dataset* test_raw, std::uint64_t seed) {
  config.validate();
  if (train_raw.task != config.objective.task()) {
    throw ParameterError("dataset task does not match the configured loss");
  }
  if (train_raw.size() == 0) throw ParameterError("empty training set");
  const ObjectiveSpec& obj = config.objective;
  if (obj.kind != ObjectiveKind::Regression && train_raw.targets.cols() != 1) {
    throw ParameterError("classification expects a single target column");
  }

  RunRecord rec;
  rec.seed = seed;
  rec.stats = fit_standardizer(train_raw.features);
  const Dataset train = apply_standardizer(rec.stats, train_raw);
  const Dataset val = apply_standardizer(rec.stats, val_raw);

  const LayerSpec spec = layer_spec_for(config, static_cast<int>(train.num_features()),
                                        static_cast<int>(train.targets.cols()));
  MLPModel model = init_model(spec, derive_seed(seed, 0, 0, SeedStream::Init));
  const double y_norm = max_label_norm(train.targets);
  const double g0 = activation_at_zero(spec.output_activation);
  const std::size_t n = train.size();
  const int batch = config.effective_batch_size(n);

  double best_val = std::numeric_limits<double>::infinity();
  auto record_epoch = [&](int epoch) {
    EpochRecord e;
    e.epoch = epoch;
    e.train_loss = objective_value(obj, model, train.features, train.targets);
    e.val_loss = objective_value(obj, model, val.features, val.targets);
    e.val_metric = headline_metric(obj, model, val);
    rec.epochs.push_back(e);
    const double key = val.size() > 0 ? e.val_loss : e.train_loss;
    if (std::isfinite(key) && key < best_val) {
      best_val = key;
      rec.best_epoch = epoch;
      rec.best_model = model;
    }
    return std::isfinite(e.train_loss);
  };
  rec.best_model = model;
  record_epoch(0);

  std::vector<double> params = flatten_params(model);

  if (config.optimizer.kind == OptimizerKind::LBFGS) {
    // Deterministic objective: dropout is never applied under L-BFGS.
    LBFGSState state(static_cast<std::size_t>(config.optimizer.m_hist));
    LBFGSOptions opts;
    opts.max_line_search = config.optimizer.max_line_search;
    MLPModel scratch = model;
    const std::size_t mega = static_cast<std::size_t>(batch);
    const std::size_t n_mega = (n + mega - 1) / mega;
    const std::vector<std::size_t> fixed_order =
        n_mega > 1 ? batch_order(n, seed, 0) : std::vector<std::size_t>{};
    std::size_t current_block = n_mega;
    Eigen::MatrixXd xb = train.features;
    Eigen::MatrixXd yb = train.targets;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      if (n_mega > 1) {
        const std::size_t block = static_cast<std::size_t>(epoch) % n_mega;
        if (block != current_block) {
          const std::size_t b0 = block * mega;
          const std::size_t b1 = std::min(n, b0 + mega);
          xb = rows_of(train.features, fixed_order, b0, b1);
          yb = rows_of(train.targets, fixed_order, b0, b1);
          state.invalidate();
          current_block = block;
        }
      }
      Objective f = [&](std::span<const double> p) {
        FlatEval e = eval_flat(obj, scratch, p, xb, yb);
        return std::make_pair(e.value, std::move(e.grad));
      };
      LBFGSStepResult step;
      try {
        step = lbfgs_step(f, params, state, opts);
      } catch (const DomainError& e) {
        rec.diverged = true;
        rec.message = std::string("diverged: ") + e.what();
        break;
      }
      if (!step.accepted) ++rec.lbfgs_rejected_steps;
      unflatten_params(model, params);
      if (!record_epoch(epoch + 1)) {
        rec.diverged = true;
        rec.message = "diverged: non-finite training loss at epoch " + std::to_string(epoch + 1);
        break;
      }
    }
  } else {
    AdamState adam(params.size());
    adam.beta1 = config.optimizer.beta1;
    adam.beta2 = config.optimizer.beta2;
    const LRPolicy policy = config.optimizer.effective_policy();
    for (int epoch = 0; epoch < config.epochs && !rec.diverged; ++epoch) {
      const std::vector<std::size_t> order = batch_order(n, seed, epoch);
      int b = 0;
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch), ++b) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch));
        const Eigen::MatrixXd xb = rows_of(train.features, order, start, end);
        const Eigen::MatrixXd yb = rows_of(train.targets, order, start, end);
        ForwardResult fr = forward(model, xb, true,
                                   derive_seed(seed, static_cast<std::uint64_t>(epoch),
                                               static_cast<std::uint64_t>(b), SeedStream::Dropout));
        BatchObjective bo = evaluate_objective(obj, fr.outputs, yb);
        if (!std::isfinite(bo.value)) {
          rec.diverged = true;
          rec.message = "diverged: non-finite batch loss at epoch " + std::to_string(epoch + 1);
          break;
        }
        const std::vector<double> grads = flatten_gradients(backward(model, fr.trace, bo.output_grad));

        double lr = config.optimizer.lr;
        if (policy == LRPolicy::ExpDecay) {
          lr = exp_decay_lr(config.optimizer.lr, epoch);
        } else if (policy == LRPolicy::Lalr) {
          LRTraceEntry t;
          t.epoch = epoch;
          t.batch = b;
          t.m = static_cast<int>(end - start);
          t.y_norm = y_norm;
          t.k_z = fr.trace.k_z;
          t.lipschitz = batch_lipschitz_constant(obj, t.m, y_norm, t.k_z, g0);
          t.lr = lalr_lr(t.lipschitz, config.optimizer.lr_min, config.optimizer.lr_max);
          lr = t.lr;
          rec.lr_trace.push_back(t);
        }
        try {
          adam_step(adam, params, grads, lr);
        } catch (const DomainError& e) {
          rec.diverged = true;
          rec.message = std::string("diverged: ") + e.what();
          break;
        }
        unflatten_params(model, params);
      }
      if (rec.diverged) break;
      if (!finite_params(params) || !record_epoch(epoch + 1)) {
        rec.diverged = true;
        rec.message = "diverged: non-finite training loss at epoch " + std::to_string(epoch + 1);
      }
    }
  }

  rec.final_model = model;
  if (!rec.diverged) {
    rec.val_metrics = score(obj, model, val);
    if (test_raw != nullptr) rec.test_metrics = score(obj, model, apply_standardizer(rec.stats, *test_raw));
  }
  return rec;
}

int threads_from_env() {
  const char* v = std::getenv("QUANTLOSS_THREADS");
  if (v == nullptr) return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 0;
  return static_cast<int>(n);
}

RunReport train(const TrainConfig& config, const FoldPlan& plan, const Dataset& dataset) {
  config.validate();
  dataset.validate();
  if (plan.folds.empty()) throw ParameterError("fold plan has no folds");
  if (dataset.task != config.objective.task()) {
    throw ParameterError("dataset task does not match the configured loss");
  }

  struct Job {
    int repeat;
    int fold;
  };
  std::vector<Job> jobs;
  for (int r = 0; r < config.repeats; ++r) {
    for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) jobs.push_back({r, f});
  }
  const Dataset val = dataset.subset(plan.validation);

  RunReport report;
  report.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const Job job = jobs[j];
        const Fold& fold = plan.folds[static_cast<std::size_t>(job.fold)];
        const Dataset tr = dataset.subset(fold.train);
        const Dataset te = dataset.subset(fold.test);
        RunRecord rec = train_run(config, tr, val, &te, run_seed(config.seed, job.repeat, job.fold));
        rec.repeat = job.repeat;
        rec.fold = job.fold;
        report.runs[j] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = jobs.size();
      }
    }
  };

  int workers = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const int cap = threads_from_env(); cap > 0) workers = std::min(workers, cap);
  workers = std::max(1, std::min(workers, static_cast<int>(jobs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  report.val_summary = summarize(report.runs, true);
  report.test_summary = summarize(report.runs, false);
  return report;
}

std::map<std::string, MetricSummary> summarize(const std::vector<RunRecord>& runs, bool validation) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : runs) {
    if (r.diverged) continue;
    for (const auto& [k, v] : validation ? r.val_metrics : r.test_metrics) values[k].push_back(v);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [k, vs] : values) {
    MetricSummary s;
    s.count = static_cast<int>(vs.size());
    s.mean = std::accumulate(vs.begin(), vs.end(), 0.0) / s.count;
    if (s.count >= 2) {
      double ss = 0.0;
      for (double v : vs) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / (s.count - 1));
    }
    out[k] = s;
  }
  return out;
}

std::vector<double> mean_epoch_trace(const RunReport& report, const std::string& metric) {
  if (metric != "train_loss" && metric != "val_loss" && metric != "val_metric") {
    throw ParameterError("unknown epoch metric '" + metric + "'");
  }
  std::vector<double> sum;
  std::vector<int> count;
  for (const auto& r : report.runs) {
    if (r.diverged) continue;
    if (sum.size() < r.epochs.size()) {
      sum.resize(r.epochs.size(), 0.0);
      count.resize(r.epochs.size(), 0);
    }
    for (std::size_t e = 0; e < r.epochs.size(); ++e) {
      const auto& rec = r.epochs[e];
      sum[e] += metric == "train_loss" ? rec.train_loss
                : metric == "val_loss" ? rec.val_loss
                                       : rec.val_metric;
      ++count[e];
    }
  }
  for (std::size_t e = 0; e < sum.size(); ++e) sum[e] /= count[e];
  return sum;
}

std::optional<int> epochs_to_threshold(const std::vector<double>& trace, double threshold) {
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace[i] >= threshold) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> epochs_to_threshold(const RunReport& report, const std::string& metric,
                                       double threshold) {
  return epochs_to_threshold(mean_epoch_trace(report, metric), threshold);
}

nlohmann::json report_to_json(const RunReport& report, const std::string& dataset_name,
                              const TrainConfig& config) {
  using nlohmann::json;
  const std::string loss_name = config.objective.kind == ObjectiveKind::Regression
                                    ? std::string(to_string(config.objective.regression.kind))
                                    : (config.objective.kind == ObjectiveKind::SBQC ? "sbqc" : "bce");
  const std::string opt_name = to_string(config.optimizer.kind);

  json runs = json::array();
  json records = json::array();
  for (const auto& r : report.runs) {
    json epochs = json::array();
    for (const auto& e : r.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss},
                        {"val_metric", e.val_metric}});
    }
    json trace = json::array();
    for (const auto& t : r.lr_trace) {
      trace.push_back({{"epoch", t.epoch}, {"batch", t.batch}, {"m", t.m}, {"y_norm", t.y_norm},
                       {"k_z", t.k_z}, {"lipschitz", t.lipschitz}, {"lr", t.lr}});
    }
    runs.push_back({{"repeat", r.repeat},
                    {"fold", r.fold},
                    {"seed", r.seed},
                    {"diverged", r.diverged},
                    {"message", r.message},
                    {"best_epoch", r.best_epoch},
                    {"lbfgs_rejected_steps", r.lbfgs_rejected_steps},
                    {"epochs", epochs},
                    {"lr_trace", trace},
                    {"val_metrics", r.val_metrics},
                    {"test_metrics", r.test_metrics}});
    for (const auto& [split, metrics] :
         {std::pair{std::string("validation"), &r.val_metrics}, {std::string("test"), &r.test_metrics}}) {
      if (metrics->empty()) continue;
      records.push_back({{"dataset", dataset_name},
                         {"loss", loss_name},
                         {"optimizer", opt_name},
                         {"repeat", r.repeat},
                         {"fold", r.fold},
                         {"split", split},
                         {"metrics", *metrics}});
    }
  }
  auto summary_json = [](const std::map<std::string, MetricSummary>& s) {
    json out = json::object();
    for (const auto& [k, v] : s) {
      out[k] = {{"mean", v.mean}, {"count", v.count}};
      if (v.stddev) out[k]["std"] = *v.stddev;
    }
    return out;
  };
  return {{"dataset", dataset_name},
          {"config", config_to_json(config)},
          {"records", records},
          {"runs", runs},
          {"summary",
           {{"validation", summary_json(report.val_summary)}, {"test", summary_json(report.test_summary)}}}};
}

std::string report_summary_csv(const RunReport& report, const std::string& dataset_name,
                               const TrainConfig& config) {
  const bool cls = config.objective.task() == TaskKind::Classification;
  const std::vector<std::string> metrics =
      cls ? std::vector<std::string>{"kappa", "jaccard", "f1", "accuracy"}
          : std::vector<std::string>{"rmse"};
  const std::string loss_name = config.objective.kind == ObjectiveKind::Regression
                                    ? std::string(to_string(config.objective.regression.kind))
                                    : (config.objective.kind == ObjectiveKind::SBQC ? "sbqc" : "bce");
  std::ostringstream out;
  out.precision(10);
  out << "dataset,loss,optimizer,split";
  for (const auto& m : metrics) out << ',' << m << ',' << m << "_std";
  out << '\n';
  for (const auto& [split, summary] :
       {std::pair{std::string("validation"), &report.val_summary}, {std::string("test"), &report.test_summary}}) {
    out << dataset_name << ',' << loss_name << ',' << to_string(config.optimizer.kind) << ',' << split;
    for (const auto& m : metrics) {
      auto it = summary->find(m);
      if (it == summary->end()) {
        out << ",,";
        continue;
      }
      double v = it->second.mean;
      double sd = it->second.stddev.value_or(std::nan(""));
      if (m == "accuracy") {
        v *= 100.0;
        sd *= 100.0;
      }
      out << ',' << v << ',';
      if (it->second.stddev) out << sd;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace quantloss
