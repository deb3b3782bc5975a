#include "quantloss/network.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "quantloss/errors.hpp"

namespace quantloss {

namespace {

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Identity: return z;
  }
  return z;
}

// Elementwise derivative of the activation evaluated at z.
Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::ReLU: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::Identity: return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  for (auto a : {Activation::ReLU, Activation::Tanh, Activation::Identity}) {
    if (to_string(a) == name) return a;
  }
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

double activation_at_zero(Activation a) {
  switch (a) {
    case Activation::ReLU:
    case Activation::Tanh:
    case Activation::Identity:
      return 0.0;
  }
  return 0.0;
}

void LayerSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) {
    throw ParameterError("input_dim and output_dim must be positive");
  }
  for (int h : hidden_sizes) {
    if (h <= 0) throw ParameterError("hidden layer widths must be positive");
  }
  if (!dropout.empty() && dropout.size() != hidden_sizes.size()) {
    throw ParameterError("dropout needs one rate per hidden layer");
  }
  for (double d : dropout) {
    if (!(d >= 0.0 && d < 1.0)) throw ParameterError("dropout rates must lie in [0,1)");
  }
}

int LayerSpec::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_sizes[layer - 1];
}

int LayerSpec::fan_out(std::size_t layer) const {
  return layer == hidden_sizes.size() ? output_dim : hidden_sizes[layer];
}

double LayerSpec::dropout_rate(std::size_t hidden_layer) const {
  return dropout.empty() ? 0.0 : dropout[hidden_layer];
}

std::size_t MLPModel::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

MLPModel init_model(const LayerSpec& spec, std::uint64_t seed) {
  spec.validate();
  MLPModel model;
  model.spec = spec;
  model.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.fan_in(l);
    const int out = spec.fan_out(l);
    const double bound = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd w(in, out);
    // Row-major fill so the draw order matches the flat parameter layout.
    for (int r = 0; r < in; ++r) {
      for (int c = 0; c < out; ++c) w(r, c) = dist(rng);
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::RowVectorXd::Zero(out));
  }
  return model;
}

ForwardResult forward(const MLPModel& model, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                      bool train_mode, std::uint64_t seed) {
  const LayerSpec& spec = model.spec;
  if (batch.cols() != spec.input_dim) {
    throw ParameterError("batch has " + std::to_string(batch.cols()) +
                         " columns, model expects " + std::to_string(spec.input_dim));
  }
  if (!batch.allFinite()) throw DomainError("forward() input contains non-finite values");

  ForwardResult res;
  ForwardTrace& tr = res.trace;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  tr.activations.emplace_back(batch);
  const std::size_t n_layers = spec.num_layers();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = tr.activations.back() * model.weights[l];
    z.rowwise() += model.biases[l];
    const bool is_output = l + 1 == n_layers;
    Eigen::MatrixXd a = apply_activation(is_output ? spec.output_activation : spec.activation, z);
    if (!is_output) {
      const double rate = spec.dropout_rate(l);
      if (train_mode && rate > 0.0) {
        const double keep = 1.0 - rate;
        Eigen::MatrixXd mask(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          for (Eigen::Index c = 0; c < mask.cols(); ++c) {
            mask(r, c) = unif(rng) < keep ? 1.0 / keep : 0.0;
          }
        }
        a = a.cwiseProduct(mask);
        tr.dropout_masks.push_back(std::move(mask));
      } else {
        tr.dropout_masks.emplace_back();
      }
    }
    tr.pre_activations.push_back(std::move(z));
    tr.activations.push_back(std::move(a));
  }
  const Eigen::MatrixXd& penultimate = tr.activations[n_layers - 1];
  tr.k_z = penultimate.size() == 0 ? 0.0 : penultimate.cwiseAbs().maxCoeff();
  res.outputs = tr.activations.back();
  return res;
}

Gradients backward(const MLPModel& model, const ForwardTrace& trace,
                   const Eigen::Ref<const Eigen::MatrixXd>& output_grad) {
  const LayerSpec& spec = model.spec;
  const std::size_t n_layers = spec.num_layers();
  if (trace.pre_activations.size() != n_layers || trace.activations.size() != n_layers + 1) {
    throw ParameterError("trace does not match model depth");
  }
  const Eigen::MatrixXd& out = trace.activations.back();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols()) {
    throw ParameterError("output_grad shape does not match forward outputs");
  }

  Gradients g;
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);

  // delta holds dE/dz for the current layer.
  Eigen::MatrixXd delta = output_grad.cwiseProduct(
      activation_derivative(spec.output_activation, trace.pre_activations.back()));
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& input = trace.activations[l];
    if (input.cols() != model.weights[l].rows()) {
      throw ParameterError("trace does not match model layer shapes");
    }
    g.weights[l] = input.transpose() * delta;
    g.biases[l] = delta.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd upstream = delta * model.weights[l].transpose();
    const Eigen::MatrixXd& mask = trace.dropout_masks[l - 1];
    if (mask.size() != 0) upstream = upstream.cwiseProduct(mask);
    delta = upstream.cwiseProduct(activation_derivative(spec.activation, trace.pre_activations[l - 1]));
  }
  return g;
}

std::vector<double> flatten_params(const MLPModel& model) {
  std::vector<double> flat;
  flat.reserve(model.num_params());
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& w = model.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    for (Eigen::Index c = 0; c < model.biases[l].size(); ++c) flat.push_back(model.biases[l](c));
  }
  return flat;
}

void unflatten_params(MLPModel& model, std::span<const double> flat) {
  if (flat.size() != model.num_params()) {
    throw ParameterError("flat parameter length " + std::to_string(flat.size()) +
                         " does not match model size " + std::to_string(model.num_params()));
  }
  std::size_t k = 0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    auto& w = model.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
    }
    for (Eigen::Index c = 0; c < model.biases[l].size(); ++c) model.biases[l](c) = flat[k++];
  }
}

std::vector<double> flatten_gradients(const Gradients& grads) {
  std::vector<double> flat;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    const auto& w = grads.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    for (Eigen::Index c = 0; c < grads.biases[l].size(); ++c) flat.push_back(grads.biases[l](c));
  }
  return flat;
}

nlohmann::json layer_spec_to_json(const LayerSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"output_dim", spec.output_dim},
          {"hidden_sizes", spec.hidden_sizes},
          {"dropout", spec.dropout},
          {"activation", std::string(to_string(spec.activation))},
          {"output_activation", std::string(to_string(spec.output_activation))}};
}

LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.input_dim = j.value("input_dim", 1);
  s.output_dim = j.value("output_dim", 1);
  s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{});
  s.dropout = j.value("dropout", std::vector<double>{});
  s.activation = activation_from_string(j.value("activation", std::string("relu")));
  s.output_activation =
      activation_from_string(j.value("output_activation", std::string("identity")));
  s.validate();
  return s;
}

nlohmann::json model_to_json(const MLPModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& w = model.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    std::vector<double> bias(model.biases[l].data(),
                             model.biases[l].data() + model.biases[l].size());
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weights", flat}, {"bias", bias}});
  }
  return {{"spec", layer_spec_to_json(model.spec)}, {"seed", model.seed}, {"layers", layers}};
}

MLPModel model_from_json(const nlohmann::json& j) {
  MLPModel model;
  model.spec = layer_spec_from_json(j.at("spec"));
  model.seed = j.value("seed", std::uint64_t{0});
  const auto& layers = j.at("layers");
  if (layers.size() != model.spec.num_layers()) {
    throw DataError("checkpoint layer count does not match its spec");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto rows = L.at("rows").get<Eigen::Index>();
    const auto cols = L.at("cols").get<Eigen::Index>();
    if (rows != model.spec.fan_in(l) || cols != model.spec.fan_out(l)) {
      throw DataError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
    }
    const auto flat = L.at("weights").get<std::vector<double>>();
    const auto bias = L.at("bias").get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(rows * cols) ||
        bias.size() != static_cast<std::size_t>(cols)) {
      throw DataError("checkpoint layer " + std::to_string(l) + " has truncated arrays");
    }
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::Map<const Eigen::RowVectorXd>(bias.data(), cols));
  }
  return model;
}

void save_checkpoint(const MLPModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << model_to_json(model).dump();
}

MLPModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path);
  return model_from_json(nlohmann::json::parse(in));
}

}  // namespace quantloss
