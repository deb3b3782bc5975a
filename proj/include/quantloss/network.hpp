#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace quantloss {

enum class Activation { ReLU, Tanh, Identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// g(0) for the activation; enters the regression Lipschitz constant.
double activation_at_zero(Activation a);

struct LayerSpec {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden_sizes;
  /// One rate per hidden layer, each in [0,1). Empty means no dropout.
  std::vector<double> dropout;
  Activation activation = Activation::ReLU;
  /// Identity for regression heads and for sBQC latents.
  Activation output_activation = Activation::Identity;

  void validate() const;
  std::size_t num_layers() const { return hidden_sizes.size() + 1; }
  int fan_in(std::size_t layer) const;
  int fan_out(std::size_t layer) const;
  double dropout_rate(std::size_t hidden_layer) const;
};

/// Dense feed-forward network. Layer l maps a (batch x fan_in) activation
/// matrix to (batch x fan_out) via a * W[l] + b[l]; rows are examples.
struct MLPModel {
  LayerSpec spec;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> weights;     // fan_in x fan_out
  std::vector<Eigen::RowVectorXd> biases;   // 1 x fan_out

  std::size_t num_params() const;
};

/// Per-forward record used by backward() and by the Lipschitz rules.
struct ForwardTrace {
  /// pre_activations[l] is z of layer l; activations[0] is the input batch and
  /// activations[l+1] is the (post-dropout) output of layer l.
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<Eigen::MatrixXd> activations;
  /// Inverted-dropout masks per hidden layer (entries 0 or 1/keep); empty when
  /// dropout was not applied to that layer.
  std::vector<Eigen::MatrixXd> dropout_masks;
  /// max |a| over the input to the final layer, across the batch (K_z).
  double k_z = 0.0;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::RowVectorXd> biases;
};

/// Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero
/// biases. Deterministic in (spec, seed).
MLPModel init_model(const LayerSpec& spec, std::uint64_t seed);

struct ForwardResult {
  Eigen::MatrixXd outputs;
  ForwardTrace trace;
};

/// Dropout is applied only in train mode, with inverted scaling so inference
/// needs no rescale. Masks are drawn from a generator seeded with `seed`.
ForwardResult forward(const MLPModel& model, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                      bool train_mode = false, std::uint64_t seed = 0);

/// Backpropagate dE/d(outputs) through the recorded trace.
Gradients backward(const MLPModel& model, const ForwardTrace& trace,
                   const Eigen::Ref<const Eigen::MatrixXd>& output_grad);

// Flat parameter layout: for each layer in order, W row-major followed by b.

std::vector<double> flatten_params(const MLPModel& model);
void unflatten_params(MLPModel& model, std::span<const double> flat);
std::vector<double> flatten_gradients(const Gradients& grads);

nlohmann::json layer_spec_to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);

/// {spec, seed, layers: [{rows, cols, weights (row-major), bias}]}.
nlohmann::json model_to_json(const MLPModel& model);
MLPModel model_from_json(const nlohmann::json& j);

void save_checkpoint(const MLPModel& model, const std::string& path);
MLPModel load_checkpoint(const std::string& path);

}  // namespace quantloss
