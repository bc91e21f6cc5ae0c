#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pd/common.hpp"
#include "pd/rng.hpp"

namespace pd::nn {

/// Fully connected net: affine + LeakyReLU after every layer except the
/// last, which is linear (or Tanh when configured). Weights are row-major
/// (out x in) per layer.
struct MlpModel {
  std::vector<int> layer_dims;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  double leaky_slope = 0.2;
  bool final_tanh = false;
  bool use_bias = true;

  int n_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int in_dim() const { return layer_dims.front(); }
  int out_dim() const { return layer_dims.back(); }

  /// Uniform +-1/sqrt(fan_in) weights, zero biases; draw order is layer by
  /// layer, row-major, so a fixed seed reproduces the net bitwise.
  static MlpModel create(std::vector<int> dims, Rng& rng, double leaky_slope = 0.2,
                         bool final_tanh = false, bool use_bias = true);

  /// Parameter arrays in the fixed order W0, b0, W1, b1, ... (bias entries
  /// omitted when use_bias is false).
  std::vector<std::vector<double>*> parameters();
  std::vector<const std::vector<double>*> parameters() const;

  void validate() const;
};

/// Activations saved by forward_cached for the backward pass.
struct ForwardCache {
  int batch = 0;
  /// act[0] is the input batch; act[l] for l >= 1 is layer l's output after
  /// its activation. Each is batch x width, row-major.
  std::vector<std::vector<double>> act;
  /// pre[l] is layer l+1's pre-activation, batch x width.
  std::vector<std::vector<double>> pre;

  const std::vector<double>& output() const { return act.back(); }
};

/// Plain forward pass; returns the batch x out_dim output.
std::vector<double> forward(const MlpModel& m, std::span<const double> batch, int batch_size);

/// Forward pass retaining every intermediate needed by backward.
ForwardCache forward_cached(const MlpModel& m, std::span<const double> batch, int batch_size);

struct Gradients {
  std::vector<std::vector<double>> weight_grads;
  std::vector<std::vector<double>> bias_grads;
  std::vector<double> input_grads;  ///< batch x in_dim

  /// Same fixed order as MlpModel::parameters().
  std::vector<const std::vector<double>*> parameters(bool use_bias) const;
};

/// Exact reverse-mode gradients of sum_b <upstream_b, output_b> with respect
/// to parameters and inputs. Gradients are summed over the batch; upstream
/// carries any 1/B normalization. LeakyReLU uses slope 1 at exactly zero
/// pre-activation.
Gradients backward(const MlpModel& m, const ForwardCache& cache,
                   std::span<const double> upstream);

struct AdamState {
  double lr = 5e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps_div = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> m;  ///< first moments, parameter-shaped
  std::vector<std::vector<double>> v;  ///< second moments

  static AdamState for_model(const MlpModel& model, double lr = 5e-3, double beta1 = 0.5,
                             double beta2 = 0.9, double eps_div = 1e-8);
};

/// Standard bias-corrected Adam update in place; maximize negates every
/// gradient first (ascent == descent on the negated objective, exactly).
void adam_step(AdamState& state, MlpModel& model, const Gradients& grads, bool maximize);

/// JSON checkpoint with a versioned header; load rejects unknown formats.
std::string checkpoint_string(const MlpModel& m);
void save_checkpoint(const MlpModel& m, const std::filesystem::path& path);
MlpModel load_checkpoint_string(const std::string& text);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace pd::nn
