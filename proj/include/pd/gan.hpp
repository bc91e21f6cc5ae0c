#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pd/kernels.hpp"
#include "pd/nn.hpp"
#include "pd/rng.hpp"

namespace pd::gan {

/// k Gaussian clusters with means equally spaced on a circle.
struct MixtureSpec {
  int k = 8;
  double radius = 2.0;
  double component_std = 0.04;  ///< 0.02 * radius
  int dim = 2;

  std::vector<double> means() const;  ///< k x dim, row-major
  void validate() const;
};

/// n x dim samples; per sample: uniform component index, then one normal
/// per coordinate (the draw order is part of the determinism contract).
std::vector<double> sample_mixture(const MixtureSpec& spec, int n, Rng& rng);

struct Coverage {
  int covered = 0;
  double high_quality_fraction = 0.0;
};

/// A mode counts as covered when at least 1% of samples fall within
/// threshold of its mean; high_quality_fraction is the fraction within
/// threshold of any mean. threshold <= 0 resolves to 3 * component_std.
Coverage mode_coverage(std::span<const double> samples, const MixtureSpec& spec,
                       double threshold = 0.0);

/// Gaussian KDE on an M x M grid over [xmin,xmax] x [ymin,ymax],
/// normalized so sum(grid) * cell_area = 1.
std::vector<double> kde_grid(std::span<const double> samples, double bandwidth,
                             double xmin, double xmax, double ymin, double ymax, int m);

struct GeneratorLoss {
  double value = 0.0;
  nn::Gradients g_grads;
  /// d loss / d G(z) for each generated point (through the frozen D);
  /// exposed for the loss/flow direction consistency check.
  std::vector<double> gen_point_grads;
};

/// Eq-style generator loss: -2 mean e_D(x, G(z)) + U-mean e_D(G(z), G(z')),
/// e_D(a, b) = e(D(a), D(b)). Gradients flow through D into G only.
GeneratorLoss loss_G(const nn::MlpModel& D, const nn::MlpModel& G,
                     std::span<const double> data_batch, int n_data,
                     std::span<const double> latent_batch, int n_latent,
                     const KernelSpec& k);

struct DiscriminatorLoss {
  double value = 0.0;  ///< the feature-space empirical distance
  nn::Gradients d_grads;
};

/// Full three-term energy in feature space with U-statistic self terms;
/// ascended via adam_step(maximize=true).
DiscriminatorLoss loss_D(const nn::MlpModel& D, const nn::MlpModel& G,
                         std::span<const double> data_batch, int n_data,
                         std::span<const double> latent_batch, int n_latent,
                         const KernelSpec& k);

/// loss_D with the stabilized kernel e - eps*s, computed as the exact
/// linear combination loss_D(k) - eps * loss_D(s).
DiscriminatorLoss loss_D_stabilized(const nn::MlpModel& D, const nn::MlpModel& G,
                                    std::span<const double> data_batch, int n_data,
                                    std::span<const double> latent_batch, int n_latent,
                                    const KernelSpec& k, const KernelSpec& s, double eps);

struct TrainConfig {
  KernelSpec kernel_D = default_loss_kernel();
  std::optional<KernelSpec> stabilizer = default_stabilizer();
  double epsilon = 1.0;
  double lr = 5e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  int epochs = 3000;
  /// Training-pool size. Data and latent pools are drawn once and reused
  /// every step unless the resample flags below are set.
  int batch_size = 500;
  int n_critic = 5;
  /// Draw a fresh data / latent batch for every optimizer step instead of
  /// reusing the fixed pools (classic stochastic-minibatch training).
  bool resample_data = true;
  bool resample_latents = true;
  /// Evaluate the default kernel pair through the fused exponential path;
  /// disable to force the generic per-pair kernel evaluation (slower,
  /// byte-different rounding, same gradients to ~1e-12).
  bool fast_kernel_path = true;
  int latent_dim = 2;
  std::uint64_t seed = 0;
  int eval_points = 2000;
  /// Inputs are multiplied by this before D; <= 0 resolves to
  /// 1 / (radius + 4 * component_std), mapping the data into [-1, 1]^2.
  double input_scale = 0.0;
  /// Multiplies every D weight at creation. Biases start at zero, so the
  /// initial feature map is positively homogeneous and its pairwise spread
  /// scales like gain^layers. The loss kernel only produces useful gradients
  /// once feature distances reach its length scales, while below them the
  /// stabilizer dominates; a gain of a few starts D on the working side.
  double d_init_gain = 8.0;
  /// Same gain applied to G. A gain around 3 starts the generator cloud
  /// broad enough to overlap every mixture mode, so the early updates
  /// contract mass onto modes instead of growing a point mass outward from
  /// the origin and latching onto whichever mode it reaches first.
  double g_init_gain = 3.0;
  /// Clamp every D parameter to [-c, c] after each ascent step; <= 0
  /// disables. This is the feature-map norm constraint of the baseline
  /// MMD GAN training protocol.
  double d_weight_clip = 0.0;
  std::vector<int> d_dims{2, 100, 50, 16};
  std::vector<int> g_dims{2, 100, 50, 2};
  double leaky_slope = 0.2;
  bool g_final_tanh = false;

  static KernelSpec default_loss_kernel();  ///< sum of rescaled Gaussians, sigma 4, 8, 16
  static KernelSpec default_stabilizer();   ///< sum of rescaled Gaussians, sigma 1, sqrt2, 2
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss_g = 0.0;
  double loss_d = 0.0;            ///< last critic step's value
  double feature_distance = 0.0;  ///< == loss_d (the energy itself)
  int coverage = 0;
  double high_quality = 0.0;
};

struct TrainRun {
  std::vector<EpochRecord> records;
  bool diverged = false;
  int diverged_epoch = -1;
  nn::MlpModel G;
  nn::MlpModel D;
  double input_scale = 1.0;
  std::vector<double> final_samples;  ///< eval_points x 2, in data coordinates

  /// Max absolute deviation of feature_distance from its median over the
  /// final half of training: the oscillation-amplitude instability signal.
  double feature_distance_oscillation() const;
  /// Columns: epoch, loss_g, loss_d, feature_distance, coverage, high_quality.
  std::string metrics_csv() const;
};

/// Alternating adversarial loop: n_critic discriminator ascent steps on the
/// (pooled or resampled) batches, then one generator descent step; per-epoch
/// metrics on a fixed latent evaluation draw. Non-finite losses halt the run
/// with the partial record (diverged flag set).
TrainRun train(const TrainConfig& cfg, const MixtureSpec& spec);

}  // namespace pd::gan
