#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pd/common.hpp"
#include "pd/kernels.hpp"

namespace pd::flow {

/// Two labelled point clouds in R^d, row-major flat storage.
struct ParticleSystem {
  std::vector<double> real_points;  ///< N_r x d
  std::vector<double> gen_points;   ///< N_g x d
  int dim = 0;

  int n_real() const { return dim > 0 ? static_cast<int>(real_points.size()) / dim : 0; }
  int n_gen() const { return dim > 0 ? static_cast<int>(gen_points.size()) / dim : 0; }
  const double* real_at(int i) const { return real_points.data() + static_cast<size_t>(i) * dim; }
  const double* gen_at(int i) const { return gen_points.data() + static_cast<size_t>(i) * dim; }
  /// Throws ShapeMismatch / NonFiniteValue on malformed clouds.
  void validate() const;
};

struct FlowConfig {
  KernelSpec kernel = KernelSpec::gaussian(1.0);
  Direction direction = Direction::Generator;
  /// Step size; unset resolves to 1e-2 * (kernel length scale)^2,
  /// falling back to 1e-2 for scale-free kernels. Zero is permitted
  /// (no-op dynamics); negative values are rejected.
  std::optional<double> dt;
  int steps = 1000;
  int record_every = 10;
  double diverge_threshold = 1e12;
};

struct DistanceOptions {
  /// Drop i==j cross pairs (and renormalize) so that identical clouds
  /// score exactly zero alongside the U-statistic self terms.
  bool exclude_matched_cross = false;
  EvalOptions eval{};
};

/// -2 mean_{real x gen} e + U-mean_{real x real} e + U-mean_{gen x gen} e.
/// Self terms exclude the diagonal; single-point clouds contribute zero
/// self energy.
double empirical_distance(const ParticleSystem& sys, const KernelSpec& k,
                          const DistanceOptions& opt = {});

/// Force on gen point i. Generator direction descends the empirical
/// distance: 2 mean_y grad e(X_i, y) - 2 mean_{j!=i} grad e(X_i, X_j)
/// (gradients taken in the first argument); Discriminator is the exact
/// negation.
std::vector<double> force_on(const ParticleSystem& sys, const KernelSpec& k,
                             Direction dir, int i, const EvalOptions& opt = {});

struct TrajectoryRecord {
  double t = 0.0;
  std::vector<double> gen_points;
  double energy = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;  ///< includes initial and final states
  double dt = 0.0;                        ///< resolved step size
  int steps_run = 0;
  bool diverged = false;
  int diverged_step = -1;

  double initial_energy() const { return records.empty() ? 0.0 : records.front().energy; }
  double final_energy() const { return records.empty() ? 0.0 : records.back().energy; }
  /// Columns: t, x0_0..x0_{d-1}, ..., energy. One row per record.
  std::string to_csv(int dim) const;
};

/// Synchronous explicit Euler on the gen cloud; real points never move.
/// Stops early (diverged flag, not an exception) once any coordinate
/// exceeds the divergence threshold.
Trajectory simulate(ParticleSystem sys, const FlowConfig& cfg);

/// Periodic 1-D perturbation field for the linearized dynamics.
struct GridPerturbation {
  std::vector<double> grid_values;  ///< M samples of v, M a power of two
  double length = 0.0;              ///< domain length L
  double background_C0 = 1.0;
  KernelSpec kernel = KernelSpec::gaussian(1.0);

  /// Single cosine mode k with given amplitude.
  static GridPerturbation single_mode(const KernelSpec& k, double length, int points,
                                      int mode, double amplitude = 1e-3,
                                      double background_C0 = 1.0);
};

/// Per-mode amplitude history of the spectrally diagonal update
/// v_hat <- v_hat * (1 + dt * omega_k), omega_k = -+ 2 C0 (2 pi k / L)^2 lambda_k.
struct ModeHistory {
  double length = 0.0;
  int points = 0;
  double dt = 0.0;
  std::vector<double> steps_at;               ///< recorded step indices
  std::vector<std::vector<double>> amplitude; ///< per record: |v_hat_k|, k=0..M/2
  std::vector<double> lambda;                 ///< grid spectrum eigenvalues
  std::vector<double> predicted_omega;        ///< from the grid spectrum
  std::vector<double> fitted_omega;           ///< log-linear fit, Euler-inverted; NaN if unresolved
  std::vector<double> mean_history;           ///< the xi = 0 mode, tracked separately

  double freq(int k) const { return k / length; }
  double xi(int k) const;  ///< closed-form frequency units
  /// Columns: k, xi, lambda, predicted_omega, fitted_omega, rel_err.
  std::string to_csv() const;
};

/// Evolves every Fourier mode independently and fits measured growth
/// exponents from the recorded history. Throws GridTooCoarse via the
/// spectral oracle.
ModeHistory linearized_sim(const GridPerturbation& p, Direction dir, double dt,
                           int steps, int record_every = 1);

}  // namespace pd::flow
