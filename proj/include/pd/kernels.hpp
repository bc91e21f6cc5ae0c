#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pd/common.hpp"

namespace pd {

/// Pair-potential (distance function) descriptions.
///
/// Every kernel e(x, y) is radial -- it depends only on r = ||x - y|| --
/// except Cramer, which additionally depends on ||x - z0|| and ||y - z0||.
/// For spectral analysis Cramer contributes its radial part e*(r) = -r.
/// Specs are immutable values; all evaluation functions are pure.
enum class KernelKind {
  GaussianRbf,        ///< exp(-r^2 / (2 sigma^2))
  RationalQuadratic,  ///< (1 + r^2 / (2 alpha))^(-alpha)
  Cramer,             ///< ||x-z0|| + ||y-z0|| - ||x-y||
  Elastic,            ///< r^(-m); m defaults to (ambient dim - 1)
  RescaledGaussian,   ///< (1/sigma) exp(-r^2 / (2 sigma^2))
  RescaledRq,         ///< alpha (1 + r^2 / (2 alpha))^(-alpha)
  Sum,                ///< positive-weighted sum of members
  Stabilized,         ///< base - eps * stabilizer
};

struct KernelSpec;
using KernelPtr = std::shared_ptr<const KernelSpec>;

struct WeightedMember {
  double weight = 1.0;
  KernelPtr kernel;
};

struct KernelSpec {
  KernelKind kind = KernelKind::GaussianRbf;
  double sigma = 1.0;               ///< GaussianRbf / RescaledGaussian
  double alpha = 1.0;               ///< RationalQuadratic / RescaledRq
  std::vector<double> z0;           ///< Cramer center; empty means origin
  std::optional<double> exponent;   ///< Elastic; nullopt = ambient dim - 1
  double eps = 0.0;                 ///< Stabilized weight
  std::vector<WeightedMember> members;  ///< Sum members, or {base, stabilizer}

  static KernelSpec gaussian(double sigma);
  static KernelSpec rational_quadratic(double alpha);
  static KernelSpec cramer(std::vector<double> z0 = {});
  static KernelSpec elastic(std::optional<double> exponent = std::nullopt);
  static KernelSpec rescaled_gaussian(double sigma);
  static KernelSpec rescaled_rq(double alpha);
  static KernelSpec sum(std::vector<std::pair<double, KernelSpec>> members);
  static KernelSpec stabilized(KernelSpec base, KernelSpec stabilizer, double eps);

  const KernelSpec& base() const { return *members.at(0).kernel; }
  const KernelSpec& stabilizer() const { return *members.at(1).kernel; }

  /// Round-trippable textual form (the CLI grammar), e.g. "gaussian:sigma=2".
  std::string describe() const;
};

struct EvalOptions {
  double r_min = 1e-12;  ///< clamp radius for kernels singular at r = 0
  bool strict = false;   ///< throw SingularPair instead of clamping
};

/// e(x, y). Throws SingularPair (strict mode only), NonFiniteValue on overflow.
double eval(const KernelSpec& k, std::span<const double> x,
            std::span<const double> y, const EvalOptions& opt = {});

/// grad_x e(x, y), written to out (closed form; no numerical differentiation).
/// Inside the clamp radius the clamped potential is flat, so the gradient is
/// the zero vector there; Cramer's undefined unit vectors at x = z0 or x = y
/// contribute zero (subgradient convention).
void grad(const KernelSpec& k, std::span<const double> x,
          std::span<const double> y, std::span<double> out,
          const EvalOptions& opt = {});

/// Parses the CLI kernel grammar, the inverse of describe():
///   gaussian:sigma=2   rq:alpha=0.5   cramer   elastic:m=1
///   sum[w*SPEC;SPEC;...]   stab[BASE;STABILIZER;EPS]
/// Throws std::invalid_argument with a character-position diagnostic.
KernelSpec parse_kernel(const std::string& text);

/// The radial part e(r) used by plotting and the spectral oracle.
/// Cramer returns -r.
double radial_profile(const KernelSpec& k, double r, const EvalOptions& opt = {});

/// Smallest intrinsic length scale in the kernel tree (sigma for Gaussians,
/// sqrt(2 alpha) for rational-quadratic); 0 when every member is scale-free.
double length_scale(const KernelSpec& k);

/// True when any member of the tree is singular at r = 0 (Elastic).
bool singular_at_zero(const KernelSpec& k);

}  // namespace pd
