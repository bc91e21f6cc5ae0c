#include "pd/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pd {
namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Elastic exponent for ambient dimension d (resolves the n-1 default).
double elastic_exponent(const KernelSpec& k, std::size_t dim) {
  if (k.exponent) return *k.exponent;
  require(dim >= 2, "elastic: default exponent dim-1 must be positive; pass it explicitly in 1-D");
  return static_cast<double>(dim) - 1.0;
}

/// Radial value and d/d(r^2) for the purely radial kernels; used by grad so
/// the direction factor (x - y) is applied once at the top.
struct RadialDeriv {
  double value;
  double d_r2;  // derivative with respect to r^2
};

RadialDeriv radial_with_deriv(const KernelSpec& k, double r, std::size_t dim,
                              const EvalOptions& opt);

RadialDeriv combine(const KernelSpec& k, double r, std::size_t dim,
                    const EvalOptions& opt) {
  switch (k.kind) {
    case KernelKind::GaussianRbf: {
      const double s2 = k.sigma * k.sigma;
      const double v = std::exp(-r * r / (2.0 * s2));
      return {v, -v / (2.0 * s2)};
    }
    case KernelKind::RescaledGaussian: {
      const double s2 = k.sigma * k.sigma;
      const double v = std::exp(-r * r / (2.0 * s2)) / k.sigma;
      return {v, -v / (2.0 * s2)};
    }
    case KernelKind::RationalQuadratic: {
      const double base = 1.0 + r * r / (2.0 * k.alpha);
      const double v = std::pow(base, -k.alpha);
      // d/d(r^2) (base^-alpha) = -alpha * base^(-alpha-1) / (2 alpha)
      return {v, -0.5 * std::pow(base, -k.alpha - 1.0)};
    }
    case KernelKind::RescaledRq: {
      const double base = 1.0 + r * r / (2.0 * k.alpha);
      const double v = k.alpha * std::pow(base, -k.alpha);
      return {v, -0.5 * k.alpha * std::pow(base, -k.alpha - 1.0)};
    }
    case KernelKind::Elastic: {
      const double m = elastic_exponent(k, dim);
      if (r < opt.r_min) {
        if (opt.strict)
          throw SingularPair("elastic kernel evaluated at r=" + fmt_num(r) +
                             " below floor " + fmt_num(opt.r_min));
        // Clamped potential is constant inside the floor: zero slope.
        return {std::pow(opt.r_min, -m), 0.0};
      }
      const double v = std::pow(r, -m);
      // d/d(r^2) r^-m = (-m/2) r^(-m-2)
      return {v, -0.5 * m * std::pow(r, -m - 2.0)};
    }
    case KernelKind::Sum: {
      RadialDeriv acc{0.0, 0.0};
      for (const auto& mem : k.members) {
        const RadialDeriv part = radial_with_deriv(*mem.kernel, r, dim, opt);
        acc.value += mem.weight * part.value;
        acc.d_r2 += mem.weight * part.d_r2;
      }
      return acc;
    }
    case KernelKind::Stabilized: {
      const RadialDeriv b = radial_with_deriv(k.base(), r, dim, opt);
      const RadialDeriv s = radial_with_deriv(k.stabilizer(), r, dim, opt);
      return {b.value - k.eps * s.value, b.d_r2 - k.eps * s.d_r2};
    }
    case KernelKind::Cramer:
      throw std::logic_error("combine: Cramer handled separately");
  }
  throw std::logic_error("combine: unknown kernel kind");
}

RadialDeriv radial_with_deriv(const KernelSpec& k, double r, std::size_t dim,
                              const EvalOptions& opt) {
  if (k.kind == KernelKind::Cramer) {
    // Radial part e*(r) = -r, as used in the spectral analysis.
    return {-r, r > 0.0 ? -0.5 / r : 0.0};
  }
  return combine(k, r, dim, opt);
}

/// Accumulate w * grad_x e(x,y) into out.
void grad_accum(const KernelSpec& k, std::span<const double> x,
                std::span<const double> y, std::span<double> out, double w,
                const EvalOptions& opt) {
  const std::size_t d = x.size();
  if (k.kind == KernelKind::Cramer) {
    // grad_x [ ||x-z0|| + ||y-z0|| - ||x-y|| ] with zero subgradients.
    std::vector<double> z(d, 0.0);
    if (!k.z0.empty()) z.assign(k.z0.begin(), k.z0.end());
    const double rz = dist(x, std::span<const double>(z));
    const double rxy = dist(x, y);
    for (std::size_t i = 0; i < d; ++i) {
      double g = 0.0;
      if (rz > 0.0) g += (x[i] - z[i]) / rz;
      if (rxy > 0.0) g -= (x[i] - y[i]) / rxy;
      out[i] += w * g;
    }
    return;
  }
  if (k.kind == KernelKind::Sum) {
    for (const auto& mem : k.members) grad_accum(*mem.kernel, x, y, out, w * mem.weight, opt);
    return;
  }
  if (k.kind == KernelKind::Stabilized) {
    grad_accum(k.base(), x, y, out, w, opt);
    grad_accum(k.stabilizer(), x, y, out, -w * k.eps, opt);
    return;
  }
  const double r = dist(x, y);
  const RadialDeriv rd = combine(k, r, d, opt);
  // grad_x f(r^2) = f'(r^2) * 2 (x - y)
  for (std::size_t i = 0; i < d; ++i) out[i] += w * rd.d_r2 * 2.0 * (x[i] - y[i]);
}

}  // namespace

KernelSpec KernelSpec::gaussian(double sigma) {
  require(sigma > 0.0, "gaussian: sigma must be > 0");
  KernelSpec k;
  k.kind = KernelKind::GaussianRbf;
  k.sigma = sigma;
  return k;
}

KernelSpec KernelSpec::rational_quadratic(double alpha) {
  require(alpha > 0.0, "rational_quadratic: alpha must be > 0");
  KernelSpec k;
  k.kind = KernelKind::RationalQuadratic;
  k.alpha = alpha;
  return k;
}

KernelSpec KernelSpec::cramer(std::vector<double> z0) {
  KernelSpec k;
  k.kind = KernelKind::Cramer;
  k.z0 = std::move(z0);
  return k;
}

KernelSpec KernelSpec::elastic(std::optional<double> exponent) {
  if (exponent) require(*exponent > 0.0, "elastic: exponent must be > 0");
  KernelSpec k;
  k.kind = KernelKind::Elastic;
  k.exponent = exponent;
  return k;
}

KernelSpec KernelSpec::rescaled_gaussian(double sigma) {
  require(sigma > 0.0, "rescaled_gaussian: sigma must be > 0");
  KernelSpec k;
  k.kind = KernelKind::RescaledGaussian;
  k.sigma = sigma;
  return k;
}

KernelSpec KernelSpec::rescaled_rq(double alpha) {
  require(alpha > 0.0, "rescaled_rq: alpha must be > 0");
  KernelSpec k;
  k.kind = KernelKind::RescaledRq;
  k.alpha = alpha;
  return k;
}

KernelSpec KernelSpec::sum(std::vector<std::pair<double, KernelSpec>> members) {
  require(!members.empty(), "sum: needs at least one member");
  KernelSpec k;
  k.kind = KernelKind::Sum;
  for (auto& [w, m] : members) {
    require(w > 0.0, "sum: weights must be > 0");
    k.members.push_back({w, std::make_shared<const KernelSpec>(std::move(m))});
  }
  return k;
}

KernelSpec KernelSpec::stabilized(KernelSpec base, KernelSpec stab, double eps) {
  require(eps > 0.0, "stabilized: eps must be > 0");
  KernelSpec k;
  k.kind = KernelKind::Stabilized;
  k.eps = eps;
  k.members.push_back({1.0, std::make_shared<const KernelSpec>(std::move(base))});
  k.members.push_back({1.0, std::make_shared<const KernelSpec>(std::move(stab))});
  return k;
}

std::string KernelSpec::describe() const {
  switch (kind) {
    case KernelKind::GaussianRbf:
      return "gaussian:sigma=" + fmt_num(sigma);
    case KernelKind::RescaledGaussian:
      return "rgaussian:sigma=" + fmt_num(sigma);
    case KernelKind::RationalQuadratic:
      return "rq:alpha=" + fmt_num(alpha);
    case KernelKind::RescaledRq:
      return "rrq:alpha=" + fmt_num(alpha);
    case KernelKind::Cramer:
      return "cramer";
    case KernelKind::Elastic:
      return exponent ? "elastic:m=" + fmt_num(*exponent) : "elastic";
    case KernelKind::Sum: {
      std::string s = "sum[";
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) s += ';';
        if (members[i].weight != 1.0) s += fmt_num(members[i].weight) + "*";
        s += members[i].kernel->describe();
      }
      return s + "]";
    }
    case KernelKind::Stabilized:
      return "stab[" + base().describe() + ";" + stabilizer().describe() + ";" +
             fmt_num(eps) + "]";
  }
  return "?";
}

double eval(const KernelSpec& k, std::span<const double> x,
            std::span<const double> y, const EvalOptions& opt) {
  if (x.size() != y.size() || x.empty())
    throw ShapeMismatch("eval: point dimensions disagree");
  double v = 0.0;
  if (k.kind == KernelKind::Cramer) {
    std::vector<double> z(x.size(), 0.0);
    if (!k.z0.empty()) z.assign(k.z0.begin(), k.z0.end());
    const std::span<const double> zs(z);
    v = dist(x, zs) + dist(y, zs) - dist(x, y);
  } else if (k.kind == KernelKind::Sum) {
    for (const auto& mem : k.members) v += mem.weight * eval(*mem.kernel, x, y, opt);
  } else if (k.kind == KernelKind::Stabilized) {
    v = eval(k.base(), x, y, opt) - k.eps * eval(k.stabilizer(), x, y, opt);
  } else {
    v = combine(k, dist(x, y), x.size(), opt).value;
  }
  if (!std::isfinite(v)) throw NonFiniteValue("eval: non-finite kernel value");
  return v;
}

void grad(const KernelSpec& k, std::span<const double> x,
          std::span<const double> y, std::span<double> out,
          const EvalOptions& opt) {
  if (x.size() != y.size() || x.size() != out.size() || x.empty())
    throw ShapeMismatch("grad: dimensions disagree");
  for (auto& g : out) g = 0.0;
  grad_accum(k, x, y, out, 1.0, opt);
  for (double g : out)
    if (!std::isfinite(g)) throw NonFiniteValue("grad: non-finite gradient");
}

double radial_profile(const KernelSpec& k, double r, const EvalOptions& opt) {
  require(r >= 0.0, "radial_profile: r must be >= 0");
  // Ambient dimension only matters for the Elastic default exponent; the
  // radial profile is the 1-D section, so resolve the default against dim 2
  // (callers working in other dimensions pass the exponent explicitly).
  const double v = radial_with_deriv(k, r, 2, opt).value;
  if (!std::isfinite(v)) throw NonFiniteValue("radial_profile: non-finite value");
  return v;
}

double length_scale(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::GaussianRbf:
    case KernelKind::RescaledGaussian:
      return k.sigma;
    case KernelKind::RationalQuadratic:
    case KernelKind::RescaledRq:
      return std::sqrt(2.0 * k.alpha);
    case KernelKind::Cramer:
    case KernelKind::Elastic:
      return 0.0;  // scale-free
    case KernelKind::Sum:
    case KernelKind::Stabilized: {
      double best = 0.0;
      for (const auto& mem : k.members) {
        const double s = length_scale(*mem.kernel);
        if (s > 0.0 && (best == 0.0 || s < best)) best = s;
      }
      return best;
    }
  }
  return 0.0;
}

bool singular_at_zero(const KernelSpec& k) {
  if (k.kind == KernelKind::Elastic) return true;
  for (const auto& mem : k.members)
    if (singular_at_zero(*mem.kernel)) return true;
  return false;
}

}  // namespace pd
