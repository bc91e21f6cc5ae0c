#include "pd/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>

#include "pd/io_util.hpp"
#include "nlohmann/json.hpp"

namespace pd::spectral {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEulerGamma = 0.57721566490153286;

double elastic_power(const KernelSpec& k, int dim) {
  if (k.exponent) return *k.exponent;
  if (dim < 2)
    throw std::invalid_argument(
        "analytic_ft: elastic default exponent needs dim >= 2; pass it explicitly");
  return dim - 1.0;
}

bool is_rq(double alpha, double target) { return std::abs(alpha - target) < 1e-9; }

/// Closed form for the plain rational-quadratic family; the rescaled variant
/// multiplies by alpha^2 (it is alpha * kernel).
double rq_ft(double alpha, double xi) {
  if (is_rq(alpha, 0.5)) {
    if (xi == 0.0) throw ModeAtZero("rational-quadratic alpha=1/2 transform diverges at xi=0");
    return (1.0 / alpha) * bessel_k0(xi);
  }
  if (is_rq(alpha, 1.0)) return (1.0 / alpha) * std::exp(-xi);
  if (is_rq(alpha, 2.0)) return (1.0 / alpha) * (8.0 - xi) * std::exp(-xi);
  if (is_rq(alpha, 3.0)) return (3.0 / (4.0 * alpha)) * (xi * xi - 3.0 * xi + 3.0) * std::exp(-xi);
  throw UnsupportedAlpha("no tabulated transform for rational-quadratic alpha=" +
                         std::to_string(alpha));
}

enum class Sign { Neg, Zero, Pos };
Sign sign_of(double v) { return v > 0.0 ? Sign::Pos : v < 0.0 ? Sign::Neg : Sign::Zero; }

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Stable: return "Stable";
    case Verdict::Unstable: return "Unstable";
    case Verdict::MixedByMode: return "MixedByMode";
    case Verdict::NeutrallyStable: return "NeutrallyStable";
  }
  return "?";
}

double analytic_ft(const KernelSpec& k, double xi, int dim) {
  if (xi < 0.0) throw std::invalid_argument("analytic_ft: xi must be >= 0");
  switch (k.kind) {
    case KernelKind::GaussianRbf:
      return k.sigma * std::exp(-k.sigma * k.sigma * xi * xi / 4.0);
    case KernelKind::RescaledGaussian:
      return std::exp(-k.sigma * k.sigma * xi * xi / 4.0);
    case KernelKind::RationalQuadratic:
      return rq_ft(k.alpha, xi);
    case KernelKind::RescaledRq:
      return k.alpha * rq_ft(k.alpha, xi);  // alpha * plain-kernel transform
    case KernelKind::Cramer:
      // C_n / |xi|^(n+1) with the unknown positive constant folded to 1;
      // sign and shape are the contract.
      if (xi == 0.0) throw ModeAtZero("cramer transform diverges at xi=0");
      return std::pow(xi, -(dim + 1.0));
    case KernelKind::Elastic: {
      const double m = elastic_power(k, dim);
      const double p = m - dim;  // F(r^-m) ~ |xi|^(m-n); m = n-1 gives 1/|xi|
      if (p < 0.0 && xi == 0.0) throw ModeAtZero("elastic transform diverges at xi=0");
      return std::pow(xi, p);
    }
    case KernelKind::Sum: {
      double acc = 0.0;
      for (const auto& mem : k.members) acc += mem.weight * analytic_ft(*mem.kernel, xi, dim);
      return acc;
    }
    case KernelKind::Stabilized:
      return analytic_ft(k.base(), xi, dim) - k.eps * analytic_ft(k.stabilizer(), xi, dim);
  }
  throw std::logic_error("analytic_ft: unknown kernel kind");
}

GridSpectrum oracle_ft(const KernelSpec& k, double half_width, int grid_points) {
  if (half_width <= 0.0) throw std::invalid_argument("oracle_ft: half_width must be > 0");
  if (grid_points < 8 || (grid_points & (grid_points - 1)) != 0)
    throw std::invalid_argument("oracle_ft: grid_points must be a power of two >= 8");
  const double L = 2.0 * half_width;
  const int M = grid_points;
  const double h = L / M;
  const double scale = length_scale(k);
  if (scale > 0.0 && scale < 4.0 * h)
    throw GridTooCoarse("kernel length scale " + fmt17(scale) + " is under 4 grid cells (h=" +
                        fmt17(h) + "); enlarge grid_points or shrink half_width");

  EvalOptions opt;
  if (singular_at_zero(k)) opt.r_min = h / 2.0;  // grid-adapted origin clamp

  std::vector<double> profile(M);
  for (int j = 0; j < M; ++j) {
    const double r = std::min(j, M - j) * h;
    profile[j] = radial_profile(k, r, opt);
  }

  GridSpectrum out;
  out.length = L;
  out.points = M;
  out.values.resize(M / 2 + 1);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    double* in = fftw_alloc_real(M);
    fftw_complex* spec = fftw_alloc_complex(M / 2 + 1);
    fftw_plan plan = fftw_plan_dft_r2c_1d(M, in, spec, FFTW_ESTIMATE);
    std::copy(profile.begin(), profile.end(), in);
    fftw_execute(plan);
    for (int i = 0; i <= M / 2; ++i) out.values[i] = h * spec[i][0];
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(spec);
  }
  return out;
}

std::pair<double, int> default_grid(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::GaussianRbf:
    case KernelKind::RescaledGaussian:
      return {std::max(40.0, 20.0 * k.sigma), 4096};
    case KernelKind::RationalQuadratic:
    case KernelKind::RescaledRq:
      // Heavy tails need long domains to keep truncation ripple under the
      // sign-test noise floor; small alpha decays slowest.
      if (k.alpha <= 0.5 + 1e-12) return {2000.0, 16384};
      if (k.alpha <= 1.0 + 1e-12) return {1600.0, 65536};
      return {400.0, 32768};
    case KernelKind::Cramer:
      return {64.0, 4096};
    case KernelKind::Elastic:
      return {32.0, 1024};
    case KernelKind::Sum:
    case KernelKind::Stabilized: {
      double L = 0.0;
      int M = 0;
      for (const auto& mem : k.members) {
        auto [l, m] = default_grid(*mem.kernel);
        L = std::max(L, l);
        M = std::max(M, m);
      }
      return {L, M};
    }
  }
  return {40.0, 4096};
}

double value_scale() {
  static const double fitted = [] {
    const KernelSpec g = KernelSpec::gaussian(1.0);
    const auto [L, M] = default_grid(g);
    const GridSpectrum spec = oracle_ft(g, L / 2.0, M);
    // Least squares through the origin over modes carrying signal.
    double peak = 0.0;
    for (int k = 1; k <= spec.points / 2; ++k)
      peak = std::max(peak, analytic_ft(g, spec.xi(k), 2));
    double num = 0.0, den = 0.0;
    for (int k = 1; k <= spec.points / 2; ++k) {
      const double a = analytic_ft(g, spec.xi(k), 2);
      if (a <= 1e-12 * peak) continue;
      num += spec.values[k] * a;
      den += a * a;
    }
    return num / den;
  }();
  return fitted;
}

double growth_rate(const KernelSpec& k, Direction dir, double C, double xi, int dim) {
  if (C < 0.0) throw std::invalid_argument("growth_rate: C must be >= 0");
  if (C == 0.0) return 0.0;
  const double s = dir == Direction::Generator ? -1.0 : 1.0;
  return s * C * 4.0 * kPi * kPi * xi * xi * analytic_ft(k, xi, dim);
}

std::pair<Verdict, Verdict> stability_verdict(const KernelSpec& k,
                                              std::span<const double> xi_grid, int dim) {
  if (xi_grid.empty()) throw std::invalid_argument("stability_verdict: empty grid");
  int pos = 0, neg = 0, zero = 0;
  for (double xi : xi_grid) {
    if (xi <= 0.0) throw std::invalid_argument("stability_verdict: grid modes must be > 0");
    switch (sign_of(analytic_ft(k, xi, dim))) {
      case Sign::Pos: ++pos; break;
      case Sign::Neg: ++neg; break;
      case Sign::Zero: ++zero; break;
    }
  }
  const int n = static_cast<int>(xi_grid.size());
  if (pos == n) return {Verdict::Stable, Verdict::Unstable};
  if (neg == n) return {Verdict::Unstable, Verdict::Stable};
  if (zero == n) return {Verdict::NeutrallyStable, Verdict::NeutrallyStable};
  return {Verdict::MixedByMode, Verdict::MixedByMode};
}

StabilizerSolution minimal_epsilon(const KernelSpec& base, const KernelSpec& stabilizer,
                                   std::span<const double> xi_grid, int dim) {
  if (xi_grid.empty()) throw std::invalid_argument("minimal_epsilon: empty grid");
  StabilizerSolution sol;
  sol.grid.assign(xi_grid.begin(), xi_grid.end());
  sol.ratio.reserve(xi_grid.size());
  double eps_min = -std::numeric_limits<double>::infinity();
  for (double xi : xi_grid) {
    const double fb = analytic_ft(base, xi, dim);
    const double fs = analytic_ft(stabilizer, xi, dim);
    if (fs < 0.0)
      throw StabilizerInvalid("stabilizer transform is not positive at xi=" + fmt17(xi));
    if (fs == 0.0) {
      // exp underflow at high frequency; a mode both transforms have left
      // imposes no constraint, while a surviving base mode cannot be
      // certified by an underflowed stabilizer at any finite epsilon.
      if (fb != 0.0)
        throw StabilizerInvalid("stabilizer transform underflows at xi=" + fmt17(xi) +
                                " while the base transform does not; no finite epsilon "
                                "certifies this grid");
      sol.ratio.push_back(0.0);
      continue;
    }
    const double r = fb / fs;
    sol.ratio.push_back(r);
    eps_min = std::max(eps_min, r);
  }
  sol.epsilon_min = eps_min;
  sol.certified_epsilon = eps_min * (1.0 + 1e-6);
  double margin = std::numeric_limits<double>::infinity();
  for (double xi : xi_grid) {
    const double fb = analytic_ft(base, xi, dim);
    const double fs = analytic_ft(stabilizer, xi, dim);
    if (fs == 0.0 && fb == 0.0) continue;
    margin = std::min(margin, -(fb - sol.certified_epsilon * fs));
  }
  sol.margin = margin;
  return sol;
}

double bessel_k0(double x) {
  if (x <= 0.0) throw std::domain_error("bessel_k0: x must be > 0");
  if (x < 9.5) {
    // Ascending series: K0 = sum_k t_k (H_k - gamma - ln(x/2)), t_k = (x^2/4)^k / (k!)^2.
    const double q = x * x / 4.0;
    const double base = -kEulerGamma - std::log(x / 2.0);
    double t = 1.0, h = 0.0, sum = t * base;
    for (int k = 1; k < 200; ++k) {
      t *= q / (static_cast<double>(k) * k);
      h += 1.0 / k;
      const double term = t * (base + h);
      sum += term;
      if (std::abs(t) * (std::abs(base + h) + 1.0) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  // Asymptotic series, truncated at the smallest term.
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 40; ++k) {
    const double next = term * (-(2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x));
    if (std::abs(next) >= std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return std::sqrt(kPi / (2.0 * x)) * std::exp(-x) * sum;
}

std::vector<double> default_xi_grid() {
  const double lo = 0.05, hi = 50.0;
  const int n = 512;
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i)
    g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return g;
}

SpectrumReport build_report(const KernelSpec& k, double C, int dim,
                            double half_width, int grid_points) {
  if (half_width <= 0.0 || grid_points <= 0) {
    const auto [L, M] = default_grid(k);
    if (half_width <= 0.0) half_width = L / 2.0;
    if (grid_points <= 0) grid_points = M;
  }
  SpectrumReport rep;
  rep.kernel = k.describe();
  rep.C = C;
  rep.dim = dim;

  const GridSpectrum spec = oracle_ft(k, half_width, grid_points);
  const int half = spec.points / 2;
  rep.xi.reserve(half);
  for (int i = 1; i <= half; ++i) {
    const double xi = spec.xi(i);
    rep.xi.push_back(xi);
    rep.oracle.push_back(spec.values[i]);
    double a;
    try {
      a = analytic_ft(k, xi, dim);
    } catch (const ModeAtZero&) {
      a = std::numeric_limits<double>::quiet_NaN();
    }
    rep.analytic.push_back(a);
    rep.growth_gen.push_back(std::isnan(a) ? a : -C * 4.0 * kPi * kPi * xi * xi * a);
    rep.growth_disc.push_back(std::isnan(a) ? a : C * 4.0 * kPi * kPi * xi * xi * a);
  }

  const auto grid = default_xi_grid();
  std::tie(rep.verdict_gen, rep.verdict_disc) = stability_verdict(k, grid, dim);

  // Sign-flip location of the closed form, if any (on the report's modes).
  for (std::size_t i = 1; i < rep.analytic.size(); ++i) {
    if (std::isnan(rep.analytic[i - 1]) || std::isnan(rep.analytic[i])) continue;
    if ((rep.analytic[i - 1] > 0.0) != (rep.analytic[i] > 0.0)) {
      rep.sign_flip_xi = 0.5 * (rep.xi[i - 1] + rep.xi[i]);
      break;
    }
  }

  double peak = 0.0;
  for (double v : rep.oracle) peak = std::max(peak, std::abs(v));
  rep.sign_floor = 1e-9 * peak;
  int disagreements = 0;
  double first_xi = 0.0, last_xi = 0.0;
  for (std::size_t i = 0; i < rep.xi.size(); ++i) {
    if (std::abs(rep.oracle[i]) <= rep.sign_floor || std::isnan(rep.analytic[i])) continue;
    if (sign_of(rep.oracle[i]) != sign_of(rep.analytic[i])) {
      if (disagreements == 0) first_xi = rep.xi[i];
      last_xi = rep.xi[i];
      ++disagreements;
    }
  }
  if (disagreements > 0) {
    std::ostringstream msg;
    msg << "sign disagreement: closed form vs grid spectrum on " << disagreements
        << " modes in xi=[" << fmt17(first_xi) << "," << fmt17(last_xi)
        << "]; the grid spectrum is authoritative for signs";
    rep.discrepancies.push_back(msg.str());
  }

  // Documented caveats for the known-suspect closed forms.
  struct NoteScan {
    bool cramer = false;
    bool rq_23 = false;
    void scan(const KernelSpec& q) {
      if (q.kind == KernelKind::Cramer) cramer = true;
      if ((q.kind == KernelKind::RationalQuadratic || q.kind == KernelKind::RescaledRq) &&
          (is_rq(q.alpha, 1.0) || is_rq(q.alpha, 2.0) || is_rq(q.alpha, 3.0)))
        rq_23 = true;
      for (const auto& mem : q.members) scan(*mem.kernel);
    }
  } ns;
  ns.scan(k);
  if (ns.cramer)
    rep.notes.push_back(
        "cramer: the radial part -r has conflicting documented sign claims (positive "
        "constant over |xi|^(n+1) vs an asserted negative transform); the grid spectrum "
        "(positive odd modes, vanishing even modes) is used as ground truth");
  if (ns.rq_23)
    rep.notes.push_back(
        "rational-quadratic alpha in {1,2,3}: the decaying exponent exp(-|xi|) is used; a "
        "growing-exponent variant of these closed forms circulates but contradicts the "
        "transform decay of an integrable kernel. For alpha=2 either variant changes sign "
        "at |xi|=8 while the grid spectrum stays positive through it, so the flip itself "
        "is suspect; the grid spectrum is authoritative for signs");

  return rep;
}

std::string SpectrumReport::to_csv() const {
  std::ostringstream out;
  out << "xi,analytic_ft,oracle_ft,growth_gen,growth_disc\n";
  for (std::size_t i = 0; i < xi.size(); ++i) {
    out << fmt17(xi[i]) << ',' << fmt17(analytic[i]) << ',' << fmt17(oracle[i]) << ','
        << fmt17(growth_gen[i]) << ',' << fmt17(growth_disc[i]) << '\n';
  }
  return out.str();
}

std::string SpectrumReport::summary_json() const {
  nlohmann::json j;
  j["kernel"] = kernel;
  j["C"] = C;
  j["dim"] = dim;
  j["verdict_generator"] = to_string(verdict_gen);
  j["verdict_discriminator"] = to_string(verdict_disc);
  j["modes"] = xi.size();
  j["mode_scale"] = kModeScale;
  j["value_scale"] = value_scale();
  j["sign_floor"] = sign_floor;
  if (sign_flip_xi)
    j["analytic_sign_flip_xi"] = *sign_flip_xi;
  j["discrepancies"] = discrepancies;
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

}  // namespace pd::spectral
