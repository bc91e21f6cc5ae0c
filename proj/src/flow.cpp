#include "pd/flow.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pd/io_util.hpp"
#include "pd/spectral.hpp"

namespace pd::flow {
namespace {

constexpr double kPi = std::numbers::pi;

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

bool power_of_two(int m) { return m > 0 && (m & (m - 1)) == 0; }

/// Least-squares slope of y against x.
double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void ParticleSystem::validate() const {
  if (dim <= 0) throw ShapeMismatch("ParticleSystem: dim must be positive");
  if (real_points.empty() || gen_points.empty())
    throw ShapeMismatch("ParticleSystem: both clouds must be nonempty");
  if (real_points.size() % dim != 0 || gen_points.size() % dim != 0)
    throw ShapeMismatch("ParticleSystem: cloud size is not a multiple of dim");
  for (double v : real_points)
    if (!std::isfinite(v)) throw NonFiniteValue("ParticleSystem: non-finite real point");
  for (double v : gen_points)
    if (!std::isfinite(v)) throw NonFiniteValue("ParticleSystem: non-finite gen point");
}

double empirical_distance(const ParticleSystem& sys, const KernelSpec& k,
                          const DistanceOptions& opt) {
  sys.validate();
  const int nr = sys.n_real(), ng = sys.n_gen(), d = sys.dim;
  const auto pt = [d](const std::vector<double>& v, int i) {
    return std::span<const double>(v.data() + static_cast<size_t>(i) * d, d);
  };

  double cross = 0.0;
  long cross_pairs = 0;
  if (opt.exclude_matched_cross && nr == ng) {
    // Pairing (i,j) with (j,i) keeps every partial sum exactly twice the
    // self-term partial sums when both clouds coincide, so the distance
    // cancels to exactly zero rather than to rounding noise.
    for (int i = 0; i < nr; ++i)
      for (int j = i + 1; j < ng; ++j) {
        cross += eval(k, pt(sys.real_points, i), pt(sys.gen_points, j), opt.eval) +
                 eval(k, pt(sys.real_points, j), pt(sys.gen_points, i), opt.eval);
        cross_pairs += 2;
      }
  } else {
    for (int i = 0; i < nr; ++i)
      for (int j = 0; j < ng; ++j) {
        if (opt.exclude_matched_cross && i == j) continue;
        cross += eval(k, pt(sys.real_points, i), pt(sys.gen_points, j), opt.eval);
        ++cross_pairs;
      }
  }
  const double cross_term = cross_pairs > 0 ? -2.0 * cross / cross_pairs : 0.0;

  const auto self_term = [&](const std::vector<double>& v, int n) {
    if (n < 2) return 0.0;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        s += eval(k, pt(v, i), pt(v, j), opt.eval);
    return 2.0 * s / (static_cast<double>(n) * (n - 1));
  };
  return cross_term + self_term(sys.real_points, nr) + self_term(sys.gen_points, ng);
}

namespace {

/// Descent-direction force on gen point i, accumulated in index order.
void generator_force(const ParticleSystem& sys, const KernelSpec& k, int i,
                     const EvalOptions& opt, double* out) {
  const int nr = sys.n_real(), ng = sys.n_gen(), d = sys.dim;
  std::span<const double> xi(sys.gen_at(i), d);
  std::vector<double> g(d);
  std::fill(out, out + d, 0.0);
  for (int y = 0; y < nr; ++y) {
    grad(k, xi, std::span<const double>(sys.real_at(y), d), g, opt);
    for (int c = 0; c < d; ++c) out[c] += g[c];
  }
  for (int c = 0; c < d; ++c) out[c] *= 2.0 / nr;
  if (ng > 1) {
    std::vector<double> rep(d, 0.0);
    for (int j = 0; j < ng; ++j) {
      if (j == i) continue;
      grad(k, xi, std::span<const double>(sys.gen_at(j), d), g, opt);
      for (int c = 0; c < d; ++c) rep[c] += g[c];
    }
    for (int c = 0; c < d; ++c) out[c] -= 2.0 * rep[c] / (ng - 1);
  }
}

}  // namespace

std::vector<double> force_on(const ParticleSystem& sys, const KernelSpec& k,
                             Direction dir, int i, const EvalOptions& opt) {
  sys.validate();
  if (i < 0 || i >= sys.n_gen()) throw std::out_of_range("force_on: gen index out of range");
  std::vector<double> f(sys.dim);
  generator_force(sys, k, i, opt, f.data());
  if (dir == Direction::Discriminator)
    for (double& v : f) v = -v;
  return f;
}

Trajectory simulate(ParticleSystem sys, const FlowConfig& cfg) {
  sys.validate();
  double dt;
  if (cfg.dt) {
    dt = *cfg.dt;
    if (dt < 0.0 || !std::isfinite(dt)) throw std::invalid_argument("simulate: dt must be >= 0");
  } else {
    const double ls = length_scale(cfg.kernel);
    dt = ls > 0.0 ? 1e-2 * ls * ls : 1e-2;
  }
  if (cfg.steps < 0) throw std::invalid_argument("simulate: steps must be >= 0");
  if (cfg.record_every < 1) throw std::invalid_argument("simulate: record_every must be >= 1");

  const int ng = sys.n_gen(), d = sys.dim;
  const double sign = cfg.direction == Direction::Generator ? 1.0 : -1.0;
  EvalOptions eval_opt{};

  Trajectory traj;
  traj.dt = dt;
  const auto record = [&](int step) {
    traj.records.push_back({step * dt, sys.gen_points,
                            empirical_distance(sys, cfg.kernel, {false, eval_opt})});
  };
  record(0);

  std::vector<double> forces(static_cast<size_t>(ng) * d);
  const unsigned hw = std::thread::hardware_concurrency();
  const int n_threads = (ng >= 256 && hw > 1) ? static_cast<int>(std::min(hw, 16u)) : 1;

  for (int step = 1; step <= cfg.steps; ++step) {
    if (n_threads == 1) {
      for (int i = 0; i < ng; ++i)
        generator_force(sys, cfg.kernel, i, eval_opt, forces.data() + static_cast<size_t>(i) * d);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(n_threads);
      for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&, t] {
          for (int i = t; i < ng; i += n_threads)
            generator_force(sys, cfg.kernel, i, eval_opt,
                            forces.data() + static_cast<size_t>(i) * d);
        });
      for (auto& th : pool) th.join();
    }
    bool bad = false;
    for (int i = 0; i < ng * d; ++i) {
      sys.gen_points[i] += sign * dt * forces[i];
      if (!(std::abs(sys.gen_points[i]) <= cfg.diverge_threshold)) bad = true;
    }
    traj.steps_run = step;
    if (bad) {
      traj.diverged = true;
      traj.diverged_step = step;
      record(step);
      return traj;
    }
    if (step % cfg.record_every == 0 || step == cfg.steps) record(step);
  }
  return traj;
}

std::string Trajectory::to_csv(int dim) const {
  std::ostringstream os;
  os << "t";
  const int n = records.empty() ? 0 : static_cast<int>(records.front().gen_points.size()) / dim;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < dim; ++c) os << ",x" << i << "_" << c;
  os << ",energy\n";
  for (const auto& r : records) {
    os << fmt17(r.t);
    for (double v : r.gen_points) os << "," << fmt17(v);
    os << "," << fmt17(r.energy) << "\n";
  }
  return os.str();
}

GridPerturbation GridPerturbation::single_mode(const KernelSpec& k, double length, int points,
                                               int mode, double amplitude, double background_C0) {
  if (!power_of_two(points)) throw std::invalid_argument("single_mode: points must be a power of two");
  if (mode < 0 || mode > points / 2) throw std::invalid_argument("single_mode: mode out of range");
  GridPerturbation p;
  p.kernel = k;
  p.length = length;
  p.background_C0 = background_C0;
  p.grid_values.resize(points);
  for (int j = 0; j < points; ++j)
    p.grid_values[j] = amplitude * std::cos(2.0 * kPi * mode * j / points);
  return p;
}

double ModeHistory::xi(int k) const { return spectral::kModeScale * k / length; }

ModeHistory linearized_sim(const GridPerturbation& p, Direction dir, double dt,
                           int steps, int record_every) {
  const int m = static_cast<int>(p.grid_values.size());
  if (!power_of_two(m) || m < 4)
    throw std::invalid_argument("linearized_sim: grid size must be a power of two >= 4");
  if (p.length <= 0.0) throw std::invalid_argument("linearized_sim: length must be positive");
  if (p.background_C0 < 0.0) throw std::invalid_argument("linearized_sim: C0 must be >= 0");
  if (dt < 0.0 || steps < 1 || record_every < 1)
    throw std::invalid_argument("linearized_sim: bad dt/steps/record_every");

  const spectral::GridSpectrum spec = spectral::oracle_ft(p.kernel, p.length / 2.0, m);
  const int half = m / 2;

  ModeHistory hist;
  hist.length = p.length;
  hist.points = m;
  hist.dt = dt;
  hist.lambda = spec.values;
  hist.predicted_omega.resize(half + 1);
  const double sign = dir == Direction::Generator ? -1.0 : 1.0;
  for (int k = 0; k <= half; ++k) {
    const double w = 2.0 * kPi * k / p.length;
    hist.predicted_omega[k] = k == 0 ? 0.0 : sign * 2.0 * p.background_C0 * w * w * spec.values[k];
  }

  // One forward transform of the initial field; modes then evolve independently.
  std::vector<double> re(half + 1), im(half + 1);
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    double* in = fftw_alloc_real(m);
    fftw_complex* out = fftw_alloc_complex(half + 1);
    fftw_plan plan = fftw_plan_dft_r2c_1d(m, in, out, FFTW_ESTIMATE);
    std::copy(p.grid_values.begin(), p.grid_values.end(), in);
    fftw_execute(plan);
    for (int k = 0; k <= half; ++k) { re[k] = out[k][0]; im[k] = out[k][1]; }
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }

  const auto record = [&](int step) {
    hist.steps_at.push_back(static_cast<double>(step));
    std::vector<double> amp(half + 1);
    for (int k = 0; k <= half; ++k) amp[k] = std::hypot(re[k], im[k]) / m;
    hist.mean_history.push_back(re[0] / m);
    hist.amplitude.push_back(std::move(amp));
  };
  record(0);
  for (int step = 1; step <= steps; ++step) {
    for (int k = 1; k <= half; ++k) {
      const double f = 1.0 + dt * hist.predicted_omega[k];
      re[k] *= f;
      im[k] *= f;
    }
    if (step % record_every == 0 || step == steps) record(step);
  }

  // Fit ln|v_hat| against step index, then invert the Euler factor.
  hist.fitted_omega.assign(half + 1, std::numeric_limits<double>::quiet_NaN());
  double max0 = 0.0;
  for (int k = 1; k <= half; ++k) max0 = std::max(max0, hist.amplitude.front()[k]);
  for (int k = 1; k <= half; ++k) {
    if (dt <= 0.0) break;
    if (hist.amplitude.front()[k] < 1e-12 * max0) continue;  // mode absent initially
    std::vector<double> xs, ys;
    for (size_t r = 0; r < hist.steps_at.size(); ++r) {
      const double a = hist.amplitude[r][k];
      if (a <= 0.0 || !std::isfinite(a)) break;
      xs.push_back(hist.steps_at[r]);
      ys.push_back(std::log(a));
    }
    if (xs.size() < 2) continue;
    const double slope = ls_slope(xs, ys);
    hist.fitted_omega[k] = (std::exp(slope) - 1.0) / dt;
  }
  return hist;
}

std::string ModeHistory::to_csv() const {
  std::ostringstream os;
  os << "k,xi,lambda,predicted_omega,fitted_omega,rel_err\n";
  const int half = points / 2;
  for (int k = 1; k <= half; ++k) {
    const double pred = predicted_omega[k], fit = fitted_omega[k];
    const double denom = std::max(std::abs(pred), 1e-300);
    const double rel = std::abs(fit - pred) / denom;
    os << k << "," << fmt17(xi(k)) << "," << fmt17(lambda[k]) << "," << fmt17(pred) << ","
       << fmt17(fit) << "," << fmt17(rel) << "\n";
  }
  return os.str();
}

}  // namespace pd::flow
