#include "pd/gan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>

#include "pd/io_util.hpp"

namespace pd::gan {
namespace {

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

/// grads <- grads + scale * other, across every parameter group.
void accumulate(nn::Gradients& g, double scale, const nn::Gradients& other) {
  for (size_t l = 0; l < g.weight_grads.size(); ++l) {
    axpy(g.weight_grads[l], scale, other.weight_grads[l]);
    axpy(g.bias_grads[l], scale, other.bias_grads[l]);
  }
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::vector<double> MixtureSpec::means() const {
  validate();
  std::vector<double> m(static_cast<size_t>(k) * dim, 0.0);
  for (int i = 0; i < k; ++i) {
    const double a = 2.0 * std::numbers::pi * i / k;
    m[static_cast<size_t>(i) * dim] = radius * std::cos(a);
    m[static_cast<size_t>(i) * dim + 1] = radius * std::sin(a);
  }
  return m;
}

void MixtureSpec::validate() const {
  if (k < 1 || radius <= 0.0 || component_std < 0.0 || dim != 2)
    throw std::invalid_argument("MixtureSpec: need k >= 1, radius > 0, std >= 0, dim == 2");
}

std::vector<double> sample_mixture(const MixtureSpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("sample_mixture: n must be >= 1");
  const std::vector<double> mu = spec.means();
  std::vector<double> out(static_cast<size_t>(n) * spec.dim);
  for (int i = 0; i < n; ++i) {
    const auto c = rng.uniform_int(static_cast<std::uint64_t>(spec.k));
    for (int j = 0; j < spec.dim; ++j)
      out[static_cast<size_t>(i) * spec.dim + j] =
          mu[c * spec.dim + j] + spec.component_std * rng.normal();
  }
  return out;
}

Coverage mode_coverage(std::span<const double> samples, const MixtureSpec& spec,
                       double threshold) {
  spec.validate();
  if (threshold <= 0.0) threshold = 3.0 * spec.component_std;
  const int n = static_cast<int>(samples.size()) / spec.dim;
  if (n < 1 || samples.size() != static_cast<size_t>(n) * spec.dim)
    throw ShapeMismatch("mode_coverage: sample array is not n x dim");
  const std::vector<double> mu = spec.means();
  const double t2 = threshold * threshold;
  std::vector<int> per_mode(spec.k, 0);
  int hq = 0;
  for (int i = 0; i < n; ++i) {
    bool near_any = false;
    for (int c = 0; c < spec.k; ++c) {
      double d2 = 0.0;
      for (int j = 0; j < spec.dim; ++j) {
        const double d = samples[static_cast<size_t>(i) * spec.dim + j] -
                         mu[static_cast<size_t>(c) * spec.dim + j];
        d2 += d * d;
      }
      if (d2 <= t2) {
        ++per_mode[c];
        near_any = true;
      }
    }
    if (near_any) ++hq;
  }
  Coverage cov;
  for (int c = 0; c < spec.k; ++c)
    if (100L * per_mode[c] >= n) ++cov.covered;
  cov.high_quality_fraction = static_cast<double>(hq) / n;
  return cov;
}

std::vector<double> kde_grid(std::span<const double> samples, double bandwidth,
                             double xmin, double xmax, double ymin, double ymax, int m) {
  if (bandwidth <= 0.0) throw std::invalid_argument("kde_grid: bandwidth must be positive");
  if (m < 1 || xmax <= xmin || ymax <= ymin)
    throw std::invalid_argument("kde_grid: bad grid geometry");
  const int n = static_cast<int>(samples.size()) / 2;
  if (samples.empty() || samples.size() != static_cast<size_t>(n) * 2)
    throw ShapeMismatch("kde_grid: sample array is not n x 2");
  const double dx = (xmax - xmin) / m, dy = (ymax - ymin) / m;
  std::vector<double> grid(static_cast<size_t>(m) * m, 0.0);
  const double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (int gy = 0; gy < m; ++gy) {
    const double cy = ymin + (gy + 0.5) * dy;
    for (int gx = 0; gx < m; ++gx) {
      const double cx = xmin + (gx + 0.5) * dx;
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double ddx = cx - samples[static_cast<size_t>(i) * 2];
        const double ddy = cy - samples[static_cast<size_t>(i) * 2 + 1];
        s += std::exp(-(ddx * ddx + ddy * ddy) * inv2b2);
      }
      grid[static_cast<size_t>(gy) * m + gx] = s;
    }
  }
  double total = 0.0;
  for (double v : grid) total += v;
  const double cell = dx * dy;
  if (total * cell > 0.0)
    for (double& v : grid) v /= total * cell;
  return grid;
}

namespace {

/// Pairwise feature-space energy terms shared by both losses. Feature
/// gradients are accumulated into d_fx / d_fg (either may be null).
struct EnergyAccum {
  double value = 0.0;
};

EnergyAccum feature_energy(const KernelSpec& k, const std::vector<double>& fx, int nx,
                           const std::vector<double>& fg, int ng, int fdim,
                           std::vector<double>* d_fx, std::vector<double>* d_fg,
                           bool data_self_term) {
  EnergyAccum acc;
  std::vector<double> g(fdim);
  const auto row = [fdim](const std::vector<double>& v, int i) {
    return std::span<const double>(v.data() + static_cast<size_t>(i) * fdim, fdim);
  };
  const double c_cross = -2.0 / (static_cast<double>(nx) * ng);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ng; ++j) {
      acc.value += c_cross * eval(k, row(fx, i), row(fg, j));
      if (d_fx || d_fg) {
        grad(k, row(fx, i), row(fg, j), g);
        if (d_fx)
          for (int c = 0; c < fdim; ++c) (*d_fx)[static_cast<size_t>(i) * fdim + c] += c_cross * g[c];
        if (d_fg)
          for (int c = 0; c < fdim; ++c) (*d_fg)[static_cast<size_t>(j) * fdim + c] -= c_cross * g[c];
      }
    }
  const auto self_term = [&](const std::vector<double>& f, int n, std::vector<double>* d) {
    if (n < 2) return;
    const double c_self = 2.0 / (static_cast<double>(n) * (n - 1));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        acc.value += c_self * eval(k, row(f, i), row(f, j));
        if (d) {
          grad(k, row(f, i), row(f, j), g);
          for (int c = 0; c < fdim; ++c) {
            (*d)[static_cast<size_t>(i) * fdim + c] += c_self * g[c];
            (*d)[static_cast<size_t>(j) * fdim + c] -= c_self * g[c];
          }
        }
      }
  };
  if (data_self_term) self_term(fx, nx, d_fx);
  self_term(fg, ng, d_fg);
  return acc;
}

}  // namespace

GeneratorLoss loss_G(const nn::MlpModel& D, const nn::MlpModel& G,
                     std::span<const double> data_batch, int n_data,
                     std::span<const double> latent_batch, int n_latent,
                     const KernelSpec& k) {
  const int fdim = D.out_dim();
  nn::ForwardCache gcache = nn::forward_cached(G, latent_batch, n_latent);
  nn::ForwardCache dx = nn::forward_cached(D, data_batch, n_data);
  nn::ForwardCache dg = nn::forward_cached(D, gcache.output(), n_latent);

  std::vector<double> d_fg(static_cast<size_t>(n_latent) * fdim, 0.0);
  // The data self-energy is constant in G; Eq-style loss omits it.
  const EnergyAccum acc = feature_energy(k, dx.output(), n_data, dg.output(), n_latent,
                                         fdim, nullptr, &d_fg, false);

  GeneratorLoss out;
  out.value = acc.value;
  nn::Gradients through_d = nn::backward(D, dg, d_fg);
  out.gen_point_grads = through_d.input_grads;
  out.g_grads = nn::backward(G, gcache, out.gen_point_grads);
  return out;
}

DiscriminatorLoss loss_D(const nn::MlpModel& D, const nn::MlpModel& G,
                         std::span<const double> data_batch, int n_data,
                         std::span<const double> latent_batch, int n_latent,
                         const KernelSpec& k) {
  const int fdim = D.out_dim();
  nn::ForwardCache gcache = nn::forward_cached(G, latent_batch, n_latent);
  nn::ForwardCache dx = nn::forward_cached(D, data_batch, n_data);
  nn::ForwardCache dg = nn::forward_cached(D, gcache.output(), n_latent);

  std::vector<double> d_fx(static_cast<size_t>(n_data) * fdim, 0.0);
  std::vector<double> d_fg(static_cast<size_t>(n_latent) * fdim, 0.0);
  const EnergyAccum acc =
      feature_energy(k, dx.output(), n_data, dg.output(), n_latent, fdim, &d_fx, &d_fg, true);

  DiscriminatorLoss out;
  out.value = acc.value;
  out.d_grads = nn::backward(D, dx, d_fx);
  nn::Gradients via_gen = nn::backward(D, dg, d_fg);
  accumulate(out.d_grads, 1.0, via_gen);
  out.d_grads.input_grads.clear();
  return out;
}

DiscriminatorLoss loss_D_stabilized(const nn::MlpModel& D, const nn::MlpModel& G,
                                    std::span<const double> data_batch, int n_data,
                                    std::span<const double> latent_batch, int n_latent,
                                    const KernelSpec& k, const KernelSpec& s, double eps) {
  if (eps < 0.0) throw std::invalid_argument("loss_D_stabilized: eps must be >= 0");
  DiscriminatorLoss a = loss_D(D, G, data_batch, n_data, latent_batch, n_latent, k);
  if (eps == 0.0) return a;
  const DiscriminatorLoss b = loss_D(D, G, data_batch, n_data, latent_batch, n_latent, s);
  a.value -= eps * b.value;
  accumulate(a.d_grads, -eps, b.d_grads);
  return a;
}

KernelSpec TrainConfig::default_loss_kernel() {
  return KernelSpec::sum({{1.0, KernelSpec::rescaled_gaussian(4.0)},
                          {1.0, KernelSpec::rescaled_gaussian(8.0)},
                          {1.0, KernelSpec::rescaled_gaussian(16.0)}});
}

KernelSpec TrainConfig::default_stabilizer() {
  return KernelSpec::sum({{1.0, KernelSpec::rescaled_gaussian(1.0)},
                          {1.0, KernelSpec::rescaled_gaussian(std::numbers::sqrt2)},
                          {1.0, KernelSpec::rescaled_gaussian(2.0)}});
}

void TrainConfig::validate() const {
  if (epochs < 1 || n_critic < 1 || latent_dim < 1 || eval_points < 1)
    throw std::invalid_argument("TrainConfig: counts must be positive");
  if (batch_size < 2)
    throw std::invalid_argument("TrainConfig: batch_size must be >= 2 for the U-statistic terms");
  if (lr <= 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("TrainConfig: bad optimizer hyperparameters");
  if (d_init_gain <= 0.0)
    throw std::invalid_argument("TrainConfig: d_init_gain must be positive");
  if (g_init_gain <= 0.0)
    throw std::invalid_argument("TrainConfig: g_init_gain must be positive");
  if (stabilizer && epsilon <= 0.0)
    throw std::invalid_argument("TrainConfig: stabilizer requires eps > 0");
  if (d_dims.size() < 2 || g_dims.size() < 2)
    throw std::invalid_argument("TrainConfig: network dims incomplete");
  if (g_dims.front() != latent_dim)
    throw std::invalid_argument("TrainConfig: generator input width must equal latent_dim");
  if (g_dims.back() != d_dims.front())
    throw std::invalid_argument("TrainConfig: generator output width must match D input");
}

double TrainRun::feature_distance_oscillation() const {
  if (records.size() < 2) return 0.0;
  std::vector<double> tail;
  for (size_t i = records.size() / 2; i < records.size(); ++i)
    if (finite(records[i].feature_distance)) tail.push_back(records[i].feature_distance);
  if (tail.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted = tail;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double amp = 0.0;
  for (double v : tail) amp = std::max(amp, std::abs(v - median));
  return amp;
}

std::string TrainRun::metrics_csv() const {
  std::ostringstream os;
  os << "epoch,loss_g,loss_d,feature_distance,coverage,high_quality\n";
  for (const auto& r : records)
    os << r.epoch << "," << fmt17(r.loss_g) << "," << fmt17(r.loss_d) << ","
       << fmt17(r.feature_distance) << "," << r.coverage << "," << fmt17(r.high_quality) << "\n";
  return os.str();
}

namespace {

// --------------------------------------------------------------- fast path
//
// The default loss kernel (rescaled Gaussians, sigma {4, 8, 16}) and default
// stabilizer (sigma {1, sqrt2, 2}) share exponent ratios that let every pair
// be evaluated with one exp() per family:
//   base: u = exp(-r2/512); e_b = u^16/4 + u^4/8 + u/16
//   stab: v = exp(-r2/8);   e_s = v^4 + v^2/sqrt2 + v/2
// c_* below are derivatives with respect to r2.

struct PairTerms {
  double e_base, e_stab, c;  ///< energies and combined d(e_b - eps e_s)/d r2
};

inline PairTerms pair_terms(double r2, double eps) {
  const double u = std::exp(-r2 * (1.0 / 512.0));
  const double u2 = u * u;
  const double u4 = u2 * u2;
  const double u8 = u4 * u4;
  const double u16 = u8 * u8;
  PairTerms t;
  t.e_base = 0.25 * u16 + 0.125 * u4 + 0.0625 * u;
  t.c = -(0.25 / 32.0) * u16 - (0.125 / 128.0) * u4 - (0.0625 / 512.0) * u;
  t.e_stab = 0.0;
  if (eps != 0.0) {
    const double u32 = u16 * u16;
    const double v = u32 * u32;  // exp(-r2 / 8) without a second exp call
    const double v2 = v * v;
    const double v4 = v2 * v2;
    constexpr double inv_sqrt2 = 0.70710678118654752;
    t.e_stab = v4 + inv_sqrt2 * v2 + 0.5 * v;
    t.c -= eps * (-0.5 * v4 - inv_sqrt2 * 0.25 * v2 - 0.0625 * v);
  }
  return t;
}

struct BlockSums {
  double base = 0.0;
  double stab = 0.0;
};

/// Scratch for the column-side accumulators of one block.
struct BlockScratch {
  std::vector<double> colsum;  // n
  std::vector<double> cta;     // n x f, accumulates c^T A (or C A for self)
  void reset(int n, int f) {
    colsum.assign(n, 0.0);
    cta.assign(static_cast<size_t>(n) * f, 0.0);
  }
};

/// Full na x nb cross block. Adds 2w (rowsum_i a_i - (C b)_i) into d_a and
/// 2w (colsum_j b_j - (C^T a)_j) into d_b (either may be null) in one pass.
BlockSums cross_block(const double* a, int na, const double* b, int nb, int f, double eps,
                      double w, double* d_a, double* d_b, BlockScratch& scr) {
  BlockSums sums;
  if (d_b) scr.reset(nb, f);
  std::vector<double> rowacc(f);
  for (int i = 0; i < na; ++i) {
    const double* ai = a + static_cast<size_t>(i) * f;
    double rowsum = 0.0;
    std::fill(rowacc.begin(), rowacc.end(), 0.0);
    for (int j = 0; j < nb; ++j) {
      const double* bj = b + static_cast<size_t>(j) * f;
      double r2 = 0.0;
      for (int c = 0; c < f; ++c) {
        const double d = ai[c] - bj[c];
        r2 += d * d;
      }
      const PairTerms t = pair_terms(r2, eps);
      sums.base += t.e_base;
      sums.stab += t.e_stab;
      rowsum += t.c;
      if (d_a)
        for (int c = 0; c < f; ++c) rowacc[c] += t.c * bj[c];
      if (d_b) {
        scr.colsum[j] += t.c;
        double* acc = scr.cta.data() + static_cast<size_t>(j) * f;
        for (int c = 0; c < f; ++c) acc[c] += t.c * ai[c];
      }
    }
    if (d_a) {
      double* out = d_a + static_cast<size_t>(i) * f;
      for (int c = 0; c < f; ++c) out[c] += 2.0 * w * (rowsum * ai[c] - rowacc[c]);
    }
  }
  if (d_b) {
    for (int j = 0; j < nb; ++j) {
      double* out = d_b + static_cast<size_t>(j) * f;
      const double* bj = b + static_cast<size_t>(j) * f;
      const double* acc = scr.cta.data() + static_cast<size_t>(j) * f;
      for (int c = 0; c < f; ++c) out[c] += 2.0 * w * (scr.colsum[j] * bj[c] - acc[c]);
    }
  }
  return sums;
}

/// Upper-triangle self block: energies over i < j, gradient of w * sum added
/// into d_a as 2w (rowsum_k a_k - (C a)_k) with C the symmetric zero-diagonal
/// pair matrix.
BlockSums self_block(const double* a, int n, int f, double eps, double w, double* d_a,
                     BlockScratch& scr) {
  BlockSums sums;
  scr.reset(n, f);
  for (int i = 0; i < n; ++i) {
    const double* ai = a + static_cast<size_t>(i) * f;
    double* acc_i = scr.cta.data() + static_cast<size_t>(i) * f;
    for (int j = i + 1; j < n; ++j) {
      const double* aj = a + static_cast<size_t>(j) * f;
      double r2 = 0.0;
      for (int c = 0; c < f; ++c) {
        const double d = ai[c] - aj[c];
        r2 += d * d;
      }
      const PairTerms t = pair_terms(r2, eps);
      sums.base += t.e_base;
      sums.stab += t.e_stab;
      scr.colsum[i] += t.c;
      scr.colsum[j] += t.c;
      double* acc_j = scr.cta.data() + static_cast<size_t>(j) * f;
      for (int c = 0; c < f; ++c) {
        acc_i[c] += t.c * aj[c];
        acc_j[c] += t.c * ai[c];
      }
    }
  }
  for (int k = 0; k < n; ++k) {
    double* out = d_a + static_cast<size_t>(k) * f;
    const double* ak = a + static_cast<size_t>(k) * f;
    const double* acc = scr.cta.data() + static_cast<size_t>(k) * f;
    for (int c = 0; c < f; ++c) out[c] += 2.0 * w * (scr.colsum[k] * ak[c] - acc[c]);
  }
  return sums;
}

bool fast_path_applies(const TrainConfig& cfg) {
  if (!cfg.fast_kernel_path) return false;
  if (cfg.kernel_D.describe() != TrainConfig::default_loss_kernel().describe()) return false;
  if (cfg.stabilizer &&
      cfg.stabilizer->describe() != TrainConfig::default_stabilizer().describe())
    return false;
  return true;
}

}  // namespace

TrainRun train(const TrainConfig& cfg, const MixtureSpec& spec) {
  cfg.validate();
  spec.validate();
  if (cfg.d_dims.front() != spec.dim)
    throw std::invalid_argument("train: D input width must equal the data dimension");

  const double scale =
      cfg.input_scale > 0.0 ? cfg.input_scale : 1.0 / (spec.radius + 4.0 * spec.component_std);

  Rng rng(cfg.seed);
  TrainRun run;
  run.input_scale = scale;
  run.D = nn::MlpModel::create(cfg.d_dims, rng, cfg.leaky_slope, false, true);
  if (cfg.d_init_gain != 1.0)
    for (auto& w : run.D.weights)
      for (double& v : w) v *= cfg.d_init_gain;
  run.G = nn::MlpModel::create(cfg.g_dims, rng, cfg.leaky_slope, cfg.g_final_tanh, true);
  if (cfg.g_init_gain != 1.0)
    for (auto& w : run.G.weights)
      for (double& v : w) v *= cfg.g_init_gain;
  nn::AdamState opt_d = nn::AdamState::for_model(run.D, cfg.lr, cfg.beta1, cfg.beta2);
  nn::AdamState opt_g = nn::AdamState::for_model(run.G, cfg.lr, cfg.beta1, cfg.beta2);

  std::vector<double> eval_latents(static_cast<size_t>(cfg.eval_points) * cfg.latent_dim);
  for (double& v : eval_latents) v = rng.normal();

  const int b = cfg.batch_size;
  const int fdim = run.D.out_dim();
  const int in_dim = run.D.in_dim();
  const bool fused = fast_path_applies(cfg);
  const double eps = cfg.stabilizer ? cfg.epsilon : 0.0;

  const auto draw_data = [&] {
    std::vector<double> x = sample_mixture(spec, b, rng);
    for (double& v : x) v *= scale;
    return x;
  };
  const auto draw_latent = [&] {
    std::vector<double> z(static_cast<size_t>(b) * cfg.latent_dim);
    for (double& v : z) v = rng.normal();
    return z;
  };
  const auto clip_d = [&] {
    if (cfg.d_weight_clip <= 0.0) return;
    const double c = cfg.d_weight_clip;
    for (auto* p : run.D.parameters())
      for (double& w : *p) w = std::clamp(w, -c, c);
  };

  std::vector<double> x_pool = draw_data();
  std::vector<double> z_pool = draw_latent();
  BlockScratch scr;
  std::vector<double> xin(static_cast<size_t>(2 * b) * in_dim);   // [x; G(z)]
  std::vector<double> upstream(static_cast<size_t>(2 * b) * fdim);
  const double w_cross = -2.0 / (static_cast<double>(b) * b);
  const double w_self = 2.0 / (static_cast<double>(b) * (b - 1));

  // Fills xin with [x; G(z)], runs D, splits features, and returns the cache.
  const auto d_forward = [&](const std::vector<double>& x, const std::vector<double>& gz) {
    std::copy(x.begin(), x.end(), xin.begin());
    std::copy(gz.begin(), gz.end(), xin.begin() + static_cast<size_t>(b) * in_dim);
    return nn::forward_cached(run.D, xin, 2 * b);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double last_loss_d = 0.0, last_plain_distance = 0.0;
    for (int c = 0; c < cfg.n_critic && !run.diverged; ++c) {
      if (cfg.resample_data) x_pool = draw_data();
      if (cfg.resample_latents) z_pool = draw_latent();
      if (fused) {
        const std::vector<double> gz = nn::forward(run.G, z_pool, b);
        const nn::ForwardCache dcache = d_forward(x_pool, gz);
        const double* fx = dcache.output().data();
        const double* fg = fx + static_cast<size_t>(b) * fdim;
        std::fill(upstream.begin(), upstream.end(), 0.0);
        double* d_fx = upstream.data();
        double* d_fg = upstream.data() + static_cast<size_t>(b) * fdim;

        const BlockSums cross = cross_block(fx, b, fg, b, fdim, eps, w_cross, d_fx, d_fg, scr);
        const BlockSums self_x = self_block(fx, b, fdim, eps, w_self, d_fx, scr);
        const BlockSums self_g = self_block(fg, b, fdim, eps, w_self, d_fg, scr);

        last_plain_distance = w_cross * cross.base + w_self * (self_x.base + self_g.base);
        last_loss_d = last_plain_distance -
                      eps * (w_cross * cross.stab + w_self * (self_x.stab + self_g.stab));
        if (!finite(last_loss_d)) {
          run.diverged = true;
          run.diverged_epoch = epoch;
          break;
        }
        nn::Gradients grads = nn::backward(run.D, dcache, upstream);
        grads.input_grads.clear();
        nn::adam_step(opt_d, run.D, grads, true);
      } else {
        DiscriminatorLoss ld = loss_D(run.D, run.G, x_pool, b, z_pool, b, cfg.kernel_D);
        last_plain_distance = ld.value;
        if (cfg.stabilizer) {
          const DiscriminatorLoss ls = loss_D(run.D, run.G, x_pool, b, z_pool, b, *cfg.stabilizer);
          ld.value -= cfg.epsilon * ls.value;
          accumulate(ld.d_grads, -cfg.epsilon, ls.d_grads);
        }
        last_loss_d = ld.value;
        if (!finite(ld.value)) {
          run.diverged = true;
          run.diverged_epoch = epoch;
          break;
        }
        nn::adam_step(opt_d, run.D, ld.d_grads, true);
      }
      clip_d();
    }

    double loss_g_val = std::numeric_limits<double>::quiet_NaN();
    if (!run.diverged) {
      if (cfg.resample_data) x_pool = draw_data();
      if (cfg.resample_latents) z_pool = draw_latent();
      if (fused) {
        const nn::ForwardCache gcache = nn::forward_cached(run.G, z_pool, b);
        const nn::ForwardCache dcache = d_forward(x_pool, gcache.output());
        const double* fx = dcache.output().data();
        const double* fg = fx + static_cast<size_t>(b) * fdim;
        std::fill(upstream.begin(), upstream.end(), 0.0);
        double* d_fg = upstream.data() + static_cast<size_t>(b) * fdim;

        const BlockSums cross = cross_block(fx, b, fg, b, fdim, 0.0, w_cross, nullptr, d_fg, scr);
        const BlockSums self_g = self_block(fg, b, fdim, 0.0, w_self, d_fg, scr);
        loss_g_val = w_cross * cross.base + w_self * self_g.base;

        if (!finite(loss_g_val)) {
          run.diverged = true;
          run.diverged_epoch = epoch;
        } else {
          const nn::Gradients through_d = nn::backward(run.D, dcache, upstream);
          const std::span<const double> gen_up(
              through_d.input_grads.data() + static_cast<size_t>(b) * in_dim,
              static_cast<size_t>(b) * in_dim);
          const nn::Gradients g_grads = nn::backward(run.G, gcache, gen_up);
          nn::adam_step(opt_g, run.G, g_grads, false);
        }
      } else {
        const GeneratorLoss lg = loss_G(run.D, run.G, x_pool, b, z_pool, b, cfg.kernel_D);
        loss_g_val = lg.value;
        if (!finite(lg.value)) {
          run.diverged = true;
          run.diverged_epoch = epoch;
        } else {
          nn::adam_step(opt_g, run.G, lg.g_grads, false);
        }
      }
    }

    std::vector<double> samples = nn::forward(run.G, eval_latents, cfg.eval_points);
    bool sample_ok = true;
    for (double& v : samples) {
      if (!finite(v)) sample_ok = false;
      v /= scale;
    }
    Coverage cov;
    if (sample_ok) cov = mode_coverage(samples, spec);
    run.records.push_back({epoch, loss_g_val, last_loss_d, last_plain_distance, cov.covered,
                           cov.high_quality_fraction});
    if (epoch == cfg.epochs - 1 || run.diverged) run.final_samples = std::move(samples);
    if (run.diverged) break;
  }
  return run;
}

}  // namespace pd::gan
