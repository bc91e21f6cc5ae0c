#include "pd/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pd/io_util.hpp"

namespace pd::nn {
namespace {

using json = nlohmann::json;

constexpr const char* kCheckpointFormat = "pdlab-mlp";
constexpr int kCheckpointVersion = 1;

double leaky(double x, double slope) { return x >= 0.0 ? x : slope * x; }
double leaky_deriv(double x, double slope) { return x >= 0.0 ? 1.0 : slope; }

}  // namespace

MlpModel MlpModel::create(std::vector<int> dims, Rng& rng, double leaky_slope,
                          bool final_tanh, bool use_bias) {
  if (dims.size() < 2) throw ShapeMismatch("MlpModel: need at least input and output dims");
  for (int d : dims)
    if (d < 1) throw ShapeMismatch("MlpModel: layer dims must be positive");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("MlpModel: leaky slope must lie in (0, 1)");
  MlpModel m;
  m.layer_dims = std::move(dims);
  m.leaky_slope = leaky_slope;
  m.final_tanh = final_tanh;
  m.use_bias = use_bias;
  for (int l = 0; l < m.n_layers(); ++l) {
    const int fan_in = m.layer_dims[l], fan_out = m.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<size_t>(fan_out) * fan_in);
    for (double& x : w) x = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(fan_out, 0.0);
  }
  return m;
}

std::vector<std::vector<double>*> MlpModel::parameters() {
  std::vector<std::vector<double>*> out;
  for (int l = 0; l < n_layers(); ++l) {
    out.push_back(&weights[l]);
    if (use_bias) out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const std::vector<double>*> MlpModel::parameters() const {
  std::vector<const std::vector<double>*> out;
  for (int l = 0; l < n_layers(); ++l) {
    out.push_back(&weights[l]);
    if (use_bias) out.push_back(&biases[l]);
  }
  return out;
}

void MlpModel::validate() const {
  if (layer_dims.size() < 2 || weights.size() != biases.size() ||
      static_cast<int>(weights.size()) != n_layers())
    throw ShapeMismatch("MlpModel: inconsistent layer bookkeeping");
  for (int l = 0; l < n_layers(); ++l) {
    const size_t want = static_cast<size_t>(layer_dims[l]) * layer_dims[l + 1];
    if (weights[l].size() != want || biases[l].size() != static_cast<size_t>(layer_dims[l + 1]))
      throw ShapeMismatch("MlpModel: parameter shape mismatch");
    for (double v : weights[l])
      if (!std::isfinite(v)) throw NonFiniteValue("MlpModel: non-finite weight");
    for (double v : biases[l])
      if (!std::isfinite(v)) throw NonFiniteValue("MlpModel: non-finite bias");
  }
}

ForwardCache forward_cached(const MlpModel& m, std::span<const double> batch, int batch_size) {
  if (batch_size < 1) throw ShapeMismatch("forward: batch_size must be >= 1");
  if (batch.size() != static_cast<size_t>(batch_size) * m.in_dim())
    throw ShapeMismatch("forward: batch size does not match input width");
  ForwardCache cache;
  cache.batch = batch_size;
  cache.act.emplace_back(batch.begin(), batch.end());
  for (int l = 0; l < m.n_layers(); ++l) {
    const int in = m.layer_dims[l], out = m.layer_dims[l + 1];
    const std::vector<double>& a = cache.act.back();
    std::vector<double> pre(static_cast<size_t>(batch_size) * out);
    for (int b = 0; b < batch_size; ++b) {
      const double* row = a.data() + static_cast<size_t>(b) * in;
      double* prow = pre.data() + static_cast<size_t>(b) * out;
      for (int o = 0; o < out; ++o) {
        const double* wrow = m.weights[l].data() + static_cast<size_t>(o) * in;
        double s = m.use_bias ? m.biases[l][o] : 0.0;
        for (int i = 0; i < in; ++i) s += wrow[i] * row[i];
        prow[o] = s;
      }
    }
    std::vector<double> act(pre.size());
    const bool last = l == m.n_layers() - 1;
    if (last && m.final_tanh) {
      for (size_t i = 0; i < pre.size(); ++i) act[i] = std::tanh(pre[i]);
    } else if (last) {
      act = pre;
    } else {
      for (size_t i = 0; i < pre.size(); ++i) act[i] = leaky(pre[i], m.leaky_slope);
    }
    cache.pre.push_back(std::move(pre));
    cache.act.push_back(std::move(act));
  }
  return cache;
}

std::vector<double> forward(const MlpModel& m, std::span<const double> batch, int batch_size) {
  return forward_cached(m, batch, batch_size).act.back();
}

std::vector<const std::vector<double>*> Gradients::parameters(bool use_bias) const {
  std::vector<const std::vector<double>*> out;
  for (size_t l = 0; l < weight_grads.size(); ++l) {
    out.push_back(&weight_grads[l]);
    if (use_bias) out.push_back(&bias_grads[l]);
  }
  return out;
}

Gradients backward(const MlpModel& m, const ForwardCache& cache,
                   std::span<const double> upstream) {
  const int batch = cache.batch;
  if (upstream.size() != static_cast<size_t>(batch) * m.out_dim())
    throw ShapeMismatch("backward: upstream shape does not match output");
  if (cache.pre.size() != static_cast<size_t>(m.n_layers()))
    throw ShapeMismatch("backward: cache does not match model depth");

  Gradients g;
  g.weight_grads.resize(m.n_layers());
  g.bias_grads.resize(m.n_layers());

  std::vector<double> delta(upstream.begin(), upstream.end());
  for (int l = m.n_layers() - 1; l >= 0; --l) {
    const int in = m.layer_dims[l], out = m.layer_dims[l + 1];
    const bool last = l == m.n_layers() - 1;
    if (last && m.final_tanh) {
      for (int i = 0; i < batch * out; ++i) {
        const double t = std::tanh(cache.pre[l][i]);
        delta[i] *= 1.0 - t * t;
      }
    } else if (!last) {
      for (int i = 0; i < batch * out; ++i)
        delta[i] *= leaky_deriv(cache.pre[l][i], m.leaky_slope);
    }
    g.weight_grads[l].assign(static_cast<size_t>(out) * in, 0.0);
    g.bias_grads[l].assign(out, 0.0);
    const std::vector<double>& a = cache.act[l];
    for (int b = 0; b < batch; ++b) {
      const double* arow = a.data() + static_cast<size_t>(b) * in;
      const double* drow = delta.data() + static_cast<size_t>(b) * out;
      for (int o = 0; o < out; ++o) {
        double* wrow = g.weight_grads[l].data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) wrow[i] += drow[o] * arow[i];
        g.bias_grads[l][o] += drow[o];
      }
    }
    std::vector<double> prev(static_cast<size_t>(batch) * in, 0.0);
    for (int b = 0; b < batch; ++b) {
      const double* drow = delta.data() + static_cast<size_t>(b) * out;
      double* prow = prev.data() + static_cast<size_t>(b) * in;
      for (int o = 0; o < out; ++o) {
        const double* wrow = m.weights[l].data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) prow[i] += drow[o] * wrow[i];
      }
    }
    delta = std::move(prev);
  }
  g.input_grads = std::move(delta);
  return g;
}

AdamState AdamState::for_model(const MlpModel& model, double lr, double beta1, double beta2,
                               double eps_div) {
  if (lr <= 0.0 || eps_div <= 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("AdamState: hyperparameters out of range");
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps_div = eps_div;
  for (const auto* p : model.parameters()) {
    s.m.emplace_back(p->size(), 0.0);
    s.v.emplace_back(p->size(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, MlpModel& model, const Gradients& grads, bool maximize) {
  auto params = model.parameters();
  auto gs = grads.parameters(model.use_bias);
  if (params.size() != gs.size() || params.size() != state.m.size())
    throw ShapeMismatch("adam_step: parameter/gradient/state arity mismatch");
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (size_t p = 0; p < params.size(); ++p) {
    std::vector<double>& w = *params[p];
    const std::vector<double>& gvec = *gs[p];
    if (w.size() != gvec.size() || w.size() != state.m[p].size())
      throw ShapeMismatch("adam_step: shape mismatch in parameter group");
    std::vector<double>& mm = state.m[p];
    std::vector<double>& vv = state.v[p];
    for (size_t i = 0; i < w.size(); ++i) {
      const double g = maximize ? -gvec[i] : gvec[i];
      mm[i] = state.beta1 * mm[i] + (1.0 - state.beta1) * g;
      vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * g * g;
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps_div);
    }
  }
}

std::string checkpoint_string(const MlpModel& m) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["layer_dims"] = m.layer_dims;
  j["leaky_slope"] = m.leaky_slope;
  j["final_tanh"] = m.final_tanh;
  j["use_bias"] = m.use_bias;
  j["weights"] = m.weights;
  j["biases"] = m.biases;
  return j.dump(2) + "\n";
}

void save_checkpoint(const MlpModel& m, const std::filesystem::path& path) {
  write_text_atomic(path, checkpoint_string(m));
}

MlpModel load_checkpoint_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("checkpoint parse error: ") + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat)
    throw IoError("checkpoint: unknown format tag");
  if (j.value("version", 0) != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version");
  MlpModel m;
  try {
    m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    m.leaky_slope = j.at("leaky_slope").get<double>();
    m.final_tanh = j.at("final_tanh").get<bool>();
    m.use_bias = j.at("use_bias").get<bool>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint field error: ") + e.what());
  }
  m.validate();
  return m;
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_string(read_text(path));
}

}  // namespace pd::nn
