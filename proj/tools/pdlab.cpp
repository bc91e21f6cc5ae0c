#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pd/flow.hpp"
#include "pd/gan.hpp"
#include "pd/io_util.hpp"
#include "pd/kernels.hpp"
#include "pd/nn.hpp"
#include "pd/rng.hpp"
#include "pd/spectral.hpp"
#include "pd/svg.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunWriter {
  fs::path out_dir;
  json config;
  std::string command;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void emit(const std::string& name, const std::string& content) {
    pd::write_text_atomic(out_dir / name, content);
    outputs.push_back(name);
  }

  void finish() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["tool_version"] = PDLAB_VERSION;
    m["outputs"] = outputs;
    m["duration_seconds"] = secs;
    pd::write_text_atomic(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

fs::path resolve_out_dir(const std::string& flag_value, const std::string& command) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("PDLAB_OUT_DIR")) return fs::path(env) / command;
  return fs::path("pdlab_out") / command;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

/// Expands `--config FILE` into explicit --key=value tokens placed before the
/// remaining command-line flags. Keys already present on the command line are
/// skipped, so flags win over file values. Unknown keys surface as ordinary
/// parse errors downstream.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  std::size_t sub_end = args.empty() ? 0 : 1;  // config tokens go after the subcommand
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file path");
      path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + i);
    } else {
      ++i;
    }
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::string> from_file;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line[0] == '[') throw ConfigError("config sections are not supported: " + line);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line is not key=value: " + line);
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') ||
                              (value.front() == '\'' && value.back() == '\'')))
      value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ConfigError("config line has an empty key: " + line);
    const std::string opt = "--" + key;
    bool on_cli = false;
    for (std::size_t i = sub_end; i < args.size(); ++i)
      if (args[i] == opt || args[i].rfind(opt + "=", 0) == 0) {
        on_cli = true;
        break;
      }
    if (on_cli) continue;
    if (value == "true") {
      from_file.push_back(opt);  // flag form
    } else {
      from_file.push_back(opt + "=" + value);
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(std::min(sub_end, args.size())),
              from_file.begin(), from_file.end());
  return args;
}

pd::KernelSpec parse_kernel_or_fail(const std::string& text) {
  try {
    return pd::parse_kernel(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

pd::Direction parse_direction(const std::string& d) {
  if (d == "generator" || d == "gen") return pd::Direction::Generator;
  if (d == "discriminator" || d == "disc") return pd::Direction::Discriminator;
  throw ConfigError("direction must be one of: generator, gen, discriminator, disc");
}

// ---------------------------------------------------------------- spectrum

int cmd_spectrum(const std::string& kernel_text, double C, int dim, double half_width,
                 int grid_points, const std::string& out_flag) {
  const pd::KernelSpec k = parse_kernel_or_fail(kernel_text);
  RunWriter rw;
  rw.command = "spectrum";
  rw.out_dir = resolve_out_dir(out_flag, "spectrum");
  rw.config = {{"kernel", k.describe()}, {"C", C},       {"dim", dim},
               {"half_width", half_width}, {"grid_points", grid_points}};

  pd::spectral::SpectrumReport rep;
  try {
    rep = pd::spectral::build_report(k, C, dim, half_width, grid_points);
  } catch (const pd::spectral::GridTooCoarse& e) {
    throw ConfigError(std::string(e.what()) +
                      " (hint: raise --points or shrink --half-width)");
  }
  rw.emit("spectrum.csv", rep.to_csv());
  rw.emit("spectrum_summary.json", rep.summary_json());
  rw.finish();
  const auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::cout << "verdicts: generator=" << lower(pd::spectral::to_string(rep.verdict_gen))
            << " discriminator=" << lower(pd::spectral::to_string(rep.verdict_disc)) << "\n";
  for (const auto& d : rep.discrepancies) std::cout << "discrepancy: " << d << "\n";
  for (const auto& n : rep.notes) std::cout << "note: " << n << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- flow

int cmd_flow(const std::string& kernel_text, const std::string& direction, double dt,
             int steps, int record_every, int n_real, int n_gen, double gen_spread,
             std::uint64_t seed, bool svg_frames, const std::string& out_flag) {
  if (dt <= 0.0 && dt != -1.0) throw ConfigError("--dt must be positive");
  if (steps < 1) throw ConfigError("--steps must be >= 1");
  if (n_real < 1 || n_gen < 1) throw ConfigError("cloud sizes must be >= 1");

  const pd::KernelSpec k = parse_kernel_or_fail(kernel_text);
  const pd::Direction dir = parse_direction(direction);

  pd::Rng rng(seed);
  pd::gan::MixtureSpec mix;
  pd::flow::ParticleSystem sys;
  sys.dim = 2;
  sys.real_points = pd::gan::sample_mixture(mix, n_real, rng);
  sys.gen_points.resize(static_cast<size_t>(n_gen) * 2);
  for (double& v : sys.gen_points) v = gen_spread * rng.normal();

  pd::flow::FlowConfig cfg;
  cfg.kernel = k;
  cfg.direction = dir;
  if (dt > 0.0) cfg.dt = dt;
  cfg.steps = steps;
  cfg.record_every = record_every;

  RunWriter rw;
  rw.command = "flow";
  rw.out_dir = resolve_out_dir(out_flag, "flow");
  rw.seed = seed;
  rw.config = {{"kernel", k.describe()},   {"direction", pd::to_string(dir)},
               {"dt", dt},                 {"steps", steps},
               {"record_every", record_every}, {"n_real", n_real},
               {"n_gen", n_gen},           {"gen_spread", gen_spread},
               {"seed", seed},             {"svg", svg_frames}};

  const pd::flow::Trajectory traj = pd::flow::simulate(sys, cfg);
  rw.emit("trajectory.csv", traj.to_csv(2));

  bool monotone_nonincreasing = true, monotone_nondecreasing = true;
  for (size_t i = 1; i < traj.records.size(); ++i) {
    if (traj.records[i].energy > traj.records[i - 1].energy) monotone_nonincreasing = false;
    if (traj.records[i].energy < traj.records[i - 1].energy) monotone_nondecreasing = false;
  }
  json summary = {{"final_energy", traj.final_energy()},
                  {"initial_energy", traj.initial_energy()},
                  {"diverged", traj.diverged},
                  {"diverged_step", traj.diverged_step},
                  {"dt", traj.dt},
                  {"steps_run", traj.steps_run},
                  {"monotone_nonincreasing", monotone_nonincreasing},
                  {"monotone_nondecreasing", monotone_nondecreasing}};
  rw.emit("flow_summary.json", summary.dump(2) + "\n");

  if (svg_frames && !traj.records.empty()) {
    const auto frame = [&](const pd::flow::TrajectoryRecord& r, const std::string& name) {
      std::vector<pd::svg::ScatterGroup> gs(2);
      gs[0].points = sys.real_points;
      gs[0].color = "#1f6fb4";
      gs[1].points = r.gen_points;
      gs[1].color = "#c23b22";
      rw.emit(name, pd::svg::scatter(gs, -3.2, 3.2, -3.2, 3.2, 480, 480,
                                     "t=" + pd::fmt17(r.t)));
    };
    frame(traj.records.front(), "frame_first.svg");
    frame(traj.records.back(), "frame_last.svg");
  }
  rw.finish();
  std::cout << "final energy " << pd::fmt17(traj.final_energy())
            << (traj.diverged ? " (diverged)" : "") << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- perturb

int cmd_perturb(const std::string& kernel_text, const std::string& direction, double c0,
                double length, int points, double dt, int steps, int record_every,
                const std::string& out_flag) {
  if (c0 < 0.0) throw ConfigError("--c0 must be >= 0");
  if (dt <= 0.0) throw ConfigError("--dt must be positive");
  if (steps < 2) throw ConfigError("--steps must be >= 2");

  const pd::KernelSpec k = parse_kernel_or_fail(kernel_text);
  const pd::Direction dir = parse_direction(direction);

  double L = length;
  int M = points;
  if (L <= 0.0 || M <= 0) {
    const auto [dl, dm] = pd::spectral::default_grid(k);
    if (L <= 0.0) L = dl;
    if (M <= 0) M = dm;
  }

  RunWriter rw;
  rw.command = "perturb";
  rw.out_dir = resolve_out_dir(out_flag, "perturb");
  rw.config = {{"kernel", k.describe()}, {"direction", pd::to_string(dir)}, {"C0", c0},
               {"length", L},            {"points", M},                     {"dt", dt},
               {"steps", steps},         {"record_every", record_every}};

  pd::flow::GridPerturbation p;
  p.kernel = k;
  p.length = L;
  p.background_C0 = c0;
  // Broadband initial field: every mode seeded so every exponent is measurable.
  pd::Rng rng(12345);
  p.grid_values.resize(M);
  for (double& v : p.grid_values) v = 1e-3 * rng.normal();

  pd::flow::ModeHistory hist;
  try {
    hist = pd::flow::linearized_sim(p, dir, dt, steps, record_every);
  } catch (const pd::spectral::GridTooCoarse& e) {
    throw ConfigError(std::string(e.what()) +
                      " (hint: raise --points or shrink --length)");
  }
  rw.emit("modes.csv", hist.to_csv());

  // Modes below the sign floor are neutral: their rates are grid-spectrum
  // roundoff, not resolved growth or decay.
  double peak = 0.0;
  for (int kk = 1; kk <= hist.points / 2; ++kk)
    peak = std::max(peak, std::abs(hist.predicted_omega[kk]));
  const double floor = 1e-9 * peak;
  int growing = 0, decaying = 0, neutral = 0;
  for (int kk = 1; kk <= hist.points / 2; ++kk) {
    if (hist.predicted_omega[kk] > floor)
      ++growing;
    else if (hist.predicted_omega[kk] < -floor)
      ++decaying;
    else
      ++neutral;
  }
  json summary = {{"modes_growing", growing},
                  {"modes_decaying", decaying},
                  {"modes_neutral", neutral},
                  {"length", hist.length},
                  {"points", hist.points},
                  {"dt", hist.dt}};
  rw.emit("perturb_summary.json", summary.dump(2) + "\n");
  rw.finish();
  std::cout << "modes growing " << growing << ", decaying " << decaying << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- train

int cmd_train(pd::gan::TrainConfig cfg, bool no_stabilizer,
              const std::string& kernel_text, const std::string& stab_text,
              const std::string& out_flag) {
  if (!kernel_text.empty()) cfg.kernel_D = parse_kernel_or_fail(kernel_text);
  if (!stab_text.empty()) cfg.stabilizer = parse_kernel_or_fail(stab_text);
  if (no_stabilizer) cfg.stabilizer.reset();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  pd::gan::MixtureSpec spec;

  RunWriter rw;
  rw.command = "train";
  rw.out_dir = resolve_out_dir(out_flag, "train");
  rw.seed = cfg.seed;
  rw.config = {{"kernel", cfg.kernel_D.describe()},
               {"stabilizer", cfg.stabilizer ? cfg.stabilizer->describe() : ""},
               {"epsilon", cfg.epsilon},
               {"lr", cfg.lr},
               {"beta1", cfg.beta1},
               {"beta2", cfg.beta2},
               {"epochs", cfg.epochs},
               {"batch_size", cfg.batch_size},
               {"n_critic", cfg.n_critic},
               {"resample_data", cfg.resample_data},
               {"resample_latents", cfg.resample_latents},
               {"d_init_gain", cfg.d_init_gain},
               {"eval_points", cfg.eval_points},
               {"seed", cfg.seed}};

  const pd::gan::TrainRun run = pd::gan::train(cfg, spec);
  rw.emit("metrics.csv", run.metrics_csv());

  {
    std::ostringstream os;
    os << "x,y\n";
    for (size_t i = 0; i + 1 < run.final_samples.size(); i += 2)
      os << pd::fmt17(run.final_samples[i]) << "," << pd::fmt17(run.final_samples[i + 1]) << "\n";
    rw.emit("gen_samples.csv", os.str());
  }

  pd::nn::save_checkpoint(run.G, rw.out_dir / "g_checkpoint.json");
  rw.outputs.push_back("g_checkpoint.json");
  pd::nn::save_checkpoint(run.D, rw.out_dir / "d_checkpoint.json");
  rw.outputs.push_back("d_checkpoint.json");

  if (!run.final_samples.empty()) {
    bool finite_samples = true;
    for (double v : run.final_samples)
      if (!std::isfinite(v)) finite_samples = false;
    if (finite_samples) {
      const auto grid = pd::gan::kde_grid(run.final_samples, 0.12, -3.2, 3.2, -3.2, 3.2, 64);
      rw.emit("kde.svg", pd::svg::heatmap(grid, 64, -3.2, 3.2, -3.2, 3.2, 480, 480,
                                          "generated density"));
      pd::Rng rng(cfg.seed + 1);
      std::vector<pd::svg::ScatterGroup> gs(2);
      gs[0].points = pd::gan::sample_mixture(spec, 2000, rng);
      gs[0].color = "#1f6fb4";
      gs[1].points = run.final_samples;
      gs[1].color = "#c23b22";
      rw.emit("scatter.svg",
              pd::svg::scatter(gs, -3.2, 3.2, -3.2, 3.2, 480, 480, "data vs generated"));
    }
  }

  const auto& last = run.records.back();
  json summary = {{"diverged", run.diverged},
                  {"diverged_epoch", run.diverged_epoch},
                  {"final_coverage", last.coverage},
                  {"final_high_quality", last.high_quality},
                  {"feature_distance_oscillation", run.feature_distance_oscillation()},
                  {"epochs_recorded", run.records.size()}};
  rw.emit("train_summary.json", summary.dump(2) + "\n");
  rw.finish();
  std::cout << "coverage " << last.coverage << "/" << spec.k << ", high quality "
            << pd::fmt17(last.high_quality) << (run.diverged ? " (diverged)" : "") << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- epsilon

int cmd_epsilon(const std::string& base_text, const std::string& stab_text, double xi_min,
                double xi_max, int xi_points, int dim, const std::string& out_flag) {
  if (xi_min <= 0.0 || xi_max <= xi_min || xi_points < 2)
    throw ConfigError("need 0 < --xi-min < --xi-max and --xi-points >= 2");
  const pd::KernelSpec base = parse_kernel_or_fail(base_text);
  const pd::KernelSpec stab = parse_kernel_or_fail(stab_text);

  std::vector<double> grid(xi_points);
  const double lmin = std::log(xi_min), lmax = std::log(xi_max);
  for (int i = 0; i < xi_points; ++i)
    grid[i] = std::exp(lmin + (lmax - lmin) * i / (xi_points - 1));

  RunWriter rw;
  rw.command = "epsilon";
  rw.out_dir = resolve_out_dir(out_flag, "epsilon");
  rw.config = {{"base", base.describe()}, {"stabilizer", stab.describe()},
               {"xi_min", xi_min},        {"xi_max", xi_max},
               {"xi_points", xi_points},  {"dim", dim}};

  pd::spectral::StabilizerSolution sol;
  try {
    sol = pd::spectral::minimal_epsilon(base, stab, grid, dim);
  } catch (const pd::spectral::StabilizerInvalid& e) {
    throw ConfigError(e.what());
  }

  {
    std::ostringstream os;
    os << "xi,ratio\n";
    for (size_t i = 0; i < sol.grid.size(); ++i)
      os << pd::fmt17(sol.grid[i]) << "," << pd::fmt17(sol.ratio[i]) << "\n";
    rw.emit("ratio.csv", os.str());
  }
  json summary = {{"epsilon_min", sol.epsilon_min},
                  {"certified_epsilon", sol.certified_epsilon},
                  {"margin", sol.margin}};
  rw.emit("epsilon.json", summary.dump(2) + "\n");
  rw.finish();
  std::cout << "epsilon_min " << pd::fmt17(sol.epsilon_min) << "\n";
  std::cout << "certified epsilon " << pd::fmt17(sol.certified_epsilon) << " (margin "
            << pd::fmt17(sol.margin) << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle-distance lab: spectra, flows, perturbations, adversarial training"};
  app.require_subcommand(1);

  std::string kernel_text, direction = "generator", out_dir;
  std::uint64_t seed = 0;

  // spectrum
  auto* sp = app.add_subcommand("spectrum", "kernel Fourier sign analysis and verdicts");
  double sp_c = 1.0, sp_half = 0.0;
  int sp_dim = 2, sp_points = 0;
  std::string sp_kernel, sp_out;
  sp->add_option("--kernel", sp_kernel, "kernel spec")->required();
  sp->add_option("--c", sp_c, "background density constant");
  sp->add_option("--dim", sp_dim, "ambient dimension");
  sp->add_option("--half-width", sp_half, "oracle half width (0 = auto)");
  sp->add_option("--points", sp_points, "oracle grid points (0 = auto)");
  sp->add_option("--out-dir", sp_out, "output directory");

  // flow
  auto* fl = app.add_subcommand("flow", "particle descent/ascent simulation");
  std::string fl_kernel = "gaussian:sigma=1", fl_dir = "generator", fl_out;
  double fl_dt = -1.0, fl_spread = 0.5;
  int fl_steps = 2000, fl_rec = 10, fl_nreal = 200, fl_ngen = 200;
  std::uint64_t fl_seed = 0;
  bool fl_svg = false;
  fl->add_option("--kernel", fl_kernel, "kernel spec");
  fl->add_option("--direction", fl_dir, "generator|discriminator");
  fl->add_option("--dt", fl_dt, "step size (-1 = auto)");
  fl->add_option("--steps", fl_steps, "step count");
  fl->add_option("--record-every", fl_rec, "energy record stride");
  fl->add_option("--n-real", fl_nreal, "real cloud size");
  fl->add_option("--n-gen", fl_ngen, "gen cloud size");
  fl->add_option("--gen-spread", fl_spread, "initial gen cloud std");
  fl->add_option("--seed", fl_seed, "rng seed");
  fl->add_flag("--svg", fl_svg, "emit first/last scatter frames");
  fl->add_option("--out-dir", fl_out, "output directory");

  // perturb
  auto* pe = app.add_subcommand("perturb", "linearized mode-growth measurement");
  std::string pe_kernel = "gaussian:sigma=1", pe_dir = "generator", pe_out;
  double pe_c0 = 1.0, pe_len = 0.0, pe_dt = 1e-4;
  int pe_points = 0, pe_steps = 400, pe_rec = 10;
  pe->add_option("--kernel", pe_kernel, "kernel spec");
  pe->add_option("--direction", pe_dir, "generator|discriminator");
  pe->add_option("--c0", pe_c0, "background density C0");
  pe->add_option("--length", pe_len, "domain length (0 = auto)");
  pe->add_option("--points", pe_points, "grid points (0 = auto)");
  pe->add_option("--dt", pe_dt, "step size");
  pe->add_option("--steps", pe_steps, "step count");
  pe->add_option("--record-every", pe_rec, "record stride");
  pe->add_option("--out-dir", pe_out, "output directory");

  // train
  auto* tr = app.add_subcommand("train", "adversarial mixture training");
  pd::gan::TrainConfig tcfg;
  std::string tr_kernel, tr_stab, tr_out;
  bool tr_nostab = false;
  tr->add_option("--kernel", tr_kernel, "loss kernel spec (default rescaled-gaussian sum)");
  tr->add_option("--stabilizer-kernel", tr_stab, "stabilizer kernel spec");
  tr->add_flag("--no-stabilizer", tr_nostab, "train the unstabilized baseline");
  tr->add_option("--epsilon", tcfg.epsilon, "stabilizer weight");
  tr->add_option("--lr", tcfg.lr, "Adam learning rate");
  tr->add_option("--beta1", tcfg.beta1, "Adam beta1");
  tr->add_option("--beta2", tcfg.beta2, "Adam beta2");
  tr->add_option("--epochs", tcfg.epochs, "training epochs");
  tr->add_option("--batch", tcfg.batch_size, "batch size");
  tr->add_option("--n-critic", tcfg.n_critic, "discriminator steps per generator step");
  tr->add_flag("--resample-data", tcfg.resample_data, "fresh data batch every step");
  tr->add_flag("--resample-latents", tcfg.resample_latents, "fresh latent batch every step");
  tr->add_option("--d-init-gain", tcfg.d_init_gain, "discriminator weight-init multiplier");
  tr->add_option("--eval-points", tcfg.eval_points, "evaluation particle count");
  tr->add_option("--seed", tcfg.seed, "rng seed");
  tr->add_option("--out-dir", tr_out, "output directory");

  // epsilon
  auto* ep = app.add_subcommand("epsilon", "minimal stabilizing weight");
  std::string ep_base, ep_stab, ep_out;
  double ep_min = 0.05, ep_max = 50.0;
  int ep_points = 512, ep_dim = 2;
  ep->add_option("--base", ep_base, "base kernel spec")->required();
  ep->add_option("--stabilizer", ep_stab, "stabilizer kernel spec")->required();
  ep->add_option("--xi-min", ep_min, "grid lower edge");
  ep->add_option("--xi-max", ep_max, "grid upper edge");
  ep->add_option("--xi-points", ep_points, "grid size");
  ep->add_option("--dim", ep_dim, "ambient dimension");
  ep->add_option("--out-dir", ep_out, "output directory");

  std::string cfg_path_doc;
  for (CLI::App* sub : {sp, fl, pe, tr, ep})
    sub->add_option("--config", cfg_path_doc,
                    "key=value configuration file; command-line flags win");

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::vector<const char*> cargv{argv[0]};
  for (const auto& a : args) cargv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sp->parsed())
      return cmd_spectrum(sp_kernel, sp_c, sp_dim, sp_half, sp_points, sp_out);
    if (fl->parsed())
      return cmd_flow(fl_kernel, fl_dir, fl_dt, fl_steps, fl_rec, fl_nreal, fl_ngen, fl_spread,
                      fl_seed, fl_svg, fl_out);
    if (pe->parsed())
      return cmd_perturb(pe_kernel, pe_dir, pe_c0, pe_len, pe_points, pe_dt, pe_steps, pe_rec,
                         pe_out);
    if (tr->parsed()) return cmd_train(tcfg, tr_nostab, tr_kernel, tr_stab, tr_out);
    if (ep->parsed())
      return cmd_epsilon(ep_base, ep_stab, ep_min, ep_max, ep_points, ep_dim, ep_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const pd::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
