#pragma once

#include "lcbs/config.hpp"
#include "lcbs/darcy.hpp"
#include "lcbs/metrics.hpp"
#include "lcbs/registry.hpp"
#include "lcbs/samplers.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace lcbs {

// ---------------------------------------------------------------------------
// Artifacts

/// Shortest round-trip decimal form.
inline std::string fmt(double x) {
  if (std::isnan(x)) {
    return "nan";
  }
  if (std::isinf(x)) {
    return x > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string fmt(long long x) { return std::to_string(x); }
inline std::string fmt(std::size_t x) { return std::to_string(x); }
inline std::string fmt(int x) { return std::to_string(x); }
inline std::string fmt(bool x) { return x ? "true" : "false"; }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) {
      throw Error("CSV row width does not match its header");
    }
    rows.push_back(std::move(row));
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string> &cells) {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        out += cells[k];
        out += k + 1 < cells.size() ? ',' : '\n';
      }
    };
    line(header);
    for (const auto &r : rows) {
      line(r);
    }
    return out;
  }
};

/// Samples as rows (columns of `samples`), keeping every thin-th sample.
inline CsvTable samples_table(const Eigen::Ref<const Matrix> &samples,
                              std::vector<std::string> header, std::size_t thin = 1) {
  CsvTable t{std::move(header), {}};
  thin = std::max<std::size_t>(thin, 1);
  for (Index j = 0; j < samples.cols(); j += static_cast<Index>(thin)) {
    std::vector<std::string> row;
    for (Index i = 0; i < samples.rows(); ++i) {
      row.push_back(fmt(samples(i, j)));
    }
    t.add(std::move(row));
  }
  return t;
}

struct RunMeta {
  std::string arm;
  RunRecord record;
};

/// Everything an experiment emits; written to disk by a single writer.
struct Artifacts {
  std::string experiment;
  std::string config_echo;
  std::map<std::string, CsvTable> tables;
  std::map<std::string, std::string> files;
  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<RunMeta> runs;
  std::vector<std::string> warnings;

  std::size_t total_runs() const { return runs.size(); }
  std::size_t diverged_runs() const {
    std::size_t k = 0;
    for (const auto &r : runs) {
      k += r.record.diverged ? 1 : 0;
    }
    return k;
  }
  /// More than half of all runs diverged.
  bool divergence_dominated() const { return 2 * diverged_runs() > total_runs(); }

  void note(const std::string &key, const std::string &value) {
    summary.emplace_back(key, value);
  }

  void record(const std::string &arm, const RunResult &r) {
    for (const auto &rec : r.runs) {
      runs.push_back({arm, rec});
    }
    for (const auto &w : r.warnings) {
      warnings.push_back(arm + ": " + w);
    }
  }
};

/// Writes config.resolved.txt, runs.meta, summary.txt, warnings.txt and all
/// tables and files under dir.
inline void write_artifacts(const Artifacts &a, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string &name, const std::string &text) {
    const auto path = dir / name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
      throw Error("failed to write " + path.string());
    }
  };
  put("config.resolved.txt", "experiment = " + a.experiment + "\n" + a.config_echo);
  std::ostringstream meta;
  for (const auto &r : a.runs) {
    meta << "arm=" << r.arm << " run=" << r.record.run << " seed=" << r.record.seed
         << " diverged=" << fmt(r.record.diverged)
         << " diverged_step=" << r.record.diverged_step
         << " wall_seconds=" << fmt(r.record.wall_seconds) << '\n';
  }
  put("runs.meta", meta.str());
  std::ostringstream summary;
  for (const auto &[k, v] : a.summary) {
    summary << k << " = " << v << '\n';
  }
  summary << "runs_total = " << a.total_runs() << '\n'
          << "runs_diverged = " << a.diverged_runs() << '\n';
  put("summary.txt", summary.str());
  std::string warnings;
  for (const auto &w : a.warnings) {
    warnings += w + '\n';
  }
  put("warnings.txt", warnings);
  for (const auto &[name, table] : a.tables) {
    put(name, table.str());
  }
  for (const auto &[name, text] : a.files) {
    put(name, text);
  }
}

// ---------------------------------------------------------------------------
// Shared config handling

inline ConfigSchema common_keys(const std::string &experiment) {
  return {
      {"experiment", ValueType::String, experiment, "experiment name"},
      {"seed", ValueType::Integer, "0", "master seed"},
      {"threads", ValueType::Integer, "1", "worker threads (results do not depend on it)"},
      {"output.thin", ValueType::Integer, "1", "keep every n-th sample in sample CSVs"},
  };
}

inline void append(ConfigSchema &to, const ConfigSchema &more) {
  to.insert(to.end(), more.begin(), more.end());
}

/// sampler.particles, sampler.steps, sampler.dt, sampler.runs.
inline ConfigSchema sampler_keys(Index particles, std::size_t steps, double dt,
                                 std::size_t runs) {
  return {
      {"sampler.particles", ValueType::Integer, std::to_string(particles), "ensemble size J"},
      {"sampler.steps", ValueType::Integer, std::to_string(steps), "time steps N"},
      {"sampler.dt", ValueType::Real, fmt(dt), "time step"},
      {"sampler.runs", ValueType::Integer, std::to_string(runs), "independent runs"},
  };
}

/// lcbs.beta, lcbs.kappa, lcbs.gamma ("default" or a number), lcbs.nu.
inline ConfigSchema lcbs_keys(double beta, double kappa) {
  return {
      {"lcbs.beta", ValueType::Real, fmt(beta), "density exponent beta"},
      {"lcbs.kappa", ValueType::Real, fmt(kappa), "localization kappa"},
      {"lcbs.gamma", ValueType::String, "default", "drift scale; 'default' uses gamma_default"},
      {"lcbs.nu", ValueType::Real, "1", "random-batch fraction"},
  };
}

inline double parse_gamma(const std::string &text) {
  if (text == "default") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double g = 0.0;
  if (!detail::parse_real(text, g)) {
    throw ConfigError("gamma must be 'default' or a number, got '" + text + "'");
  }
  return g;
}

inline SamplerConfig base_sampler(const Config &c) {
  SamplerConfig s;
  s.seed = static_cast<std::uint64_t>(c.integer("seed"));
  s.n_threads = std::max<std::size_t>(c.count("threads"), 1);
  s.n_particles = static_cast<Index>(c.count("sampler.particles"));
  s.n_steps = c.count("sampler.steps");
  s.dt = c.real("sampler.dt");
  s.n_runs = c.count("sampler.runs");
  if (c.has("lcbs.beta")) {
    s.beta = c.real("lcbs.beta");
    s.kappa = c.real("lcbs.kappa");
    s.gamma = parse_gamma(c.string("lcbs.gamma"));
    s.nu = c.real("lcbs.nu");
  }
  try {
    validate_config(s);
  } catch (const UsageError &e) {
    throw ConfigError(e.what());
  }
  return s;
}

/// Runs one arm; with allow_divergence a fully diverged arm yields nullopt.
inline std::optional<RunResult> run_arm(const std::string &arm, const SamplerMethod &method,
                                        const TargetDensity &target,
                                        const SamplerConfig &config, Artifacts &art,
                                        bool allow_divergence) {
  try {
    RunResult r = run(method, target, config);
    art.record(arm, r);
    return r;
  } catch (const AllRunsDiverged &e) {
    if (!allow_divergence) {
      throw;
    }
    for (std::size_t k = 0; k < config.n_runs; ++k) {
      RunRecord rec;
      rec.run = k;
      rec.seed = config.seed;
      rec.diverged = true;
      rec.message = e.what();
      art.runs.push_back({arm, rec});
    }
    art.warnings.push_back(arm + ": " + e.what());
    return std::nullopt;
  }
}

inline std::vector<double> row_vector(const Matrix &samples, Index row) {
  return to_std(samples.row(row).transpose());
}

inline CsvTable kde_table(const std::vector<double> &samples, std::size_t points) {
  CsvTable t{{"x", "density"}, {}};
  const double h = silverman_bandwidth(samples);
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  const auto grid = linspace(*lo - 3.0 * h, *hi + 3.0 * h, points);
  const auto dens = kde_1d(samples, grid, h);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    t.add({fmt(grid[k]), fmt(dens[k])});
  }
  return t;
}

inline CsvTable mode_table() {
  return {{"arm", "pass", "mode_1", "mode_2", "n_modes", "mass_negative", "mass_positive",
           "diverged_runs", "runs"},
          {}};
}

inline void add_mode_row(CsvTable &t, const std::string &arm, const ModeReport &m,
                         std::size_t diverged, std::size_t runs) {
  t.add({arm, fmt(m.pass), m.modes.size() > 0 ? fmt(m.modes[0]) : "nan",
         m.modes.size() > 1 ? fmt(m.modes[1]) : "nan", fmt(m.modes.size()),
         fmt(m.mass_negative), fmt(m.mass_positive), fmt(diverged), fmt(runs)});
}

// ---------------------------------------------------------------------------
// Gaussian sweep

inline ConfigSchema gaussian_sweep_schema() {
  ConfigSchema s = common_keys("gaussian-sweep");
  append(s, sampler_keys(500, 200, 0.01, 16));
  append(s, lcbs_keys(5.0, 0.01));
  append(s, {{"sweep.gammas", ValueType::StringList, "0.5, default, 1.0, 1.5",
              "gamma values; 'default' is gamma_default"},
             {"kde.points", ValueType::Integer, "512", "KDE grid size"}});
  return s;
}

struct GammaArm {
  std::string label;
  double gamma = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  Index n_samples = 0;
  std::size_t diverged = 0;
};

struct GaussianSweepResult {
  double gamma_bar = 0.0;
  std::vector<GammaArm> arms;
  Artifacts artifacts;

  const GammaArm &arm(const std::string &label) const {
    for (const auto &a : arms) {
      if (a.label == label) {
        return a;
      }
    }
    throw UsageError("no arm '" + label + "'");
  }
};

/// Localized CBS on V(u) = u^2 (target variance 1/2) across gamma values.
inline GaussianSweepResult gaussian_sweep(const Config &c) {
  GaussianSweepResult res;
  Artifacts &art = res.artifacts;
  const SamplerConfig base = base_sampler(c);
  const TargetDensity target = make_target("gaussian1d");
  res.gamma_bar = gamma_default(base.preconditioner, base.kappa, base.beta);
  CsvTable summary{{"label", "gamma", "mean", "variance", "target_variance", "n_samples",
                    "diverged_runs"},
                   {}};
  for (const auto &token : c.strings("sweep.gammas")) {
    SamplerConfig s = base;
    s.gamma = parse_gamma(token);
    GammaArm arm;
    arm.label = token == "default" ? "gamma-default" : "gamma-" + token;
    arm.gamma = resolved_gamma(s);
    const RunResult r = *run_arm(arm.label, LocalizedCbsMethod{}, target, s, art, false);
    const auto samples = row_vector(r.aggregated_samples, 0);
    const Vector v = r.aggregated_samples.row(0).transpose();
    arm.mean = v.mean();
    arm.variance = (v.array() - arm.mean).square().mean();
    arm.n_samples = v.size();
    arm.diverged = r.n_diverged();
    summary.add({arm.label, fmt(arm.gamma), fmt(arm.mean), fmt(arm.variance), "0.5",
                 fmt(static_cast<long long>(arm.n_samples)), fmt(arm.diverged)});
    art.tables["samples_" + arm.label + ".csv"] =
        samples_table(r.aggregated_samples, {"u"}, c.count("output.thin"));
    art.tables["kde_" + arm.label + ".csv"] = kde_table(samples, c.count("kde.points"));
    art.note(arm.label + ".variance", fmt(arm.variance));
    res.arms.push_back(arm);
  }
  art.tables["summary.csv"] = summary;
  art.note("gamma_bar", fmt(res.gamma_bar));
  return res;
}

// ---------------------------------------------------------------------------
// Multimodal double well

inline ConfigSchema multimodal_schema() {
  ConfigSchema s = common_keys("multimodal");
  append(s, sampler_keys(200, 1000, 0.01, 16));
  append(s, lcbs_keys(10.0, 0.03));
  append(s, {
                {"dims", ValueType::IntegerList, "1, 10", "dimensions d"},
                {"lcbs.nus", ValueType::RealList, "1, 0.5", "random-batch fractions"},
                {"baselines", ValueType::Bool, "true", "also run CBS, polarized CBS, ALDI"},
                {"cbs.alpha", ValueType::Real, "10", "CBS alpha"},
                {"pcbs.alpha", ValueType::Real, "10", "polarized CBS alpha"},
                {"pcbs.lambda_1d", ValueType::Real, "0.005", "polarized CBS lambda, d = 1"},
                {"pcbs.lambda_nd", ValueType::Real, "0.1", "polarized CBS lambda, d > 1"},
                {"laldi.lambda_1d", ValueType::Real, "0.02", "localized ALDI lambda, d = 1"},
                {"laldi.lambda_nd", ValueType::Real, "0.4", "localized ALDI lambda, d > 1"},
                {"laldi.dt", ValueType::Real, "0.02", "localized ALDI time step"},
            });
  return s;
}

struct ModeArm {
  std::string label;
  std::string method;
  Index dim = 1;
  double nu = 1.0;
  ModeReport report;
  std::size_t diverged = 0;
  std::size_t runs = 0;
  std::vector<double> marginal;
};

struct MultimodalResult {
  std::vector<ModeArm> arms;
  Artifacts artifacts;

  const ModeArm &arm(const std::string &label) const {
    for (const auto &a : arms) {
      if (a.label == label) {
        return a;
      }
    }
    throw UsageError("no arm '" + label + "'");
  }
};

inline std::string nu_label(double nu) { return "nu" + fmt(nu); }

/// V(u) = |u^2 - 1|^2 with the first-coordinate marginal checked for modes
/// at +-1.
inline MultimodalResult multimodal(const Config &c) {
  MultimodalResult res;
  Artifacts &art = res.artifacts;
  const SamplerConfig base = base_sampler(c);
  CsvTable modes = mode_table();
  auto finish = [&](ModeArm arm, const std::optional<RunResult> &r) {
    arm.runs = base.n_runs;
    if (r) {
      arm.marginal = row_vector(r->aggregated_samples, 0);
      arm.report = two_mode_check(arm.marginal, 1.0);
      arm.diverged = r->n_diverged();
      art.tables["marginal_" + arm.label + ".csv"] =
          samples_table(r->aggregated_samples.topRows(1), {"u1"}, c.count("output.thin"));
    } else {
      arm.diverged = arm.runs;
    }
    add_mode_row(modes, arm.label, arm.report, arm.diverged, arm.runs);
    art.note(arm.label + ".pass", fmt(arm.report.pass));
    res.arms.push_back(std::move(arm));
  };
  for (long long dl : c.integers("dims")) {
    if (dl < 1) {
      throw ConfigError("dims must be positive");
    }
    const auto d = static_cast<Index>(dl);
    const TargetDensity target = make_target("doublewell-" + std::to_string(d));
    const std::string ds = "d" + std::to_string(d);
    for (double nu : c.reals("lcbs.nus")) {
      SamplerConfig s = base;
      s.nu = nu;
      ModeArm arm{"lcbs_" + ds + "_" + nu_label(nu), "localized-cbs", d, nu, {}, 0, 0, {}};
      finish(arm, run_arm(arm.label, LocalizedCbsMethod{}, target, s, art, false));
    }
    if (!c.boolean("baselines")) {
      continue;
    }
    const bool one = d == 1;
    {
      ModeArm arm{"cbs_" + ds, "cbs", d, 1.0, {}, 0, 0, {}};
      finish(arm, run_arm(arm.label, CbsMethod{c.real("cbs.alpha")}, target, base, art, true));
    }
    {
      ModeArm arm{"pcbs_" + ds, "polarized-cbs", d, 1.0, {}, 0, 0, {}};
      const PolarizedCbsMethod m{c.real("pcbs.alpha"),
                                 c.real(one ? "pcbs.lambda_1d" : "pcbs.lambda_nd"), Matrix()};
      finish(arm, run_arm(arm.label, m, target, base, art, true));
    }
    {
      ModeArm arm{"laldi_" + ds, "localized-aldi", d, 1.0, {}, 0, 0, {}};
      SamplerConfig s = base;
      s.dt = c.real("laldi.dt");
      const LocalizedAldiMethod m{c.real(one ? "laldi.lambda_1d" : "laldi.lambda_nd"),
                                  Matrix()};
      finish(arm, run_arm(arm.label, m, target, s, art, true));
    }
  }
  art.tables["modes.csv"] = modes;
  return res;
}

// ---------------------------------------------------------------------------
// Affine invariance on a badly scaled double well

inline ConfigSchema affine_schema() {
  ConfigSchema s = common_keys("affine");
  append(s, sampler_keys(200, 1000, 0.01, 16));
  append(s, lcbs_keys(10.0, 0.03));
  append(s, {
                {"scales", ValueType::RealList, "1, 10000", "diagonal of Lambda"},
                {"coordinate", ValueType::Integer, "2",
                 "marginal coordinate (1-based), reported in units of sqrt(Lambda) u"},
                {"baselines", ValueType::Bool, "true", "also run polarized CBS and ALDI"},
                {"pcbs.alpha", ValueType::Real, "10", "polarized CBS alpha"},
                {"pcbs.lambda", ValueType::Real, "0.005", "polarized CBS lambda"},
                {"laldi.lambda", ValueType::Real, "0.02", "localized ALDI lambda"},
                {"laldi.dt", ValueType::Real, "0.05", "localized ALDI time step"},
            });
  return s;
}

struct AffineResult {
  std::vector<ModeArm> arms;
  /// W2 between the localized CBS marginals for the two scaling guesses.
  double cross_w2 = kInf;
  Artifacts artifacts;

  const ModeArm &arm(const std::string &label) const {
    for (const auto &a : arms) {
      if (a.label == label) {
        return a;
      }
    }
    throw UsageError("no arm '" + label + "'");
  }
};

/// Guessed scalings: "correct" uses Lambda, "identity" uses I. Each sets
/// the initial covariance Lambda~^-1 / 2 and, for the baselines, D = Lambda~^-1.
inline AffineResult affine(const Config &c) {
  AffineResult res;
  Artifacts &art = res.artifacts;
  const SamplerConfig base = base_sampler(c);
  const auto sv = c.reals("scales");
  if (sv.empty()) {
    throw ConfigError("scales must be nonempty");
  }
  const Vector lambda = Eigen::Map<const Vector>(sv.data(), static_cast<Index>(sv.size()));
  TargetOptions opts;
  opts.scales = lambda;
  const TargetDensity target = make_target("scaled-doublewell", opts);
  const Index d = lambda.size();
  const long long coord = c.integer("coordinate");
  if (coord < 1 || coord > d) {
    throw ConfigError("coordinate must lie in [1, " + std::to_string(d) + "]");
  }
  const Index row = static_cast<Index>(coord - 1);
  const double unit = std::sqrt(lambda(row));
  CsvTable modes = mode_table();
  std::map<std::string, std::vector<double>> lcbs_marginals;

  for (const std::string guess : {"correct", "identity"}) {
    const Matrix lt =
        guess == "correct" ? Matrix(lambda.asDiagonal()) : Matrix(Matrix::Identity(d, d));
    const Matrix dmat = lt.inverse();
    SamplerConfig s = base;
    s.init_cov = 0.5 * dmat;
    auto finish = [&](ModeArm arm, const std::optional<RunResult> &r) {
      arm.runs = s.n_runs;
      if (r) {
        const Matrix m = r->aggregated_samples.row(row) * unit;
        arm.marginal = to_std(m.row(0).transpose());
        arm.report = two_mode_check(arm.marginal, 1.0);
        arm.diverged = r->n_diverged();
        art.tables["marginal_" + arm.label + ".csv"] =
            samples_table(m, {"scaled_u" + std::to_string(coord)}, c.count("output.thin"));
      } else {
        arm.diverged = arm.runs;
      }
      add_mode_row(modes, arm.label, arm.report, arm.diverged, arm.runs);
      art.note(arm.label + ".pass", fmt(arm.report.pass));
      res.arms.push_back(std::move(arm));
    };
    {
      ModeArm arm{"lcbs_" + guess, "localized-cbs", d, s.nu, {}, 0, 0, {}};
      finish(arm, run_arm(arm.label, LocalizedCbsMethod{}, target, s, art, false));
      lcbs_marginals[guess] = res.arms.back().marginal;
    }
    if (!c.boolean("baselines")) {
      continue;
    }
    {
      ModeArm arm{"pcbs_" + guess, "polarized-cbs", d, 1.0, {}, 0, 0, {}};
      const PolarizedCbsMethod m{c.real("pcbs.alpha"), c.real("pcbs.lambda"), dmat};
      finish(arm, run_arm(arm.label, m, target, s, art, true));
    }
    {
      ModeArm arm{"laldi_" + guess, "localized-aldi", d, 1.0, {}, 0, 0, {}};
      SamplerConfig sa = s;
      sa.dt = c.real("laldi.dt");
      const LocalizedAldiMethod m{c.real("laldi.lambda"), dmat};
      finish(arm, run_arm(arm.label, m, target, sa, art, true));
    }
  }
  res.cross_w2 = wasserstein2_1d(lcbs_marginals["correct"], lcbs_marginals["identity"]);
  art.tables["modes.csv"] = modes;
  art.note("lcbs.cross_w2", fmt(res.cross_w2));
  return res;
}

// ---------------------------------------------------------------------------
// Wide and narrow peaks: preconditioner sweep and correction ablation

inline ConfigSchema diffpeaks_schema() {
  ConfigSchema s = common_keys("diffpeaks");
  append(s, sampler_keys(200, 1000, 0.01, 16));
  append(s, lcbs_keys(10.0, 0.02));
  append(s, {
                {"sweep.enabled", ValueType::Bool, "true", "run the lambda x Sigma0 sweep"},
                {"sweep.lambdas", ValueType::RealList, "0.1, 0.5, inf",
                 "localization of the weighted covariance; inf is unweighted"},
                {"sweep.init_vars", ValueType::RealList, "0.5, 2", "initial variances"},
                {"ablation.enabled", ValueType::Bool, "true", "run the correction ablation"},
                {"ablation.lambda", ValueType::Real, "0.5", "preconditioner localization"},
                {"ablation.init_var", ValueType::Real, "2", "initial variance"},
                {"ablation.seeds", ValueType::Integer, "16",
                 "independent single-run seeds per arm"},
                {"pcbs.enabled", ValueType::Bool, "true", "run polarized CBS"},
                {"pcbs.alpha", ValueType::Real, "10", "polarized CBS alpha"},
                {"pcbs.lambdas", ValueType::RealList, "0.001, 0.002, 0.005",
                 "polarized CBS lambdas"},
                {"pcbs.init_var", ValueType::Real, "2", "polarized CBS initial variance"},
                {"reference.lo", ValueType::Real, "-6", "quadrature grid start"},
                {"reference.hi", ValueType::Real, "4", "quadrature grid end"},
                {"reference.points", ValueType::Integer, "20001", "quadrature grid size"},
            });
  return s;
}

struct PeaksArm {
  std::string label;
  double w2 = kInf;
  double narrow_mass = 0.0;
  std::size_t diverged = 0;
};

struct AblationSeed {
  std::uint64_t seed = 0;
  double w2_corrected = kInf;
  double w2_uncorrected = kInf;
};

struct DiffpeaksResult {
  double reference_narrow_mass = 0.0;
  std::vector<PeaksArm> sweep;
  std::vector<AblationSeed> ablation;
  std::vector<PeaksArm> polarized;
  Artifacts artifacts;

  std::size_t ablation_wins() const {
    std::size_t k = 0;
    for (const auto &a : ablation) {
      k += a.w2_corrected < a.w2_uncorrected ? 1 : 0;
    }
    return k;
  }
};

/// Quadrature reference for a 1-D target on a uniform grid.
struct Reference1D {
  std::vector<double> grid;
  std::vector<double> density;
  Quantile1D quantile;
};

inline Reference1D quadrature_reference(const TargetDensity &t, double lo, double hi,
                                        std::size_t points) {
  Reference1D r;
  r.grid = linspace(lo, hi, points);
  r.density.resize(points);
  Vector x(1);
  double top = -kInf;
  std::vector<double> logp(points);
  for (std::size_t k = 0; k < points; ++k) {
    x(0) = r.grid[k];
    logp[k] = t.log_density(x);
    top = std::max(top, logp[k]);
  }
  for (std::size_t k = 0; k < points; ++k) {
    r.density[k] = std::exp(logp[k] - top);
  }
  const double z = trapezoid(r.grid, r.density);
  for (double &v : r.density) {
    v /= z;
  }
  r.quantile = tabulated_quantile(r.grid, r.density);
  return r;
}

/// The narrow peak of diffpeaks sits at u e^u = 1; V has its barrier at 0.
inline double narrow_mass(const std::vector<double> &samples) {
  double k = 0.0;
  for (double x : samples) {
    k += x > 0.0 ? 1.0 : 0.0;
  }
  return k / static_cast<double>(samples.size());
}

inline DiffpeaksResult diffpeaks_study(const Config &c) {
  DiffpeaksResult res;
  Artifacts &art = res.artifacts;
  const SamplerConfig base = base_sampler(c);
  const TargetDensity target = make_target("diffpeaks");
  const Reference1D ref = quadrature_reference(target, c.real("reference.lo"),
                                               c.real("reference.hi"),
                                               c.count("reference.points"));
  {
    double mass = 0.0;
    for (std::size_t k = 1; k < ref.grid.size(); ++k) {
      if (ref.grid[k - 1] >= 0.0) {
        mass += 0.5 * (ref.density[k] + ref.density[k - 1]) * (ref.grid[k] - ref.grid[k - 1]);
      }
    }
    res.reference_narrow_mass = mass;
    CsvTable t{{"x", "density"}, {}};
    for (std::size_t k = 0; k < ref.grid.size(); k += 10) {
      t.add({fmt(ref.grid[k]), fmt(ref.density[k])});
    }
    art.tables["reference.csv"] = t;
    art.note("reference.narrow_mass", fmt(mass));
  }
  const std::size_t thin = c.count("output.thin");
  auto preconditioner = [](double lambda) {
    return std::isfinite(lambda) ? PreconditionerSpec::localized(0.0, lambda)
                                 : PreconditionerSpec::unweighted();
  };
  auto score = [&](const std::string &label, const std::optional<RunResult> &r,
                   std::size_t runs) {
    PeaksArm arm{label, kInf, 0.0, runs};
    if (r) {
      const auto s = row_vector(r->aggregated_samples, 0);
      arm.w2 = wasserstein2_1d(s, ref.quantile);
      arm.narrow_mass = narrow_mass(s);
      arm.diverged = r->n_diverged();
      art.tables["samples_" + label + ".csv"] =
          samples_table(r->aggregated_samples, {"u"}, thin);
    }
    return arm;
  };

  if (c.boolean("sweep.enabled")) {
    CsvTable t{{"label", "lambda", "init_var", "w2", "narrow_mass", "diverged_runs"}, {}};
    for (double lambda : c.reals("sweep.lambdas")) {
      for (double v0 : c.reals("sweep.init_vars")) {
        SamplerConfig s = base;
        s.preconditioner = preconditioner(lambda);
        s.init_cov = v0 * Matrix::Identity(1, 1);
        const std::string label = "lcbs_lambda" + fmt(lambda) + "_var" + fmt(v0);
        const PeaksArm arm =
            score(label, run_arm(label, LocalizedCbsMethod{}, target, s, art, false), s.n_runs);
        t.add({label, fmt(lambda), fmt(v0), fmt(arm.w2), fmt(arm.narrow_mass),
               fmt(arm.diverged)});
        res.sweep.push_back(arm);
      }
    }
    art.tables["sweep.csv"] = t;
  }

  if (c.boolean("ablation.enabled")) {
    CsvTable t{{"seed", "w2_corrected", "w2_uncorrected", "corrected_wins"}, {}};
    SamplerConfig s = base;
    s.n_runs = 1;
    s.preconditioner = preconditioner(c.real("ablation.lambda"));
    s.init_cov = c.real("ablation.init_var") * Matrix::Identity(1, 1);
    for (std::size_t k = 0; k < c.count("ablation.seeds"); ++k) {
      s.seed = base.seed + k;
      AblationSeed a;
      a.seed = s.seed;
      for (bool corrected : {true, false}) {
        s.use_correction = corrected;
        const std::string label = std::string(corrected ? "corrected" : "uncorrected") +
                                  "_seed" + std::to_string(s.seed);
        const auto r = run_arm(label, LocalizedCbsMethod{}, target, s, art, true);
        const double w2 =
            r ? wasserstein2_1d(row_vector(r->aggregated_samples, 0), ref.quantile) : kInf;
        (corrected ? a.w2_corrected : a.w2_uncorrected) = w2;
      }
      t.add({fmt(static_cast<long long>(a.seed)), fmt(a.w2_corrected), fmt(a.w2_uncorrected),
             fmt(a.w2_corrected < a.w2_uncorrected)});
      res.ablation.push_back(a);
    }
    art.tables["ablation.csv"] = t;
    art.note("ablation.corrected_wins",
             fmt(res.ablation_wins()) + "/" + fmt(res.ablation.size()));
  }

  if (c.boolean("pcbs.enabled")) {
    CsvTable t{{"label", "lambda", "w2", "narrow_mass", "diverged_runs"}, {}};
    SamplerConfig s = base;
    s.init_cov = c.real("pcbs.init_var") * Matrix::Identity(1, 1);
    for (double lambda : c.reals("pcbs.lambdas")) {
      const std::string label = "pcbs_lambda" + fmt(lambda);
      const PolarizedCbsMethod m{c.real("pcbs.alpha"), lambda, Matrix()};
      const PeaksArm arm = score(label, run_arm(label, m, target, s, art, true), s.n_runs);
      t.add({label, fmt(lambda), fmt(arm.w2), fmt(arm.narrow_mass), fmt(arm.diverged)});
      res.polarized.push_back(arm);
    }
    art.tables["polarized.csv"] = t;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Tent: W2 against J

inline ConfigSchema tent_schema() {
  ConfigSchema s = common_keys("tent");
  append(s, {
                {"pairs", ValueType::StringList, "10:0.1, 40:0.025", "beta:kappa pairs"},
                {"particles", ValueType::IntegerList, "8, 16, 32, 64, 128, 256, 512",
                 "ensemble sizes J"},
                {"repetitions", ValueType::Integer, "96", "independent simulations"},
                {"subsample", ValueType::Integer, "50",
                 "particles kept per simulation at the final step"},
                {"sampler.steps", ValueType::Integer, "300", "time steps N"},
                {"sampler.dt", ValueType::Real, "0.01", "time step"},
                {"bootstrap", ValueType::Integer, "100",
                 "bootstrap resamples of repetitions for the noise estimate"},
            });
  return s;
}

struct TentPoint {
  Index particles = 0;
  double w2 = 0.0;
  double noise = 0.0;
};

struct TentCurve {
  double beta = 0.0;
  double kappa = 0.0;
  std::vector<TentPoint> points;

  const TentPoint &at(Index j) const {
    for (const auto &p : points) {
      if (p.particles == j) {
        return p;
      }
    }
    throw UsageError("no point at J = " + std::to_string(j));
  }
};

/// Index of the first point within 2 noise of the curve minimum.
inline std::size_t plateau_index(const TentCurve &c) {
  double best = kInf;
  for (const auto &p : c.points) {
    best = std::min(best, p.w2);
  }
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    if (c.points[k].w2 <= best + 2.0 * c.points[k].noise) {
      return k;
    }
  }
  return c.points.size() - 1;
}

/// Nonincreasing up to the plateau, each step allowed 2 noise of the
/// difference.
inline bool nonincreasing_to_plateau(const TentCurve &c) {
  const std::size_t p = plateau_index(c);
  for (std::size_t k = 0; k < p; ++k) {
    const auto &a = c.points[k];
    const auto &b = c.points[k + 1];
    if (b.w2 > a.w2 + 2.0 * std::hypot(a.noise, b.noise)) {
      return false;
    }
  }
  return true;
}

struct TentResult {
  std::vector<TentCurve> curves;
  Artifacts artifacts;
};

inline std::pair<double, double> parse_pair(const std::string &text) {
  const auto colon = text.find(':');
  double b = 0.0, k = 0.0;
  if (colon == std::string::npos || !detail::parse_real(text.substr(0, colon), b) ||
      !detail::parse_real(text.substr(colon + 1), k) || !(b > 0.0) || !(k > 0.0)) {
    throw ConfigError("pairs entries must look like beta:kappa, got '" + text + "'");
  }
  return {b, k};
}

/// Localized CBS on the tent; each repetition contributes a random subset
/// of its final ensemble.
inline TentResult tent_study(const Config &c) {
  TentResult res;
  Artifacts &art = res.artifacts;
  const TargetDensity target = make_target("tent");
  const Quantile1D q = tent_quantile();
  const std::size_t reps = c.count("repetitions");
  const std::size_t keep = c.count("subsample");
  const std::size_t boots = c.count("bootstrap");
  if (reps < 2 || keep < 1) {
    throw ConfigError("tent study needs repetitions >= 2 and subsample >= 1");
  }
  CsvTable t{{"beta", "kappa", "particles", "w2", "noise"}, {}};
  for (const auto &pair : c.strings("pairs")) {
    const auto [beta, kappa] = parse_pair(pair);
    TentCurve curve{beta, kappa, {}};
    for (long long jl : c.integers("particles")) {
      if (jl < 2) {
        throw ConfigError("particles must be at least 2");
      }
      SamplerConfig s;
      s.beta = beta;
      s.kappa = kappa;
      s.n_particles = static_cast<Index>(jl);
      s.n_steps = c.count("sampler.steps");
      s.dt = c.real("sampler.dt");
      s.n_runs = reps;
      s.seed = static_cast<std::uint64_t>(c.integer("seed"));
      s.n_threads = std::max<std::size_t>(c.count("threads"), 1);
      const std::string label = "beta" + fmt(beta) + "_kappa" + fmt(kappa) + "_J" + fmt(jl);
      const RunResult r = *run_arm(label, LocalizedCbsMethod{}, target, s, art, false);
      std::vector<std::vector<double>> per_rep;
      for (std::size_t k = 0; k < reps; ++k) {
        if (r.runs[k].diverged) {
          continue;
        }
        const Ensemble &u = r.final_ensembles[k];
        RandomStream rs(s.seed, static_cast<std::uint32_t>(k), 0, 0, DrawKind::Subsample);
        std::vector<Index> idx(static_cast<std::size_t>(u.cols()));
        std::iota(idx.begin(), idx.end(), Index{0});
        const std::size_t m = std::min<std::size_t>(keep, idx.size());
        std::vector<double> picked;
        for (std::size_t a = 0; a < m; ++a) {
          const std::size_t b = a + rs.next_u32() % (idx.size() - a);
          std::swap(idx[a], idx[b]);
          picked.push_back(u(0, idx[a]));
        }
        per_rep.push_back(std::move(picked));
      }
      std::vector<double> pooled;
      for (const auto &p : per_rep) {
        pooled.insert(pooled.end(), p.begin(), p.end());
      }
      TentPoint pt{s.n_particles, wasserstein2_1d(pooled, q), 0.0};
      RandomStream bs(s.seed, 0, static_cast<std::uint32_t>(jl), 1, DrawKind::Subsample);
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t b = 0; b < boots; ++b) {
        std::vector<double> x;
        for (std::size_t k = 0; k < per_rep.size(); ++k) {
          const auto &p = per_rep[bs.next_u32() % per_rep.size()];
          x.insert(x.end(), p.begin(), p.end());
        }
        const double v = wasserstein2_1d(x, q);
        s1 += v;
        s2 += v * v;
      }
      if (boots > 1) {
        const double nb = static_cast<double>(boots);
        pt.noise = std::sqrt(std::max(0.0, (s2 - s1 * s1 / nb) / (nb - 1.0)));
      }
      t.add({fmt(beta), fmt(kappa), fmt(jl), fmt(pt.w2), fmt(pt.noise)});
      curve.points.push_back(pt);
    }
    art.note("beta" + fmt(beta) + "_kappa" + fmt(kappa) + ".nonincreasing_to_plateau",
             fmt(nonincreasing_to_plateau(curve)));
    res.curves.push_back(std::move(curve));
  }
  art.tables["w2_curves.csv"] = t;
  return res;
}

// ---------------------------------------------------------------------------
// Darcy inverse problem

inline ConfigSchema darcy_schema() {
  ConfigSchema s = common_keys("darcy");
  append(s, sampler_keys(1000, 400, 0.03, 4));
  append(s, lcbs_keys(3.0, 0.2));
  append(s, {
                {"dims", ValueType::IntegerList, "8", "KL truncation sizes d"},
                {"kl.tau", ValueType::Real, "3", "KL tau"},
                {"kl.s", ValueType::Real, "2", "KL decay exponent s"},
                {"data.level", ValueType::Integer, "7", "data grid h = 2^-level"},
                {"data.seed", ValueType::Integer, "0", "seed of u* and the noise"},
                {"data.f", ValueType::Real, "10", "constant source f"},
                {"data.noise_variance", ValueType::Real, "1e-4", "noise variance"},
                {"model.level", ValueType::Integer, "5", "model grid h = 2^-level"},
                {"init_var", ValueType::Real, "9", "initial variance Sigma0 = init_var I"},
                {"mcmc.enabled", ValueType::Bool, "true", "run the RW-MCMC reference"},
                {"mcmc.steps", ValueType::Integer, "100000", "main chain length"},
                {"mcmc.burn_in", ValueType::Integer, "5000", "main chain burn-in"},
                {"mcmc.pilot", ValueType::Integer, "20000",
                 "pilot chain for the proposal covariance"},
                {"report.modes", ValueType::Integer, "8", "leading KL modes reported"},
            });
  return s;
}

struct DarcyModeRow {
  std::array<int, 2> k{};
  double u_true = 0.0;
  double mcmc_mean = 0.0, mcmc_std = 0.0;
  double lcbs_mean = 0.0, lcbs_std = 0.0;
};

struct DarcyDimResult {
  Index dim = 0;
  DarcyProblem problem;
  double mcmc_acceptance = 0.0;
  std::vector<DarcyModeRow> modes;
  std::size_t diverged = 0;
};

struct DarcyResult {
  std::vector<DarcyDimResult> dims;
  Artifacts artifacts;
};

/// Random-walk Metropolis with a pilot-estimated proposal covariance. The
/// pilot starts at init with an isotropic proposal.
inline McmcResult mcmc_reference(const TargetDensity &t, std::uint64_t seed,
                                 std::size_t pilot, std::size_t steps, std::size_t burn_in,
                                 const Vector &init) {
  McmcOptions o;
  o.init = init;
  o.burn_in = pilot / 4;
  const double s0 = tune_proposal_scale(t, seed, o);
  o.chain = 1;
  const McmcResult p = rw_metropolis(t, pilot, s0, seed, o);
  const Vector pm = p.samples.rowwise().mean();
  const Matrix pc = p.samples.colwise() - pm;
  McmcOptions main;
  main.init = pm;
  main.proposal_cov = symmetrized(pc * pc.transpose() / static_cast<double>(pc.cols())) +
                      1e-12 * Matrix::Identity(t.dim, t.dim);
  const double s1 = tune_proposal_scale(t, seed + 1, main);
  main.burn_in = burn_in;
  main.chain = 2;
  return rw_metropolis(t, steps, s1, seed, main);
}

inline DarcyResult darcy_study(const Config &c) {
  DarcyResult res;
  Artifacts &art = res.artifacts;
  const SamplerConfig base = base_sampler(c);
  const std::size_t thin = c.count("output.thin");
  const auto n_report = static_cast<Index>(c.count("report.modes"));
  for (long long dl : c.integers("dims")) {
    if (dl < 1) {
      throw ConfigError("dims must be positive");
    }
    const auto d = static_cast<Index>(dl);
    const std::string ds = "d" + std::to_string(d);
    DarcyDimResult out;
    out.dim = d;
    const KLBasis basis = kl_eigenpairs(c.real("kl.tau"), c.real("kl.s"), d);
    out.problem = generate_synthetic_data(
        basis, static_cast<std::uint64_t>(c.integer("data.seed")),
        static_cast<int>(c.integer("data.level")), c.real("data.f"),
        c.real("data.noise_variance"));
    for (const auto &[name, text] : serialize_problem(out.problem)) {
      art.files["problem_" + ds + "/" + name] = text;
    }
    const TargetDensity target =
        make_darcy_posterior(out.problem, static_cast<int>(c.integer("model.level")));
    const Index shown = std::min(n_report, d);
    std::vector<std::string> header;
    for (Index k = 0; k < shown; ++k) {
      header.push_back("u" + std::to_string(k + 1));
    }

    SamplerConfig s = base;
    s.init_cov = c.real("init_var") * Matrix::Identity(d, d);
    const RunResult r = *run_arm("lcbs_" + ds, LocalizedCbsMethod{}, target, s, art, false);
    out.diverged = r.n_diverged();
    const Matrix &ls = r.aggregated_samples;
    art.tables["lcbs_" + ds + ".csv"] = samples_table(ls.topRows(shown), header, thin);
    const Vector lm = ls.rowwise().mean();
    const Vector lsd = ((ls.colwise() - lm).array().square().rowwise().mean()).sqrt();

    Vector mm = Vector::Constant(d, std::numeric_limits<double>::quiet_NaN());
    Vector msd = mm;
    if (c.boolean("mcmc.enabled")) {
      const McmcResult mc = mcmc_reference(
          target, s.seed + 7919, c.count("mcmc.pilot"), c.count("mcmc.steps"),
          c.count("mcmc.burn_in"), Vector::Zero(d));
      out.mcmc_acceptance = mc.acceptance_rate;
      mm = mc.samples.rowwise().mean();
      msd = ((mc.samples.colwise() - mm).array().square().rowwise().mean()).sqrt();
      art.tables["mcmc_" + ds + ".csv"] = samples_table(mc.samples.topRows(shown), header, thin);
      art.note(ds + ".mcmc_acceptance", fmt(mc.acceptance_rate));
    }
    CsvTable t{{"mode", "k1", "k2", "u_true", "mcmc_mean", "mcmc_std", "lcbs_mean", "lcbs_std",
                "mean_diff", "std_ratio"},
               {}};
    for (Index k = 0; k < shown; ++k) {
      DarcyModeRow row;
      row.k = basis.modes[static_cast<std::size_t>(k)].k;
      row.u_true = out.problem.u_true(k);
      row.mcmc_mean = mm(k);
      row.mcmc_std = msd(k);
      row.lcbs_mean = lm(k);
      row.lcbs_std = lsd(k);
      t.add({fmt(static_cast<long long>(k + 1)), fmt(row.k[0]), fmt(row.k[1]), fmt(row.u_true),
             fmt(row.mcmc_mean), fmt(row.mcmc_std), fmt(row.lcbs_mean), fmt(row.lcbs_std),
             fmt(row.lcbs_mean - row.mcmc_mean), fmt(row.lcbs_std / row.mcmc_std)});
      out.modes.push_back(row);
    }
    art.tables["comparison_" + ds + ".csv"] = t;
    res.dims.push_back(std::move(out));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Catalog

struct ExperimentInfo {
  std::string name;
  std::string description;
  std::function<ConfigSchema()> schema;
  std::function<Artifacts(const Config &)> run;
};

inline const std::vector<ExperimentInfo> &experiments() {
  static const std::vector<ExperimentInfo> list = {
      {"gaussian-sweep", "V(u) = u^2 with gamma in {0.5, gamma_default, 1.0, 1.5}",
       gaussian_sweep_schema,
       [](const Config &c) { return gaussian_sweep(c).artifacts; }},
      {"multimodal", "double well in d = 1 and 10 against CBS, polarized CBS, ALDI",
       multimodal_schema, [](const Config &c) { return multimodal(c).artifacts; }},
      {"affine", "badly scaled double well with correct and identity scaling guesses",
       affine_schema, [](const Config &c) { return affine(c).artifacts; }},
      {"diffpeaks", "wide and narrow peaks: preconditioner sweep and correction ablation",
       diffpeaks_schema, [](const Config &c) { return diffpeaks_study(c).artifacts; }},
      {"tent", "W2 error against ensemble size on the tent density", tent_schema,
       [](const Config &c) { return tent_study(c).artifacts; }},
      {"darcy", "Darcy flow inverse problem against a random-walk MCMC reference",
       darcy_schema, [](const Config &c) { return darcy_study(c).artifacts; }},
  };
  return list;
}

inline const ExperimentInfo &find_experiment(const std::string &name) {
  for (const auto &e : experiments()) {
    if (e.name == name) {
      return e;
    }
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

/// Resolves raw settings against the experiment's schema. A raw
/// `experiment` key must name the same experiment.
inline Config resolve_experiment_config(const ExperimentInfo &e, const RawConfig &raw) {
  const auto it = raw.find("experiment");
  if (it != raw.end() && it->second != e.name) {
    throw ConfigError("config is for experiment '" + it->second + "', not '" + e.name + "'");
  }
  return Config::resolve(e.schema(), raw);
}

inline Artifacts run_experiment(const std::string &name, const Config &c) {
  const ExperimentInfo &e = find_experiment(name);
  Artifacts a = e.run(c);
  a.experiment = name;
  a.config_echo = c.echo();
  return a;
}

} // namespace lcbs
