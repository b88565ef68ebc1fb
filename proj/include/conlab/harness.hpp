#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conlab/dynamics.hpp"
#include "conlab/mixture.hpp"
#include "conlab/residuals.hpp"
#include "conlab/schedule.hpp"
#include "conlab/training.hpp"

namespace conlab {

enum class Experiment {
  VerifyFpe,
  VerifyMartingale,
  VerifyThm41,
  VerifyThm42,
  VerifyLemmaA4,
  VerifyDrift,
  Train,
  Sample,
  Eval
};
std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);
std::vector<std::string> experiment_names();

/// Raw `section.key = value` entries in file order. Values are JSON text or a
/// bare word (taken as a string).
struct RawConfig {
  struct Entry {
    std::string key;    // dotted path, e.g. "solver.n_steps"
    std::string value;  // as written
    std::string origin; // "file:line" or "override"
  };
  std::vector<Entry> entries;

  /// Adds or replaces key.
  void set(const std::string& key, const std::string& value, const std::string& origin = "override");
};

/// INI-style text: `[section]` headers, `key = value` lines, `#` or `;`
/// comments. Keys before the first header are top-level. Duplicate keys are
/// rejected.
RawConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RawConfig load_config_file(const std::filesystem::path& path);

struct ProbeSettings {
  std::vector<double> t_list{0.1, 0.5, 1.0, 2.0};
  std::size_t n_points = 100;
  PointSampler sampler = PointSampler::QtSamples;
  double box_half_width = 3.0;
  double spatial_step = 1e-3;
  double time_step = 1e-4;
  FpeForm form = FpeForm::Jacobian;
  DerivativeMode mode = DerivativeMode::Analytic;
  double perturbation = 0.0;  // eps in s + eps * x
  std::string field = "truth";  // or "checkpoint"
  double fpe_threshold = 1e-4;
  double lemma_threshold = 1e-6;
};

struct SolverSettings {
  Solver method = Solver::Heun;
  int n_steps = 400;
  double lambda = 1.0;
  std::size_t n_paths = 20000;
};

struct MartingaleSettings {
  std::vector<double> x{0.6};
  double t = 1.0;
  double t_prime = 0.5;
  double perturbation = 0.0;
  double max_gap = 0.02;
};

struct Thm41Settings {
  std::vector<double> x{0.6};
  double t = 1.0;
  double t_prime = 0.5;
  int n_steps = 64;
  std::size_t n_seeds = 4;
  std::vector<double> lambdas{1.0, 0.5, 0.25, 0.0};
  std::size_t sweep_paths = 2000;
  double tolerance = 1e-12;
};

struct Thm42Settings {
  std::vector<double> eps{0.0, 0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14,
                          0.16, 0.18, 0.2, 0.22, 0.24, 0.26, 0.28, 0.3};
  std::size_t n_gap_points = 8;
  double t = 1.0;
  double t_prime = 0.5;
  double lambda = 1.0;
  std::size_t n_paths = 2000;
  int n_steps = 100;
  std::size_t residual_points = 100;
  std::vector<double> t_list{0.1, 0.5, 1.0, 2.0};
  double fpe_floor = 1e-4;
  double min_spearman_residual = 0.95;
  double min_spearman_gap = 0.9;
};

struct DriftSettings {
  std::vector<double> c{0.5};
  std::vector<double> x{0.0};
  double t = 1.0;
  double t_prime = 0.5;
  std::size_t n_paths = 10000;
  int n_steps = 50;
};

struct ModelSettings {
  std::vector<int> hidden{64, 64};
  TimeFeatures features = TimeFeatures::LogSigmaPair;
  std::string checkpoint;  // input checkpoint for sample, eval and probe.field = checkpoint
};

struct TrainingSettings {
  TrainConfig train;           // seed, hidden and features are filled from the run config
  std::string teacher = "analytic";  // or a checkpoint path (score or denoiser)
};

struct EvalSettings {
  EvalConfig eval;  // ode_steps from solver.n_steps, seed from the run seed
  std::optional<double> max_score_mse;
  std::optional<double> max_fpe_residual;
  std::optional<double> max_sliced_wasserstein;
};

struct SampleSettings {
  std::size_t n = 1000;
};

/// Fully resolved run configuration. Every key has a default.
struct RunConfig {
  Experiment experiment = Experiment::VerifyThm41;
  std::uint64_t seed = 0;
  std::string output_dir = "consistency-lab-out";
  Schedule schedule = Schedule::linear();
  GaussianMixture mixture = GaussianMixture({0.5, 0.5}, {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)},
                                            {Vec::Constant(1, 0.25), Vec::Constant(1, 0.25)});
  SolverSettings solver;
  ProbeSettings probe;
  MartingaleSettings martingale;
  Thm41Settings thm41;
  Thm42Settings thm42;
  DriftSettings drift;
  ModelSettings model;
  TrainingSettings training;
  EvalSettings eval;
  SampleSettings sample;
};

/// Strict resolution: unknown keys and ill-typed values raise ConfigError
/// naming the dotted key.
RunConfig resolve_config(const RawConfig& raw);

/// Canonical JSON of the resolved configuration: every key, fixed order.
std::string config_json(const RunConfig& cfg);
/// The same content as config text that resolves back to `cfg`.
std::string config_text(const RunConfig& cfg);
/// 16 hex digits of FNV-1a over config_json with output_dir removed.
std::string config_hash(const RunConfig& cfg);

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitThreshold = 3, kExitRuntime = 4 };

struct RunResult {
  int exit_code = kExitOk;
  std::string summary;                 // one line for the terminal
  std::vector<std::string> artifacts;  // file names written into output_dir
};

/// Runs the experiment and writes its artifacts into cfg.output_dir.
/// Threshold failures give kExitThreshold; numerical failures kExitRuntime.
RunResult run(const RunConfig& cfg);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::vector<std::string> assignments;  // "section.key=value"
};

/// Loads the file, applies the experiment name and overrides (they win over
/// file keys), resolves and runs. Every exception maps to an exit code with a
/// diagnostic on stderr.
int run_from_file(const std::string& experiment, const std::filesystem::path& config_path,
                  const CliOverrides& overrides);

}  // namespace conlab
