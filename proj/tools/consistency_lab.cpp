#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conlab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Numerical checks of denoiser, score and trajectory consistency on Gaussian mixtures"};
  app.set_version_flag("--version", std::string(CONLAB_VERSION));

  std::string experiment, config;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> sets;
  app.add_option("experiment", experiment, "Experiment to run")
      ->required()
      ->check(CLI::IsMember(conlab::experiment_names()));
  app.add_option("--config,-c", config, "Run configuration file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the file)");
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides the file)");
  app.add_option("--set", sets, "Override any key, e.g. --set solver.n_steps=200");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : conlab::kExitConfig;
  }

  conlab::CliOverrides ov;
  if (*seed_opt) ov.seed = seed;
  if (*out_opt) ov.output_dir = out;
  ov.assignments = sets;
  return conlab::run_from_file(experiment, config, ov);
}
