#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "conlab/harness.hpp"
#include "conlab/plot.hpp"

using namespace conlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("conlab-harness-test-" + name);
  fs::remove_all(p);
  return p;
}

RunConfig resolve_text(const std::string& text) { return resolve_config(parse_config_text(text, "t.ini")); }

std::string config_error(const std::string& text) {
  try {
    resolve_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigParse, SectionsCommentsAndValues) {
  const auto raw = parse_config_text(
      "# comment\nexperiment = verify-drift\nseed = 9\n\n[solver]\n; another\nn_steps = 12  # trailing\n"
      "method = \"heun\"\n[drift]\nc = [0.1, -0.2]\n",
      "t.ini");
  ASSERT_EQ(raw.entries.size(), 5u);
  EXPECT_EQ(raw.entries[2].key, "solver.n_steps");
  EXPECT_EQ(raw.entries[2].value, "12");
  EXPECT_EQ(raw.entries[2].origin, "t.ini:7");
  const auto cfg = resolve_config(raw);
  EXPECT_EQ(cfg.experiment, Experiment::VerifyDrift);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.solver.n_steps, 12);
  EXPECT_EQ(cfg.drift.c, (std::vector<double>{0.1, -0.2}));
  EXPECT_EQ(cfg.drift.x, (std::vector<double>{0.0, 0.0}));
}

TEST(ConfigParse, MalformedLinesNameTheLine) {
  EXPECT_THROW(parse_config_text("a = 1\na = 2\n"), ConfigError);
  try {
    parse_config_text("[solver]\nn_steps 3\n", "x.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:2"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("[solver\n"), ConfigError);
  EXPECT_THROW(parse_config_text("bad key = 1\n"), ConfigError);
}

TEST(ConfigResolve, UnknownKeyIsNamed) {
  const std::string msg = config_error("[solver]\nstepz = 3\n");
  EXPECT_NE(msg.find("solver.stepz"), std::string::npos) << msg;
  EXPECT_NE(config_error("[nosuch]\nk = 1\n").find("nosuch.k"), std::string::npos);
  EXPECT_NE(config_error("colour = 1\n").find("colour"), std::string::npos);
}

TEST(ConfigResolve, TypeAndRangeErrorsNameTheKey) {
  EXPECT_NE(config_error("[solver]\nn_steps = \"many\"\n").find("solver.n_steps"), std::string::npos);
  EXPECT_NE(config_error("[solver]\nn_steps = -4\n").find("solver.n_steps"), std::string::npos);
  EXPECT_NE(config_error("[solver]\nn_steps = 2.5\n").find("solver.n_steps"), std::string::npos);
  EXPECT_NE(config_error("[solver]\nmethod = rk4\n").find("solver.method"), std::string::npos);
  EXPECT_NE(config_error("[training]\nmethod = adamw\n").find("training.method"), std::string::npos);
  EXPECT_NE(config_error("[mixture]\nweights = [1.0]\n").find("mixture.means"), std::string::npos);
  EXPECT_NE(config_error("[mixture]\nweights = [0.5, 0.6]\nmeans = [0, 1]\nvariances = [1, 1]\n").find("mixture"),
            std::string::npos);
  EXPECT_NE(config_error("[martingale]\nt = 0.5\nt_prime = 1.0\n").find("martingale.t_prime"), std::string::npos);
  EXPECT_NE(config_error("[martingale]\nx = [0.1, 0.2]\n").find("martingale.x"), std::string::npos);
  EXPECT_NE(config_error("[thm42]\neps = [0.1, 0.2]\n").find("thm42.eps"), std::string::npos);
  EXPECT_NE(config_error("[schedule]\nt0 = 0\n").find("schedule"), std::string::npos);
  EXPECT_NE(config_error("[schedule]\nsigma_min = 0.1\n").find("schedule.sigma_min"), std::string::npos);
  EXPECT_NE(config_error("[probe]\nt_list = [0.1, 7.0]\n").find("probe.t_list"), std::string::npos);
  EXPECT_NE(config_error("experiment = fly\n").find("fly"), std::string::npos);
  EXPECT_NE(config_error("[solver]\nlambda = [1, \n").find("solver.lambda"), std::string::npos);
}

TEST(ConfigResolve, DefaultsAndGeometricSchedule) {
  const auto cfg = resolve_text("[schedule]\nform = geometric-sigma\nsigma_min = 0.02\nsigma_max = 10\nT = 1\nt0 = 0.001\n");
  EXPECT_EQ(cfg.schedule.form(), ScheduleForm::GeometricSigma);
  EXPECT_EQ(cfg.schedule.sigma_max(), 10.0);
  EXPECT_EQ(cfg.mixture.dim(), 1);
  EXPECT_EQ(cfg.thm41.lambdas, (std::vector<double>{1.0, 0.5, 0.25, 0.0}));
  EXPECT_EQ(cfg.training.train.hidden, (std::vector<int>{64, 64}));
}

TEST(ConfigResolve, TextRoundTripAndHash) {
  const auto cfg = resolve_text(
      "experiment = train\nseed = 18446744073709551615\n[mixture]\nweights = [0.25, 0.75]\n"
      "means = [[0, 1], [2, 3]]\nvariances = [[1, 2], [0.5, 0.1]]\n[training]\nmethod = cm\nema_mu = 0.9\n"
      "[eval]\nmax_score_mse = 0.05\n");
  EXPECT_EQ(cfg.seed, 18446744073709551615ull);
  const auto again = resolve_config(parse_config_text(config_text(cfg)));
  EXPECT_EQ(config_json(again), config_json(cfg));
  EXPECT_EQ(config_hash(again), config_hash(cfg));
  EXPECT_EQ(config_hash(cfg).size(), 16u);

  auto moved = cfg;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(cfg));
  auto reseeded = cfg;
  reseeded.seed = 1;
  EXPECT_NE(config_hash(reseeded), config_hash(cfg));
}

TEST(Run, Thm41DefaultsPassAndReportEquality) {
  auto cfg = resolve_text("experiment = verify-thm41\n");
  cfg.output_dir = scratch("thm41").string();
  const auto rr = run(cfg);
  EXPECT_EQ(rr.exit_code, kExitOk) << rr.summary;
  const std::string report = slurp(fs::path(cfg.output_dir) / "report.json");
  EXPECT_NE(report.find("\"equality_discrepancy\""), std::string::npos);
  // lambda sweep sidecar ends at lambda = 0 with exactly zero variance
  const std::string csv = slurp(fs::path(cfg.output_dir) / "gap_variance_vs_lambda.csv");
  EXPECT_NE(csv.find("target variance,0,0\n"), std::string::npos) << csv;
  for (const char* f : {"manifest.json", "metrics.csv", "report.json", "gap_variance_vs_lambda.svg", "config.ini"})
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / f)) << f;
}

TEST(Run, SameConfigAndSeedGiveIdenticalFiles) {
  for (const std::string exp : {"verify-drift", "train", "verify-martingale", "verify-thm42"}) {
    auto cfg = resolve_text("experiment = " + exp +
                            "\nseed = 4\n[training]\nsteps = 20\nbatch_size = 16\nlog_every = 5\n"
                            "[solver]\nn_paths = 300\nn_steps = 20\n[drift]\nn_paths = 500\n"
                            "[thm42]\neps = [0, 0.1, 0.2]\nn_gap_points = 2\nn_paths = 100\nn_steps = 10\n"
                            "residual_points = 5\n");
    const fs::path da = scratch(exp + "-a"), db = scratch(exp + "-b");
    cfg.output_dir = da.string();
    const auto a = run(cfg);
    cfg.output_dir = db.string();
    const auto b = run(cfg);
    ASSERT_EQ(a.artifacts, b.artifacts);
    EXPECT_NE(std::find(a.artifacts.begin(), a.artifacts.end(), "metrics.csv"), a.artifacts.end());
    for (const auto& f : a.artifacts) {
      if (f == "manifest.json" || f == "config.ini") continue;  // timestamp, output_dir
      EXPECT_EQ(slurp(da / f), slurp(db / f)) << exp << " " << f;
    }
  }
}

TEST(Run, RerunFromResolvedConfigIsBitIdentical) {
  auto cfg = resolve_text("experiment = verify-drift\nseed = 21\n[drift]\nn_paths = 400\nc = [0.3, -0.1]\n");
  const fs::path da = scratch("rerun-a"), db = scratch("rerun-b");
  cfg.output_dir = da.string();
  ASSERT_EQ(run(cfg).exit_code, kExitOk);
  auto again = resolve_config(parse_config_text(slurp(da / "config.ini")));
  again.output_dir = db.string();
  ASSERT_EQ(run(again).exit_code, kExitOk);
  EXPECT_EQ(slurp(da / "metrics.csv"), slurp(db / "metrics.csv"));
  EXPECT_EQ(slurp(da / "report.json"), slurp(db / "report.json"));
  const std::string manifest = slurp(da / "manifest.json");
  EXPECT_NE(manifest.find("\"timestamp\""), std::string::npos);
  EXPECT_NE(manifest.find("\"config_hash\""), std::string::npos);
  EXPECT_NE(manifest.find("\"version\""), std::string::npos);
  EXPECT_EQ(slurp(da / "report.json").find("timestamp"), std::string::npos);
}

TEST(Run, ThresholdFailureHasItsOwnExitCode) {
  auto cfg = resolve_text("experiment = verify-fpe\n[probe]\nn_points = 5\nperturbation = 0.2\n");
  cfg.output_dir = scratch("fpe-fail").string();
  const auto rr = run(cfg);
  EXPECT_EQ(rr.exit_code, kExitThreshold) << rr.summary;
  EXPECT_NE(slurp(fs::path(cfg.output_dir) / "report.json").find("\"passed\": false"), std::string::npos);
  EXPECT_NE(slurp(fs::path(cfg.output_dir) / "manifest.json").find("threshold-failure"), std::string::npos);
}

TEST(Run, MissingCheckpointIsConfigError) {
  auto cfg = resolve_text("experiment = verify-fpe\n[probe]\nfield = checkpoint\n");
  cfg.output_dir = scratch("no-ckpt").string();
  EXPECT_EQ(run(cfg).exit_code, kExitConfig);
  cfg = resolve_text("experiment = eval\n[model]\ncheckpoint = \"/nonexistent/ck.json\"\n");
  cfg.output_dir = scratch("no-ckpt2").string();
  EXPECT_EQ(run(cfg).exit_code, kExitConfig);
}

TEST(Run, DivergentTrainingIsRuntimeErrorWithCheckpoint) {
  auto cfg = resolve_text("experiment = train\n[training]\noptimizer = sgd\nlr = 1e300\nsteps = 5\nbatch_size = 8\n");
  cfg.output_dir = scratch("diverge").string();
  const auto rr = run(cfg);
  EXPECT_EQ(rr.exit_code, kExitRuntime) << rr.summary;
  EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "checkpoint.json"));
  EXPECT_NE(slurp(fs::path(cfg.output_dir) / "manifest.json").find("runtime-error"), std::string::npos);
}

TEST(Run, TrainThenEvalAndSampleFromCheckpoint) {
  const fs::path dt = scratch("pipe-train"), de = scratch("pipe-eval"), ds = scratch("pipe-sample");
  auto cfg = resolve_text("experiment = train\nseed = 2\n[training]\nsteps = 30\nbatch_size = 32\n[model]\nhidden = [8]\n");
  cfg.output_dir = dt.string();
  ASSERT_EQ(run(cfg).exit_code, kExitOk);
  const std::string ck = slurp(dt / "checkpoint.json");
  EXPECT_NE(ck.find("\"config_hash\": \"" + config_hash(cfg) + "\""), std::string::npos);

  auto ev = resolve_text("experiment = eval\n[eval]\nn_eval = 50\nresidual_points = 5\nmax_sliced_wasserstein = 100\n"
                         "[solver]\nn_steps = 20\n[model]\ncheckpoint = \"" + (dt / "checkpoint.json").string() + "\"\n");
  ev.output_dir = de.string();
  EXPECT_EQ(run(ev).exit_code, kExitOk);
  EXPECT_NE(slurp(de / "report.json").find("score_mse_by_t"), std::string::npos);

  auto sa = resolve_text("experiment = sample\n[sample]\nn = 40\n[solver]\nn_steps = 20\n[model]\ncheckpoint = \"" +
                         (dt / "checkpoint.json").string() + "\"\n");
  sa.output_dir = ds.string();
  EXPECT_EQ(run(sa).exit_code, kExitOk);
  const std::string samples = slurp(ds / "samples.csv");
  EXPECT_EQ(std::count(samples.begin(), samples.end(), '\n'), 41);

  // a checkpoint trained under another schedule is refused
  auto mismatch = sa;
  mismatch.schedule = Schedule::linear(0.01, 4.0);
  mismatch.output_dir = scratch("pipe-mismatch").string();
  EXPECT_EQ(run(mismatch).exit_code, kExitConfig);
}

TEST(Run, FromFileAppliesOverridesAndMapsErrors) {
  const fs::path dir = scratch("fromfile");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "good.ini") << "experiment = verify-fpe\nseed = 1\n[probe]\nn_points = 3\n";
    std::ofstream(dir / "bad.ini") << "[solver]\nstepz = 3\n";
  }
  CliOverrides ov;
  ov.seed = 99;
  ov.output_dir = (dir / "out").string();
  ov.assignments = {"probe.t_list=[0.5]"};
  EXPECT_EQ(run_from_file("verify-thm41", dir / "good.ini", ov), kExitOk);
  const std::string manifest = slurp(dir / "out" / "manifest.json");
  EXPECT_NE(manifest.find("\"experiment\": \"verify-thm41\""), std::string::npos);
  EXPECT_NE(manifest.find("\"seed\": 99"), std::string::npos);
  EXPECT_NE(manifest.find("\"t_list\": [\n        0.5\n      ]"), std::string::npos) << manifest;

  EXPECT_EQ(run_from_file("verify-drift", dir / "bad.ini", {}), kExitConfig);
  EXPECT_EQ(run_from_file("verify-drift", dir / "missing.ini", {}), kExitConfig);
  CliOverrides broken;
  broken.assignments = {"no-equals-sign"};
  EXPECT_EQ(run_from_file("verify-drift", dir / "good.ini", broken), kExitConfig);
}

TEST(Plot, EmptySeriesNeedsFlag) {
  const fs::path dir = scratch("plot-empty");
  fs::create_directories(dir);
  PlotStyle style;
  EXPECT_THROW(emit_plot({}, style, dir / "e.svg"), UsageError);
  EXPECT_THROW(emit_plot({{"a", {}, {}}}, style, dir / "e.svg"), UsageError);
  style.allow_empty = true;
  emit_plot({}, style, dir / "e.svg");
  const std::string svg = slurp(dir / "e.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(slurp(dir / "e.csv"), "series,x,y\n");
  EXPECT_THROW(emit_plot({{"a", {1.0, 2.0}, {1.0}}}, style, dir / "u.svg"), ShapeError);
}

TEST(Plot, SinglePointGivesOneMarker) {
  const fs::path dir = scratch("plot-one");
  fs::create_directories(dir);
  emit_plot({{"only", {0.3}, {2.0}}}, {"t", "x", "y", true, true, false}, dir / "one.svg");
  const std::string svg = slurp(dir / "one.svg");
  std::size_t circles = 0;
  for (auto p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  EXPECT_EQ(circles, 1u);
  EXPECT_NE(svg.find(">only<"), std::string::npos);
}

TEST(Plot, SidecarReproducesValuesExactly) {
  const fs::path dir = scratch("plot-csv");
  fs::create_directories(dir);
  PlotSeries s{"residual, mean", {}, {}};
  for (int i = 0; i <= 15; ++i) {
    s.x.push_back(0.02 * i);
    s.y.push_back(1e-5 + 0.1 / 3.0 * i * i);
  }
  PlotSeries t{"other", {1e-300, -2.5}, {5e300, 1.0 / 7.0}};
  const auto csv = emit_plot({s, t}, {}, dir / "r.svg");
  EXPECT_EQ(csv, dir / "r.csv");
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "series,x,y");
  std::vector<double> xs, ys;
  while (std::getline(f, line)) {
    const auto c2 = line.rfind(',');
    const auto c1 = line.rfind(',', c2 - 1);
    xs.push_back(std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr));
    ys.push_back(std::strtod(line.substr(c2 + 1).c_str(), nullptr));
  }
  ASSERT_EQ(xs.size(), 18u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(xs[i], s.x[i]);
    EXPECT_EQ(ys[i], s.y[i]);
  }
  EXPECT_EQ(xs[16], 1e-300);
  EXPECT_EQ(ys[17], 1.0 / 7.0);
  EXPECT_NE(slurp(dir / "r.csv").find("\"residual, mean\""), std::string::npos);
}

TEST(Plot, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-320, -0.0, 123456789.125, 2.0})
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
  EXPECT_EQ(format_double(std::nan("")), "nan");
}
