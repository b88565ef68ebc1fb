#include "conlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "conlab/consistency.hpp"
#include "conlab/field.hpp"
#include "conlab/plot.hpp"
#include "conlab/rng.hpp"
#include "conlab/stats.hpp"

namespace conlab {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

const std::vector<std::pair<Experiment, std::string>> kExperiments = {
    {Experiment::VerifyFpe, "verify-fpe"},         {Experiment::VerifyMartingale, "verify-martingale"},
    {Experiment::VerifyThm41, "verify-thm41"},     {Experiment::VerifyThm42, "verify-thm42"},
    {Experiment::VerifyLemmaA4, "verify-lemma-a4"}, {Experiment::VerifyDrift, "verify-drift"},
    {Experiment::Train, "train"},                  {Experiment::Sample, "sample"},
    {Experiment::Eval, "eval"}};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_name(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

bool is_bare_word(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || std::string("_-./+:~").find(c) != std::string::npos;
  });
}

// Drops a trailing "# ..." or "; ..." comment that sits outside a quoted string.
std::string strip_inline_comment(const std::string& v) {
  bool quoted = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '"' && (i == 0 || v[i - 1] != '\\')) quoted = !quoted;
    if (!quoted && (v[i] == '#' || v[i] == ';') && i > 0 && (v[i - 1] == ' ' || v[i - 1] == '\t'))
      return v.substr(0, i);
  }
  return v;
}

}  // namespace

std::string to_string(Experiment e) {
  for (const auto& [k, name] : kExperiments)
    if (k == e) return name;
  return "?";
}

Experiment experiment_from_string(const std::string& s) {
  for (const auto& [k, name] : kExperiments)
    if (name == s) return k;
  std::string all;
  for (const auto& n : experiment_names()) all += (all.empty() ? "" : ", ") + n;
  throw ConfigError("unknown experiment '" + s + "' (expected one of " + all + ")");
}

std::vector<std::string> experiment_names() {
  std::vector<std::string> out;
  for (const auto& e : kExperiments) out.push_back(e.second);
  return out;
}

void RawConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  for (auto& e : entries)
    if (e.key == key) {
      e.value = value;
      e.origin = origin;
      return;
    }
  entries.push_back({key, value, origin});
}

RawConfig parse_config_text(const std::string& text, const std::string& source) {
  RawConfig raw;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || !is_name(trim(s.substr(1, s.size() - 2))))
        throw ConfigError(where + ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value' or '[section]'");
    const std::string key = trim(s.substr(0, eq));
    if (!is_name(key)) throw ConfigError(where + ": malformed key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!seen.insert(full).second) throw ConfigError(where + ": duplicate key '" + full + "'");
    raw.entries.push_back({full, trim(strip_inline_comment(s.substr(eq + 1))), where});
  }
  return raw;
}

RawConfig load_config_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

namespace {

// Typed, strict access to the raw entries; finish() rejects whatever was not read.
class Reader {
 public:
  explicit Reader(const RawConfig& raw) {
    for (const auto& e : raw.entries) {
      json v;
      try {
        v = json::parse(e.value);
      } catch (const json::exception&) {
        if (!is_bare_word(e.value))
          throw ConfigError("config key '" + e.key + "': malformed value '" + e.value + "' (" + e.origin + ")");
        v = e.value;
      }
      values_[e.key] = {v, e.origin};
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void finish() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "' (" + v.second + ")");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    auto it = values_.find(key);
    throw ConfigError("config key '" + key + "': " + what + (it != values_.end() ? " (" + it->second.second + ")" : ""));
  }

  const json* get(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second.first;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "expected a finite number");
    }
  }
  void positive(const std::string& key, double& out) {
    number(key, out);
    if (!(out > 0)) fail(key, "must be positive");
  }
  void optional_number(const std::string& key, std::optional<double>& out) {
    if (const json* v = get(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) fail(key, "expected a number or null");
      out = v->get<double>();
    }
  }
  std::uint64_t unsigned_value(const std::string& key, const json& v) const {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) fail(key, "must not be negative");
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0 && d == std::floor(d) && d < 9.007199254740992e15) return static_cast<std::uint64_t>(d);
    }
    fail(key, "expected a non-negative integer");
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) out = unsigned_value(key, *v);
  }
  void count(const std::string& key, std::size_t& out, std::size_t min = 1) {
    if (const json* v = get(key)) {
      out = static_cast<std::size_t>(unsigned_value(key, *v));
      if (out < min) fail(key, "must be at least " + std::to_string(min));
    }
  }
  void steps(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      const auto n = unsigned_value(key, *v);
      if (n < 1 || n > 100000000) fail(key, "must be between 1 and 1e8");
      out = static_cast<int>(n);
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T, class F>
  void enumeration(const std::string& key, T& out, F from_string) {
    std::string s;
    if (!has(key)) return;
    string(key, s);
    try {
      out = from_string(s);
    } catch (const Error& e) {
      fail(key, e.what());
    }
  }
  void numbers(const std::string& key, std::vector<double>& out, bool allow_empty = false) {
    if (const json* v = get(key)) {
      if (v->is_number()) {
        out = {v->get<double>()};
        return;
      }
      if (!v->is_array()) fail(key, "expected an array of numbers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number()) fail(key, "expected an array of numbers");
        out.push_back(x.get<double>());
      }
      if (out.empty() && !allow_empty) fail(key, "must not be empty");
    }
  }
  void widths(const std::string& key, std::vector<int>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(key, "expected an array of layer widths");
      out.clear();
      for (const auto& x : *v) {
        const auto n = unsigned_value(key, x);
        if (n < 1 || n > 100000) fail(key, "layer widths must be between 1 and 1e5");
        out.push_back(static_cast<int>(n));
      }
    }
  }
  // Array of vectors; a flat array of numbers means one-dimensional rows.
  void rows(const std::string& key, std::vector<Vec>& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) fail(key, "expected a non-empty array");
    out.clear();
    for (const auto& r : *v) {
      if (r.is_number()) {
        out.push_back(Vec::Constant(1, r.get<double>()));
        continue;
      }
      if (!r.is_array() || r.empty()) fail(key, "expected numbers or arrays of numbers");
      Vec row(static_cast<Eigen::Index>(r.size()));
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (!r[i].is_number()) fail(key, "expected numbers or arrays of numbers");
        row[static_cast<Eigen::Index>(i)] = r[i].get<double>();
      }
      out.push_back(row);
    }
  }

 private:
  std::map<std::string, std::pair<json, std::string>> values_;
  std::set<std::string> used_;
};

PointSampler sampler_from_string(const std::string& s) {
  if (s == "qt-samples") return PointSampler::QtSamples;
  if (s == "uniform-box") return PointSampler::UniformBox;
  throw ConfigError("expected qt-samples or uniform-box, got '" + s + "'");
}
std::string to_string(PointSampler s) { return s == PointSampler::QtSamples ? "qt-samples" : "uniform-box"; }

FpeForm form_from_string(const std::string& s) {
  if (s == "jacobian") return FpeForm::Jacobian;
  if (s == "gradient") return FpeForm::Gradient;
  throw ConfigError("expected jacobian or gradient, got '" + s + "'");
}
std::string to_string(FpeForm f) { return f == FpeForm::Jacobian ? "jacobian" : "gradient"; }

DerivativeMode mode_from_string(const std::string& s) {
  if (s == "analytic") return DerivativeMode::Analytic;
  if (s == "finite-difference") return DerivativeMode::FiniteDifference;
  throw ConfigError("expected analytic or finite-difference, got '" + s + "'");
}
std::string to_string(DerivativeMode m) { return m == DerivativeMode::Analytic ? "analytic" : "finite-difference"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("expected adam or sgd, got '" + s + "'");
}
std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

// Only keys given explicitly are checked; defaults that fall outside a
// custom schedule surface when the experiment that uses them runs.
void check_pair(Reader& r, const Schedule& sched, const std::string& section, double t, double tp) {
  if (!r.has(section + ".t") && !r.has(section + ".t_prime")) return;
  if (!sched.contains(t)) r.fail(section + ".t", "outside the schedule interval");
  if (!sched.contains(tp)) r.fail(section + ".t_prime", "outside the schedule interval");
  if (!(tp < t)) r.fail(section + ".t_prime", "must be smaller than " + section + ".t");
}

void check_times(Reader& r, const Schedule& sched, const std::string& key, const std::vector<double>& ts) {
  if (!r.has(key)) return;
  for (double t : ts)
    if (!sched.contains(t)) r.fail(key, "time " + format_double(t) + " is outside the schedule interval");
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

RunConfig resolve_config(const RawConfig& raw) {
  Reader r(raw);
  RunConfig c;

  r.enumeration("experiment", c.experiment, experiment_from_string);
  r.u64("seed", c.seed);
  r.string("output_dir", c.output_dir);
  if (c.output_dir.empty()) r.fail("output_dir", "must not be empty");

  {
    ScheduleForm form = ScheduleForm::LinearSigma;
    r.enumeration("schedule.form", form, schedule_form_from_string);
    double t0 = 0.01, T = 5.0, smin = 0.01, smax = 5.0;
    r.number("schedule.t0", t0);
    r.number("schedule.T", T);
    if (form == ScheduleForm::LinearSigma) {
      for (const char* k : {"schedule.sigma_min", "schedule.sigma_max"})
        if (r.has(k)) r.fail(k, "only applies to schedule.form = geometric-sigma");
    }
    r.number("schedule.sigma_min", smin);
    r.number("schedule.sigma_max", smax);
    try {
      c.schedule = form == ScheduleForm::LinearSigma ? Schedule::linear(t0, T) : Schedule::geometric(smin, smax, t0, T);
    } catch (const Error& e) {
      throw ConfigError(std::string("config section 'schedule': ") + e.what());
    }
  }

  {
    const bool any = r.has("mixture.weights") || r.has("mixture.means") || r.has("mixture.variances");
    if (any) {
      for (const char* k : {"mixture.weights", "mixture.means", "mixture.variances"})
        if (!r.has(k)) r.fail(k, "is required when any mixture key is given");
      std::vector<double> w;
      std::vector<Vec> mu, var;
      r.numbers("mixture.weights", w);
      r.rows("mixture.means", mu);
      r.rows("mixture.variances", var);
      try {
        c.mixture = GaussianMixture(w, mu, var);
      } catch (const Error& e) {
        throw ConfigError(std::string("config section 'mixture': ") + e.what());
      }
    }
  }
  const auto dim = static_cast<std::size_t>(c.mixture.dim());
  auto point = [&](const std::string& key, std::vector<double>& v) {
    r.numbers(key, v);
    if (v.size() != dim)
      r.fail(key, "has dimension " + std::to_string(v.size()) + " but the mixture has " + std::to_string(dim));
  };
  // a default one-dimensional point stretched to the mixture dimension
  auto widen = [&](std::vector<double>& v) {
    if (v.size() == 1 && dim > 1) v.assign(dim, v[0]);
  };
  widen(c.martingale.x);
  widen(c.thm41.x);

  auto& sv = c.solver;
  r.enumeration("solver.method", sv.method, solver_from_string);
  r.steps("solver.n_steps", sv.n_steps);
  r.number("solver.lambda", sv.lambda);
  if (sv.lambda < 0) r.fail("solver.lambda", "must be >= 0");
  r.count("solver.n_paths", sv.n_paths, 2);

  auto& pr = c.probe;
  r.numbers("probe.t_list", pr.t_list);
  check_times(r, c.schedule, "probe.t_list", pr.t_list);
  r.count("probe.n_points", pr.n_points);
  r.enumeration("probe.sampler", pr.sampler, sampler_from_string);
  r.positive("probe.box_half_width", pr.box_half_width);
  r.positive("probe.spatial_step", pr.spatial_step);
  r.positive("probe.time_step", pr.time_step);
  r.enumeration("probe.form", pr.form, form_from_string);
  r.enumeration("probe.mode", pr.mode, mode_from_string);
  r.number("probe.perturbation", pr.perturbation);
  r.string("probe.field", pr.field);
  if (pr.field != "truth" && pr.field != "checkpoint") r.fail("probe.field", "expected truth or checkpoint");
  r.positive("probe.fpe_threshold", pr.fpe_threshold);
  r.positive("probe.lemma_threshold", pr.lemma_threshold);

  auto& mg = c.martingale;
  point("martingale.x", mg.x);
  r.number("martingale.t", mg.t);
  r.number("martingale.t_prime", mg.t_prime);
  check_pair(r, c.schedule, "martingale", mg.t, mg.t_prime);
  r.number("martingale.perturbation", mg.perturbation);
  r.positive("martingale.max_gap", mg.max_gap);

  auto& t41 = c.thm41;
  point("thm41.x", t41.x);
  r.number("thm41.t", t41.t);
  r.number("thm41.t_prime", t41.t_prime);
  check_pair(r, c.schedule, "thm41", t41.t, t41.t_prime);
  r.steps("thm41.n_steps", t41.n_steps);
  r.count("thm41.n_seeds", t41.n_seeds, 2);
  r.numbers("thm41.lambdas", t41.lambdas);
  r.count("thm41.sweep_paths", t41.sweep_paths, 2);
  r.positive("thm41.tolerance", t41.tolerance);

  auto& t42 = c.thm42;
  r.numbers("thm42.eps", t42.eps);
  if (std::find(t42.eps.begin(), t42.eps.end(), 0.0) == t42.eps.end()) r.fail("thm42.eps", "must contain 0");
  r.count("thm42.n_gap_points", t42.n_gap_points);
  r.number("thm42.t", t42.t);
  r.number("thm42.t_prime", t42.t_prime);
  check_pair(r, c.schedule, "thm42", t42.t, t42.t_prime);
  r.number("thm42.lambda", t42.lambda);
  if (t42.lambda < 0) r.fail("thm42.lambda", "must be >= 0");
  r.count("thm42.n_paths", t42.n_paths, 2);
  r.steps("thm42.n_steps", t42.n_steps);
  r.count("thm42.residual_points", t42.residual_points);
  r.numbers("thm42.t_list", t42.t_list);
  check_times(r, c.schedule, "thm42.t_list", t42.t_list);
  r.positive("thm42.fpe_floor", t42.fpe_floor);
  r.number("thm42.min_spearman_residual", t42.min_spearman_residual);
  r.number("thm42.min_spearman_gap", t42.min_spearman_gap);

  auto& dr = c.drift;
  r.numbers("drift.c", dr.c);
  r.numbers("drift.x", dr.x);
  if (dr.x.size() == 1 && dr.c.size() > 1) dr.x.assign(dr.c.size(), dr.x[0]);
  if (dr.x.size() != dr.c.size()) r.fail("drift.x", "must have the same dimension as drift.c");
  r.number("drift.t", dr.t);
  r.number("drift.t_prime", dr.t_prime);
  check_pair(r, c.schedule, "drift", dr.t, dr.t_prime);
  r.count("drift.n_paths", dr.n_paths, 2);
  r.steps("drift.n_steps", dr.n_steps);

  auto& md = c.model;
  r.widths("model.hidden", md.hidden);
  r.enumeration("model.time_features", md.features, time_features_from_string);
  r.string("model.checkpoint", md.checkpoint);

  auto& tr = c.training.train;
  r.enumeration("training.method", tr.method, train_method_from_string);
  r.count("training.steps", tr.steps, 0);
  r.positive("training.lr", tr.lr);
  r.enumeration("training.optimizer", tr.optimizer, optimizer_from_string);
  r.count("training.batch_size", tr.batch_size);
  r.number("training.dsm_weight", tr.weights.dsm);
  r.number("training.reg_weight", tr.weights.reg);
  r.count("training.t_grid_points", tr.t_grid_points, 2);
  r.number("training.ema_mu", tr.ema_mu);
  if (tr.ema_mu < 0 || tr.ema_mu > 1) r.fail("training.ema_mu", "must lie in [0, 1]");
  r.count("training.log_every", tr.log_every);
  r.count("training.cdm_points", tr.cdm.n_points);
  r.count("training.cdm_paths", tr.cdm.n_paths);
  r.steps("training.cdm_steps", tr.cdm.n_steps);
  r.number("training.cdm_lambda", tr.cdm.lambda);
  if (tr.cdm.lambda < 0) r.fail("training.cdm_lambda", "must be >= 0");
  r.positive("training.fp_spatial_step", tr.fp.spatial_step);
  r.positive("training.fp_time_step", tr.fp.time_step);
  r.count("training.fp_points", tr.fp.n_points, 0);
  r.string("training.teacher", c.training.teacher);
  tr.seed = c.seed;
  tr.hidden = md.hidden;
  tr.features = md.features;

  auto& ev = c.eval;
  r.count("eval.n_eval", ev.eval.n_eval, 2);
  r.numbers("eval.t_grid", ev.eval.t_grid);
  check_times(r, c.schedule, "eval.t_grid", ev.eval.t_grid);
  r.count("eval.residual_points", ev.eval.residual_points);
  r.positive("eval.spatial_step", ev.eval.spatial_step);
  r.positive("eval.time_step", ev.eval.time_step);
  {
    std::size_t np = static_cast<std::size_t>(ev.eval.n_projections);
    r.count("eval.n_projections", np);
    ev.eval.n_projections = static_cast<int>(np);
  }
  r.optional_number("eval.max_score_mse", ev.max_score_mse);
  r.optional_number("eval.max_fpe_residual", ev.max_fpe_residual);
  r.optional_number("eval.max_sliced_wasserstein", ev.max_sliced_wasserstein);
  ev.eval.ode_steps = sv.n_steps;
  ev.eval.seed = derive_seed(c.seed, "eval");

  r.count("sample.n", c.sample.n, 2);

  r.finish();
  return c;
}

namespace {

ojson vec_json(const Vec& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ojson rows_json(const std::vector<Vec>& rows) {
  ojson a = ojson::array();
  for (const auto& r : rows) a.push_back(vec_json(r));
  return a;
}

ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson config_object(const RunConfig& c) {
  ojson j;
  j["experiment"] = to_string(c.experiment);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  ojson s;
  s["form"] = to_string(c.schedule.form());
  s["t0"] = c.schedule.t0();
  s["T"] = c.schedule.T();
  if (c.schedule.form() == ScheduleForm::GeometricSigma) {
    s["sigma_min"] = c.schedule.sigma_min();
    s["sigma_max"] = c.schedule.sigma_max();
  }
  j["schedule"] = s;
  j["mixture"] = {{"weights", c.mixture.weights()},
                  {"means", rows_json(c.mixture.means())},
                  {"variances", rows_json(c.mixture.variances())}};
  j["solver"] = {{"method", to_string(c.solver.method)},
                 {"n_steps", c.solver.n_steps},
                 {"lambda", c.solver.lambda},
                 {"n_paths", c.solver.n_paths}};
  const auto& p = c.probe;
  j["probe"] = {{"t_list", p.t_list},
                {"n_points", p.n_points},
                {"sampler", to_string(p.sampler)},
                {"box_half_width", p.box_half_width},
                {"spatial_step", p.spatial_step},
                {"time_step", p.time_step},
                {"form", to_string(p.form)},
                {"mode", to_string(p.mode)},
                {"perturbation", p.perturbation},
                {"field", p.field},
                {"fpe_threshold", p.fpe_threshold},
                {"lemma_threshold", p.lemma_threshold}};
  const auto& m = c.martingale;
  j["martingale"] = {{"x", m.x},
                     {"t", m.t},
                     {"t_prime", m.t_prime},
                     {"perturbation", m.perturbation},
                     {"max_gap", m.max_gap}};
  const auto& a = c.thm41;
  j["thm41"] = {{"x", a.x},
                {"t", a.t},
                {"t_prime", a.t_prime},
                {"n_steps", a.n_steps},
                {"n_seeds", a.n_seeds},
                {"lambdas", a.lambdas},
                {"sweep_paths", a.sweep_paths},
                {"tolerance", a.tolerance}};
  const auto& b = c.thm42;
  j["thm42"] = {{"eps", b.eps},
                {"n_gap_points", b.n_gap_points},
                {"t", b.t},
                {"t_prime", b.t_prime},
                {"lambda", b.lambda},
                {"n_paths", b.n_paths},
                {"n_steps", b.n_steps},
                {"residual_points", b.residual_points},
                {"t_list", b.t_list},
                {"fpe_floor", b.fpe_floor},
                {"min_spearman_residual", b.min_spearman_residual},
                {"min_spearman_gap", b.min_spearman_gap}};
  const auto& d = c.drift;
  j["drift"] = {{"c", d.c}, {"x", d.x}, {"t", d.t}, {"t_prime", d.t_prime}, {"n_paths", d.n_paths}, {"n_steps", d.n_steps}};
  j["model"] = {{"hidden", c.model.hidden},
                {"time_features", to_string(c.model.features)},
                {"checkpoint", c.model.checkpoint}};
  const auto& t = c.training.train;
  j["training"] = {{"method", to_string(t.method)},
                   {"steps", t.steps},
                   {"lr", t.lr},
                   {"optimizer", to_string(t.optimizer)},
                   {"batch_size", t.batch_size},
                   {"dsm_weight", t.weights.dsm},
                   {"reg_weight", t.weights.reg},
                   {"t_grid_points", t.t_grid_points},
                   {"ema_mu", t.ema_mu},
                   {"log_every", t.log_every},
                   {"cdm_points", t.cdm.n_points},
                   {"cdm_paths", t.cdm.n_paths},
                   {"cdm_steps", t.cdm.n_steps},
                   {"cdm_lambda", t.cdm.lambda},
                   {"fp_spatial_step", t.fp.spatial_step},
                   {"fp_time_step", t.fp.time_step},
                   {"fp_points", t.fp.n_points},
                   {"teacher", c.training.teacher}};
  const auto& e = c.eval;
  j["eval"] = {{"n_eval", e.eval.n_eval},
               {"t_grid", e.eval.t_grid},
               {"residual_points", e.eval.residual_points},
               {"spatial_step", e.eval.spatial_step},
               {"time_step", e.eval.time_step},
               {"n_projections", e.eval.n_projections},
               {"max_score_mse", optional_json(e.max_score_mse)},
               {"max_fpe_residual", optional_json(e.max_fpe_residual)},
               {"max_sliced_wasserstein", optional_json(e.max_sliced_wasserstein)}};
  j["sample"] = {{"n", c.sample.n}};
  return j;
}

}  // namespace

std::string config_json(const RunConfig& cfg) { return config_object(cfg).dump(2); }

std::string config_text(const RunConfig& cfg) {
  const ojson j = config_object(cfg);
  std::string top, sections;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_object()) {
      top += k + " = " + v.dump() + "\n";
      continue;
    }
    sections += "\n[" + k + "]\n";
    for (const auto& [kk, vv] : v.items()) sections += kk + " = " + vv.dump() + "\n";
  }
  return top + sections;
}

std::string config_hash(const RunConfig& cfg) {
  ojson j = config_object(cfg);
  j.erase("output_dir");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Check {
  std::string name;
  double value;
  std::string op;  // "<=", ">=" or "=="
  double threshold;
  bool passed;
};

Check check_le(const std::string& name, double v, double thr) { return {name, v, "<=", thr, v <= thr}; }
Check check_ge(const std::string& name, double v, double thr) { return {name, v, ">=", thr, v >= thr}; }
Check check_eq(const std::string& name, double v, double thr) { return {name, v, "==", thr, v == thr}; }

ojson num_json(double v) { return std::isfinite(v) ? ojson(v) : ojson(format_double(v)); }

// Collects artifacts; every file lands in the output directory.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw UsageError("cannot write " + (dir_ / name).string());
    f << content;
    if (!f) throw UsageError("failed writing " + (dir_ / name).string());
    files_.push_back(name);
  }
  void plot(const std::string& name, const std::vector<PlotSeries>& series, const PlotStyle& style) {
    const auto csv = emit_plot(series, style, dir_ / name);
    files_.push_back(name);
    files_.push_back(csv.filename().string());
  }
  void add(const std::string& name) { files_.push_back(name); }
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

struct Body {
  std::vector<Check> checks;
  ojson results = ojson::object();
  std::string error;  // set for runtime failures that still produced artifacts
};

class CsvWriter {
 public:
  explicit CsvWriter(std::initializer_list<std::string> header) {
    bool first = true;
    for (const auto& h : header) {
      out_ += (first ? "" : ",") + h;
      first = false;
    }
    out_ += "\n";
  }
  CsvWriter& cell(const std::string& s) {
    out_ += (row_started_ ? "," : "") + s;
    row_started_ = true;
    return *this;
  }
  CsvWriter& cell(double v) { return cell(format_double(v)); }
  CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
  void end() {
    out_ += "\n";
    row_started_ = false;
  }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  bool row_started_ = false;
};

bool same_schedule(const Schedule& a, const Schedule& b) {
  return a.form() == b.form() && a.t0() == b.t0() && a.T() == b.T() &&
         (a.form() == ScheduleForm::LinearSigma || (a.sigma_min() == b.sigma_min() && a.sigma_max() == b.sigma_max()));
}

Checkpoint load_matching_checkpoint(const RunConfig& c, const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!same_schedule(ck.model.schedule, c.schedule))
    throw ConfigError("checkpoint '" + path + "' was trained with a different schedule than the [schedule] section");
  if (ck.model.dim() != c.mixture.dim())
    throw ConfigError("checkpoint '" + path + "' has dimension " + std::to_string(ck.model.dim()) +
                      ", the mixture has " + std::to_string(c.mixture.dim()));
  return ck;
}

// The score under test for probe-based experiments.
FieldPtr probe_score(const RunConfig& c, double eps) {
  FieldPtr base;
  if (c.probe.field == "checkpoint") {
    if (c.model.checkpoint.empty()) throw ConfigError("probe.field = checkpoint needs model.checkpoint");
    base = model_score_field(load_matching_checkpoint(c, c.model.checkpoint).model);
  } else {
    base = truth_score(c.mixture, c.schedule);
  }
  if (eps == 0.0) return base;
  const int d = c.mixture.dim();
  return std::make_shared<PerturbedField>(base, linear_field(Mat::Identity(d, d)), eps);
}

GridSpec probe_grid(const RunConfig& c) {
  GridSpec g;
  g.sampler = c.probe.sampler;
  g.n_points = c.probe.n_points;
  g.t_list = c.probe.t_list;
  g.seed = derive_seed(c.seed, "probe-grid");
  g.mixture = c.mixture;
  g.box_half_width = c.probe.box_half_width;
  g.form = c.probe.form;
  return g;
}

DerivativeMode usable_mode(const RunConfig& c, const FieldPtr& f) {
  return f->has_jacobian() ? c.probe.mode : DerivativeMode::FiniteDifference;
}

Body run_verify_fpe(const RunConfig& c, Outputs& out) {
  const auto s = probe_score(c, c.probe.perturbation);
  const auto probe = make_probe(s, c.schedule, usable_mode(c, s), c.probe.spatial_step, c.probe.time_step);
  const auto rows = residual_grid_report(probe, probe_grid(c));
  out.write("metrics.csv", residual_rows_csv(rows));

  Body b;
  double worst = 0;
  PlotSeries mean{"mean", {}, {}}, max{"max", {}, {}};
  ojson per_t = ojson::array();
  for (const auto& r : rows) {
    worst = std::max(worst, r.max_res);
    mean.x.push_back(r.t);
    mean.y.push_back(r.mean_res);
    max.x.push_back(r.t);
    max.y.push_back(r.max_res);
    per_t.push_back({{"t", r.t}, {"n", r.n}, {"mean_res", r.mean_res}, {"max_res", r.max_res}});
  }
  b.results["derivative_mode"] = to_string(usable_mode(c, s));
  b.results["rows"] = per_t;
  b.results["max_normalized_residual"] = worst;
  b.checks.push_back(check_le("max_normalized_fpe_residual", worst, c.probe.fpe_threshold));
  out.plot("fpe_residual.svg", {mean, max},
           {"Score FPE residual", "t", "normalized residual", true, true, false});
  return b;
}

Body run_verify_lemma(const RunConfig& c, Outputs& out) {
  const auto s = probe_score(c, c.probe.perturbation);
  const auto h = std::make_shared<DenoiserFromScore>(s, c.schedule);
  const auto mode = usable_mode(c, s);
  const auto ps = make_probe(s, c.schedule, mode, c.probe.spatial_step, c.probe.time_step);
  const auto ph = make_probe(h, c.schedule, mode, c.probe.spatial_step, c.probe.time_step);
  const auto grid = probe_grid(c);

  CsvWriter csv({"t", "n", "mean_identity_error", "max_identity_error", "max_score_residual"});
  PlotSeries err{"max identity error", {}, {}};
  ojson per_t = ojson::array();
  double worst = 0;
  for (std::size_t ti = 0; ti < grid.t_list.size(); ++ti) {
    const double t = grid.t_list[ti];
    const auto pts = grid_points(grid, c.mixture.dim(), ti, c.schedule);
    std::vector<double> e(pts.size()), rs_norm(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) {
      const Vec rs = score_fpe_residual(ps, pts[i], t, grid.form);
      const Vec rh = denoiser_pde_residual(ph, nullptr, pts[i], t);
      e[i] = (rh - c.schedule.sigma2(t) * rs).norm() / (1.0 + rs.norm());
      rs_norm[i] = rs.norm();
    });
    const double mx = e.empty() ? 0.0 : *std::max_element(e.begin(), e.end());
    const double mean = e.empty() ? 0.0 : pairwise_sum(e) / static_cast<double>(e.size());
    const double rmax = rs_norm.empty() ? 0.0 : *std::max_element(rs_norm.begin(), rs_norm.end());
    worst = std::max(worst, mx);
    csv.cell(t).cell(pts.size()).cell(mean).cell(mx).cell(rmax).end();
    err.x.push_back(t);
    err.y.push_back(mx);
    per_t.push_back({{"t", t}, {"n", pts.size()}, {"mean_identity_error", mean}, {"max_identity_error", mx}});
  }
  out.write("metrics.csv", csv.str());
  Body b;
  b.results["rows"] = per_t;
  b.results["max_identity_error"] = worst;
  b.checks.push_back(check_le("max_identity_error", worst, c.probe.lemma_threshold));
  out.plot("lemma_identity.svg", {err},
           {"Denoiser vs scaled score residual", "t", "||r_h - sigma^2 r_s|| / (1 + ||r_s||)", true, true, false});
  return b;
}

FieldPtr denoiser_under_test(const RunConfig& c, double eps) {
  if (eps == 0.0) return truth_denoiser(c.mixture, c.schedule);
  const int d = c.mixture.dim();
  const auto s = std::make_shared<PerturbedField>(truth_score(c.mixture, c.schedule),
                                                  linear_field(Mat::Identity(d, d)), eps);
  return std::make_shared<DenoiserFromScore>(s, c.schedule);
}

Body run_verify_martingale(const RunConfig& c, Outputs& out) {
  const auto& m = c.martingale;
  const auto h = denoiser_under_test(c, m.perturbation);
  const Vec x = to_vec(m.x);
  const auto g = martingale_gap(h, c.schedule, x, m.t, m.t_prime, c.solver.lambda, c.solver.n_paths,
                                c.solver.n_steps, derive_seed(c.seed, "martingale"));
  const auto bias = martingale_gap_bias(h, c.schedule, x, m.t, m.t_prime, c.solver.lambda, c.solver.n_paths,
                                        c.solver.n_steps, derive_seed(c.seed, "martingale-bias"));
  const Vec hx = (*h)(x, m.t);
  CsvWriter csv({"coordinate", "h_value", "target_mean", "target_stderr", "gap", "bias", "bias_stderr"});
  for (Eigen::Index i = 0; i < x.size(); ++i)
    csv.cell(static_cast<std::size_t>(i))
        .cell(hx[i])
        .cell(g.estimate.mean[i])
        .cell(g.estimate.stderr_[i])
        .cell(g.gap[i])
        .cell(bias.bias[i])
        .cell(bias.stderr_[i])
        .end();
  out.write("metrics.csv", csv.str());

  const double gap = g.gap.norm(), se = g.estimate.max_stderr();
  const double noise_bound = 3 * se + bias.norm() + 3 * max_abs(bias.stderr_);
  Body b;
  b.results = {{"gap_norm", gap},
               {"stderr", se},
               {"bias_norm", bias.norm()},
               {"bias_stderr", max_abs(bias.stderr_)},
               {"regularizer", g.regularizer},
               {"n_paths", c.solver.n_paths},
               {"n_steps", c.solver.n_steps},
               {"lambda", c.solver.lambda}};
  b.checks.push_back(check_le("gap_within_noise_and_bias", gap, noise_bound));
  b.checks.push_back(check_le("gap_absolute", gap, m.max_gap));
  return b;
}

Body run_verify_thm41(const RunConfig& c, Outputs& out) {
  const auto& a = c.thm41;
  Theorem41Config tc;
  tc.t = a.t;
  tc.t_prime = a.t_prime;
  tc.n_steps = a.n_steps;
  tc.seeds.clear();
  for (std::size_t k = 0; k < a.n_seeds; ++k) tc.seeds.push_back(derive_seed(derive_seed(c.seed, "thm41-seeds"), k));
  tc.lambdas = a.lambdas;
  tc.sweep_paths = a.sweep_paths;
  tc.sweep_seed = derive_seed(c.seed, "thm41-sweep");
  tc.tolerance = a.tolerance;
  const auto rep = theorem41_check(truth_denoiser(c.mixture, c.schedule), nullptr, c.schedule, to_vec(a.x), tc);

  CsvWriter csv({"lambda", "target_variance"});
  PlotSeries sweep{"target variance", {}, {}};
  ojson js = ojson::array();
  for (const auto& lv : rep.lambda_sweep) {
    csv.cell(lv.lambda).cell(lv.variance).end();
    sweep.x.push_back(lv.lambda);
    sweep.y.push_back(lv.variance);
    js.push_back({{"lambda", lv.lambda}, {"variance", lv.variance}});
  }
  out.write("metrics.csv", csv.str());
  out.plot("gap_variance_vs_lambda.svg", {sweep},
           {"Variance of the CDM target", "lambda", "variance", true, true, false});

  Body b;
  b.results = {{"cdm_regularizer", rep.cdm_regularizer},
               {"ode_consistency", rep.ode_consistency},
               {"discrepancy", rep.discrepancy},
               {"seed_variance", rep.seed_variance},
               {"lambda0_stderr", rep.lambda0_stderr},
               {"lambda_sweep", js}};
  b.checks.push_back(check_le("equality_discrepancy", rep.discrepancy, a.tolerance));
  b.checks.push_back(check_eq("seed_variance", rep.seed_variance, 0.0));
  b.checks.push_back(check_eq("lambda0_stderr", rep.lambda0_stderr, 0.0));
  b.checks.push_back({"sweep_strictly_decreasing_to_zero", rep.sweep_ok ? 1.0 : 0.0, "==", 1.0, rep.sweep_ok});
  return b;
}

Body run_verify_thm42(const RunConfig& c, Outputs& out) {
  const auto& s = c.thm42;
  Theorem42Config tc;
  tc.n_gap_points = s.n_gap_points;
  tc.t = s.t;
  tc.t_prime = s.t_prime;
  tc.lambda = s.lambda;
  tc.n_paths = s.n_paths;
  tc.n_steps = s.n_steps;
  tc.residual_grid.n_points = s.residual_points;
  tc.residual_grid.t_list = s.t_list;
  tc.residual_grid.seed = derive_seed(c.seed, "thm42-grid");
  tc.residual_grid.mixture = c.mixture;
  tc.spatial_step = c.probe.spatial_step;
  tc.time_step = c.probe.time_step;
  tc.seed = derive_seed(c.seed, "thm42");
  tc.fpe_floor = s.fpe_floor;
  tc.min_spearman_residual = s.min_spearman_residual;
  tc.min_spearman_gap = s.min_spearman_gap;
  const auto rep = theorem42_check(s.eps, c.mixture, c.schedule, tc);

  CsvWriter csv({"eps", "mean_residual", "mean_gap", "gap_stderr"});
  PlotSeries res{"mean FPE residual", {}, {}}, gap{"mean martingale gap", {}, {}};
  ojson rows = ojson::array();
  double zero_res = 0, zero_gap = 0;
  for (const auto& r : rep.rows) {
    csv.cell(r.eps).cell(r.mean_residual).cell(r.mean_gap).cell(r.gap_stderr).end();
    res.x.push_back(r.eps);
    res.y.push_back(r.mean_residual);
    gap.x.push_back(r.eps);
    gap.y.push_back(r.mean_gap);
    rows.push_back({{"eps", r.eps}, {"mean_residual", r.mean_residual}, {"mean_gap", r.mean_gap}, {"gap_stderr", r.gap_stderr}});
    if (r.eps == 0.0) zero_res = r.mean_residual, zero_gap = r.mean_gap;
  }
  out.write("metrics.csv", csv.str());
  out.plot("residual_vs_eps.svg", {res}, {"Score FPE residual under perturbation", "eps", "mean normalized residual", true, true, false});
  out.plot("gap_vs_eps.svg", {gap}, {"Martingale gap under perturbation", "eps", "mean ||gap||", true, true, false});

  Body b;
  b.results = {{"rows", rows},
               {"spearman_residual", rep.spearman_residual},
               {"spearman_gap", rep.spearman_gap},
               {"zero_gap_bias", rep.zero_gap_bias},
               {"zero_gap_threshold", rep.zero_gap_threshold}};
  b.checks.push_back(check_ge("spearman_residual", rep.spearman_residual, s.min_spearman_residual));
  b.checks.push_back(check_ge("spearman_gap", rep.spearman_gap, s.min_spearman_gap));
  b.checks.push_back(check_le("zero_eps_residual", zero_res, s.fpe_floor));
  b.checks.push_back(check_le("zero_eps_gap", zero_gap, rep.zero_gap_threshold));
  return b;
}

Body run_verify_drift(const RunConfig& c, Outputs& out) {
  const auto& d = c.drift;
  const DiffusionFn g = [&](double t) { return c.schedule.g(t); };
  const Vec x = to_vec(d.x), drift = to_vec(d.c);
  const auto with = drift_test(drift, g, x, d.t, d.t_prime, d.n_paths, d.n_steps, derive_seed(c.seed, "drift"));
  const auto without = drift_test(Vec::Zero(drift.size()), g, x, d.t, d.t_prime, d.n_paths, d.n_steps,
                                  derive_seed(c.seed, "driftless"));
  const Vec expected = drift * (d.t - d.t_prime);
  auto z = [](double diff, double se) { return se > 0 ? std::abs(diff) / se : (diff == 0 ? 0.0 : HUGE_VAL); };
  CsvWriter csv({"case", "coordinate", "effect", "expected", "stderr", "z"});
  double zmax_with = 0, zmax_without = 0;
  for (Eigen::Index i = 0; i < drift.size(); ++i) {
    const double zw = z(with.effect[i] - expected[i], with.stderr_[i]);
    const double zo = z(without.effect[i], without.stderr_[i]);
    zmax_with = std::max(zmax_with, zw);
    zmax_without = std::max(zmax_without, zo);
    csv.cell("drift").cell(static_cast<std::size_t>(i)).cell(with.effect[i]).cell(expected[i]).cell(with.stderr_[i]).cell(zw).end();
    csv.cell("driftless").cell(static_cast<std::size_t>(i)).cell(without.effect[i]).cell(0.0).cell(without.stderr_[i]).cell(zo).end();
  }
  out.write("metrics.csv", csv.str());
  Body b;
  b.results = {{"effect", vec_json(with.effect)},
               {"expected", vec_json(expected)},
               {"stderr", vec_json(with.stderr_)},
               {"driftless_effect", vec_json(without.effect)},
               {"driftless_stderr", vec_json(without.stderr_)}};
  b.checks.push_back(check_le("drift_effect_z", zmax_with, 3.0));
  b.checks.push_back(check_le("driftless_effect_z", zmax_without, 3.0));
  return b;
}

Body run_train(const RunConfig& c, Outputs& out) {
  FieldPtr teacher;
  if (c.training.train.method == TrainMethod::Cm && c.training.teacher != "analytic") {
    const auto ck = load_matching_checkpoint(c, c.training.teacher);
    teacher = model_score_field(ck.model);
  }
  const auto res = train(c.training.train, c.mixture, c.schedule, teacher, config_hash(c));
  save_checkpoint(res.checkpoint, (out.dir() / "checkpoint.json").string());
  out.add("checkpoint.json");

  CsvWriter csv({"step", "loss", "dsm", "reg"});
  PlotSeries loss{"loss", {}, {}};
  for (const auto& h : res.history) {
    csv.cell(h.step).cell(h.loss).cell(h.dsm).cell(h.reg).end();
    loss.x.push_back(static_cast<double>(h.step));
    loss.y.push_back(h.loss);
  }
  out.write("metrics.csv", csv.str());
  out.plot("loss.svg", {loss}, {"Training loss", "step", "loss", false, true, true});

  Body b;
  b.results = {{"method", to_string(c.training.train.method)},
               {"parametrization", to_string(res.checkpoint.model.kind)},
               {"steps_requested", c.training.train.steps},
               {"steps_logged", res.history.size()},
               {"final_loss", res.history.empty() ? ojson(nullptr) : num_json(res.history.back().loss)},
               {"aborted", res.aborted},
               {"config_hash", res.checkpoint.config_hash}};
  if (res.aborted) {
    b.results["error"] = res.error;
    b.error = "training aborted: " + res.error;
  }
  return b;
}

struct Sampler {
  FieldPtr score, consistency_fn;
  std::string source;
};

Sampler sampler_for(const RunConfig& c) {
  if (c.model.checkpoint.empty()) return {truth_score(c.mixture, c.schedule), nullptr, "analytic"};
  const auto ck = load_matching_checkpoint(c, c.model.checkpoint);
  if (ck.model.kind == ParamKind::Consistency) return {nullptr, model_field(ck.model), c.model.checkpoint};
  return {model_score_field(ck.model), nullptr, c.model.checkpoint};
}

Body run_sample(const RunConfig& c, Outputs& out) {
  const auto s = sampler_for(c);
  const auto xs = generate_samples(s.score, s.consistency_fn, c.mixture, c.schedule, c.sample.n, c.solver.n_steps,
                                   derive_seed(c.seed, "sample"), c.solver.method);
  const auto data = sample_data(c.mixture, c.sample.n, derive_seed(c.seed, "sample-data"));
  const int d = c.mixture.dim();

  std::string text = "index";
  for (int j = 0; j < d; ++j) text += ",x" + std::to_string(j);
  text += "\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    text += std::to_string(i);
    for (int j = 0; j < d; ++j) text += "," + format_double(xs[i][j]);
    text += "\n";
  }
  out.write("samples.csv", text);

  const auto est = summarize(xs);
  const Vec var = est.variance() * (static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  const Vec true_mean = c.mixture.mean(), true_var = c.mixture.marginal_variance();
  CsvWriter csv({"coordinate", "sample_mean", "data_mean", "sample_variance", "data_variance"});
  for (int j = 0; j < d; ++j)
    csv.cell(static_cast<std::size_t>(j)).cell(est.mean[j]).cell(true_mean[j]).cell(var[j]).cell(true_var[j]).end();
  out.write("metrics.csv", csv.str());

  // quantile-quantile plot of the first coordinate
  std::vector<double> qs, qd;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    qs.push_back(xs[i][0]);
    qd.push_back(data[i][0]);
  }
  std::sort(qs.begin(), qs.end());
  std::sort(qd.begin(), qd.end());
  const double lo = std::min(qs.front(), qd.front()), hi = std::max(qs.back(), qd.back());
  out.plot("qq.svg", {{"samples vs data", qd, qs}, {"y = x", {lo, hi}, {lo, hi}}},
           {"Quantiles of coordinate 0", "data", "samples", false, true, false});

  Body b;
  b.results = {{"source", s.source},
               {"n", xs.size()},
               {"sliced_wasserstein", sliced_wasserstein(xs, data, c.eval.eval.n_projections, derive_seed(c.seed, "sample-sw"))},
               {"solver", s.consistency_fn ? "one-step" : to_string(c.solver.method)}};
  return b;
}

Body run_eval(const RunConfig& c, Outputs& out) {
  const auto s = sampler_for(c);
  const auto m = evaluate_fields(s.score, s.consistency_fn, c.mixture, c.schedule, c.eval.eval);
  const auto& grid = c.eval.eval.t_grid;
  CsvWriter csv({"t", "score_mse", "fpe_residual"});
  PlotSeries mse{"score MSE", {}, {}}, fpe{"FPE residual", {}, {}};
  for (std::size_t i = 0; i < m.score_mse_by_t.size(); ++i) {
    const double r = i < m.fpe_residual_by_t.size() ? m.fpe_residual_by_t[i] : NAN;
    csv.cell(grid[i]).cell(m.score_mse_by_t[i]).cell(r).end();
    mse.x.push_back(grid[i]);
    mse.y.push_back(m.score_mse_by_t[i]);
    fpe.x.push_back(grid[i]);
    fpe.y.push_back(r);
  }
  out.write("metrics.csv", csv.str());
  if (s.score) out.plot("eval_by_t.svg", {mse, fpe}, {"Score error by time", "t", "value", true, true, false});

  Body b;
  b.results = {{"source", s.source},
               {"score_mse", m.score_mse ? ojson(*m.score_mse) : ojson(nullptr)},
               {"score_mse_stderr", m.score_mse_stderr ? ojson(*m.score_mse_stderr) : ojson(nullptr)},
               {"fpe_residual", m.fpe_residual ? ojson(*m.fpe_residual) : ojson(nullptr)},
               {"score_mse_by_t", m.score_mse_by_t},
               {"fpe_residual_by_t", m.fpe_residual_by_t},
               {"sliced_wasserstein", m.sliced_wasserstein}};
  const auto& e = c.eval;
  auto need = [&](const std::optional<double>& v, const char* what) {
    if (!v) throw ConfigError(std::string("eval threshold on ") + what + " needs a score model, the checkpoint is a consistency model");
    return *v;
  };
  if (e.max_score_mse) b.checks.push_back(check_le("score_mse", need(m.score_mse, "score_mse"), *e.max_score_mse));
  if (e.max_fpe_residual)
    b.checks.push_back(check_le("fpe_residual", need(m.fpe_residual, "fpe_residual"), *e.max_fpe_residual));
  if (e.max_sliced_wasserstein)
    b.checks.push_back(check_le("sliced_wasserstein", m.sliced_wasserstein, *e.max_sliced_wasserstein));
  return b;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

RunResult run(const RunConfig& cfg) {
  Outputs out(cfg.output_dir);
  RunResult rr;
  Body body;
  std::string status = "ok";
  std::string message;
  try {
    switch (cfg.experiment) {
      case Experiment::VerifyFpe: body = run_verify_fpe(cfg, out); break;
      case Experiment::VerifyLemmaA4: body = run_verify_lemma(cfg, out); break;
      case Experiment::VerifyMartingale: body = run_verify_martingale(cfg, out); break;
      case Experiment::VerifyThm41: body = run_verify_thm41(cfg, out); break;
      case Experiment::VerifyThm42: body = run_verify_thm42(cfg, out); break;
      case Experiment::VerifyDrift: body = run_verify_drift(cfg, out); break;
      case Experiment::Train: body = run_train(cfg, out); break;
      case Experiment::Sample: body = run_sample(cfg, out); break;
      case Experiment::Eval: body = run_eval(cfg, out); break;
    }
    if (!body.error.empty()) {
      status = "runtime-error";
      message = body.error;
      rr.exit_code = kExitRuntime;
    }
  } catch (const ConfigError& e) {
    status = "config-error", message = e.what(), rr.exit_code = kExitConfig;
  } catch (const UsageError& e) {
    status = "config-error", message = e.what(), rr.exit_code = kExitConfig;
  } catch (const DomainError& e) {
    status = "config-error", message = e.what(), rr.exit_code = kExitConfig;
  } catch (const ShapeError& e) {
    status = "config-error", message = e.what(), rr.exit_code = kExitConfig;
  } catch (const std::exception& e) {
    status = "runtime-error", message = e.what(), rr.exit_code = kExitRuntime;
  }

  std::size_t failed = 0;
  ojson checks = ojson::array();
  for (const auto& ch : body.checks) {
    failed += ch.passed ? 0 : 1;
    checks.push_back({{"name", ch.name}, {"value", num_json(ch.value)}, {"op", ch.op},
                      {"threshold", num_json(ch.threshold)}, {"passed", ch.passed}});
  }
  if (rr.exit_code == kExitOk && failed > 0) {
    status = "threshold-failure";
    rr.exit_code = kExitThreshold;
  }

  if (rr.exit_code == kExitOk || rr.exit_code == kExitThreshold) {
    ojson report;
    report["experiment"] = to_string(cfg.experiment);
    report["passed"] = failed == 0;
    report["checks"] = checks;
    report["results"] = body.results;
    out.write("report.json", report.dump(2) + "\n");
  } else if (!body.results.empty()) {
    ojson report;
    report["experiment"] = to_string(cfg.experiment);
    report["passed"] = false;
    report["error"] = message;
    report["checks"] = checks;
    report["results"] = body.results;
    out.write("report.json", report.dump(2) + "\n");
  }
  out.write("config.ini", config_text(cfg));

  ojson manifest;
  manifest["artifact"] = "consistency-lab";
  manifest["version"] = CONLAB_VERSION;
  manifest["timestamp"] = utc_timestamp();
  manifest["experiment"] = to_string(cfg.experiment);
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = config_hash(cfg);
  manifest["status"] = status;
  manifest["exit_code"] = rr.exit_code;
  if (!message.empty()) manifest["message"] = message;
  manifest["artifacts"] = out.files();
  manifest["config"] = config_object(cfg);
  out.write("manifest.json", manifest.dump(2) + "\n");
  rr.artifacts = out.files();

  std::ostringstream summary;
  summary << to_string(cfg.experiment) << ": ";
  if (rr.exit_code == kExitOk)
    summary << (body.checks.empty() ? "OK" : "PASS");
  else if (rr.exit_code == kExitThreshold)
    summary << "FAIL";
  else
    summary << "ERROR " << message;
  if (!body.checks.empty()) summary << " (" << body.checks.size() - failed << "/" << body.checks.size() << " checks)";
  for (const auto& ch : body.checks)
    if (!ch.passed) summary << "; " << ch.name << " = " << format_double(ch.value) << " not " << ch.op << " " << format_double(ch.threshold);
  summary << " -> " << cfg.output_dir;
  rr.summary = summary.str();
  return rr;
}

int run_from_file(const std::string& experiment, const fs::path& config_path, const CliOverrides& ov) {
  try {
    RawConfig raw = load_config_file(config_path);
    if (!experiment.empty()) raw.set("experiment", json(experiment).dump(), "command line");
    if (ov.seed) raw.set("seed", std::to_string(*ov.seed), "--seed");
    if (ov.output_dir) raw.set("output_dir", json(*ov.output_dir).dump(), "--out");
    for (const auto& a : ov.assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos || trim(a.substr(0, eq)).empty())
        throw ConfigError("override '" + a + "' is not of the form key=value");
      raw.set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)), "--set");
    }
    const RunConfig cfg = resolve_config(raw);
    const RunResult rr = run(cfg);
    (rr.exit_code == kExitOk ? std::cout : std::cerr) << rr.summary << "\n";
    return rr.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace conlab
