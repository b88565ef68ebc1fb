#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "conlab/consistency.hpp"
#include "conlab/harness.hpp"
#include "conlab/plot.hpp"
#include "conlab/training.hpp"

namespace py = pybind11;
using namespace conlab;

namespace {

using Release = py::call_guard<py::gil_scoped_release>;

// Rows of an (n, d) array as vectors.
std::vector<Vec> to_rows(const Mat& m) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

Mat from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) return Mat(0, 0);
  Mat m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

// Python-side handle of a field (pybind11 cannot hold pointers to const).
struct PyField {
  FieldPtr f;
};

// Holds a Python callable; the last owner may be released off the GIL.
std::shared_ptr<py::function> hold(py::function f) {
  return {new py::function(std::move(f)), [](py::function* p) {
            py::gil_scoped_acquire gil;
            delete p;
          }};
}

// Python callables may be invoked from worker threads; each call takes the GIL.
PyField python_field(int dim, py::function value, py::object jacobian) {
  auto fn = hold(std::move(value));
  FunctionField::ValueFn v = [fn](const Vec& x, double t) {
    py::gil_scoped_acquire gil;
    return (*fn)(x, t).cast<Vec>();
  };
  FunctionField::JacobianFn j;
  if (!jacobian.is_none()) {
    auto jf = hold(jacobian.cast<py::function>());
    j = [jf](const Vec& x, double t) {
      py::gil_scoped_acquire gil;
      return (*jf)(x, t).cast<Mat>();
    };
  }
  return {std::make_shared<FunctionField>(dim, std::move(v), std::move(j))};
}

py::dict estimate_dict(const McEstimate& e) {
  py::dict d;
  d["mean"] = e.mean;
  d["stderr"] = e.stderr_;
  d["n_paths"] = e.n_paths;
  d["n_steps"] = e.n_steps;
  d["lambda"] = e.lambda;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Consistency checks for diffusion denoisers, scores and consistency functions";
  m.attr("__version__") = CONLAB_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IntegrationError>(m, "IntegrationError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  // rng
  py::class_<CounterRng>(m, "CounterRng")
      .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"), py::arg("stream_id"))
      .def("next_u64", &CounterRng::next_u64)
      .def("uniform", &CounterRng::uniform)
      .def("normal", &CounterRng::normal)
      .def_property_readonly("seed", &CounterRng::seed)
      .def_property_readonly("stream_id", &CounterRng::stream_id);
  m.def("rng_substream", &rng_substream, py::arg("seed"), py::arg("stream_id"));
  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed), py::arg("seed"),
        py::arg("tag"));

  // schedule
  py::class_<Schedule>(m, "Schedule")
      .def_static("linear", &Schedule::linear, py::arg("t0") = 0.01, py::arg("T") = 5.0)
      .def_static("geometric", &Schedule::geometric, py::arg("sigma_min"), py::arg("sigma_max"), py::arg("t0"),
                  py::arg("T"))
      .def_property_readonly("form", [](const Schedule& s) { return to_string(s.form()); })
      .def_property_readonly("t0", &Schedule::t0)
      .def_property_readonly("T", &Schedule::T)
      .def("sigma", &Schedule::sigma)
      .def("sigma2", &Schedule::sigma2)
      .def("g2", &Schedule::g2)
      .def("g", &Schedule::g);

  // mixture
  py::class_<GaussianMixture>(m, "GaussianMixture")
      .def(py::init<std::vector<double>, std::vector<Vec>, std::vector<Vec>>(), py::arg("weights"),
           py::arg("means"), py::arg("variances"))
      .def_static("standard_normal_1d", &GaussianMixture::standard_normal_1d)
      .def_property_readonly("dim", &GaussianMixture::dim)
      .def_property_readonly("weights", &GaussianMixture::weights)
      .def_property_readonly("means", &GaussianMixture::means)
      .def_property_readonly("variances", &GaussianMixture::variances)
      .def("mean", &GaussianMixture::mean)
      .def("marginal_variance", &GaussianMixture::marginal_variance, py::arg("noise_var") = 0.0);
  m.def("log_qt", &log_qt, py::arg("mixture"), py::arg("schedule"), py::arg("x"), py::arg("t"));
  m.def("score", &score, py::arg("mixture"), py::arg("schedule"), py::arg("x"), py::arg("t"));
  m.def("denoiser", &denoiser, py::arg("mixture"), py::arg("schedule"), py::arg("x"), py::arg("t"));
  m.def(
      "sample_data",
      [](const GaussianMixture& gm, std::size_t n, std::uint64_t seed) { return from_rows(sample_data(gm, n, seed)); },
      py::arg("mixture"), py::arg("n"), py::arg("seed"), "n samples as an (n, dim) array");

  // fields
  py::class_<PyField>(m, "VectorField")
      .def_property_readonly("dim", [](const PyField& p) { return p.f->dim(); })
      .def("__call__", [](const PyField& p, const Vec& x, double t) { return (*p.f)(x, t); }, py::arg("x"), py::arg("t"))
      .def_property_readonly("has_jacobian", [](const PyField& p) { return p.f->has_jacobian(); })
      .def("jacobian", [](const PyField& p, const Vec& x, double t) { return p.f->jacobian(x, t); }, py::arg("x"),
           py::arg("t"));
  m.def(
      "truth_score", [](const GaussianMixture& gm, const Schedule& s) { return PyField{truth_score(gm, s)}; },
      py::arg("mixture"), py::arg("schedule"));
  m.def(
      "truth_denoiser", [](const GaussianMixture& gm, const Schedule& s) { return PyField{truth_denoiser(gm, s)}; },
      py::arg("mixture"), py::arg("schedule"));
  m.def("linear_field", [](const Mat& a) { return PyField{linear_field(a)}; }, py::arg("a"));
  m.def("zero_field", [](int d) { return PyField{zero_field(d)}; }, py::arg("dim"));
  m.def("constant_field", [](const Vec& c) { return PyField{constant_field(c)}; }, py::arg("c"));
  m.def(
      "perturbed_field",
      [](const PyField& base, const PyField& p, double eps) {
        return PyField{std::make_shared<PerturbedField>(base.f, p.f, eps)};
      },
      py::arg("base"), py::arg("perturbation"), py::arg("eps"));
  m.def(
      "score_from_denoiser",
      [](const PyField& h, const Schedule& s) { return PyField{std::make_shared<ScoreFromDenoiser>(h.f, s)}; },
      py::arg("denoiser"), py::arg("schedule"));
  m.def(
      "denoiser_from_score",
      [](const PyField& sc, const Schedule& s) { return PyField{std::make_shared<DenoiserFromScore>(sc.f, s)}; },
      py::arg("score"), py::arg("schedule"));
  m.def("function_field", &python_field, py::arg("dim"), py::arg("value"), py::arg("jacobian") = py::none(),
        "Wraps value(x, t) -> array (and optionally jacobian(x, t)) as a field");

  // dynamics
  m.def(
      "pf_ode_solve",
      [](const PyField& s, const Schedule& sched, const Vec& x, double t_start, double t_end, int n_steps,
         const std::string& method) {
        return pf_ode_solve(*s.f, sched, x, t_start, t_end, n_steps, solver_from_string(method));
      },
      py::arg("score"), py::arg("schedule"), py::arg("x"), py::arg("t_start"), py::arg("t_end"), py::arg("n_steps"),
      py::arg("method") = "heun", Release());
  m.def(
      "lambda_sde_endpoint",
      [](const PyField& s, const Schedule& sched, const Vec& x, double t_start, double t_end, double lambda,
         int n_steps, std::uint64_t seed, std::uint64_t stream_id) {
        auto rng = rng_substream(seed, stream_id);
        return lambda_sde_endpoint(*s.f, sched, x, t_start, t_end, lambda, n_steps, rng);
      },
      py::arg("score"), py::arg("schedule"), py::arg("x"), py::arg("t_start"), py::arg("t_end"), py::arg("lambda_"),
      py::arg("n_steps"), py::arg("seed"), py::arg("stream_id") = 0, Release());

  // residuals
  m.def(
      "score_fpe_residual",
      [](const PyField& s, const Schedule& sched, const Vec& x, double t, const std::string& form, double spatial_step,
         double time_step) {
        const auto probe = make_probe(s.f, sched, s.f->has_jacobian() ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference,
                                      spatial_step, time_step);
        const auto r = score_fpe_sample(probe, x, t, form == "gradient" ? FpeForm::Gradient : FpeForm::Jacobian);
        return py::make_tuple(r.residual, r.normalized());
      },
      py::arg("score"), py::arg("schedule"), py::arg("x"), py::arg("t"), py::arg("form") = "jacobian",
      py::arg("spatial_step") = 1e-3, py::arg("time_step") = 1e-4,
      "Returns (residual vector, normalized residual norm)");
  m.def(
      "denoiser_pde_residual",
      [](const PyField& h, const Schedule& sched, const Vec& x, double t, double spatial_step, double time_step) {
        const auto probe = make_probe(h.f, sched, h.f->has_jacobian() ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference,
                                      spatial_step, time_step);
        return denoiser_pde_residual(probe, nullptr, x, t);
      },
      py::arg("denoiser"), py::arg("schedule"), py::arg("x"), py::arg("t"), py::arg("spatial_step") = 1e-3,
      py::arg("time_step") = 1e-4);

  // consistency
  m.def(
      "martingale_gap",
      [](const PyField& h, const Schedule& sched, const Vec& x, double t, double t_prime, double lambda,
         std::size_t n_paths, int n_steps, std::uint64_t seed) {
        MartingaleGap g;
        {
          py::gil_scoped_release release;
          g = martingale_gap(h.f, sched, x, t, t_prime, lambda, n_paths, n_steps, seed);
        }
        py::dict d;
        d["gap"] = g.gap;
        d["regularizer"] = g.regularizer;
        d["estimate"] = estimate_dict(g.estimate);
        return d;
      },
      py::arg("denoiser"), py::arg("schedule"), py::arg("x"), py::arg("t"), py::arg("t_prime"), py::arg("lambda_"),
      py::arg("n_paths"), py::arg("n_steps"), py::arg("seed"));
  m.def("ode_consistency_gap",
        [](const PyField& f, const PyField& s, const Schedule& sched, const Vec& x, double t, double t_prime,
           int n_steps, const std::string& method) {
          return ode_consistency_gap(f.f, s.f, sched, x, t, t_prime, n_steps, solver_from_string(method));
        },
        py::arg("f"), py::arg("score"), py::arg("schedule"), py::arg("x"), py::arg("t"), py::arg("t_prime"),
        py::arg("n_steps"), py::arg("method") = "heun", Release());
  m.def(
      "drift_test",
      [](const Vec& drift, const Schedule& sched, const Vec& x, double t, double t_prime, std::size_t n_paths,
         int n_steps, std::uint64_t seed) {
        DriftTestResult r;
        {
          py::gil_scoped_release release;
          r = drift_test(drift, [&](double u) { return sched.g(u); }, x, t, t_prime, n_paths, n_steps, seed);
        }
        return py::make_tuple(r.effect, r.stderr_);
      },
      py::arg("drift"), py::arg("schedule"), py::arg("x"), py::arg("t"), py::arg("t_prime"), py::arg("n_paths"),
      py::arg("n_steps"), py::arg("seed"), "Returns (effect, stderr) with the schedule's g as diffusion");
  m.def(
      "theorem41_check",
      [](const PyField& h, const Schedule& sched, const Vec& x, double t, double t_prime, int n_steps,
         std::vector<double> lambdas, std::size_t sweep_paths) {
        Theorem41Config cfg;
        cfg.t = t;
        cfg.t_prime = t_prime;
        cfg.n_steps = n_steps;
        cfg.lambdas = std::move(lambdas);
        cfg.sweep_paths = sweep_paths;
        Theorem41Report r;
        {
          py::gil_scoped_release release;
          r = theorem41_check(h.f, nullptr, sched, x, cfg);
        }
        py::dict d;
        d["cdm_regularizer"] = r.cdm_regularizer;
        d["ode_consistency"] = r.ode_consistency;
        d["discrepancy"] = r.discrepancy;
        d["seed_variance"] = r.seed_variance;
        py::list sweep;
        for (const auto& lv : r.lambda_sweep) sweep.append(py::make_tuple(lv.lambda, lv.variance));
        d["lambda_sweep"] = sweep;
        d["passed"] = r.passed();
        return d;
      },
      py::arg("denoiser"), py::arg("schedule"), py::arg("x"), py::arg("t") = 1.0, py::arg("t_prime") = 0.5,
      py::arg("n_steps") = 64, py::arg("lambdas") = std::vector<double>{1.0, 0.5, 0.25, 0.0},
      py::arg("sweep_paths") = 2000);

  // stats
  m.def(
      "spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "sliced_wasserstein",
      [](const Mat& a, const Mat& b, int n_projections, std::uint64_t seed) {
        return sliced_wasserstein(to_rows(a), to_rows(b), n_projections, seed);
      },
      py::arg("a"), py::arg("b"), py::arg("n_projections") = 64, py::arg("seed") = 0,
      "Sliced Wasserstein-1 distance between two (n, dim) sample arrays");

  // models and training
  py::class_<Model>(m, "Model")
      .def_property_readonly("dim", &Model::dim)
      .def_property_readonly("kind", [](const Model& mo) { return to_string(mo.kind); })
      .def_property_readonly("layer_dims", [](const Model& mo) { return mo.net.layer_dims(); })
      .def_property_readonly("num_params", [](const Model& mo) { return mo.net.num_params(); })
      .def("__call__", &Model::operator(), py::arg("x"), py::arg("t"))
      .def(
          "score", [](const Model& mo, const Vec& x, double t) -> Vec { return mo.score(x, {t}).col(0); },
          py::arg("x"), py::arg("t"))
      .def("as_field", [](const Model& mo) { return PyField{model_field(mo)}; })
      .def("score_field", [](const Model& mo) { return PyField{model_score_field(mo)}; });

  m.def(
      "train",
      [](const std::string& method, const GaussianMixture& gm, const Schedule& sched, std::size_t steps,
         std::uint64_t seed, std::vector<int> hidden, double lr, std::size_t batch_size, double reg_weight,
         const PyField* teacher) {
        TrainConfig cfg;
        cfg.method = train_method_from_string(method);
        cfg.steps = steps;
        cfg.seed = seed;
        cfg.hidden = std::move(hidden);
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.weights.reg = reg_weight;
        cfg.log_every = 1;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, gm, sched, teacher ? teacher->f : nullptr);
        }
        if (r.aborted) throw TrainingError(r.error);
        py::list losses;
        for (const auto& h : r.history) losses.append(h.loss);
        return py::make_tuple(r.checkpoint.model, losses);
      },
      py::arg("method"), py::arg("mixture"), py::arg("schedule"), py::arg("steps") = 5000, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<int>{64, 64}, py::arg("lr") = 1e-3, py::arg("batch_size") = 256,
      py::arg("reg_weight") = 1.0, py::arg("teacher") = nullptr,
      "Returns (model, per-step losses); raises TrainingError if training diverges");
  m.def(
      "evaluate",
      [](const Model& mo, const GaussianMixture& gm, std::size_t n_eval, std::vector<double> t_grid, std::uint64_t seed) {
        EvalConfig cfg;
        cfg.n_eval = n_eval;
        cfg.t_grid = std::move(t_grid);
        cfg.seed = seed;
        EvalMetrics e;
        {
          py::gil_scoped_release release;
          e = evaluate_model(mo, gm, cfg);
        }
        py::dict d;
        d["score_mse"] = e.score_mse ? py::cast(*e.score_mse) : py::none();
        d["fpe_residual"] = e.fpe_residual ? py::cast(*e.fpe_residual) : py::none();
        d["score_mse_by_t"] = e.score_mse_by_t;
        d["fpe_residual_by_t"] = e.fpe_residual_by_t;
        d["sliced_wasserstein"] = e.sliced_wasserstein;
        return d;
      },
      py::arg("model"), py::arg("mixture"), py::arg("n_eval") = 2000,
      py::arg("t_grid") = std::vector<double>{0.5, 1.0, 2.0, 4.0}, py::arg("seed") = 1);
  m.def(
      "save_checkpoint", [](const Model& mo, const std::string& path) { save_checkpoint({mo, ""}, path); },
      py::arg("model"), py::arg("path"));
  m.def(
      "load_checkpoint", [](const std::string& path) { return load_checkpoint(path).model; }, py::arg("path"));

  // harness
  m.def("experiments", &experiment_names);
  m.def(
      "run_config",
      [](const std::string& text, const std::string& output_dir) {
        RawConfig raw = parse_config_text(text, "<python>");
        RunConfig cfg = resolve_config(raw);
        cfg.output_dir = output_dir;
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run(cfg);
        }
        return py::make_tuple(r.exit_code, r.summary);
      },
      py::arg("text"), py::arg("output_dir"),
      "Runs an experiment from config text; returns (exit code, summary line)");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(resolve_config(parse_config_text(text))); },
      py::arg("text"));
}
