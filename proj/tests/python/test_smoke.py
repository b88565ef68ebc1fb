import json
import math

import numpy as np
import pytest

import consistency_lab as cl


@pytest.fixture
def setup():
    sched = cl.Schedule.linear()
    gm = cl.GaussianMixture([0.5, 0.5], [np.array([-1.0]), np.array([1.0])],
                            [np.array([0.25]), np.array([0.25])])
    return sched, gm


def test_schedule_and_rng():
    s = cl.Schedule.linear(0.01, 5.0)
    assert s.sigma(2.0) == 2.0
    assert s.g2(1.5) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        s.sigma(6.0)
    a, b = cl.rng_substream(7, 0), cl.rng_substream(7, 1)
    assert a.next_u64() != b.next_u64()
    assert cl.rng_substream(7, 3).normal() == cl.rng_substream(7, 3).normal()


def test_truth_score_matches_numpy_gradient(setup):
    sched, gm = setup
    x, t, h = np.array([0.3]), 0.7, 1e-5
    fd = (cl.log_qt(gm, sched, x + h, t) - cl.log_qt(gm, sched, x - h, t)) / (2 * h)
    assert cl.score(gm, sched, x, t)[0] == pytest.approx(fd, rel=1e-7)
    d = cl.denoiser(gm, sched, x, t)
    assert d[0] == pytest.approx(x[0] + sched.sigma2(t) * cl.score(gm, sched, x, t)[0])


def test_samples_and_sliced_wasserstein(setup):
    _, gm = setup
    a = cl.sample_data(gm, 4000, 1)
    b = cl.sample_data(gm, 4000, 2)
    assert a.shape == (4000, 1)
    assert abs(a.mean()) < 0.06
    assert cl.sliced_wasserstein(a, b, 32, 0) < 0.05
    assert cl.sliced_wasserstein(a, b + 1.0, 32, 0) == pytest.approx(1.0, abs=0.05)


def test_fpe_residual_truth_vs_perturbed(setup):
    sched, gm = setup
    s = cl.truth_score(gm, sched)
    _, r0 = cl.score_fpe_residual(s, sched, np.array([0.4]), 1.0)
    bad = cl.perturbed_field(s, cl.linear_field(np.eye(1)), 0.2)
    _, r1 = cl.score_fpe_residual(bad, sched, np.array([0.4]), 1.0)
    assert r0 <= 1e-4
    assert r1 > 100 * r0


def test_theorem41_collapse(setup):
    sched, gm = setup
    rep = cl.theorem41_check(cl.truth_denoiser(gm, sched), sched, np.array([0.6]))
    assert rep["passed"]
    assert rep["discrepancy"] <= 1e-12
    assert rep["seed_variance"] == 0.0
    assert rep["lambda_sweep"][-1] == (0.0, 0.0)


def test_martingale_gap_and_python_field(setup):
    sched, gm = setup
    h = cl.truth_denoiser(gm, sched)
    g = cl.martingale_gap(h, sched, np.array([0.6]), 1.0, 0.5, 1.0, 4000, 100, 3)
    assert np.linalg.norm(g["gap"]) <= 3 * g["estimate"]["stderr"].max() + 0.02
    # the identity denoiser written in Python is a martingale for any lambda
    ident = cl.function_field(1, lambda x, t: x, lambda x, t: np.eye(1))
    g2 = cl.martingale_gap(ident, sched, np.array([0.6]), 1.0, 0.5, 1.0, 200, 10, 3)
    assert np.linalg.norm(g2["gap"]) <= 4 * g2["estimate"]["stderr"].max()


def test_drift_test(setup):
    sched, _ = setup
    eff, se = cl.drift_test(np.array([0.5]), sched, np.array([0.0]), 1.0, 0.5, 10000, 50, 12)
    assert abs(eff[0] - 0.25) <= 3 * se[0]


def test_train_evaluate_checkpoint(setup, tmp_path):
    sched, gm = setup
    model, losses = cl.train("dsm", gm, sched, steps=60, seed=1, hidden=[16], batch_size=64)
    assert len(losses) == 60
    assert model.kind == "score"
    assert all(math.isfinite(v) for v in losses)
    m = cl.evaluate(model, gm, n_eval=100)
    assert m["score_mse"] is not None and len(m["score_mse_by_t"]) == 4
    path = str(tmp_path / "ck.json")
    cl.save_checkpoint(model, path)
    back = cl.load_checkpoint(path)
    x = np.array([0.2])
    assert back(x, 1.0)[0] == model(x, 1.0)[0]


def test_harness_run_and_strict_config(tmp_path):
    code, summary = cl.run_config("experiment = verify-thm41\nseed = 2\n", str(tmp_path / "o"))
    assert code == 0, summary
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["passed"]
    with pytest.raises(ValueError, match="solver.stepz"):
        cl.run_config("[solver]\nstepz = 3\n", str(tmp_path / "bad"))
    assert "verify-thm42" in cl.experiments()
