import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclestart.svm import (
    DegenerateData, DimensionMismatch, LinearSvmModel, NonConvergence, PlattCalibration,
    decision, fingerprint, fit_platt, load_model, predict_proba, save_model, train_svm,
)
from oracles import svm_grid_optimum, svm_objective


def blobs(rng, n=40, d=2, gap=3.0):
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = rng.normal(size=(n, d)) * 0.5
    x[:, 0] += y * gap / 2
    return x, y


def test_symmetric_pair():
    x = np.array([[-1.0], [1.0]])
    y = np.array([-1, 1])
    m = train_svm(x, y, c=100.0)
    assert m.weights[0] == pytest.approx(1.0, abs=1e-3)
    assert m.bias == pytest.approx(0.0, abs=1e-3)
    assert np.all(np.sign(m.decision(x)) == y)


def test_separable_blobs_fit_perfectly():
    x, y = blobs(np.random.default_rng(0))
    m = train_svm(x, y, c=1.0)
    assert np.all(np.sign(m.decision(x)) == y)


def test_norm_grows_with_c():
    x, y = blobs(np.random.default_rng(1), gap=1.0)
    norms = [np.linalg.norm(train_svm(x, y, c=2.0 ** e, tol=1e-8, eps=1e-6).weights) for e in range(-8, 5)]
    assert all(b >= a - 1e-6 for a, b in zip(norms, norms[1:]))


def test_objective_history_non_increasing():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(300, 10))
    y = np.where(x[:, 0] + 0.8 * rng.normal(size=300) > 0, 1, -1)
    m = train_svm(x, y, c=1.0, tol=1e-8, eps=1e-6)
    assert len(m.objective_history) >= 1
    assert all(b <= a for a, b in zip(m.objective_history, m.objective_history[1:]))
    assert m.objective_history[-1] == pytest.approx(svm_objective(m.weights, m.bias, x, y, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6), st.sampled_from([2.0 ** -8, 1.0, 2.0 ** 4]))
def test_tiny_instances_match_grid_search(seed, n, c):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    y = np.array([1, -1] + list(rng.choice([-1, 1], size=n - 2)), dtype=float)
    m = train_svm(x, y, c, tol=1e-10, eps=1e-9)
    ours = svm_objective(m.weights, m.bias, x, y, c)
    assert ours <= svm_grid_optimum(x, y, c) * 1.01 + 1e-12


def test_class_weighting_balances_classes():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 2))
    y = np.where(np.arange(200) < 20, 1, -1)
    x[y > 0, 0] += 1.0
    plain = train_svm(x, y, 1.0)
    weighted = train_svm(x, y, 1.0, class_weight=True)
    assert (weighted.decision(x) > 0).sum() > (plain.decision(x) > 0).sum()


def test_errors():
    with pytest.raises(DegenerateData):
        train_svm(np.zeros((3, 2)), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        train_svm(np.zeros((2, 2)), np.array([0, 1]), 1.0)
    with pytest.raises(DimensionMismatch):
        LinearSvmModel(np.zeros(3), 0.0, 1.0).decision(np.zeros(4))


def test_decision_examples():
    assert decision(LinearSvmModel(np.zeros(4), 0.3, 1.0), np.arange(4.0)) == pytest.approx(0.3)
    assert decision(LinearSvmModel(np.eye(4)[2], 0.0, 1.0), np.array([0, 0, 2.0, 0])) == 2.0
    rng = np.random.default_rng(4)
    w, x, b = rng.normal(size=50), rng.normal(size=50), rng.normal()
    naive = sum(wi * xi for wi, xi in zip(w, x)) + b
    assert decision(LinearSvmModel(w, b, 1.0), x) == pytest.approx(naive, abs=1e-12)


class TestPlatt:
    def test_order_preserved(self):
        cal = fit_platt(np.array([-1.0, -1.0, 1.0, 1.0]), np.array([-1, -1, 1, 1]))
        assert cal.a < 0
        assert cal.p_moving(0.5) > 0.5 > cal.p_moving(-0.5)

    def test_uninformative_decisions_give_prior(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=10_000)
        y = np.where(rng.random(10_000) < 0.3, 1, -1)
        cal = fit_platt(f, y)
        assert abs(cal.a) < 0.05
        assert float(np.mean(cal.p_moving(f))) == pytest.approx(np.mean(y > 0), abs=0.01)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(0.01, 100), st.floats(-50, 50))
    def test_affine_invariance(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        y = np.where(rng.random(200) < 0.4, 1, -1)
        f = y * 0.8 + rng.normal(size=200)
        y[:2] = (1, -1)
        p1 = fit_platt(f, y).p_moving(f)
        p2 = fit_platt(scale * f + shift, y).p_moving(scale * f + shift)
        np.testing.assert_allclose(p1, p2, atol=1e-6)

    def test_scaled_decisions_scale_slope(self):
        rng = np.random.default_rng(6)
        y = np.where(rng.random(500) < 0.5, 1, -1)
        f = y + rng.normal(size=500)
        assert fit_platt(10 * f, y).a == pytest.approx(fit_platt(f, y).a / 10, rel=1e-6)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_monotone(self, f1, f2):
        cal = PlattCalibration(-1.7, 0.2)
        lo, hi = sorted((f1, f2))
        assert cal.p_moving(lo) <= cal.p_moving(hi)

    def test_iteration_cap_is_reported(self):
        rng = np.random.default_rng(7)
        y = np.where(rng.random(100) < 0.5, 1, -1)
        with pytest.raises(NonConvergence):
            fit_platt(y * 3 + rng.normal(size=100), y, max_iter=1)

    def test_one_class(self):
        with pytest.raises(DegenerateData):
            fit_platt(np.ones(4), np.ones(4))


def test_predict_proba():
    m = LinearSvmModel(np.array([1.0, -2.0]), 0.5, 1.0)
    cal = PlattCalibration(-2.0, 1.0)
    x = np.random.default_rng(8).normal(size=(20, 2))
    pw, pm = predict_proba(m, cal, x)
    assert np.all(pw + pm == 1.0)
    mid = np.array([[0.5 - 0.5, 0.0]])  # decision 0.5 -> a f + b = 0
    assert predict_proba(m, cal, mid)[1][0] == pytest.approx(0.5)
    assert PlattCalibration(-1.0, 0.0).p_moving(1e6) == 1.0


def test_model_round_trip(tmp_path):
    x, y = blobs(np.random.default_rng(9))
    m = train_svm(x, y, 0.5)
    cal = fit_platt(m.decision(x), y)
    save_model(tmp_path / "m.json", m, cal, {"mchog": {"n_bins": 18}}, fingerprint(x, y))
    m2, cal2, doc = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(m2.weights, m.weights)
    assert (m2.bias, m2.c_param, cal2) == (m.bias, 0.5, cal)
    assert doc["training_fingerprint"] == fingerprint(x, y) != fingerprint(x, -y)
