"""Linear two-class SVM (SMO on the dual) and Platt sigmoid calibration."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WAITING, MOVING = -1, 1
TAU = 1e-12
MIN_EPS = 1e-12
STALL_EPOCHS = 50  # epochs without primal improvement before giving up
KERNEL_CACHE_ENTRIES = 16_000_000  # Gram matrix kept in memory up to this size


class DegenerateData(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    c_param: float
    objective_history: list[float] = field(default_factory=list)

    def decision(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[0]:
            raise DimensionMismatch(
                f"descriptor length {x.shape[-1]} != model length {self.weights.shape[0]}")
        return x @ self.weights + self.bias


@dataclass(frozen=True)
class PlattCalibration:
    a: float
    b: float

    def p_moving(self, f):
        z = self.a * np.asarray(f, dtype=np.float64) + self.b
        # 1 / (1 + exp(z)) without overflow
        return np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))),
                        1.0 / (1.0 + np.exp(-np.abs(z))))


def primal_objective(w, b, x, y, c_per_sample) -> float:
    margins = y * (x @ w + b)
    return 0.5 * float(w @ w) + float(np.sum(c_per_sample * np.maximum(0.0, 1.0 - margins)))


def _best_bias(scores, y, c_per_sample) -> float:
    """Exact minimiser over b of sum_i c_i * hinge(y_i (s_i + b)).

    The loss is convex piecewise linear with kinks at b = y_i - s_i; walk the
    sorted kinks until the slope turns non-negative.
    """
    kinks = y - scores  # hinge_i active while y_i * b < y_i * kink_i
    order = np.argsort(kinks, kind="stable")
    # slope at b -> -inf: positives are active (slope -c_i), negatives inactive
    slope = -float(np.sum(c_per_sample[y > 0]))
    for idx in order:
        # crossing kink_i: positive sample deactivates, negative activates, both add c_i
        slope += c_per_sample[idx]
        if slope >= 0:
            return float(kinks[idx])
    return float(kinks[order[-1]])


def train_svm(x: np.ndarray, y: np.ndarray, c: float, tol: float = 1e-4,
              class_weight: bool = False, eps: float = 1e-3,
              max_epochs: int = 1000) -> LinearSvmModel:
    """Minimise 0.5*|w|^2 + C * sum hinge(y (w.x + b)) with an unregularised bias.

    Second-order working-set SMO on the dual, exploiting the linear kernel by
    keeping ``w`` explicitly. An epoch is ``n`` pair updates; after each
    epoch the primal objective at the current ``w`` (with the exactly optimal
    bias) is evaluated and the best iterate is kept. Training stops when the
    relative improvement of that objective over an improving epoch drops below ``tol``,
    or once the KKT violation falls below ``eps`` with a relative duality gap
    within ``tol`` (``eps`` is tightened tenfold until the gap closes).
    """
    if c <= 0 or tol <= 0:
        raise ValueError("c and tol must be positive")
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y < 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateData("both classes are required")
    n = len(y)
    if class_weight:
        cw = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    else:
        cw = np.ones(n)
    cap = c * cw

    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    grad = -np.ones(n)  # Q alpha - 1
    qd = np.einsum("ij,ij->i", x, x)
    if n * n <= KERNEL_CACHE_ENTRIES:
        gram = x @ x.T

        def column(k):
            return gram[k]
    else:
        def column(k):
            return x @ x[k]

    best = (np.inf, w.copy(), 0.0)
    stalled = 0
    eps_cur = eps
    history: list[float] = []
    for epoch in range(max_epochs):
        converged = False
        for _ in range(max(n, 1)):
            yg = -y * grad
            up = ((y > 0) & (alpha < cap)) | ((y < 0) & (alpha > 0))
            low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < cap))
            if not up.any() or not low.any():
                converged = True
                break
            i = int(np.flatnonzero(up)[np.argmax(yg[up])])
            m_up = yg[i]
            m_low = float(np.min(yg[low]))
            if m_up - m_low < eps_cur:
                converged = True
                break
            k_i = column(i)
            cand = low & (yg < m_up)
            b_it = m_up - yg[cand]
            a_it = qd[i] + qd[cand] - 2.0 * k_i[cand]
            a_it = np.where(a_it > 0, a_it, TAU)
            j = int(np.flatnonzero(cand)[np.argmin(-(b_it * b_it) / a_it)])

            ai_old, aj_old = alpha[i], alpha[j]
            ci, cj = cap[i], cap[j]
            q_ij = y[i] * y[j] * k_i[j]
            if y[i] != y[j]:
                quad = qd[i] + qd[j] + 2.0 * q_ij
                delta = (-grad[i] - grad[j]) / max(quad, TAU)
                diff = ai_old - aj_old
                ai, aj = ai_old + delta, aj_old + delta
                if diff > 0:
                    if aj < 0:
                        aj, ai = 0.0, diff
                else:
                    if ai < 0:
                        ai, aj = 0.0, -diff
                if diff > ci - cj:
                    if ai > ci:
                        ai, aj = ci, ci - diff
                else:
                    if aj > cj:
                        aj, ai = cj, cj + diff
            else:
                quad = qd[i] + qd[j] - 2.0 * q_ij
                delta = (grad[i] - grad[j]) / max(quad, TAU)
                total = ai_old + aj_old
                ai, aj = ai_old - delta, aj_old + delta
                if total > ci:
                    if ai > ci:
                        ai, aj = ci, total - ci
                else:
                    if aj < 0:
                        aj, ai = 0.0, total
                if total > cj:
                    if aj > cj:
                        aj, ai = cj, total - cj
                else:
                    if ai < 0:
                        ai, aj = 0.0, total
            d_i, d_j = ai - ai_old, aj - aj_old
            alpha[i], alpha[j] = ai, aj
            w += d_i * y[i] * x[i] + d_j * y[j] * x[j]
            grad += y * (d_i * y[i] * k_i + d_j * y[j] * column(j))

        scores = x @ w
        b = _best_bias(scores, y, cap)
        obj = primal_objective(w, b, x, y, cap)
        prev = best[0]
        history.append(min(obj, prev))
        if converged:
            if obj < prev:
                best = (obj, w.copy(), b)
            dual = float(np.sum(alpha)) - 0.5 * float(w @ w)
            if (best[0] - dual) / max(abs(best[0]), TAU) <= tol or eps_cur <= MIN_EPS:
                break
            # KKT satisfied to eps but the duality gap is still wide (large C): tighten
            eps_cur /= 10.0
            continue
        if obj < prev:
            best = (obj, w.copy(), b)
            stalled = 0
            # an epoch that did not improve says nothing about convergence; only
            # small gains from a genuinely improving epoch end training
            if np.isfinite(prev) and (prev - obj) / max(abs(obj), TAU) < tol:
                break
        else:
            stalled += 1
            if stalled >= STALL_EPOCHS:
                break
    else:
        log.warning("SMO hit max_epochs=%d before converging", max_epochs)

    return LinearSvmModel(weights=best[1], bias=best[2], c_param=c, objective_history=history)


def decision(model: LinearSvmModel, x: np.ndarray):
    return model.decision(x)


def fit_platt(decisions: np.ndarray, labels: np.ndarray, max_iter: int = 100,
              grad_tol: float = 1e-8) -> PlattCalibration:
    """Platt sigmoid P(moving|f) = 1 / (1 + exp(a f + b)).

    Newton's method with backtracking on the cross-entropy against Platt's
    smoothed targets.
    """
    f = np.asarray(decisions, dtype=np.float64)
    y = np.asarray(labels)
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y <= 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateData("Platt fit needs both classes")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(a, b):
        z = a * f + b
        # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
        return float(np.sum(t * np.logaddexp(0.0, z) + (1.0 - t) * np.logaddexp(0.0, -z)))

    # the gradient sums |f| sized terms, so it cannot be resolved below this floor
    tol = max(grad_tol, 64.0 * np.finfo(float).eps * float(np.sum(np.abs(f) + 1.0)))
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = objective(a, b)
    for _ in range(max_iter):
        p = PlattCalibration(a, b).p_moving(f)
        d1 = t - p  # dF/dz = t - p
        g = np.array([np.sum(f * d1), np.sum(d1)])
        if np.hypot(*g) < tol:
            return PlattCalibration(a, b)
        d2 = p * (1.0 - p)
        h11 = np.sum(f * f * d2) + 1e-12
        h22 = np.sum(d2) + 1e-12
        h12 = np.sum(f * d2)
        det = h11 * h22 - h12 * h12
        da = -(h22 * g[0] - h12 * g[1]) / det
        db = -(-h12 * g[0] + h11 * g[1]) / det
        gd = g[0] * da + g[1] * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            # a few ulps of slack: near the optimum the decrease is below rounding
            if nf <= fval + 1e-4 * step * gd + 16.0 * np.finfo(float).eps * abs(fval):
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            # no decrease possible in floating point; accept if gradient is tiny
            if np.hypot(*g) < 1e3 * tol:
                return PlattCalibration(a, b)
            raise NonConvergence("line search failed in Platt fit")
    p = PlattCalibration(a, b).p_moving(f)
    g = np.array([np.sum(f * (t - p)), np.sum(t - p)])
    if np.hypot(*g) < tol:
        return PlattCalibration(a, b)
    raise NonConvergence(f"Platt fit did not converge in {max_iter} iterations "
                         f"(|grad|={np.hypot(*g):.3g})")


def predict_proba(model: LinearSvmModel, calib: PlattCalibration, x) -> tuple:
    p_moving = calib.p_moving(model.decision(x))
    return 1.0 - p_moving, p_moving


def fingerprint(x: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<i8").tobytes())
    return h.hexdigest()


def save_model(path: Path, model: LinearSvmModel, calib: PlattCalibration | None,
               descriptor_config: dict, train_fingerprint: str = "") -> None:
    doc = {
        "kind": "mchog-linear-svm",
        "descriptor": descriptor_config,
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "c": float(model.c_param),
        "platt": None if calib is None else {"a": calib.a, "b": calib.b},
        "training_fingerprint": train_fingerprint,
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_model(path: Path) -> tuple[LinearSvmModel, PlattCalibration | None, dict]:
    doc = json.loads(Path(path).read_text())
    model = LinearSvmModel(np.asarray(doc["weights"], dtype=np.float64), float(doc["bias"]), float(doc["c"]))
    calib = None if doc.get("platt") is None else PlattCalibration(doc["platt"]["a"], doc["platt"]["b"])
    return model, calib, doc
