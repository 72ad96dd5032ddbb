"""Scene-wise detection evaluation.

A scene is scanned for the first frame whose P_moving reaches the threshold:
in the waiting phase that is a false positive, in the starting or moving
phase a true positive, and never reaching it is a false negative. True
negatives do not exist because every scene ends moving.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PHASES = ("waiting", "starting", "moving")
TP, FP, FN = "TP", "FP", "FN"


class EmptyScene(ValueError):
    pass


class NoTruePositives(ValueError):
    pass


@dataclass(frozen=True)
class SceneAnnotation:
    frame_rate: float
    phase_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "phase_labels", tuple(self.phase_labels))
        codes = [PHASES.index(p) for p in self.phase_labels]
        if any(b < a for a, b in zip(codes, codes[1:])):
            raise ValueError("phase labels must run waiting -> starting -> moving")

    @property
    def t_II(self) -> int:
        for i, p in enumerate(self.phase_labels):
            if p != "waiting":
                return i
        return len(self.phase_labels)

    @property
    def t_III(self) -> int:
        for i, p in enumerate(self.phase_labels):
            if p == "moving":
                return i
        return len(self.phase_labels)

    def __len__(self):
        return len(self.phase_labels)

    def sliced(self, start: int) -> "SceneAnnotation":
        return SceneAnnotation(self.frame_rate, self.phase_labels[start:])

    @classmethod
    def from_boundaries(cls, n_frames: int, t_II: int, t_III: int, frame_rate: float = 50.0):
        labels = ["waiting"] * t_II + ["starting"] * (t_III - t_II) + ["moving"] * (n_frames - t_III)
        return cls(frame_rate, tuple(labels))


@dataclass(frozen=True)
class SceneOutcome:
    kind: str
    detection_frame: int | None = None
    detection_delay: float | None = None


def classify_scene(p_moving: Sequence[float], ann: SceneAnnotation, s: float) -> SceneOutcome:
    p = np.asarray(p_moving, dtype=np.float64)
    if p.size == 0:
        raise EmptyScene("empty probability trace")
    if p.size != len(ann):
        raise ValueError(f"trace length {p.size} != annotation length {len(ann)}")
    hits = np.flatnonzero(p >= s)
    if hits.size == 0:
        return SceneOutcome(FN)
    first = int(hits[0])
    if first < ann.t_II:
        return SceneOutcome(FP)
    return SceneOutcome(TP, first, (first - ann.t_III) / ann.frame_rate)


def mean_detection_time(outcomes: Sequence[SceneOutcome]) -> float:
    delays = [o.detection_delay for o in outcomes if o.kind == TP]
    if not delays:
        raise NoTruePositives("mean detection time undefined without true positives")
    return math.fsum(delays) / len(delays)


def default_thresholds(step: float = 0.02) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.arange(n + 1) * step, 10)


@dataclass
class SweepCurve:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    mean_delay: np.ndarray  # NaN where no TP exists
    outcomes: list[list[SceneOutcome]] = field(default_factory=list, repr=False)

    def rows(self):
        for i, s in enumerate(self.thresholds):
            yield {
                "threshold": float(s), "tp": int(self.tp[i]), "fp": int(self.fp[i]),
                "fn": int(self.fn[i]), "precision": float(self.precision[i]),
                "recall": float(self.recall[i]), "f1": float(self.f1[i]),
                "mean_delay_s": None if np.isnan(self.mean_delay[i]) else float(self.mean_delay[i]),
            }


def scores_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def sweep(traces: Sequence[Sequence[float]], annotations: Sequence[SceneAnnotation],
          thresholds: Sequence[float] | None = None) -> SweepCurve:
    if len(traces) != len(annotations) or not traces:
        raise ValueError("need one annotation per trace and at least one scene")
    thr = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    k = len(thr)
    tp, fp, fn = np.zeros(k, int), np.zeros(k, int), np.zeros(k, int)
    prec, rec, f1 = np.zeros(k), np.zeros(k), np.zeros(k)
    delay = np.full(k, np.nan)
    all_outcomes = []
    for i, s in enumerate(thr):
        outs = [classify_scene(p, a, s) for p, a in zip(traces, annotations)]
        all_outcomes.append(outs)
        tp[i] = sum(o.kind == TP for o in outs)
        fp[i] = sum(o.kind == FP for o in outs)
        fn[i] = sum(o.kind == FN for o in outs)
        prec[i], rec[i], f1[i] = scores_from_counts(tp[i], fp[i], fn[i])
        if tp[i]:
            delay[i] = mean_detection_time(outs)
    return SweepCurve(thr, tp, fp, fn, prec, rec, f1, delay, all_outcomes)


def select_operating_point(curve: SweepCurve) -> float:
    """Greatest F1, then lowest mean delay, then smallest threshold."""
    best_f1 = np.max(curve.f1)
    cands = np.flatnonzero(curve.f1 == best_f1)
    delays = curve.mean_delay[cands]
    if np.all(np.isnan(delays)):
        return float(curve.thresholds[cands[0]])
    min_delay = np.nanmin(delays)
    pick = cands[np.flatnonzero(delays == min_delay)[0]]
    return float(curve.thresholds[pick])


def point_index(curve: SweepCurve, threshold: float) -> int:
    return int(np.argmin(np.abs(curve.thresholds - threshold)))


def write_curve_csv(path: Path, curve: SweepCurve) -> None:
    fields = ["threshold", "tp", "fp", "fn", "precision", "recall", "f1", "mean_delay_s"]
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in curve.rows():
            if row["mean_delay_s"] is None:
                row["mean_delay_s"] = ""
            w.writerow(row)
    tmp.replace(path)


def write_trace_csv(path: Path, p_moving: Sequence[float], ann: SceneAnnotation,
                    first_frame: int = 0) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "time_s", "p_moving", "phase_label"])
        for k, (p, lab) in enumerate(zip(p_moving, ann.phase_labels)):
            frame = first_frame + k
            w.writerow([frame, f"{frame / ann.frame_rate:.4f}", repr(float(p)), lab])
    tmp.replace(path)
