"""Glue between scenes, MHIs, detectors and the evaluation protocol."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import mchog, resnet, svm
from .evaluation import SceneAnnotation, SweepCurve, select_operating_point, sweep
from .mhi import generate_mhi, resize_bilinear
from .silhouette import InsufficientHistory, RoiSpec, roi_stacks

log = logging.getLogger(__name__)

DEFAULT_HISTORY = 20


@dataclass
class SceneData:
    """MHIs of one scene, one per frame with a full history.

    ``annotation`` is already cut to the MHI frames, so ``mhis[k]`` and
    ``annotation.phase_labels[k]`` both belong to frame ``first_frame + k``.
    """

    scene_id: str
    mhis: np.ndarray  # (K, roi_h, roi_w) float64
    annotation: SceneAnnotation
    first_frame: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([svm.WAITING if p == "waiting" else svm.MOVING
                         for p in self.annotation.phase_labels])

    @property
    def moving_seconds(self) -> float:
        return (len(self.annotation) - self.annotation.t_III) / self.annotation.frame_rate


def scene_mhis(frames: np.ndarray, heads: np.ndarray, n: int, roi: RoiSpec,
               chunk: int = 16) -> np.ndarray:
    total = len(frames) - n + 1
    out = np.empty((max(total, 0), roi.roi_height, roi.roi_width))
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        sub = roi_stacks(frames[start:stop + n - 1], heads[start:stop + n - 1], n, roi)
        out[start:stop] = generate_mhi(sub)
    return out


def prepare_scene(scene_id: str, frames: np.ndarray, heads: np.ndarray,
                  annotation: SceneAnnotation, n: int = DEFAULT_HISTORY,
                  roi: RoiSpec = RoiSpec()) -> SceneData:
    if len(frames) < n:
        raise InsufficientHistory(f"scene {scene_id}: {len(frames)} frames, history needs {n}")
    mhis = scene_mhis(frames, heads, n, roi)
    return SceneData(scene_id, mhis, annotation.sliced(n - 1), n - 1)


def prepare_scripts(scripts, n: int = DEFAULT_HISTORY, roi: RoiSpec = RoiSpec()) -> list[SceneData]:
    from .synth import render_scene

    out = []
    for s in scripts:
        sc = render_scene(s)
        out.append(prepare_scene(f"scene_{s.seed}", sc.frames, sc.heads, sc.annotation, n, roi))
    return out


def stack_samples(scenes: Sequence[SceneData], stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for sc in scenes:
        xs.append(sc.mhis[::stride])
        ys.append(sc.labels[::stride])
    return np.concatenate(xs), np.concatenate(ys)


# --- MCHOG + SVM detector --------------------------------------------------

@dataclass
class MchogDetector:
    params: mchog.MchogParams
    model: svm.LinearSvmModel
    calib: svm.PlattCalibration

    def p_moving(self, mhis: np.ndarray) -> np.ndarray:
        return self.p_moving_from_descriptors(mchog.compute_batch(mhis, self.params))

    def p_moving_from_descriptors(self, desc: np.ndarray) -> np.ndarray:
        return svm.predict_proba(self.model, self.calib, desc)[1]


def descriptors(scenes: Sequence[SceneData], params: mchog.MchogParams) -> list[np.ndarray]:
    return [mchog.compute_batch(sc.mhis, params) for sc in scenes]


def fit_mchog(train_desc: Sequence[np.ndarray], train_labels: Sequence[np.ndarray],
              val_desc: Sequence[np.ndarray], val_scenes: Sequence[SceneData],
              params: mchog.MchogParams, c: float, stride: int = 2,
              class_weight: bool = False, tol: float = 1e-4):
    """Train the SVM on training frames, calibrate and pick the threshold on validation.

    Returns (detector, validation curve, operating threshold).
    """
    x = np.concatenate([d[::stride] for d in train_desc])
    y = np.concatenate([lab[::stride] for lab in train_labels])
    model = svm.train_svm(x, y, c, tol=tol, class_weight=class_weight)
    val_x = np.concatenate(val_desc)
    val_y = np.concatenate([sc.labels for sc in val_scenes])
    calib = svm.fit_platt(model.decision(val_x), val_y)
    det = MchogDetector(params, model, calib)
    traces = [det.p_moving_from_descriptors(d) for d in val_desc]
    curve = sweep(traces, [sc.annotation for sc in val_scenes])
    return det, curve, select_operating_point(curve)


def evaluate_traces(traces, scenes: Sequence[SceneData], thresholds=None) -> SweepCurve:
    return sweep(list(traces), [sc.annotation for sc in scenes], thresholds)


# --- residual network detector --------------------------------------------

def resnet_inputs(mhis: np.ndarray, size: int) -> np.ndarray:
    """Resize MHIs to ``size`` x ``size`` and store them as 8-bit (value * 255)."""
    out = np.empty((len(mhis), size, size), dtype=np.uint8)
    for start in range(0, len(mhis), 64):
        chunk = resize_bilinear(mhis[start:start + 64], size, size)
        out[start:start + 64] = np.round(chunk * 255.0).astype(np.uint8)
    return out


@dataclass
class ResNetDetector:
    model: "resnet.ResNet"

    def p_moving_from_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return self.model.predict_moving(inputs.astype(np.float32) / 255.0)

    def p_moving(self, mhis: np.ndarray) -> np.ndarray:
        return self.p_moving_from_inputs(resnet_inputs(mhis, self.model.cfg.input_size))


def fit_resnet(train_scenes: Sequence[SceneData], val_scenes: Sequence[SceneData],
               cfg: "resnet.ResNetConfig", regime: "resnet.TrainRegime", seed: int = 0,
               train_inputs: Sequence[np.ndarray] | None = None,
               val_inputs: Sequence[np.ndarray] | None = None):
    """Train on all training frames, validating scene-wise every few hundred steps.

    Returns (detector, TrainResult); the detector holds the best checkpoint.
    """
    if train_inputs is None:
        train_inputs = [resnet_inputs(sc.mhis, cfg.input_size) for sc in train_scenes]
    if val_inputs is None:
        val_inputs = [resnet_inputs(sc.mhis, cfg.input_size) for sc in val_scenes]
    x = np.concatenate(train_inputs)
    y = np.concatenate([(sc.labels > 0).astype(np.int64) for sc in train_scenes])
    model = resnet.ResNet(cfg, seed=seed)
    det = ResNetDetector(model)
    annotations = [sc.annotation for sc in val_scenes]

    def validate(m):
        traces = [det.p_moving_from_inputs(v) for v in val_inputs]
        curve = sweep(traces, annotations)
        thr = select_operating_point(curve)
        i = int(np.argmin(np.abs(curve.thresholds - thr)))
        return float(curve.f1[i]), float(curve.mean_delay[i]), thr

    result = resnet.train(model, x, y, regime, validate=validate if val_scenes else None)
    return det, result
