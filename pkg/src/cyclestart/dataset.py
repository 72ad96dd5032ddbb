"""On-disk datasets: a manifest plus one directory per scene.

Layout::

    <root>/manifest.json
    <root>/scenes/<scene_id>/scene.json
    <root>/scenes/<scene_id>/frames/frame_00000.png ...
"""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from .evaluation import SceneAnnotation
from .pipeline import SceneData, prepare_scene
from .silhouette import InsufficientHistory, RoiSpec, SceneMetadata, read_scene, write_scene
from .synth import FOREGROUND_CLASSES, DatasetSplit, SyntheticScene, render_scene

log = logging.getLogger(__name__)


def scene_id(script) -> str:
    return f"scene_{script.seed}"


def write_synthetic_scene(root: Path, scene: SyntheticScene, classmap: bool = False) -> str:
    sid = scene_id(scene.script)
    meta = SceneMetadata(
        scene_id=sid,
        frame_rate=scene.script.frame_rate,
        heads=[tuple(map(float, h)) for h in scene.heads],
        phase_labels=list(scene.annotation.phase_labels),
        foreground_classes=list(FOREGROUND_CLASSES) if classmap else [1],
        mode="classmap" if classmap else "binary",
        extra={"script": _script_json(scene.script)},
    )
    frames = scene.class_maps() if classmap else scene.frames
    write_scene(Path(root) / "scenes" / sid, frames, meta)
    return sid


def _script_json(script) -> dict:
    d = dataclasses.asdict(script)
    return json.loads(json.dumps(d, default=float))


def write_dataset(root: Path, split: DatasetSplit, config_dict: dict, classmap: bool = False) -> dict:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"config": config_dict, "splits": {}, "seeds": {}}
    for name, scripts in split.items():
        ids = []
        for s in scripts:
            sid = write_synthetic_scene(root, render_scene(s), classmap)
            ids.append(sid)
            manifest["seeds"][sid] = s.seed
        manifest["splits"][name] = ids
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    tmp.replace(root / "manifest.json")
    return manifest


def read_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(path.read_text())
    if "splits" not in manifest:
        raise ValueError(f"{path}: manifest lacks 'splits'")
    return manifest


def load_scene(root: Path, sid: str, history: int, roi: RoiSpec) -> SceneData:
    frames, meta = read_scene(Path(root) / "scenes" / sid)
    ann = SceneAnnotation(meta.frame_rate, tuple(meta.phase_labels))
    return prepare_scene(sid, frames, np.asarray(meta.heads, dtype=np.float64), ann, history, roi)


def load_split(root: Path, split: str, history: int, roi: RoiSpec) -> list[SceneData]:
    """All scenes of a split; scenes shorter than the history are skipped with a warning."""
    manifest = read_manifest(root)
    out = []
    for sid in manifest["splits"].get(split, []):
        try:
            out.append(load_scene(root, sid, history, roi))
        except InsufficientHistory as exc:
            log.warning("skipping %s", exc)
    return out
