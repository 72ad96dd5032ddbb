"""Command-line front end.

Every command reads one JSON config (``--config``, defaults otherwise),
accepts ``--set key=value`` overrides with dotted keys, and writes outputs
atomically with the effective config echoed next to them.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataset, mchog, mhi, pipeline, resnet, svm, synth
from .evaluation import (default_thresholds, point_index, select_operating_point, sweep, write_curve_csv,
                         write_trace_csv)
from .silhouette import InsufficientHistory

log = logging.getLogger("cyclestart")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config)
    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        overrides[key] = _parse_value(value)
    return config_mod.override(cfg, overrides) if overrides else cfg


def _echo_config(path: Path, cfg: config_mod.PipelineConfig) -> None:
    target = Path(str(path) + ".config.json")
    tmp = Path(str(target) + ".tmp")
    tmp.write_text(cfg.dumps())
    tmp.replace(target)


# --- commands -------------------------------------------------------------

def cmd_synth(args, cfg):
    d = cfg.dataset
    split = synth.make_dataset(d.n_scenes, d.split_ratios, d.seed, d.distractor_fraction,
                               d.mixed_directions, d.noise)
    manifest = dataset.write_dataset(args.out, split, cfg.to_dict(), classmap=d.classmap)
    counts = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {sum(counts.values())} scenes to {args.out} {counts}")


def cmd_mhi(args, cfg):
    manifest = dataset.read_manifest(args.data)
    out = Path(args.out or Path(args.data) / "mhi")
    out.mkdir(parents=True, exist_ok=True)
    total = 0
    for sids in manifest["splits"].values():
        for sid in sids:
            try:
                sc = dataset.load_scene(args.data, sid, cfg.history, cfg.roi)
            except InsufficientHistory as exc:
                log.warning("skipping %s", exc)
                continue
            sdir = out / sid
            sdir.mkdir(exist_ok=True)
            for k, image in enumerate(sc.mhis):
                frame = sc.first_frame + k
                mhi.write_mhi(sdir / f"mhi_{frame:05d}.mhi", image, cfg.history)
                if args.png:
                    mhi.export_png(sdir / f"mhi_{frame:05d}.png", image)
            total += len(sc.mhis)
    (out / "config.json").write_text(cfg.dumps())
    print(f"wrote {total} MHIs to {out}")


def cmd_features(args, cfg):
    out = Path(args.out or Path(args.data) / "features")
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        scenes = dataset.load_split(args.data, split, cfg.history, cfg.roi)
        if not scenes:
            continue
        stride = cfg.svm.train_stride if split == "train" else 1
        desc = np.concatenate([mchog.compute_batch(sc.mhis[::stride], cfg.mchog) for sc in scenes])
        labels = np.concatenate([sc.labels[::stride] for sc in scenes])
        mchog.write_descriptor_csv(out / f"{split}.csv", labels, desc)
        print(f"{split}: {len(labels)} descriptors of length {desc.shape[1]}")
    (out / "config.json").write_text(cfg.dumps())


def cmd_train_svm(args, cfg):
    fdir = Path(args.features or Path(args.data) / "features")
    y, x = mchog.read_descriptor_csv(fdir / "train.csv")
    if x.shape[1] != mchog.descriptor_length(cfg.mchog):
        raise ValueError(f"descriptor length {x.shape[1]} does not match config "
                         f"({mchog.descriptor_length(cfg.mchog)})")
    model = svm.train_svm(x, y, cfg.svm.c, tol=cfg.svm.tol, class_weight=cfg.svm.class_weight)
    calib = None
    if (fdir / "val.csv").exists():
        vy, vx = mchog.read_descriptor_csv(fdir / "val.csv")
        calib = svm.fit_platt(model.decision(vx), vy)
    else:
        log.warning("no validation descriptors; calibrating on training data")
        calib = svm.fit_platt(model.decision(x), y)
    svm.save_model(args.out, model, calib, {"mchog": cfg.to_dict()["mchog"], "history": cfg.history,
                                            "roi": cfg.to_dict()["roi"]}, svm.fingerprint(x, y))
    _echo_config(args.out, cfg)
    print(f"trained SVM on {len(y)} samples, C={cfg.svm.c}, objective {model.objective_history[-1]:.6g}")


def _sweep_one(job):
    (cx, cy, nb), cfg_dict, data = job
    cfg = config_mod.from_dict(cfg_dict)
    params = mchog.MchogParams(cx, cy, nb, cfg.mchog.input_w, cfg.mchog.input_h, cfg.mchog.signed_orientation)
    train = dataset.load_split(data, "train", cfg.history, cfg.roi)
    val = dataset.load_split(data, "val", cfg.history, cfg.roi)
    return _sweep_params(params, cfg, train, val)


def _sweep_params(params, cfg, train, val):
    td = pipeline.descriptors(train, params)
    vd = pipeline.descriptors(val, params)
    rows = []
    for e in cfg.svm.c_exponents:
        c = 2.0 ** e
        det, curve, thr = pipeline.fit_mchog(td, [sc.labels for sc in train], vd, val, params, c,
                                             cfg.svm.train_stride, cfg.svm.class_weight, cfg.svm.tol)
        i = point_index(curve, thr)
        rows.append({"f1": float(curve.f1[i]),
                     "mean_delay_s": None if np.isnan(curve.mean_delay[i]) else float(curve.mean_delay[i]),
                     "cell_size_x": params.cell_size_x, "cell_size_y": params.cell_size_y,
                     "n_bins": params.n_bins, "c": c, "threshold": thr})
    return rows


def sort_sweep_rows(rows):
    """F1 descending, then mean delay ascending (missing delays last)."""
    return sorted(rows, key=lambda r: (-r["f1"], np.inf if r["mean_delay_s"] is None else r["mean_delay_s"]))


def write_sweep_csv(path: Path, rows) -> None:
    fields = ["f1", "mean_delay_s", "cell_size_x", "cell_size_y", "n_bins", "c", "threshold"]
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in fields})
    tmp.replace(path)


def cmd_sweep_mchog(args, cfg):
    g = cfg.sweep
    combos = []
    for cx, cy, nb in itertools.product(g.cell_sizes_x, g.cell_sizes_y, g.n_bins):
        if cfg.mchog.input_w % cx or cfg.mchog.input_h % cy:
            log.warning("skipping cells %dx%d: they do not tile %dx%d", cx, cy,
                        cfg.mchog.input_w, cfg.mchog.input_h)
            continue
        combos.append((cx, cy, nb))
    rows = []
    if args.jobs > 1:
        jobs = [(c, cfg.to_dict(), args.data) for c in combos]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for r in pool.map(_sweep_one, jobs):
                rows.extend(r)
    else:
        train = dataset.load_split(args.data, "train", cfg.history, cfg.roi)
        val = dataset.load_split(args.data, "val", cfg.history, cfg.roi)
        for cx, cy, nb in combos:
            params = mchog.MchogParams(cx, cy, nb, cfg.mchog.input_w, cfg.mchog.input_h,
                                       cfg.mchog.signed_orientation)
            rows.extend(_sweep_params(params, cfg, train, val))
            log.info("swept cells %dx%d bins %d", cx, cy, nb)
    rows = sort_sweep_rows(rows)
    write_sweep_csv(args.out, rows)
    _echo_config(args.out, cfg)
    best = rows[0]
    print(f"{len(rows)} configurations; best F1 {best['f1']:.3f} delay {best['mean_delay_s']} "
          f"cells {best['cell_size_x']}x{best['cell_size_y']} bins {best['n_bins']} C {best['c']}")


def cmd_train_resnet(args, cfg):
    train = dataset.load_split(args.data, "train", cfg.history, cfg.roi)
    val = dataset.load_split(args.data, "val", cfg.history, cfg.roi)
    det, result = pipeline.fit_resnet(train, val, cfg.resnet, cfg.regime(), seed=cfg.seed)
    b = result.best
    resnet.save_checkpoint(args.out, det.model, {"iteration": b.iteration, "val_f1": b.val_f1,
                                                 "val_delay_s": b.val_delay, "threshold": b.threshold,
                                                 "history": cfg.history, "roi": cfg.to_dict()["roi"]})
    resnet.write_log(Path(str(args.out) + ".log.csv"), result)
    _echo_config(args.out, cfg)
    print(f"best checkpoint at iteration {b.iteration}: val F1 {b.val_f1:.3f}, delay {b.val_delay:.3f} s")


def load_detector(path: Path, cfg):
    raw = Path(path).read_bytes()[:4]
    if raw == resnet.CHECKPOINT_MAGIC:
        model, _ = resnet.load_checkpoint(path)
        return pipeline.ResNetDetector(model)
    model, calib, doc = svm.load_model(path)
    params = mchog.MchogParams(**doc["descriptor"]["mchog"])
    if calib is None:
        raise ValueError(f"{path}: model has no Platt calibration")
    if len(model.weights) != mchog.descriptor_length(params):
        raise ValueError(f"{path}: weight length does not match its descriptor config")
    return pipeline.MchogDetector(params, model, calib)


def cmd_evaluate(args, cfg):
    det = load_detector(args.model, cfg)
    scenes = dataset.load_split(args.data, args.split, cfg.history, cfg.roi)
    if not scenes:
        raise ValueError(f"split '{args.split}' is empty")
    traces = [det.p_moving(sc.mhis) for sc in scenes]
    curve = sweep(traces, [sc.annotation for sc in scenes], default_thresholds(cfg.threshold_step))
    write_curve_csv(args.out, curve)
    _echo_config(args.out, cfg)
    thr = select_operating_point(curve)
    i = point_index(curve, thr)
    delay = curve.mean_delay[i]
    print(f"best F1 {curve.f1[i]:.4f} at threshold {thr:.2f}, mean delay "
          f"{'n/a' if np.isnan(delay) else f'{delay:.3f} s'}")
    if args.operating_threshold is not None:
        j = point_index(curve, args.operating_threshold)
        print(f"at threshold {curve.thresholds[j]:.2f}: F1 {curve.f1[j]:.4f} "
              f"TP {curve.tp[j]} FP {curve.fp[j]} FN {curve.fn[j]}")


def cmd_trace(args, cfg):
    det = load_detector(args.model, cfg)
    sc = dataset.load_scene(args.data, args.scene, cfg.history, cfg.roi)
    p = det.p_moving(sc.mhis)
    write_trace_csv(args.out, p, sc.annotation, sc.first_frame)
    print(f"wrote {len(p)} frames to {args.out}")


COMMANDS = {
    "synth": cmd_synth, "mhi": cmd_mhi, "features": cmd_features, "train-svm": cmd_train_svm,
    "sweep-mchog": cmd_sweep_mchog, "train-resnet": cmd_train_resnet,
    "evaluate": cmd_evaluate, "trace": cmd_trace,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclestart", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set svm.c=0.25")
        return p

    p = add("synth", "render a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p = add("mhi", "write one MHI file per frame with full history")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--png", action="store_true", help="also write 8-bit PNG previews")
    p = add("features", "write MCHOG descriptor CSVs per split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p = add("train-svm", "train the linear SVM and Platt calibration")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--features", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p = add("sweep-mchog", "grid search over cell sizes, bins and C")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p = add("train-resnet", "train the residual network")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p = add("evaluate", "threshold sweep on one split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--operating-threshold", type=float)
    p = add("trace", "per-frame P_moving for one scene")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, KeyError, svm.NonConvergence, resnet.DivergenceDetected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
