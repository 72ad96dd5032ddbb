"""Train both detectors on a synthetic dataset and report test and distractor results.

    python scripts/synthetic_benchmark.py --scenes 100 --iterations 5000
    python scripts/synthetic_benchmark.py --skip-resnet
"""
import argparse
import json
import logging
import time

import numpy as np

from cyclestart.evaluation import point_index
from cyclestart.mchog import MchogParams
from cyclestart.pipeline import (
    descriptors, evaluate_traces, fit_mchog, fit_resnet, prepare_scripts, resnet_inputs,
)
from cyclestart.resnet import ResNetConfig, RmsProp, TrainRegime
from cyclestart.synth import distractor_scenes, make_dataset


def summary(curve, threshold):
    i = point_index(curve, threshold)
    return {"threshold": float(threshold), "f1": float(curve.f1[i]),
            "mean_delay_s": float(curve.mean_delay[i]),
            "tp": int(curve.tp[i]), "fp": int(curve.fp[i]), "fn": int(curve.fn[i])}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--distractors", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--c", type=float, default=2.0 ** -5)
    ap.add_argument("--skip-resnet", action="store_true")
    ap.add_argument("--out", help="write the report as JSON here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    t0 = time.perf_counter()
    split = make_dataset(args.scenes, seed=args.seed)
    scenes = {k: prepare_scripts(v) for k, v in split.items()}
    distract = prepare_scripts(distractor_scenes(args.distractors, seed=args.seed + 1))
    report = {"prepare_s": time.perf_counter() - t0}

    t0 = time.perf_counter()
    params = MchogParams()
    desc = {k: descriptors(v, params) for k, v in scenes.items()}
    det, _, thr = fit_mchog(desc["train"], [sc.labels for sc in scenes["train"]],
                            desc["val"], scenes["val"], params, c=args.c)
    test = evaluate_traces([det.p_moving_from_descriptors(d) for d in desc["test"]], scenes["test"])
    dis = evaluate_traces([det.p_moving(sc.mhis) for sc in distract], distract)
    report["mchog"] = {"test": summary(test, thr), "distractors": summary(dis, thr),
                       "seconds": time.perf_counter() - t0}

    if not args.skip_resnet:
        t0 = time.perf_counter()
        cfg = ResNetConfig()
        inputs = {k: [resnet_inputs(sc.mhis, cfg.input_size) for sc in v] for k, v in scenes.items()}
        regime = TrainRegime(RmsProp(args.lr), iterations=args.iterations)
        rdet, result = fit_resnet(scenes["train"], scenes["val"], cfg, regime, seed=args.seed,
                                  train_inputs=inputs["train"], val_inputs=inputs["val"])
        thr = result.best.threshold
        test = evaluate_traces([rdet.p_moving_from_inputs(v) for v in inputs["test"]], scenes["test"])
        dis = evaluate_traces([rdet.p_moving(sc.mhis) for sc in distract], distract)
        window = regime.validation_every
        report["resnet"] = {
            "test": summary(test, thr), "distractors": summary(dis, thr),
            "best_iteration": result.best.iteration,
            "loss_first": float(result.losses[0]),
            "loss_final_window": float(np.mean(result.losses[-window:])),
            "seconds": time.perf_counter() - t0,
        }

    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")


if __name__ == "__main__":
    main()
