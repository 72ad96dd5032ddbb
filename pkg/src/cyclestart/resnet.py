"""Residual network on MHIs, trained with RMSProp on cross-entropy.

Topology: input BN -> reduction (5x5 conv, ReLU, max-pool) -> 1x1 conv to
``stem_maps`` -> ``n_blocks`` residual blocks -> global average pool ->
fully connected -> softmax. A block is ``layers_per_block`` pre-activation
bottleneck layers (BN-ReLU-1x1, BN-ReLU-3x3, BN-ReLU-1x1, plus identity)
followed by a 1x1 projection to the block's output width and a BN.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .nn import (BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, ReLU,
                 ShapeMismatch, Store, cross_entropy, softmax)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RNC1"


class DivergenceDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class ResNetConfig:
    input_size: int = 128
    reduction_filters: int = 8
    reduction_kernel: int = 5
    reduction_stride: int = 2
    pool: int = 2
    stem_maps: int = 4
    n_blocks: int = 2
    layers_per_block: int = 2
    block_out_maps: tuple[int, ...] = (32, 64)
    bottleneck_ratio: int = 4
    min_bottleneck: int = 2
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "block_out_maps", tuple(int(v) for v in self.block_out_maps))
        counts = [self.input_size, self.reduction_filters, self.reduction_kernel, self.reduction_stride,
                  self.pool, self.stem_maps, self.n_blocks, self.layers_per_block, self.n_classes]
        if min(counts) < 1 or min(self.block_out_maps, default=0) < 1:
            raise ValueError("all counts must be >= 1")
        if len(self.block_out_maps) != self.n_blocks:
            raise ValueError("block_out_maps needs one entry per block")

    @classmethod
    def full_scale(cls) -> "ResNetConfig":
        return cls(reduction_filters=16, n_blocks=7, layers_per_block=8,
                   block_out_maps=(16, 32, 64, 128, 256, 512, 1024))

    def bottleneck_width(self, channels: int) -> int:
        return max(self.min_bottleneck, channels // self.bottleneck_ratio)

    @property
    def feature_length(self) -> int:
        return self.block_out_maps[-1]


class BottleneckLayer:
    """x + F(x), F = 1x1 reduce -> 3x3 -> 1x1 expand, each preceded by BN and ReLU."""

    def __init__(self, store: Store, name: str, channels: int, width: int, rng):
        self.branch = [
            BatchNorm2d(store, f"{name}.bn1", channels), ReLU(),
            Conv2d(store, f"{name}.conv1", channels, width, 1, rng=rng),
            BatchNorm2d(store, f"{name}.bn2", width), ReLU(),
            Conv2d(store, f"{name}.conv2", width, width, 3, pad=1, rng=rng),
            BatchNorm2d(store, f"{name}.bn3", width), ReLU(),
            Conv2d(store, f"{name}.conv3", width, channels, 1, rng=rng),
        ]
        self.prefix = name + "."

    def forward(self, x, train=True):
        h = x
        for layer in self.branch:
            h = layer.forward(h, train)
        return x + h

    def backward(self, dout):
        d = dout
        for layer in reversed(self.branch):
            d = layer.backward(d)
        return dout + d


class ResidualBlock:
    def __init__(self, store: Store, name: str, cin: int, cout: int, cfg: ResNetConfig, rng):
        self.layers = [BottleneckLayer(store, f"{name}.layer{i}", cin, cfg.bottleneck_width(cin), rng)
                       for i in range(cfg.layers_per_block)]
        self.proj = Conv2d(store, f"{name}.proj", cin, cout, 1, rng=rng)
        self.bn = BatchNorm2d(store, f"{name}.bn", cout)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return self.bn.forward(self.proj.forward(x, train), train)

    def backward(self, dout):
        d = self.proj.backward(self.bn.backward(dout))
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d


class ResNet:
    def __init__(self, cfg: ResNetConfig = ResNetConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        s = self.store = Store(dtype)
        self.input_bn = BatchNorm2d(s, "input_bn", 1)
        pad = cfg.reduction_kernel // 2
        self.reduce_conv = Conv2d(s, "reduce.conv", 1, cfg.reduction_filters, cfg.reduction_kernel,
                                  stride=cfg.reduction_stride, pad=pad, rng=rng)
        self.reduce_relu = ReLU()
        self.reduce_pool = MaxPool2d(cfg.pool)
        self.stem = Conv2d(s, "stem", cfg.reduction_filters, cfg.stem_maps, 1, rng=rng)
        self.blocks = []
        cin = cfg.stem_maps
        for i, cout in enumerate(cfg.block_out_maps):
            self.blocks.append(ResidualBlock(s, f"block{i}", cin, cout, cfg, rng))
            cin = cout
        self.gap = GlobalAvgPool()
        self.fc = Linear(s, "fc", cin, cfg.n_classes, rng=rng)

    @property
    def params(self):
        return self.store.params

    @property
    def grads(self):
        return self.store.grads

    def _sequence(self):
        return [self.input_bn, self.reduce_conv, self.reduce_relu, self.reduce_pool, self.stem,
                *self.blocks, self.gap, self.fc]

    def logits(self, x, train=True):
        x = np.asarray(x, dtype=self.store.dtype)
        if x.ndim == 3:
            x = x[:, None]
        n = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, n, n):
            raise ShapeMismatch(f"expected input (B, 1, {n}, {n}), got {x.shape}")
        for layer in self._sequence():
            x = layer.forward(x, train)
        return x

    def forward(self, x, train=False):
        """Class probabilities (B, 2); column 1 is P_moving."""
        return softmax(self.logits(x, train))

    def loss_and_grads(self, x, labels):
        """Mean cross-entropy on a training-mode forward pass; fills ``grads``."""
        self.store.zero_grad()
        logits = self.logits(x, train=True)
        loss, d = cross_entropy(logits, np.asarray(labels))
        for layer in reversed(self._sequence()):
            d = layer.backward(d)
        return loss

    def predict_moving(self, x, batch: int = 64) -> np.ndarray:
        out = [self.forward(x[i:i + batch])[:, 1] for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def state(self) -> dict[str, np.ndarray]:
        d = {k: v.copy() for k, v in self.store.params.items()}
        d.update({k: v.copy() for k, v in self.store.buffers.items()})
        return d

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            target = self.store.params if k in self.store.params else self.store.buffers
            if k not in target:
                raise KeyError(f"unknown tensor {k}")
            if target[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: {v.shape} != {target[k].shape}")
            target[k] = np.asarray(v, dtype=self.store.dtype).copy()


def _switches(model: ResNet) -> list[np.ndarray]:
    out = []

    def visit(obj):
        if isinstance(obj, ReLU):
            out.append(obj._mask.copy())
        elif isinstance(obj, MaxPool2d):
            out.append(obj._arg.copy())
        elif isinstance(obj, (BottleneckLayer,)):
            for b in obj.branch:
                visit(b)
        elif isinstance(obj, ResidualBlock):
            for layer in obj.layers:
                visit(layer)

    for layer in model._sequence():
        visit(layer)
    return out


@dataclass
class GradCheck:
    rel_error: dict[str, float]
    skipped: int
    checked: int

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error.values())


def gradient_check(model: ResNet, x, labels, eps: float = 1e-3, skip_kinks: bool = True,
                   floor: float = 1e-6) -> GradCheck:
    """Compare analytic gradients with central differences, per parameter group.

    With ``skip_kinks`` an entry is left out when the +eps or -eps pass flips
    any ReLU mask or max-pool winner relative to the unperturbed pass: the
    loss is not smooth on that interval, so the difference quotient says
    nothing about the derivative. Relative error of a group is
    |analytic - numeric| / max(|analytic|, |numeric|, floor) in the 2-norm.
    """
    model.loss_and_grads(x, labels)
    analytic = {k: g.copy() for k, g in model.grads.items()}
    base = _switches(model)
    skipped = checked = 0
    errors = {}
    for name, p in model.params.items():
        keep = np.ones(p.shape, dtype=bool)
        numeric = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + eps
            lp = model.loss_and_grads(x, labels)
            flipped = skip_kinks and any(not np.array_equal(a, b) for a, b in zip(base, _switches(model)))
            p[i] = orig - eps
            lm = model.loss_and_grads(x, labels)
            flipped = flipped or (skip_kinks and any(not np.array_equal(a, b)
                                                     for a, b in zip(base, _switches(model))))
            p[i] = orig
            numeric[i] = (lp - lm) / (2 * eps)
            if flipped:
                keep[i] = False
                skipped += 1
            else:
                checked += 1
        a, n = analytic[name][keep], numeric[keep]
        den = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        errors[name] = float(np.linalg.norm(a - n) / den) if a.size else 0.0
    model.loss_and_grads(x, labels)
    return GradCheck(errors, skipped, checked)


# --- optimisation -----------------------------------------------------------

@dataclass(frozen=True)
class RmsProp:
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8


def rmsprop_step(params: dict, grads: dict, state: dict, hyper: RmsProp) -> None:
    """In place: acc = decay*acc + (1-decay)*g^2; p -= lr * g / sqrt(acc + eps)."""
    for k, g in grads.items():
        acc = state.get(k)
        if acc is None:
            acc = state[k] = np.zeros_like(g)
        acc *= hyper.decay
        acc += (1.0 - hyper.decay) * g * g
        params[k] -= hyper.learning_rate * g / np.sqrt(acc + hyper.epsilon)


@dataclass(frozen=True)
class TrainRegime:
    optimizer: RmsProp = RmsProp()
    batch_size: int = 10
    iterations: int = 3000
    validation_every: int = 250
    seed: int = 0
    # step schedule: the rate is multiplied by lr_gamma at each milestone,
    # given as a fraction of ``iterations``; empty means a constant rate
    lr_milestones: tuple[float, ...] = ()
    lr_gamma: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if any(not 0.0 < m < 1.0 for m in self.lr_milestones) or not self.lr_gamma > 0:
            raise ValueError("milestones must lie in (0, 1) and lr_gamma must be positive")

    def optimizer_at(self, iteration: int) -> RmsProp:
        passed = sum(iteration >= round(m * self.iterations) for m in self.lr_milestones)
        if not passed:
            return self.optimizer
        return replace(self.optimizer, learning_rate=self.optimizer.learning_rate * self.lr_gamma ** passed)


@dataclass
class Checkpoint:
    iteration: int
    loss: float
    val_f1: float
    val_delay: float  # NaN when the validation curve has no TP at the chosen point
    threshold: float
    state: dict = field(repr=False, default_factory=dict)


@dataclass
class TrainResult:
    best: Checkpoint
    checkpoints: list[Checkpoint]
    losses: list[float]


def pareto_best(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Greatest validation F1, then lowest mean delay, then earliest."""
    def key(c):
        delay = c.val_delay if math.isfinite(c.val_delay) else math.inf
        return (-c.val_f1, delay, c.iteration)
    return min(checkpoints, key=key)


def train(model: ResNet, x: np.ndarray, y: np.ndarray, regime: TrainRegime,
          validate: Callable[[ResNet], tuple[float, float, float]] | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train on inputs ``x`` (uint8 or float, (M, S, S)) with labels in {0, 1}.

    ``validate(model)`` returns (f1, mean_delay, threshold) on the validation
    set; it runs every ``validation_every`` iterations and after the last one.
    The best checkpoint's state is loaded back into ``model`` on return.
    """
    rng = np.random.default_rng(regime.seed)
    opt_state: dict = {}
    losses: list[float] = []
    checkpoints: list[Checkpoint] = []
    n = len(x)
    scale = 1.0 / 255.0 if x.dtype == np.uint8 else 1.0
    order = rng.permutation(n)
    pos = 0
    for it in range(regime.iterations):
        if pos + regime.batch_size > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + regime.batch_size]
        pos += regime.batch_size
        xb = x[idx].astype(model.store.dtype) * scale
        loss = model.loss_and_grads(xb, y[idx])
        if not math.isfinite(loss):
            raise DivergenceDetected(f"non-finite loss at iteration {it}")
        losses.append(loss)
        rmsprop_step(model.params, model.grads, opt_state, regime.optimizer_at(it))
        if on_step:
            on_step(it, loss)
        done = it + 1
        if validate is not None and (done % regime.validation_every == 0 or done == regime.iterations):
            f1, delay, thr = validate(model)
            recent = float(np.mean(losses[-regime.validation_every:]))
            checkpoints.append(Checkpoint(done, recent, f1, delay, thr, model.state()))
            log.info("iter %d loss %.4f val F1 %.3f delay %.3f s", done, recent, f1, delay)
    if not checkpoints:
        checkpoints.append(Checkpoint(regime.iterations, losses[-1] if losses else math.nan,
                                      math.nan, math.nan, math.nan, model.state()))
        return TrainResult(checkpoints[0], checkpoints, losses)
    best = pareto_best(checkpoints)
    model.load_state(best.state)
    return TrainResult(best, checkpoints, losses)


# --- files --------------------------------------------------------------------

def save_checkpoint(path: Path, model: ResNet, extra: dict | None = None) -> None:
    """Magic, u32 header length, JSON header, then named little-endian float32 tensors."""
    header = {"config": asdict(model.cfg), "seed": model.seed, "extra": extra or {}}
    hbytes = json.dumps(header).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(hbytes)))
    buf.write(hbytes)
    state = model.state()
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: Path) -> tuple[ResNet, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen])
    off = 8 + hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
    model = ResNet(ResNetConfig(**header["config"]), seed=header.get("seed", 0))
    model.load_state(state)
    return model, header


def write_log(path: Path, result: TrainResult) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "val_f1", "val_delay_s"])
        for c in result.checkpoints:
            w.writerow([c.iteration, f"{c.loss:.6f}", f"{c.val_f1:.6f}",
                        "" if not math.isfinite(c.val_delay) else f"{c.val_delay:.6f}"])
    tmp.replace(path)


def clone(model: ResNet) -> ResNet:
    return copy.deepcopy(model)
