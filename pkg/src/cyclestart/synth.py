"""Synthetic cyclist scenes with waiting / starting / moving phases.

A cyclist is a handful of discs and capsules (wheels, frame, torso, head,
limbs). While waiting the figure only sways by at most ``jitter`` pixels;
from ``t_II`` a limb (a leg lifting onto the pedal or an arm reaching for
the handlebar) moves without displacing the body; from ``t_III`` the whole
figure translates. An optional pedestrian can walk past in front of or
behind the cyclist.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import SceneAnnotation

log = logging.getLogger(__name__)

BACKGROUND, RIDER, BICYCLE, PEDESTRIAN = 0, 1, 2, 3
# VOC-style ids used in class-map mode: person, bicycle
CLASS_IDS = {BACKGROUND: 0, RIDER: 15, BICYCLE: 2, PEDESTRIAN: 15}
FOREGROUND_CLASSES = (15, 2, 14)


@dataclass(frozen=True)
class Distractor:
    start_frame: int
    x_start: float
    speed: float  # px/frame, sign gives direction
    depth: str = "behind"  # or "front"
    height: float = 70.0
    ground_offset: float = -10.0  # relative to the cyclist's ground line; negative = farther away

    def __post_init__(self):
        if self.depth not in ("behind", "front"):
            raise ValueError("depth must be 'behind' or 'front'")


@dataclass(frozen=True)
class SceneScript:
    seed: int = 0
    duration: int = 140
    t_II: int = 70
    t_III: int = 85
    frame_w: int = 400
    frame_h: int = 240
    base_x: float = 140.0
    ground_y: float = 200.0
    direction: int = 1
    jitter: int = 1
    jitter_rate: float = 0.15
    limb: str = "leg"  # or "arm"
    limb_amplitude: float = 14.0
    pedal_radius: float = 10.0
    velocity: tuple[float, float] = (2.0, 0.0)
    distractor: Distractor | None = None
    noise: float = 0.0  # per-pixel flip probability
    frame_rate: float = 50.0

    def __post_init__(self):
        if not (0 < self.t_II <= self.t_III < self.duration):
            raise ValueError("need 0 < t_II <= t_III < duration")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.limb not in ("leg", "arm"):
            raise ValueError("limb must be 'leg' or 'arm'")
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError("velocity must be finite")


@dataclass
class SyntheticScene:
    script: SceneScript
    frames: np.ndarray  # (T, H, W) uint8 binary mask
    layers: np.ndarray  # (T, H, W) uint8 layer ids
    heads: np.ndarray  # (T, 2) head (x, y) per frame
    body_offsets: np.ndarray  # (T, 2) integer rigid-body displacement per frame
    annotation: SceneAnnotation

    def class_maps(self) -> np.ndarray:
        lut = np.zeros(256, dtype=np.uint8)
        for layer, cid in CLASS_IDS.items():
            lut[layer] = cid
        return lut[self.layers]


def _disc(canvas, value, cx, cy, r):
    h, w = canvas.shape
    x0, x1 = max(int(cx - r) - 1, 0), min(int(cx + r) + 2, w)
    y0, y1 = max(int(cy - r) - 1, 0), min(int(cy + r) + 2, h)
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    canvas[y0:y1, x0:x1][inside] = value


def _capsule(canvas, value, ax, ay, bx, by, r):
    h, w = canvas.shape
    x0, x1 = max(int(min(ax, bx) - r) - 1, 0), min(int(max(ax, bx) + r) + 2, w)
    y0, y1 = max(int(min(ay, by) - r) - 1, 0), min(int(max(ay, by) + r) + 2, h)
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    t = np.clip(((xx - ax) * dx + (yy - ay) * dy) / den, 0, 1) if den > 0 else 0.0
    px, py = ax + t * dx, ay + t * dy
    inside = (xx - px) ** 2 + (yy - py) ** 2 <= r * r
    canvas[y0:y1, x0:x1][inside] = value


WHEEL_R = 22.0
HEAD_OFFSET = (6.0, -96.0)  # head centre relative to bottom bracket
PEDAL_ANGLE0 = math.pi * 0.75


def _draw_cyclist(canvas, bx, by, sgn, limb, limb_phase, limb_amp, pedal_angle,
                  pedal_radius=10.0, pedal_angle0=0.0):
    """Draw the rider at bottom bracket (bx, by); ``sgn`` mirrors left/right."""
    def X(dx):
        return bx + sgn * dx

    # bicycle
    _disc(canvas, BICYCLE, X(-34), by, WHEEL_R)
    _disc(canvas, BICYCLE, X(34), by, WHEEL_R)
    for (ax, ay), (cx, cy) in [((-34, 0), (-10, -30)), ((-10, -30), (26, -36)),
                               ((26, -36), (34, 0)), ((0, 0), (-34, 0)), ((0, 0), (-10, -30))]:
        _capsule(canvas, BICYCLE, X(ax), by + ay, X(cx), by + cy, 3)

    hip = (-10, -36)
    shoulder = (2, -80)
    _capsule(canvas, RIDER, X(hip[0]), by + hip[1], X(shoulder[0]), by + shoulder[1], 9)
    _disc(canvas, RIDER, X(HEAD_OFFSET[0]), by + HEAD_OFFSET[1], 10)

    # pedal leg follows the crank; supporting foot starts on the ground
    pa = pedal_angle
    pedal = (pedal_radius * math.cos(pa), pedal_radius * math.sin(pa))
    _capsule(canvas, RIDER, X(hip[0]), by + hip[1], X(pedal[0]), by + pedal[1], 6)

    foot = [12.0, WHEEL_R - 4]
    if limb == "leg":
        foot[0] += 0.6 * limb_amp * limb_phase
        foot[1] -= limb_amp * limb_phase
    if limb_phase >= 1.0:
        # lifted foot now rides the opposite pedal
        foot[0] -= pedal_radius * (math.cos(pa) - math.cos(pedal_angle0))
        foot[1] -= pedal_radius * (math.sin(pa) - math.sin(pedal_angle0))
    _capsule(canvas, RIDER, X(hip[0]), by + hip[1], X(foot[0]), by + foot[1], 6)

    # arm rests on the bar unless it leads the start, then it swings up from the hip
    hand = [24.0, -40.0]
    if limb == "arm":
        back = 1.0 - limb_phase
        hand[0] -= 1.6 * limb_amp * back
        hand[1] += 0.5 * limb_amp * back - 0.4 * limb_amp * math.sin(math.pi * limb_phase)
    _capsule(canvas, RIDER, X(shoulder[0]), by + shoulder[1], X(hand[0]), by + hand[1], 5)


def _draw_pedestrian(canvas, x, ground, height, stride_phase, sgn):
    s = height / 70.0
    hip_y = ground - 32 * s
    _capsule(canvas, PEDESTRIAN, x, hip_y, x + sgn * 2 * s, ground - 58 * s, 7 * s)
    _disc(canvas, PEDESTRIAN, x + sgn * 3 * s, ground - 66 * s, 6 * s)
    swing = 9 * s * math.sin(stride_phase)
    _capsule(canvas, PEDESTRIAN, x, hip_y, x + swing, ground, 4 * s)
    _capsule(canvas, PEDESTRIAN, x, hip_y, x - swing, ground, 4 * s)
    _capsule(canvas, PEDESTRIAN, x + sgn * 2 * s, ground - 54 * s, x - 0.8 * swing, hip_y + 4 * s, 3 * s)


def render_scene(script: SceneScript) -> SyntheticScene:
    rng = np.random.default_rng(script.seed)
    T, H, W = script.duration, script.frame_h, script.frame_w
    layers = np.zeros((T, H, W), dtype=np.uint8)
    heads = np.zeros((T, 2))
    offsets = np.zeros((T, 2), dtype=np.int64)
    by0 = script.ground_y - WHEEL_R
    sgn = script.direction
    vx, vy = script.velocity

    jit = np.zeros(2, dtype=np.int64)
    for k in range(T):
        if k < script.t_III:
            if script.jitter > 0 and rng.random() < script.jitter_rate:
                jit = rng.integers(-script.jitter, script.jitter + 1, size=2)
            off = jit.copy()
        else:
            steps = k - script.t_III + 1
            off = jit + np.array([round(sgn * vx * steps), round(vy * steps)], dtype=np.int64)
        offsets[k] = off
        bx, by = script.base_x + off[0], by0 + off[1]

        if k < script.t_II:
            limb_phase = 0.0
        elif k < script.t_III:
            limb_phase = (k - script.t_II + 1) / (script.t_III - script.t_II + 1)
        else:
            limb_phase = 1.0
        travelled = max(0, k - script.t_III + 1) * math.hypot(vx, vy)
        pedal_angle = PEDAL_ANGLE0 + travelled / 12.0

        canvas = layers[k]
        d = script.distractor
        ped_x = None
        if d is not None and k >= d.start_frame:
            ped_x = d.x_start + d.speed * (k - d.start_frame)
            ped_args = (ped_x, script.ground_y + d.ground_offset, d.height,
                        0.35 * (k - d.start_frame), 1 if d.speed >= 0 else -1)
            if d.depth == "behind":
                _draw_pedestrian(canvas, *ped_args)
        _draw_cyclist(canvas, bx, by, sgn, script.limb, limb_phase, script.limb_amplitude, pedal_angle,
                      script.pedal_radius, PEDAL_ANGLE0)
        if d is not None and ped_x is not None and d.depth == "front":
            _draw_pedestrian(canvas, *ped_args)
        heads[k] = (bx + sgn * HEAD_OFFSET[0], by + HEAD_OFFSET[1])

    frames = (layers > 0).astype(np.uint8)
    if script.noise > 0:
        flips = rng.random(frames.shape) < script.noise
        frames ^= flips.astype(np.uint8)
    ann = SceneAnnotation.from_boundaries(T, script.t_II, script.t_III, script.frame_rate)
    return SyntheticScene(script, frames, layers, heads, offsets, ann)


def random_script(rng: np.random.Generator, seed: int, distractor: bool = False,
                  mixed_directions: bool = False, noise: float = 0.0,
                  depth: str = "behind") -> SceneScript:
    t_II = int(rng.integers(60, 101))
    t_III = t_II + int(rng.integers(8, 21))
    duration = t_III + 40
    direction = int(rng.choice([1, -1])) if mixed_directions else 1
    base_x = 130.0 if direction == 1 else 270.0
    d = None
    if distractor:
        speed = float(rng.uniform(2.5, 4.0)) * rng.choice([1, -1])
        span = 150.0
        x_start = base_x - span if speed > 0 else base_x + span
        latest = max(0, t_II - int(2 * span / abs(speed)))
        d = Distractor(start_frame=int(rng.integers(0, latest + 1)), x_start=x_start, speed=speed,
                       depth=depth, height=float(rng.uniform(60, 80)))
    return SceneScript(
        seed=seed, duration=duration, t_II=t_II, t_III=t_III, base_x=base_x,
        direction=direction, limb="arm" if rng.random() < 0.29 else "leg",
        limb_amplitude=float(rng.uniform(10, 18)),
        velocity=(float(rng.uniform(1.0, 2.5)), 0.0),
        distractor=d, noise=noise)


@dataclass
class DatasetSplit:
    train: list[SceneScript] = field(default_factory=list)
    val: list[SceneScript] = field(default_factory=list)
    test: list[SceneScript] = field(default_factory=list)

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def split_counts(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, ...]:
    """Floor each share, then hand leftovers to the largest fractional parts."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    raw = [n * r for r in ratios]
    counts = [int(math.floor(v + 1e-9)) for v in raw]
    left = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return tuple(counts)


def make_dataset(n_scenes: int, split_ratios=(0.6, 0.2, 0.2), seed: int = 0,
                 distractor_fraction: float = 0.2, mixed_directions: bool = False,
                 noise: float = 0.0) -> DatasetSplit:
    rng = np.random.default_rng(seed)
    scripts = []
    for i in range(n_scenes):
        scripts.append(random_script(rng, seed=seed * 100_003 + i,
                                     distractor=rng.random() < distractor_fraction,
                                     mixed_directions=mixed_directions, noise=noise))
    order = rng.permutation(n_scenes)
    n_tr, n_va, _ = split_counts(n_scenes, split_ratios)
    ds = DatasetSplit(
        train=[scripts[i] for i in order[:n_tr]],
        val=[scripts[i] for i in order[n_tr:n_tr + n_va]],
        test=[scripts[i] for i in order[n_tr + n_va:]],
    )
    if n_scenes and (not ds.val or not ds.test):
        log.warning("dataset of %d scenes leaves an empty validation or test split", n_scenes)
    return ds


def distractor_scenes(n: int, seed: int, depth: str = "behind") -> list[SceneScript]:
    rng = np.random.default_rng(seed)
    return [random_script(rng, seed=seed * 100_003 + i, distractor=True, depth=depth) for i in range(n)]


def static_variant(script: SceneScript) -> SceneScript:
    """Same script with all motion removed (used to sanity-check rendering)."""
    return replace(script, jitter=0, limb_amplitude=0.0, velocity=(0.0, 0.0), distractor=None)
