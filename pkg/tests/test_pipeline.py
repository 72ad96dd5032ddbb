import numpy as np
import pytest

from cyclestart.evaluation import SceneAnnotation
from cyclestart.mhi import generate_mhi
from cyclestart.pipeline import prepare_scene, resnet_inputs, stack_samples
from cyclestart.silhouette import InsufficientHistory, RoiSpec, crop_roi, stack

ROI = RoiSpec(roi_width=16, roi_height=12)


def scene(rng, t=30):
    frames = rng.integers(0, 2, (t, 40, 50), dtype=np.uint8)
    heads = np.column_stack([np.linspace(10, 40, t), np.full(t, 15.0)])
    ann = SceneAnnotation.from_boundaries(t, 12, 20)
    return frames, heads, ann


def test_mhi_k_belongs_to_frame_first_plus_k():
    rng = np.random.default_rng(0)
    frames, heads, ann = scene(rng)
    sc = prepare_scene("s", frames, heads, ann, n=5, roi=ROI)
    assert sc.first_frame == 4 and len(sc.mhis) == len(sc.annotation) == 26
    for k in (0, 7, 25):
        t = sc.first_frame + k
        crops = [crop_roi(f, *heads[t], ROI) for f in frames[:t + 1]]
        np.testing.assert_array_equal(sc.mhis[k], generate_mhi(stack(crops, 5)))
        assert sc.annotation.phase_labels[k] == ann.phase_labels[t]
    assert list(sc.labels[:8]) == [-1] * 8 and sc.labels[8] == 1
    assert sc.moving_seconds == pytest.approx(10 / 50)


def test_too_short_scene():
    frames, heads, ann = scene(np.random.default_rng(1), t=4)
    with pytest.raises(InsufficientHistory):
        prepare_scene("s", frames, heads, ann, n=5, roi=ROI)


def test_stack_samples_stride():
    rng = np.random.default_rng(2)
    sc = prepare_scene("s", *scene(rng), n=5, roi=ROI)
    x, y = stack_samples([sc, sc], stride=2)
    assert len(x) == len(y) == 2 * 13


def test_resnet_inputs_quantise():
    mhis = np.array([np.full((12, 16), v) for v in (0.0, 0.05, 1.0)])
    out = resnet_inputs(mhis, 8)
    assert out.dtype == np.uint8 and out.shape == (3, 8, 8)
    assert list(out[:, 0, 0]) == [0, 13, 255]
