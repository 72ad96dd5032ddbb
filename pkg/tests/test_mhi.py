import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from cyclestart.mhi import (
    decay, decay_schedule, export_png, generate_mhi, generate_mhi_loop, read_mhi,
    resize_bilinear, to_uint8, write_mhi,
)
from cyclestart.silhouette import SilhouetteStack

stacks = st.integers(1, 20).flatmap(
    lambda n: nps.arrays(np.uint8, (n, 6, 7), elements=st.integers(0, 1)))


def test_decay_values():
    assert decay(10, 0) == 1.0
    assert decay(10, 9) == 0.1
    assert decay(1, 0) == 1.0
    with pytest.raises(IndexError):
        decay(10, 10)
    sched = decay_schedule(20)
    assert np.all(np.diff(sched) < 0) and sched[0] == 1.0 and sched[-1] == 1 / 20


def test_empty_stack():
    assert not generate_mhi(np.zeros((5, 4, 4), np.uint8)).any()


def test_oldest_frame_only():
    s = np.zeros((10, 3, 3), np.uint8)
    s[9, 1, 1] = 1
    out = generate_mhi(SilhouetteStack(s))
    assert out[1, 1] == 0.1 and out.sum() == 0.1


def test_newer_overwrites_older():
    s = np.zeros((10, 3, 3), np.uint8)
    s[7, 0, 0] = s[2, 0, 0] = 1
    assert generate_mhi(s)[0, 0] == 0.8 == generate_mhi_loop(s)[0, 0]


@settings(max_examples=200)
@given(stacks)
def test_closed_form_matches_loop(s):
    np.testing.assert_array_equal(generate_mhi(s), generate_mhi_loop(s))


@given(stacks)
def test_value_set(s):
    n = s.shape[0]
    allowed = {0.0} | {(n - t) / n for t in range(n)}
    assert set(np.unique(generate_mhi(s)).tolist()) <= allowed


@given(stacks, st.integers(0, 5), st.integers(0, 6))
def test_new_foreground_forces_one(s, v, u):
    newest = np.zeros((1,) + s.shape[1:], np.uint8)
    newest[0, v, u] = 1
    grown = np.concatenate([newest, s[:-1]]) if len(s) > 1 else newest
    assert generate_mhi(grown)[v, u] == 1.0


def test_batch_matches_single():
    b = np.random.default_rng(0).integers(0, 2, (4, 5, 6, 6), dtype=np.uint8)
    out = generate_mhi(b)
    for i in range(4):
        np.testing.assert_array_equal(out[i], generate_mhi(b[i]))


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(0).random((7, 9))
        np.testing.assert_array_equal(resize_bilinear(img, 9, 7), img)

    def test_constant(self):
        np.testing.assert_allclose(resize_bilinear(np.full((5, 8), 0.5), 13, 3), 0.5)

    def test_hand_computed(self):
        # 2x2 -> 2x1: output row sits at source y = 0.5, halfway between the rows
        out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 2, 1)
        np.testing.assert_allclose(out, [[0.0, 1.0]])
        out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 1, 2)
        np.testing.assert_allclose(out, [[0.5], [0.5]])

    def test_batch(self):
        imgs = np.random.default_rng(1).random((3, 10, 12))
        out = resize_bilinear(imgs, 5, 4)
        np.testing.assert_array_equal(out[1], resize_bilinear(imgs[1], 5, 4))

    @given(nps.arrays(np.float64, (6, 5), elements=st.floats(0, 1)), st.integers(1, 20), st.integers(1, 20))
    def test_range_preserved(self, img, w, h):
        out = resize_bilinear(img, w, h)
        assert out.shape == (h, w)
        assert img.min() <= out.min() and out.max() <= img.max()

    def test_bad_size(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((3, 3)), 0, 2)


def test_mhi_file_round_trip(tmp_path):
    img = generate_mhi(np.random.default_rng(2).integers(0, 2, (20, 16, 12), dtype=np.uint8))
    write_mhi(tmp_path / "a.mhi", img, 20)
    raw = (tmp_path / "a.mhi").read_bytes()
    assert raw[:4] == b"MHI1" and len(raw) == 16 + 4 * 16 * 12
    back, n = read_mhi(tmp_path / "a.mhi")
    assert n == 20
    np.testing.assert_allclose(back, img, rtol=1e-7)
    (tmp_path / "b.mhi").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        read_mhi(tmp_path / "b.mhi")


def test_uint8_export_lossless_for_small_n(tmp_path):
    n = 20
    img = np.arange(n + 1).reshape(3, 7) / n
    q = to_uint8(img)
    np.testing.assert_array_equal(np.round(q / 255 * n), np.arange(n + 1).reshape(3, 7))
    export_png(tmp_path / "a.png", img)
    assert (tmp_path / "a.png").stat().st_size > 0
