import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from cyclestart.mchog import (
    DimensionMismatch, MchogParams, cell_histograms, compute, compute_batch, descriptor_length,
    gradients, read_descriptor_csv, write_descriptor_csv,
)

images = nps.arrays(np.float64, (16, 24), elements=st.floats(0, 1))


def test_descriptor_lengths():
    assert descriptor_length(MchogParams()) == 864
    assert descriptor_length(MchogParams(8, 8, 12)) == 2304
    assert descriptor_length(MchogParams(128, 128, 2, 128, 128)) == 2


def test_cells_must_tile():
    with pytest.raises(DimensionMismatch):
        MchogParams(cell_size_x=24)
    with pytest.raises(ValueError):
        MchogParams(n_bins=1)


def test_constant_image_has_no_gradient():
    mag, _ = gradients(np.full((8, 8), 0.3))
    assert not mag.any()


def test_vertical_step_edge():
    img = np.array([[0, 0, 1, 1]] * 4, dtype=float)
    mag, ang = gradients(img)
    # kernel applied as written: 1 - 0 across the step, no half factor
    np.testing.assert_array_equal(mag, [[0, 1, 1, 0]] * 4)
    assert np.all(ang[:, 1:3] == 0.0)


@given(images)
def test_transpose_swaps_axes(img):
    mag, ang = gradients(img)
    mag_t, ang_t = gradients(img.T)
    np.testing.assert_allclose(mag_t, mag.T, atol=1e-12)
    moving = mag.T > 1e-9
    diff = np.mod(ang_t - (90.0 - ang.T), 180.0)
    diff = np.minimum(diff, 180.0 - diff)
    assert np.all(diff[moving] < 1e-6)


def test_orientation_range():
    img = np.random.default_rng(0).random((20, 20))
    assert np.all((gradients(img)[1] >= 0) & (gradients(img)[1] < 180))
    assert np.all(gradients(img, signed=True)[1] < 360)


class TestVotes:
    p = MchogParams(8, 8, 6, 16, 8)  # two cells, bin width 30 degrees

    def _single(self, angle):
        mag = np.zeros((8, 16))
        ori = np.zeros((8, 16))
        mag[2, 10], ori[2, 10] = 1.0, angle
        return cell_histograms(mag, ori, self.p)

    def test_zero_magnitude(self):
        assert not cell_histograms(np.zeros((8, 16)), np.zeros((8, 16)), self.p).any()

    def test_bin_centre(self):
        d = self._single(45.0)  # centre of bin 1
        expected = np.zeros(12)
        expected[6 + 1] = 1.0
        np.testing.assert_allclose(d, expected, atol=1e-12)

    def test_midway(self):
        d = self._single(60.0)  # between centres 45 and 75
        assert d[6 + 1] == pytest.approx(0.5) and d[6 + 2] == pytest.approx(0.5)
        assert d.sum() == pytest.approx(1.0)

    def test_circular_wrap(self):
        d = self._single(5.0)  # between last centre 165 and first centre 15
        assert d[6 + 0] == pytest.approx(2 / 3) and d[6 + 5] == pytest.approx(1 / 3)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cell_histograms(np.zeros((8, 12)), np.zeros((8, 12)), self.p)


@settings(max_examples=50)
@given(images)
def test_vote_conservation(img):
    p = MchogParams(8, 8, 9, 24, 16)
    d = compute(img, p)
    assert np.all(d >= 0)
    total = gradients(img)[0].sum()
    assert d.sum() == pytest.approx(total, rel=1e-9, abs=1e-12)


@given(images, st.floats(0.01, 100))
def test_scaling_is_linear(img, alpha):
    p = MchogParams(8, 8, 9, 24, 16)
    np.testing.assert_allclose(compute(alpha * img, p), alpha * compute(img, p), rtol=1e-9, atol=1e-12)


def _framed_cell(rng, h, w):
    cell = np.zeros((h, w))
    cell[1:-1, 1:-1] = rng.random((h - 2, w - 2))
    return cell


def test_two_cell_concatenation():
    rng = np.random.default_rng(4)
    for _ in range(20):
        left, right = _framed_cell(rng, 8, 8), _framed_cell(rng, 8, 8)
        both = compute(np.hstack([left, right]), MchogParams(8, 8, 6, 16, 8))
        single = MchogParams(8, 8, 6, 8, 8)
        np.testing.assert_array_equal(both, np.concatenate([compute(left, single), compute(right, single)]))
        # amplifying one cell leaves the other cell's histogram untouched
        loud = compute(np.hstack([left, 50 * right]), MchogParams(8, 8, 6, 16, 8))
        np.testing.assert_array_equal(loud[:6], both[:6])


def test_translation_by_one_cell_permutes_blocks():
    p = MchogParams(8, 8, 6, 32, 16)
    img = np.zeros((16, 32))
    img[3:13, 4:20] = np.random.default_rng(5).random((10, 16))
    shifted = np.roll(img, 8, axis=1)
    a = compute(img, p).reshape(2, 4, 6)
    b = compute(shifted, p).reshape(2, 4, 6)
    np.testing.assert_allclose(b[:, 1:], a[:, :-1], atol=1e-12)
    assert not b[:, 0].any()


def test_resize_and_batch():
    mhis = np.random.default_rng(6).random((3, 160, 192))
    batch = compute_batch(mhis)
    assert batch.shape == (3, 864)
    np.testing.assert_allclose(batch[2], compute(mhis[2]))


def test_descriptor_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    desc = rng.random((5, 12))
    labels = np.array([-1, -1, 1, 1, -1])
    write_descriptor_csv(tmp_path / "d.csv", labels, desc)
    y, x = read_descriptor_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(y, labels)
    np.testing.assert_array_equal(x, desc)
