import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import resize_pixel, scene, ssim_sliding
from pdan.dataset import (PairDataset, augment, inverse_augment, read_manifest, read_png,
                          sample_batch, write_png)
from pdan.imaging import (DegradationSpec, bicubic_resize, degrade, gaussian_blur, modcrop,
                          quantize, resize_weights, rgb_to_y, rgb_to_ycbcr)
from pdan.metrics import PSNR_CAP, psnr_y, ssim_y


# --- resampling ---------------------------------------------------------------

@pytest.mark.parametrize("factor", [1 / 4, 1 / 3, 1 / 2, 2, 3, 4])
def test_resize_preserves_constants(factor):
    img = np.full((3, 12, 12), 0.37)
    out = bicubic_resize(img, factor)
    assert out.shape == (3, round(12 * factor), round(12 * factor))
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_resize_identity():
    img = scene(9, 7)
    np.testing.assert_allclose(bicubic_resize(img, 1.0), img, atol=1e-12)


@pytest.mark.parametrize("factor", [1 / 2, 1 / 4, 2, 3])
def test_resize_matches_per_pixel_oracle(factor):
    ramp = np.add.outer(np.arange(8) ** 1.5, 0.3 * np.arange(8)) / 30
    out = bicubic_resize(ramp, factor)
    for oy in range(out.shape[0]):
        for ox in range(out.shape[1]):
            assert out[oy, ox] == pytest.approx(resize_pixel(ramp, factor, oy, ox), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.sampled_from([1 / 4, 1 / 3, 1 / 2, 2.0, 3.0, 4.0]))
def test_resize_rows_sum_to_one(n, factor):
    w = resize_weights(n, max(1, round(n * factor)), factor)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_downscale_output_size_and_modcrop():
    img = scene(50, 47)
    cropped = modcrop(img, 4)
    assert cropped.shape == (3, 48, 44)
    assert degrade(cropped, DegradationSpec("BI", 4)).shape == (3, 12, 11)


# --- degradations ---------------------------------------------------------------

def test_bi_is_plain_resize():
    img = scene(24, 24)
    np.testing.assert_array_equal(degrade(img, DegradationSpec("bi", 3)), bicubic_resize(img, 1 / 3))


def test_bd_constant_stays_constant():
    img = np.full((3, 21, 21), 0.6)
    np.testing.assert_allclose(degrade(img, DegradationSpec("BD", 3)), 0.6, atol=1e-12)
    np.testing.assert_allclose(gaussian_blur(img), 0.6, atol=1e-12)


def test_bd_blurs_before_resize():
    img = scene(24, 24)
    out = degrade(img, DegradationSpec("BD", 3))
    np.testing.assert_allclose(out, bicubic_resize(gaussian_blur(img, 7, 1.6), 1 / 3), atol=1e-12)
    assert not np.allclose(out, bicubic_resize(img, 1 / 3))


def test_dn_noise_statistics():
    img = np.full((3, 512, 512), 0.5)
    lr = degrade(img, DegradationSpec("DN", 2, seed=3))
    assert lr.shape == (3, 256, 256)
    noise = lr - 0.5
    sigma = 30 / 255
    assert abs(noise.mean()) < 3 * sigma / np.sqrt(noise.size)
    assert abs(noise.std() - sigma) / sigma < 0.05


def test_dn_determinism_and_clamping():
    img = scene(30, 30)
    a = degrade(img, DegradationSpec("DN", 3, seed=4))
    assert np.array_equal(a, degrade(img, DegradationSpec("DN", 3, seed=4)))
    assert not np.array_equal(a, degrade(img, DegradationSpec("DN", 3, seed=5)))
    assert a.min() >= 0 and a.max() <= 1


def test_unknown_degradation():
    with pytest.raises(ValueError):
        DegradationSpec("JPEG")


# --- colour ---------------------------------------------------------------------

def test_ycbcr_reference_colours():
    white, black, gray = (np.full((3, 1, 1), v) for v in (1.0, 0.0, 0.5))
    assert rgb_to_y(white)[0, 0] == pytest.approx(235 / 255, abs=1e-12)
    assert rgb_to_y(black)[0, 0] == pytest.approx(16 / 255, abs=1e-12)
    ycc = rgb_to_ycbcr(gray)[:, 0, 0]
    assert ycc[1:] == pytest.approx([128 / 255, 128 / 255], abs=1e-12)
    assert rgb_to_y(white, studio=False)[0, 0] == pytest.approx(1.0)


# --- metrics ----------------------------------------------------------------------

def test_psnr_examples(rng):
    y = rng.uniform(0.2, 0.8, (16, 16))
    assert psnr_y(y, y) == PSNR_CAP
    assert psnr_y(y, y + 0.1) == pytest.approx(20.0, abs=1e-6)
    a, b = scene(16, 16, 1), scene(16, 16, 2)
    assert psnr_y(a, b) == psnr_y(b, a)
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    assert psnr_y(a, b) == pytest.approx(-10 * np.log10(np.mean((ya - yb) ** 2)), abs=1e-9)


def test_psnr_shave_and_shape_errors():
    a = np.zeros((3, 10, 10))
    b = a.copy()
    b[:, 0, :] = 1.0  # border row only
    assert psnr_y(a, b, shave=1) == PSNR_CAP
    with pytest.raises(ValueError):
        psnr_y(a, np.zeros((3, 10, 9)))
    with pytest.raises(ValueError):
        psnr_y(a, b, shave=5)


def test_ssim_identical_and_inverted():
    y = rgb_to_y(scene(32, 32, 3))
    assert ssim_y(y, y) == pytest.approx(1.0, abs=1e-12)
    s = ssim_y(y, 1 - y)
    assert -1 <= s < 0


def test_ssim_matches_sliding_oracle():
    a = rgb_to_y(scene(32, 32, 4))
    b = np.clip(a + np.random.default_rng(0).normal(0, 0.05, a.shape), 0, 1)
    assert ssim_y(a, b) == pytest.approx(ssim_sliding(a, b), abs=1e-6)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim_y(np.zeros((8, 8)), np.zeros((8, 8)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_metric_symmetry_and_bounds(seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(0, 1, (2, 16, 16))
    assert psnr_y(a, b) == psnr_y(b, a)
    s = ssim_y(a, b)
    assert -1 <= s <= 1
    assert s == pytest.approx(ssim_y(b, a), abs=1e-12)


# --- image I/O and datasets -----------------------------------------------------------

def test_png_round_trip(tmp_path):
    img = quantize(scene(9, 11))
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    assert back.shape == (3, 9, 11) and back.dtype == np.float32
    np.testing.assert_allclose(back, img, atol=1e-6)


def test_dataset_from_directory_and_manifest(tmp_path):
    for k in range(2):
        write_png(tmp_path / f"im{k}.png", scene(26, 25, k))
    ds = PairDataset.from_path(tmp_path, DegradationSpec("BI", 4))
    assert ds.names == ["im0", "im1"]
    assert ds.hr[0].shape == (3, 24, 24) and ds.lr[0].shape == (3, 6, 6)
    assert np.array_equal(ds.lr[0], quantize(ds.lr[0]))

    write_png(tmp_path / "lr.png", np.zeros((3, 6, 6)))
    (tmp_path / "list.txt").write_text("# comment\nim0.png\tlr.png\nim1.png\n")
    recs = read_manifest(tmp_path / "list.txt")
    assert recs[1] == (tmp_path / "im1.png", None)
    ds2 = PairDataset.from_path(tmp_path / "list.txt", DegradationSpec("BI", 4))
    assert np.all(ds2.lr[0] == 0)
    assert np.array_equal(ds2.lr[1], ds.lr[1])

    (tmp_path / "bad.txt").write_text("im0.png\tim1.png\n")
    with pytest.raises(ValueError):
        PairDataset.from_path(tmp_path / "bad.txt", DegradationSpec("BI", 4))


@pytest.mark.parametrize("code", range(8))
def test_augmentations_invertible(code, rng):
    p = rng.standard_normal((3, 5, 5))
    assert np.array_equal(inverse_augment(augment(p, code), code), p)


def test_augmentations_distinct_and_rot180_involution(rng):
    p = rng.standard_normal((3, 4, 4))
    outs = {augment(p, k).tobytes() for k in range(8)}
    assert len(outs) == 8
    assert np.array_equal(augment(augment(p, 2), 2), p)


def _dataset(scale=2, n=2, size=64):
    return PairDataset.from_images([scene(size, size, k) for k in range(n)],
                                   DegradationSpec("BI", scale))


def test_sample_batch_shapes_and_determinism():
    ds = _dataset()
    a = sample_batch(ds, np.random.default_rng(0), batch=4, patch=8)
    b = sample_batch(ds, np.random.default_rng(0), batch=4, patch=8)
    assert a.lr.shape == (4, 3, 8, 8) and a.hr.shape == (4, 3, 16, 16)
    assert a.lr.tobytes() == b.lr.tobytes() and a.records == b.records


def test_sample_batch_alignment():
    ds = _dataset(scale=2)
    batch = sample_batch(ds, np.random.default_rng(1), batch=8, patch=12)
    for lr, hr in zip(batch.lr, batch.hr):
        # resizing the HR patch agrees with the LR patch away from the patch border
        redone = bicubic_resize(hr.astype(np.float64), 1 / 2)
        np.testing.assert_allclose(redone[:, 3:-3, 3:-3], lr[:, 3:-3, 3:-3], atol=1e-3)


def test_sample_batch_skips_small_images():
    ds = PairDataset.from_images([scene(64, 64), scene(8, 8)], DegradationSpec("BI", 2))
    batch = sample_batch(ds, np.random.default_rng(0), batch=4, patch=10)
    assert batch.skipped == [1]
    assert {r[0] for r in batch.records} == {0}
    with pytest.raises(ValueError):
        sample_batch(ds, np.random.default_rng(0), batch=1, patch=40)
