import hashlib
import math

import numpy as np
import pytest
from scipy import ndimage
from scipy.special import erfc

from penumbra.forward_model import (
    MANIFEST_COLUMNS,
    ApertureSpec,
    DatasetManifest,
    NoiseConfig,
    SourceSpec,
    add_gaussian_noise,
    add_mixed_noise,
    aperture_kind,
    aperture_psf,
    corrupt,
    disc_raster,
    generate_dataset,
    render_ground_truth,
)
from penumbra.raster_io import read_float_raster


@pytest.fixture(scope="module")
def gt50():
    return render_ground_truth(SourceSpec(6.0), ApertureSpec(50.0), (256, 256))


def _half_max_radii(img, center, n_angles=360):
    # polar rays; first outward half-max crossing, linearly interpolated
    r = np.arange(0, 120, 0.05)
    th = np.arange(n_angles) * 2 * np.pi / n_angles
    ys = center[1] + np.sin(th)[:, None] * r
    xs = center[0] + np.cos(th)[:, None] * r
    prof = ndimage.map_coordinates(np.asarray(img, dtype=np.float64), [ys, xs], order=3)
    out = []
    for p in prof:
        k = np.nonzero(p < 0.5)[0][0]
        t = (p[k - 1] - 0.5) / (p[k - 1] - p[k])
        out.append(r[k - 1] + t * (r[k] - r[k - 1]))
    return np.array(out)


def test_kind_follows_three_sigma_rule():
    assert aperture_kind(64, 8) == "penumbral"
    assert aperture_kind(16, 8) == "pinhole"
    assert ApertureSpec(64.0).resolved_kind(8.0) == "penumbral"
    with pytest.raises(ValueError):
        ApertureSpec(16.0, kind="penumbral").resolved_kind(8.0)


@pytest.mark.parametrize("bad", [{"sigma": 0}, {"sigma": -1}, {"amplitude": 0}])
def test_source_invariants(bad):
    with pytest.raises(ValueError):
        SourceSpec(**bad)


def test_disc_outside_frame_rejected():
    with pytest.raises(ValueError, match="does not fit"):
        render_ground_truth(SourceSpec(8.0), ApertureSpec(120.0), (256, 256))
    with pytest.raises(ValueError):
        render_ground_truth(SourceSpec(4.0), ApertureSpec(20.0, center=(10.0, 128.0)), (256, 256))


def test_disc_area_sampling_matches_area():
    d = disc_raster(40.0, (127.5, 127.5), (256, 256))
    assert abs(d.sum() - math.pi * 40**2) / (math.pi * 40**2) < 1e-3
    assert set(np.unique(d)).issubset(set(np.arange(17) / 16))


def test_delta_kernel_limit():
    gt = np.asarray(render_ground_truth(SourceSpec(0.25), ApertureSpec(50.0), (256, 256)))
    yy, xx = np.indices(gt.shape)
    r = np.hypot(xx - 127.5, yy - 127.5)
    assert np.all(gt[r < 48] > 0.999)
    assert np.all(gt[r > 52] < 1e-3)


def test_peak_normalised(gt50):
    assert np.asarray(gt50).max() == pytest.approx(1.0, abs=1e-7)
    assert np.asarray(gt50).min() >= 0


def test_half_max_radius_matches_erf_oracle(gt50):
    radii = _half_max_radii(gt50, (127.5, 127.5))
    assert np.all(np.abs(radii - 50.0) < 0.5)
    # symmetry: constant over angle
    assert radii.max() - radii.min() < 0.5


def test_edge_profile_follows_erfc(gt50):
    # straight-edge limit: I(r) = erfc((r - R)/(sqrt 2 sigma))/2; curvature adds O(sigma^2/R)
    px = np.asarray(gt50, dtype=np.float64)
    r = np.arange(30.0, 75.0, 0.5)
    prof = ndimage.map_coordinates(px, [np.full_like(r, 127.5), 127.5 + r], order=3)
    model = 0.5 * erfc((r - 50.0) / (math.sqrt(2) * 6.0))
    assert np.max(np.abs(prof - model)) < 0.03


def test_rotation_invariance(gt50):
    px = np.asarray(gt50)
    for k in (1, 2, 3):
        assert np.max(np.abs(np.rot90(px, k) - px)) < 1e-6


def test_psf_unit_sum():
    psf = np.asarray(aperture_psf(ApertureSpec(50.0), (256, 256)), dtype=np.float64)
    assert psf.sum() == pytest.approx(1.0, abs=1e-5)


def test_gaussian_noise_zero_image():
    out = add_gaussian_noise(np.zeros((32, 32)), NoiseConfig(seed=3))
    assert np.all(np.asarray(out) == 0)


def test_gaussian_noise_std_matches_rms():
    rng = np.random.default_rng(5)
    clean = rng.random((400, 250))  # 1e5 pixels
    rms = math.sqrt(np.mean(clean.astype(np.float32).astype(np.float64) ** 2))
    noise = np.asarray(add_gaussian_noise(clean, NoiseConfig(seed=11)), dtype=np.float64) - clean
    assert abs(noise.std() - rms) / rms < 0.02


def test_gaussian_noise_scales_with_signal():
    clean = np.random.default_rng(2).random((400, 250))
    n1 = np.asarray(add_gaussian_noise(clean, NoiseConfig(seed=1)), np.float64) - clean
    n2 = np.asarray(add_gaussian_noise(2 * clean, NoiseConfig(seed=2)), np.float64) - 2 * clean
    assert n2.std() / n1.std() == pytest.approx(2.0, rel=0.02)


def test_gaussian_noise_deterministic(gt50):
    a = np.asarray(add_gaussian_noise(gt50, NoiseConfig(seed=42)))
    b = np.asarray(add_gaussian_noise(gt50, NoiseConfig(seed=42)))
    c = np.asarray(add_gaussian_noise(gt50, NoiseConfig(seed=43)))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


@pytest.fixture(scope="module")
def small_noisy():
    clean = render_ground_truth(SourceSpec(3.0), ApertureSpec(16.0), (64, 64))
    return clean, add_gaussian_noise(clean, NoiseConfig(seed=9))


def _mixed_repeats(noisy, clean, n, snr=10.0, mode="intensity-preserving"):
    return np.stack(
        [np.asarray(add_mixed_noise(noisy, clean, NoiseConfig("mixed", snr, s, mode)), np.float64) for s in range(n)]
    )


def test_mixed_noise_preserves_expectation(small_noisy):
    clean, noisy = small_noisy
    i = np.clip(np.asarray(noisy, np.float64), 0, None)
    reps = _mixed_repeats(noisy, clean, 1000)
    peak = i >= 0.9 * i.max()
    assert abs(reps.mean(0)[peak].mean() - i[peak].mean()) / i[peak].mean() < 0.03
    # per pixel, over the bright half
    bright = i > np.median(i[i > 0])
    rel = np.abs(reps.mean(0)[bright] - i[bright]) / i[bright]
    assert np.mean(rel) < 0.03


def test_mixed_noise_poisson_variance_per_decile(small_noisy):
    clean, noisy = small_noisy
    i = np.clip(np.asarray(noisy, np.float64), 0, None)
    snr = 10.0
    reps = _mixed_repeats(noisy, clean, 400, snr)
    counts = reps * snr**2 / i.max()
    lam = snr**2 * i / i.max()
    pos = lam > 0
    edges = np.quantile(lam[pos], np.linspace(0, 1, 11))
    m, v = counts.mean(0), counts.var(0)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = pos & (lam >= lo) & (lam <= hi)
        assert abs(v[sel].mean() - m[sel].mean()) / m[sel].mean() < 0.03


def test_mixed_noise_high_snr_limit(small_noisy):
    clean, noisy = small_noisy
    i = np.clip(np.asarray(noisy, np.float64), 0, None)
    out = np.asarray(add_mixed_noise(noisy, clean, NoiseConfig("mixed", 1e4, 1)), np.float64)
    assert math.sqrt(np.mean((out - i) ** 2)) / math.sqrt(np.mean(i**2)) < 0.01


def test_mixed_noise_literal_mode_scale(small_noisy):
    clean, noisy = small_noisy
    i = np.clip(np.asarray(noisy, np.float64), 0, None)
    out = np.asarray(add_mixed_noise(noisy, clean, NoiseConfig("mixed", 10.0, 4, "literal")), np.float64)
    counts = out / (np.asarray(clean).max() / 10.0)
    assert np.allclose(counts, np.rint(counts), atol=1e-3)
    # literal rescale inflates the mean by max(I0) * SNR / max(I)
    expect = i.mean() * np.asarray(clean).max() * 10.0 / i.max()
    assert out.mean() == pytest.approx(expect, rel=0.02)


def test_mixed_noise_zero_max_error():
    with pytest.raises(ValueError, match="positive maximum"):
        add_mixed_noise(-np.ones((8, 8)), np.zeros((8, 8)), NoiseConfig("mixed"))


def test_corrupt_is_deterministic(gt50):
    cfg = NoiseConfig("mixed", 10.0, 77)
    assert np.asarray(corrupt(gt50, cfg)).tobytes() == np.asarray(corrupt(gt50, cfg)).tobytes()


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(snr=0)
    with pytest.raises(ValueError):
        NoiseConfig(model="salt")


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_dataset_3000_images(tmp_path):
    src, ap = SourceSpec(3.0), ApertureSpec(16.0)
    m = generate_dataset(3000, src, ap, NoiseConfig(seed=1), tmp_path, size=(64, 64))
    files = sorted(tmp_path.glob("noisy_*.nimg"))
    assert len(files) == 3000 and len(m.rows) == 3000
    assert (tmp_path / "ground_truth.nimg").exists()
    back = DatasetManifest.read(tmp_path)
    assert list(back.rows[0].keys()) == MANIFEST_COLUMNS
    assert len({r["seed"] for r in back.rows}) == 3000


def test_dataset_reproducible_hash(tmp_path):
    args = (1, SourceSpec(3.0), ApertureSpec(16.0), NoiseConfig("mixed", seed=5))
    generate_dataset(*args, tmp_path / "a", size=(64, 64))
    generate_dataset(*args, tmp_path / "b", size=(64, 64), workers=2)
    for name in ("noisy_00000.nimg", "ground_truth.nimg", "manifest.csv"):
        assert _sha(tmp_path / "a" / name) == _sha(tmp_path / "b" / name)


def test_dataset_seeds_differ(tmp_path):
    for s in (1, 2):
        generate_dataset(1, SourceSpec(3.0), ApertureSpec(16.0), NoiseConfig(seed=s), tmp_path / str(s), size=(64, 64))
    a = np.asarray(read_float_raster(tmp_path / "1" / "noisy_00000.nimg"))
    b = np.asarray(read_float_raster(tmp_path / "2" / "noisy_00000.nimg"))
    assert not np.array_equal(a, b)


def test_dataset_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(0, SourceSpec(), ApertureSpec(), NoiseConfig(), tmp_path)
