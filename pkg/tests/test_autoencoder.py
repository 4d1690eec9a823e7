import numpy as np
import pytest

from gradcheck import check_directional, f64
from penumbra import autoencoder as A
from penumbra import tensor as T
from penumbra.forward_model import ApertureSpec, NoiseConfig, SourceSpec, corrupt, render_ground_truth
from penumbra.wavelet import latent_wavelet_layer


@pytest.fixture(scope="module")
def desk_model():
    return A.build(A.ArchitectureConfig.named("desk", mode="penumbral"), seed=1)


@pytest.fixture(scope="module")
def noisy_batch():
    gt = render_ground_truth(SourceSpec(), ApertureSpec(), (256, 256))
    return np.stack([np.asarray(corrupt(gt, NoiseConfig(seed=s)), np.float32) for s in range(2)])


def test_build_is_seeded():
    cfg = A.truncated_config(32)
    a, b, c = A.build(cfg, 3), A.build(cfg, 3), A.build(cfg, 4)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params if k.endswith(".w"))


def test_named_schedules_validate():
    for name in A.SCHEDULES:
        A.ArchitectureConfig.named(name).validate()
    with pytest.raises(ValueError, match="unknown schedule"):
        A.ArchitectureConfig.named("huge")


@pytest.mark.parametrize(
    "bad, match",
    [
        ({"enc_channels": (8, 16, 16, 0, 16, 16)}, "channel"),
        ({"dec_channels": (16, 16, 16, 16, 16, 8, 2)}, "single output"),
        ({"enc_strides": (2, 2, 2, 2, 1, 1)}, "restores"),
        ({"input_size": 250}, "divisible"),
        ({"levels": 6}, "2\\*\\*6"),
        ({"dropout": 1.0}, "dropout"),
        ({"shrink": -1.0}, "shrink"),
        ({"mode": "coded"}, "mode"),
    ],
)
def test_inconsistent_plans_rejected(bad, match):
    with pytest.raises(ValueError, match=match):
        A.ArchitectureConfig.named("desk", **bad).validate()


def test_latent_is_32_and_output_in_open_interval(desk_model, noisy_batch):
    x, _ = A.normalise(noisy_batch)
    z = A.encode(desk_model, T.Tensor(x[:, None]))
    assert z.shape[2:] == (32, 32)
    y = desk_model.forward(T.Tensor(x[:, None])).data
    assert y.shape == (2, 1, 256, 256)
    assert np.all(np.isfinite(y)) and y.min() > 0 and y.max() < 1


def test_inference_deterministic(desk_model, noisy_batch):
    a = A.denoise_batch(desk_model, noisy_batch)
    b = A.denoise_batch(desk_model, noisy_batch)
    assert a.tobytes() == b.tobytes()


def test_wrong_input_shape_rejected(desk_model):
    with pytest.raises(ValueError, match="encoder expects"):
        desk_model.forward(T.Tensor(np.zeros((1, 1, 128, 128), np.float32)))


def test_pinhole_latent_is_wavelet_identity():
    m = A.build(A.truncated_config(32), 0)
    z = T.Tensor(np.random.default_rng(0).random((2, 2, 8, 8)).astype(np.float32))
    out = A.latent_transform(m, z).data
    assert np.max(np.abs(out - z.data)) < 1e-5


def test_zero_linear_reduces_to_pinhole():
    pen = A.build(A.truncated_config(32, mode="penumbral"), 0)
    pin = A.build(A.truncated_config(32), 0)
    for k in ("lin1.w", "lin1.b", "lin2.w", "lin2.b"):
        pen.params[k].data[...] = 0
    for k in pin.params:
        pen.params[k].data = pin.params[k].data.copy()
    x = T.Tensor(np.random.default_rng(1).random((2, 1, 32, 32)).astype(np.float32))
    assert np.array_equal(pen.forward(x).data, pin.forward(x).data)


def test_latent_transform_gradient():
    rng = np.random.default_rng(0)
    m = A.build(A.truncated_config(32, mode="penumbral"), 0)
    with T.precision(np.float64):
        for p in m.params.values():
            p.data = p.data.astype(np.float64)
        z = f64(rng.standard_normal((2, 2, 8, 8)))
        lin = [m.params[k] for k in ("lin1.w", "lin1.b", "lin2.w", "lin2.b")]
        err = check_directional(
            lambda z, *_: T.tmean(T.mul(A.latent_transform(m, z), A.latent_transform(m, z))), [z, *lin], rng, n_dirs=3
        )
    assert err < 1e-3


def pipeline_gradient_error(seed: int) -> float:
    """End-to-end directional FD check of the truncated model under the smooth-L1 loss."""
    rng = np.random.default_rng(seed)
    cfg = A.truncated_config(32, mode="penumbral", dropout=0.0)
    m = A.build(cfg, seed)
    with T.precision(np.float64):
        for p in m.params.values():
            p.data = p.data.astype(np.float64)
            p.data += 0.05 * rng.standard_normal(p.shape)  # move off zero biases / unit gammas
        x = f64(rng.random((2, 1, 32, 32)), grad=False)

        def loss(*_):
            return T.smooth_l1(m.forward(x, training=True), x, 1.0)

        # leaky-ReLU kinks sit within ~1e-5 of some pre-activations; a small step avoids crossing them
        return check_directional(loss, m.parameters(), rng, h=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_pipeline_gradient(seed):
    assert pipeline_gradient_error(seed) < 1e-3


@pytest.mark.parametrize("n, frac, size, expect", [(3000, 0.10, None, 300), (128, 0.10, None, 12), (50, 0.1, 6, 6), (6, 0.1, 2, 2)])
def test_batch_sizes(n, frac, size, expect):
    assert A.TrainingConfig(batch_fraction=frac, batch_size=size).resolved_batch_size(n) == expect


def test_training_config_rejects_bad_values():
    with pytest.raises(ValueError):
        A.TrainingConfig(batch_fraction=0)
    with pytest.raises(ValueError):
        A.TrainingConfig(epochs=0)


def _tiny_data(n=6, size=32, seed=0):
    gt = render_ground_truth(SourceSpec(2.0), ApertureSpec(8.0), (size, size))
    return np.stack([np.asarray(corrupt(gt, NoiseConfig(seed=seed + k)), np.float32) for k in range(n)])


def test_training_bit_reproducible():
    data = _tiny_data()
    cfg = A.TrainingConfig(epochs=2, batch_size=3, seed=5)
    runs = []
    for _ in range(2):
        m, hist = A.train(A.build(A.truncated_config(32), 7), data, cfg)
        runs.append((hist, b"".join(a.tobytes() for _, a in m.state_arrays())))
    assert runs[0] == runs[1]


def test_training_reduces_loss():
    data = _tiny_data(12)
    _, hist = A.train(A.build(A.truncated_config(32), 0), data, A.TrainingConfig(epochs=8, batch_size=4, lr=3e-3))
    assert hist[-1] < hist[0]


def test_divergence_reports_gradients():
    data = _tiny_data(2)
    data[0, 0, 0] = np.nan
    with pytest.raises(A.TrainingDiverged) as err:
        A.train(A.build(A.truncated_config(32), 0), data, A.TrainingConfig(epochs=1, batch_size=2))
    assert err.value.epoch == 0 and err.value.batch == 0
    assert "enc1.w" in err.value.grad_norms


def test_checkpoint_roundtrip_bit_exact(tmp_path, desk_model, noisy_batch):
    path = A.save_checkpoint(desk_model, tmp_path / "m.pnae")
    back = A.load_checkpoint(path)
    assert back.arch == desk_model.arch
    for (ka, a), (kb, b) in zip(desk_model.state_arrays(), back.state_arrays()):
        assert ka == kb and a.astype("<f4").tobytes() == b.astype("<f4").tobytes()
    assert A.denoise_batch(back, noisy_batch).tobytes() == A.denoise_batch(desk_model, noisy_batch).tobytes()
    assert A.save_checkpoint(back, tmp_path / "n.pnae").read_bytes() == path.read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    path = A.save_checkpoint(A.build(A.truncated_config(32), 0), tmp_path / "m.pnae")
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(ValueError, match="truncated"):
        A.load_checkpoint(path)
    path.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(ValueError, match="trailing"):
        A.load_checkpoint(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        A.load_checkpoint(path)


def test_denoise_resamples_other_sizes():
    m = A.build(A.truncated_config(32), 0)
    out = A.denoise(m, np.random.default_rng(0).random((40, 48)).astype(np.float32))
    assert out.shape == (40, 48) and np.all(np.isfinite(np.asarray(out)))


def test_checkerboard_statistic():
    yy, xx = np.indices((64, 64))
    assert A.checkerboard_statistic((-1.0) ** (xx + yy)) == pytest.approx(1.0)
    assert A.checkerboard_statistic(np.ones((64, 64))) == 0.0
    noise = np.random.default_rng(0).standard_normal((64, 64))
    assert A.checkerboard_statistic(noise) < 20 * 3 / noise.size


def test_bicubic_decoder_has_no_checkerboard(desk_model, noisy_batch):
    # untrained decoder output; transposed convolutions would score well above the white-noise floor
    y = A.denoise_batch(desk_model, noisy_batch)[0]
    assert A.checkerboard_statistic(y[:64, :64]) < 0.01


def test_latent_wavelet_shrink_changes_latent():
    z = T.Tensor(np.random.default_rng(0).standard_normal((1, 2, 8, 8)).astype(np.float32))
    assert not np.allclose(latent_wavelet_layer(z, 2, 0.5).data, z.data)
