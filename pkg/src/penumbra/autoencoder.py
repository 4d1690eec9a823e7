"""Unsupervised wavelet-latent convolutional autoencoder.

Encoder: six 5x5 conv stages, three of them stride 2 (256 -> 32), leaky
ReLU, dropout on the last four. Latent: optional per-channel affine
correction (penumbral mode) followed by a CDF 9/7 roundtrip with optional
detail shrinkage. Decoder: seven 5x5 conv stages, batchnorm on the first
two, bicubic x2 upsampling before each of the last three, sigmoid output.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import zoom

from . import tensor as T
from .grid import ImageGrid
from .wavelet import latent_wavelet_layer

log = logging.getLogger(__name__)

SCHEDULES = {
    # channel plan following the "maintain the feature maps" reading
    "standard": {
        "enc_channels": (16, 32, 64, 64, 64, 64),
        "dec_channels": (64, 64, 64, 64, 32, 16, 1),
    },
    # roughly 10x cheaper per step; used for single-core benchmark runs
    "desk": {
        "enc_channels": (8, 8, 16, 16, 16, 16),
        "dec_channels": (16, 16, 16, 16, 8, 4, 1),
    },
    # smoke tests of the command chain
    "tiny": {
        "enc_channels": (2, 2, 2, 2, 2, 2),
        "dec_channels": (2, 2, 2, 2, 2, 2, 1),
    },
}

CHECKPOINT_MAGIC = b"PNAE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Layer schedule. Stage indices below are 1-based."""

    input_size: int = 256
    schedule: str = "standard"
    enc_channels: tuple = SCHEDULES["standard"]["enc_channels"]
    enc_strides: tuple = (2, 2, 1, 2, 1, 1)
    dec_channels: tuple = SCHEDULES["standard"]["dec_channels"]
    kernel: int = 5
    pad: int = 2
    slope: float = 0.01
    dropout: float = 0.2
    dropout_after: tuple = (3, 4, 5, 6)
    batchnorm_stages: tuple = (1, 2)
    upsample_before: tuple = (5, 6, 7)
    mode: str = "pinhole"
    levels: int = 2
    shrink: float = 0.0

    @classmethod
    def named(cls, schedule: str, **overrides) -> "ArchitectureConfig":
        if schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {schedule!r}; choose from {sorted(SCHEDULES)}")
        return cls(schedule=schedule, **{**SCHEDULES[schedule], **overrides})

    @property
    def use_linear(self) -> bool:
        return self.mode == "penumbral"

    @property
    def latent_size(self) -> int:
        return self.input_size // int(np.prod(self.enc_strides))

    def validate(self) -> None:
        if self.mode not in ("pinhole", "penumbral"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.enc_channels) != len(self.enc_strides):
            raise ValueError("encoder channel plan and stride schedule differ in length")
        if min(self.enc_channels + self.dec_channels, default=0) < 1:
            raise ValueError("inconsistent channel plan: every stage needs at least one channel")
        if self.dec_channels[-1] != 1:
            raise ValueError("decoder must end with a single output channel")
        down = int(np.prod(self.enc_strides))
        if self.input_size % down:
            raise ValueError(f"input size {self.input_size} not divisible by encoder reduction {down}")
        if self.latent_size * 2 ** len(self.upsample_before) != self.input_size:
            raise ValueError(
                f"decoder restores {self.latent_size} -> {self.latent_size * 2 ** len(self.upsample_before)}, "
                f"not {self.input_size}"
            )
        if self.latent_size % (2**self.levels):
            raise ValueError(f"latent extent {self.latent_size} not divisible by 2**{self.levels}")
        if self.kernel > self.latent_size + 2 * self.pad:
            raise ValueError("kernel larger than padded latent extent")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.shrink < 0:
            raise ValueError("shrink must be >= 0")

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(i) for i in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureConfig":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        fields = {}
        for name, default in asdict(cls()).items():
            if name not in kv:
                continue
            raw = kv[name]
            if isinstance(default, tuple):
                fields[name] = tuple(int(x) for x in raw.split(",")) if raw else ()
            elif isinstance(default, float):
                fields[name] = float(raw)
            elif isinstance(default, int):
                fields[name] = int(raw)
            else:
                fields[name] = raw
        return cls(**fields)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_fraction: float = 0.10
    batch_size: Optional[int] = None  # explicit override of the fraction
    shuffle: bool = True
    beta: float = 1.0  # smooth-L1 transition point, in normalised units
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch fraction must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return max(1, int(math.floor(self.batch_fraction * n + 1e-9)))


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, grad_norms: dict, cause: str):
        self.epoch, self.batch, self.grad_norms = epoch, batch, grad_norms
        worst = sorted(grad_norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} ({cause}); largest grad norms {worst}")


@dataclass
class AutoencoderModel:
    arch: ArchitectureConfig
    params: dict  # name -> Tensor, declaration order
    bn: dict  # stage name -> BatchNormState
    seed: int = 0
    history: list = field(default_factory=list)

    def parameters(self) -> list:
        return list(self.params.values())

    def state_arrays(self) -> list:
        """(name, array) in checkpoint order: parameters then running statistics."""
        out = [(k, p.data) for k, p in self.params.items()]
        for k, st in self.bn.items():
            out.append((f"{k}.running_mean", st.running_mean))
            out.append((f"{k}.running_var", st.running_var))
        return out

    def forward(self, x: T.Tensor, training: bool = False, rng=None) -> T.Tensor:
        return decode(self, latent_transform(self, encode(self, x, training, rng)), training)


def _kaiming(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build(config: ArchitectureConfig, seed: int = 0) -> AutoencoderModel:
    """Fresh model: Kaiming-uniform (fan-in) weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    k = config.kernel
    params = {}
    bn = {}
    cin = 1
    for i, cout in enumerate(config.enc_channels, 1):
        params[f"enc{i}.w"] = T.Tensor(_kaiming(rng, (cout, cin, k, k), cin * k * k), True, f"enc{i}.w")
        params[f"enc{i}.b"] = T.Tensor(np.zeros(cout), True, f"enc{i}.b")
        cin = cout
    if config.use_linear:
        c = cin
        for name in ("lin1", "lin2"):
            params[f"{name}.w"] = T.Tensor(_kaiming(rng, (c, c), c), True, f"{name}.w")
            params[f"{name}.b"] = T.Tensor(np.zeros(c), True, f"{name}.b")
    for i, cout in enumerate(config.dec_channels, 1):
        params[f"dec{i}.w"] = T.Tensor(_kaiming(rng, (cout, cin, k, k), cin * k * k), True, f"dec{i}.w")
        params[f"dec{i}.b"] = T.Tensor(np.zeros(cout), True, f"dec{i}.b")
        if i in config.batchnorm_stages:
            params[f"dec{i}.gamma"] = T.Tensor(np.ones(cout), True, f"dec{i}.gamma")
            params[f"dec{i}.beta"] = T.Tensor(np.zeros(cout), True, f"dec{i}.beta")
            bn[f"dec{i}"] = T.BatchNormState(cout)
        cin = cout
    return AutoencoderModel(config, params, bn, seed)


def encode(model: AutoencoderModel, x: T.Tensor, training: bool = False, rng=None) -> T.Tensor:
    a = model.arch
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (a.input_size, a.input_size):
        raise ValueError(f"encoder expects (B, 1, {a.input_size}, {a.input_size}), got {x.shape}")
    h = x
    for i, s in enumerate(a.enc_strides, 1):
        h = T.conv2d(h, model.params[f"enc{i}.w"], model.params[f"enc{i}.b"], stride=s, pad=a.pad)
        h = T.leaky_relu(h, a.slope)
        if i in a.dropout_after:
            h = T.dropout(h, a.dropout, training, rng)
    return h


def latent_transform(model: AutoencoderModel, z: T.Tensor) -> T.Tensor:
    """Penumbral mode adds ``W'(W gap(z) + b) + b'`` per channel, then the wavelet roundtrip."""
    a = model.arch
    if a.use_linear:
        b, c = z.shape[:2]
        y = T.reshape(T.global_avg_pool(z), (b, c))
        y = T.linear(y, model.params["lin1.w"], model.params["lin1.b"])
        y = T.linear(y, model.params["lin2.w"], model.params["lin2.b"])
        z = T.add(z, T.reshape(y, (b, c, 1, 1)))
    return latent_wavelet_layer(z, a.levels, a.shrink)


def decode(model: AutoencoderModel, z: T.Tensor, training: bool = False) -> T.Tensor:
    a = model.arch
    h = z
    n = len(a.dec_channels)
    for i in range(1, n + 1):
        if i in a.upsample_before:
            h = T.upsample_bicubic(h, 2)
        h = T.conv2d(h, model.params[f"dec{i}.w"], model.params[f"dec{i}.b"], stride=1, pad=a.pad)
        if i in a.batchnorm_stages:
            h = T.batchnorm2d(
                h, model.params[f"dec{i}.gamma"], model.params[f"dec{i}.beta"], model.bn[f"dec{i}"], training
            )
        h = T.sigmoid(h) if i == n else T.leaky_relu(h, a.slope)
    return h


def normalise(images: np.ndarray):
    """Scale each image to peak 1; returns ``(scaled, peaks)``. Non-positive peaks are left as 1."""
    x = np.asarray(images, dtype=np.float32)
    peaks = x.reshape(x.shape[0], -1).max(axis=1)
    peaks = np.where(peaks > 0, peaks, 1.0).astype(np.float32)
    return x / peaks[:, None, None], peaks


def _grad_norms(model):
    return {k: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0 for k, p in model.params.items()}


def train_step(model, opt, batch: np.ndarray, cfg: TrainingConfig, rng) -> float:
    x = T.Tensor(batch[:, None])
    with T.Tape() as tape:
        y = model.forward(x, training=True, rng=rng)
        loss = T.smooth_l1(y, x, cfg.beta)
    opt.zero_grad()
    tape.backward(loss)
    opt.step()
    return loss.item()


def train(model: AutoencoderModel, dataset, cfg: TrainingConfig = TrainingConfig(), progress=None):
    """Fit the model to reproduce its (noisy) inputs.

    ``dataset`` is an array of shape (N, H, W) or a sequence of images; it is
    never paired with ground truth. Returns ``(model, loss_history)`` with
    one mean loss per epoch.
    """
    data = np.stack([np.asarray(im, dtype=np.float32) for im in dataset]) if not isinstance(dataset, np.ndarray) else dataset
    if data.ndim != 3 or len(data) == 0:
        raise ValueError("training needs a non-empty (N, H, W) image stack")
    data, _ = normalise(data)
    n = len(data)
    bs = cfg.resolved_batch_size(n)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = T.Adam(model.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses = []
        for bi, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            try:
                val = train_step(model, opt, data[idx], cfg, rng)
            except T.NonFiniteError as exc:
                raise TrainingDiverged(epoch, bi, _grad_norms(model), str(exc)) from exc
            if not math.isfinite(val):
                raise TrainingDiverged(epoch, bi, _grad_norms(model), "loss")
            losses.append(val)
        history.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.6g", epoch + 1, cfg.epochs, history[-1])
        if progress is not None:
            progress(epoch, history[-1])
    model.history = list(history)
    return model, history


def _resample(img: np.ndarray, shape) -> np.ndarray:
    h, w = (shape, shape) if np.isscalar(shape) else shape
    return zoom(img, (h / img.shape[0], w / img.shape[1]), order=3, mode="nearest", grid_mode=True)


def denoise_batch(model: AutoencoderModel, images: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Inference on an (N, S, S) stack at the model's input size, rescaled to each input's peak."""
    x, peaks = normalise(images)
    out = np.empty_like(x)
    for s in range(0, len(x), chunk):
        y = model.forward(T.Tensor(x[s : s + chunk, None]), training=False)
        out[s : s + chunk] = y.data[:, 0]
    return out * peaks[:, None, None]


def denoise(model: AutoencoderModel, image) -> ImageGrid:
    """Denoise one image. Other sizes are resampled to the model input and back."""
    arr = np.asarray(image, dtype=np.float32)
    size = model.arch.input_size
    resized = arr.shape != (size, size)
    work = _resample(arr, size) if resized else arr
    out = denoise_batch(model, work[None])[0]
    if resized:
        out = _resample(out, arr.shape)
    meta = dict(getattr(image, "meta", {}), denoised_by="autoencoder")
    return ImageGrid(out, meta)


def checkerboard_statistic(patch) -> float:
    """Share of non-DC power at the period-2 frequencies (pi,0), (0,pi), (pi,pi).

    White noise scores about 3/N for an N-pixel patch, a pure checkerboard 1.
    """
    p = np.asarray(patch, dtype=np.float64)
    h, w = p.shape
    p = p[: h - h % 2, : w - w % 2]
    h, w = p.shape
    power = np.abs(np.fft.fft2(p - p.mean())) ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    nyq = power[h // 2, 0] + power[0, w // 2] + power[h // 2, w // 2]
    return float(nyq / total)


# ---------------------------------------------------------------- checkpoints

_HEAD = struct.Struct("<4sHI")


def save_checkpoint(model: AutoencoderModel, path) -> Path:
    """Write header (magic, version, key=value text) then LE float32 blobs."""
    path = Path(path)
    arrays = model.state_arrays()
    lines = [model.arch.to_text(), f"seed={model.seed}", f"tensors={len(arrays)}"]
    for name, arr in arrays:
        lines.append(f"tensor.{name}=" + "x".join(str(d) for d in arr.shape))
    text = "\n".join(lines).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text)))
        fh.write(text)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> AutoencoderModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise ValueError(f"{path}: checkpoint truncated in header ({len(raw)} bytes)")
    magic, version, hlen = _HEAD.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r} at offset 0")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    text = raw[_HEAD.size : _HEAD.size + hlen].decode("utf-8")
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    arch = ArchitectureConfig.from_text(text)
    model = build(arch, int(kv.get("seed", 0)))
    offset = _HEAD.size + hlen
    expected = [(name, arr.shape) for name, arr in model.state_arrays()]
    for name, shape in expected:
        stored = kv.get(f"tensor.{name}")
        if stored is None or tuple(int(d) for d in stored.split("x") if d) != tuple(shape):
            raise ValueError(f"{path}: tensor {name} missing or shaped {stored}, expected {shape}")
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated at byte {offset} reading {name}; file has {len(raw)} bytes")
        arr = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape)
        offset += nbytes
        if name.endswith(".running_mean") or name.endswith(".running_var"):
            stage, attr = name.rsplit(".", 1)
            getattr(model.bn[stage], attr)[...] = arr
        else:
            model.params[name].data = arr.astype(np.float32).copy()
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after parameters")
    return model


def truncated_config(size: int = 32, **overrides) -> ArchitectureConfig:
    """Tiny variant of the schedule used for end-to-end gradient checks."""
    base = dict(input_size=size, enc_channels=(2, 2, 2, 2, 2, 2), dec_channels=(2, 2, 2, 2, 2, 2, 1), schedule="truncated")
    base.update(overrides)
    return ArchitectureConfig(**base)


__all__ = [
    "ArchitectureConfig",
    "TrainingConfig",
    "AutoencoderModel",
    "TrainingDiverged",
    "build",
    "encode",
    "latent_transform",
    "decode",
    "train",
    "denoise",
    "denoise_batch",
    "save_checkpoint",
    "load_checkpoint",
    "checkerboard_statistic",
    "truncated_config",
]
