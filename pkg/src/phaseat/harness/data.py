"""Desk-scale datasets: sine-mix, concentric rings and CIFAR-style binary records."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError

KINDS = ("sine-mix", "rings", "image-binary")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "rings"
    n: int = 1000
    dim: int = 2
    noise: float = 0.0
    seed: int = 0
    path: str | None = None
    frequencies: tuple[float, ...] = (1.0, 3.0, 5.0)
    task: str = "classification"  # or "regression" (sine-mix only)
    image_shape: tuple[int, int, int] = (32, 32, 3)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind != "image-binary" and self.n < 2:
            raise ValueError("need at least 2 samples")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "rings" and self.dim != 2:
            raise ValueError("rings are two-dimensional")
        if self.kind == "image-binary":
            if not self.path:
                raise ValueError("image-binary datasets need a file path")
            if self.task != "classification":
                raise ValueError("image-binary data is labelled")
        if self.kind == "sine-mix" and not self.frequencies:
            raise ValueError("sine-mix needs at least one frequency")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray  # int labels, or float targets for regression
    n_classes: int
    input_range: tuple[float, float]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)

    def split(self, test_fraction: float, rng: np.random.Generator):
        n_test = int(round(len(self) * test_fraction))
        perm = rng.permutation(len(self))
        te, tr = perm[:n_test], perm[n_test:]
        sub = lambda idx: Dataset(self.x[idx], self.y[idx], self.n_classes, self.input_range, self.meta)
        return sub(tr), sub(te)


def sine_mix_target(x, frequencies, direction=None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if direction is None:
        direction = np.ones(x.shape[1]) / np.sqrt(x.shape[1])
    t = x @ direction
    return sum(np.sin(2 * np.pi * f * t) for f in frequencies)


def _sine_mix(spec: DatasetSpec, rng) -> Dataset:
    x = rng.uniform(-1.0, 1.0, size=(spec.n, spec.dim))
    g = sine_mix_target(x, spec.frequencies)
    if spec.noise:
        g = g + spec.noise * rng.standard_normal(spec.n)
    if spec.task == "regression":
        return Dataset(x, g, 0, (-1.0, 1.0), {"kind": "sine-mix"})
    return Dataset(x, (g > 0).astype(np.int64), 2, (-1.0, 1.0), {"kind": "sine-mix"})


def _rings(spec: DatasetSpec, rng) -> Dataset:
    # inner annulus r in [0.10, 0.22], outer in [0.28, 0.40], centred in the unit square
    y = rng.permutation(np.arange(spec.n) % 2)
    lo = np.where(y == 0, 0.10, 0.28)
    r = lo + 0.12 * rng.uniform(size=spec.n)
    theta = rng.uniform(0, 2 * np.pi, size=spec.n)
    x = 0.5 + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    if spec.noise:
        x = x + spec.noise * rng.standard_normal(x.shape)
    return Dataset(np.clip(x, 0.0, 1.0), y.astype(np.int64), 2, (0.0, 1.0), {"kind": "rings"})


def read_image_binary(path, image_shape=(32, 32, 3)) -> tuple[np.ndarray, np.ndarray]:
    """Parse label-first records of ``1 + H*W*C`` bytes, pixels scaled to [0, 1]."""
    raw = np.fromfile(Path(path), dtype=np.uint8)
    rec = 1 + int(np.prod(image_shape))
    if raw.size == 0 or raw.size % rec:
        raise FormatError(f"file length {raw.size} is not a multiple of the {rec}-byte record")
    records = raw.reshape(-1, rec)
    return records[:, 1:].astype(np.float64) / 255.0, records[:, 0].astype(np.int64)


def write_image_binary(path, images, labels) -> None:
    imgs = np.clip(np.round(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    imgs = imgs.reshape(len(imgs), -1)
    lab = np.asarray(labels, dtype=np.uint8)[:, None]
    np.concatenate([lab, imgs], axis=1).tofile(Path(path))


def gen_dataset(spec: DatasetSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "sine-mix":
        return _sine_mix(spec, rng)
    if spec.kind == "rings":
        return _rings(spec, rng)
    x, y = read_image_binary(spec.path, spec.image_shape)
    if spec.n and spec.n < len(x):
        x, y = x[: spec.n], y[: spec.n]
    return Dataset(x, y, max(10, int(y.max()) + 1), (0.0, 1.0), {"kind": "image-binary"})


def save_npz(path, ds: Dataset) -> None:
    np.savez(path, x=ds.x, y=ds.y, n_classes=ds.n_classes, input_range=np.array(ds.input_range))


def load_npz(path) -> Dataset:
    with np.load(path) as f:
        return Dataset(f["x"], f["y"], int(f["n_classes"]), tuple(f["input_range"].tolist()))
