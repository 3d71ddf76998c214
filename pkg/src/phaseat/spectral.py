"""Low/high frequency split of labels and outputs with a Gaussian kernel.

The low part at each point is the kernel-weighted average of the values at
all points; the high part is what remains. Convergence is then measured as
relative errors between the label and model-output components.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class FilterConfig:
    variance: float = 3.0
    max_points: int = 2048
    seed: int = 0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("filter variance must be positive")
        if self.max_points < 2:
            raise ValueError("subsample cap must be at least 2")


@dataclass(frozen=True)
class SpectrumReport:
    e_low: float  # nan when the label low part is identically zero
    e_high: float
    low_defined: bool
    high_defined: bool
    indices: np.ndarray | None = None
    y_low: np.ndarray | None = None
    y_high: np.ndarray | None = None
    out_low: np.ndarray | None = None
    out_high: np.ndarray | None = None


def _as_2d(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v.reshape(len(v), -1)


class LowPassFilter:
    """Row-normalised Gaussian kernel over a fixed point set, built once."""

    def __init__(self, points, variance: float = 3.0):
        P = _as_2d(points)
        if len(P) < 1:
            raise ValueError("need at least one point")
        K = np.exp(-cdist(P, P, "sqeuclidean") / (2.0 * variance))
        self.weights = K / K.sum(axis=1, keepdims=True)

    def __call__(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if len(v) != len(self.weights):
            raise ValueError("values and points differ in length")
        return self.weights @ v


def gaussian_low_pass(points, values, cfg: FilterConfig = FilterConfig()) -> np.ndarray:
    """Kernel-weighted average ``sum_m v_m G(x_j - x_m) / sum_m G(x_j - x_m)``."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) != len(_as_2d(points)):
        raise ValueError("points and values differ in length")
    return LowPassFilter(points, cfg.variance)(values)


def relative_error(target: np.ndarray, approx: np.ndarray) -> float:
    den = float(np.sum(target**2))
    if den == 0.0:
        return float("nan")
    return float(np.sqrt(np.sum((target - approx) ** 2) / den))


def subsample_indices(n: int, cfg: FilterConfig) -> np.ndarray:
    if n <= cfg.max_points:
        return np.arange(n)
    rng = np.random.default_rng(cfg.seed)
    return np.sort(rng.choice(n, size=cfg.max_points, replace=False))


class SpectralProbe:
    """Reusable e_low/e_high evaluator for a fixed dataset."""

    def __init__(self, x, targets, cfg: FilterConfig = FilterConfig()):
        x = _as_2d(x)
        self.cfg = cfg
        self.indices = subsample_indices(len(x), cfg)
        self.x = x[self.indices]
        self.filter = LowPassFilter(self.x, cfg.variance)
        self.y = _as_2d(targets)[self.indices]
        self.y_low = self.filter(self.y)
        self.y_high = self.y - self.y_low

    def report(self, outputs, keep_components: bool = False) -> SpectrumReport:
        out = _as_2d(outputs)
        if len(out) != len(self.y):
            out = out[self.indices]
        out_low = self.filter(out)
        out_high = out - out_low
        e_low = relative_error(self.y_low, out_low)
        e_high = relative_error(self.y_high, out_high)
        extra = {}
        if keep_components:
            extra = dict(
                indices=self.indices, y_low=self.y_low, y_high=self.y_high,
                out_low=out_low, out_high=out_high,
            )
        return SpectrumReport(e_low, e_high, not np.isnan(e_low), not np.isnan(e_high), **extra)

    @property
    def labels(self) -> np.ndarray:
        """Class indices of the (subsampled) one-hot targets."""
        return np.argmax(self.y, axis=1)

    def evaluate(
        self, model_fn: Callable[[np.ndarray], np.ndarray], inputs=None, **kw
    ) -> SpectrumReport:
        """Errors of ``model_fn``; ``inputs`` replaces the probe points as model input.

        The filter always runs over the probe points, so perturbed ``inputs``
        (aligned with ``self.x``) measure the outputs on attacked data against
        the clean label decomposition.
        """
        x = self.x if inputs is None else _as_2d(inputs)
        if len(x) != len(self.x):
            raise ValueError("inputs must align with the probe points")
        return self.report(model_fn(x), **kw)


def frequency_errors(
    model_fn: Callable[[np.ndarray], np.ndarray],
    x,
    targets,
    cfg: FilterConfig = FilterConfig(),
    keep_components: bool = False,
) -> SpectrumReport:
    """Relative low- and high-frequency errors of ``model_fn`` against ``targets``.

    ``model_fn`` maps inputs to outputs on the label scale (softmax
    probabilities for one-hot labels).
    """
    return SpectralProbe(x, targets, cfg).evaluate(model_fn, keep_components=keep_components)


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def write_components_csv(path, report: SpectrumReport, x) -> None:
    """Per-point dump of label/output low and high parts (first channel of x)."""
    if report.y_low is None:
        raise ValueError("report was built without components")
    x = _as_2d(x)[report.indices]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        C = report.y_low.shape[1]
        header = ["index", "x0"]
        for name in ("y_low", "y_high", "out_low", "out_high"):
            header += [f"{name}_{c}" for c in range(C)]
        w.writerow(header)
        for r, idx in enumerate(report.indices):
            row = [int(idx), repr(float(x[r, 0]))]
            for arr in (report.y_low, report.y_high, report.out_low, report.out_high):
                row += [repr(float(v)) for v in arr[r]]
            w.writerow(row)
