"""Fourier-discrepancy frequency selection.

Model outputs are Fourier-analysed along the projection ``z``. Complex
coefficients of clean and perturbed batches are tracked with an exponential
moving average; their per-frequency discrepancy defines the multinomial from
which head frequencies are drawn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ShapeError, StateError
from .phase_model import FrequencyAssignment, PhaseModel, phase_forward, project


@dataclass(frozen=True)
class FrequencyState:
    k_max: int = 64
    beta: float = 0.9
    ema_clean: np.ndarray | None = None  # (k_max, n_classes) complex
    ema_adv: np.ndarray | None = None
    discrepancy: np.ndarray | None = None  # (k_max,)

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")
        if self.discrepancy is not None:
            if self.discrepancy.shape != (self.k_max,):
                raise ShapeError("discrepancy vector must have length k_max")
            if np.any(self.discrepancy < 0):
                raise ValueError("discrepancy must be non-negative")

    @property
    def d(self) -> np.ndarray:
        if self.discrepancy is None:
            return np.zeros(self.k_max)
        return self.discrepancy

    def probabilities(self) -> np.ndarray:
        """Sampling distribution over ``[0, k_max)``; uniform if all d vanish."""
        d = self.d
        total = d.sum()
        if not total > 0 or not np.isfinite(total):
            return np.full(self.k_max, 1.0 / self.k_max)
        return d / total


def fourier_coefficient(outputs, zs, k: int) -> np.ndarray:
    """``sum_j outputs_j * exp(-2 pi i k z_j)``, one complex value per class."""
    O = np.asarray(outputs, dtype=np.float64)
    z = np.asarray(zs, dtype=np.float64).ravel()
    if len(O) == 0 or len(O) != len(z):
        raise ShapeError("outputs and projections need the same non-zero batch length")
    phase = np.exp(-2j * np.pi * k * z)
    if O.ndim == 1:
        return np.sum(O * phase)
    return phase @ O


def fourier_coefficients(outputs, zs, k_max: int) -> np.ndarray:
    """Coefficients for every ``k < k_max`` as a ``(k_max, n_classes)`` array."""
    O = np.asarray(outputs, dtype=np.float64)
    z = np.asarray(zs, dtype=np.float64).ravel()
    if len(O) == 0 or len(O) != len(z):
        raise ShapeError("outputs and projections need the same non-zero batch length")
    if O.ndim == 1:
        O = O[:, None]
    basis = np.exp(-2j * np.pi * np.outer(np.arange(k_max), z))
    return basis @ O


def discrepancy_from(ema_clean: np.ndarray, ema_adv: np.ndarray) -> np.ndarray:
    return np.abs(ema_clean - ema_adv).sum(axis=1)


def update_discrepancy(
    state: FrequencyState,
    clean_batch,
    adv_batch,
    model: PhaseModel,
    freqs,
) -> FrequencyState:
    """EMA-update both coefficient tracks and recompute ``d``.

    The first update seeds the averages with the batch coefficients.
    """
    if model.projection is None:
        raise StateError("frequency selection needs a projection spec")
    X = np.asarray(clean_batch, dtype=np.float64)
    Xa = np.asarray(adv_batch, dtype=np.float64)
    if X.shape != Xa.shape:
        raise ShapeError("clean and adversarial batches must align")
    f_clean = fourier_coefficients(
        phase_forward(model, freqs, X), project(X, model.projection), state.k_max
    )
    f_adv = fourier_coefficients(
        phase_forward(model, freqs, Xa), project(Xa, model.projection), state.k_max
    )
    if state.ema_clean is None:
        ema_c, ema_a = f_clean, f_adv
    else:
        b = state.beta
        ema_c = b * state.ema_clean + (1.0 - b) * f_clean
        ema_a = b * state.ema_adv + (1.0 - b) * f_adv
    return replace(
        state, ema_clean=ema_c, ema_adv=ema_a, discrepancy=discrepancy_from(ema_c, ema_a)
    )


def sample_frequencies(
    state: FrequencyState, n_heads: int, rng: np.random.Generator
) -> FrequencyAssignment:
    """Head 0 gets frequency 0; the others are i.i.d. multinomial draws."""
    if n_heads < 1:
        raise ValueError("need at least one head")
    draws = rng.choice(state.k_max, size=n_heads - 1, p=state.probabilities())
    return FrequencyAssignment((0, *map(int, draws)), k_max=state.k_max)


def sample_frequency_matrix(
    state: FrequencyState, n_heads: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """``n`` independent assignments as an ``(n, n_heads)`` integer array."""
    out = np.zeros((n, n_heads), dtype=np.int64)
    if n_heads > 1:
        out[:, 1:] = rng.choice(state.k_max, size=(n, n_heads - 1), p=state.probabilities())
    return out


def write_discrepancy_csv(path, rows) -> None:
    """Write discrepancy vectors, one row per ``(label, d)`` pair, column per k."""
    rows = list(rows)
    if not rows:
        return
    k_max = len(rows[0][1])
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step"] + [f"k{k}" for k in range(k_max)])
        for label, d in rows:
            w.writerow([label] + [repr(float(v)) for v in d])
