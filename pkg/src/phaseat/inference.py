"""Prediction under the three inference modes."""

from __future__ import annotations

import numpy as np

from .freq_select import FrequencyState, sample_frequencies
from .phase_model import FrequencyAssignment, PhaseModel, base_forward, phase_forward

MODES = ("sampled", "zero", "fixed-seed")
DEFAULT_INFERENCE_SEED = 20240


def inference_frequencies(
    model: PhaseModel,
    state: FrequencyState | None,
    mode: str,
    rng: np.random.Generator | None = None,
    seed: int = DEFAULT_INFERENCE_SEED,
) -> FrequencyAssignment:
    """The single assignment a call in ``mode`` evaluates the model with."""
    if mode not in MODES:
        raise ValueError(f"unknown inference mode {mode!r}")
    if mode == "zero" or model.n_heads == 1:
        return FrequencyAssignment.zeros(model.n_heads)
    if state is None:
        raise ValueError("sampled inference needs a FrequencyState")
    if mode == "fixed-seed":
        rng = np.random.default_rng(seed)
    elif rng is None:
        rng = np.random.default_rng()
    return sample_frequencies(state, model.n_heads, rng)


def predict_logits(model, state, x, mode="fixed-seed", rng=None, seed=DEFAULT_INFERENCE_SEED):
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if mode == "zero":
        return base_forward(model, X)
    freqs = inference_frequencies(model, state, mode, rng, seed)
    return phase_forward(model, freqs, X)


def inference(model, state, x, mode="fixed-seed", rng=None, seed=DEFAULT_INFERENCE_SEED):
    """Predicted class per row of ``x``.

    ``sampled`` draws one assignment from ``state`` using ``rng``;
    ``fixed-seed`` draws it from a freshly seeded generator, so repeated calls
    agree; ``zero`` evaluates every head at frequency 0.
    """
    x = np.asarray(x, dtype=np.float64)
    pred = np.argmax(predict_logits(model, state, x, mode, rng, seed), axis=1)
    return int(pred[0]) if x.ndim == 1 else pred


def accuracy(model, state, x, y, mode="fixed-seed", seed=DEFAULT_INFERENCE_SEED) -> float:
    return float(np.mean(inference(model, state, x, mode, seed=seed) == np.asarray(y)))
