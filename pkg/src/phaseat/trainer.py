"""Phase-shifted adversarial training loops and the standard-AT baseline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import attacks
from .attacks import AttackConfig
from .freq_select import FrequencyState, sample_frequencies, update_discrepancy
from .inference import DEFAULT_INFERENCE_SEED, accuracy, inference, predict_logits  # noqa: F401
from .nn import cross_entropy, softmax
from .phase_model import (
    FrequencyAssignment,
    PhaseModel,
    PhaseGradients,
    apply_sgd,
    compute_first_pc,
    init_phase_model,
    phase_backward,
    phase_forward,
)
from .spectral import FilterConfig, SpectralProbe, one_hot

VARIANTS = ("phaseat", "phaseat_iterative", "standard_at", "clean")
STREAMS = {"init": 0, "data": 1, "attack": 2, "frequency": 3, "eval": 4, "split": 5}


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def rng_streams(seed: int, eval_seed: int | None = None) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one experiment seed.

    The eval stream can be re-seeded without touching the training streams.
    """
    out = {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))
        for name, key in STREAMS.items()
    }
    if eval_seed is not None:
        out["eval"] = np.random.default_rng(
            np.random.SeedSequence(eval_seed, spawn_key=(STREAMS["eval"],))
        )
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    attack: AttackConfig = field(default_factory=AttackConfig)
    n_heads: int = 3
    k_max: int = 64
    beta: float = 0.9
    scale_C: float = 1.0
    seed: int = 0
    variant: str = "phaseat"
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    pc_iters: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("epochs", "batch_size", "n_heads", "k_max", "pc_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not self.scale_C > 0:
            raise ValueError("scale_C must be positive")
        if any(h < 1 for h in self.hidden) or not self.hidden:
            raise ValueError("hidden widths must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    clean_acc: float = float("nan")
    robust_acc: float = float("nan")
    e_low: float = float("nan")
    e_high: float = float("nan")
    freq_hist: np.ndarray | None = None
    reg_mean: float = float("nan")
    test_clean_acc: float = float("nan")
    test_robust_acc: float = float("nan")
    test_e_low: float = float("nan")
    test_e_high: float = float("nan")


@dataclass
class TrainResult:
    model: PhaseModel
    state: FrequencyState | None
    metrics: list[EpochMetrics]
    # per batch: (epoch, batch, omegas, min/mean/max regulariser)
    reg_log: list[tuple] = field(default_factory=list)

    def __iter__(self):
        yield self.model
        yield self.metrics


# ---------------------------------------------------------------------------
# objective


def _cosine_and_grads(a: np.ndarray, b: np.ndarray):
    """Row-wise cosine similarity and its gradients with respect to a and b."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    dot = np.sum(a * b, axis=1, keepdims=True)
    cos = dot / (na * nb)
    ga = b / (na * nb) - cos * a / na**2
    gb = a / (na * nb) - cos * b / nb**2
    return cos[:, 0], ga, gb


def _softmax_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    return p * (g - np.sum(g * p, axis=1, keepdims=True))


def adv_loss_and_grad(
    model: PhaseModel, freqs, x_adv, y, regularize: bool = True
) -> tuple[float, PhaseGradients, np.ndarray]:
    """Batch mean of cross-entropy on ``T`` plus ``|cos(softmax T, softmax T_0)|``.

    Returns the loss, its parameter gradients (including the path through
    ``T_0``, which shares parameters with ``T``) and the per-sample
    regulariser values.
    """
    x_adv = np.atleast_2d(np.asarray(x_adv, dtype=np.float64))
    y = np.atleast_1d(y)
    B = len(x_adv)
    logits, trace = phase_forward(model, freqs, x_adv, return_trace=True)
    ce, g_logits = cross_entropy(logits, y, reduction="mean")
    if not regularize:
        grads, _ = phase_backward(model, trace, g_logits)
        return ce, grads, np.full(B, np.nan)

    zeros = FrequencyAssignment.zeros(model.n_heads)
    logits0, trace0 = phase_forward(model, zeros, x_adv, return_trace=True)
    p, p0 = softmax(logits), softmax(logits0)
    cos, ga, gb = _cosine_and_grads(p, p0)
    sgn = np.sign(cos)[:, None]
    reg = np.abs(cos)
    g_logits = g_logits + _softmax_backward(p, sgn * ga) / B
    g_logits0 = _softmax_backward(p0, sgn * gb) / B
    grads, _ = phase_backward(model, trace, g_logits)
    grads0, _ = phase_backward(model, trace0, g_logits0)
    # |cos| <= 1 analytically; absorb round-off above 1 but let real excess through
    reg = np.where((reg > 1.0) & (reg <= 1.0 + 1e-12), 1.0, reg)
    return ce + float(reg.mean()), grads + grads0, reg


def adv_loss(model: PhaseModel, freqs, x_adv, y) -> float:
    return adv_loss_and_grad(model, freqs, x_adv, y)[0]


# ---------------------------------------------------------------------------
# monitoring


@dataclass
class Monitor:
    """Per-epoch metric evaluation.

    ``robust_attack`` is run on ``eval_x`` (or the training data) each
    ``every`` epochs; spectral errors use the training set.
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    eval_x: np.ndarray | None = None
    eval_y: np.ndarray | None = None
    robust_attack: AttackConfig | None = None
    spectral: FilterConfig | None = None
    spectral_mode: str = "zero"
    inference_mode: str = "fixed-seed"
    inference_seed: int = DEFAULT_INFERENCE_SEED
    every: int = 1
    include_initial: bool = False
    robust_epochs: tuple[int, ...] | None = None
    spectral_attack: AttackConfig | None = None  # measure e_low/e_high on attacked inputs
    _probe: SpectralProbe | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.spectral is not None:
            self._probe = SpectralProbe(self.x, one_hot(self.y, self.n_classes), self.spectral)

    def spectrum(self, model: PhaseModel, state: FrequencyState | None):
        def fn(x):
            return softmax(
                predict_logits(model, state, x, self.spectral_mode, seed=self.inference_seed)
            )

        inputs = None
        if self.spectral_attack is not None:
            inputs = attacks.adversarial_inputs(
                model, state, self._probe.x, self._probe.labels, self.spectral_attack
            )
        return self._probe.evaluate(fn, inputs)

    def __call__(self, m: EpochMetrics, model: PhaseModel, state: FrequencyState | None):
        if m.epoch % self.every and m.epoch != 0:
            return m
        m.clean_acc = accuracy(model, state, self.x, self.y, self.inference_mode, self.inference_seed)
        if self.eval_x is not None:
            m.test_clean_acc = accuracy(
                model, state, self.eval_x, self.eval_y, self.inference_mode, self.inference_seed
            )
        if self.robust_attack is not None and (
            self.robust_epochs is None or m.epoch in self.robust_epochs
        ):
            ex, ey = (self.eval_x, self.eval_y) if self.eval_x is not None else (self.x, self.y)
            m.robust_acc, _ = attacks.evaluate_robust_accuracy(
                model, state, ex, ey, self.robust_attack, self.inference_mode, self.inference_seed
            )
        if self._probe is not None:
            rep = self.spectrum(model, state)
            m.e_low, m.e_high = rep.e_low, rep.e_high
        return m


# ---------------------------------------------------------------------------
# training loops


def _perturb(model, freqs, xb, yb, parity, cfg: AttackConfig, steps, rng, events, tag):
    """Uniform init, then ``steps`` signed steps against T (even) or T_0 (odd)."""
    eps = cfg.epsilon
    delta = rng.uniform(-eps, eps, size=xb.shape) if eps > 0 else np.zeros_like(xb)
    x_adv = np.clip(xb + delta, cfg.clip_min, cfg.clip_max)
    delta = x_adv - xb
    if events is not None:
        events.append((*tag, "init_delta", None))
    against_t = parity == 0
    target = attacks.model_target(model, freqs) if against_t else attacks.zero_target(model)
    for _ in range(steps):
        _, g = target(x_adv, yb)
        delta = delta + cfg.alpha * np.sign(g)
        if events is not None:
            events.append((*tag, "sign_step", "T" if against_t else "T0"))
        delta = np.clip(delta, -eps, eps)
        x_adv = np.clip(xb + delta, cfg.clip_min, cfg.clip_max)
        delta = x_adv - xb
        if events is not None:
            events.append((*tag, "clip", float(np.abs(delta).max())))
    return x_adv


def _train(cfg: TrainConfig, x, y, n_classes, monitor, events, iterative: bool) -> TrainResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    variant = cfg.variant
    rngs = rng_streams(cfg.seed)
    phase = variant in ("phaseat", "phaseat_iterative")
    n_heads = cfg.n_heads if phase else 1
    projection = (
        compute_first_pc(x, cfg.pc_iters, seed=cfg.seed, scale=cfg.scale_C) if phase else None
    )
    model = init_phase_model(
        x.shape[1], n_classes, rngs["init"], cfg.hidden, n_heads, cfg.activation, projection
    )
    state = FrequencyState(k_max=cfg.k_max, beta=cfg.beta) if phase else None
    # before any discrepancy is known the multinomial is uniform
    freqs = (
        sample_frequencies(state, n_heads, rngs["frequency"])
        if phase else FrequencyAssignment.zeros(1)
    )
    steps = cfg.attack.steps if iterative else 1
    metrics: list[EpochMetrics] = []
    reg_log: list[tuple] = []

    if monitor is not None and getattr(monitor, "include_initial", False):
        metrics.append(monitor(EpochMetrics(0, float("nan")), model, state))

    N, B = len(x), cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = rngs["data"].permutation(N)
        losses, regs = [], []
        hist = np.zeros(cfg.k_max, dtype=np.int64)
        for j, start in enumerate(range(0, N, B)):
            idx = order[start:start + B]
            xb, yb = x[idx], y[idx]
            tag = (epoch, j)
            if variant == "clean":
                x_adv = xb
            elif variant == "standard_at":
                x_adv = _perturb(model, freqs, xb, yb, 0, cfg.attack, 1, rngs["attack"], events, tag)
            else:
                x_adv = _perturb(
                    model, freqs, xb, yb, j % 2, cfg.attack, steps, rngs["attack"], events, tag
                )
                state = update_discrepancy(state, xb, x_adv, model, freqs)
                if events is not None:
                    events.append((*tag, "discrepancy", None))
                freqs = sample_frequencies(state, n_heads, rngs["frequency"])
                np.add.at(hist, list(freqs.omegas[1:]), 1)
                if events is not None:
                    events.append((*tag, "sample", freqs.omegas))

            loss, grads, reg = adv_loss_and_grad(model, freqs, x_adv, yb, regularize=phase)
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, j)
            model = apply_sgd(model, grads, cfg.lr)
            losses.append(loss)
            if phase:
                regs.append(float(reg.mean()))
                reg_log.append(
                    (epoch, j, freqs.omegas, float(reg.min()), float(reg.mean()), float(reg.max()))
                )
            if events is not None:
                events.append((*tag, "param_step", loss))
        m = EpochMetrics(
            epoch,
            float(np.mean(losses)),
            freq_hist=hist,
            reg_mean=float(np.mean(regs)) if regs else float("nan"),
        )
        if monitor is not None:
            m = monitor(m, model, state)
        metrics.append(m)
    return TrainResult(model, state, metrics, reg_log)


def train_phaseat(cfg: TrainConfig, x, y, n_classes=None, monitor=None, events=None) -> TrainResult:
    """Non-iterative PhaseAT: one FGSM step per batch, alternating T / T_0 targets."""
    cfg = replace(cfg, variant="phaseat")
    return _train(cfg, x, y, n_classes or int(np.max(y)) + 1, monitor, events, iterative=False)


def train_phaseat_iterative(
    cfg: TrainConfig, x, y, n_classes=None, monitor=None, events=None
) -> TrainResult:
    """PhaseAT with a ``cfg.attack.steps``-step PGD inner loop."""
    cfg = replace(cfg, variant="phaseat_iterative")
    return _train(cfg, x, y, n_classes or int(np.max(y)) + 1, monitor, events, iterative=True)


def train_standard_at(
    cfg: TrainConfig, x, y, n_classes=None, monitor=None, events=None
) -> TrainResult:
    """Single-head FGSM adversarial training with plain cross-entropy."""
    cfg = replace(cfg, variant="standard_at")
    return _train(cfg, x, y, n_classes or int(np.max(y)) + 1, monitor, events, iterative=False)


def train_clean(cfg: TrainConfig, x, y, n_classes=None, monitor=None, events=None) -> TrainResult:
    cfg = replace(cfg, variant="clean")
    return _train(cfg, x, y, n_classes or int(np.max(y)) + 1, monitor, events, iterative=False)


TRAINERS: dict[str, Callable[..., TrainResult]] = {
    "phaseat": train_phaseat,
    "phaseat_iterative": train_phaseat_iterative,
    "standard_at": train_standard_at,
    "clean": train_clean,
}


def train(cfg: TrainConfig, x, y, n_classes=None, monitor=None, events=None) -> TrainResult:
    return TRAINERS[cfg.variant](cfg, x, y, n_classes, monitor, events)
