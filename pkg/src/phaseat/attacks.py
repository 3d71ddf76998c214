"""L-infinity FGSM/PGD attacks, EOT gradients and robust-accuracy evaluation.

An attack *target* is any callable ``target(x_adv, y) -> (losses, grad_x)``
returning per-sample cross-entropy losses and their input gradients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ShapeError
from .freq_select import FrequencyState, sample_frequencies
from .inference import DEFAULT_INFERENCE_SEED, inference_frequencies
from .nn import cross_entropy
from .phase_model import FrequencyAssignment, PhaseModel, phase_backward, phase_forward

Target = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.031
    alpha: float = 0.039
    steps: int = 1
    eot_samples: int = 0
    mimic_frequency: bool = False
    # "sampled": gradients through randomly drawn frequencies; "zero": through T_0
    gradient_source: str = "sampled"
    seed: int = 0
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.eot_samples < 0:
            raise ValueError("eot_samples must be non-negative")
        if self.gradient_source not in ("sampled", "zero"):
            raise ValueError(f"unknown gradient source {self.gradient_source!r}")
        if not self.clip_min < self.clip_max:
            raise ValueError("empty input range")

    @classmethod
    def for_eval(cls, epsilon: float = 0.031, steps: int = 50, **kw) -> "AttackConfig":
        """Evaluation defaults: ``alpha = epsilon / 4``."""
        alpha = epsilon / 4 if epsilon > 0 else 1e-3
        return cls(epsilon=epsilon, alpha=alpha, steps=steps, **kw)

    @property
    def name(self) -> str:
        base = "fgsm" if self.steps == 1 else f"pgd{self.steps}"
        if self.gradient_source == "zero":
            return base + "+zero"
        if self.eot_samples > 0:
            base += "+eot"
        if self.mimic_frequency:
            base += "+freq"
        return base


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    x_adv: np.ndarray  # x + delta clamped to the input range
    final_loss: np.ndarray
    best_delta: np.ndarray
    best_x_adv: np.ndarray
    best_loss: np.ndarray


def model_target(model: PhaseModel, freqs) -> Target:
    """Deterministic target: the model under a fixed frequency assignment."""

    def target(x, y):
        logits, trace = phase_forward(model, freqs, x, return_trace=True)
        losses, g = cross_entropy(logits, y, reduction="none")
        _, grad_x = phase_backward(model, trace, g)
        return losses, grad_x

    return target


def zero_target(model: PhaseModel) -> Target:
    return model_target(model, FrequencyAssignment.zeros(model.n_heads))


@dataclass(frozen=True)
class StochasticModel:
    """A model whose head frequencies are redrawn on every evaluation."""

    model: PhaseModel
    draw: Callable[[np.random.Generator], FrequencyAssignment]

    def __call__(self, x, rng: np.random.Generator):
        return phase_forward(self.model, self.draw(rng), x)

    def sample_target(self, rng: np.random.Generator) -> Target:
        return model_target(self.model, self.draw(rng))


def mimic_frequency_sampler(state: FrequencyState, model: PhaseModel) -> StochasticModel:
    """Attacker that draws frequencies from the defender's own multinomial."""
    return StochasticModel(model, lambda rng: sample_frequencies(state, model.n_heads, rng))


def uniform_frequency_sampler(model: PhaseModel, k_max: int) -> StochasticModel:
    """Attacker that knows the frequency range but not the discrepancy."""
    uniform = FrequencyState(k_max=k_max)
    return StochasticModel(model, lambda rng: sample_frequencies(uniform, model.n_heads, rng))


def eot_gradient(
    model_sampler: StochasticModel, x, y, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Mean loss and mean input gradient over ``n`` frequency draws."""
    if n < 1:
        raise ValueError("EOT needs at least one sample")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(y)
    loss_sum = np.zeros(len(X))
    grad_sum = np.zeros_like(X)
    for _ in range(n):
        losses, g = model_sampler.sample_target(rng)(X, y)
        loss_sum += losses
        grad_sum += g
    return loss_sum / n, grad_sum / n


def eot_target(model_sampler: StochasticModel, n: int, rng: np.random.Generator) -> Target:
    return lambda x, y: eot_gradient(model_sampler, x, y, n, rng)


def _clamp(x, delta, cfg: AttackConfig):
    x_adv = np.clip(x + delta, cfg.clip_min, cfg.clip_max)
    return x_adv, x_adv - x


def _ascend(target: Target, x, y, cfg: AttackConfig, steps: int, rng) -> Perturbation:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ShapeError("inputs and labels differ in length")
    eps = cfg.epsilon
    delta = rng.uniform(-eps, eps, size=x.shape) if eps > 0 else np.zeros_like(x)
    x_adv, delta = _clamp(x, delta, cfg)
    best_loss = np.full(len(x), -np.inf)
    best_x = x_adv.copy()
    for i in range(steps):
        losses, g = target(x_adv, y)
        if i > 0:
            better = losses > best_loss
            best_loss = np.where(better, losses, best_loss)
            best_x[better] = x_adv[better]
        delta = np.clip(delta + cfg.alpha * np.sign(g), -eps, eps)
        x_adv, delta = _clamp(x, delta, cfg)
    final_loss, _ = target(x_adv, y)
    better = final_loss > best_loss
    best_loss = np.where(better, final_loss, best_loss)
    best_x[better] = x_adv[better]
    return Perturbation(delta, x_adv, final_loss, best_x - x, best_x, best_loss)


def fgsm(target: Target, x, y, cfg: AttackConfig, rng: np.random.Generator) -> Perturbation:
    """Uniform start in the eps-ball, one signed-gradient step of size alpha, clip."""
    if cfg.steps != 1:
        raise ValueError("fgsm takes exactly one step; use pgd for more")
    return _ascend(target, x, y, cfg, 1, rng)


def pgd(target: Target, x, y, cfg: AttackConfig, rng: np.random.Generator) -> Perturbation:
    """``cfg.steps`` signed-gradient steps with re-projection after each.

    Both the final iterate and the highest-loss iterate are returned.
    """
    return _ascend(target, x, y, cfg, cfg.steps, rng)


def build_target(
    model: PhaseModel,
    state: FrequencyState | None,
    cfg: AttackConfig,
    rng: np.random.Generator,
    k_max: int | None = None,
) -> Target:
    """Target implied by an evaluation config.

    ``gradient_source="zero"`` attacks ``T_0``. Otherwise frequencies are
    drawn per step, from the defender's multinomial when ``mimic_frequency``
    is set and uniformly over ``[0, k_max)`` otherwise, averaged over
    ``eot_samples`` draws when EOT is on.
    """
    if cfg.gradient_source == "zero" or model.n_heads == 1:
        return zero_target(model)
    if cfg.mimic_frequency:
        if state is None:
            raise ValueError("frequency mimicry needs the defender's FrequencyState")
        sampler = mimic_frequency_sampler(state, model)
    else:
        if k_max is None:
            k_max = state.k_max if state is not None else 1
        sampler = uniform_frequency_sampler(model, k_max)
    return eot_target(sampler, max(1, cfg.eot_samples), rng)


def adversarial_inputs(
    model: PhaseModel, state: FrequencyState | None, x, y, cfg: AttackConfig, use_best: bool = True
) -> np.ndarray:
    """Attacked copies of ``x`` under ``cfg``, seeded by ``cfg.seed``."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    pert = pgd(build_target(model, state, cfg, rng), x, np.asarray(y), cfg, rng)
    return pert.best_x_adv if use_best else pert.x_adv


def evaluate_robust_accuracy(
    model: PhaseModel,
    state: FrequencyState | None,
    x,
    y,
    cfg: AttackConfig,
    inference_mode: str = "fixed-seed",
    inference_seed: int = DEFAULT_INFERENCE_SEED,
    use_best: bool = True,
) -> tuple[float, list[dict]]:
    """Fraction of samples still classified correctly after the attack."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    target = build_target(model, state, cfg, rng)
    pert = pgd(target, x, y, cfg, rng)
    x_adv = pert.best_x_adv if use_best else pert.x_adv
    loss = pert.best_loss if use_best else pert.final_loss
    # clean and attacked inputs see the same assignment
    freqs = inference_frequencies(model, state, inference_mode, rng, inference_seed)
    clean_pred = np.argmax(phase_forward(model, freqs, x), axis=1)
    adv_pred = np.argmax(phase_forward(model, freqs, x_adv), axis=1)
    clean_ok = clean_pred == y
    adv_ok = adv_pred == y
    linf = np.abs(x_adv - x).max(axis=1) if x.shape[1] else np.zeros(len(x))
    records = [
        {
            "sample_id": i,
            "clean_correct": int(clean_ok[i]),
            "adv_correct": int(adv_ok[i]),
            "final_loss": float(loss[i]),
            "linf": float(linf[i]),
        }
        for i in range(len(x))
    ]
    return float(adv_ok.mean()), records


ATTACK_CSV_FIELDS = ("sample_id", "clean_correct", "adv_correct", "final_loss", "linf")


def write_attack_csv(path, records) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ATTACK_CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def with_seed(cfg: AttackConfig, seed: int) -> AttackConfig:
    return replace(cfg, seed=seed)
