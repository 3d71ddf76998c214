"""Desk-scale reproductions shared by the scripts and the acceptance suite.

* :func:`fprinciple_run` trains one variant on the 1-D sine-mix task and
  records e_low/e_high each epoch (low-before-high ordering).
* :func:`paired_desk_runs` trains PhaseAT and standard AT with matched
  budgets on the rings task and evaluates them at the half-way and final
  epochs (frequency errors, robust accuracy).
* :func:`attack_ladder` evaluates one trained PhaseAT model under PGD,
  PGD+EOT and PGD+EOT+frequency mimicry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .attacks import AttackConfig, evaluate_robust_accuracy
from .harness.data import Dataset, DatasetSpec, gen_dataset
from .inference import accuracy, predict_logits
from .nn import softmax
from .spectral import FilterConfig, SpectralProbe, one_hot
from .trainer import Monitor, TrainConfig, TrainResult, rng_streams, train

# Desk classification task: rings in the unit square. A Gaussian filter of
# variance 3 is wider than the whole square, so the analysis uses 0.01.
DESK_FILTER = FilterConfig(variance=0.01)
DESK_EVAL_EPSILON = 0.031


def desk_config(variant: str, seed: int, epochs: int = 100, **kw) -> TrainConfig:
    base = dict(
        epochs=epochs, batch_size=64, lr=0.1, n_heads=3, k_max=64, hidden=(64, 64),
        activation="relu", seed=seed, variant=variant,
        attack=AttackConfig(epsilon=0.031, alpha=0.039),
    )
    base.update(kw)
    return TrainConfig(**base)


def desk_data(seed: int, n: int = 1000) -> tuple[Dataset, Dataset]:
    ds = gen_dataset(DatasetSpec(kind="rings", n=n, seed=seed))
    return ds.split(0.2, rng_streams(seed)["split"])


def strongest_attack(variant: str, steps: int = 50, eot: int = 10) -> AttackConfig:
    """PGD for deterministic models; PGD+EOT+frequency mimicry for PhaseAT."""
    phase = variant.startswith("phaseat")
    return AttackConfig.for_eval(
        DESK_EVAL_EPSILON, steps, eot_samples=eot if phase else 0, mimic_frequency=phase
    )


def first_epoch_below(values: list[tuple[int, float]], tau: float) -> float:
    """First epoch whose value is below ``tau``; ``inf`` if it never is."""
    for epoch, v in values:
        if v < tau:
            return epoch
    return math.inf


# ---------------------------------------------------------------------------
# F-principle


@dataclass
class FPrincipleRun:
    variant: str
    seed: int
    e_low: list[tuple[int, float]]
    e_high: list[tuple[int, float]]

    def first_crossings(self, tau: float) -> tuple[float, float]:
        return first_epoch_below(self.e_low, tau), first_epoch_below(self.e_high, tau)

    def low_first(self, tau: float) -> bool:
        lo, hi = self.first_crossings(tau)
        return lo < math.inf and lo <= hi


def fprinciple_run(variant: str, seed: int, epochs: int = 150) -> FPrincipleRun:
    """Sine-mix, d=1, frequencies {1, 3, 5}, n=1000, spectral errors every epoch."""
    ds = gen_dataset(DatasetSpec(kind="sine-mix", n=1000, dim=1, seed=seed))
    lo, hi = ds.input_range
    cfg = TrainConfig(
        epochs=epochs, batch_size=50, lr=0.5, seed=seed, variant=variant, activation="relu",
        hidden=(64, 64), k_max=64, attack=AttackConfig(clip_min=lo, clip_max=hi),
    )
    mon = Monitor(ds.x, ds.y, 2, spectral=DESK_FILTER, spectral_mode="zero", include_initial=True)
    res = train(cfg, ds.x, ds.y, 2, monitor=mon)
    return FPrincipleRun(
        variant, seed,
        [(m.epoch, m.e_low) for m in res.metrics],
        [(m.epoch, m.e_high) for m in res.metrics],
    )


# ---------------------------------------------------------------------------
# paired PhaseAT / standard AT runs


@dataclass
class DeskRecord:
    variant: str
    seed: int
    result: TrainResult
    robust: dict[int, float] = field(default_factory=dict)  # epoch -> strongest-attack acc
    robust_plain: dict[int, float] = field(default_factory=dict)  # epoch -> PGD without EOT
    e_low: dict[str, float] = field(default_factory=dict)  # inference mode -> value
    e_high: dict[str, float] = field(default_factory=dict)
    clean: dict[str, float] = field(default_factory=dict)
    train_losses: list[float] = field(default_factory=list)


class _HalfwayProbe:
    """Monitor hook evaluating robust accuracy at selected epochs only."""

    def __init__(self, record: DeskRecord, test: Dataset, epochs: tuple[int, ...], plain: bool):
        self.record, self.test, self.epochs, self.plain = record, test, epochs, plain

    def __call__(self, m, model, state):
        if m.epoch in self.epochs:
            atk = strongest_attack(self.record.variant)
            self.record.robust[m.epoch], _ = evaluate_robust_accuracy(
                model, state, self.test.x, self.test.y, atk
            )
            if self.plain:
                self.record.robust_plain[m.epoch], _ = evaluate_robust_accuracy(
                    model, state, self.test.x, self.test.y, AttackConfig.for_eval(DESK_EVAL_EPSILON, 50)
                )
        return m


def desk_run(variant: str, seed: int, epochs: int = 100, plain: bool = False, **kw) -> DeskRecord:
    train_ds, test_ds = desk_data(seed)
    cfg = desk_config(variant, seed, epochs, **kw)
    rec = DeskRecord(variant, seed, None)  # type: ignore[arg-type]
    probe = _HalfwayProbe(rec, test_ds, (epochs // 2, epochs), plain)
    res = train(cfg, train_ds.x, train_ds.y, 2, monitor=probe)
    rec.result = res
    rec.train_losses = [m.train_loss for m in res.metrics]
    spectral = SpectralProbe(train_ds.x, one_hot(train_ds.y, 2), DESK_FILTER)
    modes = ("zero", "fixed-seed") if variant.startswith("phaseat") else ("zero",)
    for mode in modes:
        rep = spectral.evaluate(lambda x: softmax(predict_logits(res.model, res.state, x, mode)))
        rec.e_low[mode], rec.e_high[mode] = rep.e_low, rep.e_high
        rec.clean[mode] = accuracy(res.model, res.state, test_ds.x, test_ds.y, mode)
    return rec


def paired_desk_runs(seeds=range(5), epochs: int = 100, plain: bool = False) -> dict[str, list[DeskRecord]]:
    return {
        v: [desk_run(v, s, epochs, plain) for s in seeds] for v in ("standard_at", "phaseat")
    }


def attack_ladder(record: DeskRecord, steps: int = 50, eot: int = 10) -> dict[str, float]:
    """Robust accuracy of a trained PhaseAT model under increasingly adaptive attacks."""
    _, test_ds = desk_data(record.seed)
    model, state = record.result.model, record.result.state
    out = {}
    for eot_n, mimic in ((0, False), (eot, False), (eot, True)):
        atk = AttackConfig.for_eval(DESK_EVAL_EPSILON, steps, eot_samples=eot_n, mimic_frequency=mimic)
        out[atk.name], _ = evaluate_robust_accuracy(model, state, test_ds.x, test_ds.y, atk)
    zero = replace(AttackConfig.for_eval(DESK_EVAL_EPSILON, steps), gradient_source="zero")
    out[zero.name], _ = evaluate_robust_accuracy(model, state, test_ds.x, test_ds.y, zero)
    return out
