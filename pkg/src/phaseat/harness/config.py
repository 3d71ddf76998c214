"""Flat ``section.key = value`` experiment configuration.

Example::

    # rings, PhaseAT
    data.kind = rings
    data.n = 1000
    train.variant = phaseat
    train.epochs = 30
    attack.epsilon = 0.031
    eval.attacks = pgd50, pgd50+eot, pgd50+eot+freq
    experiment.out = runs/rings

Lines starting with ``#`` and blank lines are ignored. Unknown sections or
keys are errors, and every value is validated before any compute starts.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..attacks import AttackConfig
from ..errors import ConfigError
from ..inference import MODES
from ..spectral import FilterConfig
from ..trainer import TrainConfig
from .data import DatasetSpec

SPECTRAL_INPUTS = ("clean", "adversarial")


@dataclass(frozen=True)
class EvalSpec:
    """Attacks run against the final model, plus the per-epoch robust attack."""

    attacks: tuple[str, ...] = ("pgd50",)
    epsilon: float = 0.031
    eot_samples: int = 10
    every: int = 1  # epochs between per-epoch robust evaluations
    max_samples: int = 0  # 0 evaluates every test sample


@dataclass(frozen=True)
class ExperimentSpec:
    out: str = "runs/default"
    test_fraction: float = 0.2
    analysis_every: int = 1
    spectral_variance: float = 3.0
    spectral_max_points: int = 2048
    spectral_mode: str = "zero"
    spectral_inputs: str = "clean"  # or "adversarial": attacked by the first eval attack
    inference_mode: str = "fixed-seed"
    eval_seed: int = 0
    checkpoints: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)

    @property
    def out_dir(self) -> Path:
        return Path(self.experiment.out)

    @property
    def filter(self) -> FilterConfig:
        e = self.experiment
        return FilterConfig(e.spectral_variance, e.spectral_max_points, self.train.seed)

    def eval_attacks(self, clip=(0.0, 1.0)) -> list[AttackConfig]:
        seed = self.experiment.eval_seed
        return [parse_attack_name(n, self.eval, clip, seed) for n in self.eval.attacks]


_ATTACK_RE = re.compile(r"^(fgsm|pgd(\d+))((?:\+(?:eot|freq|zero))*)$")


def parse_attack_name(
    name: str, ev: EvalSpec = EvalSpec(), clip=(0.0, 1.0), seed: int = 0
) -> AttackConfig:
    """``fgsm``, ``pgd50``, ``pgd50+eot``, ``pgd50+eot+freq`` or ``pgd50+zero``."""
    m = _ATTACK_RE.match(name.strip())
    if not m:
        raise ConfigError(f"unrecognised attack {name!r}")
    steps = 1 if m.group(1) == "fgsm" else int(m.group(2))
    if steps < 1:
        raise ConfigError(f"attack {name!r} needs at least one step")
    mods = set(filter(None, m.group(3).split("+")))
    if "zero" in mods and mods != {"zero"}:
        raise ConfigError(f"attack {name!r}: zero-frequency gradients exclude eot/freq")
    if "freq" in mods and "eot" not in mods:
        raise ConfigError(f"attack {name!r}: frequency mimicry is evaluated with eot")
    return AttackConfig.for_eval(
        ev.epsilon,
        steps,
        eot_samples=ev.eot_samples if "eot" in mods else 0,
        mimic_frequency="freq" in mods,
        gradient_source="zero" if "zero" in mods else "sampled",
        seed=seed,
        clip_min=clip[0],
        clip_max=clip[1],
    )


# section name -> dataclass whose fields are the keys of that section
_SECTIONS = {
    "train": TrainConfig,
    "attack": AttackConfig,
    "data": DatasetSpec,
    "eval": EvalSpec,
    "experiment": ExperimentSpec,
}


def _coerce(raw: str, default, key: str):
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() in ("true", "yes", "1", "on"):
            return True
        if text.lower() in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        proto = default[0] if default else ""
        return tuple(_coerce(t, proto, key) for t in items)
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if default is None and text.lower() in ("none", ""):
        return None
    return text


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    defaults = {s: cls() for s, cls in _SECTIONS.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        lhs, rhs = (p.strip() for p in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"{where}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        names = {f.name for f in fields(_SECTIONS[section])}
        if key not in names or (section == "train" and key == "attack"):
            raise ConfigError(f"{where}: unknown key {lhs!r}")
        if key in values[section]:
            raise ConfigError(f"{where}: {lhs!r} set twice")
        values[section][key] = _coerce(rhs, getattr(defaults[section], key), lhs)

    try:
        attack = AttackConfig(**values["attack"])
        data = DatasetSpec(**values["data"])
        train = TrainConfig(attack=attack, **values["train"])
        ev = EvalSpec(**values["eval"])
        exp = ExperimentSpec(**values["experiment"])
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{source}: {err}") from None
    cfg = ExperimentConfig(train, data, ev, exp)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    ev, exp = cfg.eval, cfg.experiment
    if not ev.attacks:
        raise ConfigError("eval.attacks must list at least one attack")
    for name in ev.attacks:
        parse_attack_name(name, ev)
    if ev.epsilon < 0 or ev.eot_samples < 1 or ev.every < 1 or ev.max_samples < 0:
        raise ConfigError("eval: epsilon >= 0, eot_samples >= 1, every >= 1, max_samples >= 0")
    if not 0.0 < exp.test_fraction < 1.0:
        raise ConfigError("experiment.test_fraction must lie in (0, 1)")
    if exp.analysis_every < 1:
        raise ConfigError("experiment.analysis_every must be at least 1")
    if exp.spectral_inputs not in SPECTRAL_INPUTS:
        raise ConfigError(f"experiment.spectral_inputs must be one of {SPECTRAL_INPUTS}")
    if exp.spectral_mode not in MODES or exp.inference_mode not in MODES:
        raise ConfigError(f"inference modes must be one of {MODES}")
    try:
        cfg.filter
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.data.task != "classification":
        raise ConfigError("experiments train classifiers; regression data is for analysis only")


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    cfg = parse_config(text, str(path))
    return apply_overrides(cfg, **overrides)


def apply_overrides(cfg: ExperimentConfig, seed=None, out=None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed), data=replace(cfg.data, seed=seed))
    if out is not None:
        cfg = replace(cfg, experiment=replace(cfg.experiment, out=str(out)))
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (every key written explicitly)."""
    lines = []
    sections = {
        "train": cfg.train, "attack": cfg.train.attack, "data": cfg.data,
        "eval": cfg.eval, "experiment": cfg.experiment,
    }
    for name, obj in sections.items():
        for f in fields(obj):
            if name == "train" and f.name == "attack":
                continue
            v = getattr(obj, f.name)
            if v is None:
                text = "none"
            elif isinstance(v, tuple):
                text = ", ".join(str(t) for t in v)
            else:
                text = str(v)
            lines.append(f"{name}.{f.name} = {text}")
    return "\n".join(lines) + "\n"


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
