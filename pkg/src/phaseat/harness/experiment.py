"""End-to-end experiment: data, training, per-epoch metrics, final evaluation.

Artifacts in the output directory::

    config.txt            the resolved configuration
    metrics.csv           one row per split per epoch
    checkpoints/          epoch_NNN.phat model containers
    model.phat            the final model and frequency state
    attack_<name>.csv     per-sample records of each final attack
    summary.json          final numbers

Exit codes: 0 success, 2 invalid configuration or unreadable dataset,
3 non-finite training loss.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..attacks import AttackConfig, adversarial_inputs, evaluate_robust_accuracy, write_attack_csv
from ..errors import ConfigError, FormatError
from ..inference import DEFAULT_INFERENCE_SEED, predict_logits
from ..nn import cross_entropy, softmax
from ..spectral import SpectralProbe, one_hot
from ..trainer import EpochMetrics, NonFiniteLossError, rng_streams, train
from .config import ExperimentConfig, dump_config, load_config
from .data import Dataset, gen_dataset
from .io import MetricRow, MetricsWriter, json_safe, save_model

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NAN = float("nan")


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = gen_dataset(cfg.data)
    split_rng = rng_streams(cfg.train.seed)["split"]
    return ds.split(cfg.experiment.test_fraction, split_rng)


def clip_to(attack: AttackConfig, ds: Dataset) -> AttackConfig:
    lo, hi = ds.input_range
    return replace(attack, clip_min=lo, clip_max=hi)


@dataclass
class _Split:
    name: str
    data: Dataset
    probe: SpectralProbe
    robust_x: np.ndarray
    robust_y: np.ndarray


class EpochRecorder:
    """Trainer monitor that writes metric rows and checkpoints as epochs finish."""

    def __init__(self, cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, out: Path):
        self.cfg = cfg
        exp = cfg.experiment
        self.inference_seed = DEFAULT_INFERENCE_SEED + exp.eval_seed
        self.attack = cfg.eval_attacks(train_ds.input_range)[0]
        n_max = cfg.eval.max_samples or None
        self.splits = []
        for name, ds in (("train", train_ds), ("test", test_ds)):
            probe = SpectralProbe(ds.x, one_hot(ds.y, ds.n_classes), cfg.filter)
            self.splits.append(_Split(name, ds, probe, ds.x[:n_max], ds.y[:n_max]))
        self.writer = MetricsWriter(out / "metrics.csv")
        self.ckpt_dir = out / "checkpoints" if exp.checkpoints else None
        if self.ckpt_dir is not None:
            self.ckpt_dir.mkdir(exist_ok=True)
        self.history: list[MetricRow] = []

    def _logits(self, model, state, x, mode):
        return predict_logits(model, state, x, mode, seed=self.inference_seed)

    def __call__(self, m: EpochMetrics, model, state) -> EpochMetrics:
        cfg, exp = self.cfg, self.cfg.experiment
        rows = []
        do_robust = m.epoch % cfg.eval.every == 0 or m.epoch == cfg.train.epochs
        do_spectral = m.epoch % exp.analysis_every == 0 or m.epoch == cfg.train.epochs
        for sp in self.splits:
            logits = self._logits(model, state, sp.data.x, exp.inference_mode)
            clean = float(np.mean(np.argmax(logits, axis=1) == sp.data.y))
            robust = NAN
            if do_robust:
                robust, _ = evaluate_robust_accuracy(
                    model, state, sp.robust_x, sp.robust_y, self.attack,
                    exp.inference_mode, self.inference_seed,
                )
            e_low = e_high = NAN
            if do_spectral:
                inputs = None
                if exp.spectral_inputs == "adversarial":
                    inputs = adversarial_inputs(model, state, sp.probe.x, sp.probe.labels, self.attack)
                rep = sp.probe.evaluate(
                    lambda x: softmax(self._logits(model, state, x, exp.spectral_mode)), inputs
                )
                e_low, e_high = rep.e_low, rep.e_high
            if sp.name == "train":
                loss = m.train_loss
                m.clean_acc, m.robust_acc, m.e_low, m.e_high = clean, robust, e_low, e_high
            else:
                loss = float(cross_entropy(logits, sp.data.y)[0])
                m.test_clean_acc, m.test_robust_acc = clean, robust
                m.test_e_low, m.test_e_high = e_low, e_high
            rows.append(MetricRow(m.epoch, sp.name, clean, robust, self.attack.name, e_low, e_high, loss))
        self.writer.append(rows)
        self.history.extend(rows)
        if self.ckpt_dir is not None:
            save_model(self.ckpt_dir / f"epoch_{m.epoch:03d}.phat", model, state)
        return m


def _diagnose(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def run_experiment(config_path, seed: int | None = None, out: str | None = None) -> int:
    """Run the experiment described by ``config_path`` and return an exit code."""
    try:
        cfg = load_config(config_path, seed=seed, out=out)
    except ConfigError as err:
        _diagnose(str(err))
        return EXIT_CONFIG
    return run_config(cfg)


def run_config(cfg: ExperimentConfig) -> int:
    # every failure that does not need compute is raised before the output
    # directory is touched, so a rejected run leaves nothing behind
    try:
        train_ds, test_ds = load_splits(cfg)
        final_attacks = cfg.eval_attacks(train_ds.input_range)
    except (OSError, FormatError, ConfigError, ValueError) as err:
        _diagnose(f"cannot prepare dataset: {err}")
        return EXIT_CONFIG
    if len(train_ds) < 2 or len(test_ds) < 1:
        _diagnose("dataset too small for the requested split")
        return EXIT_CONFIG

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    tcfg = replace(cfg.train, attack=clip_to(cfg.train.attack, train_ds))
    recorder = EpochRecorder(cfg, train_ds, test_ds, out)
    try:
        result = train(tcfg, train_ds.x, train_ds.y, train_ds.n_classes, monitor=recorder)
    except NonFiniteLossError as err:
        _diagnose(f"non-finite loss at epoch {err.epoch} (batch {err.batch})")
        return EXIT_NUMERIC
    save_model(out / "model.phat", result.model, result.state)

    exp = cfg.experiment
    n_max = cfg.eval.max_samples or None
    final = {}
    for atk in final_attacks:
        acc, records = evaluate_robust_accuracy(
            result.model, result.state, test_ds.x[:n_max], test_ds.y[:n_max], atk,
            exp.inference_mode, recorder.inference_seed,
        )
        final[atk.name] = acc
        write_attack_csv(out / f"attack_{atk.name.replace('+', '_')}.csv", records)

    last = result.metrics[-1]
    summary = {
        "variant": tcfg.variant,
        "seed": tcfg.seed,
        "epochs": tcfg.epochs,
        "train_size": len(train_ds),
        "test_size": len(test_ds),
        "final": {
            "train_loss": last.train_loss,
            "clean_acc": last.test_clean_acc,
            "robust_acc": final,
            "e_low": last.e_low,
            "e_high": last.e_high,
            "reg_mean": last.reg_mean,
        },
        "discrepancy": None if result.state is None else result.state.d,
    }
    (out / "summary.json").write_text(json.dumps(json_safe(summary), indent=2, sort_keys=True) + "\n")
    return EXIT_OK
