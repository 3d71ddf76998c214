"""Command-line entry point: ``phaseat {gen-data,train,attack,analyze,report}``."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import AttackConfig, evaluate_robust_accuracy, write_attack_csv
from ..errors import ConfigError, FormatError
from ..inference import DEFAULT_INFERENCE_SEED, predict_logits
from ..nn import softmax
from ..spectral import frequency_errors, one_hot, write_components_csv
from .config import load_config
from .data import save_npz
from .experiment import EXIT_CONFIG, EXIT_OK, load_splits, run_experiment
from .io import METRIC_FIELDS, load_model, read_metrics


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def _load(args):
    cfg = load_config(args.config, seed=args.seed)
    train_ds, test_ds = load_splits(cfg)
    return cfg, train_ds, test_ds


def cmd_gen_data(args) -> int:
    try:
        cfg, train_ds, test_ds = _load(args)
    except (ConfigError, OSError, FormatError) as err:
        return _fail(str(err))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_npz(out / "train.npz", train_ds)
    save_npz(out / "test.npz", test_ds)
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test samples of {cfg.data.kind} to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    return run_experiment(args.config, seed=args.seed, out=args.out)


def cmd_attack(args) -> int:
    try:
        cfg, _, test_ds = _load(args)
        model, state = load_model(args.model)
    except (ConfigError, OSError, FormatError) as err:
        return _fail(str(err))
    lo, hi = test_ds.input_range
    steps = 1 if args.method == "fgsm" else args.steps
    eps = cfg.eval.epsilon if args.epsilon is None else args.epsilon
    atk = AttackConfig.for_eval(
        eps, steps, eot_samples=args.eot, mimic_frequency=args.mimic_frequency,
        gradient_source="zero" if args.zero_gradient else "sampled",
        seed=cfg.experiment.eval_seed, clip_min=lo, clip_max=hi,
    )
    if args.method == "fgsm":
        atk = replace(atk, alpha=AttackConfig().alpha if args.alpha is None else args.alpha)
    elif args.alpha is not None:
        atk = replace(atk, alpha=args.alpha)
    try:
        acc, records = evaluate_robust_accuracy(
            model, state, test_ds.x, test_ds.y, atk, cfg.experiment.inference_mode,
            DEFAULT_INFERENCE_SEED + cfg.experiment.eval_seed,
        )
    except ValueError as err:
        return _fail(str(err))
    if args.out:
        write_attack_csv(args.out, records)
    clean = np.mean([r["clean_correct"] for r in records])
    print(f"{atk.name}: clean {clean:.4f} robust {acc:.4f} (eps={eps}, n={len(records)})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        cfg, train_ds, _ = _load(args)
        model, state = load_model(args.model)
    except (ConfigError, OSError, FormatError) as err:
        return _fail(str(err))
    mode = args.mode or cfg.experiment.spectral_mode
    seed = DEFAULT_INFERENCE_SEED + cfg.experiment.eval_seed

    def model_fn(x):
        return softmax(predict_logits(model, state, x, mode, seed=seed))

    rep = frequency_errors(
        model_fn, train_ds.x, one_hot(train_ds.y, train_ds.n_classes), cfg.filter,
        keep_components=bool(args.out),
    )
    if args.out:
        write_components_csv(args.out, rep, train_ds.x)
    print(f"e_low {rep.e_low:.6f} e_high {rep.e_high:.6f} (mode={mode})")
    return EXIT_OK


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = [Path(r) for r in args.runs]
    series = {}
    for run in runs:
        try:
            rows = read_metrics(run / "metrics.csv")
        except (OSError, FormatError) as err:
            return _fail(f"{run}: {err}")
        series[run.name] = rows
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("run", *METRIC_FIELDS))
        for name, rows in series.items():
            for r in rows:
                w.writerow((name, *[repr(v) if isinstance(v, float) else v for v in
                                    (getattr(r, f) for f in METRIC_FIELDS)]))

    panels = (("e_low", "low-frequency error"), ("e_high", "high-frequency error"),
              ("robust_acc", "robust accuracy"), ("clean_acc", "clean accuracy"))
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2))
    for ax, (key, title) in zip(axes, panels):
        for name, rows in series.items():
            pts = [(r.epoch, getattr(r, key)) for r in rows
                   if r.split == args.split and np.isfinite(getattr(r, key))]
            if pts:
                ax.plot(*zip(*pts), marker=".", label=name)
        ax.set_title(title)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(out / "curves.svg")
    plt.close(fig)
    print(f"wrote {out / 'curves.csv'} and {out / 'curves.svg'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phaseat", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp, out_help, out_required=False):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        sp.add_argument("--out", required=out_required, default=None, help=out_help)

    g = sub.add_parser("gen-data", help="generate and split the configured dataset")
    with_config(g, "output directory for train.npz/test.npz", out_required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a full experiment")
    with_config(t, "output directory (overrides experiment.out)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="evaluate a saved model under attack")
    with_config(a, "per-sample CSV report")
    a.add_argument("--model", required=True)
    a.add_argument("--method", choices=("fgsm", "pgd"), default="pgd")
    a.add_argument("--steps", type=int, default=50)
    a.add_argument("--epsilon", type=float, default=None)
    a.add_argument("--alpha", type=float, default=None)
    a.add_argument("--eot", type=int, default=0, help="EOT samples (0 disables)")
    a.add_argument("--mimic-frequency", action="store_true")
    a.add_argument("--zero-gradient", action="store_true", help="attack the zero-frequency model")
    a.set_defaults(func=cmd_attack)

    n = sub.add_parser("analyze", help="low/high frequency errors of a saved model")
    with_config(n, "per-point component CSV")
    n.add_argument("--model", required=True)
    n.add_argument("--mode", choices=("sampled", "zero", "fixed-seed"), default=None)
    n.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="curves CSV and SVG from run directories")
    r.add_argument("runs", nargs="+", help="run directories containing metrics.csv")
    r.add_argument("--out", required=True)
    r.add_argument("--split", choices=("train", "test"), default="train")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
