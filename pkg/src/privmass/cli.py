"""Command-line interface.

Subcommands: ingest, train-gan, sample-syn, train-clf, accountant,
evaluate, evaluate-clf, reproduce. Exit codes: 0 success, 2 config error,
3 runtime failure (quarantine report written where applicable).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import classify, evaluation, runner
from .accountant import (
    AccountantLedger,
    PrivacyBudget,
    accumulate_rdp,
    calibrate_sigma,
    epsilon_at_delta,
    group_privacy,
)
from .config import ConfigError, ExperimentConfig, default_config, validate_config
from .gan import GanCheckpoint, GanTrainConfig, train_gan
from .ingest import (
    Split,
    ingest_directory,
    load_patch_archive,
    write_patch_archive,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = validate_config(args.config)
    else:
        cfg = default_config()
    if getattr(args, "seed", None) is not None:
        cfg.sections["experiment"]["seed"] = args.seed
    if getattr(args, "out", None):
        cfg.sections["experiment"]["out"] = args.out
    return cfg


def cmd_ingest(args) -> int:
    manifest = ingest_directory(
        args.images,
        args.annotations,
        args.out,
        val_fraction=args.val_fraction,
        seed=args.seed if args.seed is not None else 0,
    )
    _emit({"manifest": str(manifest)})
    return EXIT_OK


def cmd_train_gan(args) -> int:
    patches = load_patch_archive(args.manifest, Split.train)
    config = GanTrainConfig(
        epochs=args.epochs,
        seed=args.seed if args.seed is not None else 0,
        base_channels=args.base_channels,
        checkpoint_every=args.checkpoint_every,
    )
    checkpoints = train_gan(patches, config, out_dir=args.out)
    last = checkpoints[-1]
    _emit(
        {
            "checkpoints": len(checkpoints),
            "final_epoch": last.epoch,
            "steps": last.step,
            "params_digest": last.params_digest(),
            "out": str(args.out),
        }
    )
    return EXIT_OK


def cmd_sample_syn(args) -> int:
    ckpt = GanCheckpoint.load(args.checkpoint)
    patches = ckpt.sample(args.n_benign, args.n_malignant, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .ingest import write_patch_png

    index = []
    for i, p in enumerate(patches):
        name = f"syn_{i:05d}_{p.label.name}.png"
        write_patch_png(p, out / name)
        index.append({"file": name, "label": p.label.name, "provenance": str(p.provenance)})
    (out / "index.json").write_text(json.dumps(index, indent=2))
    _emit({"samples": len(patches), "out": str(out)})
    return EXIT_OK


def cmd_train_clf(args) -> int:
    cfg = _load_config(args)
    if args.manifest:
        cfg.sections["classify"]["real_manifest"] = args.manifest
    if args.syn_manifest:
        cfg.sections["classify"]["syn_manifest"] = args.syn_manifest
    data = runner.load_datasets(cfg)
    budget = None
    if args.epsilon is not None and args.epsilon != float("inf"):
        budget = PrivacyBudget(epsilon=args.epsilon, delta=args.delta)
    kind = classify.RegimeKind(args.regime)
    _, report = classify.run_regime(
        kind,
        data.real_train,
        data.real_val,
        data.synthetic,
        runner._fit_config(cfg, cfg.seed),
        budget=budget,
        arch=runner._arch(cfg),
        select_lowest=args.select_lowest_auprc,
    )
    out = Path(args.out or cfg.out_root)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    (out / f"clf_{kind.value.replace('+', '_')}.json").write_text(json.dumps(payload, indent=2))
    _emit(payload)
    return EXIT_OK


def cmd_accountant(args) -> int:
    if args.mode == "calibrate":
        sigma = calibrate_sigma(
            PrivacyBudget(epsilon=args.epsilon, delta=args.delta), args.q, args.steps
        )
        payload = {
            "sigma": sigma,
            "epsilon_target": args.epsilon,
            "delta": args.delta,
            "q": args.q,
            "steps": args.steps,
        }
    else:
        ledger = accumulate_rdp(AccountantLedger(), args.q, args.sigma, args.steps)
        eps, order = epsilon_at_delta(ledger, args.delta)
        payload = {
            "epsilon": eps,
            "best_order": order,
            "delta": args.delta,
            "q": args.q,
            "sigma": args.sigma,
            "steps": args.steps,
        }
        if args.group_k > 1:
            patient = group_privacy(PrivacyBudget(epsilon=eps, delta=args.delta), args.group_k)
            payload["group_k"] = args.group_k
            payload["patient_epsilon"] = patient.epsilon
            payload["patient_delta"] = patient.delta
    _emit(payload)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    set_a = load_patch_archive(args.set_a)
    set_b = load_patch_archive(args.set_b)
    if args.metric == "fid":
        metric = lambda a, b: evaluation.fid(a, b, args.extractor)  # noqa: E731
    else:
        metric = evaluation.frd
    report = evaluation.paired_subset_protocol(
        set_a, set_b, metric, n_subsets=args.subsets, seed=args.seed or 0
    )
    _emit(
        {
            "metric": args.metric,
            "mean": report.value,
            "std": report.spread,
            "per_subset": report.protocol["per_subset"],
            "protocol": {k: v for k, v in report.protocol.items() if k != "per_subset"},
        }
    )
    return EXIT_OK


def cmd_evaluate_clf(args) -> int:
    predictions = np.loadtxt(args.predictions, ndmin=1)
    labels = np.loadtxt(args.labels, ndmin=1).astype(int)
    from .metrics import auprc, auroc

    _emit({"auroc": auroc(predictions, labels), "auprc": auprc(predictions, labels)})
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _load_config(args)
    payload = {}
    failed = 0
    if args.what in ("table", "all"):
        stats = runner.reproduce_table(cfg, jobs=args.jobs)
        payload["table"] = stats
        failed += stats["failed"]
    if args.what in ("synthesis", "all"):
        payload["synthesis"] = runner.reproduce_synthesis_report(cfg)
    _emit(payload)
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privmass", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (INI)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("ingest", help="extract labeled square patches from images")
    p.add_argument("--images", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train-gan", help="train the label-conditioned generator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(fn=cmd_train_gan)

    p = sub.add_parser("sample-syn", help="sample a labeled synthetic dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-benign", type=int, required=True)
    p.add_argument("--n-malignant", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_sample_syn)

    p = sub.add_parser("train-clf", help="run one training regime")
    p.add_argument(
        "--regime",
        required=True,
        choices=[k.value for k in classify.RegimeKind],
    )
    p.add_argument("--manifest", default="")
    p.add_argument("--syn-manifest", default="")
    p.add_argument("--epsilon", type=lambda s: float("inf") if s == "inf" else float(s))
    p.add_argument("--delta", type=float, default=1e-4)
    p.add_argument("--select-lowest-auprc", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_train_clf)

    p = sub.add_parser("accountant", help="privacy spend and noise calibration")
    acct_sub = p.add_subparsers(dest="mode")
    spend = acct_sub.add_parser("spend", help="epsilon for (q, sigma, steps)")
    cal = acct_sub.add_parser("calibrate", help="sigma for a target budget")
    for sp in (spend, p):
        sp.add_argument("--q", type=float)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--delta", type=float, default=1e-4)
        sp.add_argument("--group-k", type=int, default=1)
    cal.add_argument("--epsilon", type=float, required=True)
    cal.add_argument("--delta", type=float, default=1e-4)
    cal.add_argument("--q", type=float, required=True)
    cal.add_argument("--steps", type=int, required=True)
    p.set_defaults(fn=cmd_accountant, mode=None)
    spend.set_defaults(fn=cmd_accountant, mode="spend")
    cal.set_defaults(fn=cmd_accountant, mode="calibrate")

    p = sub.add_parser("evaluate", help="set-vs-set distance metrics")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--metric", choices=["fid", "frd"], default="fid")
    p.add_argument("--extractor", default="tiny-conv")
    p.add_argument("--subsets", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("evaluate-clf", help="AUROC/AUPRC from saved predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(fn=cmd_evaluate_clf)

    p = sub.add_parser("reproduce", help="run the regime/budget grid and reports")
    p.add_argument("--what", choices=["table", "synthesis", "all"], default="all")
    common(p)
    p.set_defaults(fn=cmd_reproduce)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
