"""Experiment orchestration: resumable grids and report emission.

Every grid cell (regime, budget, seed) writes an atomic run record keyed by
a content hash of its cell descriptor; completed cells are skipped on
rerun, so an interrupted grid resumes with zero recomputation. Budgets are
rendered as the literal string "inf" in machine-readable outputs and as
the infinity glyph in the human-facing CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import classify, evaluation, fixtures
from .accountant import PrivacyBudget
from .classify import FitConfig, RegimeKind
from .config import ExperimentConfig
from .gan import GanCheckpoint
from .ingest import MassPatch, Split, load_patch_archive
from .swin import SwinConfig

INF_GLYPH = "∞"


@dataclass
class RunRecord:
    run_id: str
    config_digest: str
    inputs_hash: str
    cell: dict
    status: str = "complete"
    started: float = 0.0
    ended: float = 0.0
    artifacts: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    error: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


def write_record(record: RunRecord, records_dir: Path) -> Path:
    records_dir.mkdir(parents=True, exist_ok=True)
    final = records_dir / f"{record.run_id}.json"
    tmp = final.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(record.to_dict(), indent=2))
    tmp.rename(final)
    return final


def read_record(records_dir: Path, run_id: str) -> RunRecord | None:
    path = records_dir / f"{run_id}.json"
    if not path.exists():
        return None
    return RunRecord.from_dict(json.loads(path.read_text()))


def _eps_str(eps: float) -> str:
    return "inf" if eps == float("inf") else format(eps, "g")


def cell_run_id(config_digest: str, regime: str, eps: float, seed: int) -> str:
    key = f"{config_digest}|{regime}|{_eps_str(eps)}|{seed}"
    return hashlib.sha256(key.encode()).hexdigest()[:24]


@dataclass
class Datasets:
    real_train: list[MassPatch]
    real_val: list[MassPatch]
    synthetic: list[MassPatch]
    external: list[MassPatch] | None = None


def load_datasets(config: ExperimentConfig) -> Datasets:
    """Materialize the data mix: archives when configured, fixtures otherwise."""
    cls = config["classify"]
    fx = config["fixture"]
    ev = config["eval"]
    seed = config.seed
    if cls["real_manifest"]:
        real_train = load_patch_archive(cls["real_manifest"], Split.train)
        real_val = load_patch_archive(cls["real_manifest"], Split.val)
    else:
        real_train = fixtures.fixture_patches(fx["n_patients"], seed=seed)
        real_val = fixtures.fixture_patches(
            fx["n_val_patients"], seed=seed + 1, id_prefix="FXV"
        )
    if cls["syn_manifest"]:
        synthetic = load_patch_archive(cls["syn_manifest"])
    elif config["gan"]["checkpoint"]:
        ckpt = GanCheckpoint.load(config["gan"]["checkpoint"])
        synthetic = ckpt.sample(fx["n_syn_benign"], fx["n_syn_malignant"], seed=seed + 2)
    else:
        synthetic = fixtures.fixture_synthetic(
            fx["n_syn_benign"], fx["n_syn_malignant"], seed=seed + 2
        )
    external: list[MassPatch] | None
    if ev["external_manifest"]:
        external = load_patch_archive(ev["external_manifest"])
    elif fx["n_external_patients"] > 0:
        external = fixtures.fixture_patches(
            fx["n_external_patients"], seed=seed + 3, family="external", id_prefix="FXE"
        )
    else:
        external = None
    return Datasets(real_train, real_val, synthetic, external)


def inputs_hash(config: ExperimentConfig) -> str:
    """Hash of the data-defining inputs (file digests or fixture parameters)."""
    cls, fx = config["classify"], config["fixture"]
    h = hashlib.sha256()
    for key in ("real_manifest", "syn_manifest"):
        if cls[key]:
            h.update(Path(cls[key]).read_bytes())
    h.update(json.dumps(fx, sort_keys=True).encode())
    h.update(str(config.seed).encode())
    return h.hexdigest()[:24]


def _fit_config(config: ExperimentConfig, seed: int) -> FitConfig:
    cls = config["classify"]
    return FitConfig(
        lr=cls["lr"],
        weight_decay=cls["weight_decay"],
        label_smoothing=cls["label_smoothing"],
        batch_size=cls["batch_size"],
        epochs=cls["epochs"],
        augment=cls["augment"],
        seed=seed,
    )


def _arch(config: ExperimentConfig) -> SwinConfig:
    cls = config["classify"]
    return SwinConfig(dim=cls["arch_dim"], patch=cls["arch_patch"], seed=config.seed)


def run_cell(
    config: ExperimentConfig, data: Datasets, regime: str, eps: float, seed: int
) -> RunRecord:
    run_id = cell_run_id(config.digest, regime, eps, seed)
    record = RunRecord(
        run_id=run_id,
        config_digest=config.digest,
        inputs_hash=inputs_hash(config),
        cell={"regime": regime, "epsilon": _eps_str(eps), "seed": seed},
        started=time.time(),
    )
    kind = RegimeKind(regime)
    budget = (
        None
        if eps == float("inf")
        else PrivacyBudget(epsilon=eps, delta=config["privacy"]["delta"])
    )
    _, report = classify.run_regime(
        kind,
        data.real_train,
        data.real_val,
        data.synthetic,
        _fit_config(config, seed),
        budget=budget,
        arch=_arch(config),
        select_lowest=config["classify"]["select_lowest_auprc"],
    )
    record.metrics = report.to_dict()
    record.ended = time.time()
    return record


def _cell_worker(args) -> dict:
    config, regime, eps, seed = args
    data = load_datasets(config)
    return run_cell(config, data, regime, eps, seed).to_dict()


def reproduce_table(config: ExperimentConfig, jobs: int = 1) -> dict:
    """Run the regime x budget x seed grid, aggregate, and emit reports.

    Returns execution stats: cells executed, skipped (already complete),
    failed (quarantined with their error).
    """
    out = config.out_root
    records_dir = out / "records"
    cls = config["classify"]
    cells = [
        (regime, eps, seed)
        for regime in cls["regimes"]
        for eps in cls["epsilons"]
        for seed in cls["seeds"]
    ]

    pending = []
    records: dict[str, RunRecord] = {}
    skipped = 0
    for regime, eps, seed in cells:
        run_id = cell_run_id(config.digest, regime, eps, seed)
        existing = read_record(records_dir, run_id)
        if existing is not None and existing.status == "complete":
            records[run_id] = existing
            skipped += 1
        else:
            pending.append((regime, eps, seed))

    def quarantine(regime: str, eps: float, seed: int, exc: Exception) -> RunRecord:
        return RunRecord(
            run_id=cell_run_id(config.digest, regime, eps, seed),
            config_digest=config.digest,
            inputs_hash=inputs_hash(config),
            cell={"regime": regime, "epsilon": _eps_str(eps), "seed": seed},
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
            ended=time.time(),
        )

    executed = failed = 0
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_cell_worker, (config, r, e, s)): (r, e, s) for r, e, s in pending
            }
            for future, (regime, eps, seed) in futures.items():
                try:
                    rec = RunRecord.from_dict(future.result())
                    executed += 1
                except Exception as exc:  # quarantine the cell, keep the grid going
                    rec = quarantine(regime, eps, seed, exc)
                    failed += 1
                records[rec.run_id] = rec
                write_record(rec, records_dir)
    else:
        data = load_datasets(config) if pending else None
        for regime, eps, seed in pending:
            try:
                rec = run_cell(config, data, regime, eps, seed)
                executed += 1
            except Exception as exc:  # quarantine the cell, keep the grid going
                rec = quarantine(regime, eps, seed, exc)
                failed += 1
            records[rec.run_id] = rec
            write_record(rec, records_dir)

    table = _aggregate_table(config, records)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.json").write_text(json.dumps(table, indent=2))
    _write_table_csv(table, out / "table.csv")
    stats = {
        "executed": executed,
        "skipped": skipped,
        "failed": failed,
        "cells": len(cells),
        "table_json": str(out / "table.json"),
        "table_csv": str(out / "table.csv"),
    }
    (out / "run_stats.json").write_text(json.dumps(stats, indent=2))
    return stats


def _aggregate_table(config: ExperimentConfig, records: dict[str, RunRecord]) -> dict:
    cls = config["classify"]
    rows = []
    for regime in cls["regimes"]:
        for eps in cls["epsilons"]:
            cell_recs = [
                r
                for r in records.values()
                if r.cell["regime"] == regime and r.cell["epsilon"] == _eps_str(eps)
            ]
            complete = [r for r in cell_recs if r.status == "complete"]
            row: dict = {
                "regime": regime,
                "epsilon": _eps_str(eps),
                "n_seeds": len(complete),
            }
            if complete:
                row["budget"] = complete[0].metrics["budget"]
                row["delta"] = complete[0].metrics["delta"]
                for metric in ("val_auroc", "val_auprc"):
                    mean, std = evaluation.aggregate_seeds(
                        [r.metrics[metric] for r in complete]
                    )
                    row[f"{metric}_mean"] = mean
                    row[f"{metric}_std"] = std
                spents = [
                    r.metrics["spent_epsilon"]
                    for r in complete
                    if r.metrics["spent_epsilon"] is not None
                ]
                row["spent_epsilon_max"] = max(spents) if spents else None
                row["run_ids"] = sorted(r.run_id for r in complete)
            else:
                row.update(
                    {
                        "budget": None,
                        "delta": None,
                        "val_auroc_mean": None,
                        "val_auroc_std": None,
                        "val_auprc_mean": None,
                        "val_auprc_std": None,
                        "spent_epsilon_max": None,
                        "run_ids": [],
                    }
                )
            rows.append(row)
    return {
        "config_digest": config.digest,
        "delta": config["privacy"]["delta"],
        "seeds": cls["seeds"],
        "rows": rows,
    }


def _write_table_csv(table: dict, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "epsilon", "delta", "auroc", "auprc"])
        for row in table["rows"]:
            if row["budget"] is None:
                writer.writerow([row["regime"], row["epsilon"], "", "", ""])
                continue
            budget = row["budget"].replace("inf", INF_GLYPH)
            delta = row["delta"].replace("inf", INF_GLYPH)
            writer.writerow(
                [
                    row["regime"],
                    budget,
                    delta,
                    f"{row['val_auroc_mean']:.3f}±{row['val_auroc_std']:.3f}",
                    f"{row['val_auprc_mean']:.3f}±{row['val_auprc_std']:.3f}",
                ]
            )


def _save_sample_grid(patches: list[MassPatch], path: Path, per_row: int = 8) -> None:
    benign = [p for p in patches if int(p.label) == 0][:per_row]
    malignant = [p for p in patches if int(p.label) == 1][:per_row]
    rows = [r for r in (benign, malignant) if r]
    if not rows:
        return
    side = rows[0][0].side_px
    canvas = np.ones((len(rows) * side, per_row * side), dtype=np.float32)
    for i, row in enumerate(rows):
        for j, p in enumerate(row):
            canvas[i * side : (i + 1) * side, j * side : (j + 1) * side] = p.pixels
    Image.fromarray((canvas * 255).astype(np.uint8), mode="L").save(path)


def reproduce_synthesis_report(config: ExperimentConfig) -> dict:
    """Four-row synthesis comparison + a benign/malignant sample grid.

    Rows: synthetic vs real, real vs real, synthetic vs synthetic, real vs
    external; each metric reports mean +/- std over seeded subsets. The
    real-vs-real row becomes an exact zero control when
    ``eval.identical_real_control`` is set.
    """
    data = load_datasets(config)
    ev = config["eval"]
    out = config.out_root
    out.mkdir(parents=True, exist_ok=True)
    n_subsets = ev["n_subsets"]
    seed = config.seed
    subset_size = ev["subset_size"] or None
    half_syn = max(2, len(data.synthetic) // 2)

    comparisons = [
        ("syn_vs_real", data.synthetic, data.real_train, subset_size, False),
        (
            "real_vs_real",
            data.real_train,
            data.real_train,
            subset_size,
            ev["identical_real_control"],
        ),
        ("syn_vs_syn", data.synthetic, data.synthetic, (half_syn, half_syn), False),
        ("real_vs_external", data.real_train, data.external, subset_size, False),
    ]

    metric_fns = {"fid": lambda a, b: evaluation.fid(a, b, ev["extractor"]), "frd": evaluation.frd}
    rows = []
    notices = []
    for name, set_a, set_b, size, identical in comparisons:
        if set_b is None or set_a is None:
            notices.append(f"row {name} skipped: comparison set unavailable")
            rows.append({"comparison": name, "skipped": True})
            continue
        row: dict = {"comparison": name, "skipped": False}
        for metric_name in ev["metrics"]:
            report = evaluation.paired_subset_protocol(
                set_a,
                set_b,
                metric_fns[metric_name],
                n_subsets=n_subsets,
                seed=seed,
                subset_size=size,
                identical_sides=identical,
            )
            row[metric_name] = {
                "mean": report.value,
                "std": report.spread,
                "per_subset": report.protocol["per_subset"],
            }
        rows.append(row)

    grid_path = out / "samples_grid.png"
    _save_sample_grid(data.synthetic, grid_path)
    report = {
        "config_digest": config.digest,
        "rows": rows,
        "notices": notices,
        "extractor": ev["extractor"],
        "n_subsets": n_subsets,
        "sample_grid": str(grid_path),
    }
    (out / "synthesis_report.json").write_text(json.dumps(report, indent=2))
    return report
