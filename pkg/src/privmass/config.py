"""Declarative experiment configs: INI sections with typed keys.

Validation aggregates every problem (unknown keys, type errors, constraint
violations) instead of stopping at the first, and the config digest is the
hash of the raw file bytes, so byte-identical configs always hash alike.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .accountant import PrivacyBudget
from .classify import RegimeKind

_REGIME_ALIASES = {k.value: k for k in RegimeKind}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _parse_eps(text: str) -> float:
    return float("inf") if text.strip().lower() in ("inf", "∞") else float(text)


def _parse_eps_list(text: str) -> list[float]:
    return [_parse_eps(x) for x in text.split(",") if x.strip()]


# section -> key -> (parser, default); None default means required-if-used
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "seed": (int, 0),
        "out": (str, "runs"),
        "name": (str, "fixture"),
    },
    "ingest": {
        "images": (str, ""),
        "annotations": (str, ""),
        "val_fraction": (float, 0.25),
        "margin_px": (int, 60),
        "min_side": (int, 128),
    },
    "fixture": {
        "n_patients": (int, 16),
        "n_val_patients": (int, 6),
        "n_external_patients": (int, 8),
        "n_syn_benign": (int, 12),
        "n_syn_malignant": (int, 12),
    },
    "gan": {
        "epochs": (int, 2),
        "batch_size": (int, 16),
        "base_channels": (int, 8),
        "embedding_dim": (int, 50),
        "checkpoint_every": (int, 0),
        "checkpoint": (str, ""),
    },
    "privacy": {
        "delta": (float, 1e-4),
        "clip_norm": (float, 1.0),
        "group_k": (int, 1),
    },
    "classify": {
        "regimes": (_parse_str_list, [k.value for k in RegimeKind]),
        "epsilons": (_parse_eps_list, [6.0, float("inf")]),
        "seeds": (_parse_int_list, [0, 1, 2]),
        "epochs": (int, 2),
        "batch_size": (int, 8),
        "lr": (float, 1e-3),
        "weight_decay": (float, 1e-8),
        "label_smoothing": (float, 0.1),
        "augment": (_parse_bool, True),
        "arch_dim": (int, 16),
        "arch_patch": (int, 28),
        "select_lowest_auprc": (_parse_bool, False),
        "real_manifest": (str, ""),
        "syn_manifest": (str, ""),
    },
    "eval": {
        "metrics": (_parse_str_list, ["fid", "frd"]),
        "extractor": (str, "tiny-conv"),
        "n_subsets": (int, 3),
        "subset_size": (int, 0),
        "identical_real_control": (_parse_bool, False),
        "external_manifest": (str, ""),
    },
}


class ConfigError(ValueError):
    """Itemized validation failure; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n  " + "\n  ".join(problems))


@dataclass
class ExperimentConfig:
    sections: dict[str, dict] = field(default_factory=dict)
    digest: str = ""
    path: Path | None = None

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    @property
    def out_root(self) -> Path:
        return Path(self.sections["experiment"]["out"])


def default_config() -> ExperimentConfig:
    sections = {
        sec: {key: default for key, (_, default) in keys.items()} for sec, keys in SCHEMA.items()
    }
    return ExperimentConfig(sections=sections, digest="defaults")


def _constraint_problems(sections: dict[str, dict]) -> list[str]:
    problems = []
    cls = sections["classify"]
    for regime in cls["regimes"]:
        if regime not in _REGIME_ALIASES:
            problems.append(
                f"classify.regimes: unknown regime {regime!r}; valid: {sorted(_REGIME_ALIASES)}"
            )
    for eps in cls["epsilons"]:
        if eps != float("inf"):
            try:
                PrivacyBudget(epsilon=eps, delta=sections["privacy"]["delta"])
            except ValueError as exc:
                problems.append(f"classify.epsilons: {exc}")
    if not 0 < sections["ingest"]["val_fraction"] < 1:
        problems.append("ingest.val_fraction: must lie in (0, 1)")
    try:
        if sections["privacy"]["delta"] <= 0 or sections["privacy"]["delta"] >= 1:
            problems.append("privacy.delta: must lie in (0, 1)")
    except TypeError:
        pass
    needs_syn = {
        RegimeKind.SYN.value,
        RegimeKind.SYNPRE.value,
        RegimeKind.REAL_PLUS_SYN.value,
        RegimeKind.SYNPRE_REALFT.value,
    }
    uses_files = bool(cls["real_manifest"])
    if uses_files and needs_syn & set(cls["regimes"]) and not cls["syn_manifest"]:
        problems.append(
            "classify.syn_manifest: required by regimes "
            f"{sorted(needs_syn & set(cls['regimes']))} when real_manifest is a file"
        )
    for key in ("real_manifest", "syn_manifest"):
        if cls[key] and not Path(cls[key]).exists():
            problems.append(f"classify.{key}: path {cls[key]!r} does not exist")
    if sections["gan"]["checkpoint"] and not Path(sections["gan"]["checkpoint"]).exists():
        problems.append(f"gan.checkpoint: path {sections['gan']['checkpoint']!r} does not exist")
    if not cls["seeds"]:
        problems.append("classify.seeds: need at least one seed")
    return problems


def validate_config(path: Path | str) -> ExperimentConfig:
    """Parse and validate an INI config, aggregating all problems."""
    path = Path(path)
    raw = path.read_bytes()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(raw.decode("utf-8"))
    except (UnicodeDecodeError, configparser.Error) as exc:
        raise ConfigError([f"unparseable config: {exc}"]) from exc

    problems: list[str] = []
    sections = {
        sec: {key: default for key, (_, default) in keys.items()} for sec, keys in SCHEMA.items()
    }
    for sec in parser.sections():
        if sec not in SCHEMA:
            problems.append(f"unknown section [{sec}]")
            continue
        for key, value in parser.items(sec):
            if key not in SCHEMA[sec]:
                problems.append(f"unknown key {sec}.{key}")
                continue
            parse, _ = SCHEMA[sec][key]
            try:
                sections[sec][key] = parse(value)
            except ValueError as exc:
                problems.append(f"{sec}.{key}: {exc}")

    if not problems:
        problems.extend(_constraint_problems(sections))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        sections=sections, digest=hashlib.sha256(raw).hexdigest(), path=path
    )
