"""Malignancy classification harness: five training regimes, DP optional.

Regimes follow the data-mix / trainable-parameter policies:

- real:          head-only on real data (DP when a budget is set)
- syn:           head-only on synthetic data (DP when a budget is set)
- synpre:        all parameters on synthetic data, never private
- real+syn:      head-only on real + synthetic concatenated (DP optional)
- synpre+realft: synpre stage, then a private fine-tune of the last two
                 layers (head + final norm) on real data

Private steps route per-sample gradients through the dpsgd clip/noise path
and advance the accountant ledger by one event per step; training halts no
later than the step whose spend would exceed the budget.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .accountant import (
    AccountantLedger,
    DpSgdConfig,
    PrivacyBudget,
    accumulate_rdp,
    calibrate_sigma,
    epsilon_at_delta,
)
from .dpsgd import NonFiniteGradientError, clip_per_sample, noisy_aggregate, poisson_sample
from .ingest import MassPatch, resize_for_classifier
from .metrics import auprc, auroc
from .swin import SwinConfig, TinySwin, init_weights

HEAD_PREFIXES = ("head.",)
LAST_TWO_PREFIXES = ("head.", "norm.")


class RegimeKind(str, Enum):
    REAL = "real"
    SYN = "syn"
    SYNPRE = "synpre"
    REAL_PLUS_SYN = "real+syn"
    SYNPRE_REALFT = "synpre+realft"


class TrainablePolicy(str, Enum):
    HEAD_ONLY = "head-only"
    ALL_PARAMS = "all-params"
    LAST_TWO = "last-two-layers"


POLICY_BY_KIND = {
    RegimeKind.REAL: TrainablePolicy.HEAD_ONLY,
    RegimeKind.SYN: TrainablePolicy.HEAD_ONLY,
    RegimeKind.SYNPRE: TrainablePolicy.ALL_PARAMS,
    RegimeKind.REAL_PLUS_SYN: TrainablePolicy.HEAD_ONLY,
    # two-stage regime: the fine-tune stage policy
    RegimeKind.SYNPRE_REALFT: TrainablePolicy.LAST_TWO,
}


@dataclass
class TrainRegime:
    kind: RegimeKind
    privacy: PrivacyBudget | None = None
    last_two_prefixes: tuple[str, ...] = LAST_TWO_PREFIXES

    def __post_init__(self):
        if self.kind is RegimeKind.SYNPRE and self.privacy is not None:
            raise ValueError("synpre pretraining is non-private by definition")

    @property
    def trainable_policy(self) -> TrainablePolicy:
        return POLICY_BY_KIND[self.kind]


@dataclass
class FitConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-8
    label_smoothing: float = 0.1
    batch_size: int = 128
    epochs: int = 300
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if min(self.lr, self.weight_decay, self.batch_size, self.epochs) <= 0:
            raise ValueError("lr, weight_decay, batch_size, epochs must be positive")


@dataclass
class CheckpointRecord:
    epoch: int
    params_digest: str
    val_auroc: float
    val_auprc: float
    spent_epsilon: float | None = None
    state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (0 <= self.val_auroc <= 1 and 0 <= self.val_auprc <= 1):
            raise ValueError("metrics must lie in [0, 1]")


@dataclass
class ClassifierModel:
    net: TinySwin
    trainable_mask: dict[str, bool]

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.net.named_parameters() if self.trainable_mask[n]]

    def apply_mask(self) -> None:
        for name, param in self.net.named_parameters():
            param.requires_grad_(self.trainable_mask[name])

    def mask_report(self) -> dict[str, int]:
        trainable = sum(p.numel() for n, p in self.net.named_parameters() if self.trainable_mask[n])
        total = sum(p.numel() for p in self.net.parameters())
        return {"trainable": int(trainable), "frozen": int(total - trainable)}


def _mask_for(policy: TrainablePolicy, net: TinySwin, last_two: tuple[str, ...]) -> dict[str, bool]:
    prefixes = {
        TrainablePolicy.HEAD_ONLY: HEAD_PREFIXES,
        TrainablePolicy.LAST_TWO: last_two,
        TrainablePolicy.ALL_PARAMS: ("",),
    }[policy]
    return {
        name: any(name.startswith(p) for p in prefixes) for name, _ in net.named_parameters()
    }


def build_classifier(
    backbone_weights: dict | str | None,
    regime: TrainRegime,
    arch: SwinConfig = SwinConfig(),
    policy: TrainablePolicy | None = None,
) -> ClassifierModel:
    """Backbone + fresh 2-logit head, trainable mask set per regime.

    ``backbone_weights`` is a state dict (or path to one) from a compatible
    network; the final fully-connected layer is always replaced and
    reinitialized with two output nodes.
    """
    net = TinySwin(arch)
    init_weights(net, arch.seed)
    if backbone_weights is not None:
        state = backbone_weights
        if not isinstance(state, dict):
            state = torch.load(state, weights_only=True)
        missing, unexpected = net.load_state_dict(state, strict=False)
        unexpected = [k for k in unexpected if not k.startswith("head.")]
        really_missing = [k for k in missing if not k.startswith("head.")]
        if really_missing or unexpected:
            raise ValueError(
                f"backbone weights incompatible: missing {really_missing}, unexpected {unexpected}"
            )
    head = nn.Linear(arch.out_dim, 2)
    init_weights(head, arch.seed + 101)
    net.head = head
    mask = _mask_for(policy or regime.trainable_policy, net, regime.last_two_prefixes)
    model = ClassifierModel(net=net, trainable_mask=mask)
    model.apply_mask()
    return model


def patches_to_tensors(patches: Sequence[MassPatch]) -> tuple[torch.Tensor, torch.Tensor]:
    """Resize patches to the 224x224x3 contract and stack with labels."""
    xs = np.stack([resize_for_classifier(p).transpose(2, 0, 1) for p in patches])
    ys = np.array([int(p.label) for p in patches], dtype=np.int64)
    return torch.from_numpy(xs.astype(np.float32)), torch.from_numpy(ys)


def _flip_batch(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    flips_h = rng.random(x.shape[0]) < 0.5
    flips_v = rng.random(x.shape[0]) < 0.5
    x = x.clone()
    for i in range(x.shape[0]):
        if flips_h[i]:
            x[i] = torch.flip(x[i], dims=(2,))
        if flips_v[i]:
            x[i] = torch.flip(x[i], dims=(1,))
    return x


def predict(model: ClassifierModel, patches: Sequence[MassPatch] | torch.Tensor) -> np.ndarray:
    """P(malignant) per patch via softmax over the two logits."""
    if isinstance(patches, torch.Tensor):
        x = patches
    else:
        x, _ = patches_to_tensors(patches)
    model.net.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], 64):
            logits = model.net(x[start : start + 64])
            probs.append(torch.softmax(logits, dim=1)[:, 1].numpy())
    return np.concatenate(probs) if probs else np.zeros(0)


def _digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for key, tensor in sorted(net.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().numpy().tobytes())
    return h.hexdigest()


def _snapshot(net: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


def _eval_record(
    model: ClassifierModel,
    x_val: torch.Tensor,
    y_val: torch.Tensor,
    epoch: int,
    spent: float | None,
) -> CheckpointRecord:
    scores = predict(model, x_val)
    return CheckpointRecord(
        epoch=epoch,
        params_digest=_digest(model.net),
        val_auroc=auroc(scores, y_val.numpy()),
        val_auprc=auprc(scores, y_val.numpy()),
        spent_epsilon=spent,
        state=_snapshot(model.net),
    )


def train_nonprivate(
    model: ClassifierModel,
    train: Sequence[MassPatch],
    val: Sequence[MassPatch],
    fit: FitConfig,
) -> list[CheckpointRecord]:
    """Smoothed cross-entropy over shuffled minibatches; flips as sole augmentation."""
    if not train:
        raise ValueError("empty training manifest")
    x_train, y_train = patches_to_tensors(train)
    x_val, y_val = patches_to_tensors(val)
    model.apply_mask()
    params = [p for _, p in model.trainable_parameters()]
    opt = torch.optim.AdamW(params, lr=fit.lr, weight_decay=fit.weight_decay)
    loss_fn = nn.CrossEntropyLoss(label_smoothing=fit.label_smoothing)

    records = []
    n = len(train)
    for epoch in range(1, fit.epochs + 1):
        model.net.train()
        order = np.random.default_rng([fit.seed, 3, epoch]).permutation(n)
        for start in range(0, n, fit.batch_size):
            idx = order[start : start + fit.batch_size]
            xb = x_train[idx]
            if fit.augment:
                xb = _flip_batch(xb, np.random.default_rng([fit.seed, 5, epoch, start]))
            opt.zero_grad()
            loss = loss_fn(model.net(xb), y_train[idx])
            loss.backward()
            opt.step()
        records.append(_eval_record(model, x_val, y_val, epoch, None))
    return records


def smoothed_ce_loss(logits: torch.Tensor, targets: torch.Tensor, smoothing: float) -> torch.Tensor:
    return nn.functional.cross_entropy(logits, targets, label_smoothing=smoothing)


def _per_sample_grads(
    model: ClassifierModel,
    xb: torch.Tensor,
    yb: torch.Tensor,
    smoothing: float,
) -> list[np.ndarray]:
    """Microbatched per-sample gradients over trainable parameters, flattened."""
    params = [p for _, p in model.trainable_parameters()]
    grads = []
    for i in range(xb.shape[0]):
        model.net.zero_grad(set_to_none=True)
        loss = smoothed_ce_loss(model.net(xb[i : i + 1]), yb[i : i + 1], smoothing)
        loss.backward()
        flat = torch.cat(
            [
                (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
                for p in params
            ]
        )
        grads.append(flat.detach().numpy().astype(np.float64))
    model.net.zero_grad(set_to_none=True)
    return grads


def _write_flat_grad(model: ClassifierModel, flat: np.ndarray) -> None:
    params = [p for _, p in model.trainable_parameters()]
    offset = 0
    tensor = torch.from_numpy(flat.astype(np.float32))
    for p in params:
        p.grad = tensor[offset : offset + p.numel()].view(p.shape).clone()
        offset += p.numel()


def train_private(
    model: ClassifierModel,
    train: Sequence[MassPatch],
    val: Sequence[MassPatch],
    fit: FitConfig,
    dp: DpSgdConfig | PrivacyBudget,
    delta: float | None = None,
    clip_norm: float = 1.0,
    ledger: AccountantLedger | None = None,
) -> list[CheckpointRecord]:
    """DP-SGD training: Poisson batches, clipped per-sample grads, noisy updates.

    When ``dp`` is a PrivacyBudget the noise multiplier is calibrated for the
    planned step count; training stops before any step whose spend would
    exceed the budget, and every checkpoint records the spent epsilon.
    """
    if not train:
        raise ValueError("empty training manifest")
    n = len(train)
    steps_per_epoch = max(1, round(n / fit.batch_size))
    planned_steps = fit.epochs * steps_per_epoch

    if isinstance(dp, PrivacyBudget):
        q = min(1.0, fit.batch_size / n)
        sigma = calibrate_sigma(dp, q, planned_steps)
        config = DpSgdConfig(
            clip_norm=clip_norm, noise_multiplier=sigma, sampling_rate=q, steps=planned_steps
        )
        budget: PrivacyBudget | None = dp
    else:
        config = dp
        q = config.sampling_rate
        budget = (
            None if delta is None else PrivacyBudget(epsilon=float("inf"), delta=delta)
        )
    eff_delta = delta if delta is not None else (budget.delta if budget else 1e-4)

    x_train, y_train = patches_to_tensors(train)
    x_val, y_val = patches_to_tensors(val)
    model.apply_mask()
    params = [p for _, p in model.trainable_parameters()]
    opt = torch.optim.AdamW(params, lr=fit.lr, weight_decay=fit.weight_decay)
    ledger = ledger if ledger is not None else AccountantLedger()
    noise_rng = np.random.default_rng([fit.seed, 29])

    expected_batch = q * n
    records: list[CheckpointRecord] = []
    step = 0
    spent = 0.0
    halted = False
    for epoch in range(1, fit.epochs + 1):
        model.net.train()
        for _ in range(steps_per_epoch):
            next_ledger = accumulate_rdp(ledger, q, config.noise_multiplier, 1)
            next_eps, _ = epsilon_at_delta(next_ledger, eff_delta)
            if budget is not None and budget.epsilon != float("inf") and next_eps > budget.epsilon:
                halted = True
                break
            idx = poisson_sample(n, q, np.random.default_rng([fit.seed, 7, step]))
            xb, yb = x_train[idx], y_train[idx]
            if fit.augment and len(idx):
                xb = _flip_batch(xb, np.random.default_rng([fit.seed, 11, step]))
            if len(idx):
                per_sample = _per_sample_grads(model, xb, yb, fit.label_smoothing)
                for g in per_sample:
                    if not np.all(np.isfinite(g)):
                        raise NonFiniteGradientError("non-finite per-sample gradient")
                clipped = clip_per_sample(per_sample, config.clip_norm)
            else:
                clipped = []
            dim = int(sum(p.numel() for p in params))
            noisy = noisy_aggregate(
                clipped, config.noise_multiplier, config.clip_norm, expected_batch, noise_rng, dim=dim
            )
            _write_flat_grad(model, noisy)
            opt.step()
            opt.zero_grad(set_to_none=True)
            ledger = next_ledger
            spent, _ = epsilon_at_delta(ledger, eff_delta)
            step += 1
        records.append(_eval_record(model, x_val, y_val, epoch, spent))
        if halted:
            break
    return records


def select_best(records: Sequence[CheckpointRecord], select_lowest: bool = False) -> CheckpointRecord:
    """Checkpoint with the best validation AUPRC; ties go to the earliest epoch.

    ``select_lowest`` preserves the literal worst-AUPRC selection rule for
    comparison runs.
    """
    if not records:
        raise ValueError("no checkpoints to select from")
    best = records[0]
    for rec in records[1:]:
        if (rec.val_auprc < best.val_auprc) if select_lowest else (rec.val_auprc > best.val_auprc):
            best = rec
    return best


def render_budget(kind: RegimeKind, budget: PrivacyBudget | None) -> str:
    """Machine-readable budget string; two-stage regimes render as 'inf|eps'."""
    eps = "inf" if budget is None else format(budget.epsilon, "g")
    if kind is RegimeKind.SYNPRE_REALFT:
        return f"inf|{eps}"
    if kind is RegimeKind.SYNPRE:
        return "inf"
    return eps


def render_delta(kind: RegimeKind, budget: PrivacyBudget | None) -> str:
    delta = "inf" if budget is None else format(budget.delta, "g")
    if kind is RegimeKind.SYNPRE_REALFT:
        return f"inf|{delta}"
    if kind is RegimeKind.SYNPRE:
        return "inf"
    return delta


@dataclass
class RegimeReport:
    kind: RegimeKind
    budget: str
    delta: str
    records: list[CheckpointRecord]
    selected: CheckpointRecord
    spent_epsilon: float | None
    mask_report: dict
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "regime": self.kind.value,
            "budget": self.budget,
            "delta": self.delta,
            "epochs": [
                {
                    "epoch": r.epoch,
                    "val_auroc": r.val_auroc,
                    "val_auprc": r.val_auprc,
                    "spent_epsilon": r.spent_epsilon,
                }
                for r in self.records
            ],
            "selected_epoch": self.selected.epoch,
            "val_auroc": self.selected.val_auroc,
            "val_auprc": self.selected.val_auprc,
            "spent_epsilon": self.spent_epsilon,
            "trainable": self.mask_report,
            "notes": self.notes,
        }


def run_regime(
    kind: RegimeKind,
    real_train: Sequence[MassPatch],
    real_val: Sequence[MassPatch],
    syn_train: Sequence[MassPatch] | None,
    fit: FitConfig,
    budget: PrivacyBudget | None = None,
    arch: SwinConfig = SwinConfig(),
    backbone_weights: dict | None = None,
    select_lowest: bool = False,
) -> tuple[ClassifierModel, RegimeReport]:
    """Execute one training regime end to end and report its metrics."""
    needs_syn = kind in (
        RegimeKind.SYN,
        RegimeKind.SYNPRE,
        RegimeKind.REAL_PLUS_SYN,
        RegimeKind.SYNPRE_REALFT,
    )
    if needs_syn and not syn_train:
        raise ValueError(f"regime {kind.value} requires a synthetic manifest")
    notes: list[str] = []

    if kind is RegimeKind.SYNPRE_REALFT:
        pre_regime = TrainRegime(kind=RegimeKind.SYNPRE)
        model = build_classifier(backbone_weights, pre_regime, arch)
        pre_records = train_nonprivate(model, syn_train, real_val, fit)
        notes.append(f"pretrain stage: {len(pre_records)} epochs on synthetic, all params")
        ft_regime = TrainRegime(kind=kind, privacy=budget)
        model.trainable_mask = _mask_for(TrainablePolicy.LAST_TWO, model.net, ft_regime.last_two_prefixes)
        model.apply_mask()
        if budget is not None:
            records = train_private(model, real_train, real_val, fit, budget)
        else:
            records = train_nonprivate(model, real_train, real_val, fit)
            notes.append("fine-tune stage ran non-private (no budget)")
        all_records = records
    else:
        if kind is RegimeKind.SYNPRE and budget is not None:
            notes.append("synpre is non-private by definition; requested budget ignored")
            budget = None
        regime = TrainRegime(kind=kind, privacy=budget)
        model = build_classifier(backbone_weights, regime, arch)
        if kind is RegimeKind.REAL:
            data = list(real_train)
        elif kind is RegimeKind.SYN:
            data = list(syn_train)
        elif kind is RegimeKind.SYNPRE:
            data = list(syn_train)
        else:  # REAL_PLUS_SYN
            data = list(real_train) + list(syn_train)
        if kind is RegimeKind.SYN:
            leaked = [p for p in data if not p.is_synthetic]
            if leaked:
                raise ValueError(f"syn regime must not touch real images; found {len(leaked)}")
        if budget is not None:
            all_records = train_private(model, data, real_val, fit, budget)
        else:
            all_records = train_nonprivate(model, data, real_val, fit)

    selected = select_best(all_records, select_lowest=select_lowest)
    spent = all_records[-1].spent_epsilon if all_records else None
    report = RegimeReport(
        kind=kind,
        budget=render_budget(kind, budget),
        delta=render_delta(kind, budget),
        records=all_records,
        selected=selected,
        spent_epsilon=spent,
        mask_report=model.mask_report(),
        notes=notes,
    )
    model.net.load_state_dict(selected.state)
    return model, report
