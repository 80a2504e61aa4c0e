"""Optimization: AdamW with grouped layer-wise learning rates, MAE-loss
finetuning, masked-token pretraining, early stopping and run history.

Parameters fall into three learning-rate groups by depth: embeddings and
the lower third of layers (factor 1.0), the middle third (1.75), and the
upper third plus the output heads (3.5). The factors multiply one base
learning rate; warmup is fixed at zero, so group rates are constant over
a run and stand in the exact ratio 1 : 1.75 : 3.5 at every step.

Runs are reproducible: the run seed drives shuffling, dropout and the
per-epoch re-masking of the pretraining objective, and identical
seed/config/data give bitwise-identical histories and checkpoints.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .encoder import EncoderModel, ensure_mlm_head, forward, mlm_logits
from .tokens import TokenSequence, Vocabulary, dynamic_mask, encode

log = logging.getLogger(__name__)

GROUP_FACTORS = (1.0, 1.75, 3.5)


class NonFiniteGradientError(RuntimeError):
    """A NaN/Inf gradient was about to enter the optimizer."""


@dataclass
class LrGroupPlan:
    """Maps parameter names to the three gLLRD groups."""

    n_layers: int
    base_lr: float = 1e-6
    factors: tuple[float, float, float] = GROUP_FACTORS

    def group_of(self, name: str) -> int:
        if name.startswith(("tok_emb", "pos_emb")):
            return 0
        if name.startswith("layer"):
            layer = int(name[len("layer"):name.index(".")])
            return (3 * layer) // self.n_layers
        return 2  # regression / MLM heads sit with the top group

    def lr_of(self, name: str) -> float:
        return self.base_lr * self.factors[self.group_of(name)]

    def effective_lrs(self) -> tuple[float, float, float]:
        return tuple(self.base_lr * f for f in self.factors)


@dataclass
class OptimizerState:
    """Per-parameter AdamW moments plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(model: EncoderModel, state: OptimizerState, plan: LrGroupPlan,
               clip_norm: float | None = None) -> None:
    """One decoupled-weight-decay Adam update over all gradients in place."""
    grads: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in {name} at step {state.step + 1}")
        grads[name] = p.grad
    if not grads:
        raise ValueError("adamw_step called with no gradients populated")

    if clip_norm is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > clip_norm:
            factor = clip_norm / total
            grads = {n: g * factor for n, g in grads.items()}

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        p = model.params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        if m.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = plan.lr_of(name)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - lr * update


@dataclass
class TrainRunConfig:
    batch_size: int = 12
    max_epochs: int = 100
    early_stopping_patience: int = 5
    warmup_steps: int = 0  # schedules are out of scope; must stay 0
    seed: int = 0
    objective: str = "regression_mae"  # or "mlm"
    base_lr: float = 1e-6
    weight_decay: float = 0.01
    clip_norm: float | None = None
    mask_rate: float = 0.15
    tied_mlm: bool = True

    def __post_init__(self):
        if self.early_stopping_patience < 1:
            raise ValueError("early_stopping_patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_steps != 0:
            raise ValueError("warmup schedules are not supported (warmup_steps must be 0)")
        if self.objective not in ("regression_mae", "mlm"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class TrainResult:
    model: EncoderModel
    history: list[dict]
    best_epoch: int | None = None
    best_val_mae: float | None = None


def encode_labeled(records, vocab: Vocabulary, max_positions: int,
                   require_labels: bool = True) -> tuple[list[TokenSequence], np.ndarray]:
    seqs, labels = [], []
    for rec in records:
        if rec.energy_ev is None:
            if require_labels:
                raise ValueError(f"{rec.system_id}: sample has no energy label")
            labels.append(np.nan)
        else:
            labels.append(float(rec.energy_ev))
        seqs.append(encode(rec.text, vocab, max_positions))
    return seqs, np.asarray(labels)


def predict_energies(model: EncoderModel, seqs: Sequence[TokenSequence],
                     batch_size: int = 32) -> np.ndarray:
    out = []
    for start in range(0, len(seqs), batch_size):
        res = forward(model, list(seqs[start:start + batch_size]))
        out.append(res.energies())
    return np.concatenate(out) if out else np.empty(0)


def train_regression(
    model: EncoderModel,
    train_records,
    val_records,
    run_cfg: TrainRunConfig,
    vocab: Vocabulary,
    plan: LrGroupPlan | None = None,
) -> TrainResult:
    """MAE-loss finetuning with per-epoch validation and early stopping.

    Keeps the checkpoint of the best validation epoch (strictly smaller
    MAE counts as improvement) and stops after `early_stopping_patience`
    epochs without one.
    """
    if not train_records or not val_records:
        raise ValueError("train and validation sets must be non-empty")
    cfg = model.config
    plan = plan or LrGroupPlan(cfg.n_layers, base_lr=run_cfg.base_lr)
    state = OptimizerState(weight_decay=run_cfg.weight_decay)
    train_seqs, train_labels = encode_labeled(train_records, vocab, cfg.max_positions)
    val_seqs, val_labels = encode_labeled(val_records, vocab, cfg.max_positions)
    train_labels = train_labels.astype(cfg.np_dtype)

    history: list[dict] = []
    best_val = np.inf
    best_model = model.clone()
    best_epoch = None
    epochs_since_best = 0

    for epoch in range(1, run_cfg.max_epochs + 1):
        tic = time.perf_counter()
        shuffle_rng = np.random.default_rng([run_cfg.seed, epoch, 0])
        dropout_rng = np.random.default_rng([run_cfg.seed, epoch, 1])
        order = shuffle_rng.permutation(len(train_seqs))
        loss_sum = 0.0
        for start in range(0, len(order), run_cfg.batch_size):
            idx = order[start:start + run_cfg.batch_size]
            batch = [train_seqs[i] for i in idx]
            model.zero_grads()
            res = forward(model, batch, train=cfg.dropout_rate > 0, rng=dropout_rng)
            loss = ag.l1_loss(res.energy, train_labels[idx])
            ag.backward(loss)
            adamw_step(model, state, plan, clip_norm=run_cfg.clip_norm)
            loss_sum += float(loss.data) * len(idx)
        train_mae = loss_sum / len(train_seqs)

        val_pred = predict_energies(model, val_seqs, run_cfg.batch_size)
        val_mae = float(np.mean(np.abs(val_pred - val_labels)))
        history.append({
            "epoch": epoch,
            "train_mae": train_mae,
            "val_mae": val_mae,
            "lrs": list(plan.effective_lrs()),
            "wall_time_s": time.perf_counter() - tic,
        })

        if val_mae < best_val:
            best_val = val_mae
            best_model = model.clone()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= run_cfg.early_stopping_patience:
                break

    return TrainResult(best_model, history, best_epoch, float(best_val))


def _mlm_batch_loss(model, masked_seqs, labels_per_seq):
    row_seq, row_pos, targets = [], [], []
    for b, labels in enumerate(labels_per_seq):
        for pos, original in labels:
            row_seq.append(b)
            row_pos.append(pos)
            targets.append(original)
    if not targets:
        return None
    logits = mlm_logits(model, masked_seqs)
    batch, length, vsize = logits.data.shape
    flat = ag.reshape(logits, (batch * length, vsize))
    rows = np.asarray(row_seq) * length + np.asarray(row_pos)
    picked = ag.take(flat, (rows,))
    return ag.cross_entropy(picked, np.asarray(targets))


def pretrain_mlm(
    model: EncoderModel,
    texts: Sequence[str],
    run_cfg: TrainRunConfig,
    vocab: Vocabulary,
    plan: LrGroupPlan | None = None,
) -> TrainResult:
    """Masked-token pretraining; masks are redrawn every epoch.

    The vocabulary projection is tied to the token embeddings unless
    run_cfg.tied_mlm is False. The returned encoder weights can seed
    regression finetuning (which reinitializes the head).
    """
    if not texts:
        raise ValueError("pretraining corpus is empty")
    cfg = model.config
    ensure_mlm_head(model, tied=run_cfg.tied_mlm, seed=run_cfg.seed)
    plan = plan or LrGroupPlan(cfg.n_layers, base_lr=run_cfg.base_lr)
    state = OptimizerState(weight_decay=run_cfg.weight_decay)
    base_seqs = [encode(t, vocab, cfg.max_positions) for t in texts]
    if len(base_seqs) < run_cfg.batch_size:
        raise ValueError("corpus shorter than one batch")

    history: list[dict] = []
    for epoch in range(1, run_cfg.max_epochs + 1):
        tic = time.perf_counter()
        shuffle_rng = np.random.default_rng([run_cfg.seed, epoch, 0])
        order = shuffle_rng.permutation(len(base_seqs))
        loss_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), run_cfg.batch_size):
            idx = order[start:start + run_cfg.batch_size]
            masked, labels = [], []
            for i in idx:
                # epoch-dependent seed realizes dynamic masking
                mseq, mlabels = dynamic_mask(
                    base_seqs[i], vocab, run_cfg.mask_rate,
                    seed=[run_cfg.seed, epoch, int(i)])
                masked.append(mseq)
                labels.append(mlabels)
            model.zero_grads()
            loss = _mlm_batch_loss(model, masked, labels)
            if loss is None:
                log.warning("epoch %d: batch at %d had no masked positions; skipped",
                            epoch, start)
                continue
            ag.backward(loss)
            adamw_step(model, state, plan, clip_norm=run_cfg.clip_norm)
            loss_sum += float(loss.data)
            n_batches += 1
        history.append({
            "epoch": epoch,
            "mlm_loss": loss_sum / max(n_batches, 1),
            "lrs": list(plan.effective_lrs()),
            "wall_time_s": time.perf_counter() - tic,
        })
    return TrainResult(model, history)


def masked_top1_accuracy(model: EncoderModel, texts: Sequence[str],
                         vocab: Vocabulary, rate: float = 0.15,
                         seed: int = 1234) -> float:
    """Top-1 accuracy of the MLM head on freshly masked positions."""
    hits = total = 0
    for i, text in enumerate(texts):
        seq = encode(text, vocab, model.config.max_positions)
        masked, labels = dynamic_mask(seq, vocab, rate, seed=[seed, i])
        if not labels:
            continue
        logits = mlm_logits(model, [masked]).data[0]
        for pos, original in labels:
            hits += int(np.argmax(logits[pos]) == original)
            total += 1
    return hits / total if total else float("nan")


def write_history(history: list[dict], path: str | Path) -> None:
    """Line-delimited (epoch, split, metric, value) records."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            epoch = row["epoch"]
            for key, value in row.items():
                if key == "epoch":
                    continue
                if key == "lrs":
                    for g, lr in enumerate(value):
                        fh.write(f"{epoch}\ttrain\tlr_group{g}\t{lr!r}\n")
                    continue
                split = "val" if key.startswith("val") else "train"
                fh.write(f"{epoch}\t{split}\t{key}\t{value!r}\n")
