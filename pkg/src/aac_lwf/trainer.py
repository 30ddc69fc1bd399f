"""Teacher pre-training and learning-without-forgetting adaptation.

The teacher is trained with cross-entropy and early stopping on validation
SPIDEr. The student starts as an exact copy; each stream batch then costs
``(1 - lam) * CE(targets, student) + lam * KL(teacher || student)`` with both
KL distributions softened by the distillation temperature, and only the
student receives gradients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .data.dataset import Batch, CaptionDataset, Example, StreamConfig, pad_batch, stream_batches
from .data.vocab import Vocabulary
from .errors import NumericError, ParameterError
from .metrics import CaptionScorer, EvalReport, evaluate_dataset
from .model import WaveTransformer, params_digest
from .numerics import AdamState, Tensor

log = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    l_tot: float
    l_new: float
    l_reg: float
    lam: float
    update_index: int = 0
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def identity_holds(self) -> bool:
        return self.l_tot == combine_losses(self.l_new, self.l_reg, self.lam)

    def to_dict(self) -> dict:
        return {"update_index": self.update_index, "lambda": self.lam, "l_tot": self.l_tot,
                "l_new": self.l_new, "l_reg": self.l_reg}

    @classmethod
    def from_dict(cls, d: dict) -> LossBreakdown:
        return cls(l_tot=d["l_tot"], l_new=d["l_new"], l_reg=d["l_reg"], lam=d["lambda"],
                   update_index=d["update_index"])


def _check_lambda(lam: float) -> None:
    if not (0.0 <= lam <= 1.0) or math.isnan(lam):
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")


def combine_losses(l_new: float, l_reg: float, lam: float) -> float:
    return (1.0 - lam) * l_new + lam * l_reg


def total_loss(targets, probs_new_t1: Tensor, probs_new_td: Tensor, probs_base_td: Tensor,
               lam: float, masks=None, update_index: int = 0) -> LossBreakdown:
    """Mix new-data cross-entropy with teacher-to-student KL.

    The returned breakdown carries the differentiable total in ``tensor``.
    """
    _check_lambda(lam)
    l_new = nx.cross_entropy(targets, probs_new_t1, masks)
    l_reg = nx.kl_divergence(probs_base_td, probs_new_td, masks)
    tot = l_new * (1.0 - lam) + l_reg * lam
    return LossBreakdown(l_tot=tot.item(), l_new=l_new.item(), l_reg=l_reg.item(), lam=lam,
                         update_index=update_index, tensor=tot)


@dataclass(frozen=True)
class ContinualRunConfig:
    lam: float = 0.85
    batch_size: int = 4
    distill_temperature: float = 2.0
    checkpoint_updates: tuple[int, ...] = (50, 75, 150)
    eval_at_end: bool = True
    shuffle_seed: int = 0
    alpha: float = 1e-3

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if not self.distill_temperature > 0:
            raise ParameterError("distill_temperature must be positive")
        cps = tuple(int(c) for c in self.checkpoint_updates)
        if any(b <= a for a, b in zip(cps, cps[1:])) or any(c < 1 for c in cps):
            raise ParameterError("checkpoint_updates must be positive and strictly increasing")
        object.__setattr__(self, "checkpoint_updates", cps)


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    max_epochs: int = 200
    batch_size: int = 16
    alpha: float = 1e-3
    seed: int = 0
    target_loss: float | None = None
    monitor: str = "spider"

    def __post_init__(self):
        if self.patience < 1:
            raise ParameterError("patience must be at least 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ParameterError("max_epochs and batch_size must be positive")


def _assert_finite(value: float, what: str, batch: Batch | None = None) -> None:
    if not math.isfinite(value):
        where = f" on batch {batch.clip_ids}" if batch is not None else ""
        raise NumericError(f"non-finite {what}{where}")


def batch_probs(model: WaveTransformer, batch: Batch, temperature: float = 1.0) -> Tensor:
    return model.forward(batch.features, batch.inputs, temperature, lengths=batch.feature_lengths)


def finetune_step(model: WaveTransformer, batch: Batch, state: AdamState) -> float:
    """Plain cross-entropy update; no teacher involved."""
    loss = nx.cross_entropy(batch.targets, batch_probs(model, batch), batch.token_mask)
    _assert_finite(loss.item(), "cross-entropy", batch)
    model.zero_grad()
    nx.backward(loss)
    nx.adam_step(model.params, state)
    return loss.item()


def clone_model(m_base: WaveTransformer) -> WaveTransformer:
    """Independent student with bitwise-equal parameters."""
    return m_base.clone()


def snapshot_params(model: WaveTransformer) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.params.items()}


def load_params(model: WaveTransformer, arrays: dict[str, np.ndarray]) -> None:
    for k, p in model.params.items():
        p.data = np.array(arrays[k], dtype=np.float64, copy=True)


@dataclass
class PretrainResult:
    best_epoch: int
    best_score: float
    log: list[dict]
    stopped_early: bool


def pretrain(model: WaveTransformer, train_set: CaptionDataset, val_set: CaptionDataset, vocab: Vocabulary,
             stop: EarlyStopConfig = EarlyStopConfig(), spice_scorer: CaptionScorer | None = None,
             on_epoch: Callable[[dict], None] | None = None) -> PretrainResult:
    """Train the teacher in place and leave it at its best validation epoch."""
    examples = train_set.examples(vocab)
    state = AdamState(alpha=stop.alpha)
    best_score, best_epoch, best = -math.inf, 0, snapshot_params(model)
    history: list[dict] = []
    bad = 0
    stopped_early = False
    for epoch in range(1, stop.max_epochs + 1):
        order = np.random.default_rng([stop.seed, epoch]).permutation(len(examples))
        losses, weights = [], []
        for start in range(0, len(order), stop.batch_size):
            batch = pad_batch([examples[i] for i in order[start:start + stop.batch_size]])
            losses.append(finetune_step(model, batch, state))
            weights.append(len(batch))
        train_ce = float(np.average(losses, weights=weights))
        report = evaluate_dataset(model, val_set, vocab, spice_scorer)
        score = getattr(report, stop.monitor)
        entry = {"epoch": epoch, "train_ce": train_ce, "val_spider": report.spider,
                 "val_cider": report.cider, "val_spice": report.spice}
        if score > best_score:
            best_score, best_epoch, best = score, epoch, snapshot_params(model)
            bad = 0
        else:
            bad += 1
        entry["best_epoch"] = best_epoch
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d ce=%.4f spider=%.4f", epoch, train_ce, report.spider)
        if stop.target_loss is not None and train_ce < stop.target_loss:
            break
        if bad >= stop.patience:
            stopped_early = True
            break
    load_params(model, best)
    return PretrainResult(best_epoch, best_score, history, stopped_early)


def continual_step(m_base: WaveTransformer, m_new: WaveTransformer, batch: Batch, cfg: ContinualRunConfig,
                   state: AdamState, update_index: int = 0) -> LossBreakdown:
    """One adaptation update of the student on a stream batch."""
    T = cfg.distill_temperature
    with nx.no_grad():
        teacher_logits = m_base.logits(batch.features, batch.inputs, batch.feature_lengths)
    p_base = nx.softmax_t(teacher_logits, T)
    logits = m_new.logits(batch.features, batch.inputs, batch.feature_lengths)
    lb = total_loss(batch.targets, nx.softmax_t(logits, 1.0), nx.softmax_t(logits, T), p_base,
                    cfg.lam, batch.token_mask, update_index)
    _assert_finite(lb.l_tot, "total loss", batch)
    m_new.zero_grad()
    nx.backward(lb.tensor)
    nx.adam_step(m_new.params, state)
    lb.tensor = None
    return lb


@dataclass
class Snapshot:
    update_index: int
    params: dict[str, np.ndarray] = field(repr=False)
    reports: dict[str, EvalReport] = field(default_factory=dict)
    final: bool = False


@dataclass
class ContinualResult:
    trace: list[LossBreakdown]
    snapshots: list[Snapshot]
    teacher_digest_before: str
    teacher_digest_after: str

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def continual_run(m_base: WaveTransformer, m_new: WaveTransformer, stream_examples: Sequence[Example],
                  cfg: ContinualRunConfig, eval_sets: dict[str, CaptionDataset] | None = None,
                  vocab: Vocabulary | None = None, spice_scorer: CaptionScorer | None = None,
                  on_step: Callable[[LossBreakdown], None] | None = None) -> ContinualResult:
    """Single pass over the stream; snapshot and evaluate at the configured updates and at the end."""
    if eval_sets and vocab is None:
        raise ParameterError("evaluation requires the working vocabulary")
    if m_base.config != m_new.config:
        raise ParameterError("teacher and student configs differ")
    m_base.set_trainable(False)
    digest_before = params_digest(m_base.params)
    state = AdamState(alpha=cfg.alpha)
    trace: list[LossBreakdown] = []
    snapshots: list[Snapshot] = []
    checkpoints = set(cfg.checkpoint_updates)

    def take(update_index: int, final: bool) -> None:
        snap = Snapshot(update_index, snapshot_params(m_new), final=final)
        for label, ds in (eval_sets or {}).items():
            snap.reports[label] = evaluate_dataset(m_new, ds, vocab, spice_scorer, update_index=update_index)
        snapshots.append(snap)

    stream = stream_batches(stream_examples, StreamConfig(cfg.batch_size, cfg.shuffle_seed, single_pass=True))
    n = 0
    for batch in stream:
        n += 1
        lb = continual_step(m_base, m_new, batch, cfg, state, update_index=n)
        trace.append(lb)
        if on_step is not None:
            on_step(lb)
        if n in checkpoints:
            take(n, final=False)
    if cfg.eval_at_end:
        if snapshots and snapshots[-1].update_index == n:
            snapshots[-1].final = True
        else:
            take(n, final=True)
    return ContinualResult(trace, snapshots, digest_before, params_digest(m_base.params))
