"""Single-domain training with early stopping, freezing and an EWC penalty."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tape
from ..data import batch_pad
from ..model import MemoryRNNClassifier
from .adam import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass
class EwcState:
    """Anchor parameters, diagonal Fisher estimates and penalty strength."""

    anchor: dict
    fisher: dict
    lam: float = 1.0

    def penalty(self, params: dict) -> float:
        total = 0.0
        for name, F in self.fisher.items():
            theta = params[name].data[_lead(F.shape)]
            total += float((F * (theta - self.anchor[name]) ** 2).sum())
        return 0.5 * self.lam * total

    def add_grad(self, params: dict) -> None:
        """Add d/dθ of (λ/2)·Σ F(θ-θ*)² to each parameter's grad (leading block)."""
        for name, F in self.fisher.items():
            blk = _lead(F.shape)
            p = params[name]
            p.grad[blk] += self.lam * F * (p.data[blk] - self.anchor[name])


def _lead(shape):
    return tuple(slice(0, n) for n in shape)


def compute_fisher(model: MemoryRNNClassifier, encoded: Sequence, n_samples: int,
                   rng: Optional[np.random.Generator] = None) -> dict:
    """Empirical diagonal Fisher: mean over examples of (d log p(y|x) / dθ)².

    ``encoded`` is a list of ``(ids, label)``; ``n_samples`` of them are drawn
    without replacement (all of them when ``rng`` is None and sizes match).
    """
    params = model.parameters()
    if not all(np.isfinite(p.data).all() for p in params.values()):
        raise ValueError("model has non-finite parameters")
    if n_samples < 1 or n_samples > len(encoded):
        raise ValueError(f"n_samples must be in [1, {len(encoded)}]")
    if rng is None:
        chosen = list(encoded[:n_samples])
    else:
        chosen = [encoded[i] for i in rng.choice(len(encoded), n_samples, replace=False)]
    acc = {k: np.zeros_like(p.data) for k, p in params.items()}
    for ids, label in chosen:
        model.train_step_grads(np.array([ids]), [len(ids)], [label])
        for k, p in params.items():
            acc[k] += p.grad * p.grad
    model.zero_grad()
    return {k: v / n_samples for k, v in acc.items()}


def evaluate(model: MemoryRNNClassifier, encoded: Sequence, batch_size: int = 256):
    """Return ``(accuracy, predictions)``; predictions follow the input order."""
    if not encoded:
        return float("nan"), np.zeros(0, dtype=np.int64)
    order = sorted(range(len(encoded)), key=lambda i: len(encoded[i][0]))
    preds = np.empty(len(encoded), dtype=np.int64)
    ordered = [encoded[i] for i in order]
    pos = 0
    for b in batch_pad(ordered, batch_size):
        n = len(b.labels)
        preds[order[pos:pos + n]] = model.predict(b.tokens, b.lengths)
        pos += n
    labels = np.array([lab for _, lab in encoded])
    return float((preds == labels).mean()), preds


@dataclass
class TrainResult:
    best_valid: float
    best_epoch: int
    epochs_run: int
    history: list = field(default_factory=list)
    best_state: dict = field(default_factory=dict)


def train_domain(model: MemoryRNNClassifier, train: Sequence, valid: Optional[Sequence],
                 epochs: int, optimizer: AdamState, rng: np.random.Generator,
                 batch_size: int = 32, patience: int = 3, frozen: Optional[dict] = None,
                 ewc: Optional[EwcState] = None) -> TrainResult:
    """Mini-batch Adam on one domain, keeping the best-validation parameters.

    ``train``/``valid`` hold ``(ids, label)`` pairs.  Validation accuracy is
    checked after every epoch; training stops after ``patience`` epochs without
    improvement and the parameters of the best trained epoch are restored.
    With ``epochs=0`` the model is returned unchanged.
    """
    if not train:
        raise ValueError("empty training set")
    params = model.parameters()
    best_state = model.state()
    best, best_epoch, bad, history = float("-inf"), 0, 0, []
    epoch = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for b in batch_pad([train[i] for i in order], batch_size):
            losses.append(model.train_step_grads(b.tokens, b.lengths, b.labels))
            if ewc is not None:
                ewc.add_grad(params)
            adam_step(optimizer, params, frozen)
        acc = evaluate(model, valid)[0] if valid else float("nan")
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "valid_acc": acc})
        logger.info("epoch %d loss %.4f valid %.4f", epoch, history[-1]["loss"], acc)
        if not valid or epoch == 1 or acc > best:
            best, best_epoch, bad = acc, epoch, 0
            best_state = model.state()
        else:
            bad += 1
            if bad >= patience:
                break
    model.load_state(best_state)
    return TrainResult(best, best_epoch, epoch, history, best_state)
