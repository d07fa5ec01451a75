"""Sequential domain training (progressive memory and the competing strategies)."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..data import Vocab, batch_pad, encode_examples
from ..model import MemoryRNNClassifier, ModelConfig
from .adam import AdamState, adam_step
from .checkpoint import save_checkpoint
from .expansion import expand_vocab, freeze_old, param_parity
from .training import EwcState, compute_fisher, evaluate, train_domain

logger = logging.getLogger(__name__)

MEM_EXPAND = "mem_expand"
FINETUNE = "finetune_only"
MEM_FROZEN = "mem_expand_frozen"
HIDDEN_EXPAND = "hidden_expand"
MULTITASK = "multitask"
EWC = "ewc"
METHODS = (MEM_EXPAND, FINETUNE, MEM_FROZEN, HIDDEN_EXPAND, MULTITASK, EWC)

_STREAMS = {"init": 0, "shuffle": 1, "fisher": 2}


def stream(seed: int, stage: int, purpose: str) -> np.random.Generator:
    """Independent random stream per (seed, stage, purpose)."""
    return np.random.default_rng([seed, stage, _STREAMS[purpose]])


@dataclass
class RunConfig:
    """Everything a run needs besides the data.

    Defaults are desk scale.  The reference large-scale setting is 300-d
    embeddings and states, 500 slots added per domain, batch 32, lr 3e-4.
    """

    seed: int = 0
    embed_dim: int = 64
    hidden_dim: int = 64
    cell: str = "lstm"
    n_slots: int = 32
    scaled_attention: bool = False
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    method: str = MEM_EXPAND
    slots: int = 32
    vocab_expand: bool = False
    ewc_lambda: float = 1.0
    fisher_samples: int = 200
    schedule: list = field(default_factory=list)
    data: Optional[str] = None

    _SECTIONS = {"dims": ("embed_dim", "hidden_dim", "cell", "n_slots", "scaled_attention"),
                 "optimizer": ("lr", "beta1", "beta2", "eps", "batch_size")}

    def model_config(self, vocab_size: int, n_classes: int = 3, n_slots=None) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_classes=n_classes,
                           embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
                           cell=self.cell, n_slots=self.n_slots if n_slots is None else n_slots,
                           scaled_attention=self.scaled_attention)

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def to_dict(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in fields(self)}
        out = {}
        for sec, keys in self._SECTIONS.items():
            out[sec] = {k: flat.pop(k) for k in keys}
        out.update(flat)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        flat = {}
        for k, v in d.items():
            if k in cls._SECTIONS:
                flat.update(v)
            else:
                flat[k] = v
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class ScheduleEntry:
    domain: str
    method: str = MEM_EXPAND
    slots: int = 32
    epochs: int = 10
    patience: int = 3
    vocab_expand: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.slots < 0:
            raise ValueError("slot increment must be non-negative")


@dataclass
class DomainSchedule:
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a schedule needs at least one domain")
        methods = {e.method for e in self.entries}
        if MULTITASK in methods and methods != {MULTITASK}:
            raise ValueError("multitask training cannot be part of an incremental schedule")

    @property
    def domains(self) -> list:
        return [e.domain for e in self.entries]

    @property
    def incremental(self) -> bool:
        return self.entries[0].method != MULTITASK

    @classmethod
    def from_config(cls, cfg: RunConfig, domains: Optional[Sequence[str]] = None):
        names = list(domains if domains is not None else cfg.schedule)
        return cls([ScheduleEntry(d, cfg.method, cfg.slots, cfg.epochs, cfg.patience,
                                  cfg.vocab_expand) for d in names])


@dataclass
class SourceState:
    """Trained stage-0 model, reusable across methods that share a seed."""

    model: MemoryRNNClassifier
    vocab: Vocab
    row: list
    predictions: dict
    history: list


@dataclass
class ScheduleResult:
    method: str
    seed: int
    stages: list
    domains: list
    matrix: np.ndarray
    predictions: dict
    labels: dict
    model: MemoryRNNClassifier
    vocab: Vocab
    incremental: bool = True
    histories: list = field(default_factory=list)
    wall_clock: float = 0.0
    vocab_expand: bool = False


def _encode_tests(data, domains, vocab):
    return {d: encode_examples(data[d]["test"], vocab) for d in domains}


def _eval_row(model, tests: dict, domains):
    row, preds = [], {}
    for d in domains:
        acc, p = evaluate(model, tests[d])
        row.append(acc)
        preds[d] = p
    return row, preds


def train_source(entry: ScheduleEntry, data: dict, cfg: RunConfig,
                 eval_domains: Sequence[str]) -> SourceState:
    """Build the vocabulary and model for the first domain and train it."""
    vocab = Vocab()
    train_ex = data[entry.domain]["train"]
    for ex in train_ex:
        vocab.extend(ex.tokens)
    model = MemoryRNNClassifier(cfg.model_config(len(vocab)), stream(cfg.seed, 0, "init"))
    res = train_domain(model, encode_examples(train_ex, vocab),
                       encode_examples(data[entry.domain]["valid"], vocab),
                       entry.epochs, cfg.adam(), stream(cfg.seed, 0, "shuffle"),
                       cfg.batch_size, entry.patience)
    row, preds = _eval_row(model, _encode_tests(data, eval_domains, vocab), eval_domains)
    return SourceState(model, vocab, row, preds, [res.history])


def run_schedule(schedule: DomainSchedule, data: dict, cfg: RunConfig,
                 out_dir=None, eval_domains: Optional[Sequence[str]] = None,
                 source: Optional[SourceState] = None) -> ScheduleResult:
    """Train through the schedule; after each stage evaluate on every domain.

    ``data[domain]`` maps split names to example lists.  Stage ``k`` only
    reads the training and validation data of its own domain; test splits of
    all domains are used for the (stage × domain) accuracy matrix, whose upper
    triangle is zero-shot performance.  ``source`` reuses a trained stage 0.
    """
    t0 = time.time()
    domains = list(eval_domains or schedule.domains)
    missing = [d for d in set(schedule.domains) | set(domains) if d not in data]
    if missing:
        raise ValueError(f"no data for domains {sorted(missing)}")
    if not schedule.incremental:
        return _run_multitask(schedule, data, cfg, domains, out_dir, t0)

    first = schedule.entries[0]
    src = source if source is not None else train_source(first, data, cfg, domains)
    model = src.model.clone()
    vocab = Vocab.from_list(src.vocab.to_list())
    rows, histories, preds = [list(src.row)], list(src.history), dict(src.predictions)
    method = schedule.entries[-1].method if len(schedule.entries) > 1 else first.method
    ewc_state = None
    if out_dir is not None:
        _save_stage(model, vocab, out_dir, 0, first, cfg)

    for k, entry in enumerate(schedule.entries[1:], start=1):
        prev = schedule.entries[k - 1]
        if entry.method == EWC:
            ewc_state = _update_ewc(ewc_state, model, data[prev.domain]["train"], vocab, cfg, k - 1)
        init_rng = stream(cfg.seed, k, "init")
        old_shapes = {n: p.shape for n, p in model.parameters().items()}
        train_ex = data[entry.domain]["train"]
        if entry.vocab_expand:
            seen, new = set(), []
            for ex in train_ex:
                for t in ex.tokens:
                    if t not in vocab and t not in seen:
                        seen.add(t)
                        new.append(t)
            expand_vocab(model, vocab, new, init_rng)
        if entry.method in (MEM_EXPAND, MEM_FROZEN):
            model.expand_memory(entry.slots, init_rng)
        elif entry.method == HIDDEN_EXPAND:
            model.expand_hidden(param_parity(model, entry.slots).d_extra, init_rng)
        frozen = freeze_old(model, old_shapes) if entry.method == MEM_FROZEN else None
        res = train_domain(model, encode_examples(train_ex, vocab),
                           encode_examples(data[entry.domain]["valid"], vocab),
                           entry.epochs, cfg.adam(), stream(cfg.seed, k, "shuffle"),
                           cfg.batch_size, entry.patience, frozen,
                           ewc_state if entry.method == EWC else None)
        histories.append(res.history)
        row, preds = _eval_row(model, _encode_tests(data, domains, vocab), domains)
        rows.append(row)
        if out_dir is not None:
            _save_stage(model, vocab, out_dir, k, entry, cfg)
        logger.info("stage %d (%s, %s): %s", k, entry.domain, entry.method,
                    " ".join(f"{a:.3f}" for a in row))

    labels = {d: np.array([lab for _, lab in encode_examples(data[d]["test"], vocab)])
              for d in domains}
    stages = [" -> ".join(schedule.domains[:k + 1]) for k in range(len(schedule.entries))]
    return ScheduleResult(method, cfg.seed, stages, domains, np.array(rows), preds, labels,
                          model, vocab, True, histories, time.time() - t0,
                          any(e.vocab_expand for e in schedule.entries[1:]))


def _update_ewc(state: Optional[EwcState], model, train_ex, vocab, cfg: RunConfig, stage: int):
    """Single running anchor; Fisher estimates accumulate across finished domains."""
    enc = encode_examples(train_ex, vocab)
    F = compute_fisher(model, enc, min(cfg.fisher_samples, len(enc)),
                       stream(cfg.seed, stage, "fisher"))
    if state is not None:
        for name, old in state.fisher.items():
            F[name][tuple(slice(0, n) for n in old.shape)] += old
    anchor = {k: p.data.copy() for k, p in model.parameters().items()}
    return EwcState(anchor, F, cfg.ewc_lambda)


def _save_stage(model, vocab, out_dir, k, entry, cfg):
    meta = {"stage": k, "domain": entry.domain, "method": entry.method, "seed": cfg.seed}
    save_checkpoint(model, Path(out_dir) / f"stage{k}_{entry.domain}.pmem", vocab, meta)


def _run_multitask(schedule, data, cfg: RunConfig, domains, out_dir, t0) -> ScheduleResult:
    """Joint training on every scheduled domain (not incremental)."""
    names = schedule.domains
    entry = schedule.entries[0]
    vocab = Vocab()
    for d in names:
        for ex in data[d]["train"]:
            vocab.extend(ex.tokens)
    n_slots = cfg.n_slots + sum(e.slots for e in schedule.entries[1:])
    model = MemoryRNNClassifier(cfg.model_config(len(vocab), n_slots=n_slots),
                                stream(cfg.seed, 0, "init"))
    train = {d: encode_examples(data[d]["train"], vocab) for d in names}
    valid = {d: encode_examples(data[d]["valid"], vocab) for d in names}
    rng = stream(cfg.seed, 0, "shuffle")
    opt = cfg.adam()
    params = model.parameters()

    def mean_valid():
        return float(np.mean([evaluate(model, valid[d])[0] for d in names]))

    best, best_state, bad, history = float("-inf"), model.state(), 0, []
    for epoch in range(1, entry.epochs + 1):
        queues = {d: batch_pad([train[d][i] for i in rng.permutation(len(train[d]))],
                               cfg.batch_size)[::-1] for d in names}
        losses = []
        while any(queues.values()):
            live = [d for d in names if queues[d]]
            b = queues[live[int(rng.integers(len(live)))]].pop()
            losses.append(model.train_step_grads(b.tokens, b.lengths, b.labels))
            adam_step(opt, params)
        acc = mean_valid()
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "valid_acc": acc})
        if acc > best:
            best, best_state, bad = acc, model.state(), 0
        else:
            bad += 1
            if bad >= entry.patience:
                break
    model.load_state(best_state)
    row, preds = _eval_row(model, _encode_tests(data, domains, vocab), domains)
    if out_dir is not None:
        _save_stage(model, vocab, out_dir, 0, entry, cfg)
    labels = {d: np.array([lab for _, lab in encode_examples(data[d]["test"], vocab)])
              for d in domains}
    return ScheduleResult(MULTITASK, cfg.seed, [" + ".join(names)], domains, np.array([row]),
                          preds, labels, model, vocab, False, [history], time.time() - t0)
