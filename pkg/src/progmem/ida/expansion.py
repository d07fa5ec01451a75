"""Vocabulary growth, parameter-parity sizing and freeze masks."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..data import Vocab
from ..model import MemoryRNNClassifier, count_params


def expand_vocab(model: MemoryRNNClassifier, vocab: Vocab, new_tokens: Sequence[str],
                 rng: np.random.Generator) -> list:
    """Append ``new_tokens`` to ``vocab`` (in place) and grow the embedding to match.

    Returns the ids assigned to the new tokens.
    """
    new_tokens = list(new_tokens)
    dup = [t for t in new_tokens if t in vocab]
    if dup or len(set(new_tokens)) != len(new_tokens):
        raise ValueError(f"tokens already in vocabulary or repeated: {dup[:5] or new_tokens}")
    if len(vocab) != model.embedding.vocab_size:
        raise ValueError("vocabulary and embedding table are out of sync")
    ids = [vocab.add(t) for t in new_tokens]
    model.expand_vocab(len(ids), rng)
    return ids


@dataclass(frozen=True)
class Parity:
    d_extra: int
    memory_added: int
    hidden_added: int


def param_parity(model: MemoryRNNClassifier, n_slots: int) -> Parity:
    """Hidden growth whose parameter count best matches adding ``n_slots`` slots.

    Adding ``M`` slots costs ``2·M·d`` parameters.  The widest hidden growth
    not exceeding that count is returned together with both counts.
    """
    cfg = model.config
    base = count_params(cfg)
    target = 2 * n_slots * cfg.hidden_dim
    extra = 0
    while True:
        added = count_params(replace(cfg, hidden_dim=cfg.hidden_dim + extra + 1)) - base
        if added > target:
            break
        extra += 1
    hidden_added = count_params(replace(cfg, hidden_dim=cfg.hidden_dim + extra)) - base
    return Parity(extra, target, hidden_added)


def freeze_old(model: MemoryRNNClassifier, old_shapes: dict) -> dict:
    """Masks freezing the leading block of every parameter that existed before growth."""
    masks = {}
    for name, p in model.parameters().items():
        shape = old_shapes.get(name)
        if shape is None:
            continue
        m = np.zeros(p.shape, dtype=bool)
        m[tuple(slice(0, n) for n in shape)] = True
        masks[name] = True if m.all() else m
    return masks
