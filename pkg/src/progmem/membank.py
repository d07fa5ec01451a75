"""Key-value memory bank read by soft attention, with progressive slot expansion.

Each slot holds a key and a value of the same width ``d``.  A query ``h`` (the
previous RNN state, so ``d`` equals the hidden width) scores every slot with the
raw dot product ``h·key``; the readout is the attention-weighted sum of values.
Expanding the bank appends freshly initialized slots and leaves the old ones,
and therefore their unnormalized scores, untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Parameter, Tensor, matmul, scale, softmax, transpose

KEYS = "membank.keys"
VALUES = "membank.values"


def default_scale(d: int) -> float:
    return 1.0 / np.sqrt(d)


@dataclass
class MemoryBank:
    """``N`` slots of (key, value) pairs stored as two ``[N, d]`` parameters."""

    dim: int
    keys: Optional[Parameter] = None
    values: Optional[Parameter] = None
    domain_boundaries: list = field(default_factory=list)
    scaled: bool = False

    def __post_init__(self):
        if (self.keys is None) != (self.values is None):
            raise ValueError("keys and values must both be present or both absent")
        if self.keys is not None:
            if self.keys.shape != self.values.shape or self.keys.shape[1] != self.dim:
                raise ValueError(
                    f"key/value shapes {self.keys.shape}, {self.values.shape} "
                    f"do not match slot width {self.dim}")
            if not self.domain_boundaries:
                self.domain_boundaries = [self.n_slots]
        b = self.domain_boundaries
        if any(x > y for x, y in zip(b, b[1:])) or (b and b[-1] != self.n_slots):
            raise ValueError(f"invalid domain boundaries {b} for {self.n_slots} slots")

    @classmethod
    def init(cls, n_slots: int, dim: int, rng: np.random.Generator,
             init_scale: Optional[float] = None, scaled: bool = False) -> "MemoryBank":
        bank = cls(dim=dim, scaled=scaled)
        return expand(bank, n_slots, rng, init_scale)

    @property
    def n_slots(self) -> int:
        return 0 if self.keys is None else self.keys.shape[0]

    def parameters(self) -> list:
        return [] if self.keys is None else [self.keys, self.values]

    def slot(self, j: int):
        return self.keys.data[j], self.values.data[j]


@dataclass
class AttentionWeights:
    """Scores of one or more queries over the bank.

    ``logits`` are ``h·key`` (optionally scaled); ``unnormalized`` is their
    exponential and ``normalized`` the softmax.
    """

    logits: Tensor
    normalized: Tensor

    @property
    def unnormalized(self) -> np.ndarray:
        return np.exp(self.logits.data)


@dataclass
class MemoryReadout:
    content: Tensor


def attend(h_prev: Tensor, bank: MemoryBank, keys_t: Optional[Tensor] = None):
    """Retrieve memory content for query ``h_prev`` (``[d]`` or ``[B, d]``).

    ``keys_t`` lets a caller reuse one transposed key matrix across many steps.
    Returns ``(AttentionWeights, MemoryReadout)``.
    """
    if bank.n_slots == 0:
        raise ValueError("cannot attend over an empty memory bank")
    if h_prev.shape[-1] != bank.dim:
        raise ValueError(f"query width {h_prev.shape[-1]} != slot width {bank.dim}")
    kt = transpose(bank.keys) if keys_t is None else keys_t
    logits = matmul(h_prev, kt)
    if bank.scaled:
        logits = scale(logits, 1.0 / np.sqrt(bank.dim))
    alpha = softmax(logits)
    content = matmul(alpha, bank.values)
    return AttentionWeights(logits, alpha), MemoryReadout(content)


def expand(bank: MemoryBank, n_new: int, rng: np.random.Generator,
           init_scale: Optional[float] = None) -> MemoryBank:
    """Return a bank with ``n_new`` extra slots appended after the existing ones.

    Old rows are copied bitwise.  New keys and values are drawn uniformly from
    ``(-s, s)`` with ``s = init_scale`` or ``1/sqrt(d)``.  ``n_new == 0`` is a
    legal no-op that still records a domain boundary.
    """
    if n_new < 0:
        raise ValueError("slot increment must be non-negative")
    d = bank.dim
    s = default_scale(d) if init_scale is None else init_scale
    n_old = bank.n_slots
    boundaries = list(bank.domain_boundaries) + [n_old + n_new]
    if n_old + n_new == 0:
        return MemoryBank(dim=d, domain_boundaries=boundaries, scaled=bank.scaled)
    new_k = rng.uniform(-s, s, size=(n_new, d))
    new_v = rng.uniform(-s, s, size=(n_new, d))
    if n_old:
        new_k = np.concatenate([bank.keys.data, new_k])
        new_v = np.concatenate([bank.values.data, new_v])
    return MemoryBank(dim=d, keys=Parameter(KEYS, new_k), values=Parameter(VALUES, new_v),
                      domain_boundaries=boundaries, scaled=bank.scaled)


def attention_mass_split(weights: AttentionWeights, boundary: int):
    """Split total unnormalized attention at slot ``boundary``: ``(S_old, S_new)``."""
    u = weights.unnormalized
    n = u.shape[-1]
    if not 0 <= boundary <= n:
        raise ValueError(f"boundary {boundary} outside [0, {n}]")
    return u[..., :boundary].sum(axis=-1), u[..., boundary:].sum(axis=-1)
