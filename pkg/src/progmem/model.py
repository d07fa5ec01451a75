"""Memory-augmented bidirectional RNN classifier and its three growth operations."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .layers import (GATES, ClassifierHead, EmbeddingTable, RnnCell, classify, embed,
                     encode_batch, uniform_init)
from .membank import MemoryBank, default_scale
from .membank import expand as expand_bank


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int = 3
    embed_dim: int = 64
    hidden_dim: int = 64
    cell: str = "lstm"
    activation: str = "tanh"
    n_slots: int = 32        # paper scale: 500 slots per domain, 300-d states
    use_memory: bool = True
    scaled_attention: bool = False
    slot_init_scale: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class MemoryRNNClassifier:
    """BiRNN sentence classifier whose cells read a shared key-value memory each step.

    The bank's slot width equals the hidden width, since the previous state is
    the attention query.  Both directions consult the same bank.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        E, D = config.embed_dim, config.hidden_dim
        self.embedding = EmbeddingTable(config.vocab_size, E, rng)
        mem = D if config.use_memory else 0
        self.fwd = RnnCell(config.cell, E, D, rng, mem, config.activation, "encoder.fwd")
        self.bwd = RnnCell(config.cell, E, D, rng, mem, config.activation, "encoder.bwd")
        if config.use_memory:
            self.bank = MemoryBank.init(config.n_slots, D, rng, config.slot_init_scale,
                                        scaled=config.scaled_attention)
        else:
            self.bank = None
        self.head = ClassifierHead(D, config.n_classes, rng)

    # ------------------------------------------------------------- parameters
    def parameters(self) -> dict:
        ps = self.embedding.parameters() + self.fwd.parameters() + self.bwd.parameters()
        if self.bank is not None:
            ps += self.bank.parameters()
        ps += self.head.parameters()
        out = {}
        for p in ps:
            if p.name in out:
                raise RuntimeError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state(self, state: dict):
        params = self.parameters()
        for k, v in state.items():
            if params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {params[k].shape} vs {v.shape}")
            params[k].data[...] = v

    def clone(self) -> "MemoryRNNClassifier":
        return copy.deepcopy(self)

    @property
    def hidden_dim(self) -> int:
        return self.fwd.hidden_dim

    # ----------------------------------------------------------------- forward
    def logits(self, tokens, lengths) -> Tensor:
        """Logits ``[B, C]`` for a right-padded id matrix ``[B, T]``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        x = embed(tokens.T.reshape(-1), self.embedding)
        enc = encode_batch(self.fwd, self.bwd, x, lengths, self.bank)
        return classify(self.head, enc)

    def loss(self, tokens, lengths, labels) -> Tensor:
        return ad.cross_entropy(self.logits(tokens, lengths), labels)

    def predict(self, tokens, lengths) -> np.ndarray:
        return self.logits(tokens, lengths).data.argmax(axis=1)

    def train_step_grads(self, tokens, lengths, labels) -> float:
        """Zero grads, run forward/backward on one batch, return the loss."""
        self.zero_grad()
        with Tape() as tape:
            loss = self.loss(tokens, lengths, labels)
        tape.backward(loss)
        return float(loss.data)

    # ---------------------------------------------------------------- growth
    def expand_memory(self, n_new: int, rng: np.random.Generator) -> None:
        if self.bank is None:
            raise ValueError("model has no memory bank")
        self.bank = expand_bank(self.bank, n_new, rng, self.config.slot_init_scale)
        self.config = replace(self.config, n_slots=self.bank.n_slots)

    def expand_vocab(self, n_new: int, rng: np.random.Generator) -> None:
        """Append ``n_new`` embedding rows (old rows kept bitwise)."""
        if n_new < 0:
            raise ValueError("negative vocabulary growth")
        if n_new == 0:
            return
        w = self.embedding.weight
        new_rows = uniform_init(rng, (n_new, w.shape[1]), w.shape[1])
        self.embedding.weight = Parameter(w.name, np.concatenate([w.data, new_rows]))
        self.config = replace(self.config, vocab_size=self.embedding.vocab_size)

    def expand_hidden(self, extra: int, rng: np.random.Generator, zero_new: bool = False) -> None:
        """Widen the hidden state by ``extra`` units in both directions.

        Every array touching the hidden state grows; old values keep their
        leading blocks and the new blocks (including those feeding new units
        into old ones) are freshly initialized, or zero with ``zero_new``.
        Slot width follows the hidden width, so keys and values widen too.
        """
        if extra < 0:
            raise ValueError("negative hidden growth")
        if extra == 0:
            return
        D = self.hidden_dim
        D2 = D + extra
        for cell in (self.fwd, self.bwd):
            G = cell.gates
            cell.w_x = grow(cell.w_x, (G, cell.input_dim, D2), rng, cell.input_dim, zero_new)
            if cell.w_c is not None:
                cell.w_c = grow(cell.w_c, (G, D2, D2), rng, D2, zero_new)
            cell.w_h = grow(cell.w_h, (G, D2, D2), rng, D2, zero_new)
            bias = np.zeros((G, D2))
            if cell.kind == "lstm" and not zero_new:
                bias[1] = 1.0
            bias[:, :D] = cell.bias.data
            cell.bias = Parameter(cell.bias.name, bias)
        if self.bank is not None:
            b = self.bank
            s = default_scale(D2) if self.config.slot_init_scale is None \
                else self.config.slot_init_scale
            keys = grow(b.keys, (b.n_slots, D2), rng, None, zero_new, scale=s)
            values = grow(b.values, (b.n_slots, D2), rng, None, zero_new, scale=s)
            self.bank = MemoryBank(dim=D2, keys=keys, values=values,
                                   domain_boundaries=list(b.domain_boundaries), scaled=b.scaled)
        C = self.head.n_classes
        self.head.weight = grow(self.head.weight, (2, D2, C), rng, 2 * D2, zero_new)
        self.config = replace(self.config, hidden_dim=D2)


def grow(p: Parameter, shape, rng: np.random.Generator, fan_in: Optional[int],
         zero_new: bool = False, scale: Optional[float] = None) -> Parameter:
    """New parameter of ``shape`` holding ``p`` in its leading block.

    The remainder is uniform in ``(-s, s)``, ``s = scale or 1/sqrt(fan_in)``.
    A full random array is drawn first so the random stream consumed depends
    only on the target shape.
    """
    s = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    out = np.zeros(shape) if zero_new else rng.uniform(-s, s, size=shape)
    out[tuple(slice(0, n) for n in p.shape)] = p.data
    return Parameter(p.name, out)


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count of a model built from ``config``."""
    E, D, C, V = config.embed_dim, config.hidden_dim, config.n_classes, config.vocab_size
    G = GATES[config.cell]
    per_cell = G * E * D + G * D * D + G * D
    if config.use_memory:
        per_cell += G * D * D
    total = V * E + 2 * per_cell + 2 * D * C + C
    if config.use_memory:
        total += 2 * config.n_slots * D
    return total


def check_gradients(seed: int = 0, hidden_dim: int = 16, n_slots: int = 4, vocab_size: int = 20,
                    length: int = 5, batch: int = 2, cell: str = "lstm", embed_dim: int = 8,
                    max_per_param: Optional[int] = 24, eps: float = 1e-4):
    """Finite-difference check of the full memory-augmented bidirectional classifier."""
    from .autodiff import grad_check

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(vocab_size=vocab_size, embed_dim=embed_dim, hidden_dim=hidden_dim,
                      cell=cell, n_slots=n_slots)
    model = MemoryRNNClassifier(cfg, rng)
    tokens = rng.integers(0, vocab_size, (batch, length))
    lengths = np.full(batch, length)
    if batch > 1:
        lengths[-1] = max(1, length - 2)
    labels = rng.integers(0, cfg.n_classes, batch)
    return grad_check(lambda: model.loss(tokens, lengths, labels),
                      model.parameters().values(), eps=eps, max_per_param=max_per_param,
                      seed=seed)
