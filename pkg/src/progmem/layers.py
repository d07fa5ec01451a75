"""Embedding table, recurrent cells, bidirectional encoder and classifier head.

Gate weights are stored as ``[G, rows, D]`` stacks (one ``rows × D`` block per
gate) so that growing the hidden width keeps every old block in the leading
corner of its array.  At forward time each stack is flattened once to a
``rows × G·D`` matrix with gates side by side.

The memory readout is concatenated to the token embedding as cell input; its
weight block is kept separately as ``w_c`` so the per-token embedding part can
be projected for the whole sequence in one product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .membank import MemoryBank, attend

GATES = {"vanilla": 1, "gru": 3, "lstm": 4}


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


class EmbeddingTable:
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 name: str = "embedding.weight"):
        self.weight = Parameter(name, uniform_init(rng, (vocab_size, dim), dim))

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight]


def embed(tokens, table: EmbeddingTable) -> Tensor:
    """Gather embedding rows for an id array (any shape)."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and ids.max() >= table.vocab_size:
        raise ValueError(
            f"token id {int(ids.max())} outside vocabulary of size {table.vocab_size}; "
            "map unknown tokens to UNK first")
    return ad.gather_rows(table.weight, ids)


class RnnCell:
    """Vanilla, GRU or LSTM transition with optional memory-readout input block.

    Parameters are ``w_x [G, input_dim, D]``, ``w_c [G, mem_dim, D]`` (only if
    ``mem_dim``), ``w_h [G, D, D]`` and ``bias [G, D]``.  LSTM gates are ordered
    (i, f, g, o), GRU gates (r, z, n).
    """

    def __init__(self, kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 mem_dim: int = 0, activation: str = "tanh", prefix: str = "cell"):
        if kind not in GATES:
            raise ValueError(f"unknown cell kind {kind!r}")
        self.kind = kind
        self.activation = activation
        self.prefix = prefix
        G = GATES[kind]
        D = hidden_dim
        self.w_x = Parameter(f"{prefix}.w_x", uniform_init(rng, (G, input_dim, D), input_dim))
        self.w_c = Parameter(f"{prefix}.w_c", uniform_init(rng, (G, mem_dim, D), mem_dim)) \
            if mem_dim else None
        self.w_h = Parameter(f"{prefix}.w_h", uniform_init(rng, (G, D, D), D))
        bias = np.zeros((G, D))
        if kind == "lstm":
            bias[1] = 1.0
        self.bias = Parameter(f"{prefix}.bias", bias)

    @property
    def gates(self) -> int:
        return GATES[self.kind]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[-1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def mem_dim(self) -> int:
        return 0 if self.w_c is None else self.w_c.shape[1]

    def parameters(self):
        return [p for p in (self.w_x, self.w_c, self.w_h, self.bias) if p is not None]

    def prepare(self) -> "PreparedCell":
        """Flatten the gate stacks into matrices for one forward pass."""
        G, D = self.gates, self.hidden_dim
        wx = _stack(self.w_x)
        wc = _stack(self.w_c) if self.w_c is not None else None
        wh = _stack(self.w_h)
        b = ad.reshape(self.bias, (G * D,))
        if self.kind == "gru":
            wh_rz = ad.take(wh, 0, 2 * D, axis=1)
            wh_n = ad.take(wh, 2 * D, 3 * D, axis=1)
            return PreparedCell(self.kind, self.activation, D, wx, wc, None, b, wh_rz, wh_n)
        return PreparedCell(self.kind, self.activation, D, wx, wc, wh, b)


def _stack(p: Tensor) -> Tensor:
    G, rows, D = p.shape
    return ad.reshape(ad.permute(p, (1, 0, 2)), (rows, G * D))


@dataclass
class PreparedCell:
    kind: str
    activation: str
    D: int
    wx: Tensor
    wc: Optional[Tensor]
    wh: Optional[Tensor]
    b: Tensor
    wh_rz: Optional[Tensor] = None
    wh_n: Optional[Tensor] = None

    def transition(self, xproj: Tensor, h: Tensor, c: Optional[Tensor]):
        """One step given the input projection ``x·W_x + c·W_c + b``."""
        if self.kind == "gru":
            D = self.D
            hr = ad.matmul(h, self.wh_rz)
            xr = ad.take(xproj, 0, 2 * D, axis=-1)
            rz = ad.sigmoid(ad.add(xr, hr))
            r = ad.take(rz, 0, D, axis=-1)
            z = ad.take(rz, D, 2 * D, axis=-1)
            xn = ad.take(xproj, 2 * D, 3 * D, axis=-1)
            n = ad.tanh(ad.add(xn, ad.matmul(ad.mul(r, h), self.wh_n)))
            return ad.add(n, ad.mul(z, ad.sub(h, n))), None
        pre = ad.add(xproj, ad.matmul(h, self.wh))
        if self.kind == "lstm":
            return ad.lstm_cell(pre, c)
        return ad.activation(pre, self.activation), None


def rnn_step(cell: RnnCell, h_prev: Tensor, inp: Tensor, cstate_prev: Optional[Tensor] = None):
    """Single transition on an input that already includes any memory readout.

    ``inp`` has width ``input_dim + mem_dim``; ``cstate_prev`` must be given iff
    the cell is an LSTM.  Returns ``(h, cstate)``.
    """
    D = cell.hidden_dim
    width = cell.input_dim + cell.mem_dim
    if h_prev.shape[-1] != D or inp.shape[-1] != width:
        raise ValueError(
            f"rnn_step dimension mismatch: h {h_prev.shape}, input {inp.shape}; "
            f"cell expects hidden {D}, input {width}")
    if (cstate_prev is not None) != (cell.kind == "lstm"):
        raise ValueError("cell state must be supplied exactly for LSTM cells")
    pc = cell.prepare()
    w_in = pc.wx if pc.wc is None else ad.concat([pc.wx, pc.wc], axis=0)
    xproj = ad.add(ad.matmul(inp, w_in), pc.b)
    return pc.transition(xproj, h_prev, cstate_prev)


def _step_seq(pc: PreparedCell, xp: Tensor, T: int, B: int, order, lengths,
              bank: Optional[MemoryBank], keys_t: Optional[Tensor]):
    D = pc.D
    h = Tensor(np.zeros((B, D)))
    c = Tensor(np.zeros((B, D))) if pc.kind == "lstm" else None
    steps = ad.split(xp, T, axis=0) if T > 1 else (xp,)
    for t in order:
        x_t = steps[t]
        if bank is not None:
            _, readout = attend(h, bank, keys_t)
            x_t = ad.add(x_t, ad.matmul(readout.content, pc.wc))
        h_new, c_new = pc.transition(x_t, h, c)
        live = t < lengths
        if live.all():
            h, c = h_new, c_new
        else:
            m = live[:, None]
            h = ad.where(m, h_new, h)
            if c is not None:
                c = ad.where(m, c_new, c)
    return h


def encode_batch(cell_fwd: RnnCell, cell_bwd: RnnCell, x: Tensor, lengths,
                 bank: Optional[MemoryBank] = None) -> Tensor:
    """Bidirectional encoding of a right-padded batch.

    ``x`` holds time-major embeddings ``[T*B, E]`` (row ``t*B + b`` is token
    ``t`` of sequence ``b``).  Positions at or beyond a sequence's length leave
    that sequence's state untouched, so the final states equal those of the
    unpadded sequence.  Returns ``[B, 2D]`` = concat(final fwd, final bwd).
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    B = lengths.shape[0]
    if B == 0 or lengths.min() < 1:
        raise ValueError("cannot encode an empty sequence")
    T = x.shape[0] // B
    if T * B != x.shape[0] or lengths.max() > T:
        raise ValueError(f"embedding rows {x.shape[0]} inconsistent with lengths {lengths.tolist()}")
    keys_t = ad.transpose(bank.keys) if bank is not None else None
    outs = []
    for cell, order in ((cell_fwd, range(T)), (cell_bwd, range(T - 1, -1, -1))):
        if bank is not None and cell.w_c is None:
            raise ValueError("cell has no memory-readout weights but a bank is attached")
        pc = cell.prepare()
        xp = ad.add(ad.matmul(x, pc.wx), pc.b)
        outs.append(_step_seq(pc, xp, T, B, order, lengths, bank, keys_t))
    return ad.concat(outs, axis=1)


def encode_sequence(cell_fwd: RnnCell, cell_bwd: RnnCell, inputs: Tensor,
                    bank: Optional[MemoryBank] = None) -> Tensor:
    """Encode one sequence of input vectors ``[len, input_dim]`` into ``[2D]``."""
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ValueError("encode_sequence needs a non-empty [len, dim] input")
    out = encode_batch(cell_fwd, cell_bwd, inputs, [inputs.shape[0]], bank)
    return ad.reshape(out, (out.shape[1],))


class ClassifierHead:
    """Affine map from the ``[2D]`` encoding to class logits.

    The weight is stored as ``[2, D, C]`` (forward block, backward block).
    """

    def __init__(self, hidden_dim: int, n_classes: int, rng: np.random.Generator,
                 name: str = "head"):
        self.weight = Parameter(f"{name}.weight",
                                uniform_init(rng, (2, hidden_dim, n_classes), 2 * hidden_dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    @property
    def input_dim(self) -> int:
        return 2 * self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias]


def classify(head: ClassifierHead, encoding: Tensor) -> Tensor:
    if encoding.shape[-1] != head.input_dim:
        raise ValueError(f"encoding width {encoding.shape[-1]} != head input {head.input_dim}")
    W = ad.reshape(head.weight, (head.input_dim, head.n_classes))
    return ad.add(ad.matmul(encoding, W), head.bias)
