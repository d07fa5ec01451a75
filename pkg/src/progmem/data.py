"""Synthetic multi-domain sequence classification data, JSONL I/O and batching.

Each synthetic domain owns a private vocabulary: two marker types ("a" and
"b", several surface forms each) plus filler words.  A shared block of filler
words and one shared surface form per marker type are common to all domains.
The label of a sequence depends only on its markers::

    reversed   if the first "b" marker precedes the first "a" marker
    even       otherwise, if the number of "a" markers is even
    odd        otherwise

so the Bayes accuracy is 100%, while a model that does not know a domain's
private markers cannot read its labels.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, SEP = "<pad>", "<unk>", "[SEP]"
LABELS = ("even", "odd", "reversed")
SPLITS = ("train", "valid", "test")
SHARED_MARKERS = {"a": "A", "b": "B"}


class Vocab:
    """Token to id map with reserved ids 0 (pad), 1 (unknown) and 2 (separator)."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list = [PAD, UNK, SEP]
        self.stoi: dict = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def extend(self, tokens: Iterable[str]) -> list:
        """Append unseen tokens in first-occurrence order; return the new ones."""
        new = []
        for t in tokens:
            if t not in self.stoi:
                self.add(t)
                new.append(t)
        return new

    def encode(self, tokens: Sequence[str]) -> list:
        return [self.stoi.get(t, 1) for t in tokens]

    def to_list(self) -> list:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if list(itos[:3]) != [PAD, UNK, SEP]:
            raise ValueError("vocabulary must start with the reserved tokens")
        v = cls()
        for t in itos[3:]:
            if t in v.stoi:
                raise ValueError(f"duplicate token {t!r} in vocabulary")
            v.add(t)
        return v


@dataclass
class Example:
    tokens: list
    label: str
    domain: str

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("example has no tokens")


@dataclass
class DomainSpec:
    """Generation parameters for one synthetic domain."""

    name: str
    n_train: int = 2000
    n_valid: int = 300
    n_test: int = 500
    length: tuple = (6, 10)
    a_count: tuple = (1, 4)
    b_count: tuple = (1, 2)
    marker_forms: int = 3
    n_private_fillers: int = 20
    private_filler_rate: float = 0.5
    shared_marker_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.length = tuple(self.length)
        self.a_count = tuple(self.a_count)
        self.b_count = tuple(self.b_count)
        if self.a_count[0] < 1 or self.b_count[0] < 1:
            raise ValueError("every sequence needs at least one marker of each type")
        if self.a_count[1] + self.b_count[1] > self.length[0]:
            raise ValueError(f"{self.name}: markers do not fit the minimum length")

    def markers(self, kind: str) -> list:
        return [f"{self.name}.{kind}{k}" for k in range(self.marker_forms)]

    def private_fillers(self) -> list:
        return [f"{self.name}.w{k}" for k in range(self.n_private_fillers)]

    def private_vocab(self) -> set:
        return set(self.markers("a")) | set(self.markers("b")) | set(self.private_fillers())


def shared_fillers(n: int = 30) -> list:
    return [f"w{k}" for k in range(n)]


def rule_label(tokens: Sequence[str], a_forms: Iterable[str], b_forms: Iterable[str]) -> str:
    """Label of a token sequence given which tokens count as each marker type."""
    a_forms, b_forms = set(a_forms), set(b_forms)
    first_a = next((i for i, t in enumerate(tokens) if t in a_forms), None)
    first_b = next((i for i, t in enumerate(tokens) if t in b_forms), None)
    if first_a is None or first_b is None:
        raise ValueError("sequence lacks a marker of each type")
    if first_b < first_a:
        return "reversed"
    n_a = sum(t in a_forms for t in tokens)
    return "even" if n_a % 2 == 0 else "odd"


def domain_label(tokens: Sequence[str], spec: DomainSpec) -> str:
    return rule_label(tokens, spec.markers("a") + [SHARED_MARKERS["a"]],
                      spec.markers("b") + [SHARED_MARKERS["b"]])


def _sample(spec: DomainSpec, label: str, rng: np.random.Generator, shared: list) -> list:
    lo, hi = spec.length
    L = int(rng.integers(lo, hi + 1))
    if label == "reversed":
        n_a = int(rng.integers(spec.a_count[0], spec.a_count[1] + 1))
    else:
        want = 0 if label == "even" else 1
        options = [k for k in range(spec.a_count[0], spec.a_count[1] + 1) if k % 2 == want]
        n_a = int(rng.choice(options))
    n_b = int(rng.integers(spec.b_count[0], spec.b_count[1] + 1))
    pos = rng.permutation(L)[:n_a + n_b]
    kinds = ["a"] * n_a + ["b"] * n_b
    order = np.argsort(pos)
    first = kinds[order[0]]
    need_first = "b" if label == "reversed" else "a"
    if first != need_first:
        # swap the earliest marker with one of the wanted type
        j = next(k for k in order if kinds[k] == need_first)
        kinds[order[0]], kinds[j] = kinds[j], kinds[order[0]]
    a_forms, b_forms = spec.markers("a"), spec.markers("b")
    pf = spec.private_fillers()
    toks = []
    for _ in range(L):
        if rng.random() < spec.private_filler_rate:
            toks.append(pf[int(rng.integers(len(pf)))])
        else:
            toks.append(shared[int(rng.integers(len(shared)))])
    for p, kind in zip(pos, kinds):
        forms = a_forms if kind == "a" else b_forms
        if rng.random() < spec.shared_marker_rate:
            toks[p] = SHARED_MARKERS[kind]
        else:
            toks[p] = forms[int(rng.integers(len(forms)))]
    return toks


def generate_domain(spec: DomainSpec, shared: Optional[list] = None) -> dict:
    """Return ``{split: [Example]}`` with balanced labels and disjoint splits."""
    shared = shared_fillers() if shared is None else shared
    rng = np.random.default_rng(spec.seed)
    seen = set()
    out = {}
    for split, n in zip(SPLITS, (spec.n_train, spec.n_valid, spec.n_test)):
        labels = [LABELS[k % len(LABELS)] for k in range(n)]
        rng.shuffle(labels)
        exs = []
        for lab in labels:
            for _ in range(1000):
                toks = _sample(spec, lab, rng, shared)
                key = tuple(toks)
                if key not in seen:
                    break
            else:
                raise RuntimeError(f"{spec.name}: could not draw a fresh sequence")
            seen.add(key)
            exs.append(Example(toks, lab, spec.name))
        out[split] = exs
    return out


def gen_synthetic(specs: Sequence[DomainSpec], out_dir=None, n_shared: int = 30) -> dict:
    """Generate every domain; optionally write ``out_dir/<domain>/<split>.jsonl``.

    A ``manifest.json`` with the specs is written next to the data.
    """
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("duplicate domain names")
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            overlap = a.private_vocab() & b.private_vocab()
            if overlap:
                raise ValueError(f"private vocabularies of {a.name} and {b.name} overlap: "
                                 f"{sorted(overlap)[:5]}")
    shared = shared_fillers(n_shared)
    data = {s.name: generate_domain(s, shared) for s in specs}
    if out_dir is not None:
        root = Path(out_dir)
        for name, splits in data.items():
            for split, exs in splits.items():
                write_jsonl(root / name / f"{split}.jsonl", exs)
        manifest = {"domains": [asdict(s) for s in specs], "n_shared": n_shared,
                    "labels": list(LABELS)}
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return data


def default_specs(n_domains: int = 5, seed: int = 0, n_train: int = 2000, **overrides) -> list:
    """Five-domain default suite with slightly different length profiles."""
    names = ["fic", "gov", "slate", "tel", "travel", "dom5", "dom6", "dom7"]
    if n_domains > len(names):
        names += [f"dom{k}" for k in range(len(names), n_domains)]
    lengths = [(6, 10), (7, 11), (6, 9), (8, 12), (7, 10)]
    specs = []
    for k in range(n_domains):
        kw = dict(name=names[k], n_train=n_train, length=lengths[k % len(lengths)],
                  seed=seed * 1000 + k)
        kw.update(overrides)
        specs.append(DomainSpec(**kw))
    return specs


def specs_from_json(obj) -> list:
    if isinstance(obj, dict):
        seed = obj.get("seed", 0)
        doms = obj["domains"]
    else:
        seed, doms = 0, obj
    out = []
    for k, d in enumerate(doms):
        d = dict(d)
        d.setdefault("seed", seed * 1000 + k)
        out.append(DomainSpec(**d))
    return out


# ------------------------------------------------------------------- JSONL I/O

def write_jsonl(path, examples: Iterable[Example]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.tokens, "label": ex.label, "domain": ex.domain},
                                ensure_ascii=False) + "\n")


def load_jsonl(path, vocab: Optional[Vocab] = None, build_mode: str = "frozen",
               labels: Sequence[str] = LABELS):
    """Read examples; return ``(examples, vocab, new_tokens)``.

    ``text`` may be a token list or a whitespace-separated string; a
    ``premise``/``hypothesis`` pair is joined as ``premise [SEP] hypothesis``.
    In ``extend`` mode unseen tokens are appended to (a copy of) ``vocab``;
    in ``frozen`` mode they will encode as the unknown id.
    """
    if build_mode not in ("frozen", "extend"):
        raise ValueError(f"unknown build mode {build_mode!r}")
    vocab = Vocab() if vocab is None else Vocab.from_list(vocab.to_list())
    examples, new_tokens = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if "text" in obj:
                    text = obj["text"]
                    tokens = text.split() if isinstance(text, str) else [str(t) for t in text]
                else:
                    tokens = str(obj["premise"]).split() + [SEP] + str(obj["hypothesis"]).split()
                label = obj["label"]
                domain = obj.get("domain", "")
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed line ({e})") from None
            if label not in labels:
                raise ValueError(f"{path}:{lineno}: unknown label {label!r}")
            if not tokens:
                raise ValueError(f"{path}:{lineno}: empty text")
            if build_mode == "extend":
                new_tokens += vocab.extend(tokens)
            examples.append(Example(tokens, label, domain))
    return examples, vocab, new_tokens


def load_domain_dir(root, domain: str) -> dict:
    """Read ``root/domain/{train,valid,test}.jsonl`` as raw examples."""
    out = {}
    for split in SPLITS:
        exs, _, _ = load_jsonl(Path(root) / domain / f"{split}.jsonl")
        out[split] = exs
    return out


def list_domains(root) -> list:
    manifest = Path(root) / "manifest.json"
    if manifest.exists():
        return [d["name"] for d in json.loads(manifest.read_text())["domains"]]
    return sorted(p.name for p in Path(root).iterdir() if (p / "train.jsonl").exists())


# -------------------------------------------------------------------- batching

@dataclass
class Batch:
    tokens: np.ndarray    # [B, T] int, right-padded
    lengths: np.ndarray   # [B]
    labels: np.ndarray    # [B]


def encode_examples(examples: Sequence[Example], vocab: Vocab,
                    labels: Sequence[str] = LABELS) -> list:
    index = {lab: i for i, lab in enumerate(labels)}
    return [(vocab.encode(ex.tokens), index[ex.label]) for ex in examples]


def batch_pad(encoded: Sequence, batch_size: int, pad_id: int = 0) -> list:
    """Group ``(ids, label)`` pairs into right-padded batches, in the given order."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    out = []
    for s in range(0, len(encoded), batch_size):
        chunk = encoded[s:s + batch_size]
        lengths = np.array([len(ids) for ids, _ in chunk], dtype=np.int64)
        toks = np.full((len(chunk), int(lengths.max())), pad_id, dtype=np.int64)
        for r, (ids, _) in enumerate(chunk):
            toks[r, :len(ids)] = ids
        out.append(Batch(toks, lengths, np.array([lab for _, lab in chunk], dtype=np.int64)))
    return out
