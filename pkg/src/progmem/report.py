"""Run records, one-tailed Wilcoxon signed-rank tests, bootstrap and result tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 20
LEVELS = (0.01, 0.05)
ARROWS = {("greater", 0.01): "⇑", ("greater", 0.05): "↑",
          ("less", 0.01): "⇓", ("less", 0.05): "↓"}


def _null_distribution(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of sign assignments per value of 2·W+ (integer ranks times two)."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_one_tailed(a: Sequence[float], b: Sequence[float],
                        alternative: str = "greater") -> float:
    """P-value of the signed-rank test that ``a`` exceeds ``b`` (or falls below).

    Zero differences are dropped and tied magnitudes share average ranks.  Up
    to 20 non-zero pairs the null distribution over all 2ⁿ sign assignments is
    counted exactly; beyond that a normal approximation with continuity and tie
    corrections is used.  Returns NaN when every difference is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    if a.size < 5:
        raise ValueError("need at least 5 pairs")
    if alternative not in ("greater", "less"):
        raise ValueError("alternative must be 'greater' or 'less'")
    diff = a - b
    diff = diff[diff != 0]
    n = diff.size
    if n == 0:
        return float("nan")
    ranks = rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _null_distribution(doubled)
        obs = int(round(2 * w_plus))
        tail = counts[obs:].sum() if alternative == "greater" else counts[:obs + 1].sum()
        return float(tail / 2.0**n)
    mean = n * (n + 1) / 4.0
    _, t = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (t**3 - t).sum() / 48.0
    sd = math.sqrt(var)
    if alternative == "greater":
        return float(norm.sf((w_plus - mean - 0.5) / sd))
    return float(norm.cdf((w_plus - mean + 0.5) / sd))


def bootstrap_eval(predictions, labels, subset_size: int = 200, repeats: int = 10,
                   seed: int = 0) -> np.ndarray:
    """Accuracies on ``repeats`` with-replacement resamples of ``subset_size`` items.

    Two prediction sets for the same labels evaluated with the same seed use
    the same resampled indices, which makes their bootstrap accuracies paired.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("no predictions to bootstrap")
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if repeats < 1 or subset_size < 1:
        raise ValueError("repeats and subset_size must be positive")
    idx = np.random.default_rng(seed).integers(0, labels.size, (repeats, subset_size))
    return (predictions[idx] == labels[idx]).mean(axis=1)


@dataclass
class RunRecord:
    run_id: str
    schedule: list
    method: str
    seed: int
    stages: list
    domains: list
    matrix: list
    wall_clock: float = 0.0
    incremental: bool = True
    vocab_expand: bool = False
    predictions: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (len(self.stages), len(self.domains)):
            raise ValueError(f"matrix shape {m.shape} != stages × domains "
                             f"({len(self.stages)}, {len(self.domains)})")
        if ((m < 0) | (m > 1)).any():
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def label(self) -> str:
        return self.method + ("+vocab" if self.vocab_expand else "")

    @classmethod
    def from_result(cls, result, run_id: Optional[str] = None) -> "RunRecord":
        rid = run_id or f"{result.method}{'+vocab' if result.vocab_expand else ''}-s{result.seed}"
        return cls(rid, list(result.domains[:len(result.stages)]) if result.incremental
                   else list(result.domains), result.method, int(result.seed),
                   list(result.stages), list(result.domains), np.asarray(result.matrix).tolist(),
                   float(result.wall_clock), bool(result.incremental), bool(result.vocab_expand),
                   {d: np.asarray(p).tolist() for d, p in result.predictions.items()},
                   {d: np.asarray(v).tolist() for d, v in result.labels.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self)) + "\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def load_runs(root) -> list:
    paths = sorted(Path(root).rglob("*.run.json"))
    if not paths:
        raise FileNotFoundError(f"no *.run.json records under {root}")
    return [RunRecord.load(p) for p in paths]


def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


def _arrow(p_greater: float, p_less: float) -> str:
    for level in LEVELS:
        if p_greater < level:
            return ARROWS[("greater", level)]
        if p_less < level:
            return ARROWS[("less", level)]
    return ""


def _final(run: RunRecord, domain: str) -> float:
    return run.matrix[-1][run.domains.index(domain)]


def compare(runs: Sequence[RunRecord], reference: str, pairing: str = "bootstrap",
            subset_size: int = 200, repeats: int = 10, seed: int = 0) -> list:
    """Final-stage comparison of every method label against ``reference``.

    ``pairing="bootstrap"`` resamples each domain's test predictions
    (``repeats`` × ``subset_size``, shared indices) per seed and pairs the
    resampled accuracies; ``pairing="seed"`` pairs final accuracies by seed.
    Rows: ``(method, domain, mean, reference mean, n, p_greater, p_less, arrow)``.
    """
    if pairing not in ("bootstrap", "seed"):
        raise ValueError("pairing must be 'bootstrap' or 'seed'")
    by = {}
    for r in runs:
        by.setdefault(r.label, {})[r.seed] = r
    if reference not in by:
        raise ValueError(f"reference method {reference!r} not among runs")
    ref = by[reference]
    rows = []
    for label, group in by.items():
        if label == reference:
            continue
        seeds = sorted(set(group) & set(ref))
        for dom in (ref[seeds[0]].domains if seeds else []):
            xs, ys = [], []
            for s in seeds:
                if pairing == "seed":
                    xs.append(_final(group[s], dom))
                    ys.append(_final(ref[s], dom))
                    continue
                lab = group[s].labels.get(dom)
                if lab is None or ref[s].labels.get(dom) != lab:
                    raise ValueError(f"runs for seed {s} lack matching test labels for {dom}")
                bs = seed * 100_003 + s
                xs.extend(bootstrap_eval(group[s].predictions[dom], lab, subset_size, repeats, bs))
                ys.extend(bootstrap_eval(ref[s].predictions[dom], lab, subset_size, repeats, bs))
            if len(xs) >= 5:
                pg = wilcoxon_one_tailed(xs, ys, "greater")
                pl = wilcoxon_one_tailed(xs, ys, "less")
            else:
                pg = pl = float("nan")
            arrow = "" if math.isnan(pg) else _arrow(pg, pl)
            mx = float(np.mean([_final(group[s], dom) for s in seeds]))
            my = float(np.mean([_final(ref[s], dom) for s in seeds]))
            rows.append((label, dom, mx, my, len(xs), pg, pl, arrow))
    return rows


def _fmt_p(p: float) -> str:
    return "nan" if math.isnan(p) else f"{p:.4g}"


def report_matrix(runs: Sequence[RunRecord], fmt: str = "markdown",
                  reference: Optional[str] = None, pairing: str = "bootstrap",
                  subset_size: int = 200, repeats: int = 10, seed: int = 0) -> str:
    """Render each run's stage × domain matrix (percent) and, when several
    methods are present, the comparison against ``reference`` (default: the
    first run's method).  Arrows: ↑/↓ for p < 0.05, ⇑/⇓ for p < 0.01.
    """
    if not runs:
        raise ValueError("no runs to report")
    if fmt not in ("csv", "markdown"):
        raise ValueError("format must be csv or markdown")
    doms = set(runs[0].domains)
    for r in runs:
        if set(r.domains) != doms:
            raise ValueError(f"run {r.run_id} has domains {r.domains}, expected {sorted(doms)}")
    labels = list(dict.fromkeys(r.label for r in runs))
    comp = []
    if len(labels) > 1:
        comp = compare(runs, reference or runs[0].label, pairing, subset_size, repeats, seed)

    matrix_rows = []
    for r in runs:
        tag = "" if r.incremental else " (non-incremental)"
        for stage, accs in zip(r.stages, r.matrix):
            matrix_rows.append((r.run_id, r.label + tag, str(r.seed), stage,
                                [_pct(a) for a in accs]))
    comp_rows = [(lab, dom, _pct(mx), _pct(my), str(n), _fmt_p(pg), _fmt_p(pl), arrow)
                 for lab, dom, mx, my, n, pg, pl, arrow in comp]
    domains = runs[0].domains

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "run_id", "method", "seed", "stage", *domains])
        for rid, lab, s, stage, accs in matrix_rows:
            w.writerow(["matrix", rid, lab, s, stage, *accs])
        if comp_rows:
            w.writerow(["section", "method", "reference", "domain", "accuracy",
                        "reference_accuracy", "n_pairs", "p_greater", "p_less", "arrow"])
            ref = reference or runs[0].label
            for lab, dom, mx, my, n, pg, pl, arrow in comp_rows:
                w.writerow(["comparison", lab, ref, dom, mx, my, n, pg, pl, arrow])
        return buf.getvalue()

    out = ["| run | method | seed | stage | " + " | ".join(domains) + " |",
           "|" + "---|" * (4 + len(domains))]
    for rid, lab, s, stage, accs in matrix_rows:
        out.append(f"| {rid} | {lab} | {s} | {stage} | " + " | ".join(accs) + " |")
    if comp_rows:
        ref = reference or runs[0].label
        out += ["", f"Compared with {ref} ({pairing} pairing; ↑↓ p<0.05, ⇑⇓ p<0.01)", "",
                "| method | domain | accuracy | reference | pairs | p (greater) | p (less) | |",
                "|---|---|---|---|---|---|---|---|"]
        for lab, dom, mx, my, n, pg, pl, arrow in comp_rows:
            out.append(f"| {lab} | {dom} | {mx} | {my} | {n} | {pg} | {pl} | {arrow} |")
    return "\n".join(out) + "\n"
