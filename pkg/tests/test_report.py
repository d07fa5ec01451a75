import csv
import io
import itertools
import math

import numpy as np
import pytest
from scipy.stats import rankdata, wilcoxon

from progmem.report import (RunRecord, bootstrap_eval, compare, load_runs, report_matrix,
                            wilcoxon_one_tailed)


def enumerate_p(diff, alternative="greater"):
    """Brute force over all 2^n sign assignments."""
    diff = np.asarray(diff, dtype=float)
    diff = diff[diff != 0]
    r = rankdata(np.abs(diff))
    obs = r[diff > 0].sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=diff.size):
        w = (r * np.array(signs)).sum()
        hits += (w >= obs - 1e-9) if alternative == "greater" else (w <= obs + 1e-9)
    return hits / 2**diff.size


def test_all_positive_n5():
    assert wilcoxon_one_tailed([2, 3, 4, 5, 6], [1, 1, 1, 1, 1]) == 0.03125
    assert wilcoxon_one_tailed([2, 3, 4, 5, 6], [1, 1, 1, 1, 1], "less") == 1.0


@pytest.mark.parametrize("seed", range(8))
def test_exact_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 11))
    # rounding produces ties and zeros
    a = np.round(rng.normal(size=n), 1)
    b = np.round(rng.normal(size=n), 1)
    if not (a - b).any():
        a[0] += 1
    for alt in ("greater", "less"):
        assert abs(wilcoxon_one_tailed(a, b, alt) - enumerate_p(a - b, alt)) < 1e-12


def test_exact_matches_scipy_without_ties():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=12), rng.normal(size=12)
    ref = wilcoxon(a, b, alternative="greater", method="exact").pvalue
    assert abs(wilcoxon_one_tailed(a, b) - ref) < 1e-12


def test_antisymmetry():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=9), rng.normal(size=9)
    assert wilcoxon_one_tailed(a, b, "greater") == wilcoxon_one_tailed(b, a, "less")


def test_large_n_normal_approximation():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=40) + 0.3, rng.normal(size=40)
    ref = wilcoxon(a, b, alternative="greater", method="approx", correction=True).pvalue
    assert abs(wilcoxon_one_tailed(a, b) - ref) < 1e-10


def test_wilcoxon_edge_cases():
    assert math.isnan(wilcoxon_one_tailed([1] * 5, [1] * 5))
    with pytest.raises(ValueError):
        wilcoxon_one_tailed([1, 2, 3, 4], [0, 0, 0, 0])
    with pytest.raises(ValueError):
        wilcoxon_one_tailed([1] * 5, [1] * 6)


def test_bootstrap_shape_determinism_and_pairing():
    rng = np.random.default_rng(6)
    labels = rng.integers(0, 3, 500)
    preds = labels.copy()
    preds[:100] = (preds[:100] + 1) % 3
    a = bootstrap_eval(preds, labels, 200, 10, seed=9)
    assert a.shape == (10,) and ((a >= 0) & (a <= 1)).all()
    np.testing.assert_array_equal(a, bootstrap_eval(preds, labels, 200, 10, seed=9))
    np.testing.assert_array_equal(bootstrap_eval(labels, labels, 200, 10, seed=9), 1.0)
    # explicit index oracle
    idx = np.random.default_rng(9).integers(0, 500, (10, 200))
    np.testing.assert_array_equal(a, (preds[idx] == labels[idx]).mean(1))


def test_bootstrap_errors():
    with pytest.raises(ValueError):
        bootstrap_eval([], [])
    with pytest.raises(ValueError):
        bootstrap_eval([0, 1], [0])


def record(label, seed, final, test_correct, n_test=300, domains=("src", "tgt")):
    method, _, vocab = label.partition("+")
    labels = np.zeros(n_test, dtype=int)
    preds = {}
    for d, k in zip(domains, test_correct):
        p = np.ones(n_test, dtype=int)
        p[:k] = 0
        preds[d] = p.tolist()
    matrix = [[0.9, 0.3], list(final)]
    return RunRecord(f"{label}-s{seed}", list(domains), method, seed,
                     ["src", "src -> tgt"], list(domains), matrix,
                     vocab_expand=bool(vocab),
                     predictions=preds, labels={d: labels.tolist() for d in domains})


def runs_pair(n_seeds=5):
    rs = []
    for s in range(n_seeds):
        rs.append(record("finetune_only", s, (0.6, 0.9), (180, 270)))
        rs.append(record("mem_expand+vocab", s, (0.9, 0.9), (270, 270)))
    return rs


def test_record_validation_and_io(tmp_path):
    r = record("mem_expand+vocab", 0, (0.9, 0.9), (270, 270))
    assert r.label == "mem_expand+vocab"
    r.save(tmp_path / "a.run.json")
    assert load_runs(tmp_path) == [r]
    with pytest.raises(ValueError):
        RunRecord("x", [], "m", 0, ["a"], ["a", "b"], [[0.5]])
    with pytest.raises(ValueError):
        RunRecord("x", [], "m", 0, ["a"], ["a"], [[1.5]])
    with pytest.raises(FileNotFoundError):
        load_runs(tmp_path / "empty")


def test_compare_constructed_arrows():
    rows = compare(runs_pair(), "finetune_only")
    by_dom = {r[1]: r for r in rows}
    src = by_dom["src"]
    assert src[0] == "mem_expand+vocab" and src[4] == 50
    assert src[5] < 0.01 and src[7] == "⇑"
    assert abs(src[2] - 0.9) < 1e-12 and abs(src[3] - 0.6) < 1e-12
    # identical predictions on the target: no test, no arrow
    assert math.isnan(by_dom["tgt"][5]) and by_dom["tgt"][7] == ""
    rev = {r[1]: r for r in compare(runs_pair(), "mem_expand+vocab")}
    assert rev["src"][7] == "⇓"


def test_seed_pairing_five_seeds():
    rows = {r[1]: r for r in compare(runs_pair(), "finetune_only", pairing="seed")}
    assert rows["src"][4] == 5 and rows["src"][5] == 0.03125 and rows["src"][7] == "↑"


def test_report_single_method_has_no_comparison():
    rs = [r for r in runs_pair() if r.method == "finetune_only"]
    md = report_matrix(rs)
    assert "Compared with" not in md
    assert md.count("\n") == 2 + 2 * len(rs)
    assert "comparison" not in report_matrix(rs, "csv")


def test_csv_and_markdown_agree():
    rs = runs_pair(5)
    md = report_matrix(rs, "markdown", reference="finetune_only")
    rows = list(csv.reader(io.StringIO(report_matrix(rs, "csv", reference="finetune_only"))))
    comp_csv = [r for r in rows if r[0] == "comparison"]
    comp_md = [line.strip("|").split("|") for line in md.splitlines()
               if line.startswith("| mem_expand+vocab |")]
    assert len(comp_csv) == len(comp_md) == 2
    for c, m in zip(comp_csv, comp_md):
        m = [x.strip() for x in m]
        assert c[1] == m[0] and c[3] == m[1]
        assert float(c[4]) == float(m[2]) and float(c[5]) == float(m[3])
        assert c[9] == m[7]
    matrix_csv = [r for r in rows if r[0] == "matrix"]
    assert matrix_csv[1][5:] == ["60.00", "90.00"]


def test_report_errors():
    with pytest.raises(ValueError):
        report_matrix([])
    with pytest.raises(ValueError):
        report_matrix(runs_pair(), "html")
    with pytest.raises(ValueError):
        compare(runs_pair(), "ewc")
