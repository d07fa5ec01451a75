"""Monte Carlo check that growing the memory perturbs the hidden state less than
growing the hidden layer.

Setting: a vanilla transition with linear activation and every weight, state,
key and value drawn iid from N(0, σ²).  Appending ``d`` hidden units adds
``W̃ h̃`` to the old units, with ``E‖W̃ h̃‖² = D·d·σ⁴``.  Appending ``M`` memory
slots changes the readout by ``Δc = Σ_j β_j v_j`` and the state by ``W_c Δc``;
whenever the new slots receive no more attention mass than the old ones,
``Var(Δc_k) ≤ σ²`` and therefore ``E‖W_c Δc‖² ≤ D·d·σ⁴``.

Trials are simulated in blocks of ``block_size``; block ``b`` draws from
``default_rng([seed, b])``, so results do not depend on how blocks are
scheduled.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

MODES = ("sampled", "sampled_conditioned", "fixed")
LOGIT_LIMIT = 700.0
IDENTITY_TOL = 1e-12
_QUERY_STREAM = 2**32 - 1
MAX_RESAMPLE_ROUNDS = 10_000


@dataclass
class SimulationConfig:
    D: int = 8
    d: int = 4
    sigma: float = 1.0
    N: int = 8
    M: int = 2
    trials: int = 100_000
    seed: int = 0
    attention_mode: str = "sampled"
    fixed_alpha: Optional[Sequence[float]] = None  # unnormalized, length N+M
    fix_query: bool = False
    block_size: int = 1024

    def __post_init__(self):
        for k in ("D", "d", "N", "M", "trials", "block_size"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.attention_mode not in MODES:
            raise ValueError(f"attention_mode must be one of {MODES}")
        if self.attention_mode == "fixed":
            if self.fixed_alpha is None:
                raise ValueError("fixed attention mode needs fixed_alpha")
            a = np.asarray(self.fixed_alpha, dtype=np.float64)
            if a.shape != (self.N + self.M,) or not (a > 0).all() or not np.isfinite(a).all():
                raise ValueError(f"fixed_alpha must hold {self.N + self.M} positive finite values")
            self.fixed_alpha = [float(x) for x in a]


def analytic_state_msd(D: int, d: int, sigma: float) -> float:
    """Expected squared change of the old units when ``d`` hidden units are added."""
    if D <= 0 or d <= 0 or sigma <= 0:
        raise ValueError("D, d and sigma must be positive")
    return float(D * d * sigma**4)


def beta_weights(unnormalized_old, unnormalized_new) -> np.ndarray:
    """Coefficients with ``c' - c = Σ_j β_j v_j`` after appending new slots.

    Old slots get ``-α̃_j S_new / (S_total S_old)``, new ones ``α̃_j / S_total``.
    Works on the last axis, so batches of trials are accepted.
    """
    old = np.asarray(unnormalized_old, dtype=np.float64)
    new = np.asarray(unnormalized_new, dtype=np.float64)
    if old.shape[-1] < 1:
        raise ValueError("need at least one old slot")
    if (old <= 0).any() or (new <= 0).any():
        raise ValueError("unnormalized attention weights must be positive")
    s_old = old.sum(-1, keepdims=True)
    s_new = new.sum(-1, keepdims=True)
    s_tot = s_old + s_new
    return np.concatenate([-old * s_new / (s_tot * s_old), new / s_tot], axis=-1)


@dataclass
class TheoremTrial:
    sq_diff_state: float
    sq_diff_mem: float
    beta: np.ndarray
    delta_c: np.ndarray
    mass_old: float
    mass_new: float
    assumption_held: bool
    resamples: int = 0


@dataclass
class _Block:
    sq_state: np.ndarray
    sq_mem: np.ndarray
    delta_c: np.ndarray
    beta: np.ndarray
    s_old: np.ndarray
    s_new: np.ndarray
    held: np.ndarray
    err_sum: float
    err_decomp: float
    beta_violations: int
    resamples: int


def _softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def _query(cfg: SimulationConfig) -> np.ndarray:
    return np.random.default_rng([cfg.seed, _QUERY_STREAM]).normal(0.0, cfg.sigma, cfg.D)


def _logits(cfg, rng, n, h_fixed):
    """Attention logits for ``n`` trials, redrawn until finite-safe (and conditioned)."""
    S = cfg.N + cfg.M
    if cfg.attention_mode == "fixed":
        return np.broadcast_to(np.log(np.asarray(cfg.fixed_alpha)), (n, S)).copy(), 0

    def draw(k):
        h = np.broadcast_to(h_fixed, (k, cfg.D)) if h_fixed is not None \
            else rng.normal(0.0, cfg.sigma, (k, cfg.D))
        keys = rng.normal(0.0, cfg.sigma, (k, S, cfg.D))
        return np.einsum("ksd,kd->ks", keys, h)

    def bad(z):
        out = np.abs(z).max(-1) > LOGIT_LIMIT
        if cfg.attention_mode == "sampled_conditioned":
            m = z.max(-1, keepdims=True)
            e = np.exp(z - m)
            out |= e[:, cfg.N:].sum(-1) > e[:, :cfg.N].sum(-1)
        return out

    z = draw(n)
    resamples = 0
    for _ in range(MAX_RESAMPLE_ROUNDS):
        idx = np.flatnonzero(bad(z))
        if idx.size == 0:
            return z, resamples
        resamples += idx.size
        z[idx] = draw(idx.size)
    raise RuntimeError("resampling did not terminate; the configuration almost never "
                       "satisfies the conditioning event")


def _simulate_block(cfg: SimulationConfig, rng: np.random.Generator, n: int,
                    h_fixed=None) -> _Block:
    D, d, N, s = cfg.D, cfg.d, cfg.N, cfg.sigma
    z, resamples = _logits(cfg, rng, n, h_fixed)
    h_new = rng.normal(0.0, s, (n, d))
    w_tilde = rng.normal(0.0, s, (n, D, d))
    w_c = rng.normal(0.0, s, (n, D, d))
    values = rng.normal(0.0, s, (n, N + cfg.M, d))

    state_pert = np.einsum("kij,kj->ki", w_tilde, h_new)
    # readouts from two independent normalizations
    c_old = np.einsum("ks,ksd->kd", _softmax(z[:, :N]), values[:, :N])
    c_all = np.einsum("ks,ksd->kd", _softmax(z), values)
    delta_c = c_all - c_old

    a = np.exp(z - z.max(-1, keepdims=True))   # common rescaling leaves β unchanged
    beta = beta_weights(a[:, :N], a[:, N:])
    decomp = np.einsum("ks,ksd->kd", beta, values)
    s_old, s_new = a[:, :N].sum(-1), a[:, N:].sum(-1)
    held = s_new <= s_old
    alpha_new = a / (s_old + s_new)[:, None]
    viol = (np.abs(beta) > alpha_new * (1 + IDENTITY_TOL) + IDENTITY_TOL) & held[:, None]

    mem_pert = np.einsum("kij,kj->ki", w_c, delta_c)
    return _Block(
        sq_state=(state_pert**2).sum(-1), sq_mem=(mem_pert**2).sum(-1),
        delta_c=delta_c, beta=beta, s_old=s_old, s_new=s_new, held=held,
        err_sum=float(np.abs(beta.sum(-1)).max()),
        err_decomp=float(np.abs(decomp - delta_c).max()),
        beta_violations=int(viol.any(-1).sum()), resamples=resamples)


def simulate_trial(cfg: SimulationConfig, rng: np.random.Generator) -> TheoremTrial:
    """One trial drawn from ``rng`` (query drawn too unless ``fix_query``)."""
    b = _simulate_block(cfg, rng, 1, _query(cfg) if cfg.fix_query else None)
    return TheoremTrial(float(b.sq_state[0]), float(b.sq_mem[0]), b.beta[0], b.delta_c[0],
                        float(b.s_old[0]), float(b.s_new[0]), bool(b.held[0]), b.resamples)


def simulate(cfg: SimulationConfig, blocks: Optional[Sequence[int]] = None):
    """Yield ``(block_index, _Block)`` for the requested blocks (default: all)."""
    n_blocks = -(-cfg.trials // cfg.block_size)
    h_fixed = _query(cfg) if cfg.fix_query else None
    for b in (range(n_blocks) if blocks is None else blocks):
        n = min(cfg.block_size, cfg.trials - b * cfg.block_size)
        yield b, _simulate_block(cfg, np.random.default_rng([cfg.seed, b]), n, h_fixed)


def _mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _var_dc(dc):
    """Pooled per-component variance of Δc and its standard error."""
    n = dc.shape[0]
    if n < 2:
        return float("nan"), float("nan")
    centered = dc - dc.mean(0)
    q = (centered**2).mean(-1) * n / (n - 1)
    return float(q.mean()), float(q.std(ddof=1) / np.sqrt(n))


@dataclass
class VerifierReport:
    config: dict
    trials: int
    resamples: int
    analytic_state_msd: float
    mc_state_msd: float
    mc_state_se: float
    mc_mem_msd: float
    mc_mem_se: float
    mc_mem_msd_conditioned: float
    mc_mem_se_conditioned: float
    assumption_fraction: float
    var_delta_c: float
    var_delta_c_se: float
    var_delta_c_conditioned: float
    var_delta_c_conditioned_se: float
    max_beta_sum_error: float
    max_decomposition_error: float
    beta_bound_violations: int
    verdicts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v == "PASS" for v in self.verdicts.values())

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return None
            return v
        d = {k: clean(v) for k, v in asdict(self).items()}
        d["passed"] = self.passed
        return json.dumps(d, indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("state MSD (Monte Carlo)", f"{self.mc_state_msd:.4f} ± {self.mc_state_se:.4f}"),
            ("state MSD (closed form)", f"{self.analytic_state_msd:.4f}"),
            ("memory MSD (all trials)", f"{self.mc_mem_msd:.4f} ± {self.mc_mem_se:.4f}"),
            ("memory MSD (S_new <= S_old)",
             f"{self.mc_mem_msd_conditioned:.4f} ± {self.mc_mem_se_conditioned:.4f}"),
            ("fraction with S_new <= S_old", f"{self.assumption_fraction:.4f}"),
            ("Var(dc_k) (S_new <= S_old)",
             f"{self.var_delta_c_conditioned:.4f} ± {self.var_delta_c_conditioned_se:.4f}"),
            ("max |sum beta|", f"{self.max_beta_sum_error:.2e}"),
            ("max |dc - sum beta v|", f"{self.max_decomposition_error:.2e}"),
            ("trials with |beta_j| > alpha'_j", str(self.beta_bound_violations)),
        ]
        rows += [(f"check: {k}", v) for k, v in self.verdicts.items()]
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def verify_theorem(cfg: SimulationConfig) -> VerifierReport:
    blocks = [b for _, b in simulate(cfg)]
    cat = lambda name: np.concatenate([getattr(b, name) for b in blocks])  # noqa: E731
    sq_state, sq_mem, held, dc = cat("sq_state"), cat("sq_mem"), cat("held"), cat("delta_c")

    state, state_se = _mean_se(sq_state)
    mem, mem_se = _mean_se(sq_mem)
    mem_c, mem_c_se = _mean_se(sq_mem[held])
    var_all, var_all_se = _var_dc(dc)
    var_c, var_c_se = _var_dc(dc[held])
    analytic = analytic_state_msd(cfg.D, cfg.d, cfg.sigma)
    err_sum = max(b.err_sum for b in blocks)
    err_dec = max(b.err_decomp for b in blocks)
    viol = sum(b.beta_violations for b in blocks)

    def verdict(ok):
        return "PASS" if ok else "FAIL"

    verdicts = {
        "closed_form": verdict(abs(state - analytic) <= 3 * state_se),
        "identities": verdict(err_sum <= IDENTITY_TOL and err_dec <= IDENTITY_TOL and viol == 0),
    }
    if held.sum() < 2:
        # nothing to test: the hypothesis of the bound never held
        verdicts["memory_vs_state"] = "HYPOTHESIS_VIOLATED"
        verdicts["variance_bound"] = "HYPOTHESIS_VIOLATED"
    else:
        combined = float(np.hypot(state_se, mem_c_se))
        verdicts["memory_vs_state"] = verdict(mem_c <= state + 3 * combined)
        verdicts["variance_bound"] = verdict(var_c <= cfg.sigma**2 + 3 * var_c_se)

    return VerifierReport(
        config=asdict(cfg), trials=cfg.trials, resamples=sum(b.resamples for b in blocks),
        analytic_state_msd=analytic, mc_state_msd=state, mc_state_se=state_se,
        mc_mem_msd=mem, mc_mem_se=mem_se, mc_mem_msd_conditioned=mem_c,
        mc_mem_se_conditioned=mem_c_se, assumption_fraction=float(held.mean()),
        var_delta_c=var_all, var_delta_c_se=var_all_se, var_delta_c_conditioned=var_c,
        var_delta_c_conditioned_se=var_c_se, max_beta_sum_error=err_sum,
        max_decomposition_error=err_dec, beta_bound_violations=viol, verdicts=verdicts)
