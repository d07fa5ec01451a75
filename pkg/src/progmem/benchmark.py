"""Desk-scale incremental adaptation benchmark on the synthetic suite.

One source model per seed is trained once and shared by every method, so
method differences come from adaptation alone.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import default_specs, gen_synthetic
from .ida import (DomainSchedule, RunConfig, ScheduleEntry, ScheduleResult, run_schedule,
                  train_source)

SHARED_MARKER_RATE = 0.3
BENCH_LR = 3e-3

# (method, vocab_expand)
MEM_VOCAB = ("mem_expand", True)
FINETUNE_PLAIN = ("finetune_only", False)
FINETUNE_VOCAB = ("finetune_only", True)
HIDDEN_VOCAB = ("hidden_expand", True)


def label(method: str, vocab: bool) -> str:
    return method + ("+vocab" if vocab else "")


def benchmark_data(n_domains: int, seed: int, n_train: int = 2000) -> dict:
    specs = default_specs(n_domains, seed=seed, n_train=n_train,
                          shared_marker_rate=SHARED_MARKER_RATE)
    return gen_synthetic(specs)


def benchmark_config(seed: int, **overrides) -> RunConfig:
    kw = dict(seed=seed, embed_dim=64, hidden_dim=64, n_slots=32, slots=32, lr=BENCH_LR,
              epochs=10, patience=3)
    kw.update(overrides)
    return RunConfig(**kw)


@dataclass
class BenchmarkRun:
    seed: int
    domains: list
    source_row: np.ndarray
    results: dict = field(default_factory=dict)     # label -> ScheduleResult
    source_seconds: float = 0.0
    seconds: dict = field(default_factory=dict)     # label -> adaptation time
    wall_clock: float = 0.0

    def cost(self, *keys: str) -> float:
        """Seconds spent on data, source training and the given methods."""
        return self.source_seconds + sum(self.seconds[k] for k in keys)

    def matrix(self, key: str) -> np.ndarray:
        return self.results[key].matrix

    def retention(self, key: str, domain: int = 0) -> float:
        """Final accuracy on ``domain`` minus its accuracy right after training on it."""
        m = self.matrix(key)
        return float(m[-1, domain] - m[domain, domain])


def run_benchmark(n_domains: int, seed: int, methods: Sequence = (MEM_VOCAB, FINETUNE_PLAIN),
                  n_train: int = 2000, data=None, **config) -> BenchmarkRun:
    """Train the source once, then adapt through the remaining domains per method."""
    t0 = time.perf_counter()
    data = benchmark_data(n_domains, seed, n_train) if data is None else data
    names = list(data)[:n_domains]
    cfg = benchmark_config(seed, **config)
    src = train_source(ScheduleEntry(names[0], epochs=cfg.epochs, patience=cfg.patience),
                       data, cfg, names)
    run = BenchmarkRun(seed, names, src.row, source_seconds=time.perf_counter() - t0)
    for method, vocab in methods:
        t1 = time.perf_counter()
        sched = DomainSchedule([ScheduleEntry(n, method, cfg.slots, cfg.epochs, cfg.patience,
                                              vocab) for n in names])
        res: ScheduleResult = run_schedule(sched, data, cfg, source=src)
        run.results[label(method, vocab)] = res
        run.seconds[label(method, vocab)] = time.perf_counter() - t1
    run.wall_clock = time.perf_counter() - t0
    return run
