"""Command-line entry points.

Every command accepts ``--seed``.  On failure a single JSON line
``{"error": ..., "message": ..., "command": ...}`` is written to stderr and the
exit code is 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as ds
from .ida import (METHODS, DomainSchedule, RunConfig, ScheduleEntry, load_checkpoint,
                  read_checkpoint, run_schedule, save_checkpoint, train_source)
from .ida.training import evaluate
from .model import check_gradients
from .report import RunRecord, load_runs, report_matrix
from .theory import MODES, SimulationConfig, verify_theorem


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_config(path, seed):
    cfg = RunConfig.load(path) if path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg


def _load_data(root, domains):
    return {d: ds.load_domain_dir(root, d) for d in domains}


def cmd_gen_data(args):
    if args.spec:
        obj = json.loads(Path(args.spec).read_text())
        if isinstance(obj, dict) and args.seed is not None:
            obj.setdefault("seed", args.seed)
        specs = ds.specs_from_json(obj)
    else:
        specs = ds.default_specs(args.domains, seed=args.seed or 0)
    data = ds.gen_synthetic(specs, args.out)
    _emit({"out": str(args.out), "domains": {k: {s: len(v) for s, v in d.items()}
                                             for k, d in data.items()}})


def cmd_train(args):
    cfg = _load_config(args.config, args.seed)
    domain = args.domain or (cfg.schedule[0] if cfg.schedule else ds.list_domains(args.data)[0])
    data = _load_data(args.data, [domain])
    entry = ScheduleEntry(domain, cfg.method, cfg.slots, cfg.epochs, cfg.patience)
    src = train_source(entry, data, cfg, [domain])
    save_checkpoint(src.model, args.out, src.vocab,
                    {"stage": 0, "domain": domain, "seed": cfg.seed, "history": src.history})
    _emit({"checkpoint": str(args.out), "domain": domain, "test_accuracy": src.row[0],
           "params": src.model.n_params()})


def cmd_ida(args):
    cfg = _load_config(args.config, args.seed)
    if args.method:
        cfg.method = args.method
    if args.slots is not None:
        cfg.slots = args.slots
    if args.vocab_expand:
        cfg.vocab_expand = True
    domains = args.schedule.split(",") if args.schedule else list(cfg.schedule)
    if not domains:
        raise ValueError("no schedule given (use --schedule or the config's schedule field)")
    root = args.data or cfg.data
    if root is None:
        raise ValueError("no data directory given (use --data or the config's data field)")
    data = _load_data(root, domains)
    schedule = DomainSchedule.from_config(cfg, domains)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_schedule(schedule, data, cfg, out_dir=out)
    rec = RunRecord.from_result(result)
    rec.save(out / f"{rec.run_id}.run.json")
    cfg.save(out / "config.json")
    _emit({"run_id": rec.run_id, "stages": rec.stages, "domains": rec.domains,
           "matrix": rec.matrix, "out": str(out)})


def cmd_eval(args):
    ckpt = read_checkpoint(args.ckpt)
    if ckpt.vocab is None:
        raise ValueError(f"{args.ckpt}: checkpoint has no vocabulary")
    model = load_checkpoint(args.ckpt)
    vocab = ds.Vocab.from_list(ckpt.vocab)
    domains = args.domains.split(",") if args.domains else ds.list_domains(args.data)
    accs = {}
    for d in domains:
        exs = ds.load_domain_dir(args.data, d)[args.split]
        accs[d] = evaluate(model, ds.encode_examples(exs, vocab))[0]
    _emit({"checkpoint": str(args.ckpt), "split": args.split, "accuracy": accs})


def cmd_verify_theorem(args):
    alpha = [float(x) for x in args.fixed_alpha.split(",")] if args.fixed_alpha else None
    cfg = SimulationConfig(D=args.D, d=args.d, sigma=args.sigma, N=args.N, M=args.M,
                           trials=args.trials, seed=args.seed or 0,
                           attention_mode=args.attention_mode, fixed_alpha=alpha,
                           fix_query=args.fix_query)
    rep = verify_theorem(cfg)
    if args.json:
        Path(args.json).write_text(rep.to_json() + "\n")
    print(rep.table())
    print(rep.to_json())
    return 0 if all(v != "FAIL" for v in rep.verdicts.values()) else 3


def cmd_gradcheck(args):
    rep = check_gradients(seed=args.seed or 0, hidden_dim=args.hidden, n_slots=args.slots,
                          vocab_size=args.vocab, length=args.length, cell=args.cell,
                          max_per_param=None if args.all else args.per_param)
    ok = rep.passed(args.tol)
    _emit({"max_relative_error": rep.max_error, "tolerance": args.tol, "passed": ok,
           "per_parameter": rep.errors})
    return 0 if ok else 3


def cmd_report(args):
    runs = load_runs(args.runs)
    sys.stdout.write(report_matrix(runs, args.format, args.reference, args.pairing,
                                   seed=args.seed or 0))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="progmem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic multi-domain benchmark")
    sp.add_argument("--spec", help="JSON list of domain specs, or {seed, domains}")
    sp.add_argument("--domains", type=int, default=5, help="number of default domains")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a model on one domain")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--domain")
    sp.add_argument("--out", required=True)

    sp = add("ida", cmd_ida, "run an incremental domain schedule")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--schedule", help="comma-separated domain names")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--slots", type=int)
    sp.add_argument("--vocab-expand", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a checkpoint on every domain")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--domains")
    sp.add_argument("--split", default="test", choices=ds.SPLITS)

    sp = add("verify-theorem", cmd_verify_theorem, "Monte Carlo check of the expansion bound")
    sp.add_argument("--D", type=int, default=8)
    sp.add_argument("--d", type=int, default=4)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--N", type=int, default=8)
    sp.add_argument("--M", type=int, default=2)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--attention-mode", choices=MODES, default="sampled")
    sp.add_argument("--fixed-alpha", help="comma-separated unnormalized weights (N+M)")
    sp.add_argument("--fix-query", action="store_true")
    sp.add_argument("--json", help="also write the report here")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the classifier")
    sp.add_argument("--hidden", type=int, default=16)
    sp.add_argument("--slots", type=int, default=4)
    sp.add_argument("--vocab", type=int, default=20)
    sp.add_argument("--length", type=int, default=5)
    sp.add_argument("--cell", default="lstm", choices=("lstm", "gru", "vanilla"))
    sp.add_argument("--per-param", type=int, default=24)
    sp.add_argument("--all", action="store_true", help="probe every parameter element")
    sp.add_argument("--tol", type=float, default=1e-5)

    sp = add("report", cmd_report, "tables and significance tests over saved runs")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    sp.add_argument("--reference")
    sp.add_argument("--pairing", choices=("bootstrap", "seed"), default="bootstrap")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except Exception as e:  # noqa: BLE001 - every failure becomes one parsable line
        print(json.dumps({"error": type(e).__name__, "message": str(e),
                          "command": args.command}), file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
