"""Subcommand-driven pipeline: simulate, ingest, fit, generate, evaluate,
attack.  Every command is deterministic given its inputs, config and seed;
errors map to distinct exit codes with one machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from datetime import datetime

import numpy as np

from . import dataio, generators, metrics, privacy
from .dataio import FORMAT_VERSION
from .errors import (DomainError, FormatVersionError, IncompatibilityError,
                     InsufficientDataError, ParseError)
from .geogrid import GridSpec

logger = logging.getLogger(__name__)

OUTDIR_ENV = "MOBSYNTH_OUTDIR"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INCOMPATIBLE = 4
EXIT_DOMAIN = 5
EXIT_NOT_FOUND = 6

_EXIT_CODES = (
    (ParseError, EXIT_PARSE),
    (FormatVersionError, EXIT_INCOMPATIBLE),
    (IncompatibilityError, EXIT_INCOMPATIBLE),
    (InsufficientDataError, EXIT_DOMAIN),
    (DomainError, EXIT_DOMAIN),
    (FileNotFoundError, EXIT_NOT_FOUND),
)

DEFAULT_BBOX = "45.8,47.8,5.9,10.5"  # roughly a Switzerland-sized box


def read_config(path) -> dict:
    """Flat key=value file; '#' starts a comment."""
    config = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", line=lineno)
            key, value = line.split("=", 1)
            config[key.strip().replace("-", "_")] = value.strip()
    return config


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Config file fills in values the command line left at their defaults."""
    if not getattr(args, "config", None):
        return
    config = read_config(args.config)
    actions = {}
    stack = [parser]
    while stack:
        p = stack.pop()
        for a in p._actions:
            if isinstance(a, argparse._SubParsersAction):
                stack.extend(a.choices.values())
            elif a.dest not in actions:
                actions[a.dest] = a
    for key, value in config.items():
        action = actions.get(key)
        if action is None or not hasattr(args, key):
            continue
        if getattr(args, key) == action.default:
            if isinstance(action.default, bool):
                value = value.lower() in ("1", "true", "yes")
            elif action.type is not None:
                value = action.type(value)
            elif isinstance(action.default, int):
                value = int(value)
            elif isinstance(action.default, float):
                value = float(value)
            setattr(args, key, value)


def _parse_bbox(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise DomainError("--bbox expects lat_min,lat_max,lon_min,lon_max")
    return parts


def _grid_spec(args) -> GridSpec:
    lat_min, lat_max, lon_min, lon_max = _parse_bbox(args.bbox)
    return GridSpec(lat_min, lat_max, lon_min, lon_max, level=args.level)


def _require_seed(args) -> int:
    if args.seed is None:
        raise DomainError("--seed is mandatory for this command")
    return int(args.seed)


def _outdir(args) -> str:
    outdir = os.environ.get(OUTDIR_ENV) or getattr(args, "outdir", None)
    if not outdir:
        outdir = os.path.join("runs", datetime.now().strftime("run_%Y%m%d_%H%M%S"))
    os.makedirs(outdir, exist_ok=True)
    return outdir


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = _grid_spec(args)
    corpus = dataio.simulate_ground_truth(
        spec, n_users=args.users, trace_len=args.steps, n_hotspots=args.hotspots,
        seed=_require_seed(args), sampling_period=args.period,
        start_time=args.start_time,
        population_seed=args.population_seed)
    dataio.save_corpus(corpus, args.out)
    print(f"simulated corpus: {len(corpus)} traces x {args.steps} steps -> {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    spec = _grid_spec(args)
    corpus = dataio.ingest(args.input, spec, args.period)
    dataio.save_corpus(corpus, args.out)
    print(f"ingested {len(corpus)} traces ({corpus.n_points()} points) -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    corpus = dataio.load_corpus(args.corpus)
    t0 = time.perf_counter()
    if args.model_type == "vine":
        model = generators.vine_fit_generator(
            corpus, window=args.window, trunc_level=args.trunc_level,
            max_scores=args.max_scores,
            bandwidth_scale=args.bandwidth_scale, max_rows=args.max_rows,
            seed=_require_seed(args))
    elif args.model_type == "markov":
        model = generators.markov_fit(
            corpus, order=args.order, time_buckets=args.time_buckets, alpha=args.alpha)
    else:
        raise DomainError(f"unknown model type {args.model_type!r}")
    fit_seconds = time.perf_counter() - t0
    dataio.save_model(model, args.out)
    print(f"fit {args.model_type} model in {fit_seconds:.2f}s -> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model = dataio.load_model(args.model)
    t0 = time.perf_counter()
    corpus = model.generate(args.n_traces, args.trace_len, args.start_time,
                            _require_seed(args))
    gen_seconds = time.perf_counter() - t0
    dataio.save_corpus(corpus, args.out)
    print(f"generated {len(corpus)} traces in {gen_seconds:.2f}s -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    seed = _require_seed(args)
    real = dataio.load_corpus(args.real)
    syn = dataio.load_corpus(args.syn, expected_spec=real.spec)
    outdir = _outdir(args)
    rng = np.random.default_rng(seed)
    timings = {"fit_seconds": args.fit_seconds, "generate_seconds": args.gen_seconds}

    t0 = time.perf_counter()
    top = metrics.topn_report(real, syn, n=args.topn)
    mmd = metrics.mmd_test(real, syn, n_permutations=args.n_permutations,
                           rng=rng, threads=args.threads)
    mi_real = metrics.mi_decay(real, tau_max=args.tau_max)
    mi_syn = metrics.mi_decay(syn, tau_max=args.tau_max)

    prior = generators.markov_fit(syn, order=1, time_buckets=24)
    seq_acc = privacy.run_sequence_attack(real, prior, args.p_hide, rng)
    if args.targets:
        member_traces, nonmember_traces = _load_targets(args.targets, real.spec,
                                                        real.sampling_period)
        mem = privacy.membership_attack(syn, member_traces, nonmember_traces, rng)
        membership_block = mem.to_dict()
        _write_membership_csv(os.path.join(outdir, "membership_scores.csv"), mem)
    else:
        mem = None
        membership_block = {"skipped": True}
    priv = {
        "sequence_attack_accuracy": seq_acc,
        "random_baseline_sequence": 1.0 / prior.alphabet.size,
        "hide_probability": args.p_hide,
        "membership": membership_block,
        "random_baseline_membership": 0.5,
    }
    timings["evaluate_seconds"] = time.perf_counter() - t0

    report = {
        "format_version": FORMAT_VERSION,
        "config": {
            "seed": seed,
            "topn": args.topn,
            "tau_max": args.tau_max,
            "n_permutations": args.n_permutations,
            "p_hide": args.p_hide,
            "grid_spec": real.spec.to_dict(),
            "sampling_period": real.sampling_period,
        },
        "topn": top.to_dict(),
        "mmd": mmd.to_dict(),
        "mi_decay": {"real": mi_real.to_dict(), "synthetic": mi_syn.to_dict()},
        "privacy": priv,
        "timings": timings,
    }
    report_path = os.path.join(outdir, "report.json")
    dataio.save_report(report, report_path)
    _write_plotting_csvs(outdir, top, mmd, mi_real, mi_syn)
    print(f"evaluation report -> {report_path}")
    return EXIT_OK


def cmd_attack(args) -> int:
    seed = _require_seed(args)
    syn = dataio.load_corpus(args.syn)
    member_traces, nonmember_traces = _load_targets(args.targets, syn.spec,
                                                    syn.sampling_period)
    rng = np.random.default_rng(seed)
    prior = generators.markov_fit(syn, order=1, time_buckets=24)
    truth = dataio.Corpus(spec=syn.spec, traces=member_traces + nonmember_traces,
                          sampling_period=syn.sampling_period)
    seq_acc = privacy.run_sequence_attack(truth, prior, args.p_hide, rng)
    mem = privacy.membership_attack(syn, member_traces, nonmember_traces, rng)
    result = privacy.PrivacyResult(
        sequence_attack_accuracy=seq_acc,
        membership_accuracy=mem.accuracy,
        membership_auc=mem.auc,
        random_baseline_sequence=1.0 / prior.alphabet.size,
        random_baseline_membership=0.5,
        hide_probability=args.p_hide,
    )
    payload = {"format_version": FORMAT_VERSION, "privacy": result.to_dict()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    scores_path = os.path.splitext(args.out)[0] + "_scores.csv"
    _write_membership_csv(scores_path, mem, member_traces, nonmember_traces)
    print(f"privacy result -> {args.out}")
    return EXIT_OK


def _load_targets(path, spec, sampling_period):
    """Targets CSV: ingestion schema plus a trailing is_member column."""
    members, nonmembers = [], []
    import io

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        member_flags = {}
        rows_by_user = {}
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip().lower() == "user_id":
                continue
            if not row:
                continue
            if len(row) < 5:
                raise ParseError("targets file needs user_id,timestamp,lat,lon,is_member",
                                 line=lineno)
            member_flags[row[0]] = row[4].strip() in ("1", "true", "yes")
            rows_by_user.setdefault(row[0], []).append(row[:4])
    for user, rows in rows_by_user.items():
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(dataio.CSV_HEADER)
        w.writerows(rows)
        buf.seek(0)
        corpus = dataio.ingest(buf, spec, sampling_period)
        for trace in corpus.traces:
            (members if member_flags[user] else nonmembers).append(trace)
    return members, nonmembers


def _write_membership_csv(path, mem, member_traces=None, nonmember_traces=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target_index", "is_member", "score"])
        for i, s in enumerate(mem.member_scores):
            w.writerow([i, 1, repr(float(s))])
        for i, s in enumerate(mem.nonmember_scores):
            w.writerow([i, 0, repr(float(s))])


def _write_plotting_csvs(outdir, top, mmd, mi_real, mi_syn):
    with open(os.path.join(outdir, "topn.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "cell", "real_p", "syn_p"])
        for row in top.plotting_rows():
            w.writerow(row)
    with open(os.path.join(outdir, "mmd_permutations.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perm_mmd2_unbiased"])
        for s in mmd.perm_stats:
            w.writerow([repr(float(s))])
    for name, mi in (("mi_real.csv", mi_real), ("mi_syn.csv", mi_syn)):
        with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "mi_bits"])
            for tau, bits in zip(mi.lags, mi.mi_bits):
                w.writerow([int(tau), repr(float(bits))])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobsynth",
                                     description="copula-based synthetic mobility pipeline")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (mandatory where sampling occurs)")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for parallel sections")
    parser.add_argument("--config", default=None, help="flat key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_grid(p):
        p.add_argument("--bbox", default=DEFAULT_BBOX, help="lat_min,lat_max,lon_min,lon_max")
        p.add_argument("--level", type=int, default=8, help="grid subdivision level")

    p = sub.add_parser("simulate", help="seeded ground-truth corpus")
    add_grid(p)
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--hotspots", type=int, default=286)
    p.add_argument("--period", type=int, default=600)
    p.add_argument("--start-time", type=int, default=0)
    p.add_argument("--population-seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="raw CSV -> regularized corpus")
    add_grid(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=int, default=600)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit a generator model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model-type", choices=["vine", "markov"], default="vine")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=4, help="vine lag window")
    p.add_argument("--trunc-level", type=int, default=2,
                   help="vine truncation depth")
    p.add_argument("--max-scores", type=int, default=25000,
                   help="cap on kernel centers per pair copula")
    p.add_argument("--bandwidth-scale", type=float, default=0.00625)
    p.add_argument("--max-rows", type=int, default=25000,
                   help="cap on lag rows used for the vine fit")
    p.add_argument("--order", type=int, default=1, help="markov order")
    p.add_argument("--time-buckets", type=int, default=24)
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", help="synthesize a corpus from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-traces", type=int, required=True)
    p.add_argument("--trace-len", type=int, required=True)
    p.add_argument("--start-time", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="full metric battery real vs synthetic")
    p.add_argument("--real", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--outdir", default=None)
    p.add_argument("--topn", type=int, default=50)
    p.add_argument("--tau-max", type=int, default=20)
    p.add_argument("--n-permutations", type=int, default=500)
    p.add_argument("--p-hide", type=float, default=0.3)
    p.add_argument("--targets", default=None, help="optional labeled targets CSV")
    p.add_argument("--fit-seconds", type=float, default=None)
    p.add_argument("--gen-seconds", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="privacy battery against a synthetic corpus")
    p.add_argument("--syn", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p-hide", type=float, default=0.3)
    p.set_defaults(func=cmd_attack)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        for exc_type, code in _EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"error code={code} type={type(exc).__name__} msg={exc}", file=sys.stderr)
                return code
        print(f"error code={EXIT_ERROR} type={type(exc).__name__} msg={exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
