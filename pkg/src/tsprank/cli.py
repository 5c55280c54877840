"""Command-line entry point: train, predict, evaluate, bench-latency.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .core import BilinearModel, RankingGroup, build_adjacency, tour_to_ranks
from .data_io import load_groups, load_model_with_config, read_predictions, save_model, write_predictions
from .errors import SolverTimeout, TSPRankError, UndefinedMetricError
from .learning import WEIGHTINGS, TrainConfig, train
from .solvers import SolverBackend, solve

log = logging.getLogger("tsprank")

SOLVER_CHOICES = {"brute": "brute", "hk": "hk", "milp": "milp", "auto": "auto"}
BENCH_COLUMNS = ["backend", "size", "trials", "adjacency_mean_s", "adjacency_std_s",
                 "solver_mean_s", "solver_std_s", "solver_share", "status"]


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_shared(p: argparse.ArgumentParser, data=True):
    p.add_argument("--config", help="JSON file of flag defaults (keys are flag names with underscores)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel groups for prediction/evaluation")
    p.add_argument("--solver", choices=sorted(SOLVER_CHOICES), default="auto")
    p.add_argument("--time-budget-ms", type=float, default=10_000.0, help="MILP budget per group")
    if data:
        p.add_argument("--format", choices=["letor", "jsonl"], default="jsonl")
        p.add_argument("--rank-order", choices=["ascending", "descending"], default=None,
                       help="label semantics (default: descending for letor, ascending for jsonl)")
        p.add_argument("--top-k", type=int, default=None, help="keep the k best entities per group")
        p.add_argument("--tie-break", action="store_true",
                       help="break tied labels by entity id instead of rejecting (exploratory only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsprank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a bilinear model")
    _add_shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--valid", help="validation split, evaluated by Kendall's tau each epoch")
    p.add_argument("--mode", choices=["local", "global"], default="local")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--extra-epochs", type=int, default=50, help="added to --epochs in global mode")
    p.add_argument("--no-hybrid", dest="hybrid", action="store_false",
                   help="global mode without alternating local-loss batches")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weighting", choices=WEIGHTINGS, default="flipped")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--encoder", choices=["identity", "linear"], default="identity")
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="JSON-lines training log (default: stderr)")

    p = sub.add_parser("predict", help="rank groups with a trained model")
    _add_shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="JSON-lines predictions (default: stdout)")
    p.add_argument("--dump-adjacency", help="JSON-lines file of per-group score matrices")

    p = sub.add_parser("evaluate", help="score predictions against gold ranks")
    _add_shared(p)
    p.add_argument("--data", required=True, help="dataset carrying gold ranks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions")
    src.add_argument("--model")
    p.add_argument("--ndcg-k", type=_int_list, default=[3, 5, 10])
    p.add_argument("--map-k", type=_int_list, default=[1, 3, 5])
    p.add_argument("--prices", help="JSON price series for IRR / Sharpe")
    p.add_argument("--report", help="write the JSON report here (default: stdout)")

    p = sub.add_parser("bench-latency", help="time adjacency construction vs solving")
    _add_shared(p, data=False)
    p.add_argument("--sizes", type=_int_list, default=[5, 10, 30, 50, 100])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--backends", default="hk,milp")
    p.add_argument("--out", help="CSV output (default: stdout)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def _validate(args):
    for name in ("data", "valid", "model", "predictions", "prices"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            raise UsageError(f"--{name} path does not exist: {path}")
    if getattr(args, "top_k", None) is not None and args.top_k < 2:
        raise UsageError("--top-k must be >= 2")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.command == "bench-latency":
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        if args.dim < 1 or any(s < 1 for s in args.sizes):
            raise UsageError("--dim and --sizes must be positive")
        bad = set(args.backends.split(",")) - {"brute", "hk", "milp"}
        if bad:
            raise UsageError(f"unknown backends {sorted(bad)}")
    if args.command == "train":
        if args.epochs < 1 or args.batch_size < 1 or args.lr <= 0 or args.extra_epochs < 0:
            raise UsageError("--epochs/--batch-size must be >= 1, --lr > 0, --extra-epochs >= 0")


def _backend(args) -> SolverBackend:
    return SolverBackend(SOLVER_CHOICES[args.solver], args.time_budget_ms)


def _load(args, path, dim=None) -> list[RankingGroup]:
    return load_groups(path, args.format, args.rank_order, args.top_k, args.tie_break, dim)


def _parallel_map(fn, items, jobs):
    if jobs == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))  # preserves input order


# -- subcommands -------------------------------------------------------------------------

def cmd_train(args) -> int:
    groups = _load(args, args.data)
    if not groups:
        raise TSPRankError(f"no groups in {args.data}")
    valid = _load(args, args.valid, groups[0].dim) if args.valid else None
    config = TrainConfig(mode=args.mode, learning_rate=args.lr, weight_decay=args.weight_decay,
                         epochs=args.epochs, extra_epochs=args.extra_epochs, batch_size=args.batch_size,
                         position_weighting=args.weighting, optimizer=args.optimizer, seed=args.seed,
                         solver=SOLVER_CHOICES[args.solver], time_budget_ms=args.time_budget_ms,
                         hybrid=args.hybrid)
    model = BilinearModel.init(groups[0].dim, args.encoder, seed=args.seed, scale=args.init_scale)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stderr
    try:
        def on_epoch(record):
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
        model, tlog = train(model, groups, config, valid, on_epoch)
    finally:
        if log_fh is not sys.stderr:
            log_fh.close()
    snapshot = config.to_dict()
    snapshot["encoder"] = args.encoder
    save_model(model, args.out, snapshot)
    if tlog.skipped_timeouts:
        log.warning("%d global-loss solves timed out and were skipped", tlog.skipped_timeouts)
    return 0


def _predict_group(model, group, backend, want_adj):
    try:
        adj = build_adjacency(model, group)
        tour, score = solve(adj, backend)
    except SolverTimeout as exc:
        return {"group_id": group.group_id, "error": f"timeout: {exc}"}, None
    except TSPRankError as exc:
        return {"group_id": group.group_id, "error": str(exc)}, None
    ranks = tour_to_ranks(tour)
    adj_rec = None
    if want_adj:
        off = np.where(np.eye(group.n, dtype=bool), None, adj).tolist()
        adj_rec = {"group_id": group.group_id, "entity_ids": list(group.entity_ids), "scores": off}
    return {"group_id": group.group_id, "ranks": ranks, "score": score}, adj_rec


def _predictions(args, model, groups):
    backend = _backend(args)
    want_adj = bool(getattr(args, "dump_adjacency", None))
    return _parallel_map(lambda g: _predict_group(model, g, backend, want_adj), groups, args.jobs)


def cmd_predict(args) -> int:
    model, _ = load_model_with_config(args.model)
    groups = _load(args, args.data, model.input_dim if args.format == "letor" else None)
    results = _predictions(args, model, groups)
    records, failed = [], 0
    for group, (res, _) in zip(groups, results):
        if "error" in res:
            failed += 1
            records.append(res)
            continue
        for eid, rank in zip(group.entity_ids, res["ranks"]):
            records.append({"group_id": group.group_id, "entity_id": eid, "rank": rank})
    write_predictions(args.out if args.out else sys.stdout, records)
    if args.dump_adjacency:
        write_predictions(args.dump_adjacency, [adj for _, adj in results if adj is not None])
    if failed:
        log.error("%d of %d groups failed", failed, len(groups))
        return 1
    return 0


def _safe(fn, *a):
    try:
        return fn(*a), None
    except (UndefinedMetricError, ValueError) as exc:
        return None, str(exc)


def evaluate_rankings(pairs, ndcg_k=(3, 5, 10), map_k=(1, 3, 5)) -> dict:
    """Mean metrics over (predicted ranks, gold ranks) pairs; undefined ones carry an error."""
    per = {}

    def add(name, value, err):
        entry = per.setdefault(name, {"values": [], "errors": []})
        if err is None:
            entry["values"].append(value)
        else:
            entry["errors"].append(err)

    firsts = []
    for pred, gold in pairs:
        n = len(gold)
        add("kendall_tau", *_safe(metrics.kendall_tau, pred, gold))
        add("exact_match", *_safe(metrics.exact_match, pred, gold))
        add("rmse", *_safe(metrics.rmse, pred, gold))
        firsts.append(metrics.first_relevant_rank(pred, gold))
        order = sorted(range(n), key=lambda i: pred[i])
        gains = metrics.gains_from_ranks(gold)
        for k in ndcg_k:
            add(f"ndcg@{k}", *_safe(metrics.ndcg_at_k, order, gains, min(k, n)))
        for k in map_k:
            if k <= n:
                add(f"map@{k}", *_safe(metrics.map_at_k, pred, gold, k))
    report = {}
    for name, entry in per.items():
        vals = entry["values"]
        report[name] = {"value": float(np.mean(vals)) if vals else None, "groups": len(vals)}
        if entry["errors"]:
            report[name]["errors"] = sorted(set(entry["errors"]))
    value, err = _safe(metrics.mrr, firsts)
    report["mrr"] = {"value": value, "groups": len(firsts)}
    if err:
        report["mrr"]["errors"] = [err]
    return report


def _trading_report(path, predictions) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    ids = [str(e) for e in payload["entity_ids"]]
    prices = np.asarray(payload["prices"], dtype=np.float64)
    if "rankings" in payload:
        rankings = np.asarray(payload["rankings"], dtype=np.int64)
    else:
        rankings = np.array([[predictions[str(g)][e] for e in ids] for g in payload["groups"]])
    out = {}
    for k in payload.get("k", [1, 3, 5]):
        series = metrics.PriceSeries(prices, rankings, k, payload.get("risk_free_rate", 0.0))
        out[f"irr@{k}"] = {"value": metrics.irr_at_k(series)}
        value, err = _safe(metrics.sharpe_ratio, metrics.portfolio_returns(series), series.risk_free_rate)
        out[f"sr@{k}"] = {"value": value} if err is None else {"value": None, "errors": [err]}
    return out


def cmd_evaluate(args) -> int:
    failed = 0
    if args.model:
        model, _ = load_model_with_config(args.model)
        groups = _load(args, args.data, model.input_dim if args.format == "letor" else None)
        results = _predictions(args, model, groups)
        predictions = {}
        for g, (res, _) in zip(groups, results):
            if "error" in res:
                failed += 1
                continue
            predictions[g.group_id] = dict(zip(g.entity_ids, res["ranks"]))
    else:
        groups = _load(args, args.data)
        predictions = read_predictions(args.predictions)
    pairs = []
    for g in groups:
        if g.gold_ranks is None:
            raise TSPRankError(f"group {g.group_id!r} has no gold ranks")
        pred = predictions.get(g.group_id)
        if pred is None:
            failed += 1
            continue
        pairs.append(([pred[e] for e in g.entity_ids], list(g.normalized().gold_ranks)))
    report = {"groups": len(pairs), "failed_groups": failed,
              "metrics": evaluate_rankings(pairs, args.ndcg_k, args.map_k)}
    if args.prices:
        report["metrics"].update(_trading_report(args.prices, predictions))
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    print(format_table(report["metrics"]), file=sys.stderr if not args.report else sys.stdout)
    return 1 if failed else 0


def format_table(metric_report: dict) -> str:
    width = max(len(k) for k in metric_report) if metric_report else 6
    lines = [f"{'metric':<{width}}  value"]
    for name, entry in metric_report.items():
        v = entry["value"]
        lines.append(f"{name:<{width}}  {'n/a' if v is None else f'{v:.4f}'}")
    return "\n".join(lines)


def bench_latency(sizes, trials, dim, backends, seed=0, time_budget_ms=10_000.0) -> list[dict]:
    """Mean/std of adjacency-construction and solver wall time per (backend, size)."""
    rows = []
    for kind in backends:
        backend = SolverBackend(kind, time_budget_ms)
        for n in sizes:
            try:
                backend.check_capacity(n)
            except TSPRankError:
                rows.append({"backend": kind, "size": n, "trials": 0, "status": "skipped"})
                continue
            rng = np.random.default_rng([seed, n])
            model = BilinearModel(rng.standard_normal((dim, dim)) / dim, 0.0)
            adj_t, sol_t, timeouts = [], [], 0
            for _ in range(trials):
                emb = rng.standard_normal((n, dim))
                t0 = time.perf_counter()
                adj = build_adjacency(model, emb)
                t1 = time.perf_counter()
                try:
                    solve(adj, backend)
                except SolverTimeout:
                    timeouts += 1
                t2 = time.perf_counter()
                adj_t.append(t1 - t0)
                sol_t.append(t2 - t1)
            a, s = float(np.mean(adj_t)), float(np.mean(sol_t))
            rows.append({"backend": kind, "size": n, "trials": trials,
                         "adjacency_mean_s": a, "adjacency_std_s": float(np.std(adj_t)),
                         "solver_mean_s": s, "solver_std_s": float(np.std(sol_t)),
                         "solver_share": s / (a + s),
                         "status": "ok" if not timeouts else f"timeout:{timeouts}"})
    return rows


def cmd_bench_latency(args) -> int:
    rows = bench_latency(args.sizes, args.trials, args.dim, args.backends.split(","), args.seed,
                         args.time_budget_ms)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, restval="")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "bench-latency": cmd_bench_latency}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tsprank {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TSPRankError, ValueError, OSError, KeyError) as exc:
        print(f"tsprank {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
