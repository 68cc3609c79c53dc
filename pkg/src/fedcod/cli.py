"""``fedcod`` command line: run experiments and compare their summaries."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
from pathlib import Path

from .config import load_config
from .errors import ComparisonError, ConfigError, InvalidConfig, StalledRound
from .protocol.variants import SERVER, parse_variant
from .sim.runner import run_experiment

log = logging.getLogger("fedcod")

CSV_COLUMNS = ("round", "variant", "client", "t_download", "t_train", "t_upload", "t_wait",
               "ingress_bytes", "egress_bytes", "r", "r_lb")
SUMMARY_FIELDS = ("t_download", "t_train", "t_upload", "t_wait", "communication_time",
                  "round_time", "server_ingress", "server_egress", "client_ingress",
                  "client_egress", "inter_client_bytes", "r")
EXIT_OK, EXIT_CONFIG, EXIT_STALL = 0, 1, 2


def _fmt(x) -> str:
    return "" if x is None else f"{x:.9f}"


def metrics_csv(result) -> str:
    """Per-round rows for every client plus one server row (empty timings)."""
    names = {SERVER: result.config.topology.server.name}
    names.update({i: c.name for i, c in enumerate(result.config.topology.clients)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for variant, history in result.rounds.items():
        for m in history:
            r_lb = "" if m.r_lb is None else m.r_lb
            for c, t in m.clients.items():
                w.writerow([m.round, variant, names[c], _fmt(t.t_download), _fmt(t.t_train),
                            _fmt(t.t_upload), _fmt(t.t_wait), m.ingress[c], m.egress[c], m.r,
                            r_lb])
            w.writerow([m.round, variant, names[SERVER], "", "", "", "", m.ingress[SERVER],
                        m.egress[SERVER], m.r, r_lb])
    return buf.getvalue()


def summarize(result) -> dict:
    cfg = result.config
    variants = {}
    for variant, history in result.rounds.items():
        clients = [c for m in history for c in m.clients]
        per_round = {
            "t_download": [m.mean("t_download") for m in history],
            "t_train": [m.mean("t_train") for m in history],
            "t_upload": [m.mean("t_upload") for m in history],
            "t_wait": [m.mean("t_wait") for m in history],
            "communication_time": [m.communication_time for m in history],
            "round_time": [m.round_time for m in history],
            "server_ingress": [m.ingress[SERVER] for m in history],
            "server_egress": [m.egress[SERVER] for m in history],
            "client_ingress": [statistics.fmean(m.ingress[c] for c in m.clients)
                               for m in history],
            "client_egress": [statistics.fmean(m.egress[c] for c in m.clients)
                              for m in history],
            "inter_client_bytes": [m.inter_client_bytes for m in history],
            "r": [m.r for m in history],
        }
        variants[variant] = {key: statistics.fmean(vals) for key, vals in per_round.items()}
        variants[variant]["clients"] = len(set(clients))
    return {
        "fingerprint": cfg.fingerprint(),
        "seed": result.seed,
        "rounds": cfg.rounds,
        "model_length": cfg.model_length,
        "k": cfg.k,
        "variants": variants,
        "trajectories": {v: [[t.round, t.r, t.r_lb, t.t_cur] for t in traj]
                         for v, traj in result.trajectories.items()},
    }


def compare(a: dict, b: dict) -> dict:
    """Percentage change from ``a`` to ``b`` for every summary field.

    Two single-variant summaries are compared directly even if the variant
    names differ; otherwise the variants present in both are paired by name.
    """
    if a.get("fingerprint") != b.get("fingerprint"):
        raise ComparisonError("summaries come from different topologies or parameters")
    if a.get("rounds") != b.get("rounds"):
        raise ComparisonError(f"round counts differ ({a.get('rounds')} vs {b.get('rounds')})")
    va, vb = a["variants"], b["variants"]
    if len(va) == 1 and len(vb) == 1:
        pairs = [(next(iter(va)), next(iter(vb)))]
    else:
        pairs = [(v, v) for v in va if v in vb]
    if not pairs:
        raise ComparisonError("no variant in common")
    report = {}
    for x, y in pairs:
        label = x if x == y else f"{x} -> {y}"
        report[label] = {key: _delta(va[x][key], vb[y][key]) for key in SUMMARY_FIELDS}
    return report


def _delta(old, new):
    if old == new:
        return 0.0
    if old == 0:
        return None
    return 100.0 * (new - old) / old


def _print_summary(summary, out):
    cols = ("t_download", "t_upload", "t_wait", "server_ingress", "server_egress",
            "inter_client_bytes")
    out.write(f"{'variant':18s}" + "".join(f"{c:>20s}" for c in cols) + "\n")
    for v, row in summary["variants"].items():
        out.write(f"{v:18s}" + "".join(f"{row[c]:>20.6g}" for c in cols) + "\n")


def _print_compare(report, out):
    for label, deltas in report.items():
        out.write(f"{label}\n")
        for key, d in deltas.items():
            text = "n/a" if d is None else f"{d:+.2f}%"
            out.write(f"  {key:22s}{text:>12s}\n")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        variants = None
        if args.variant_filter:
            variants = [parse_variant(v) for v in args.variant_filter.split(",") if v.strip()]
            missing = [v.value for v in variants if v not in {x.name for x in cfg.variants}]
            if missing:
                raise ConfigError("variants", f"filter names variants not in the config: "
                                              f"{', '.join(missing)}")
        result = run_experiment(cfg, seed=args.seed_override, variants=variants)
    except (ConfigError, InvalidConfig, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StalledRound as exc:
        print(f"stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    out_dir = Path(args.out or cfg.output or "fedcod-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(metrics_csv(result))
    summary = summarize(result)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _print_summary(summary, sys.stdout)
    log.info("wrote %s and %s", out_dir / "metrics.csv", out_dir / "summary.json")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a = json.loads(Path(args.a).read_text())
        b = json.loads(Path(args.b).read_text())
        report = compare(a, b)
    except (OSError, json.JSONDecodeError, KeyError, ComparisonError) as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_compare(report, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedcod", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
    run.add_argument("--variant-filter", default=None,
                     help="comma-separated subset of the configured variants")
    run.add_argument("--out", default=None, help="output directory (default: config output)")
    run.set_defaults(func=cmd_run)
    cmp_ = sub.add_parser("compare", help="percentage deltas between two summary.json files")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
