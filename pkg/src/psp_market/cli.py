"""Command-line front end.

Subcommands: ``run``, ``sweep``, ``ladder-check`` and ``shift-demo``.  Every
command resolves and validates its configuration before touching the output
directory.  Exit codes: 0 success, 1 usage or config error, 2 step limit hit
before convergence, 3 a check failed (ladder violation or trace mismatch).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, engine_config, experiment_spec, explicit_market, load
from .engine import run as run_engine
from .harness import (SWEEP_COLUMNS, appendix_scenario, classify_buyers, connectivity_sweep,
                      generate_market, ladder_market, seller_stats, to_jsonable)
from .influence import ladder_tuples

EXIT_OK, EXIT_CONFIG, EXIT_STEP_LIMIT, EXIT_CHECK = 0, 1, 2, 3
OUT_DIR_ENV = "PSP_OUT_DIR"

STATE_COLUMNS = ("buyer", "seller", "quantity", "price", "award", "payment")
SNAPSHOT_COLUMNS = ("event", "clock", "seller", "clearing_price", "reserve", "revenue")


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, columns, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in columns})


def _manifest(out: Path, command: str, cfg: dict, seed, artifacts: list, started: float):
    path = out / f"{command}.manifest.json"
    _dump_json(path, {"command": command, "config": cfg, "seed": seed,
                      "artifacts": sorted(str(a.name) for a in artifacts),
                      "version": __version__, "wall_time": round(time.perf_counter() - started, 6)})
    return path


def resolve(args) -> dict:
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"market.base_seed={args.seed}")
    if getattr(args, "max_steps", None) is not None:
        overrides.append(f"engine.max_steps={args.max_steps}")
    if getattr(args, "epsilon", None) is not None:
        overrides.append(f"market.epsilon={args.epsilon}")
        overrides.append(f"experiment.shift_epsilon={args.epsilon}")
    if getattr(args, "jobs", None) is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    return load(args.config, overrides)


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "psp_out")


def build_market(cfg: dict):
    m = cfg["market"]
    if m["preset"] == "ladder":
        return ladder_market(m["epsilon"])
    if m["preset"] == "explicit":
        return explicit_market(m)
    if m["preset"] == "appendix":
        raise ConfigError("the appendix preset is scripted; use shift-demo", "market.preset")
    return generate_market(experiment_spec(cfg), m["base_seed"])


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = resolve(args)
    market = build_market(cfg)
    ecfg = replace(engine_config(cfg), record_snapshots=True)
    started = time.perf_counter()
    res = run_engine(market, ecfg)
    m = res.market

    state_rows = [{"buyer": i, "seller": j, "quantity": m.bid(i, j).quantity,
                   "price": m.bid(i, j).unit_price, "award": m.award(i, j),
                   "payment": m.payments.get((i, j), 0.0)}
                  for (i, j) in sorted(m.links, key=lambda k: (str(k[0]), str(k[1])))]
    snap_rows = []
    for n, snap in enumerate(res.snapshots):
        for j in snap.seller_ids():
            s = snap.sellers[j]
            snap_rows.append({"event": n, "clock": snap.clock, "seller": j,
                              "clearing_price": s.clearing_price, "reserve": s.reserve,
                              "revenue": s.revenue})
    report = {
        "command": "run",
        "preset": cfg["market"]["preset"],
        "seed": cfg["market"]["base_seed"],
        "converged": res.converged,
        "steps": res.steps,
        "reserves_monotone": res.trace.reserves_monotone(),
        "tau_steps": len(res.trace.steps),
        "sellers": {str(j): {"capacity": s.capacity, "reserve": s.reserve,
                             "clearing_price": s.clearing_price, "revenue": s.revenue,
                             "stats": seller_stats(m, j)}
                    for j, s in m.sellers.items()},
        "buyers": classify_buyers(m, res.computes),
        "ladder": ladder_tuples(m).to_dict(),
        "shifts": [e.to_dict() for e in res.shifts],
    }
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "state.csv", out / "snapshots.csv", out / "report.json"]
    _write_csv(files[0], STATE_COLUMNS, state_rows)
    _write_csv(files[1], SNAPSHOT_COLUMNS, snap_rows)
    _dump_json(files[2], report)
    _manifest(out, "run", cfg, cfg["market"]["base_seed"], files, started)
    print(f"converged={res.converged} steps={res.steps} "
          f"violations={report['ladder']['n_violations']} out={out}")
    return EXIT_OK if res.converged else EXIT_STEP_LIMIT


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    x = cfg["experiment"]
    spec = experiment_spec(cfg)
    ecfg = engine_config(cfg)
    started = time.perf_counter()
    result = connectivity_sweep(spec, x["levels"], x["seeds_per_level"], ecfg, jobs=x["jobs"])
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "sweep.csv", out / "sweep_series.csv", out / "sweep.json"]
    _write_csv(files[0], SWEEP_COLUMNS, result.rows)
    series_cols = sorted({k for p in result.series for k in p}, key=lambda k: (k != "level", k))
    _write_csv(files[1], series_cols, result.series)
    _dump_json(files[2], {"series": result.series, "trend": result.trend,
                          "runs": len(result.rows) // max(spec.sellers, 1),
                          "unconverged": sum(1 for r in result.rows if not r["converged"]) // max(spec.sellers, 1)})
    _manifest(out, "sweep", cfg, spec.base_seed, files, started)
    rho = None if result.trend is None else result.trend["spearman"]
    print(f"rows={len(result.rows)} spearman={rho} out={out}")
    return EXIT_OK


def cmd_ladder_check(args) -> int:
    if args.market:
        cfg = load(args.market, list(args.override or []))
        if cfg["market"]["preset"] not in ("explicit", "ladder"):
            raise ConfigError("ladder-check needs an explicit or ladder market", "market.preset")
    else:
        cfg = load(None, ["market.preset=ladder"] + list(args.override or []))
    market = build_market(cfg)
    ecfg = replace(engine_config(cfg), buyer_mode="static")
    started = time.perf_counter()
    res = run_engine(market, ecfg, schedule="sellers")
    report = ladder_tuples(res.market)
    for t in report.tuples:
        flag = "ok" if t.ok else "VIOLATION"
        print(f"tuple (l={t.seller_l}, k={t.bridge_buyer_k}, j={t.seller_j}, i={t.buyer_i}) prices={list(t.prices)} "
              f"margins={list(t.margins)} {flag}")
    print(f"tuples={len(report.tuples)} seller_pairs={len(report.seller_pairs)} "
          f"margins={None if report.min_margins is None else list(report.min_margins)} "
          f"violations={len(report.violations)}")
    if report.violations:
        w = report.violations[0]
        print(f"witness: l={w.seller_l} k={w.bridge_buyer_k} j={w.seller_j} i={w.buyer_i} prices={list(w.prices)}")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ladder.json"
    _dump_json(path, report.to_dict())
    _manifest(out, "ladder-check", cfg, None, [path], started)
    return EXIT_CHECK if report.violations else EXIT_OK


def cmd_shift_demo(args) -> int:
    cfg = resolve(args)
    x = cfg["experiment"]
    started = time.perf_counter()
    rep = appendix_scenario(epsilon=x["shift_epsilon"], delta=x["delta"])
    print(f"{'seller':<6} {'clear':>5} {'tau':>3} {'buyer':<5} {'awarded':>8} {'charge':>8} {'reserve':>8}")
    for j, clears in rep["steps"].items():
        for c, steps in clears.items():
            for s in steps:
                print(f"{j:<6} {c:>5} {s['tau']:>3} {s['buyer']:<5} {s['awarded']:>8.3f} "
                      f"{s['charge']:>8.3f} {s['reserve_after']:>8.3f}")
    for e in rep["shifts"]:
        print(f"shift {e['kind']} seller={e['seller']} buyer={e['buyer']} t={e['round']}")
    if not rep["shifts"]:
        print("no market shift")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "shift_demo.json"
    _dump_json(path, rep)
    _manifest(out, "shift-demo", cfg, None, [path], started)
    ok = rep["round1_match"] and rep["coupled_rebid_ok"]
    print(f"payments_match={rep['round1_match']} coupled_rebid_ok={rep['coupled_rebid_ok']}")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"artifact directory (default ${OUT_DIR_ENV} or ./psp_out)")
    common.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config field; repeatable")

    p = argparse.ArgumentParser(prog="psp-market", description="PSP multi-auction market simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="simulate one market")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--epsilon", type=float)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="connectivity sweep")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_sweep)

    lc = sub.add_parser("ladder-check", parents=[common], help="price-ladder tuple report")
    lc.add_argument("--market", help="YAML config with an explicit market (default: built-in ladder)")
    lc.set_defaults(func=cmd_ladder_check)

    d = sub.add_parser("shift-demo", parents=[common], help="scripted market-shift trace")
    d.add_argument("--config")
    d.add_argument("--epsilon", type=float)
    d.set_defaults(func=cmd_shift_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
