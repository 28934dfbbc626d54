"""Command-line front end: ``p2pswarm <command> --config scenario.toml``.

Exit codes:
    0  success
    1  unexpected internal error
    2  bad usage or an unreadable / invalid scenario file
    3  a simulation invariant was violated
    4  a drift certificate could not be established
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from p2pswarm import analyze as an
from p2pswarm import lyapunov as ly
from p2pswarm import simulate as sim
from p2pswarm.config import Scenario, ScenarioError, parse_scenario
from p2pswarm.model import InvalidParams, format_pieces, pieces_of, popcount
from p2pswarm.simulate import fmt, write_csv

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_INVARIANT, EXIT_UNCERTIFIED = 0, 1, 2, 3, 4


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args) -> Scenario:
    sc = parse_scenario(args.config)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.replications is not None:
        if args.replications < 1:
            raise ScenarioError("--replications must be at least 1")
        sc = replace(sc, replications=args.replications)
    return sc


def _run_kwargs(sc: Scenario) -> dict:
    return dict(designated=sc.designated, engine=sc.engine, stride=sc.stride, grid=sc.grid)


def cmd_simulate(sc: Scenario, out: Path, threads: int = 1) -> int:
    traj = sim.run(sc.params, sc.policy, sc.horizon, sc.seed, **_run_kwargs(sc))
    traj.to_csv(out / "trajectory.csv")
    summary = sim.replicate(sc.params, sc.horizon, sc.replications, sc.seed, sc.policy, threads,
                            **_run_kwargs(sc))
    summary.to_csv(out / "summary.csv")
    stats = summary.stats()
    print(f"{sc.replications} replication(s), horizon {fmt(sc.horizon)}")
    print(f"{'observable':<16}{'mean':>17}{'p05':>17}{'p50':>17}{'p95':>17}")
    for name, s in stats.items():
        print(f"{name:<16}{fmt(s['mean']):>17}{fmt(s['p05']):>17}{fmt(s['p50']):>17}{fmt(s['p95']):>17}")
    return EXIT_OK


def cmd_analyze(sc: Scenario, out: Path) -> int:
    p = sc.params
    v = an.classify(p)
    print(f"verdict: {v.verdict}")
    print(f"reason:  {v.reason}")
    if p.coded:
        rows = [[name, float(m), str(m)] for name, m in v.margins.items()]
        write_csv(out / "analysis.csv", ["clause", "margin", "margin_exact"], rows)
        for name, m in v.margins.items():
            print(f"{name:<10} margin {fmt(float(m))}  ({m})")
        return EXIT_OK
    if v.binding:
        print("binding: " + ", ".join(str(k) for k in v.binding))
    rows = []
    if v.margins:
        print(f"{'k':>3}  {'one-club set':<24}{'margin':>14}")
        for k, m in v.margins.items():
            S = format_pieces(p.full & ~(1 << (k - 1)))
            print(f"{k:>3}  {S:<24}{fmt(float(m)):>14}")
            rows.append([k, S, float(m), str(m), int(k in v.binding)])
    else:
        for k in range(1, p.K + 1):
            rows.append([k, format_pieces(p.full & ~(1 << (k - 1))), "", "", int(k in v.binding)])
    write_csv(out / "analysis.csv", ["k", "one_club", "margin", "margin_exact", "binding"], rows)
    return EXIT_OK


def _state_rows(ws) -> list[list]:
    """``(type, count)`` rows; coded types are written as their basis rows."""
    rows = []
    for key, c in ws.items():
        if isinstance(key, int):
            rows.append(["".join(map(str, pieces_of(key))) or "0", c])
        else:
            rows.append([" ".join("".join(map(str, r)) for r in key.rows.tolist()) or "0", c])
    return sorted(rows)


def cmd_lyapunov(sc: Scenario, out: Path) -> int:
    p = sc.params
    opts = sc.lyapunov
    res = ly.find_consts(p, search_count=opts.get("search_count", 2000),
                         certify_count=opts.get("certify_count", 10_000), seed=sc.seed,
                         budget=opts.get("budget"))
    if res.found:
        cert = res.certificate
        consts = res.consts
    else:
        print(f"no certificate: {res.reason}")
        cert = consts = None
        try:
            consts = next(ly._ladder(p))
            ly.check_consts(consts, p)
            cert = ly.positive_drift_witness(p, consts, opts.get("certify_count", 10_000), sc.seed)
        except ly.LyapunovError:
            cert = consts = None  # outside the regime of W; nothing to witness
    rows = []
    if consts is not None:
        rows = [[k, "" if v is None else v] for k, v in consts.as_dict().items()]
    if cert is not None:
        rows += [["max_drift_ratio", cert.max_ratio], ["passed", int(cert.passed)], ["states", cert.count]]
        print(cert.summary())
        state_rows = _state_rows(cert.worst_state)
        write_csv(out / "worst_state.csv", ["type", "count"], state_rows)
        print("worst state: " + ", ".join(f"{t}:{c}" for t, c in state_rows))
    write_csv(out / "lyapunov.csv", ["name", "value"], rows)
    for k, v in rows:
        print(f"  {k:<16} {fmt(v) if v != '' else '-'}")
    return EXIT_OK if res.found else EXIT_UNCERTIFIED


def cmd_sweep(sc: Scenario, out: Path, threads: int = 1) -> int:
    if sc.sweep is None:
        raise ScenarioError(f"{sc.source}: the sweep command needs a [sweep] table")
    sw = sc.sweep
    reps = sw.replications or sc.replications
    horizon = sw.horizon or sc.horizon
    rows = []
    print(f"{'value':>12}  {'verdict':<18}{'growth_slope':>14}{'mean_n':>14}")
    for value in sw.values:
        point = sc.with_value(sw.param, value)
        verdict = an.classify(point.params).verdict
        summary = sim.replicate(point.params, horizon, reps, sc.seed, sc.policy, threads, **_run_kwargs(point))
        slope = float(np.median(summary.values("growth_slope")))
        mean_n = float(np.mean(summary.values("mean_n_late")))
        rows.append([float(value), str(verdict), slope, mean_n])
        print(f"{fmt(float(value)):>12}  {verdict!s:<18}{fmt(slope):>14}{fmt(mean_n):>14}")
    write_csv(out / "sweep.csv", ["value", "verdict", "growth_slope", "mean_n"], rows)
    return EXIT_OK


def watched_rate(sc: Scenario) -> float:
    p = sc.params
    if p.coded or p.Us != 0 or p.gamma != math.inf:
        raise ScenarioError(f"{sc.source}: the watched chain needs Us = 0, gamma = inf and no coding")
    rates = {m: r for m, r in p.arrivals.items() if r > 0}
    if p.K < 2 or len(rates) != p.K or any(popcount(m) != 1 for m in rates) or len(set(rates.values())) != 1:
        raise ScenarioError(f"{sc.source}: the watched chain needs K >= 2 and one equal rate per single piece")
    return float(next(iter(rates.values())))


def cmd_watched(sc: Scenario, out: Path) -> int:
    lam = watched_rate(sc)
    K = sc.params.K
    opts = sc.watched
    z_samples = int(opts.get("z_samples", 10_000))
    z_n = int(opts.get("z_n", 10_000))
    horizon = float(opts.get("horizon", sc.horizon))
    rng, _ = sim.rng_streams(sc.seed, 1)
    z = np.array([sim.sample_Z(K, z_n, rng) for _ in range(z_samples)])
    values, counts = np.unique(z, return_counts=True)
    write_csv(out / "watched_z.csv", ["z", "count", "frequency"],
              [[int(v), int(c), c / len(z)] for v, c in zip(values, counts)])
    path = sim.run_watched(K, lam, horizon, sc.seed)
    write_csv(out / "watched_path.csv", ["t", "n", "k"], zip(path.times, path.n, path.k))
    inc = np.array(path.top_increments, dtype=float)
    se = z.std(ddof=1) / math.sqrt(len(z)) if len(z) > 1 else float("nan")
    print(f"Z samples: {len(z)} from one-clubs of {z_n} peers")
    print(f"  mean Z = {fmt(z.mean())} (SE {fmt(se)}), expected {K - 1}")
    print(f"  P(Z=0) = {fmt(np.mean(z == 0))}, expected {fmt(2.0 ** -(K - 1))}")
    if len(inc):
        ise = inc.std(ddof=1) / math.sqrt(len(inc)) if len(inc) > 1 else float("nan")
        print(f"top-layer increments: {len(inc)}, mean {fmt(inc.mean())} (SE {fmt(ise)})")
    if path.return_times:
        rt = np.array(path.return_times)
        print(f"returns to the empty state: {len(rt)}, mean gap {fmt(rt.mean())}")
    else:
        print("no return to the empty state within the horizon")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2pswarm", description="P2P swarm simulator and stability toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "simulate the swarm and summarise replications"),
        ("analyze", "classify stability and print the one-club margins"),
        ("lyapunov", "search for and certify Lyapunov constants"),
        ("sweep", "sweep one parameter: verdict and simulated growth"),
        ("watched", "sample the mu = inf watched chain"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--replications", type=int, default=None, help="override the replication count")
        p.add_argument("--threads", type=int, default=1, help="worker processes for replications")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        sc = _scenario(args)
        out = _out(args)
        if args.command == "simulate":
            return cmd_simulate(sc, out, args.threads)
        if args.command == "analyze":
            return cmd_analyze(sc, out)
        if args.command == "lyapunov":
            return cmd_lyapunov(sc, out)
        if args.command == "sweep":
            return cmd_sweep(sc, out, args.threads)
        return cmd_watched(sc, out)
    except (ScenarioError, InvalidParams, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except sim.InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except ly.LyapunovError as e:
        print(f"certification error: {e}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
