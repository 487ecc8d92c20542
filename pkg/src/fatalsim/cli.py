"""Command line entry point.

Exit codes: 0 pass, 1 property violation, 2 infeasible input or usage
error, 3 engine fault.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from .adversary import STRATEGIES, FaultPlan, make_strategy
from .constraints import (InfeasibleError, Params, TimeoutAssignment, check, derived_constants,
                          relation_slacks, solve, stabilization_bound)
from .engine import EngineFault, SimConfig, run, run_trials
from .model import ConfigurationError
from .trace import Trace
from .verifier import verify

EXIT_PASS, EXIT_VIOLATION, EXIT_USAGE, EXIT_ENGINE = 0, 1, 2, 3

TIMEOUT_KEYS = [name for name in TimeoutAssignment.__dataclass_fields__]

SCHEMA: dict[str, set[str]] = {
    "params": {"theta", "d", "n", "f", "alpha", "boost_x", "k"},
    "timeouts": {"mode", *TIMEOUT_KEYS},
    "faults": {"mode", "faulty", "budget", "channels", "strategy"},
    "clocks": {"policy"},
    "init": {"policy", "seed"},
    "run": {"horizon", "trials", "delays", "fixed_delay", "fast_rejoin", "transients",
            "trace_level", "weak"},
    "darts": {"policy", "period"},
}

BUNDLED = Path(__file__).with_name("scenarios")


class UsageError(Exception):
    pass


# --- scenario files ---------------------------------------------------------------

@dataclass
class Scenario:
    sim: SimConfig
    trials: int
    weak: bool | None
    resolved: dict


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _pairs(text: str, sep: str) -> list[tuple]:
    out = []
    for item in text.replace(",", " ").split():
        a, _, b = item.partition(sep)
        if not b:
            raise UsageError(f"expected a{sep}b, got {item!r}")
        out.append((a, b))
    return out


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_scenario(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    p = Path(path)
    if not p.exists() and (BUNDLED / p.name).exists():
        p = BUNDLED / p.name
    if not p.exists():
        raise UsageError(f"no such scenario: {path}")
    cp.read(p, encoding="utf-8")
    for sec in cp.sections():
        allowed = SCHEMA.get(sec)
        if allowed is None:
            raise UsageError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key in allowed or (sec == "clocks" and key.startswith("node")) \
                    or (sec == "faults" and key.startswith("strategy.")):
                continue
            raise UsageError(f"unknown key {key!r} in [{sec}]")
    return cp


def build_scenario(cp: configparser.ConfigParser) -> Scenario:
    def get(sec, key, default=None):
        return cp.get(sec, key, fallback=default) if cp.has_section(sec) else default

    try:
        params = Params(
            theta=float(get("params", "theta")),
            d=float(get("params", "d", "1000")),
            n=int(get("params", "n")),
            f=int(get("params", "f", "0")),
            alpha=float(get("params", "alpha", "1")),
            k=int(get("params", "k", "1")),
        )
    except TypeError:
        raise UsageError("[params] needs at least theta and n") from None
    params.validate()
    mode = get("timeouts", "mode", "solve")
    if mode == "solve":
        a = solve(params, boost_x=float(get("params", "boost_x", "0")))
    elif mode == "explicit":
        a = TimeoutAssignment.from_dict({k: get("timeouts", k) for k in TIMEOUT_KEYS})
    else:
        raise UsageError(f"[timeouts] mode must be solve or explicit, not {mode!r}")
    bad = check(params, a)
    if bad:
        raise InfeasibleError(f"timeout assignment violates {', '.join(bad)}")

    fmode = get("faults", "mode", "none")
    faulty = set(_ints(get("faults", "faulty", "")))
    channels = {(int(s), int(t)) for s, t in _pairs(get("faults", "channels", ""), "-")}
    if fmode == "none":
        plan = FaultPlan("static", set(), 0, channels)
    elif fmode == "static":
        plan = FaultPlan("static", faulty, 0, channels)
    elif fmode == "adaptive":
        plan = FaultPlan("adaptive", set(), int(get("faults", "budget", str(params.f))), channels)
    else:
        raise UsageError(f"[faults] mode must be none, static or adaptive, not {fmode!r}")
    sparams = {}
    if cp.has_section("faults"):
        for key, val in cp["faults"].items():
            if key.startswith("strategy."):
                sparams[key[len("strategy."):]] = float(val)
    sname = get("faults", "strategy", "silent")
    if sname not in STRATEGIES:
        raise UsageError(f"unknown strategy {sname!r}; choose from {sorted(STRATEGIES)}")
    strategy = make_strategy(sname, **sparams)
    if strategy.needs_adaptive and plan.mode != "adaptive":
        raise UsageError(f"strategy {sname!r} needs [faults] mode = adaptive")

    clocks = get("clocks", "policy", "random")
    sched = None
    if clocks == "explicit":
        sched = {}
        for key, val in cp["clocks"].items():
            if key.startswith("node"):
                sched[int(key[4:])] = [(int(t), float(r)) for t, r in _pairs(val, ":")]

    horizon_txt = get("run", "horizon", "auto")
    if horizon_txt == "auto":
        horizon = math.ceil(derived_constants(params, a).T_of_k(params.k)) + 20 * int(params.d)
    else:
        horizon = int(horizon_txt)
    transients = [(int(t), int(i)) for t, i in _pairs(get("run", "transients", ""), ":")]
    weak_txt = get("run", "weak", "auto")
    weak = None if weak_txt == "auto" else _bool(weak_txt)
    period = get("darts", "period")
    fixed = get("run", "fixed_delay")

    resolved = {sec: dict(cp[sec]) for sec in cp.sections()}
    resolved["timeouts"] = {"mode": mode, **{k: v for k, v in a.as_dict().items()}}
    sim = SimConfig(
        params=params, assignment=a, horizon=horizon,
        seed=int(get("init", "seed", "0")),
        faults=plan, strategy=strategy,
        init=get("init", "policy", "random"),
        clocks=clocks, clock_schedules=sched,
        delays=get("run", "delays", "random"),
        fixed_delay=int(fixed) if fixed else None,
        darts=get("darts", "policy", "random"),
        darts_period=float(period) if period else None,
        fast_rejoin=_bool(get("run", "fast_rejoin", "false")),
        transients=transients,
        trace_level=get("run", "trace_level", "outputs"),
        extra_meta=resolved,
    )
    sim.validate()
    return Scenario(sim, int(get("run", "trials", "1")), weak, resolved)


# --- reports ----------------------------------------------------------------------

def report_text(trace: Trace, weak: bool | None = None, k: int | None = None) -> tuple[str, bool]:
    rep = verify(trace, weak=weak, k=k)
    head = "# fatalsim report v1\n# meta " + json.dumps(trace.meta, sort_keys=True, separators=(",", ":")) + "\n"
    return head + rep.render(), rep.passed


def _fmt(x: float) -> str:
    return f"{x:.6f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def render_assignment(p: Params, a: TimeoutAssignment, boost_x: float = 0.0) -> str:
    c = derived_constants(p, a)
    sb = stabilization_bound(p, a)
    lines = ["[params]"]
    lines += [f"theta = {p.theta!r}", f"d = {_fmt(p.d)}", f"n = {p.n}", f"f = {p.f}",
              f"alpha = {p.alpha!r}", f"boost_x = {boost_x!r}", f"k = {p.k}", "", "[timeouts]",
              "mode = explicit"]
    lines += [f"{k} = {_fmt(v)}" for k, v in a.as_dict().items()]
    lines += ["", "# derived constants"]
    for name in ("lam", "Delta_g", "Delta_s", "delta_s", "delta_s_tilde", "hatE3"):
        lines.append(f"# {name} = {getattr(c, name):.6f}")
    lines.append(f"# T(k={p.k}) = {sb.T_of_k:.3f}")
    lines.append(f"# success probability: strong {sb.prob_strong:.6f}, weak {sb.prob_weak:.6f}, "
                 f"adaptive {sb.prob_adaptive:.6f}")
    return "\n".join(lines) + "\n"


# --- commands ---------------------------------------------------------------------

def cmd_solve(args) -> int:
    p = Params(args.theta, args.d, args.n, args.f, args.alpha, args.k)
    a = solve(p, boost_x=args.boost_x)
    text = render_assignment(p, a, args.boost_x)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_PASS


def cmd_check(args) -> int:
    cp = read_scenario(args.config)
    sec = cp["params"]
    p = Params(float(sec["theta"]), float(sec.get("d", "1000")), int(sec["n"]), int(sec.get("f", "0")),
               float(sec.get("alpha", "1")), int(sec.get("k", "1")))
    p.validate()
    a = TimeoutAssignment.from_dict(dict(cp["timeouts"]))
    for name, slack in relation_slacks(p, a).items():
        print(f"{name:>8} slack {slack:.6f}")
    bad = check(p, a)
    print("feasible" if not bad else "violated: " + ", ".join(bad))
    return EXIT_VIOLATION if bad else EXIT_PASS


def cmd_simulate(args) -> int:
    sc = build_scenario(read_scenario(args.config))
    if args.seed is not None:
        sc.sim.seed = args.seed
    if args.horizon is not None:
        sc.sim.horizon = args.horizon
    stem = Path(args.config).stem
    trace_path = Path(args.trace or f"{stem}.trace")
    report_path = Path(args.report or f"{stem}.report")
    trace = run(sc.sim)
    trace.save(trace_path)
    text, ok = report_text(trace, sc.weak)
    report_path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"{'PASS' if ok else 'FAIL'} {trace_path}")
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_verify(args) -> int:
    trace = Trace.load(args.trace)
    weak = None if args.weak is None else args.weak == "yes"
    text, ok = report_text(trace, weak, args.k)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"{'PASS' if ok else 'FAIL'} {args.trace}")
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_sweep(args) -> int:
    sc = build_scenario(read_scenario(args.config))
    trials = args.trials if args.trials is not None else sc.trials
    if trials < 1:
        raise UsageError("--trials must be at least 1")
    ks = _ints(args.k) if args.k else [sc.sim.params.k]
    if args.seed is not None:
        sc.sim.seed = args.seed
    horizon = math.ceil(derived_constants(sc.sim.params, sc.sim.assignment).T_of_k(max(ks))) + 20 * int(sc.sim.params.d)
    if sc.resolved.get("run", {}).get("horizon", "auto") == "auto":
        sc.sim.horizon = horizon
    summary = run_trials(sc.sim, trials, ks=ks, jobs=args.jobs, weak=sc.weak)
    p = sc.sim.params
    print(f"trials = {trials}  seeds = {summary.seeds[0]}..{summary.seeds[-1]}  "
          f"strategy = {sc.sim.strategy.name if sc.sim.strategy else 'silent'}")
    mean = summary.mean()
    print(f"stabilized = {len(summary.finite())}/{trials}  mean time = "
          f"{'n/a' if mean is None else f'{mean:.1f}'}")
    for q, v in summary.quantiles().items():
        print(f"quantile {q:.2f} = {v:.1f}")
    for lo, hi, c in summary.histogram(args.bins):
        print(f"  [{lo:.0f}, {hi:.0f}] {c}")
    print(f"{'k':>3} {'T(k)':>16} {'within':>8} {'fraction':>9} {'bound':>9} {'p-value':>9} verdict")
    ok = True
    for k in ks:
        sb = stabilization_bound(p, sc.sim.assignment, k)
        if sc.sim.faults.mode == "adaptive":
            bound = sb.prob_adaptive
        elif sc.sim.faults.faulty_channels:
            bound = sb.prob_weak
        else:
            bound = sb.prob_strong
        pv = summary.binomial_p(k, bound)
        good = pv >= args.alpha
        ok &= good
        print(f"{k:>3} {summary.T[k]:>16.1f} {summary.within(k):>8} {summary.fraction(k):>9.4f} "
              f"{bound:>9.6f} {pv:>9.4f} {'pass' if good else 'FAIL'}")
    return EXIT_PASS if ok else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fatalsim", description="Pulse synchronization simulator and checker.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="compute a feasible timeout assignment")
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--d", type=float, default=1000.0)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--f", type=int, default=0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--boost-x", type=float, default=0.0)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("-o", "--out", help="also write the assignment to this file")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("check", help="check a timeout assignment file")
    c.add_argument("config")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("simulate", help="run one scenario and verify it")
    m.add_argument("config")
    m.add_argument("--seed", type=int)
    m.add_argument("--horizon", type=int)
    m.add_argument("--trace")
    m.add_argument("--report")
    m.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="Monte-Carlo stabilization statistics")
    w.add_argument("config")
    w.add_argument("--trials", type=int)
    w.add_argument("--k", help="comma separated list of k values")
    w.add_argument("--seed", type=int)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--bins", type=int, default=10)
    w.add_argument("--alpha", type=float, default=0.01, help="significance of the binomial test")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="verify a trace file")
    v.add_argument("trace")
    v.add_argument("--weak", choices=("yes", "no"))
    v.add_argument("--k", type=int)
    v.add_argument("--report")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        return args.func(args)
    except (InfeasibleError, UsageError, ConfigurationError, ValueError, KeyError,
            configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineFault as exc:
        print(f"engine fault: {exc}", file=sys.stderr)
        for rec in exc.tail:
            print("  " + ",".join(map(str, rec)), file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
