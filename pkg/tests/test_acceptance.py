"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The Monte-Carlo criteria (4 to 9) are marked ``slow``; criterion 6 alone
runs 800 simulations to a horizon past T(3) and takes most of an hour on a
single core.  Traces of criteria 4 to 6 are analysed once and shared with
criterion 7.
"""

import math
import random
import time
from dataclasses import replace
from functools import lru_cache

import pytest

from fatalsim.adversary import FaultPlan, make_strategy
from fatalsim.constraints import (Params, achieved_ratio, alpha_sup, check, derived_constants,
                                  ratio_sup, solve, stabilization_bound, theta_max)
from fatalsim.engine import SimConfig, TrialSummary, run
from fatalsim.verifier import analyze_pulses, check_basic_cycle, check_sleep_windows, verify

D = 1000
THETA = 1.1


def line(emit, n, ok, text):
    emit(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text}")


# --- 1 -----------------------------------------------------------------------------

def test_criterion_1_theta_max(report_line):
    t0 = time.perf_counter()
    t = theta_max()
    dt = time.perf_counter() - t0
    ok = abs(t - 1.247) <= 1e-3 and dt < 1
    line(report_line, 1, ok, f"theta_max = {t:.6f} (target 1.247 +- 0.001) in {dt * 1e3:.2f} ms")
    assert ok


# --- 2 -----------------------------------------------------------------------------

def _random_params(rng: random.Random) -> Params:
    th = rng.uniform(1 + 1e-4, theta_max() - 1e-4)
    n = rng.randint(1, 32)
    f = rng.randint(0, math.ceil(n / 3) - 1)
    d = rng.choice([0.5, 1, 3, 10, 1000, rng.uniform(0.01, 1e4)])
    alpha = 1 + rng.random() * 0.999 * (alpha_sup(th) - 1)
    return Params(th, d, n, f, alpha)


def test_criterion_2_constraint_feasibility(report_line):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    bad = []
    for _ in range(1000):
        p = _random_params(rng)
        viol = check(p, solve(p))
        if viol:
            bad.append((p, viol))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10
    line(report_line, 2, ok, f"{len(bad)} of 1000 random admissible parameter sets violate a relation, {dt:.2f} s")
    assert ok, bad[:3]


# --- 3 -----------------------------------------------------------------------------

THETAS = [1.01, 1.05, 1.1, 1.15, 1.2, 1.24]
BOOSTS = [0, 1e2, 1e4, 1e6, 1e8, 1e10, 1e12, 1e15]


def test_criterion_3_ratio_bound(report_line):
    t0 = time.perf_counter()
    rows, exceeded, short = [], [], []
    for th in THETAS:
        p = Params(th, D, 4, 1, 1 + 0.999 * (alpha_sup(th) - 1))
        sup = ratio_sup(th)
        ratios = [achieved_ratio(p, solve(p, boost_x=x, integral=False)) for x in BOOSTS]
        if max(ratios) > sup:
            exceeded.append(th)
        rel = max(ratios) / sup
        if rel < 0.99:
            short.append(th)
        rows.append(f"{th}:{rel:.5f}")
    dt = time.perf_counter() - t0
    ok = not exceeded and not short and dt < 5
    line(report_line, 3, ok, f"best ratio / supremum per theta {', '.join(rows)}; "
                             f"never above: {not exceeded}; below 0.99 at theta {short}; {dt:.2f} s")
    assert ok


# --- shared Monte-Carlo helpers ----------------------------------------------------

P0 = Params(THETA, D, 4, 0, k=1)
A0 = solve(P0)
P1 = Params(THETA, D, 4, 1, k=3)
A1 = solve(P1)
PERIOD = int(A0.T2 + A0.T3)


def _horizon(p, a, k):
    return math.ceil(derived_constants(p, a).T_of_k(k)) + 3 * PERIOD


def _sleep_stats(rep):
    return rep.sleep_checked, [v for v in rep.violations if v.kind.startswith("sleep")]


STABILITY_SCHEDULES = [
    dict(strategy="worst-drift"),
    dict(clocks="extreme", delays="max"),
    dict(clocks="extreme", delays="min"),
    dict(clocks="random", delays="random"),
]


@lru_cache(maxsize=None)
def stability_results():
    """Criterion 4 data: per seed, basic-cycle violations and the sleep check."""
    out = []
    for seed in range(100):
        sched = dict(STABILITY_SCHEDULES[seed % len(STABILITY_SCHEDULES)])
        strat = make_strategy(sched.pop("strategy")) if "strategy" in sched else None
        cfg = SimConfig(P0, A0, horizon=8 * PERIOD, seed=seed, init="quasi", strategy=strat, **sched)
        tr = run(cfg)
        W = list(range(P0.n))
        wins = analyze_pulses(tr, W).windows
        bad, checked_points = [], 0
        q = wins[0].start if wins else None
        if q is None:
            bad.append("no quasi-stabilization point")
        reach = A0.T2 + A0.T4 + 9 * D
        while q is not None and q + reach <= tr.horizon:
            nxt, viol = check_basic_cycle(tr, W, q)
            bad += [str(v) for v in viol]
            checked_points += 1
            q = nxt
        sl = check_sleep_windows(tr, W)
        out.append((seed, checked_points, bad, sl.checked, sl.violations))
    return out


@lru_cache(maxsize=None)
def fault_free_results():
    """Criterion 5 data: per seed, the verifier report from random initial states."""
    out = []
    for seed in range(100):
        cfg = SimConfig(P0, A0, horizon=_horizon(P0, A0, 1), seed=seed)
        out.append((seed, verify(run(cfg), k=1)))
    return out


BYZ_STRATEGIES = ["silent", "play-nice-subset", "init-spammer", "worst-drift"]


@lru_cache(maxsize=None)
def byzantine_results(name):
    """Criterion 6 data: per seed, the verifier report with node 3 faulty."""
    out = []
    for seed in range(200):
        cfg = SimConfig(P1, A1, horizon=_horizon(P1, A1, 3), seed=seed,
                        faults=FaultPlan("static", {3}), strategy=make_strategy(name))
        out.append((seed, verify(run(cfg), k=3)))
    return out


# --- 4 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_basic_cycle(report_line):
    res = stability_results()
    points = sum(r[1] for r in res)
    bad = [(r[0], r[2][:2]) for r in res if r[2] or r[1] == 0]
    ok = not bad
    line(report_line, 4, ok, f"{len(res)} quasi-seeded trials under adversarial drift/delay, {points} "
                             f"stabilization points checked, {len(bad)} trials with a violated clause")
    assert ok, bad[:5]


# --- 5 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_fault_free_self_stabilization(report_line):
    res = fault_free_results()
    Tk = res[0][1].T_of_k
    late = [s for s, r in res if not r.stabilized_within_T]
    pulse_bad = [(s, str(v)) for s, r in res for v in r.violations if not v.kind.startswith("sleep")]
    skew = max(r.skew_max for _, r in res if r.skew_max is not None)
    gmin = min(r.accuracy_min for _, r in res if r.accuracy_min is not None)
    gmax = max(r.accuracy_max for _, r in res if r.accuracy_max is not None)
    b_lo, b_hi = (A0.T2 + A0.T3) / THETA - 2 * D, A0.T2 + A0.T4 + 7 * D
    worst = max(r.stabilization_time for _, r in res if r.stabilization_time is not None)
    ok = not late and not pulse_bad and skew <= 2 * D and b_lo <= gmin and gmax <= b_hi
    line(report_line, 5, ok, f"{100 - len(late)}/100 stabilized within T(1) = {Tk:.0f} (latest {worst}); "
                             f"skew max {skew} <= {2 * D}; gaps [{gmin}, {gmax}] within "
                             f"[{b_lo:.0f}, {b_hi:.0f}]; {len(pulse_bad)} violations")
    assert ok, (late[:5], pulse_bad[:5])


# --- 6 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_byzantine_self_stabilization(report_line):
    bound = stabilization_bound(P1, A1, 3).prob_strong
    parts, ok = [], True
    for name in BYZ_STRATEGIES:
        res = byzantine_results(name)
        # a trial counts when it stabilized within T(3) and nothing failed afterwards
        summary = TrialSummary(
            seeds=[s for s, _ in res],
            times=[r.stabilization_time if r.passed else None for _, r in res],
            passed=[r.passed for _, r in res],
            T={3: res[0][1].T_of_k},
            violations=[len(r.violations) for _, r in res],
        )
        within = summary.within(3)
        pv = summary.binomial_p(3, bound)
        good = pv >= 0.01
        ok &= good
        parts.append(f"{name} {within}/200 p={pv:.3f}")
    line(report_line, 6, ok, f"stabilized within T(3) vs bound {bound:.4f} (binomial alpha 0.01): " + "; ".join(parts))
    assert ok


# --- 7 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_sleep_window_properties(report_line):
    checked, viol = 0, []
    for seed, _, _, c, v in stability_results():
        checked += c
        viol += [("c4", seed, str(x)) for x in v]
    for seed, rep in fault_free_results():
        c, v = _sleep_stats(rep)
        checked += c
        viol += [("c5", seed, str(x)) for x in v]
    for name in BYZ_STRATEGIES:
        for seed, rep in byzantine_results(name):
            c, v = _sleep_stats(rep)
            checked += c
            viol += [(name, seed, str(x)) for x in v]
    ok = not viol and checked > 0
    line(report_line, 7, ok, f"{checked} join-free sleep windows checked over the traces of criteria 4-6, "
                             f"{len(viol)} violations")
    assert ok, viol[:5]


# --- 8 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_weak_coherency(report_line):
    plan = lambda: FaultPlan("static", set(), faulty_channels={(0, 1), (1, 0)})
    W = list(range(P1.n))
    skews, bad, late = [], [], []
    for seed in range(50):
        cfg = SimConfig(P1, A1, horizon=_horizon(P1, A1, 3), seed=seed, faults=plan(),
                        strategy=make_strategy("play-nice-subset"))
        rep = verify(run(cfg), W=W, weak=True, k=3)
        bad += [(seed, str(v)) for v in rep.violations]
        if not rep.passed:
            late.append(seed)
        if rep.skew_max is not None:
            skews.append(rep.skew_max)
    ok = not bad and not late and max(skews) <= 3 * D
    line(report_line, 8, ok, f"channels 0<->1 faulty, all 4 nodes checked with weak bounds: "
                             f"{50 - len(late)}/50 stabilized, skew max {max(skews)} <= {3 * D} "
                             f"(over 2d in {sum(s > 2 * D for s in skews)} trials), {len(bad)} violations")
    assert ok, (bad[:5], late[:5])


# --- 9 -----------------------------------------------------------------------------

def _with_R2(a, factor):
    c = derived_constants(P1, a)
    R2 = a.R2 * factor
    lo = THETA * (R2 + 3 * D)
    return replace(a, R2=R2, R3_lo=lo, R3_hi=lo + 8 * (1 - c.lam) * R2)


def _rejoin_times(a):
    t_r = 5 * PERIOD + PERIOD // 2
    out = []
    for seed in range(50):
        cfg = SimConfig(P1, a, horizon=t_r + 60 * PERIOD, seed=seed, init="quasi", fast_rejoin=True,
                        transients=[(t_r, 3)])
        q = analyze_pulses(run(cfg), list(range(P1.n)), after=t_r).stabilization_time
        out.append(None if q is None else q - t_r)
    return out


@pytest.mark.slow
def test_criterion_9_fast_rejoin(report_line):
    a2 = _with_R2(A1, 2)
    assert check(P1, a2) == []
    base, doubled = _rejoin_times(A1), _rejoin_times(a2)
    bound = A1.R1 + 2 * (A1.T2 + A1.T4 + 7 * D)
    finite = None not in base and None not in doubled
    ok = finite
    if finite:
        mb, md = sum(base) / len(base), sum(doubled) / len(doubled)
        rel = abs(md - mb) / mb
        ok = max(base + doubled) <= bound and rel <= 0.10
        text = (f"rejoin time mean {mb:.0f} max {max(base)}; with R2 doubled mean {md:.0f} max "
                f"{max(doubled)} (change {rel:.1%}); bound R1 + 2(T2+T4+7d) = {bound:.0f}")
    else:
        text = f"{base.count(None)} + {doubled.count(None)} trials never rejoined"
    line(report_line, 9, ok, text)
    assert ok


# --- 10 ----------------------------------------------------------------------------

def test_criterion_10_replay_determinism(report_line, tmp_path):
    cfgs = [
        SimConfig(P1, A1, horizon=6 * PERIOD, seed=17, faults=FaultPlan("static", {2}),
                  strategy=make_strategy("random-flip")),
        SimConfig(P1, A1, horizon=6 * PERIOD, seed=5, faults=FaultPlan("adaptive", budget=1),
                  strategy=make_strategy("adaptive-init-killer")),
        SimConfig(P0, A0, horizon=6 * PERIOD, seed=3, transients=[(2 * PERIOD, 1)]),
    ]
    same = []
    for m, cfg in enumerate(cfgs):
        a, b = tmp_path / f"{m}a.trace", tmp_path / f"{m}b.trace"
        run(cfg).save(a)
        run(cfg).save(b)
        same.append(a.read_bytes() == b.read_bytes())
    ok = all(same)
    line(report_line, 10, ok, f"{sum(same)}/{len(same)} re-run traces byte-identical")
    assert ok
