"""Post-hoc trace analysis.

Everything here reads only a :class:`~fatalsim.trace.Trace` (its records
and meta header), so results are identical for an in-memory trace and the
same trace re-loaded from a file.

Grid conventions: time is integral, a half-open window [a, b) contains the
grid points a..b-1 and an open window (a, b) the points a+1..b-1.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field

from .constraints import Params, TimeoutAssignment, derived_constants
from .trace import Trace


@dataclass
class Violation:
    kind: str
    t: int
    node: int | None = None
    detail: str = ""

    def __str__(self):
        who = "" if self.node is None else f" node {self.node}"
        return f"{self.kind} at {self.t}{who}: {self.detail}"


@dataclass
class Window:
    """A cluster of pulses, one per node of W."""

    start: int
    times: dict[int, int]
    index: dict[int, int]  # node -> position of the pulse in that node's pulse list

    @property
    def spread(self) -> int:
        return max(self.times.values()) - min(self.times.values())


@dataclass
class Bounds:
    d: int
    theta: float
    skew: float
    t_minus: float
    t_plus: float
    a: TimeoutAssignment

    @classmethod
    def from_trace(cls, trace: Trace, weak: bool = False) -> "Bounds":
        m = trace.meta
        a = TimeoutAssignment.from_dict(m["timeouts"])
        d, th = m["d"], m["theta"]
        extra = d if weak else 0
        return cls(
            d=d, theta=th,
            skew=(3 if weak else 2) * d,
            t_minus=(a.T2 + a.T3) / th - 2 * d - extra,
            t_plus=a.T2 + a.T4 + 7 * d + extra,
            a=a,
        )


def params_of(trace: Trace) -> Params:
    m = trace.meta
    return Params(m["theta"], m["d"], m["n"], m["f"], m.get("alpha", 1.0), m.get("k", 1))


def lookback(trace: Trace) -> float:
    """Length of the history a set must have been non-faulty for to be coherent."""
    p = params_of(trace)
    a = TimeoutAssignment.from_dict(trace.meta["timeouts"])
    return derived_constants(p, a).hatE3


# --- pulses and windows ---------------------------------------------------------

def pulses(trace: Trace, W=None) -> dict[int, list[int]]:
    sw = trace.all_switches("core")
    nodes = range(trace.n) if W is None else W
    return {i: [t for t, s in sw[i] if s == "accept"] for i in nodes}


def _windows(pl: dict[int, list[int]], width: int, after: int = -1) -> list[Window]:
    """Greedy non-overlapping windows [t, t+width) containing a pulse of every node."""
    nodes = sorted(pl)
    if not nodes:
        return []
    events = sorted(t for i in nodes for t in pl[i] if t > after)
    out: list[Window] = []
    pos = 0
    while pos < len(events):
        t0 = events[pos]
        times, index = {}, {}
        for i in nodes:
            k = bisect.bisect_left(pl[i], t0)
            if k < len(pl[i]) and pl[i][k] < t0 + width:
                times[i] = pl[i][k]
                index[i] = k
            else:
                break
        if len(times) == len(nodes):
            out.append(Window(t0, times, index))
            pos = bisect.bisect_left(events, t0 + width, pos)
        else:
            pos += 1
    return out


def find_stabilization_points(trace: Trace, W, *, quasi: bool = False, after: int = -1) -> list[int]:
    d = trace.meta["d"]
    return [w.start for w in _windows(pulses(trace, W), (3 if quasi else 2) * d, after)]


def _segment_violations(pl, w0: Window, w1: Window, b: Bounds) -> list[Violation]:
    out = []
    for i in w0.times:
        if w1.index[i] != w0.index[i] + 1:
            out.append(Violation("extra_pulse", pl[i][w0.index[i] + 1], i,
                                 f"{w1.index[i] - w0.index[i] - 1} pulse(s) between windows"))
            continue
        gap = w1.times[i] - w0.times[i]
        if gap < b.t_minus:
            out.append(Violation("gap_short", w1.times[i], i, f"gap {gap} < {b.t_minus:.1f}"))
        if gap > b.t_plus:
            out.append(Violation("gap_long", w1.times[i], i, f"gap {gap} > {b.t_plus:.1f}"))
    if w1.spread > b.skew:
        out.append(Violation("skew", w1.start, None, f"spread {w1.spread} > {b.skew}"))
    return out


def _tail_violations(pl, last: Window, b: Bounds, horizon: int) -> list[Violation]:
    out = []
    late = {}
    for i, k in last.index.items():
        rest = pl[i][k + 1:]
        if len(rest) > 1:
            out.append(Violation("extra_pulse", rest[1], i, "more than one pulse after the last window"))
        if rest:
            late[i] = rest[0]
            gap = rest[0] - last.times[i]
            if gap < b.t_minus:
                out.append(Violation("gap_short", rest[0], i, f"gap {gap} < {b.t_minus:.1f}"))
            if gap > b.t_plus:
                out.append(Violation("gap_long", rest[0], i, f"gap {gap} > {b.t_plus:.1f}"))
        elif last.times[i] + b.t_plus <= horizon:
            out.append(Violation("missing_pulse", horizon, i,
                                 f"no pulse within {b.t_plus:.1f} after {last.times[i]}"))
    if late:
        lo, hi = min(late.values()), max(late.values())
        if hi - lo > b.skew:
            out.append(Violation("skew", lo, None, f"partial window spread {hi - lo} > {b.skew}"))
        for i in last.index:
            if i not in late and lo + b.skew < horizon and lo + b.skew < last.times[i] + b.t_plus:
                # node i must have pulsed by lo + skew, and could have before the horizon
                out.append(Violation("skew", lo, i, "pulse missing from partial window"))
    return out


@dataclass
class PulseAnalysis:
    windows: list[Window]
    stabilization_index: int | None
    violations_after: list[Violation]
    skew_max: int | None
    gap_min: int | None
    gap_max: int | None

    @property
    def stabilization_time(self) -> int | None:
        if self.stabilization_index is None:
            return None
        return self.windows[self.stabilization_index].start


def analyze_pulses(trace: Trace, W, *, weak: bool = False, horizon: int | None = None,
                   after: int = -1) -> PulseAnalysis:
    """Earliest quasi-stabilization point after which, up to the horizon,
    every later window has spread <= skew, pulse gaps lie within the
    accuracy bounds, and no pulse is missing or extra."""
    b = Bounds.from_trace(trace, weak)
    horizon = trace.horizon if horizon is None else horizon
    pl = pulses(trace, W)
    wins = _windows(pl, 3 * b.d, after)
    if not wins:
        return PulseAnalysis([], None, [], None, None, None)
    seg_bad = [bool(_segment_violations(pl, wins[m], wins[m + 1], b)) for m in range(len(wins) - 1)]
    tail = _tail_violations(pl, wins[-1], b, horizon)
    stab = None
    if not tail:
        stab = len(wins) - 1
        for m in range(len(wins) - 2, -1, -1):
            if seg_bad[m]:
                break
            stab = m
    if stab is None:
        return PulseAnalysis(wins, None, tail, None, None, None)
    after_wins = wins[stab:]
    gaps = [w1.times[i] - w0.times[i] for w0, w1 in zip(after_wins, after_wins[1:]) for i in w0.times]
    skew = max((w.spread for w in after_wins[1:]), default=None)
    return PulseAnalysis(wins, stab, [], skew, min(gaps, default=None), max(gaps, default=None))


def check_skew_accuracy(trace: Trace, W, start: int, *, weak: bool = False) -> tuple[dict, list[Violation]]:
    """Check the pulse conditions from the first window at or after ``start``
    (a claimed quasi-stabilization point) to the horizon."""
    b = Bounds.from_trace(trace, weak)
    pl = pulses(trace, W)
    wins = _windows(pl, 3 * b.d, start - 1)
    out: list[Violation] = []
    if not wins or wins[0].start != min(t for i in pl for t in pl[i] if t >= start):
        out.append(Violation("alignment", start, None, "no quasi-stabilization window at the start"))
        return {"skew": None, "gap_min": None, "gap_max": None}, out
    for w0, w1 in zip(wins, wins[1:]):
        out += _segment_violations(pl, w0, w1, b)
    out += _tail_violations(pl, wins[-1], b, trace.horizon)
    gaps = [w1.times[i] - w0.times[i] for w0, w1 in zip(wins, wins[1:]) for i in w0.times]
    measured = {
        "skew": max((w.spread for w in wins[1:]), default=None),
        "gap_min": min(gaps, default=None),
        "gap_max": max(gaps, default=None),
    }
    return measured, out


# --- state intervals --------------------------------------------------------------

def state_intervals(sw: list[tuple[int, str]], state: str, horizon: int) -> list[tuple[int, int]]:
    """Half-open intervals [a, b) during which the machine is in ``state``."""
    out = []
    for k, (t, s) in enumerate(sw):
        if s == state:
            end = sw[k + 1][0] if k + 1 < len(sw) else horizon + 1
            out.append((t, end))
    return out


def _in_state_during(iv: list[tuple[int, int]], lo: int, hi: int) -> bool:
    """True if some interval of the sorted, disjoint list meets [lo, hi)."""
    k = bisect.bisect_right(iv, (lo, math.inf))
    if k and iv[k - 1][1] > lo:
        return True
    return k < len(iv) and iv[k][0] < hi


def _any_in(ts: list[int], lo, hi) -> bool:
    """True if the sorted list has an element in [lo, hi)."""
    k = bisect.bisect_left(ts, lo)
    return k < len(ts) and ts[k] < hi


# --- metastability ----------------------------------------------------------------

def check_metastability_freedom(trace: Trace, node: int, machine: str = "core",
                                window: tuple[int, int] | None = None) -> list[tuple]:
    """Switches in ``window`` = [lo, hi) followed by a next switch in (t, hi)
    that happens before the first switch was observed on the loopback.

    A next switch at the very instant of the loopback delivery is not
    reported: deliveries are applied before guards are evaluated, so such a
    switch already acts on the new self-observation.
    """
    lo, hi = window if window else (0, trace.horizon + 1)
    sw = trace.switches(node, machine)
    loops = trace.loopbacks(node)
    out = []
    for k, (t, s) in enumerate(sw):
        if not lo <= t < hi:
            continue
        if k + 1 >= len(sw):
            continue
        t_next = sw[k + 1][0]
        if t_next >= hi:
            continue
        tau = loops.get(t)
        if tau is None or tau > t_next:
            out.append((node, machine, t, t_next))
    return out


# --- basic cycle ---------------------------------------------------------------

def check_basic_cycle(trace: Trace, W, q: int) -> tuple[int | None, list[Violation]]:
    """Basic-cycle clauses for a quasi-stabilization point q.

    Returns the next stabilization point t' (or None) and violations."""
    b = Bounds.from_trace(trace)
    d, a, th = b.d, b.a, b.theta
    out: list[Violation] = []
    sw = {i: trace.switches(i, "core") for i in W}
    pl = {i: [t for t, s in sw[i] if s == "accept"] for i in W}
    for i in W:
        n_in = sum(1 for t in pl[i] if q <= t < q + 3 * d)
        if n_in != 1:
            out.append(Violation("cycle_i", q, i, f"{n_in} accept switches in [t, t+3d)"))
            continue
        iv = [x for x in state_intervals(sw[i], "accept", trace.horizon) if q <= x[0] < q + 3 * d]
        if iv and iv[0][1] < q + 4 * d:
            out.append(Violation("cycle_i", iv[0][1], i, "left accept before t+4d"))
    later = sorted(t for i in W for t in pl[i] if t >= q + 3 * d)
    if not later:
        out.append(Violation("cycle_ii", q, None, "no further accept switch"))
        return None, out
    t2 = later[0]
    lo, hi = q + (a.T2 + a.T3) / th, q + a.T2 + a.T4 + 5 * d
    if not all(any(t2 <= t < t2 + 2 * d for t in pl[i]) for i in W):
        out.append(Violation("cycle_ii", t2, None, "next accepts do not form a stabilization point"))
    if not lo < t2 < hi:
        out.append(Violation("cycle_ii", t2, None, f"next point outside ({lo:.1f}, {hi:.1f})"))
    for i in W:
        for ev in check_metastability_freedom(trace, i, "core", (q + 4 * d, t2 + 4 * d)):
            out.append(Violation("metastability", ev[2], i, f"next switch at {ev[3]}"))
    return t2, out


# --- sleep windows ----------------------------------------------------------------

@dataclass
class SleepCheck:
    checked: int = 0
    not_applicable: int = 0
    violations: list[Violation] = field(default_factory=list)


def check_sleep_windows(trace: Trace, W, interval: tuple[int, int] | None = None) -> SleepCheck:
    """Support and span properties around every sleep switch of W.

    For each sleep switch t_s inside ``interval`` whose window
    [t_s - T1 - d, t_s + Delta_s] is join-free, checks that at least n-2f
    nodes were in accept during (t_s - T1 - d, t_s) and neither propose nor
    switched to accept during (t_s, t_s + Delta_s); that sleep switches in
    [t_s, t_s + Delta_s] span at most 2T1 + 3d; and, when no sleep switch
    precedes t_s by less than (theta+1)T1 + d, that sleep_waking switches in
    [t_s, t_s + Delta_s + (1 + 1/theta)T1] span at most the sleep_waking bound.
    """
    p = params_of(trace)
    b = Bounds.from_trace(trace)
    c = derived_constants(p, b.a)
    d, T1, th = b.d, b.a.T1, b.theta
    horizon = trace.horizon
    lo, hi = interval if interval else (0, horizon)
    sw = {i: trace.switches(i, "core") for i in W}
    joins = {i: state_intervals(sw[i], "join", horizon) for i in W}
    accepts = {i: state_intervals(sw[i], "accept", horizon) for i in W}
    proposes = {i: state_intervals(sw[i], "propose", horizon) for i in W}
    acc_sw = {i: [t for t, s in sw[i] if s == "accept"] for i in W}
    sleeps = sorted((t, i) for i in W for t, s in sw[i] if s == "sleep")
    sws = sorted(t for i in W for t, s in sw[i] if s == "sleep_waking")
    sleep_times = [t for t, _ in sleeps]
    res = SleepCheck()
    need = p.n - 2 * p.f
    for t_s, who in sleeps:
        if not lo <= t_s <= hi:
            continue
        t_hi = min(t_s + c.Delta_s, horizon)
        pre = t_s - T1 - d
        if pre < lo or any(_in_state_during(joins[i], math.floor(pre), math.floor(t_hi) + 1) for i in W):
            res.not_applicable += 1
            continue
        res.checked += 1
        support = 0
        for i in W:
            was_acc = _in_state_during(accepts[i], math.floor(pre) + 1, t_s)
            a_lo, a_hi = t_s + 1, math.ceil(t_hi)
            busy = _in_state_during(proposes[i], a_lo, a_hi) or _any_in(acc_sw[i], a_lo, a_hi)
            support += was_acc and not busy
        if support < need:
            res.violations.append(Violation("sleep_support", t_s, who, f"only {support} < {need} supporting nodes"))
        in_win = sleep_times[bisect.bisect_left(sleep_times, t_s):bisect.bisect_right(sleep_times, t_hi)]
        if in_win and in_win[-1] - in_win[0] > 2 * T1 + 3 * d:
            res.violations.append(Violation("sleep_span", t_s, None,
                                            f"span {in_win[-1] - in_win[0]} > {2 * T1 + 3 * d:.1f}"))
        k = bisect.bisect_left(sleep_times, t_s)
        fresh = k == 0 or sleep_times[k - 1] <= t_s - (th + 1) * T1 - d
        if fresh:
            top = t_hi + (1 + 1 / th) * T1
            if top <= horizon:
                ws = sws[bisect.bisect_left(sws, t_s):bisect.bisect_right(sws, top)]
                if ws and ws[-1] - ws[0] > c.delta_s_tilde:
                    res.violations.append(Violation("sleep_waking_span", t_s, None,
                                                    f"span {ws[-1] - ws[0]} > {c.delta_s_tilde:.1f}"))
    return res


# --- resynchronization points ----------------------------------------------------

def find_resync_points(trace: Trace, W) -> tuple[list[int], list[int]]:
    """W-resynchronization points (every node of W switches to supp_resync
    within (t, t+2d)), and the subset that is good."""
    b = Bounds.from_trace(trace)
    d, T1, th = b.d, b.a.T1, b.theta
    W = sorted(W)
    rs = {i: [t for t, s in trace.switches(i, "rmain") if s == "supp_resync"] for i in W}
    core = {i: trace.switches(i, "core") for i in W}
    events = sorted(t for i in W for t in rs[i])
    points: list[int] = []
    pos = 0
    while pos < len(events):
        t = events[pos] - 1
        if all(any(t < x < t + 2 * d for x in rs[i]) for i in W):
            points.append(t)
            pos = bisect.bisect_left(events, t + 2 * d, pos)
        else:
            pos += 1
    good = []
    for t in points:
        s_lo = t - (th + 3) * T1
        if s_lo < 0 or t - T1 - d < 0:
            continue
        slept = any(s_lo < x < t for i in W for x, s in core[i] if s == "sleep")
        joined = any(_in_state_during(state_intervals(core[i], "join", trace.horizon),
                                      math.floor(t - T1 - d), t + 4 * d) for i in W)
        if not slept and not joined:
            good.append(t)
    return points, good


def check_good_resync_followups(trace: Trace, W, good: list[int]) -> list[Violation]:
    """After a good resynchronization point t_g: every node of W enters passive
    within (t_g + 4d, t_g + (4 theta + 3)d), and a quasi-stabilization point
    follows within (t_g, t_g + R1/theta - 3d]."""
    b = Bounds.from_trace(trace)
    d, th, R1 = b.d, b.theta, b.a.R1
    out = []
    ext = {i: trace.switches(i, "ext") for i in W}
    for tg in good:
        if tg + R1 / th - 3 * d > trace.horizon:
            continue
        for i in W:
            # only nodes still dormant once resync can be observed are bound to switch
            before = [s for t, s in ext[i] if t <= tg + 4 * d]
            if before and before[-1] != "dormant":
                continue
            if not any(tg + 4 * d < t < tg + (4 * th + 3) * d and s == "passive" for t, s in ext[i]):
                out.append(Violation("passive_window", tg, i, "did not enter passive in time"))
        q = find_stabilization_points(trace, W, quasi=True, after=tg)
        if not q or q[0] > tg + R1 / th - 3 * d:
            out.append(Violation("resync_followup", tg, None, "no quasi-stabilization point in time"))
    return out


# --- coherency --------------------------------------------------------------------

@dataclass(frozen=True)
class CoherencyWindow:
    nodes: frozenset
    start: float
    end: float


def _bad_events(trace: Trace) -> dict[int, list[tuple[int, float]]]:
    """Per node, intervals during which it counts as faulty (or freshly scrambled)."""
    bad: dict[int, list[tuple[int, float]]] = {i: [(0, 0)] for i in range(trace.n)}
    for i, t in trace.corruptions().items():
        bad[i].append((t, math.inf))
    for t, i in trace.transient_resets():
        bad[i].append((t, t))
    return bad


def coherency_windows(trace: Trace, min_size: int | None = None) -> list[CoherencyWindow]:
    """Maximal intervals during which a node set is coherent, for every set
    of at least ``min_size`` (default n-f) nodes with correct mutual channels."""
    n, f = trace.n, trace.meta["f"]
    min_size = n - f if min_size is None else min_size
    L = lookback(trace)
    horizon = trace.horizon
    bad = _bad_events(trace)
    chans = trace.faulty_channels()
    out = []
    for size in range(n, min_size - 1, -1):
        for S in itertools.combinations(range(n), size):
            if any((a, b) in chans for a in S for b in S if a != b):
                continue
            evs = sorted(iv for i in S for iv in bad[i])
            # coherent on [t-, t+] iff no bad interval meets [t- - L, t+]
            cursor = -math.inf
            for a_, b_ in evs:
                if cursor > -math.inf and a_ - 1 >= cursor:
                    out.append(CoherencyWindow(frozenset(S), cursor, min(a_ - 1, horizon)))
                cursor = max(cursor, b_ + 1 + L)
            if cursor <= horizon:
                out.append(CoherencyWindow(frozenset(S), cursor, horizon))
    return out


def weakly_coherent(trace: Trace, C, t: float) -> bool:
    n, f = trace.n, trace.meta["f"]
    wins = [w for w in coherency_windows(trace) if len(w.nodes) == n - f and w.start <= t <= w.end]
    return all(any(i in w.nodes and w.nodes <= set(C) for w in wins) for i in C)


def default_W(trace: Trace) -> list[int]:
    """Largest node set that is never faulty and has correct mutual channels."""
    faulty = set(trace.corruptions())
    chans = trace.faulty_channels()
    good = [i for i in range(trace.n) if i not in faulty]
    for size in range(len(good), 0, -1):
        for S in itertools.combinations(good, size):
            if not any((a, b) in chans for a in S for b in S if a != b):
                return list(S)
    return []


# --- report -----------------------------------------------------------------------

@dataclass
class VerifierReport:
    W: list[int]
    weak: bool
    horizon: int
    pulses: dict[int, list[int]]
    stabilization_points: list[int]
    quasi_stabilization_points: list[int]
    resync_points: list[int]
    good_resync_points: list[int]
    stabilization_time: int | None
    T_of_k: float
    k: int
    skew_max: int | None
    accuracy_min: int | None
    accuracy_max: int | None
    violations: list[Violation]
    metastability_events: list[tuple]
    sleep_checked: int
    sleep_not_applicable: int

    @property
    def stabilized_within_T(self) -> bool:
        return self.stabilization_time is not None and self.stabilization_time <= self.T_of_k

    @property
    def horizon_covers_T(self) -> bool:
        return self.horizon >= self.T_of_k + 3 * self.bounds_d

    bounds_d: int = 0

    @property
    def passed(self) -> bool:
        if self.violations:
            return False
        if self.horizon == 0:
            return True
        if self.horizon_covers_T:
            return self.stabilized_within_T
        return True

    def render(self) -> str:
        lines = [
            f"W = {self.W}  ({'weak' if self.weak else 'strong'} bounds)",
            f"horizon = {self.horizon}",
            f"pulses = {sum(len(v) for v in self.pulses.values())}",
            f"stabilization_points = {len(self.stabilization_points)}",
            f"quasi_stabilization_points = {len(self.quasi_stabilization_points)}",
            f"resync_points = {len(self.resync_points)}",
            f"good_resync_points = {len(self.good_resync_points)}",
            f"stabilization_time = {self.stabilization_time}",
            f"T(k) = {self.T_of_k:.1f}  (k = {self.k})",
            f"stabilized_within_T = {self.stabilized_within_T}",
            f"skew_max = {self.skew_max}",
            f"accuracy_min = {self.accuracy_min}",
            f"accuracy_max = {self.accuracy_max}",
            f"metastability_events = {len(self.metastability_events)}",
            f"sleep_windows_checked = {self.sleep_checked}",
            f"sleep_windows_not_applicable = {self.sleep_not_applicable}",
            f"violations = {len(self.violations)}",
        ]
        lines += [f"  {v}" for v in self.violations[:50]]
        lines.append(f"verdict = {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def verify(trace: Trace, *, W=None, weak: bool | None = None, k: int | None = None,
           structural: bool = True) -> VerifierReport:
    """Full analysis of one trace.

    Structural checks (sleep windows, good-resync follow-ups, post
    stabilization metastability of the core machine) are scoped to times
    after W became coherent, except for quasi-seeded runs whose initial
    state is already consistent.
    """
    W = default_W(trace) if W is None else sorted(W)
    if weak is None:
        weak = bool(trace.faulty_channels())
    k = trace.meta.get("k", 1) if k is None else k
    p = params_of(trace)
    b = Bounds.from_trace(trace, weak)
    Tk = derived_constants(p, b.a).T_of_k(k)
    pl = pulses(trace, W)
    ana = analyze_pulses(trace, W, weak=weak)
    violations: list[Violation] = []
    meta_events: list[tuple] = []
    rp, good = find_resync_points(trace, W) if W else ([], [])
    checked = na = 0
    if W and structural:
        burn = 0 if trace.meta.get("init") == "quasi" else lookback(trace)
        resets = [t for t, _ in trace.transient_resets()]
        if resets:
            burn = max(burn, max(resets) + lookback(trace))
        sl = check_sleep_windows(trace, W, (math.ceil(burn), trace.horizon))
        violations += sl.violations
        checked, na = sl.checked, sl.not_applicable
        violations += check_good_resync_followups(trace, W, [t for t in good if t >= burn])
        q = ana.stabilization_time
        if q is not None:
            for i in W:
                meta_events += check_metastability_freedom(trace, i, "core", (q + 4 * b.d, trace.horizon + 1))
            violations += [Violation("metastability", e[2], e[0], f"next switch at {e[3]}") for e in meta_events]
    return VerifierReport(
        W=W, weak=weak, horizon=trace.horizon, pulses=pl,
        stabilization_points=find_stabilization_points(trace, W),
        quasi_stabilization_points=[w.start for w in ana.windows],
        resync_points=rp, good_resync_points=good,
        stabilization_time=ana.stabilization_time, T_of_k=Tk, k=k,
        skew_max=ana.skew_max, accuracy_min=ana.gap_min, accuracy_max=ana.gap_max,
        violations=violations, metastability_events=meta_events,
        sleep_checked=checked, sleep_not_applicable=na, bounds_d=b.d,
    )
