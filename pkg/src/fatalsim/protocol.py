"""State machines of the pulse-synchronization node as data.

Each node runs five machines (core, suspect, ext, rinit, rmain) and, with
fast rejoin enabled, a sixth helper machine ``swr`` that paces the periodic
sleep_waking flag resets.  The node's broadcast is the tuple of all machine
states.  Memory flags latch the *signal* of a remote machine, which for rmain
is the two-valued mapping given by :func:`rmain_signal`.

Guards are small expression trees (:class:`Guard` subclasses) that can be
printed, walked for audits and compiled to closures for the engine.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .constraints import Params, TimeoutAssignment

CORE, SUSP, EXT, RINIT, RMAIN, SWR = range(6)
MACHINES = ("core", "suspect", "ext", "rinit", "rmain", "swr")

CORE_STATES = ("accept", "sleep", "sleep_waking", "waking", "ready", "propose", "recover", "join")
SUSPECT_STATES = ("trust", "suspect")
EXT_STATES = ("dormant", "passive", "active")
RINIT_STATES = ("wait", "init")
SWR_STATES = ("idle", "tick")


def supp(j: int) -> str:
    return f"supp:{j}"


def is_supp(state: str) -> bool:
    return state.startswith("supp:")


def rmain_states(n: int) -> tuple[str, ...]:
    return ("none",) + tuple(supp(j) for j in range(n)) + ("supp_resync", "resync")


def rmain_signal(state: str) -> str:
    if state == "none" or state == "resync":
        return "none"
    return "supp"


def machine_states(machine: int, n: int) -> tuple[str, ...]:
    return (CORE_STATES, SUSPECT_STATES, EXT_STATES, RINIT_STATES, rmain_states(n), SWR_STATES)[machine]


# flag families: (component, signal state); the engine latches them per subject
FLAG_FAMILIES: tuple[tuple[int, str], ...] = (
    (CORE, "accept"),
    (CORE, "recover"),
    (CORE, "propose"),
    (CORE, "join"),
    (CORE, "sleep_waking"),
    (RMAIN, "supp"),
)
F_ACCEPT, F_RECOVER, F_PROPOSE, F_JOIN, F_SW, F_SUPP = FLAG_FAMILIES
DARTS = "darts"


def signal_of(component: int, state: str) -> str:
    return rmain_signal(state) if component == RMAIN else state


# --- node state ----------------------------------------------------------------

@dataclass
class NodeState:
    """Local state of one node as read by its guards.

    ``actual`` holds the true machine states; ``obs[j]`` is the last
    product state delivered on port S_{i,j} (``obs[i]`` is the delayed
    self-observation).  ``expired`` maps timeout names to their port value.
    """

    node_id: int
    actual: list[str]
    obs: list[tuple[str, ...]]
    masks: dict[tuple[int, str], int]
    expired: dict[str, bool]
    darts: bool = False
    darts_flag: bool = False
    t1_sample: bool = False

    def count(self, *families: tuple[int, str]) -> int:
        m = 0
        for fam in families:
            m |= self.masks[fam]
        return m.bit_count()

    def copy(self) -> "NodeState":
        return copy.deepcopy(self)


# --- guard expressions ---------------------------------------------------------

@dataclass
class Ctx:
    n: int
    f: int

    def threshold(self, name: str) -> int:
        return {"n-f": self.n - self.f, "f+1": self.f + 1}[name]


class Guard:
    def compile(self, ctx: Ctx) -> Callable[[NodeState], bool]:
        raise NotImplementedError

    def children(self) -> tuple["Guard", ...]:
        return ()

    def walk(self) -> Iterable["Guard"]:
        yield self
        for c in self.children():
            yield from c.walk()

    def __and__(self, other: "Guard") -> "Guard":
        return And((self, other))

    def __or__(self, other: "Guard") -> "Guard":
        return Or((self, other))

    def __invert__(self) -> "Guard":
        return Not(self)


@dataclass(frozen=True, eq=False)
class TrueG(Guard):
    def compile(self, ctx):
        return lambda s: True

    def __str__(self):
        return "true"


@dataclass(frozen=True, eq=False)
class SelfIs(Guard):
    """Delayed self-observation of machine ``machine`` is one of ``states``."""

    machine: int
    states: tuple[str, ...]

    def compile(self, ctx):
        m, states = self.machine, frozenset(self.states)
        return lambda s: s.obs[s.node_id][m] in states

    def __str__(self):
        return f"self.{MACHINES[self.machine]} in {{{','.join(self.states)}}}"


@dataclass(frozen=True, eq=False)
class PortIs(Guard):
    """Port S_{i,j} of machine ``machine`` currently shows ``state``."""

    src: int
    machine: int
    state: str

    def compile(self, ctx):
        j, m, st = self.src, self.machine, self.state
        return lambda s: s.obs[j][m] == st

    def __str__(self):
        return f"port[{self.src}].{MACHINES[self.machine]} = {self.state}"


@dataclass(frozen=True, eq=False)
class Threshold(Guard):
    """At least ``bound`` distinct subjects memorized in any of ``families``."""

    families: tuple[tuple[int, str], ...]
    bound: str

    def compile(self, ctx):
        k = ctx.threshold(self.bound)
        fams = self.families
        if len(fams) == 1:
            fam = fams[0]
            return lambda s: s.masks[fam].bit_count() >= k

        def g(s):
            m = 0
            for fam in fams:
                m |= s.masks[fam]
            return m.bit_count() >= k

        return g

    def __str__(self):
        names = "-or-".join(st for _, st in self.families)
        return f">= {self.bound} {names}"


@dataclass(frozen=True, eq=False)
class Expired(Guard):
    timeout: str

    def compile(self, ctx):
        name = self.timeout
        return lambda s: s.expired[name]

    def __str__(self):
        return f"{self.timeout} expired"


@dataclass(frozen=True, eq=False)
class DartsFlag(Guard):
    def compile(self, ctx):
        return lambda s: s.darts_flag

    def __str__(self):
        return "darts flag"


@dataclass(frozen=True, eq=False)
class SampledAccept(Guard):
    """n-f accept threshold as sampled when T1 expired."""

    def compile(self, ctx):
        return lambda s: s.t1_sample

    def __str__(self):
        return ">= n-f accept @T1"


@dataclass(frozen=True, eq=False)
class And(Guard):
    parts: tuple[Guard, ...]

    def children(self):
        return self.parts

    def compile(self, ctx):
        fs = [p.compile(ctx) for p in self.parts]
        if len(fs) == 2:
            a, b = fs
            return lambda s: a(s) and b(s)
        return lambda s: all(f(s) for f in fs)

    def __str__(self):
        return "(" + " & ".join(map(str, self.parts)) + ")"


@dataclass(frozen=True, eq=False)
class Or(Guard):
    parts: tuple[Guard, ...]

    def children(self):
        return self.parts

    def compile(self, ctx):
        fs = [p.compile(ctx) for p in self.parts]
        if len(fs) == 2:
            a, b = fs
            return lambda s: a(s) or b(s)
        return lambda s: any(f(s) for f in fs)

    def __str__(self):
        return "(" + " | ".join(map(str, self.parts)) + ")"


@dataclass(frozen=True, eq=False)
class Not(Guard):
    part: Guard

    def children(self):
        return (self.part,)

    def compile(self, ctx):
        f = self.part.compile(ctx)
        return lambda s: not f(s)

    def __str__(self):
        return f"!{self.part}"


# --- timeouts ------------------------------------------------------------------

@dataclass(frozen=True)
class TimeoutSpec:
    """A timeout port: reset whenever ``machine`` enters a state in ``states``."""

    name: str
    machine: int
    states: tuple[str, ...]
    lo: float
    hi: float | None = None  # set for randomized timeouts

    @property
    def randomized(self) -> bool:
        return self.hi is not None


def timeout_specs(p: Params, a: TimeoutAssignment, *, fast_rejoin: bool = False) -> list[TimeoutSpec]:
    th, d = p.theta, p.d
    specs = [
        TimeoutSpec("T1", CORE, ("accept",), a.T1),
        TimeoutSpec("T2", CORE, ("accept",), a.T2),
        TimeoutSpec("Tsleep", CORE, ("sleep",), (th + 1) * a.T1),
        TimeoutSpec("T3", CORE, ("ready",), a.T3),
        TimeoutSpec("T4", CORE, ("ready",), a.T4),
        TimeoutSpec("T5", CORE, ("propose",), a.T5),
        TimeoutSpec("T6", EXT, ("active",), a.T6),
        TimeoutSpec("T7", EXT, ("passive",), a.T7),
        TimeoutSpec("Tsus", SUSP, ("suspect",), 2 * th * d),
        TimeoutSpec("Tsr", RMAIN, ("supp_resync",), 4 * th * d),
        TimeoutSpec("R1", RMAIN, ("supp_resync",), a.R1),
        TimeoutSpec("R3", RINIT, ("init",), a.R3_lo, a.R3_hi),
        TimeoutSpec("Tsupp", RMAIN, tuple(supp(j) for j in range(p.n)), 4 * th * d),
    ]
    specs += [TimeoutSpec(f"R2:{j}", RMAIN, (supp(j),), a.R2) for j in range(p.n)]
    if fast_rejoin:
        specs += [
            TimeoutSpec("R1none", RMAIN, ("none",), a.R1),
            TimeoutSpec("Tnone", RMAIN, ("none",), 2 * th * d),
            TimeoutSpec("Tswr", SWR, ("tick",), swr_period(p, a)),
        ]
    return specs


def swr_period(p: Params, a: TimeoutAssignment) -> float:
    th = p.theta
    return (th - 1) * (th + 2) * a.T1 + th * 5 * p.d


# --- transition tables ---------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    machine: int
    src: str
    dst: str
    guard: Guard
    flag_resets: tuple = ()  # flag families, or DARTS
    rank: int = 0  # lower rank wins on simultaneous enablement


@dataclass
class TransitionTable:
    transitions: list[Transition]
    timeouts: list[TimeoutSpec] = field(default_factory=list)

    def by_source(self) -> dict[tuple[int, str], list[Transition]]:
        out: dict[tuple[int, str], list[Transition]] = {}
        for tr in sorted(self.transitions, key=lambda t: t.rank):
            out.setdefault((tr.machine, tr.src), []).append(tr)
        return out

    def machines(self) -> list[int]:
        return sorted({t.machine for t in self.transitions})

    def timeout_resets(self, machine: int, state: str) -> list[str]:
        return [s.name for s in self.timeouts if s.machine == machine and state in s.states]

    def listing(self) -> str:
        lines = []
        for tr in self.transitions:
            resets = [_fam_name(f) for f in tr.flag_resets]
            resets += [f"({t})" for t in self.timeout_resets(tr.machine, tr.dst)]
            lines.append(
                f"{MACHINES[tr.machine]}: {tr.src} -> {tr.dst} | {tr.guard} | "
                f"resets: {', '.join(resets) if resets else '-'}"
            )
        return "\n".join(lines)


def _fam_name(fam) -> str:
    if fam == DARTS:
        return "darts flag"
    return f"{fam[1]} flags"


T = Transition


def core_transitions() -> list[Transition]:
    nf, f1 = "n-f", "f+1"
    not_dormant = Not(SelfIs(EXT, ("dormant",)))
    return [
        T(CORE, "accept", "recover", Expired("T1") & Not(SampledAccept()), rank=0),
        T(CORE, "accept", "sleep", Expired("T1") & SampledAccept(), rank=2),
        T(CORE, "sleep", "sleep_waking", Expired("Tsleep"), rank=2),
        T(CORE, "sleep_waking", "waking", TrueG(), (F_ACCEPT, F_RECOVER), rank=2),
        T(CORE, "waking", "recover", Threshold((F_ACCEPT, F_RECOVER), f1), rank=0),
        T(CORE, "waking", "ready", Expired("T2"), (F_PROPOSE, DARTS, F_JOIN), rank=2),
        T(CORE, "ready", "recover", SelfIs(SUSP, ("suspect",)) & Expired("Tsus"), rank=0),
        T(CORE, "ready", "join", Threshold((F_JOIN,), f1), rank=1),
        T(CORE, "ready", "propose",
          Or(((Expired("T3") & DartsFlag()), Expired("T4"), Threshold((F_PROPOSE,), f1))),
          (F_ACCEPT,), rank=2),
        T(CORE, "propose", "recover", Expired("T5"), rank=0),
        T(CORE, "propose", "accept", Threshold((F_PROPOSE, F_ACCEPT), nf), (F_ACCEPT,), rank=2),
        T(CORE, "recover", "join",
          Threshold((F_JOIN,), f1)
          | (not_dormant & ((SelfIs(EXT, ("active",)) & Expired("T6")) | Expired("T7"))),
          (F_PROPOSE, F_ACCEPT), rank=1),
        T(CORE, "join", "propose", Threshold((F_JOIN, F_PROPOSE, F_ACCEPT), nf), rank=2),
    ]


def suspect_transitions() -> list[Transition]:
    ready = SelfIs(CORE, ("ready",))
    return [
        T(SUSP, "trust", "suspect", ready & Threshold((F_ACCEPT,), "f+1")),
        T(SUSP, "suspect", "trust", Not(ready)),
    ]


def extension_transitions(*, fast_rejoin: bool = False) -> list[Transition]:
    resync = SelfIs(RMAIN, ("resync",))
    to_dormant = Expired("R1") & Not(resync)
    to_passive = resync
    if fast_rejoin:
        pinned = SelfIs(RMAIN, ("none",)) & Not(Expired("R1none"))
        to_dormant = to_dormant & Not(pinned)
        to_passive = resync | pinned
    out = [
        T(EXT, "dormant", "passive", to_passive, (F_JOIN, F_SW), rank=1),
        T(EXT, "passive", "dormant", to_dormant, rank=0),
        T(EXT, "passive", "active", Threshold((F_SW,), "f+1"), rank=2),
        T(EXT, "active", "dormant", to_dormant, rank=0),
    ]
    if fast_rejoin:
        fresh_none = SelfIs(RMAIN, ("none",)) & Not(Expired("Tnone")) & Not(Expired("R1none"))
        out.append(T(EXT, "active", "passive", fresh_none, (F_JOIN, F_SW), rank=1))
    return out


def resync_transitions(n: int, *, fast_rejoin: bool = False) -> list[Transition]:
    out = [
        T(RINIT, "wait", "init", Expired("R3")),
        T(RINIT, "init", "wait", TrueG()),
    ]
    leave_none = Expired("R1none") if fast_rejoin else None
    for i in range(n):
        g = PortIs(i, RINIT, "init") & Expired(f"R2:{i}")
        g_none = g & leave_none if leave_none is not None else g
        out.append(T(RMAIN, "none", supp(i), g_none, (F_SUPP,), rank=1))
    for j in range(n):
        src = supp(j)
        out.append(T(RMAIN, src, "supp_resync", Threshold((F_SUPP,), "n-f"), rank=0))
        for i in range(n):
            if i != j:
                g = PortIs(i, RINIT, "init") & Expired(f"R2:{i}")
                out.append(T(RMAIN, src, supp(i), g, rank=1))
        out.append(T(RMAIN, src, "none", Expired("Tsupp"), rank=2))
    out += [
        T(RMAIN, "supp_resync", "resync", Expired("Tsr")),
        T(RMAIN, "resync", "none", TrueG()),
    ]
    return out


def swr_transitions() -> list[Transition]:
    pinned = SelfIs(RMAIN, ("none",)) & Not(Expired("R1none"))
    return [
        T(SWR, "idle", "tick", pinned & Expired("Tswr"), (F_SW,)),
        T(SWR, "tick", "idle", TrueG()),
    ]


def build_table(p: Params, a: TimeoutAssignment, *, fast_rejoin: bool = False) -> TransitionTable:
    trs = (core_transitions() + suspect_transitions()
           + extension_transitions(fast_rejoin=fast_rejoin)
           + resync_transitions(p.n, fast_rejoin=fast_rejoin))
    if fast_rejoin:
        trs += swr_transitions()
    return TransitionTable(trs, timeout_specs(p, a, fast_rejoin=fast_rejoin))


# --- evaluation ----------------------------------------------------------------

class CompiledTable:
    """Guards compiled to closures, indexed by (machine, observed state)."""

    def __init__(self, table: TransitionTable, n: int, f: int):
        self.table = table
        self.n = n
        self.f = f
        self.n_machines = max(table.machines()) + 1
        ctx = Ctx(n, f)
        self.index: dict[tuple[int, str], list[tuple[Callable, Transition]]] = {}
        for key, trs in table.by_source().items():
            self.index[key] = [(tr.guard.compile(ctx), tr) for tr in trs]
        self.resets_on_entry: dict[tuple[int, str], tuple[str, ...]] = {}
        for spec in table.timeouts:
            for st in spec.states:
                self.resets_on_entry.setdefault((spec.machine, st), ())
                self.resets_on_entry[(spec.machine, st)] += (spec.name,)

    def evaluate(self, s: NodeState) -> list[Transition]:
        """Transitions taken now: per machine the first enabled guard of the
        observed state, if its target differs from the actual state."""
        me = s.obs[s.node_id]
        out = []
        actual = s.actual
        get = self.index.get
        for m in range(self.n_machines):
            cands = get((m, me[m]))
            if cands:
                for g, tr in cands:
                    if g(s):
                        if tr.dst != actual[m]:
                            out.append(tr)
                        break
        return out


def step_node(compiled: CompiledTable, state: NodeState, now: int):
    """Pure single-instant step: returns (new state, switches, flag resets).

    Flag resets and timeout resets take effect when the switch is observed
    on the loopback channel; they are returned, not applied.
    """
    new = state.copy()
    taken = compiled.evaluate(new)
    switches = []
    resets = []
    for tr in taken:
        new.actual[tr.machine] = tr.dst
        switches.append((now, tr.machine, tr.dst))
        resets.extend(tr.flag_resets)
    return new, switches, resets


def make_state(node_id: int, actual: Sequence[str], obs: Sequence[Sequence[str]],
               timeouts: Iterable[str], *, expired: bool = True) -> NodeState:
    return NodeState(
        node_id=node_id,
        actual=list(actual),
        obs=[tuple(o) for o in obs],
        masks={fam: 0 for fam in FLAG_FAMILIES},
        expired={t: expired for t in timeouts},
    )


# --- audits --------------------------------------------------------------------

ALLOWED_LEAVES = (TrueG, SelfIs, PortIs, Threshold, Expired, DartsFlag, SampledAccept)


def audit_closed_guards(table: TransitionTable, n: int) -> list[str]:
    """Problems with guards that read anything outside the port grammar."""
    names = {s.name for s in table.timeouts}
    problems = []
    for tr in table.transitions:
        for g in tr.guard.walk():
            if isinstance(g, (And, Or, Not)):
                continue
            if not isinstance(g, ALLOWED_LEAVES):
                problems.append(f"{tr.src}->{tr.dst}: foreign guard {type(g).__name__}")
            if isinstance(g, Expired) and g.timeout not in names:
                problems.append(f"{tr.src}->{tr.dst}: undefined timeout {g.timeout}")
            if isinstance(g, (SelfIs, PortIs)):
                valid = machine_states(g.machine, n)
                sts = g.states if isinstance(g, SelfIs) else (g.state,)
                bad = [x for x in sts if x not in valid]
                if bad:
                    problems.append(f"{tr.src}->{tr.dst}: unknown state {bad}")
            if isinstance(g, PortIs) and not 0 <= g.src < n:
                problems.append(f"{tr.src}->{tr.dst}: undefined port {g.src}")
            if isinstance(g, Threshold) and not set(g.families) <= set(FLAG_FAMILIES):
                problems.append(f"{tr.src}->{tr.dst}: unknown flag family")
    return problems


def referenced_symbols(table: TransitionTable) -> dict[str, int]:
    """How often each timeout and flag family is read by a guard or reset."""
    seen: dict[str, int] = {}
    for tr in table.transitions:
        for g in tr.guard.walk():
            if isinstance(g, Expired):
                seen[g.timeout] = seen.get(g.timeout, 0) + 1
            elif isinstance(g, Threshold):
                for fam in g.families:
                    seen[f"flag:{fam[1]}"] = seen.get(f"flag:{fam[1]}", 0) + 1
            elif isinstance(g, DartsFlag):
                seen["flag:darts"] = seen.get("flag:darts", 0) + 1
        for fam in tr.flag_resets:
            key = "flag:darts" if fam == DARTS else f"flag:{fam[1]}"
            seen[key] = seen.get(key, 0) + 1
    return seen
