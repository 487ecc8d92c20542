"""Deterministic discrete-event executor.

Within one instant, port deliveries are applied first, then timeout
expiries, then every touched correct node evaluates its guards once.  Since
every channel delay is at least one unit, a switch at time t can only be
observed at t+1 or later, so each node is evaluated at most once per
instant.  After an instant with a correct switch (or a requested wake-up)
the adversary is consulted for future faulty-port values.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from .adversary import (AdversaryView, ContainmentError, FaultPlan, Strategy, Write,
                        corrupt, random_state)
from .constraints import Params, TimeoutAssignment, check
from .model import (Channel, Clock, ConfigurationError, RandomizedTimeoutPort,
                    SimulationInvariantError, TimeoutPort, RATE_SCALE)
from .protocol import (CORE, DARTS, FLAG_FAMILIES, MACHINES, RMAIN, SWR, CompiledTable,
                       NodeState, build_table, machine_states, rmain_signal)
from .trace import Trace


class EngineFault(RuntimeError):
    def __init__(self, msg: str, tail: Sequence[tuple] = ()):
        super().__init__(msg)
        self.tail = list(tail)


@dataclass
class SimConfig:
    params: Params
    assignment: TimeoutAssignment
    horizon: int
    seed: int = 0
    faults: FaultPlan = field(default_factory=FaultPlan)
    strategy: Strategy | None = None
    init: str = "random"  # random | quasi
    clocks: str = "random"  # random | constant | extreme | explicit
    clock_schedules: dict | None = None
    delays: str = "random"  # random | max | min | fixed
    fixed_delay: int | None = None
    darts: str = "random"  # random | off | on
    darts_period: float | None = None
    fast_rejoin: bool = False
    transients: list[tuple[int, int]] = field(default_factory=list)
    trace_level: str = "outputs"  # outputs | full
    extra_meta: dict = field(default_factory=dict)  # copied verbatim into the trace header

    def validate(self) -> None:
        self.params.validate()
        bad = check(self.params, self.assignment)
        if bad:
            raise ConfigurationError(f"timeout assignment violates: {', '.join(bad)}")
        self.faults.validate(self.params.n, self.params.f)
        if self.init not in ("random", "quasi"):
            raise ConfigurationError(f"unknown init policy {self.init!r}")
        if self.clocks not in ("random", "constant", "extreme", "explicit"):
            raise ConfigurationError(f"unknown clock policy {self.clocks!r}")
        if self.delays not in ("random", "max", "min", "fixed"):
            raise ConfigurationError(f"unknown delay policy {self.delays!r}")
        if self.darts not in ("random", "off", "on"):
            raise ConfigurationError(f"unknown darts policy {self.darts!r}")
        if self.trace_level not in ("outputs", "full"):
            raise ConfigurationError(f"unknown trace level {self.trace_level!r}")
        if int(self.params.d) != self.params.d or self.params.d < 2:
            raise ConfigurationError("the simulator needs an integral d >= 2")
        if self.delays == "fixed" and not (self.fixed_delay and 1 <= self.fixed_delay < self.params.d):
            raise ConfigurationError("fixed delay must lie in [1, d)")
        if self.horizon < 0:
            raise ConfigurationError("horizon must be non-negative")

    def meta(self) -> dict:
        p = self.params
        return {
            "n": p.n, "f": p.f, "d": int(p.d), "theta": p.theta, "alpha": p.alpha, "k": p.k,
            "timeouts": self.assignment.as_dict(),
            "horizon": self.horizon, "seed": self.seed,
            "fault_mode": self.faults.mode,
            "faulty_at": {str(i): 0 for i in sorted(self.faults.faulty)} if self.faults.mode == "static" else {},
            "faulty_channels": sorted(list(c) for c in self.faults.faulty_channels),
            "strategy": self.strategy.name if self.strategy else "silent",
            "init": self.init, "clocks": self.clocks, "delays": self.delays, "darts": self.darts,
            "fast_rejoin": self.fast_rejoin,
            **({"scenario": self.extra_meta} if self.extra_meta else {}),
        }


DELIV, FWRITE, DARTS_EV, RESET_EV, EXPIRE, WAKE = range(6)
# heap priority per kind: deliveries and port writes first, then expiries
_PRIO = {DELIV: 0, FWRITE: 0, DARTS_EV: 0, RESET_EV: 0, EXPIRE: 1, WAKE: 2}


def _random_schedule(rng: random.Random, theta: float, horizon: int, d: int) -> list[tuple[int, float]]:
    top = math.floor(theta * RATE_SCALE + 1e-9)
    sched = []
    t = 0
    while True:
        sched.append((t, rng.randint(RATE_SCALE, top) / RATE_SCALE))
        t += rng.randint(10 * d, 200 * d)
        if t > horizon:
            return sched


class Simulation:
    """One run; construct, then call :meth:`run` once."""

    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        p = cfg.params
        self.n, self.f, self.d = p.n, p.f, int(p.d)
        self.theta = p.theta
        self.table = build_table(p, cfg.assignment, fast_rejoin=cfg.fast_rejoin)
        self.compiled = CompiledTable(self.table, self.n, self.f)
        self.nm = self.compiled.n_machines
        self.plan = replace(cfg.faults, faulty=set(cfg.faults.faulty),
                            faulty_channels=set(cfg.faults.faulty_channels),
                            corrupted_at=dict(cfg.faults.corrupted_at))
        self.strategy = cfg.strategy or Strategy()
        seed = cfg.seed
        self.rng_init = random.Random(f"{seed}/init")
        self.rng_delay = random.Random(f"{seed}/delay")
        self.rng_darts = random.Random(f"{seed}/darts")
        self.rng_clock = random.Random(f"{seed}/clock")
        self.strategy.bind(random.Random(f"{seed}/adversary"), self.d)
        self.trace = Trace(cfg.meta())
        self.records = self.trace.records
        self.full = cfg.trace_level == "full"
        self.heap: list = []
        self.seq = 0
        self.last_reset: dict[tuple[int, str], int] = {}
        self.fam_cache: dict[tuple, tuple] = {}
        self._setup_clocks()
        self._setup_nodes()

    # --- setup ------------------------------------------------------------
    def _setup_clocks(self):
        cfg, n = self.cfg, self.n
        sched = self.strategy.clock_schedules(n, self.theta, cfg.horizon, self.d)
        if sched is None:
            if cfg.clocks == "explicit":
                sched = cfg.clock_schedules or {}
            elif cfg.clocks == "constant":
                sched = {i: [(0, 1.0)] for i in range(n)}
            elif cfg.clocks == "extreme":
                sched = {i: [(0, self.theta if i % 2 == 0 else 1.0)] for i in range(n)}
            else:
                sched = {i: _random_schedule(self.rng_clock, self.theta, cfg.horizon, self.d)
                         for i in range(n)}
        self.clocks = [Clock(sched.get(i, [(0, 1.0)]), self.theta) for i in range(n)]

    def _push(self, t, kind, a=None, b=None, c=None, e=None):
        self.seq += 1
        heapq.heappush(self.heap, (t, _PRIO[kind], self.seq, kind, a, b, c, e))

    def _setup_nodes(self):
        cfg, n, nm, rng = self.cfg, self.n, self.nm, self.rng_init
        self.ports: list[dict[str, TimeoutPort]] = []
        self.nodes: list[NodeState] = []
        self.channels = [[Channel(s, t, self.d) for t in range(n)] for s in range(n)]
        specs = self.table.timeouts
        for i in range(n):
            ports = {}
            for sp in specs:
                if sp.randomized:
                    ports[sp.name] = RandomizedTimeoutPort(
                        sp.name, sp.lo, sp.hi, (sp.machine, sp.states), self.clocks[i],
                        random.Random(f"{cfg.seed}/timeout/{i}/{sp.name}"))
                else:
                    ports[sp.name] = TimeoutPort(sp.name, sp.lo, (sp.machine, sp.states), self.clocks[i])
            self.ports.append(ports)
            if cfg.init == "quasi":
                ns = self._quasi_state(i, ports)
            else:
                ns = self._random_state(i, ports, rng)
            self.nodes.append(ns)
            if cfg.darts == "on":
                ns.darts = True
        for i in range(n):
            if self.plan.is_faulty(i, 0):
                continue
            ns = self.nodes[i]
            for m in range(nm):
                self.records.append((0, i, MACHINES[m], ns.actual[m]))
            if cfg.darts == "random":
                self.records.append((0, i, "darts", int(ns.darts)))
                self._schedule_darts(i, 0)
            for dst in range(n):
                if self.plan.is_faulty(dst, 0) or (i, dst) in self.plan.faulty_channels:
                    continue
                at = self.channels[i][dst].deliver(0, self._delay(i, dst, 0))
                self._push(at, DELIV, dst, i, tuple(ns.actual), ((), (), 0))
        for t, node in cfg.transients:
            self._push(t, RESET_EV, node)

    def _random_state(self, i, ports, rng, now: int = 0) -> NodeState:
        n, nm = self.n, self.nm
        ns = NodeState(
            node_id=i,
            actual=list(random_state(rng, n, nm)),
            obs=[random_state(rng, n, nm) for _ in range(n)],
            masks={fam: rng.getrandbits(n) for fam in FLAG_FAMILIES},
            expired={},
            darts=bool(rng.getrandbits(1)),
            darts_flag=bool(rng.getrandbits(1)),
            t1_sample=bool(rng.getrandbits(1)),
        )
        for name, port in ports.items():
            if rng.getrandbits(1):
                port.set_expired()
                ns.expired[name] = True
            else:
                hi = port.hi if isinstance(port, RandomizedTimeoutPort) else port.duration
                at = port.set_running(now, rng.randint(1, hi))
                ns.expired[name] = False
                self._push(at, EXPIRE, i, name, port.generation)
        return ns

    def _quasi_state(self, i, ports) -> NodeState:
        n, nm = self.n, self.nm
        base = ("propose", "trust", "dormant", "wait", "none", "idle")[:nm]
        remote = ("ready",) + base[1:]
        ns = NodeState(
            node_id=i,
            actual=list(base),
            obs=[base if j == i else remote for j in range(n)],
            masks={fam: 0 for fam in FLAG_FAMILIES},
            expired={name: True for name in ports},
        )
        for j in range(n):
            self._latch(ns, j, ns.obs[j])
        for name in ("T5", "R3"):
            at = ports[name].reset(0)
            ns.expired[name] = False
            self.last_reset[(i, name)] = 0
            self._push(at, EXPIRE, i, name, ports[name].generation)
        return ns

    def _fams(self, tup):
        fams = self.fam_cache.get(tup)
        if fams is None:
            fams = tuple(fam for fam in FLAG_FAMILIES
                         if (rmain_signal(tup[fam[0]]) if fam[0] == RMAIN else tup[fam[0]]) == fam[1])
            self.fam_cache[tup] = fams
        return fams

    def _latch(self, ns, src, tup):
        bit = 1 << src
        masks = ns.masks
        for fam in self._fams(tup):
            masks[fam] |= bit

    def _schedule_darts(self, i, now):
        period = self.cfg.darts_period or self.cfg.assignment.T2
        gap = 1 + int(self.rng_darts.expovariate(1.0 / period))
        self._push(now + gap, DARTS_EV, i)

    # --- run --------------------------------------------------------------
    def _delay(self, src, dst, t) -> int:
        dl = self.strategy.delay(src, dst, t)
        if dl is not None:
            if not 1 <= dl < self.d:
                raise SimulationInvariantError(f"strategy delay {dl} outside [1, d)")
            return dl
        pol = self.cfg.delays
        if pol == "random":
            return 1 + int(self.rng_delay.random() * (self.d - 1))
        if pol == "max":
            return self.d - 1
        if pol == "min":
            return 1
        return self.cfg.fixed_delay

    def _view(self, now):
        return AdversaryView(
            now=now, n=self.n, f=self.f, d=self.d, theta=self.theta, n_machines=self.nm,
            plan=self.plan,
            actual={i: tuple(self.nodes[i].actual) for i in range(self.n) if not self.plan.is_faulty(i)},
            last_reset=self.last_reset,
            history=self.records,
            _corrupt=lambda node: self._corrupt(node, now),
        )

    def _corrupt(self, node, now) -> bool:
        if self.plan.mode != "adaptive" or self.plan.is_faulty(node):
            return self.plan.is_faulty(node)
        if len(self.plan.corrupted_at) >= self.plan.budget:
            return False
        corrupt(self.plan, node, now)
        self.records.append((now, node, "fault", "corrupt"))
        return True

    def _apply_writes(self, writes, now):
        for w in writes:
            if not isinstance(w, Write):
                raise ContainmentError(f"strategy returned {w!r}, not a Write")
            if w.t <= now:
                raise ContainmentError(f"write at {w.t} is not in the future of {now}")
            if w.src == w.dst or not self.plan.port_faulty(w.dst, w.src):
                raise ContainmentError(f"port S_{{{w.dst},{w.src}}} is not faulty")
            if len(w.state) != self.nm:
                raise ContainmentError("write has the wrong product arity")
            self._push(w.t, FWRITE, w.dst, w.src, tuple(w.state))

    def _adversary(self, res, now):
        if isinstance(res, tuple):
            writes, wake = res
        else:
            writes, wake = res, None
        self._apply_writes(writes or (), now)
        if wake is not None and wake > now:
            self._push(wake, WAKE)

    def _reset_timeout(self, i, ns, name, now):
        port = self.ports[i][name]
        at = port.reset(now)
        ns.expired[name] = False
        self.last_reset[(i, name)] = now
        self._push(at, EXPIRE, i, name, port.generation)
        if self.full:
            self.records.append((now, i, f"timeout:{name}", "reset"))

    def _transient_reset(self, i, now):
        ns = self.nodes[i]
        fresh = self._random_state(i, self.ports[i], self.rng_init, now)
        # keep port contents (those are channel state), scramble the rest
        fresh.obs = ns.obs
        fresh.darts = ns.darts
        self.nodes[i] = fresh
        self.records.append((now, i, "fault", "reset"))
        for m in range(self.nm):
            self.records.append((now, i, MACHINES[m], fresh.actual[m]))
        for dst in range(self.n):
            if self.plan.is_faulty(dst) or (i, dst) in self.plan.faulty_channels:
                continue
            at = self.channels[i][dst].deliver(now, self._delay(i, dst, now))
            self._push(at, DELIV, dst, i, tuple(fresh.actual), ((), (), now))

    def run(self) -> Trace:
        try:
            self._run()
        except (ContainmentError, ConfigurationError):
            raise
        except Exception as exc:  # engine invariant breach
            raise EngineFault(f"engine fault: {exc}", self.records[-50:]) from exc
        return self.trace

    def _run(self):
        heap, records, nodes, plan = self.heap, self.records, self.nodes, self.plan
        n, nm, full = self.n, self.nm, self.full
        horizon = self.cfg.horizon
        accept_fam = FLAG_FAMILIES[0]
        nf = n - self.f
        resets_on_entry = self.compiled.resets_on_entry
        evaluate = self.compiled.evaluate
        strategy = self.strategy
        adaptive = plan.mode == "adaptive"
        faulty_channels = plan.faulty_channels
        channels = self.channels
        machine_names = MACHINES
        pop = heapq.heappop
        # membership in corrupted_at is "faulty now": entries are never in the future
        bad = plan.corrupted_at
        stepper = type(strategy).on_step is not Strategy.on_step

        self._adversary(strategy.start(self._view(0)), 0)

        while heap and heap[0][0] <= horizon:
            t = heap[0][0]
            dirty = set()
            wake = False
            while heap and heap[0][0] == t:
                _, _, _, kind, a, b, c, e = pop(heap)
                if kind == DELIV or kind == FWRITE:
                    dst = a
                    if dst in bad:
                        continue
                    ns = nodes[dst]
                    if b != dst and ns.obs[b] == c:
                        # an unchanged port value cannot alter flags or guards
                        continue
                    ns.obs[b] = c
                    bit = 1 << b
                    masks = ns.masks
                    for fam in self._fams(c):
                        masks[fam] |= bit
                    if full:
                        records.append((t, dst, f"port{b}", c))
                    if kind == DELIV and b == dst:
                        switched, fresets, sent = e
                        records.append((t, dst, "loop", sent))
                        for m in switched:
                            for name in resets_on_entry.get((m, c[m]), ()):
                                self._reset_timeout(dst, ns, name, t)
                        for fam in fresets:
                            if fam == DARTS:
                                ns.darts_flag = ns.darts
                            else:
                                comp, st = fam
                                mask = 0
                                for j, sig in enumerate(ns.obs):
                                    v = sig[comp]
                                    if comp == RMAIN:
                                        v = rmain_signal(v)
                                    if v == st:
                                        mask |= 1 << j
                                masks[fam] = mask
                            if full:
                                records.append((t, dst, "flagreset", "darts" if fam == DARTS else fam[1]))
                    dirty.add(dst)
                elif kind == EXPIRE:
                    if a in bad:
                        continue
                    port = self.ports[a][b]
                    if port.expire(c):
                        ns = nodes[a]
                        ns.expired[b] = True
                        if b == "T1":
                            ns.t1_sample = ns.masks[accept_fam].bit_count() >= nf
                        if full:
                            records.append((t, a, f"timeout:{b}", "expire"))
                        dirty.add(a)
                elif kind == DARTS_EV:
                    if plan.is_faulty(a):
                        continue
                    ns = nodes[a]
                    ns.darts = not ns.darts
                    if ns.darts:
                        ns.darts_flag = True
                    records.append((t, a, "darts", int(ns.darts)))
                    self._schedule_darts(a, t)
                    dirty.add(a)
                elif kind == RESET_EV:
                    if not plan.is_faulty(a):
                        self._transient_reset(a, t)
                        dirty.add(a)
                else:
                    wake = True

            switched_any = False
            for i in sorted(dirty):
                if i in bad:
                    continue
                ns = nodes[i]
                taken = evaluate(ns)
                if not taken:
                    continue
                if adaptive:
                    view = None
                    hit = False
                    for tr in taken:
                        view = view or self._view(t)
                        if strategy.before_switch(view, i, tr.machine, tr.src, tr.dst) and plan.is_faulty(i):
                            hit = True
                            break
                    if hit:
                        continue
                actual = ns.actual
                fresets = []
                switched = []
                for tr in taken:
                    actual[tr.machine] = tr.dst
                    switched.append(tr.machine)
                    fresets.extend(tr.flag_resets)
                    records.append((t, i, machine_names[tr.machine], tr.dst))
                tup = tuple(actual)
                payload = (tuple(switched), tuple(fresets), t)
                chans = channels[i]
                for dst in range(n):
                    if dst in bad or (i, dst) in faulty_channels:
                        continue
                    at = chans[dst].deliver(t, self._delay(i, dst, t))
                    self._push(at, DELIV, dst, i, tup, payload if dst == i else None)
                switched_any = True

            if (switched_any and stepper) or wake:
                self._adversary(strategy.on_step(self._view(t)), t)


def run(cfg: SimConfig) -> Trace:
    return Simulation(cfg).run()


# --- Monte-Carlo trials -------------------------------------------------------------

@dataclass
class TrialSummary:
    """Per-trial stabilization times (None: never stabilized) and aggregates."""

    seeds: list[int]
    times: list[int | None]
    passed: list[bool]
    T: dict[int, float]
    violations: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.times)

    def within(self, k: int) -> int:
        return sum(1 for t in self.times if t is not None and t <= self.T[k])

    def fraction(self, k: int) -> float:
        return self.within(k) / self.trials

    def finite(self) -> list[int]:
        return sorted(t for t in self.times if t is not None)

    def mean(self) -> float | None:
        xs = self.finite()
        return sum(xs) / len(xs) if xs else None

    def quantiles(self, qs=(0.5, 0.9, 0.99)) -> dict[float, float]:
        import numpy as np
        xs = self.finite()
        if not xs:
            return {}
        return {q: float(np.quantile(xs, q)) for q in qs}

    def histogram(self, bins: int = 10) -> list[tuple[float, float, int]]:
        import numpy as np
        xs = self.finite()
        if not xs:
            return []
        counts, edges = np.histogram(xs, bins=bins)
        return [(float(edges[k]), float(edges[k + 1]), int(c)) for k, c in enumerate(counts)]

    def binomial_p(self, k: int, bound: float) -> float:
        """One-sided p-value of 'true success rate >= bound' given the counts."""
        from scipy.stats import binomtest
        return binomtest(self.within(k), self.trials, bound, alternative="less").pvalue


def _one_trial(cfg: SimConfig, ks, weak, structural):
    from .verifier import verify
    rep = verify(run(cfg), weak=weak, k=max(ks), structural=structural)
    return rep.stabilization_time, rep.passed, len(rep.violations)


def run_trials(cfg: SimConfig, trials: int, *, ks: Sequence[int] | None = None, jobs: int = 1,
               weak: bool | None = None, structural: bool = False) -> TrialSummary:
    """Run ``trials`` seeds starting at ``cfg.seed`` and verify each trace.

    A trial's stabilization time is the first quasi-stabilization point
    after which the pulses satisfy skew and accuracy up to the horizon.
    Every trial gets its own copy of the strategy, so results do not depend
    on ``jobs`` or on the completion order.
    """
    import copy
    from .constraints import derived_constants

    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    ks = [cfg.params.k] if not ks else sorted(set(ks))
    dc = derived_constants(cfg.params, cfg.assignment)
    seeds = [cfg.seed + m for m in range(trials)]
    cfgs = [replace(cfg, seed=s, strategy=copy.deepcopy(cfg.strategy)) for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            res = list(ex.map(_one_trial, cfgs, [ks] * trials, [weak] * trials, [structural] * trials))
    else:
        res = [_one_trial(c, ks, weak, structural) for c in cfgs]
    return TrialSummary(
        seeds=seeds,
        times=[r[0] for r in res],
        passed=[r[1] for r in res],
        T={k: dc.T_of_k(k) for k in ks},
        violations=[r[2] for r in res],
    )
