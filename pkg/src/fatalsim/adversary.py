"""Faulty-component behavior: fault plans, adversary views and a strategy
library.

A strategy never touches engine state directly.  It receives an
:class:`AdversaryView` and answers with :class:`Write` records for faulty
ports; the engine checks containment before applying them.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .protocol import (CORE_STATES, EXT_STATES, RINIT_STATES, SUSPECT_STATES,
                       SWR_STATES, rmain_states)


class ContainmentError(RuntimeError):
    """A strategy tried to drive a port that is not faulty."""


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class FaultPlan:
    """Static fault set, or an adaptive corruption budget."""

    mode: str = "static"
    faulty: set[int] = field(default_factory=set)
    budget: int = 0
    faulty_channels: set[tuple[int, int]] = field(default_factory=set)
    corrupted_at: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("static", "adaptive"):
            raise ValueError(f"unknown fault mode {self.mode!r}")
        for node in self.faulty:
            self.corrupted_at.setdefault(node, 0)

    def is_faulty(self, node: int, t: int | None = None) -> bool:
        at = self.corrupted_at.get(node)
        return at is not None and (t is None or at <= t)

    def port_faulty(self, dst: int, src: int) -> bool:
        return src in self.corrupted_at or (src, dst) in self.faulty_channels

    def validate(self, n: int, f: int) -> None:
        if self.mode == "static" and len(self.faulty) > f:
            raise ValueError(f"{len(self.faulty)} faulty nodes exceed f={f}")
        if self.mode == "adaptive" and self.budget > f:
            raise ValueError(f"budget {self.budget} exceeds f={f}")
        for node in self.faulty:
            if not 0 <= node < n:
                raise ValueError(f"faulty node {node} out of range")
        for src, dst in self.faulty_channels:
            if not (0 <= src < n and 0 <= dst < n) or src == dst:
                raise ValueError(f"bad faulty channel {(src, dst)}")


def corrupt(plan: FaultPlan, node: int, t: int) -> FaultPlan:
    """Hand ``node`` to the adversary from ``t`` on (inclusive)."""
    if plan.mode != "adaptive":
        raise ValueError("corruption needs an adaptive fault plan")
    if node in plan.corrupted_at:
        return plan
    if len(plan.corrupted_at) >= plan.budget:
        raise BudgetExhausted(f"corruption budget {plan.budget} exhausted")
    plan.corrupted_at[node] = t
    plan.faulty.add(node)
    return plan


@dataclass(frozen=True)
class Write:
    """Set faulty port S_{dst,src} to ``state`` at time ``t``."""

    t: int
    dst: int
    src: int
    state: tuple[str, ...]


@dataclass
class AdversaryView:
    """What a strategy may see at time ``now``.

    Timeout information is limited to reset times; randomized durations and
    pending expiry times are never included.
    """

    now: int
    n: int
    f: int
    d: int
    theta: float
    n_machines: int
    plan: FaultPlan
    actual: dict[int, tuple[str, ...]]
    last_reset: dict[tuple[int, str], int]
    history: Sequence[tuple]
    _corrupt: Callable[[int], bool] | None = None

    def correct_nodes(self) -> list[int]:
        return sorted(self.actual)

    def corrupt(self, node: int) -> bool:
        if self._corrupt is None:
            return False
        return self._corrupt(node)


def random_state(rng: random.Random, n: int, n_machines: int) -> tuple[str, ...]:
    pools = (CORE_STATES, SUSPECT_STATES, EXT_STATES, RINIT_STATES, rmain_states(n), SWR_STATES)
    return tuple(rng.choice(pools[m]) for m in range(n_machines))


def quiet_state(n_machines: int) -> tuple[str, ...]:
    return ("recover", "trust", "dormant", "wait", "none", "idle")[:n_machines]


class Strategy:
    """Base strategy: silent.  Subclasses override the hooks they need."""

    name = "silent"
    needs_adaptive = False

    def __init__(self, **params):
        self.params = params
        self.rng = random.Random(0)
        self.d = 1000

    def bind(self, rng: random.Random, d: int) -> None:
        self.rng = rng
        self.d = d
        self.reset()

    def reset(self) -> None:
        """Forget per-run state; called when the strategy is bound to a run."""
        self._ports_cache = None

    def clock_schedules(self, n: int, theta: float, horizon: int, d: int) -> dict | None:
        return None

    def delay(self, src: int, dst: int, t: int) -> int | None:
        return None

    def faulty_ports(self, view: AdversaryView) -> list[tuple[int, int]]:
        key = (len(view.plan.corrupted_at), len(view.plan.faulty_channels))
        cached = getattr(self, "_ports_cache", None)
        if cached and cached[0] == key:
            return cached[1]
        out = []
        for dst in view.actual:
            for src in range(view.n):
                if src != dst and view.plan.port_faulty(dst, src):
                    out.append((dst, src))
        self._ports_cache = (key, out)
        return out

    def start(self, view: AdversaryView) -> list[Write]:
        st = quiet_state(view.n_machines)
        return [Write(1, dst, src, st) for dst, src in self.faulty_ports(view)]

    def on_step(self, view: AdversaryView):
        """Return a list of writes, or ``(writes, wake_at)``."""
        return []

    def before_switch(self, view: AdversaryView, node: int, machine: int, src: str, dst: str) -> bool:
        """Adaptive hook: return True to corrupt ``node`` right now."""
        return False


class Silent(Strategy):
    name = "silent"


class CrashAtTime(Strategy):
    """Adaptive: one node runs correctly until ``at`` and then falls silent."""

    name = "crash"
    needs_adaptive = True

    def __init__(self, node: int = 0, at: int = 0, **params):
        super().__init__(**params)
        self.node = int(node)
        self.at = int(at)
        self.done = False

    def reset(self):
        super().reset()
        self.done = False

    def on_step(self, view):
        if not self.done and view.now >= self.at and self.node in view.actual:
            self.done = view.corrupt(self.node)
            if self.done:
                st = quiet_state(view.n_machines)
                return [Write(view.now + 1, dst, self.node, st) for dst in view.actual if dst != self.node]
        return [], (self.at if view.now < self.at else None)


class RandomFlip(Strategy):
    """Random product states on every faulty port, redrawn every ``period``."""

    name = "random-flip"

    def __init__(self, period: float = 1.0, **params):
        super().__init__(**params)
        self.period = float(period)
        self.planned = 0

    def reset(self):
        super().reset()
        self.planned = 0

    def on_step(self, view):
        step = max(1, int(self.period * view.d))
        horizon = view.now + 20 * step
        out = []
        t = max(self.planned, view.now + 1)
        while t <= horizon:
            for dst, src in self.faulty_ports(view):
                out.append(Write(t, dst, src, random_state(self.rng, view.n, view.n_machines)))
            t += step
        self.planned = t
        return out, self.planned - step


class PlayNiceSubset(Strategy):
    """Faulty nodes mirror a correct node towards n-2f targets and send
    random states to everybody else."""

    name = "play-nice-subset"

    def __init__(self, garbage_period: float = 10.0, **params):
        super().__init__(**params)
        self.garbage_period = float(garbage_period)
        self.nice: dict[int, list[int]] = {}
        self.planned = 0
        self.mirrored = None

    def reset(self):
        super().reset()
        self.nice = {}
        self.planned = 0
        self.mirrored = None

    def _targets(self, view, src):
        if src not in self.nice:
            correct = view.correct_nodes()
            self.rng.shuffle(correct)
            self.nice[src] = sorted(correct[: view.n - 2 * view.f])
        return self.nice[src]

    def start(self, view):
        return self.on_step(view)[0]

    def on_step(self, view):
        out = []
        correct = view.correct_nodes()
        if not correct:
            return []
        ref = view.actual[correct[0]]
        step = max(1, int(self.garbage_period * view.d))
        if ref != self.mirrored:
            self.mirrored = ref
            for dst, src in self.faulty_ports(view):
                if dst in self._targets(view, src):
                    out.append(Write(view.now + 1, dst, src, ref))
        if self.planned > view.now + 10 * step:
            return out
        t = max(self.planned, view.now + 1)
        while t <= view.now + 20 * step:
            for dst, src in self.faulty_ports(view):
                if dst not in self._targets(view, src):
                    out.append(Write(t, dst, src, random_state(self.rng, view.n, view.n_machines)))
            t += step
        self.planned = t
        return out, view.now + 10 * step


class InitSpammer(Strategy):
    """Raises the init signal on every faulty port in a square wave with an
    independent random phase per receiver, so receivers see init at
    different times.  Other components mirror a correct node.

    Reacting to init is level-triggered and silenced by R2 afterwards, so a
    period of a few d is as aggressive as toggling every unit.
    """

    name = "init-spammer"

    def __init__(self, period: float = 10.0, **params):
        super().__init__(**params)
        self.period = float(period)
        self.planned = 0
        self.phase: dict[tuple[int, int], int] = {}

    def reset(self):
        super().reset()
        self.planned = 0
        self.phase = {}

    def on_step(self, view):
        step = max(2, int(self.period * view.d))
        if self.planned > view.now + 10 * step:
            return []
        correct = view.correct_nodes()
        base = list(view.actual[correct[0]]) if correct else list(quiet_state(view.n_machines))
        out = []
        start = max(self.planned, view.now + 1)
        end = view.now + 20 * step
        for dst, src in self.faulty_ports(view):
            off = self.phase.setdefault((dst, src), self.rng.randrange(step))
            k = (start - off) // step
            while True:
                t_up = off + k * step
                for t, sig in ((t_up, "init"), (t_up + step // 2, "wait")):
                    if start <= t < end:
                        base[3] = sig
                        out.append(Write(t, dst, src, tuple(base)))
                if t_up >= end:
                    break
                k += 1
        self.planned = end
        return out, view.now + 10 * step


class MaxDelay(Strategy):
    name = "max-delay"

    def delay(self, src, dst, t):
        return self.d - 1


class WorstDrift(PlayNiceSubset):
    """Opposing extreme clock rates, maximal delays towards half the nodes
    and minimal delays towards the others; faulty nodes play nice to a
    subset like :class:`PlayNiceSubset`."""

    name = "worst-drift"

    def clock_schedules(self, n, theta, horizon, d):
        return {i: [(0, theta if i % 2 == 0 else 1.0)] for i in range(n)}

    def delay(self, src, dst, t):
        return self.d - 1 if (src + dst) % 2 else 1


class AdaptiveInitKiller(Strategy):
    """Adaptive: corrupts nodes at the instant they are about to raise init,
    then keeps them silent, until the budget is spent."""

    name = "adaptive-init-killer"
    needs_adaptive = True

    def before_switch(self, view, node, machine, src, dst):
        if machine == 3 and dst == "init":
            return view.corrupt(node)
        return False

    def on_step(self, view):
        st = quiet_state(view.n_machines)
        return [Write(view.now + 1, dst, src, st) for dst, src in self.faulty_ports(view)]


class Transcript(Strategy):
    """Replays recorded writes and corruptions.

    ``writes`` holds ``(emitted_at, Write)`` pairs (a bare :class:`Write`
    counts as emitted at time 0); each write is handed to the engine at the
    instant the original strategy produced it.  ``corruptions`` maps a node
    to ``(time, hook)`` where hook is ``"switch"`` or ``"step"``, the place
    the original strategy acted.
    """

    name = "transcript"

    def __init__(self, writes: Sequence = (), corruptions: dict | None = None, **params):
        super().__init__(**params)
        items = [w if isinstance(w, tuple) else (0, w) for w in writes]
        self.items = sorted(items, key=lambda it: it[0])
        self.corruptions = dict(corruptions or {})
        self.pos = 0

    def reset(self):
        super().reset()
        self.pos = 0

    def _emit(self, now):
        out = []
        while self.pos < len(self.items) and self.items[self.pos][0] <= now:
            out.append(self.items[self.pos][1])
            self.pos += 1
        return out

    def _next_wake(self, now):
        future = [t for t, hook in self.corruptions.values() if hook == "step" and t > now]
        if self.pos < len(self.items):
            future.append(self.items[self.pos][0])
        return min(future) if future else None

    def _step(self, view):
        for node, (t, hook) in self.corruptions.items():
            if hook == "step" and t == view.now:
                view.corrupt(node)
        return self._emit(view.now), self._next_wake(view.now)

    def start(self, view):
        return self._step(view)

    def on_step(self, view):
        return self._step(view)

    def before_switch(self, view, node, machine, src, dst):
        return self.corruptions.get(node) == (view.now, "switch") and view.corrupt(node)


class Recorder(Strategy):
    """Wraps a strategy and records everything it does."""

    def __init__(self, inner: Strategy):
        super().__init__()
        self.inner = inner
        self.name = inner.name
        self.needs_adaptive = inner.needs_adaptive
        self.writes: list[tuple[int, Write]] = []
        self.corruptions: dict[int, tuple[int, str]] = {}

    def bind(self, rng, d):
        super().bind(rng, d)
        self.inner.bind(rng, d)

    def reset(self):
        super().reset()
        self.writes = []
        self.corruptions = {}

    def clock_schedules(self, *a):
        return self.inner.clock_schedules(*a)

    def delay(self, *a):
        return self.inner.delay(*a)

    def _wrap(self, view, hook):
        orig = view._corrupt

        def spy(node):
            ok = orig(node)
            if ok and node not in self.corruptions:
                self.corruptions[node] = (view.now, hook)
            return ok

        view._corrupt = spy
        return view

    def _keep(self, res, now):
        writes = res[0] if isinstance(res, tuple) else res
        self.writes.extend((now, w) for w in writes or ())
        return res

    def start(self, view):
        return self._keep(self.inner.start(self._wrap(view, "step")), view.now)

    def on_step(self, view):
        return self._keep(self.inner.on_step(self._wrap(view, "step")), view.now)

    def before_switch(self, view, node, machine, src, dst):
        return self.inner.before_switch(self._wrap(view, "switch"), node, machine, src, dst)

    def transcript(self) -> Transcript:
        tr = Transcript(self.writes, self.corruptions)
        tr.needs_adaptive = self.needs_adaptive
        tr.delay = self.inner.delay
        tr.clock_schedules = self.inner.clock_schedules
        return tr


STRATEGIES: dict[str, type[Strategy]] = {
    cls.name: cls
    for cls in (Silent, CrashAtTime, RandomFlip, PlayNiceSubset, InitSpammer, MaxDelay,
                WorstDrift, AdaptiveInitKiller)
}


def make_strategy(name: str, **params) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    return cls(**params)
