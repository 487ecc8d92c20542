"""Deterministic primitives of the timed model: signals, drifting clocks,
bounded-delay FIFO channels, (randomized) timeouts and memory flags.

Reference time is an integer count of a base unit.  Clock rates are integer
tick counts per base unit, scaled by :data:`RATE_SCALE`, so local time is
exact as well.
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

RATE_SCALE = 1000


class TraceError(ValueError):
    """Structurally malformed signal trace."""


class ConfigurationError(ValueError):
    pass


class SimulationInvariantError(RuntimeError):
    """An engine invariant was breached; indicates a bug, not a model event."""


# --- signals ------------------------------------------------------------------

@dataclass
class SignalTrace:
    """Timed event trace over a finite alphabet; events sorted by time."""

    events: list[tuple[Hashable, int]] = field(default_factory=list)
    alphabet: frozenset | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.events or self.events[0][1] != 0:
            raise TraceError("a signal needs an event at time 0")
        last = -1
        for state, t in self.events:
            if t <= last:
                raise TraceError(f"events must have strictly increasing times (at {t})")
            if self.alphabet is not None and state not in self.alphabet:
                raise TraceError(f"state {state!r} outside alphabet")
            last = t

    @property
    def times(self) -> list[int]:
        return [t for _, t in self.events]

    def state_at(self, t: int):
        return signal_state_at(self, t)

    def switches(self) -> list[tuple[Hashable, int]]:
        """Events of the normalized trace, i.e. the times the signal switches."""
        return normalize(self).events


def signal_state_at(trace: SignalTrace, t: int):
    if t < 0:
        raise ValueError("time must be non-negative")
    if not trace.events or trace.events[0][1] != 0:
        raise TraceError("a signal needs an event at time 0")
    idx = bisect.bisect_right([e[1] for e in trace.events], t) - 1
    return trace.events[idx][0]


def normalize(trace: SignalTrace) -> SignalTrace:
    """Drop idempotent events (an event repeating the previous state)."""
    out: list[tuple[Hashable, int]] = []
    for state, t in trace.events:
        if out and out[-1][0] == state:
            continue
        out.append((state, t))
    return SignalTrace(out, trace.alphabet)


# --- clocks -------------------------------------------------------------------

def rate_to_ticks(rate: float, theta: float) -> int:
    ticks = round(rate * RATE_SCALE)
    if ticks < RATE_SCALE or ticks > math.floor(theta * RATE_SCALE + 1e-9):
        raise ConfigurationError(f"clock rate {rate} outside [1, {theta}]")
    return ticks


class Clock:
    """Piecewise-constant rate clock.

    ``schedule`` is a list of ``(start_time, rate)`` pairs with the first
    start at 0.  Local time is kept in integer ticks (``RATE_SCALE`` per unit
    of local time).
    """

    __slots__ = ("theta", "starts", "rates", "cum")

    def __init__(self, schedule: Sequence[tuple[int, float]], theta: float):
        if not schedule or schedule[0][0] != 0:
            raise ConfigurationError("rate schedule must start at time 0")
        self.theta = theta
        self.starts: list[int] = []
        self.rates: list[int] = []
        self.cum: list[int] = []
        acc = 0
        for idx, (start, rate) in enumerate(schedule):
            if idx and start <= self.starts[-1]:
                raise ConfigurationError("schedule breakpoints must increase")
            if idx:
                acc += self.rates[-1] * (start - self.starts[-1])
            self.starts.append(int(start))
            self.rates.append(rate_to_ticks(rate, theta))
            self.cum.append(acc)

    @classmethod
    def constant(cls, rate: float, theta: float) -> "Clock":
        return cls([(0, rate)], theta)

    def ticks(self, t: int) -> int:
        if len(self.starts) == 1:
            return self.rates[0] * t
        idx = bisect.bisect_right(self.starts, t) - 1
        return self.cum[idx] + self.rates[idx] * (t - self.starts[idx])

    def local_time(self, t: int) -> Fraction:
        return Fraction(self.ticks(t), RATE_SCALE)

    def expiry(self, t0: int, duration_ticks: int) -> int:
        """Earliest integer time t >= t0 with ticks(t) - ticks(t0) >= duration."""
        if len(self.starts) == 1:
            r = self.rates[0]
            return t0 + -(-duration_ticks // r)
        target = self.ticks(t0) + duration_ticks
        idx = max(bisect.bisect_right(self.starts, t0) - 1,
                  bisect.bisect_right(self.cum, target) - 1)
        # cum[idx] <= target; the crossing lies in segment idx
        while idx + 1 < len(self.starts) and self.cum[idx + 1] < target:
            idx += 1
        base = max(self.starts[idx], t0)
        have = self.ticks(base)
        return base + -(-(target - have) // self.rates[idx])


def clock_local_time(clock: Clock, t: int) -> Fraction:
    return clock.local_time(t)


# --- channels -----------------------------------------------------------------

class Channel:
    """FIFO bounded-delay channel realized by per-event delays and clamping."""

    __slots__ = ("src", "dst", "d", "last_send", "last_delivery", "correct")

    def __init__(self, src: int, dst: int, d: int, correct: bool = True):
        self.src = src
        self.dst = dst
        self.d = d
        self.last_send = -1
        self.last_delivery = -1
        self.correct = correct

    def deliver(self, send_time: int, delay: int) -> int:
        if not 0 <= delay < self.d:
            raise SimulationInvariantError(f"delay {delay} outside [0, {self.d})")
        if send_time == self.last_send:
            # the delivery function maps a send instant to one time; a second
            # value sent in the same instant supersedes the first on arrival
            return self.last_delivery
        at = send_time + delay
        if at <= self.last_delivery:
            at = self.last_delivery + 1
        if at - send_time >= self.d:
            raise SimulationInvariantError(
                f"FIFO clamp on channel {self.src}->{self.dst} exceeds the delay bound"
            )
        self.last_send = send_time
        self.last_delivery = at
        return at

    def reset_clamp(self) -> None:
        self.last_send = -1
        self.last_delivery = -1


def channel_deliver(channel: Channel, event: tuple[Hashable, int], delay: int) -> int:
    return channel.deliver(event[1], delay)


# --- timeouts -----------------------------------------------------------------

def duration_ticks(duration: float) -> int:
    return math.ceil(round(duration * RATE_SCALE, 6))


class TimeoutPort:
    """Watchdog (duration, reset_state, clock); ``generation`` invalidates
    expiries scheduled before the most recent reset."""

    __slots__ = ("name", "duration", "reset_state", "clock", "phase", "expired",
                 "generation", "expires_at")

    def __init__(self, name: str, duration: float, reset_state, clock: Clock):
        self.name = name
        self.duration = duration_ticks(duration)
        self.reset_state = reset_state
        self.clock = clock
        self.phase: int | None = None
        self.expired = True
        self.generation = 0
        self.expires_at: int | None = None

    def _draw(self) -> int:
        return self.duration

    def reset(self, now: int) -> int:
        self.generation += 1
        self.phase = now
        self.expired = False
        self.expires_at = self.clock.expiry(now, self._draw())
        return self.expires_at

    def expire(self, generation: int) -> bool:
        if generation != self.generation or self.expired:
            return False
        self.expired = True
        self.expires_at = None
        return True

    def set_running(self, now: int, remaining_ticks: int) -> int:
        """Arbitrary initial phase: running with the given local time left."""
        self.generation += 1
        self.phase = None
        self.expired = False
        self.expires_at = self.clock.expiry(now, max(1, remaining_ticks))
        return self.expires_at

    def set_expired(self) -> None:
        """Arbitrary initial phase: already expired; pending expiries go stale."""
        self.generation += 1
        self.phase = None
        self.expired = True
        self.expires_at = None


class RandomizedTimeoutPort(TimeoutPort):
    """Duration drawn uniformly (in ticks) from [lo, hi] at each reset.

    The drawn value lives only in a local of :meth:`reset`; nothing on the
    object exposes it besides ``expires_at``, which the engine keeps away
    from adversary views.
    """

    __slots__ = ("lo", "hi", "_rng")

    def __init__(self, name: str, lo: float, hi: float, reset_state, clock: Clock,
                 rng: random.Random):
        super().__init__(name, lo, reset_state, clock)
        self.lo = duration_ticks(lo)
        self.hi = duration_ticks(hi)
        self._rng = rng

    def _draw(self) -> int:
        return self._rng.randint(self.lo, self.hi)


def timeout_step(port: TimeoutPort, resets: Iterable[int], until: int) -> list[int]:
    """Expiry times of ``port`` given its reset times, up to ``until``.

    A reset supersedes any pending expiry (last reset wins).
    """
    out = []
    pending: tuple[int, int] | None = None
    for r in sorted(resets):
        if pending and pending[0] < r and pending[1] == port.generation:
            out.append(pending[0])
        at = port.reset(r)
        pending = (at, port.generation)
    if pending and pending[0] <= until and port.expire(pending[1]):
        out.append(pending[0])
    return [t for t in out if t <= until]


# --- memory flags -------------------------------------------------------------

class FlagBank:
    """Memory flags of one node as bitmasks over subjects, one per family.

    A family is a ``(component, signal_state)`` pair; bit j is set iff the
    owner observed subject j in that state since the family's last reset.
    """

    __slots__ = ("families", "masks")

    def __init__(self, families: Sequence[tuple[int, str]]):
        self.families = tuple(families)
        self.masks = {fam: 0 for fam in self.families}

    def observe(self, subject: int, signal: Sequence[str]) -> None:
        bit = 1 << subject
        for fam in self.families:
            if signal[fam[0]] == fam[1]:
                self.masks[fam] |= bit

    def reset(self, fam: tuple[int, str], ports: Sequence[Sequence[str] | None]) -> None:
        # a flag reset while its subject is still observed in the state re-latches
        mask = 0
        comp, state = fam
        for j, sig in enumerate(ports):
            if sig is not None and sig[comp] == state:
                mask |= 1 << j
        self.masks[fam] = mask

    def count(self, *fams: tuple[int, str]) -> int:
        m = 0
        for fam in fams:
            m |= self.masks[fam]
        return m.bit_count()

    def is_set(self, fam: tuple[int, str], subject: int) -> bool:
        return bool(self.masks[fam] >> subject & 1)
