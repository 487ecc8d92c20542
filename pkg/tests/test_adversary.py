import dataclasses
import random

import pytest

from fatalsim.adversary import (STRATEGIES, AdaptiveInitKiller, AdversaryView, BudgetExhausted,
                                ContainmentError, CrashAtTime, FaultPlan, Recorder, Strategy,
                                Write, corrupt, make_strategy, quiet_state)
from fatalsim.constraints import Params, derived_constants, solve
from fatalsim.engine import SimConfig, run

P1 = Params(1.1, 1000, 4, 1)
A1 = solve(P1)
PERIOD = A1.T2 + A1.T3


def cfg(strategy, plan, horizon=6 * PERIOD, seed=3, **kw):
    return SimConfig(P1, A1, horizon=int(horizon), seed=seed, faults=plan, strategy=strategy, **kw)


def test_corrupt_is_idempotent_and_budgeted():
    plan = FaultPlan("adaptive", budget=1)
    corrupt(plan, 2, 50)
    corrupt(plan, 2, 70)
    assert plan.corrupted_at == {2: 50}
    with pytest.raises(BudgetExhausted):
        corrupt(plan, 1, 80)


def test_corrupt_needs_adaptive_plan():
    with pytest.raises(ValueError):
        corrupt(FaultPlan("static", {1}), 2, 0)


def test_plan_validation():
    with pytest.raises(ValueError):
        FaultPlan("static", {0, 1}).validate(4, 1)
    with pytest.raises(ValueError):
        FaultPlan("adaptive", budget=2).validate(4, 1)
    with pytest.raises(ValueError):
        FaultPlan("static", set(), faulty_channels={(1, 1)}).validate(4, 1)
    with pytest.raises(ValueError):
        FaultPlan("sometimes")


def test_port_faultiness():
    plan = FaultPlan("static", {3}, faulty_channels={(0, 1)})
    assert plan.port_faulty(dst=2, src=3)
    assert plan.port_faulty(dst=1, src=0)
    assert not plan.port_faulty(dst=0, src=1)


class Rogue(Strategy):
    name = "rogue"

    def start(self, view):
        return [Write(5, 1, 2, quiet_state(view.n_machines))]


class Backdated(Strategy):
    name = "backdated"

    def start(self, view):
        return [Write(0, 1, 3, quiet_state(view.n_machines))]


@pytest.mark.parametrize("strategy", [Rogue(), Backdated()])
def test_containment(strategy):
    with pytest.raises(ContainmentError):
        run(cfg(strategy, FaultPlan("static", {3}), horizon=1000))


def test_silent_strategy_keeps_faulty_ports_constant():
    tr = run(cfg(make_strategy("silent"), FaultPlan("static", {3}), horizon=3 * PERIOD,
                 trace_level="full"))
    from_faulty = {rec[3] for rec in tr.records if rec[2] == "port3"}
    assert len(from_faulty) == 1


def test_faulty_node_has_no_output_records():
    tr = run(cfg(make_strategy("init-spammer"), FaultPlan("static", {3}), horizon=2 * PERIOD))
    assert not [r for r in tr.records if r[1] == 3 and r[2] in ("core", "rinit")]


class Peek(Strategy):
    name = "peek"

    def __init__(self):
        super().__init__()
        self.views = []

    def on_step(self, view):
        self.views.append(view)
        return []


def test_view_exposes_reset_times_but_no_durations():
    fields = {f.name for f in dataclasses.fields(AdversaryView)}
    assert not any("expir" in f or "duration" in f or "draw" in f for f in fields)
    s = Peek()
    run(cfg(s, FaultPlan("static", {3}), horizon=2 * PERIOD, init="quasi"))
    v = s.views[-1]
    assert (0, "R3") in v.last_reset
    assert all(isinstance(t, int) for t in v.last_reset.values())


def test_crash_at_time_corrupts_once():
    strat = CrashAtTime(node=1, at=PERIOD)
    tr = run(cfg(strat, FaultPlan("adaptive", budget=1), horizon=3 * PERIOD))
    assert tr.corruptions() == {1: PERIOD}
    assert not [r for r in tr.records if r[1] == 1 and r[0] > PERIOD and r[2] == "core"]


def test_adaptive_corruption_suppresses_the_switch():
    strat = AdaptiveInitKiller()
    tr = run(cfg(strat, FaultPlan("adaptive", budget=1), horizon=int(1.5 * A1.R3_hi), seed=7))
    (node, t), = tr.corruptions().items()
    assert not [r for r in tr.records if r[1] == node and r[0] >= t and r[2] == "rinit" and r[3] == "init"]


def test_budget_refusal_inside_the_engine():
    class Greedy(Strategy):
        name = "greedy"
        needs_adaptive = True

        def __init__(self):
            super().__init__()
            self.answers = []

        def on_step(self, view):
            if not self.answers:
                self.answers = [view.corrupt(0), view.corrupt(0), view.corrupt(1)]
            return []

    g = Greedy()
    run(cfg(g, FaultPlan("adaptive", budget=1), horizon=PERIOD))
    assert g.answers == [True, True, False]


@pytest.mark.parametrize("name", ["play-nice-subset", "init-spammer", "crash", "adaptive-init-killer"])
def test_transcript_replay_reproduces_the_trace(name):
    params = {"crash": {"node": 2, "at": PERIOD}}.get(name, {})
    inner = make_strategy(name, **params)
    plan = (lambda: FaultPlan("adaptive", budget=1)) if inner.needs_adaptive else (lambda: FaultPlan("static", {3}))
    rec = Recorder(inner)
    original = run(cfg(rec, plan(), horizon=int(1.2 * A1.R3_hi), seed=11))
    replay = run(cfg(rec.transcript(), plan(), horizon=int(1.2 * A1.R3_hi), seed=11))
    assert replay.records == original.records


def test_strategy_state_is_reset_between_runs():
    s = make_strategy("play-nice-subset")
    c = cfg(s, FaultPlan("static", {3}), horizon=3 * PERIOD)
    assert run(c).dumps() == run(c).dumps()


def test_worst_drift_pins_extreme_rates():
    s = make_strategy("worst-drift")
    sched = s.clock_schedules(4, 1.1, 10, 1000)
    assert sched[0] == [(0, 1.1)] and sched[1] == [(0, 1.0)]
    s.bind(random.Random(0), 1000)
    assert {s.delay(0, 1, 0), s.delay(0, 2, 0)} == {999, 1}


def test_library_names():
    assert {"silent", "crash", "random-flip", "play-nice-subset", "init-spammer", "max-delay",
            "worst-drift"} <= set(STRATEGIES)
    with pytest.raises(ValueError):
        make_strategy("nope")
