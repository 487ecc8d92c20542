import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from fatalsim.constraints import (InfeasibleError, Params, TimeoutAssignment, achieved_ratio,
                                  alpha_sup, check, derived_constants, lam, r2_equality_form,
                                  r2_lower_bound, ratio_sup, relation_slacks, simplified_assignment,
                                  solve, stabilization_bound, theta_max)

TMAX = theta_max()


def test_theta_max_is_root_of_cubic():
    t = theta_max()
    assert abs(t - 1.247) < 1e-3
    assert abs(t**3 + t**2 - 2 * t - 1) < 1e-10


def test_lambda_oracles():
    assert lam(1.0) == pytest.approx(0.8, abs=1e-12)
    assert lam(1.1) == pytest.approx(0.82020, abs=1e-5)
    # lambda^2 = 1 - 9/(25 theta)
    assert lam(1.2) ** 2 == pytest.approx(1 - 9 / 30)
    for th in (1.01, 1.1, 1.2, 1.24):
        assert 0.8 < lam(th) < 1


def test_delta_g_oracle():
    a = TimeoutAssignment(4.4, *[0.0] * 10)
    assert derived_constants(Params(1.1, 1, 4, 0), a).Delta_g == pytest.approx(18.04)


def test_solve_reference_point_passes_check():
    p = Params(1.2, 1, 4, 1)
    a = solve(p)
    assert check(p, a) == []
    assert all(v >= 0 or name.startswith("R3_") for name, v in relation_slacks(p, a).items())


def test_solve_rejects_large_theta():
    with pytest.raises(InfeasibleError, match="1.247"):
        solve(Params(1.3, 1, 4, 1))


def test_solve_rejects_small_alpha():
    with pytest.raises(InfeasibleError, match="alpha"):
        solve(Params(1.2, 1, 4, 1, alpha=0.5))


@pytest.mark.parametrize("n,f", [(3, 1), (6, 2)])
def test_resilience_precondition(n, f):
    with pytest.raises(InfeasibleError):
        solve(Params(1.1, 1, n, f))


def test_halved_T2_is_flagged():
    p = Params(1.2, 1, 4, 1)
    bad = check(p, replace(solve(p), T2=solve(p).T2 / 2))
    assert "T2_lower" in bad and "lambda_margin" in bad


def test_all_zero_assignment_fails_T1():
    p = Params(1.2, 1, 4, 1)
    assert "T1_lower" in check(p, TimeoutAssignment(*[0.0] * 11))


def test_solution_is_integral_and_tight_on_T1():
    p = Params(1.1, 1000, 4, 0)
    a = solve(p)
    assert a.T1 == math.ceil(4 * 1.1 * 1000)
    for v in a.as_dict().values():
        if v in (a.R3_lo, a.R3_hi):
            continue
        assert v == int(v)


def _params(draw_theta, d, n, f_frac, a_frac):
    f = min(int(f_frac * ((n + 2) // 3)), math.ceil(n / 3) - 1)
    alpha = 1 + a_frac * (alpha_sup(draw_theta) - 1)
    return Params(draw_theta, d, n, f, alpha)


param_strategy = st.builds(
    _params,
    st.floats(1.0005, TMAX - 5e-4),
    st.sampled_from([1, 2.5, 10, 1000, 0.25]),
    st.integers(1, 32),
    st.floats(0, 1),
    st.floats(0, 0.999),
)


@settings(max_examples=300, deadline=None)
@given(param_strategy)
def test_solve_check_soundness(p):
    assert check(p, solve(p)) == []


@settings(max_examples=200, deadline=None)
@given(param_strategy)
def test_eliminated_terms_are_dominated(p):
    a = solve(p)
    c = derived_constants(p, a)
    th, d = p.theta, p.d
    T1, T2, T3, T4, T5, T6, T7 = a.T1, a.T2, a.T3, a.T4, a.T5, a.T6, a.T7
    assert T1 + c.Delta_g - (4 * th**2 + 16 * th + 5) * d < (3 * th + 1 - 1 / th) * T1 + T5
    assert (th - 1) * T2 + th * (2 * T1 + (2 * th + 4) * d) < (2 * th**2 + 3 * th - 1) * T1 - T2 + th * (T6 + 5 * d)
    assert th * (T4 + 7 * d) - T3 + (th - 1) * T2 < (th**2 + th - 2) * T1 + th * (T2 + T4 + 9 * d) - T6
    assert T7 + (4 * th + 8) * d > (2 * th + 4 - 3 / th) * T1 + 2 * T4 + T5 - c.Delta_s - c.Delta_g + 17 * d


@settings(max_examples=100, deadline=None)
@given(param_strategy)
def test_R2_forms_agree_under_pinned_T1(p):
    T1 = 4 * p.theta * p.d
    a = solve(p, integral=False)
    assert r2_lower_bound(p, T1, a.T2, a.R1) == pytest.approx(r2_equality_form(p, a.T2, a.R1), rel=1e-12)


def test_T_of_k_increasing_and_R2_increasing_in_n_minus_f():
    p = Params(1.1, 1000, 7, 2)
    c = derived_constants(p, solve(p))
    assert all(c.T_of_k(k) < c.T_of_k(k + 1) for k in range(6))
    r2 = [solve(Params(1.1, 1000, n, 0)).R2 for n in range(1, 8)]
    assert all(x < y for x, y in zip(r2, r2[1:]))


def test_stabilization_probabilities():
    p = Params(1.1, 1000, 4, 1)
    a = solve(p)
    assert stabilization_bound(p, a, 0).prob_strong == 0
    assert stabilization_bound(p, a, 3).prob_strong == pytest.approx(1 - 2**-9)
    assert stabilization_bound(p, a, 3).prob_adaptive == pytest.approx(1 - 2 * math.exp(-4.5))


@pytest.mark.parametrize("theta", [1.01, 1.1, 1.2, 1.24])
def test_ratio_never_exceeds_supremum(theta):
    p = Params(theta, 1000, 4, 1, 1 + 0.999 * (alpha_sup(theta) - 1))
    for x in [0, 1e3, 1e6, 1e9, 1e12, 1e15]:
        assert achieved_ratio(p, solve(p, boost_x=x, integral=False)) <= ratio_sup(theta)


def _lp_ratio_sup(theta, alpha):
    """Supremum of the ratio over the scale-free (d -> 0) limit of the
    relation system, with T4 = alpha * T3 and T2 + T3 normalized to 1."""
    th, lm = theta, lam(theta)
    rows = [
        [-th * (th + 4), 1, 0, 0, 0, 0],
        [-th * (3 * th + 1 - 1 / th), 1, 0, 0, -th, 0],
        [-2 * th, -(th - 1), 1, 0, 0, 0],
        [-(2 * th**2 + 3 * th - 1), 1, 1, 0, 0, -th],
        [0, -(th - 1), 1, -th, 1, 0],
        [-(th**2 + th - 2), -th, 0, -th, 1, 1],
        [-th * (th + 1), -th, 0, 0, 0, 1],
        [2 * th, -1, 0, 0, 0, 1],
        [-2 * (1 - lm) - (th + 3) - 2, (1 - lm) / th, 0, 0, 0, 0],
    ]
    res = linprog([0, -1, 0, -1, 0, 0], A_ub=[[-c for c in r] for r in rows], b_ub=[0] * len(rows),
                  A_eq=[[0, 1, 1, 0, 0, 0], [0, 0, alpha, -1, 0, 0]], b_eq=[1, 0],
                  bounds=[(0, None)] * 6)
    assert res.success
    return -res.fun / th


@pytest.mark.parametrize("theta", [1.01, 1.1, 1.2])
def test_boosted_solver_attains_linear_program_optimum(theta):
    al = 1 + 0.999 * (alpha_sup(theta) - 1)
    p = Params(theta, 1000, 4, 1, al)
    got = achieved_ratio(p, solve(p, boost_x=1e15, integral=False))
    assert got == pytest.approx(_lp_ratio_sup(theta, al), rel=1e-6)


def test_simplified_construction_reaches_stated_supremum_but_is_not_literal():
    p = Params(1.1, 1000, 4, 1, 1 + 0.999 * (alpha_sup(1.1) - 1))
    a = simplified_assignment(p, boost_x=1e12)
    assert achieved_ratio(p, a) == pytest.approx(ratio_sup(1.1), rel=1e-3)
    assert check(p, a) != []


def test_boost_must_be_non_negative():
    with pytest.raises(InfeasibleError):
        solve(Params(1.1, 1, 4, 1), boost_x=-1)
