"""Timeout constraint system: feasibility construction, literal checking and
derived constants.

All durations are expressed in the same unit as ``Params.d``.  With
``integral=True`` (the default) :func:`solve` returns values on the integer
grid, rounding lower-bounded quantities upward.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, fields, replace

from scipy.optimize import brentq


class InfeasibleError(ValueError):
    """Raised when a parameter set lies outside the solvable region."""


def _cubic(theta: float) -> float:
    return theta**3 + theta**2 - 2 * theta - 1


def theta_max() -> float:
    """Largest admissible drift bound: the root of x^3 + x^2 = 2x + 1 in (1, 2)."""
    return brentq(_cubic, 1.0, 2.0, xtol=1e-13)


def alpha_sup(theta: float) -> float:
    return (2 * theta + 1) / (theta**3 + theta**2)


def lam(theta: float) -> float:
    return math.sqrt((25 * theta - 9) / (25 * theta))


def ratio_sup(theta: float) -> float:
    """Supremum of the DARTS rate ratio claimed for the construction."""
    return (theta**3 + 2 * theta + 1) / (2 * theta**4 + theta**3)


@dataclass(frozen=True)
class Params:
    theta: float
    d: float
    n: int
    f: int
    alpha: float = 1.0
    k: int = 1

    def validate(self) -> None:
        if not self.theta > 1:
            raise InfeasibleError(f"theta must exceed 1 (got {self.theta})")
        tmax = theta_max()
        if self.theta >= tmax:
            raise InfeasibleError(
                f"theta={self.theta} is not below theta_max~{tmax:.3f}; "
                "the timeout constraints have no solution"
            )
        if self.d <= 0:
            raise InfeasibleError("d must be positive")
        if self.f < 0 or self.n < 3 * self.f + 1:
            raise InfeasibleError(f"need n >= 3f+1 (got n={self.n}, f={self.f})")
        sup = alpha_sup(self.theta)
        if not (1 <= self.alpha < sup):
            raise InfeasibleError(
                f"alpha={self.alpha} outside admissible interval [1, {sup:.6f})"
            )
        if self.k < 0:
            raise InfeasibleError("k must be non-negative")


@dataclass(frozen=True)
class TimeoutAssignment:
    T1: float
    T2: float
    T3: float
    T4: float
    T5: float
    T6: float
    T7: float
    R1: float
    R2: float
    R3_lo: float
    R3_hi: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TimeoutAssignment":
        names = [fl.name for fl in fields(cls)]
        missing = [k for k in names if k not in data]
        if missing:
            raise KeyError(f"missing timeouts: {', '.join(missing)}")
        return cls(**{k: float(data[k]) for k in names})

    def scaled(self, **factors: float) -> "TimeoutAssignment":
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})


@dataclass(frozen=True)
class DerivedConstants:
    lam: float
    Delta_g: float
    Delta_s: float
    delta_s: float
    delta_s_tilde: float
    hatE3: float
    R1: float
    theta: float

    def T_of_k(self, k: int) -> float:
        return (k + 2) * self.hatE3 + self.R1 / self.theta


def derived_constants(p: Params, a: TimeoutAssignment) -> DerivedConstants:
    th, d = p.theta, p.d
    lm = lam(th)
    return DerivedConstants(
        lam=lm,
        Delta_g=(th + 3) * a.T1,
        Delta_s=a.T2 / th - 2 * a.T1 - d,
        delta_s=2 * a.T1 + 3 * d,
        delta_s_tilde=(th + 2 - 1 / th) * a.T1 + 4 * d,
        hatE3=th * (a.R2 + 3 * d) + 8 * (1 - lm) * a.R2 + d,
        R1=a.R1,
        theta=th,
    )


# --- literal relations --------------------------------------------------------

def r2_lower_bound(p: Params, T1: float, T2: float, R1: float) -> float:
    th, d = p.theta, p.d
    return 2 * th * (R1 + (th + 2) * T1 + T2 / th + (8 * th + 9) * d) * (p.n - p.f) / (1 - lam(th))


def r2_equality_form(p: Params, T2: float, R1: float) -> float:
    """R2 with the T1 = 4*theta*d substitution already applied."""
    th, d = p.theta, p.d
    return 2 * th * (R1 + T2 / th + (4 * th**2 + 16 * th + 9) * d) * (p.n - p.f) / (1 - lam(th))


def relation_slacks(p: Params, a: TimeoutAssignment) -> dict[str, float]:
    """Left side minus right side of every relation; negative means violated."""
    th, d = p.theta, p.d
    c = derived_constants(p, a)
    T1, T2, T3, T4, T5, T6, T7 = a.T1, a.T2, a.T3, a.T4, a.T5, a.T6, a.T7
    lo = th * (a.R2 + 3 * d)
    return {
        "T1_lower": T1 - th * 4 * d,
        "T2_lower": T2 - th * max(T1 + c.Delta_g - (4 * th**2 + 16 * th + 5) * d,
                                (3 * th + 1 - 1 / th) * T1 + T5),
        "T3_lower": T3 - max((th - 1) * T2 + th * (2 * T1 + (2 * th + 4) * d),
                           (2 * th**2 + 3 * th - 1) * T1 - T2 + th * (T6 + 5 * d)),
        "T4_vs_T3": T4 - T3,
        "T5_lower": T5 - max(th * (T4 + 7 * d) - T3 + (th - 1) * T2,
                           (th**2 + th - 2) * T1 + th * (T2 + T4 + 9 * d) - T6),
        "T6_lower": T6 - th * (c.delta_s_tilde - (1 - 1 / th) * T1 + T2 + 2 * d),
        "T6_above_Delta_s": T6 - th * c.Delta_s,
        "T7_lower": T7 - (th * (T2 + T4 + T5 + c.Delta_s + c.delta_s_tilde - c.Delta_g + d) + T6 - 4 * d),
        "R1_lower": a.R1 - th * max(T7 + (4 * th + 8) * d,
                                  (2 * th + 4 - 3 / th) * T1 + 2 * T4 + T5
                                  - c.Delta_s - c.Delta_g + 17 * d),
        "R2_lower": a.R2 - r2_lower_bound(p, T1, T2, a.R1),
        "R3_lo_equal": -abs(a.R3_lo - lo),
        "R3_hi_equal": -abs(a.R3_hi - (lo + 8 * (1 - c.lam) * a.R2)),
        "lambda_margin": (c.Delta_s - c.Delta_g - c.delta_s) / c.Delta_s - c.lam
        if c.Delta_s > 0 else -math.inf,
    }


# equality relations are matched up to this absolute tolerance (grid rounding)
_R3_TOL = 1.0
_REL_TOL = 1e-12


def check(p: Params, a: TimeoutAssignment) -> list[str]:
    """Names of the violated relations; empty iff the assignment is feasible."""
    bad = []
    for name, slack in relation_slacks(p, a).items():
        if name.startswith("R3_"):
            if -slack > max(_R3_TOL * (1 if p.d >= 1 else p.d), _REL_TOL * a.R3_hi):
                bad.append(name)
        elif name == "T6_above_Delta_s":
            if not slack > 0:
                bad.append(name)
        elif name == "lambda_margin":
            if slack < -_REL_TOL:
                bad.append(name)
        elif slack < -_REL_TOL * max(1.0, a.R2):
            bad.append(name)
    return bad


# --- construction -------------------------------------------------------------

def _chain(p: Params, T1: float, x: float):
    """Tight-bound chain T2 -> (T6, T3, T4, T5) for a fixed boost x."""
    th, d, al = p.theta, p.d, p.alpha

    def t6(T2):
        return th * T2 + th * ((th + 1) * T1 + 6 * d) + x / th

    def t3_terms(T2, T6):
        return ((th - 1) * T2 + th * (2 * T1 + (2 * th + 4) * d),
                (2 * th**2 + 3 * th - 1) * T1 - T2 + th * (T6 + 5 * d))

    def t5_terms(T2, T3, T4, T6):
        return (th * (T4 + 7 * d) - T3 + (th - 1) * T2,
                (th**2 + th - 2) * T1 + th * (T2 + T4 + 9 * d) - T6)

    def t2_terms(T5):
        Dg = (th + 3) * T1
        return (th * (T1 + Dg - (4 * th**2 + 16 * th + 5) * d),
                th * ((3 * th + 1 - 1 / th) * T1 + T5))

    return t6, t3_terms, t5_terms, t2_terms, al


def _least_T2(p: Params, T1: float, x: float) -> float:
    th, d = p.theta, p.d
    lm = lam(th)
    # Delta_s >= (Delta_g + delta_s) / (1 - lambda)
    best = th * (((th + 3) * T1 + 2 * T1 + 3 * d) / (1 - lm) + 2 * T1 + d)

    # Every bound is a max of affine maps composed monotonically, so the
    # least fixed point is the max over branch choices of a/(1-b).
    # The slope does not depend on x; taking it from the x = 0 chain avoids
    # cancellation when x is huge.
    def branch(T2, b3, b5, b2, boost):
        t6, t3_terms, t5_terms, t2_terms, al = _chain(p, T1, boost)
        T6 = t6(T2)
        T3 = t3_terms(T2, T6)[b3]
        T5 = t5_terms(T2, T3, al * T3, T6)[b5]
        return t2_terms(T5)[b2]

    for b in itertools.product((0, 1), repeat=3):
        a0 = branch(0.0, *b, x)
        slope = branch(1.0, *b, 0.0) - branch(0.0, *b, 0.0)
        if slope >= 1:
            raise InfeasibleError(f"T2 fixed point diverges (slope {slope:.4f})")
        best = max(best, a0 / (1 - slope))
    return best


def _complete(p: Params, T1: float, T2: float, x: float, up) -> TimeoutAssignment:
    th, d = p.theta, p.d
    t6, t3_terms, t5_terms, _, al = _chain(p, T1, x)
    T6 = up(t6(T2))
    T3 = up(max(t3_terms(T2, T6)) + 0.0)
    T4 = up(al * T3)
    T5 = up(max(t5_terms(T2, T3, T4, T6)))
    Ds = T2 / th - 2 * T1 - d
    dst = (th + 2 - 1 / th) * T1 + 4 * d
    Dg = (th + 3) * T1
    T7 = up(th * (T2 + T4 + T5 + Ds + dst - Dg + d) + T6 - 4 * d)
    R1 = up(th * max(T7 + (4 * th + 8) * d,
                     (2 * th + 4 - 3 / th) * T1 + 2 * T4 + T5 - Ds - Dg + 17 * d))
    R2 = up(r2_lower_bound(p, T1, T2, R1))
    lo = th * (R2 + 3 * d)
    hi = lo + 8 * (1 - lam(th)) * R2
    return TimeoutAssignment(T1, T2, T3, T4, T5, T6, T7, R1, R2, lo, hi)


def solve(p: Params, *, boost_x: float = 0.0, integral: bool = True) -> TimeoutAssignment:
    """Minimal feasible assignment following the constructive procedure.

    T1 is pinned to 4*theta*d, T4 = alpha*T3, and every other timeout is set
    to its tight lower bound.  ``boost_x`` raises T6 by x/theta, which lifts
    T3 by x and lets the rate ratio approach its supremum.
    """
    p.validate()
    if boost_x < 0:
        raise InfeasibleError("boost_x must be non-negative")
    up = math.ceil if integral else (lambda v: v)
    T1 = up(4 * p.theta * p.d)
    T2 = _least_T2(p, T1, boost_x)
    if not integral:
        return _complete(p, T1, T2, boost_x, up)
    T2 = math.ceil(T2)
    for _ in range(1000):
        a = _complete(p, T1, T2, boost_x, up)
        if not check(p, a):
            return a
        T2 += 1
    raise InfeasibleError("grid rounding did not converge")  # pragma: no cover


def simplified_assignment(p: Params, *, boost_x: float = 0.0) -> TimeoutAssignment:
    """The simplified closed-form construction, evaluated literally.

    Kept for comparison only: it reaches the stated ratio supremum but in
    general fails :func:`check` (see the decisions log).
    """
    p.validate()
    th, d, al = p.theta, p.d, p.alpha
    lm = lam(th)
    T1 = 4 * th * d
    T2 = max(
        (al * (12 * th**5 + 18 * th**4 - 3 * th**3) + (4 * th**4 + 8 * th**3 + 3 * th**2)) * d
        / (1 + 2 * th - (th**3 + th**2) * al),
        25 * (1 + lm) * (4 * th**4 + 20 * th**3 + 3 * th**2) * d / 9,
    )
    T6 = (4 * th**2 + 6 * th - 4) * d + T2
    T3 = (8 * th**3 + 12 * th**2 + th) * d - T2 + th * T6
    T5 = ((al * (8 * th**4 + 12 * th**3 + th**2) + (4 * th**3 + 4 * th**2 + th)) * d
          - (th * al - 1) * T2 + (th**2 * al - 1) * T6)
    x = boost_x
    T3 += x
    T6 += x / th
    T5 += (th * al - 1 / th) * x
    T2 += th * (th * al - 1 / th) * x
    T4 = al * T3
    T7 = th * (T2 + T4 + T5) + T6 - (4 * th**2 + 4) * d
    R1 = th * T7 + (4 * th**2 + 8 * th) * d
    R2 = r2_equality_form(p, T2, R1)
    lo = th * (R2 + 3 * d)
    return TimeoutAssignment(T1, T2, T3, T4, T5, T6, T7, R1, R2, lo, lo + 8 * (1 - lm) * R2)


def achieved_ratio(p: Params, a: TimeoutAssignment) -> float:
    return (a.T2 + a.T4) / (p.theta * (a.T2 + a.T3 + 4 * p.d))


@dataclass(frozen=True)
class StabilizationBound:
    T_of_k: float
    prob_strong: float
    prob_weak: float
    prob_adaptive: float


def stabilization_bound(p: Params, a: TimeoutAssignment, k: int | None = None) -> StabilizationBound:
    k = p.k if k is None else k
    c = derived_constants(p, a)
    m = k * (p.n - p.f)
    return StabilizationBound(
        T_of_k=c.T_of_k(k),
        prob_strong=1 - 2.0 ** (-m),
        prob_weak=1 - (p.f + 1) * 2.0 ** (-m),
        prob_adaptive=1 - (p.f + 1) * math.exp(-m / 2),
    )
