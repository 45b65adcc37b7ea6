"""Parameter choice rules: modified discrepancy (MD), a-priori and balance."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import balance_gamma, lavrentiev_solve
from .errors import InvalidParameterError, UndefinedRatioError, WindowError
from .operators import _check_vector, resolvent_apply

__all__ = [
    "INFINITY",
    "ParameterChoiceOutcome",
    "md_discrepancy",
    "md_rule",
    "apriori_rule",
    "apriori_outcome",
    "balance_outcome",
    "quasi_optimality_ratio",
]

logger = logging.getLogger(__name__)

MD_B0 = 1.5
MD_B1 = 2.0
BAND_TOL = 1e-10


class _Infinity:
    """The parameter value ``gamma = infinity`` (solution 0).

    Kept as a tag so it can never leak into arithmetic.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"

    def __reduce__(self):
        return (_Infinity, ())


INFINITY = _Infinity()


@dataclass
class ParameterChoiceOutcome:
    """A chosen gamma, the regularized solution and rule diagnostics."""

    gamma: object
    solution: np.ndarray
    rule: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma is INFINITY:
            if np.any(self.solution != 0):
                raise InvalidParameterError("gamma = INFINITY requires the zero solution")
        elif not (isinstance(self.gamma, (int, float)) and self.gamma > 0
                  and math.isfinite(self.gamma)):
            raise InvalidParameterError(f"gamma must be positive or INFINITY, got "
                                        f"{self.gamma!r}")

    @property
    def is_infinite(self):
        return self.gamma is INFINITY

    def as_dict(self):
        return {
            "rule": self.rule,
            "gamma": "INFINITY" if self.is_infinite else float(self.gamma),
            "diagnostics": dict(self.diagnostics),
        }


def md_discrepancy(op, gamma, f_noisy, memo=False):
    """``d(gamma) = ||gamma (A + gamma I)^{-1} (A u_gamma - f)|| = ||gamma^2 R_gamma^2 f||``."""
    r = resolvent_apply(op, gamma, f_noisy, memo=memo)
    return float(np.linalg.norm(gamma * gamma * resolvent_apply(op, gamma, r, memo=memo)))


def md_rule(op, f_noisy, delta, b0=MD_B0, b1=MD_B1, max_steps=400):
    """Modified discrepancy principle.

    Returns ``INFINITY`` (zero solution) when ``||f|| <= b1 delta``. Otherwise
    a gamma with ``b0 delta <= d(gamma) <= b1 delta`` (to ``BAND_TOL``
    relative, which makes ``b1 = b0`` usable): a geometric scan (factor 2)
    starting from ``||A||`` brackets the band, and bisection on ``log gamma``
    lands inside it. Only continuity of ``d`` is used.

    Raises
    ------
    InvalidParameterError
        Unless ``b1 >= b0 > M`` and ``delta > 0``.
    WindowError
        If the band is not reached for gamma in ``[1e-14, 1e14] ||A||``; the
        evaluated ``(gamma, d)`` pairs are attached as ``trace``.
    """
    m = op.m_constant
    if not b0 > m:
        raise InvalidParameterError(f"b0 must exceed M={m:g}, got b0={b0!r}")
    if not b1 >= b0:
        raise InvalidParameterError(f"b1 must be >= b0, got b0={b0!r}, b1={b1!r}")
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    f = _check_vector(op, f_noisy)
    lo_band, hi_band = b0 * delta * (1 - BAND_TOL), b1 * delta * (1 + BAND_TOL)
    fn = float(np.linalg.norm(f))
    base = {"band_lower": b0 * delta, "band_upper": b1 * delta, "data_norm": fn}
    if fn <= b1 * delta:
        return ParameterChoiceOutcome(INFINITY, np.zeros(op.dim), "md",
                                      {**base, "discrepancy": fn, "iterations": 0})

    scale = op.norm if op.norm > 0 else 1.0
    g_min, g_max = 1e-14 * scale, 1e14 * scale
    trace = []

    def d(g):
        val = md_discrepancy(op, g, f)
        trace.append((g, val))
        return val

    def done(g, val):
        sol = lavrentiev_solve(op, g, f)
        return ParameterChoiceOutcome(g, sol, "md", {**base, "discrepancy": val,
                                                     "iterations": len(trace)})

    g = scale
    val = d(g)
    if lo_band <= val <= hi_band:
        return done(g, val)
    if val > hi_band:
        hi = g
        while val > hi_band:
            g /= 2
            if g < g_min or len(trace) > max_steps:
                raise WindowError("MD band not reached scanning gamma downwards", trace)
            val = d(g)
            if lo_band <= val <= hi_band:
                return done(g, val)
            if val > hi_band:
                hi = g
        lo = g
    else:
        lo = g
        while val < lo_band:
            g *= 2
            if g > g_max or len(trace) > max_steps:
                raise WindowError("MD band not reached scanning gamma upwards", trace)
            val = d(g)
            if lo_band <= val <= hi_band:
                return done(g, val)
            if val < lo_band:
                lo = g
        hi = g
    # d(lo) < b0 delta and d(hi) > b1 delta
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_steps):
        mid = math.exp((a + b) / 2)
        val = d(mid)
        if lo_band <= val <= hi_band:
            return done(mid, val)
        if val < lo_band:
            a = math.log(mid)
        else:
            b = math.log(mid)
        if b - a < 1e-15 * max(1.0, abs(a)):
            break
    raise WindowError("MD bisection did not enter the band", trace)


def apriori_rule(delta, p, c=1.0):
    """``gamma = c delta^(1/(p+1))`` for a solution in ``R(A^p)``, ``0 < p <= 1``."""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    if not 0 < p <= 1:
        raise InvalidParameterError(f"p must lie in (0, 1], got {p!r}")
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c!r}")
    return c * delta ** (1.0 / (p + 1.0))


def apriori_outcome(op, f_noisy, delta, p, c=1.0):
    g = apriori_rule(delta, p, c)
    return ParameterChoiceOutcome(g, lavrentiev_solve(op, g, f_noisy), "apriori",
                                  {"p": p, "c": c})


def balance_outcome(op, u, f_noisy, delta):
    """The balance choice ``gamma^2 ||R_gamma u|| = delta``, applied to ``f_noisy``.

    This rule needs the exact solution, so it is a benchmark rather than a
    practical method.
    """
    g = balance_gamma(op, u, delta)
    return ParameterChoiceOutcome(g, lavrentiev_solve(op, g, f_noisy), "balance",
                                  {"bias_norm": delta / g})


def quasi_optimality_ratio(op, problem, outcome, functionals):
    """``(weak, strong)`` ratios of the realized error to ``R_{delta,1}`` and ``p_lower``.

    Since ``p_lower <= P_delta`` the strong ratio overestimates the true one.
    """
    err = float(np.linalg.norm(outcome.solution - problem.u_true))
    r1 = functionals.r1
    pl = functionals.p_lower
    if r1 <= 0 or pl <= 0:
        raise UndefinedRatioError(
            f"vanishing denominator (r1={r1:g}, p_lower={pl:g})")
    return err / r1, err / pl
