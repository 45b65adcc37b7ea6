"""Convergence-rate experiments: fits, saturation floors and converse probes.

All measurements are restricted to a gamma window well above the
discretization floor ``10 sigma_min``: below it a finite matrix behaves like
a well-posed problem and every rate degenerates to ``O(gamma)``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    balance_gamma,
    bias,
    bias_norms,
    gamma_grid,
    grid_minimize,
    is_closed_range,
    make_problem,
    sphere_direction,
    working_floor,
)
from .errors import InvalidParameterError, WindowError
from .fractional import frac_power_matrix, neg_frac_power_apply
from .operators import NULL_TOL, _check_vector, resolvent_apply, resolvent_norm
from .rules import apriori_outcome, balance_outcome, md_rule

__all__ = [
    "RateFit",
    "SourceConditionWitness",
    "fit_rate",
    "scale_free_weights",
    "make_witness",
    "exact_window",
    "window_grid",
    "exact_data_rate",
    "saturation_probe",
    "converse_probe",
    "noisy_rate",
    "noisy_saturation_probe",
    "NOISY_RULES",
]

logger = logging.getLogger(__name__)

POINTS_PER_DECADE = 10
ROUNDTRIP_TOL = 1e-3
NOISY_RULES = ("balance", "md", "apriori", "functional")


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through ``(log x, log y)``."""

    xs: np.ndarray
    ys: np.ndarray
    slope: float
    intercept: float
    max_residual: float

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "max_residual": self.max_residual, "xs": self.xs.tolist(),
                "ys": self.ys.tolist()}


def fit_rate(xs, ys):
    """Fit ``y ~ exp(intercept) x^slope`` by least squares in log-log coordinates.

    Raises
    ------
    InvalidParameterError
        Fewer than 4 points, mismatched lengths, non-monotone ``xs`` or
        nonpositive values.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidParameterError("xs and ys must be vectors of equal length")
    if xs.size < 4:
        raise InvalidParameterError(f"need at least 4 points, got {xs.size}")
    if np.any(xs <= 0) or np.any(ys <= 0) or not np.all(np.isfinite(ys)):
        raise InvalidParameterError("xs and ys must be positive and finite")
    dx = np.diff(xs)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise InvalidParameterError("xs must be strictly monotone")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return RateFit(xs, ys, float(slope), float(intercept), float(np.abs(resid).max()))


# --------------------------------------------------------------------------
# source elements
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceConditionWitness:
    """``u = A^p w`` with the generating element ``w``."""

    p: float
    w: np.ndarray
    u: np.ndarray
    kind: str = "sphere"

    def as_dict(self):
        return {"p": self.p, "kind": self.kind, "w_norm": float(np.linalg.norm(self.w)),
                "u_norm": float(np.linalg.norm(self.u))}


def scale_free_weights(lam, q):
    """Squared weights that make ``sum_i w_i^2 g(lambda_i)`` mimic ``int g(l) dl/l``.

    Each eigenvalue gets the width of its cell on the log axis (cells split
    at geometric midpoints). The two edge cells also absorb the integral
    beyond the finite spectrum for an integrand behaving like ``l^(2q)``
    near 0 and ``l^(2q-2)`` near infinity, which is what the bias of
    ``u = A^q w`` looks like on either side of gamma. With these weights the
    bias follows ``gamma^q`` across the whole spectrum instead of bending near
    its ends. Requires ``0 < q < 1`` and positive ``lam``.
    """
    lam = np.asarray(lam, dtype=float)
    if not 0 < q < 1:
        raise InvalidParameterError("q must lie in (0, 1)")
    if np.any(lam <= 0):
        raise InvalidParameterError("eigenvalues must be positive")
    order = np.argsort(-lam, kind="stable")
    ls = lam[order]
    n = ls.size
    if n == 1:
        m = np.ones(1)
    else:
        log_l = np.log(ls)
        mids = (log_l[:-1] + log_l[1:]) / 2
        m = np.empty(n)
        m[1:-1] = mids[:-1] - mids[1:]
        a = math.exp(mids[0])
        b = math.exp(mids[-1])
        m[0] = (a ** (2 * q - 2) / (2 - 2 * q)) / ls[0] ** (2 * q - 2)
        m[-1] = (b ** (2 * q) / (2 * q)) / ls[-1] ** (2 * q)
    out = np.empty(n)
    out[order] = m
    return out


def make_witness(op, p, seed=0, kind="auto", scale=1.0):
    """Build ``u = A^p w`` with ``||w|| = scale``.

    ``kind="sphere"`` draws ``w`` uniformly from the sphere. That is the
    natural choice for generic operators, but on a polynomially decaying
    spectrum a random ``w`` puts equal mass on every eigenvalue, which acts
    like half an order less smoothness over any finite window. For diagonal
    operators ``kind="scale-free"`` (the ``"auto"`` default) instead spreads
    ``w`` evenly on the log-spectral axis via :func:`scale_free_weights`, with
    random signs from ``seed``, so that the bias shows the nominal order
    ``gamma^min(p,1)``. For ``p >= 1`` the weights for ``q = 1/2`` times
    ``lambda^(1/2)`` are used.
    """
    if not p > 0:
        raise InvalidParameterError(f"p must be positive, got {p!r}")
    if kind == "auto":
        kind = "scale-free" if op.is_diagonal else "sphere"
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        w = sphere_direction(op.dim, seed)
    elif kind == "scale-free":
        if not op.is_diagonal:
            raise InvalidParameterError("scale-free witnesses need a diagonal operator")
        lam = op.diagonal
        pos = lam > NULL_TOL * op.norm
        w = np.zeros(op.dim)
        if p < 1:
            m = scale_free_weights(lam[pos], p)
        else:
            m = scale_free_weights(lam[pos], 0.5) * lam[pos]
        signs = np.where(rng.random(int(pos.sum())) < 0.5, -1.0, 1.0)
        w[pos] = signs * np.sqrt(m)
        w /= np.linalg.norm(w)
    else:
        raise InvalidParameterError(f"unknown witness kind {kind!r}")
    w = scale * w
    ap = frac_power_matrix(op, p, warn=False)
    return SourceConditionWitness(float(p), w, ap.entries @ w, kind)


# --------------------------------------------------------------------------
# windows
# --------------------------------------------------------------------------

def exact_window(op, p=None):
    """Gamma window for rate fits.

    ``[max(1e-5 ||A||, 10 sigma_min), 0.1 ||A||]`` in general. For expected
    exponents ``p >= 1`` (the saturated rate) the lower cutoff is dropped to
    ``1e-5 ||A||``: the cutoff guards against rates degenerating to
    ``O(gamma)``, which is the expected rate there anyway. Well-posed
    operators use ``[1e-5 ||A||, 0.1 sigma_min]``.
    """
    nrm = op.norm
    if is_closed_range(op):
        return 1e-5 * nrm, 0.1 * op.sigma_min
    if p is not None and p >= 1:
        return 1e-5 * nrm, 0.1 * nrm
    lo = max(1e-5 * nrm, working_floor(op))
    hi = 0.1 * nrm
    if lo >= hi:
        raise WindowError(f"no ill-posed window: floor {lo:.3g} >= {hi:.3g}")
    return lo, hi


def window_grid(window, per_decade=POINTS_PER_DECADE, min_points=8):
    lo, hi = window
    num = max(min_points, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, num)


# --------------------------------------------------------------------------
# exact data
# --------------------------------------------------------------------------

def exact_data_rate(op, witness, grid=None):
    """Fit ``||e_gamma||`` against gamma; the expected slope is ``min(p, 1)``."""
    grid = window_grid(exact_window(op, witness.p)) if grid is None else np.asarray(grid)
    return fit_rate(grid, bias_norms(op, witness.u, grid))


@dataclass
class SaturationReport:
    """``min ||e_gamma||/gamma`` over a window and the trend of the ratio."""

    floor: float
    gamma_at_floor: float
    window_limited: bool
    trend: RateFit
    ratios: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"floor": self.floor, "gamma_at_floor": self.gamma_at_floor,
                "window_limited": self.window_limited, "trend": self.trend.as_dict()}


def _nonzero(u):
    if np.linalg.norm(u) == 0:
        raise InvalidParameterError("u must be nonzero")


def saturation_probe(op, u, grid=None):
    """Exact-data saturation: ``floor = min_gamma ||e_gamma|| / gamma`` on the window.

    A positive floor means the bias is not ``o(gamma)``. ``window_limited``
    flags a minimum on the window edge.
    """
    u = _check_vector(op, u)
    _nonzero(u)
    grid = window_grid(exact_window(op, 1.0)) if grid is None else np.asarray(grid)
    ratios = bias_norms(op, u, grid) / grid
    k = int(np.argmin(ratios))
    return SaturationReport(float(ratios[k]), float(grid[k]),
                            k in (0, grid.size - 1), fit_rate(grid, ratios), ratios)


def converse_probe(op, u, q=None, grid=None, quad=None):
    """Recover smoothness from the observed exact-data rate.

    Reports the measured slope ``p_hat``; for a 5-point q grid ending at
    ``0.9 p_hat`` (plus ``q`` if given) whether ``A^{-q} u`` exists
    numerically (bounded integrand and a round trip within 1e-3); and the
    trace of ``||(A + gamma I)^{-1} u||``, bounded when ``u`` is in ``R(A)``.
    """
    u = _check_vector(op, u)
    _nonzero(u)
    un = float(np.linalg.norm(u))
    grid = window_grid(exact_window(op)) if grid is None else np.asarray(grid)
    norms = bias_norms(op, u, grid)
    fit = fit_rate(grid, norms)
    p_hat = fit.slope
    qs = []
    if p_hat > 0.05:
        top = min(0.9 * p_hat, 0.95)
        qs = list(np.linspace(top / 5, top, 5))
    if q is not None:
        if not 0 < q < 1:
            raise InvalidParameterError(f"q must lie in (0, 1), got {q!r}")
        qs.append(float(q))
    rows = []
    for qq in qs:
        w, diag = neg_frac_power_apply(op, qq, u, quad)
        aq = frac_power_matrix(op, qq, quad, warn=False)
        err = float(np.linalg.norm(aq.entries @ w - u) / un)
        member = (not diag.source_condition_violated) and err <= ROUNDTRIP_TOL
        rows.append({"q": float(qq), "roundtrip_error": err, "member": bool(member),
                     "growth_exponent": diag.growth_exponent,
                     "source_condition_violated": diag.source_condition_violated})
    res = np.array([np.linalg.norm(resolvent_apply(op, g, u)) for g in grid])
    report = {"slope": p_hat, "fit": fit.as_dict(), "q_checks": rows,
              "resolvent_trace": res.tolist(),
              "resolvent_ratio": float(res.max() / res.min()),
              "resolvent_bounded": bool(res.max() / res.min() <= 10)}
    return report


# --------------------------------------------------------------------------
# noisy data
# --------------------------------------------------------------------------

def in_delta_window(op, u, deltas, window):
    """Mask of deltas whose balance parameter lies inside the gamma window."""
    lo, hi = window
    out = []
    for d in deltas:
        try:
            g = balance_gamma(op, u, d)
        except WindowError:
            out.append(False)
            continue
        out.append(bool(lo <= g <= hi))
    return np.array(out, dtype=bool)


class _FunctionalBound:
    """Upper bound for ``P_delta``: ``R_{delta,1}``, or for well-posed operators
    ``min(R_{delta,1}, q_upper)``.

    ``R_{delta,1}`` charges the noise ``M delta / gamma``, which is sharp only
    when the range is not closed; with a closed range ``q_upper`` (which uses
    the actual resolvent norm) exposes the ``O(delta)`` behaviour. Bias and
    resolvent norms on the grid do not depend on delta and are computed once.
    """

    def __init__(self, op, u, grid):
        self.op, self.u, self.grid = op, u, grid
        self.closed = is_closed_range(op)
        self.bias_n = bias_norms(op, u, grid)
        self.res_n = (np.array([resolvent_norm(op, g) for g in grid])
                      if self.closed else None)

    def _bias(self, g):
        return float(np.linalg.norm(bias(self.op, g, self.u, memo=False)))

    def __call__(self, d):
        op, grid = self.op, self.grid
        m = op.m_constant
        r1 = grid_minimize(lambda g: self._bias(g) + m * d / g, grid,
                           values=self.bias_n + m * d / grid).value
        if not self.closed:
            return r1
        qu = grid_minimize(
            lambda g: self._bias(g) + d * resolvent_norm(op, g, memo=False), grid,
            values=self.bias_n + d * self.res_n).value
        return min(r1, qu)


def noisy_rate(op, witness, delta_grid, rule="balance", b0=1.5, b1=2.0, c=None,
               noise_seed=0, window=None):
    """Fit the error under noise against delta; expected slope ``p/(p+1)``.

    ``rule`` selects how gamma is chosen: ``"balance"``, ``"md"``,
    ``"apriori"`` (``gamma = c delta^(1/(p+1))``) use seeded noisy data and
    record the realized error ``||u_gamma^delta - u||``; ``"functional"``
    records an upper bound for ``P_delta`` instead. Only deltas whose balance
    parameter falls inside the rate window are used. The a-priori constant
    ``c`` defaults to ``||w||^(-1/(p+1))``, which keeps gamma where the
    balance rule puts it whatever the scale of the witness.

    Returns ``(fit, rows)`` where ``rows`` lists every delta with its gamma,
    error and whether it was inside the window. ``fit`` is ``None`` with
    fewer than 4 usable deltas.
    """
    if rule not in NOISY_RULES:
        raise InvalidParameterError(f"unknown rule {rule!r}; expected one of {NOISY_RULES}")
    deltas = np.sort(np.asarray(delta_grid, dtype=float))[::-1]
    u = witness.u
    window = exact_window(op, witness.p) if window is None else window
    mask = in_delta_window(op, u, deltas, window)
    fgrid = gamma_grid(op, lo=min(window[0], working_floor(op)))
    functional = _FunctionalBound(op, u, fgrid) if rule == "functional" else None
    rows = []
    for d, ok in zip(deltas, mask):
        prob = make_problem(op, u, d, noise_seed)
        if rule == "functional":
            err = functional(d)
            g = None
        else:
            if rule == "balance":
                out = balance_outcome(op, u, prob.f_noisy, d)
            elif rule == "md":
                out = md_rule(op, prob.f_noisy, d, b0, b1)
            else:
                pp = min(witness.p, 1.0)
                cc = c if c is not None else float(np.linalg.norm(witness.w)) ** (-1 / (pp + 1))
                out = apriori_outcome(op, prob.f_noisy, d, pp, cc)
            err = float(np.linalg.norm(out.solution - u))
            g = None if out.is_infinite else float(out.gamma)
        rows.append({"delta": float(d), "gamma": g, "error": float(err),
                     "in_window": bool(ok)})
    xs = [r["delta"] for r in rows if r["in_window"]]
    ys = [r["error"] for r in rows if r["in_window"]]
    fit = fit_rate(xs, ys) if len(xs) >= 4 else None
    return fit, rows


@dataclass
class NoisySaturationReport:
    """Balance-rule chain: ``delta(gamma) = gamma^2 ||R_gamma u||`` and ``||u_gamma - u|| = delta/gamma``."""

    deltas: np.ndarray
    errors: np.ndarray
    floor: float
    trend: RateFit
    nullspace_dominated: bool

    def as_dict(self):
        return {"deltas": self.deltas.tolist(), "errors": self.errors.tolist(),
                "floor": self.floor, "trend": self.trend.as_dict(),
                "nullspace_dominated": self.nullspace_dominated}


def noisy_saturation_probe(op, u, grid=None, p_hint=None):
    """Noisy-data saturation along the balance chain.

    For each gamma on the window, ``delta = gamma^2 ||R_gamma u||`` and
    ``||u_gamma - u|| = delta / gamma`` is a lower bound for ``P_delta(u)``.
    Reports the fit of that error against delta and
    ``floor = min error / delta^(1/2)``.
    """
    u = _check_vector(op, u)
    _nonzero(u)
    grid = window_grid(exact_window(op, p_hint)) if grid is None else np.asarray(grid)
    deltas = np.array([g * g * np.linalg.norm(resolvent_apply(op, g, u)) for g in grid])
    errs = deltas / grid
    fit = fit_rate(deltas, errs)
    floor = float(np.min(errs / np.sqrt(deltas)))
    return NoisySaturationReport(deltas, errs, floor, fit, bool(fit.slope < 0.05))
