"""Lavrentiev regularization: solves, bias, and the error functionals.

Notation: ``R_gamma = (A + gamma I)^{-1}``, ``e_gamma = -gamma R_gamma u`` (the
bias), ``M`` the nonnegativity constant of ``A``. The functionals are

* ``R_{delta,p}(u) = inf_gamma || (||e_gamma||, M delta / gamma) ||_p``
  for ``p in {1, 2, inf}``;
* ``P_delta(u) = sup_{||D|| <= delta} inf_gamma ||e_gamma + R_gamma D||``;
* ``Q_delta(u)``, the same with inf and sup interchanged.

``R`` is computed directly. ``P`` and ``Q`` are bracketed: the upper ends come
from the triangle inequality and the lower ends from explicit perturbations.
Every infimum over gamma is a minimum over a geometric grid followed by a
golden-section refinement between the neighbours of the grid minimizer.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    AccuracyWarning,
    InvalidParameterError,
    WindowError,
    WindowWarning,
)
from .operators import (
    NULL_TOL,
    _check_vector,
    resolvent_apply,
    resolvent_top_direction,
)

__all__ = [
    "RegularizationProblem",
    "GridMinimum",
    "ErrorFunctionals",
    "WorstCaseDirection",
    "PDeltaBracket",
    "sphere_direction",
    "make_problem",
    "lavrentiev_solve",
    "bias",
    "bias_norms",
    "working_floor",
    "is_closed_range",
    "gamma_grid",
    "grid_minimize",
    "r_delta",
    "r_delta_details",
    "r_delta_family",
    "worst_case_direction",
    "p_delta_bracket",
    "p_delta_details",
    "adversarial_directions",
    "q_delta_bracket",
    "balance_gamma",
    "error_functionals",
]

logger = logging.getLogger(__name__)

GRID_PER_DECADE = 60
BALANCE_TOL = 1e-10
DIRECTION_TOL = 1e-8


# --------------------------------------------------------------------------
# problems and basic maps
# --------------------------------------------------------------------------

def sphere_direction(n, seed):
    """Unit vector uniformly distributed on the sphere in R^n (seeded)."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(n)
    return d / np.linalg.norm(d)


@dataclass(frozen=True, eq=False)
class RegularizationProblem:
    """``A u = f`` together with noisy data ``f_noisy``, ``||f - f_noisy|| <= delta``."""

    operator: object
    u_true: np.ndarray
    f_exact: np.ndarray
    delta: float
    f_noisy: np.ndarray
    noise_seed: int

    def __post_init__(self):
        if not (self.delta >= 0) or not math.isfinite(self.delta):
            raise InvalidParameterError(f"delta must be >= 0, got {self.delta!r}")
        # forming f + delta d rounds at the scale of ||f||, not of delta
        gap = np.linalg.norm(self.f_exact - self.f_noisy)
        slack = 4 * np.finfo(float).eps * np.linalg.norm(self.f_exact)
        if gap > self.delta * (1 + 1e-12) + slack:
            raise InvalidParameterError(
                f"noisy data is {gap:.3g} away from exact data, above delta")


def make_problem(op, u, delta, noise_seed=0):
    """Build a problem with ``f_noisy = A u + delta d`` for a seeded unit ``d``."""
    u = _check_vector(op, u).astype(float, copy=True)
    f = op.entries @ u
    d = sphere_direction(op.dim, noise_seed)
    return RegularizationProblem(op, u, f, float(delta), f + delta * d, int(noise_seed))


def _gamma(gamma):
    g = float(gamma)
    if not (g > 0) or not math.isfinite(g):
        raise InvalidParameterError(f"gamma must be positive and finite, got {gamma!r}")
    return g


def lavrentiev_solve(op, gamma, f, memo=True):
    """Regularized solution ``(A + gamma I)^{-1} f``."""
    return resolvent_apply(op, _gamma(gamma), f, memo=memo)


def bias(op, gamma, u, memo=True):
    """``e_gamma = -gamma (A + gamma I)^{-1} u``."""
    g = _gamma(gamma)
    return -g * resolvent_apply(op, g, u, memo=memo)


def bias_norms(op, u, grid):
    """``||e_gamma||`` for every gamma in ``grid``."""
    u = _check_vector(op, u)
    grid = np.asarray(grid, dtype=float)
    if op.is_diagonal:
        lam = op.diagonal
        e = grid[:, None] * u[None, :] / (lam[None, :] + grid[:, None])
        return np.linalg.norm(e, axis=1)
    return np.array([np.linalg.norm(bias(op, g, u)) for g in grid])


# --------------------------------------------------------------------------
# grids and minimization
# --------------------------------------------------------------------------

def working_floor(op):
    """Smallest gamma at which the finite problem still looks ill-posed.

    Below ``10 sigma_min`` every discretization behaves like a well-posed
    problem and asymptotic rates collapse, so measurements stay above it.
    When that cutoff would leave less than a decade below ``||A||`` the
    operator is treated as well posed (closed range) and the floor drops to
    ``1e-8 ||A||``.
    """
    if is_closed_range(op):
        return 1e-8 * op.norm
    return max(10.0 * op.sigma_min, 1e-8 * op.norm)


def is_closed_range(op):
    """True when ``10 sigma_min >= 0.1 ||A||`` (no ill-posed window to speak of)."""
    return 10.0 * op.sigma_min >= 0.1 * op.norm


def gamma_grid(op, per_decade=GRID_PER_DECADE, lo=None, hi=None):
    """Geometric gamma grid, by default on ``[working_floor, 10 ||A||]``."""
    lo = working_floor(op) if lo is None else float(lo)
    hi = 10.0 * op.norm if hi is None else float(hi)
    if not 0 < lo < hi:
        raise InvalidParameterError(f"empty gamma window [{lo:g}, {hi:g}]")
    num = max(2, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, num)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidParameterError("gamma grid must be a nonempty vector")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidParameterError("gamma grid must be positive and increasing")
    return grid


@dataclass(frozen=True)
class GridMinimum:
    """Result of :func:`grid_minimize`.

    ``truncated`` is set when the grid minimizer sits on the first or last
    grid point, so the true infimum may lie outside the grid.
    """

    value: float
    gamma: float
    truncated: bool
    values: np.ndarray = field(repr=False)


def grid_minimize(fun, grid, values=None, extra=()):
    """Minimize ``fun`` over a sorted gamma grid, then refine.

    Ties go to the smallest gamma. When the minimizer is interior, a
    golden-section search on ``log gamma`` between its two neighbours refines
    it. Points in ``extra`` are also evaluated; callers use this to make
    several infima share candidate minimizers.
    """
    grid = _check_grid(grid)
    vals = np.array([fun(g) for g in grid]) if values is None else np.asarray(values)
    k = int(np.argmin(vals))
    best_g, best_v = float(grid[k]), float(vals[k])
    truncated = k == 0 or k == grid.size - 1
    if not truncated:
        a, b, c = np.log(grid[k - 1:k + 2])
        try:
            res = minimize_scalar(lambda t: fun(math.exp(t)), bracket=(a, b, c),
                                  method="golden", tol=1e-10)
        except ValueError:
            res = None
        if res is not None and res.fun < best_v and a <= res.x <= c:
            best_g, best_v = math.exp(res.x), float(res.fun)
    for g in extra:
        if g is None:
            continue
        v = float(fun(g))
        if v < best_v:
            best_g, best_v = float(g), v
    return GridMinimum(best_v, best_g, truncated, vals)


# --------------------------------------------------------------------------
# R_{delta,p}
# --------------------------------------------------------------------------

def _p_tag(p):
    if isinstance(p, str):
        p = p.strip().lower()
        if p in ("inf", "infinity", "∞"):
            return "inf"
        if p in ("1", "2"):
            return p
    elif p == math.inf:
        return "inf"
    elif p in (1, 2):
        return str(int(p))
    raise InvalidParameterError(f"p must be one of 1, 2, inf; got {p!r}")


def _combine(b, noise, tag):
    if tag == "1":
        return b + noise
    if tag == "2":
        return np.hypot(b, noise)
    return np.maximum(b, noise)


def r_delta_details(op, u, delta, p=2, grid=None, extra=()):
    """:func:`r_delta` returning a :class:`GridMinimum` (value, gamma, truncation)."""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    tag = _p_tag(p)
    u = _check_vector(op, u)
    grid = gamma_grid(op) if grid is None else _check_grid(grid)
    m = op.m_constant
    vals = _combine(bias_norms(op, u, grid), m * delta / grid, tag)

    def fun(g):
        return float(_combine(np.linalg.norm(bias(op, g, u, memo=False)),
                              m * delta / g, tag))

    return grid_minimize(fun, grid, values=vals, extra=extra)


def r_delta(op, u, delta, p=2, grid=None):
    """``inf_gamma ||(||e_gamma||, M delta/gamma)||_p`` over the gamma grid.

    For ``u = 0`` the infimum is approached as gamma grows; the value at the
    top of the grid is returned (see :func:`r_delta_details` for the
    truncation flag).
    """
    return r_delta_details(op, u, delta, p, grid).value


def r_delta_family(op, u, delta, grid=None):
    """All three ``R_{delta,p}`` with shared candidate minimizers.

    Each functional is also evaluated at the other two minimizers, which
    makes the chain ``R_inf <= R_2 <= R_1 <= 2 R_inf`` hold for the computed
    values, not just for the exact infima.
    """
    grid = gamma_grid(op) if grid is None else _check_grid(grid)
    first = {t: r_delta_details(op, u, delta, t, grid) for t in ("1", "2", "inf")}
    gammas = [first[t].gamma for t in first]
    return {t: r_delta_details(op, u, delta, t, grid, extra=gammas) for t in first}


# --------------------------------------------------------------------------
# worst-case directions and the P/Q brackets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WorstCaseDirection:
    """``v = -phi_beta`` with ``phi_beta = R_beta u / ||R_beta u||`` and ``||A phi_beta|| = epsilon``."""

    epsilon: float
    beta: float
    v: np.ndarray
    a_v_norm: float

    def as_dict(self):
        return {"epsilon": self.epsilon, "beta": self.beta,
                "a_v_norm": self.a_v_norm, "v": self.v.tolist()}


def _a_phi_norm(op, beta, u):
    x = resolvent_apply(op, beta, u, memo=False)
    phi = x / np.linalg.norm(x)
    return float(np.linalg.norm(op.entries @ phi)), phi


def direction_range(op, u):
    """Attainable values of ``||A phi_beta||`` for beta in ``[1e-12, 1e12] ||A||``."""
    nrm = op.norm
    return (_a_phi_norm(op, 1e-12 * nrm, u)[0], _a_phi_norm(op, 1e12 * nrm, u)[0])


def worst_case_direction(op, u, epsilon, warn=True):
    """Locate ``beta`` with ``||A phi_beta|| = epsilon`` by root finding on ``log beta``.

    ``epsilon`` must lie in ``(0, ||Au||/||u||)``. For a finite matrix the
    attainable values stop at a positive floor as beta goes to 0; asking for
    less raises :class:`WindowError`. With ``warn`` false the
    :class:`WindowWarning` for ``beta < 10 sigma_min`` is skipped.
    """
    u = _check_vector(op, u)
    un = np.linalg.norm(u)
    if un == 0:
        raise InvalidParameterError("u must be nonzero")
    upper = np.linalg.norm(op.entries @ u) / un
    if not 0 < epsilon < upper:
        raise InvalidParameterError(
            f"epsilon must lie in (0, ||Au||/||u||) = (0, {upper:.6g}), got {epsilon!r}")
    nrm = op.norm
    lo, hi = math.log(1e-12 * nrm), math.log(1e12 * nrm)
    trace = []

    def h(t):
        val = _a_phi_norm(op, math.exp(t), u)[0]
        trace.append((math.exp(t), val))
        return val - epsilon

    hl, hh = h(lo), h(hi)
    if not (hl < 0 < hh):
        raise WindowError(
            f"||A phi_beta|| = {epsilon:.3g} not bracketed for beta in "
            f"[1e-12, 1e12]*||A||", trace)
    t = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    beta = math.exp(t)
    a_norm, phi = _a_phi_norm(op, beta, u)
    if abs(a_norm - epsilon) > DIRECTION_TOL * epsilon:
        warnings.warn(f"worst-case direction matched epsilon only to "
                      f"{abs(a_norm - epsilon) / epsilon:.2e}", AccuracyWarning,
                      stacklevel=2)
    if warn and beta < 10 * op.sigma_min:
        warnings.warn(f"beta={beta:.3g} lies below 10*sigma_min; the direction "
                      f"reflects the discretization floor", WindowWarning,
                      stacklevel=2)
    return WorstCaseDirection(float(epsilon), beta, -phi, a_norm)


def _perturbed_error_norms(op, u, delta, v, grid):
    """``||e_gamma + delta R_gamma v||`` on the grid, i.e. ``||R_gamma (delta v - gamma u)||``.

    ``v`` may be a single direction or an ``(n, k)`` block; the result then
    has shape ``(len(grid), k)``.
    """
    single = v.ndim == 1
    vb = v[:, None] if single else v
    if op.is_diagonal:
        lam = op.diagonal
        num = delta * vb[None, :, :] - grid[:, None, None] * u[None, :, None]
        out = np.linalg.norm(num / (lam[None, :, None] + grid[:, None, None]), axis=1)
    else:
        out = np.array([np.linalg.norm(resolvent_apply(op, g, delta * vb - g * u[:, None]),
                                       axis=0) for g in grid])
    return out[:, 0] if single else out


def adversarial_directions(op, u, gammas):
    """Unit perturbation directions that are worst for a fixed gamma.

    For each ``gamma`` two directions are returned: the top right singular
    vector of ``R_gamma`` (signed to push away from ``e_gamma``), and
    ``R_gamma^T e_gamma`` normalized, which maximizes ``<e_gamma, R_gamma D>``.
    """
    out = []
    for g in gammas:
        s, x = resolvent_top_direction(op, g)
        e = bias(op, g, u)
        rx = resolvent_apply(op, g, x)
        out.append(("top-singular", g, x if float(e @ rx) >= 0 else -x))
        if op.is_diagonal:
            rte = e / (op.diagonal + g)
        else:
            rte = op.factor(g).solve(e, trans=True)
        rn = np.linalg.norm(rte)
        if rn > 0:
            out.append(("aligned", g, rte / rn))
    return out


@dataclass(frozen=True)
class PDeltaBracket:
    """``p_lower <= P_delta(u) <~ p_upper`` together with how they were found."""

    p_lower: float
    p_upper: float
    gamma_upper: float
    gamma_lower: float
    epsilons: list
    candidates: list
    window_limited: bool

    def as_dict(self):
        return {
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "gamma_upper": self.gamma_upper,
            "gamma_lower": self.gamma_lower,
            "epsilons": list(self.epsilons),
            "candidates": list(self.candidates),
            "window_limited": self.window_limited,
        }


def default_epsilons(op, u, delta, p_upper):
    """Three epsilons below ``gamma_0 / 2`` with ``gamma_0 = min(delta/(2 p_upper), 2||Au||/||u||)``."""
    un = np.linalg.norm(u)
    g0 = min(delta / (2 * p_upper), 2 * np.linalg.norm(op.entries @ u) / un)
    return [g0 / 2, g0 / 8, g0 / 32]


def p_delta_details(op, u, delta, grid=None, epsilons=None, null_tol=NULL_TOL,
                    extra=(), n_adversarial=30):
    """Bracket ``P_delta(u)``; see :func:`p_delta_bracket`."""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    u = _check_vector(op, u)
    grid = gamma_grid(op) if grid is None else _check_grid(grid)
    upper = r_delta_details(op, u, delta, 1, grid, extra=extra)
    p_upper = upper.value
    un = float(np.linalg.norm(u))
    if un == 0:
        return PDeltaBracket(0.0, p_upper, upper.gamma, math.inf, [], [], False)
    au = float(np.linalg.norm(op.entries @ u))
    if au <= null_tol * op.norm * un:
        # u in N(A): e_gamma = -u for all gamma, and D = -delta u/||u|| gives
        # ||e_gamma + R_gamma D|| = ||u|| + delta/gamma > ||u||.
        cand = [{"kind": "nullspace", "value": un}]
        return PDeltaBracket(un, max(p_upper, un), upper.gamma, math.inf, [], cand,
                             False)

    if epsilons is None:
        epsilons = default_epsilons(op, u, delta, p_upper)
    floor, ceiling = direction_range(op, u)
    usable = [e for e in epsilons if floor * (1 + 1e-9) < e < ceiling * (1 - 1e-9)]
    window_limited = False
    if not usable:
        eps = floor * 1.01
        if eps < ceiling:
            usable = [eps]
        window_limited = True
        warnings.warn(f"all epsilons fall below the attainable floor {floor:.3g}; "
                      f"using {eps:.3g}", WindowWarning, stacklevel=2)

    directions = [("source", None, -u / un)]
    for eps in usable:
        wcd = worst_case_direction(op, u, eps, warn=False)
        directions.append(("worst-case", eps, wcd.v))
    if n_adversarial:
        sub = np.geomspace(grid[0], min(grid[-1], op.norm), n_adversarial)
        directions.extend(adversarial_directions(op, u, sub))

    block = np.column_stack([v for _, _, v in directions])
    table = _perturbed_error_norms(op, u, delta, block, grid)
    best = -math.inf
    best_gamma = math.nan
    cand = []
    shared = (upper.gamma,) + tuple(extra)
    # refine the strongest candidates only; the rest cannot overtake them once
    # refinement has lowered the leaders by less than the gap
    order = np.argsort(-table.min(axis=0), kind="stable")
    for j in order:
        kind, param, v = directions[j]
        if table[:, j].min() <= best:
            break

        def fun(g, v=v):
            return float(np.linalg.norm(
                resolvent_apply(op, g, delta * v - g * u, memo=False)))

        res = grid_minimize(fun, grid, values=table[:, j], extra=shared)
        cand.append({"kind": kind, "parameter": param, "value": res.value,
                     "gamma": res.gamma})
        if res.value > best:
            best, best_gamma = res.value, res.gamma
    return PDeltaBracket(best, p_upper, upper.gamma, best_gamma, list(usable), cand,
                         window_limited)


def p_delta_bracket(op, u, delta, grid=None, epsilons=None):
    """Return ``(p_lower, p_upper)`` for ``P_delta(u)``.

    ``p_upper`` is ``R_{delta,1}(u)``. ``p_lower`` is the largest of
    ``inf_gamma ||e_gamma + delta R_gamma v||`` over these unit directions:

    * ``v = -u/||u||``;
    * ``v = v_eps`` from :func:`worst_case_direction` for the given epsilons
      (epsilons below the attainable floor of the finite problem are skipped);
    * the fixed-gamma adversarial directions of
      :func:`adversarial_directions` on a 30-point sub-grid.

    Any single admissible perturbation gives a lower bound for the supremum,
    so adding directions can only tighten ``p_lower``.
    """
    b = p_delta_details(op, u, delta, grid, epsilons)
    return b.p_lower, b.p_upper


def _q_inner(op, u, delta, g):
    """Lower and upper bounds for ``sup_{||D||<=delta} ||e_gamma + R_gamma D||``."""
    s, x = resolvent_top_direction(op, g)
    e = bias(op, g, u)
    rx = resolvent_apply(op, g, x)
    en = float(np.linalg.norm(e))
    if en == 0:
        return delta * s, delta * s
    sign = 1.0 if float(e @ rx) >= 0 else -1.0
    low = np.linalg.norm(e + sign * delta * rx)
    # D along R^T e maximizes <e, R D>
    rte = _transpose_solve(op, g, e)
    rte_n = np.linalg.norm(rte)
    if rte_n > 0:
        low = max(low, np.linalg.norm(e + delta * resolvent_apply(op, g, rte / rte_n)))
    return float(low), en + delta * s


def _transpose_solve(op, g, v):
    return op.factor(g).solve(v, trans=True)


def _q_inner_diagonal(op, u, delta, grid):
    lam = op.diagonal
    d = lam[None, :] + grid[:, None]
    e = -grid[:, None] * u[None, :] / d
    en = np.linalg.norm(e, axis=1)
    k = np.argmin(np.abs(d), axis=1)
    rows = np.arange(grid.size)
    s = 1.0 / np.abs(d[rows, k])
    # top direction e_k: shift component k of e by delta/(lam_k + gamma) outward
    ek = e[rows, k]
    low1 = np.sqrt(np.maximum(en ** 2 - ek ** 2, 0) + (np.abs(ek) + delta * s) ** 2)
    rte = e / d
    rn = np.linalg.norm(rte, axis=1)
    safe = np.where(rn > 0, rn, 1.0)
    low2 = np.linalg.norm(e + delta * (rte / safe[:, None]) / d, axis=1)
    low = np.where(en > 0, np.maximum(low1, low2), delta * s)
    return low, en + delta * s


def q_delta_bracket(op, u, delta, grid=None, extra=()):
    """Return ``(q_lower, q_upper)`` for ``Q_delta(u)``.

    At each gamma the inner supremum is bounded below by two explicit
    perturbations (along the top right singular vector of ``R_gamma``, and
    along ``R_gamma^T e_gamma``) and above by ``||e_gamma|| + delta ||R_gamma||``.
    Both are then minimized over gamma.
    """
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    u = _check_vector(op, u)
    grid = gamma_grid(op) if grid is None else _check_grid(grid)
    if op.is_diagonal:
        low, up = _q_inner_diagonal(op, u, delta, grid)
    else:
        pairs = [_q_inner(op, u, delta, g) for g in grid]
        low = np.array([a for a, _ in pairs])
        up = np.array([b for _, b in pairs])

    def f_low(g):
        if op.is_diagonal:
            return float(_q_inner_diagonal(op, u, delta, np.array([g]))[0][0])
        return _q_inner(op, u, delta, g)[0]

    def f_up(g):
        if op.is_diagonal:
            return float(_q_inner_diagonal(op, u, delta, np.array([g]))[1][0])
        return _q_inner(op, u, delta, g)[1]

    qu = grid_minimize(f_up, grid, values=up, extra=extra)
    ql = grid_minimize(f_low, grid, values=low, extra=tuple(extra) + (qu.gamma,))
    return ql.value, qu.value


# --------------------------------------------------------------------------
# balance rule
# --------------------------------------------------------------------------

def balance_gamma(op, u, delta):
    """Solve ``gamma^2 ||(A + gamma I)^{-1} u|| = delta`` for gamma.

    The left side is continuous and strictly increasing from 0 to infinity
    for accretive ``A`` and ``u != 0``, so the root is unique. It is found on
    ``log gamma`` within ``[1e-14, 1e14]``.
    """
    u = _check_vector(op, u)
    if np.linalg.norm(u) == 0:
        raise InvalidParameterError("u must be nonzero")
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    trace = []

    def f(g):
        if op.is_diagonal:
            val = g * g * np.linalg.norm(u / (op.diagonal + g))
        else:
            val = g * g * np.linalg.norm(resolvent_apply(op, g, u, memo=False))
        trace.append((g, float(val)))
        return val

    def h(t):
        return f(math.exp(t)) / delta - 1.0

    lo, hi = math.log(1e-14), math.log(1e14)
    if not (h(lo) < 0 < h(hi)):
        raise WindowError(f"balance equation has no root in [1e-14, 1e14] "
                          f"for delta={delta:g}", trace)
    t = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    g = math.exp(t)
    if abs(f(g) - delta) > BALANCE_TOL * delta:
        warnings.warn(f"balance equation solved only to "
                      f"{abs(f(g) - delta) / delta:.2e}", AccuracyWarning, stacklevel=2)
    return g


# --------------------------------------------------------------------------
# everything at once
# --------------------------------------------------------------------------

@dataclass
class ErrorFunctionals:
    """All functionals for one ``(A, u, delta)`` on one gamma grid."""

    delta: float
    gamma_grid: np.ndarray
    bias_norms: np.ndarray
    r1: float
    r2: float
    r_inf: float
    p_lower: float
    p_upper: float
    q_lower: float
    q_upper: float
    minimizers: dict = field(default_factory=dict)
    truncated: dict = field(default_factory=dict)
    p_details: dict = field(default_factory=dict)

    def chain_defect(self):
        """Largest violation of ``r_inf <= r2 <= r1 <= 2 r_inf`` (0 if none)."""
        return max(0.0, self.r_inf - self.r2, self.r2 - self.r1,
                   self.r1 - 2 * self.r_inf)

    def as_dict(self):
        return {
            "delta": self.delta,
            "gamma_grid": self.gamma_grid.tolist(),
            "bias_norms": self.bias_norms.tolist(),
            "r1": self.r1,
            "r2": self.r2,
            "r_inf": self.r_inf,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "q_lower": self.q_lower,
            "q_upper": self.q_upper,
            "minimizers": dict(self.minimizers),
            "truncated": dict(self.truncated),
            "p_details": dict(self.p_details),
        }


def error_functionals(op, u, delta, grid=None, epsilons=None):
    """Compute ``R_{delta,p}`` for all p and the ``P``/``Q`` brackets."""
    u = _check_vector(op, u)
    grid = gamma_grid(op) if grid is None else _check_grid(grid)
    fam = r_delta_family(op, u, delta, grid)
    shared = tuple(fam[t].gamma for t in fam)
    pb = p_delta_details(op, u, delta, grid, epsilons, extra=shared)
    # P's upper end is R_1; keep the value computed with shared minimizers
    p_upper = min(pb.p_upper, fam["1"].value)
    ql, qu = q_delta_bracket(op, u, delta, grid, extra=shared)
    return ErrorFunctionals(
        delta=float(delta),
        gamma_grid=grid,
        bias_norms=bias_norms(op, u, grid),
        r1=fam["1"].value,
        r2=fam["2"].value,
        r_inf=fam["inf"].value,
        p_lower=pb.p_lower,
        p_upper=p_upper,
        q_lower=ql,
        q_upper=qu,
        minimizers={"r1": fam["1"].gamma, "r2": fam["2"].gamma,
                    "r_inf": fam["inf"].gamma, "p_lower": pb.gamma_lower},
        truncated={t: fam[t].truncated for t in ("1", "2", "inf")},
        p_details=pb.as_dict(),
    )
