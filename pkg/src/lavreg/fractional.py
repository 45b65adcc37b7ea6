"""Fractional powers ``A^p`` and ``A^{-q} u`` from the Balakrishnan/Kato integrals.

For ``0 < q < 1``::

    A^q      = sin(pi q)/pi * int_0^inf s^(q-1) (A + sI)^{-1} A ds
    A^{-q} u = sin(pi q)/pi * int_0^inf s^(-q) (A + sI)^{-1} u ds

Both integrals are taken on the log axis ``s = e^t`` with tanh-sinh nodes on
``[log s_min, log s_max]``. The pieces outside that interval are added in
closed form (leading terms of the small-s and large-s expansions of the
resolvent). The fine rule reuses every coarse node, so the "double the node
count and compare" error estimate costs one extra pass over the new nodes.

Tanh-sinh converges roughly quadratically in the number of correct digits
per halving of the step, so once the coarse and fine results differ by a
relative ``d`` the fine result is accurate to about ``d**2``. That squared
difference is what gets compared against ``frac_tol``; the raw difference is
kept alongside it.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import AccuracyWarning, InvalidParameterError
from .operators import DenseOperator, _check_vector

__all__ = [
    "FRAC_TOL",
    "QuadratureSpec",
    "NegPowerDiagnostics",
    "tanh_sinh_nodes",
    "frac_power_matrix",
    "frac_power_apply",
    "neg_frac_power_apply",
    "probe_window",
]

logger = logging.getLogger(__name__)

FRAC_TOL = 1e-8
RULE = "tanh-sinh-on-log-axis"


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the improper integral.

    ``s_min``/``s_max`` left as ``None`` are auto-configured per operator:
    ``s_min = 1e-10 ||A||`` (lowered further if the smallest positive singular
    value is within a factor 1e3) and ``s_max = 1e8 ||A||``.
    """

    node_count: int = 200
    s_min: float | None = None
    s_max: float | None = None
    rule: str = RULE
    u_max: float = 3.0

    def __post_init__(self):
        if self.node_count < 5:
            raise InvalidParameterError("node_count must be at least 5")
        if self.rule != RULE:
            raise InvalidParameterError(f"unsupported quadrature rule {self.rule!r}")
        if self.s_min is not None and self.s_max is not None:
            if not 0 < self.s_min < self.s_max:
                raise InvalidParameterError("need 0 < s_min < s_max")

    def resolve(self, op):
        """Concrete ``(s_min, s_max)`` for operator ``op``."""
        nrm = op.norm if op.norm > 0 else 1.0
        s_min = self.s_min
        if s_min is None:
            s_min = 1e-10 * nrm
            sig = op.sigma_min_positive
            if sig > 0:
                s_min = min(s_min, 1e-5 * sig)
        s_max = 1e8 * nrm if self.s_max is None else self.s_max
        return s_min, s_max


def tanh_sinh_nodes(node_count, a, b, u_max=3.0):
    """Nodes and weights of the tanh-sinh rule on ``[a, b]``.

    Returns ``(t, w_fine, w_coarse)``: ``2K+1`` fine nodes with their weights,
    and weights of the nested coarse rule (zero on the odd fine nodes), where
    the coarse rule has ``node_count`` nodes.
    """
    k = (node_count - 1) // 2
    h = u_max / k
    j = np.arange(-2 * k, 2 * k + 1)
    u = j * (h / 2)
    sh = (np.pi / 2) * np.sinh(u)
    x = np.tanh(sh)
    dens = (np.pi / 2) * np.cosh(u) / np.cosh(sh) ** 2
    half = (b - a) / 2
    t = (a + b) / 2 + half * x
    w_fine = half * dens * (h / 2)
    w_coarse = np.where(j % 2 == 0, half * dens * h, 0.0)
    return t, w_fine, w_coarse


def _power_integral(op, q, quad):
    """Kato integral for ``A^q`` with ``0 < q < 1``; returns (matrix, rel_err)."""
    a = np.asarray(op.entries)
    n = op.dim
    s_min, s_max = quad.resolve(op)
    t, wf, wc = tanh_sinh_nodes(quad.node_count, math.log(s_min), math.log(s_max),
                                quad.u_max)
    s = np.exp(t)
    if op.is_diagonal:
        lam = op.diagonal
        g = (s[:, None] ** q) * lam[None, :] / (lam[None, :] + s[:, None])
        fine = wf @ g
        coarse = wc @ g
        r = 1.0 / (lam + s_min)
        tails = ((s_min ** q / q) * lam * r
                 + s_min ** (q + 1) / (q * (q + 1)) * lam * r * r
                 + lam * s_max ** (q - 1) / (1 - q)
                 - lam ** 2 * s_max ** (q - 2) / (2 - q))
        scale = math.sin(math.pi * q) / math.pi
        fine = scale * (fine + tails)
        coarse = scale * (coarse + tails)
        diff = np.linalg.norm(fine - coarse) / max(np.linalg.norm(fine), 1e-300)
        return np.diag(fine), float(diff)
    eye = np.eye(n)
    fine = np.zeros((n, n))
    coarse = np.zeros((n, n))
    lower = op.structure == "lower"
    for sk, wfk, wck in zip(s, wf, wc):
        if lower:
            m = la.solve_triangular(a + sk * eye, a, lower=True, check_finite=False)
        else:
            m = la.solve(a + sk * eye, a, check_finite=False)
        m *= sk ** q
        fine += wfk * m
        if wck:
            coarse += wck * m
    # first-order expansion of (A + sI)^{-1} A about s_min below the window
    lu = la.lu_factor(a + s_min * eye, check_finite=False)
    ra = la.lu_solve(lu, a, check_finite=False)
    low = ra * (s_min ** q / q) + la.lu_solve(lu, ra) * (s_min ** (q + 1) / (q * (q + 1)))
    high = a * (s_max ** (q - 1) / (1 - q)) - (a @ a) * (s_max ** (q - 2) / (2 - q))
    scale = math.sin(math.pi * q) / math.pi
    fine = scale * (fine + low + high)
    coarse = scale * (coarse + low + high)
    diff = la.norm(fine - coarse, 2) / max(la.norm(fine, 2), 1e-300)
    return fine, float(diff)


def frac_power_matrix(op, p, quad=None, frac_tol=FRAC_TOL, warn=True):
    """``A^p`` for ``p > 0`` via ``A^p = A^(p - floor p) A^(floor p)``.

    The returned operator keeps ``op.m_constant``; that is a heuristic and can
    be re-checked with :func:`lavreg.operators.certify`. The relative
    quadrature error estimate is stored in ``result.meta["quad_error"]`` and an
    :class:`AccuracyWarning` is issued when it exceeds ``frac_tol`` (unless
    ``warn`` is false).
    """
    if not (p > 0) or not math.isfinite(p):
        raise InvalidParameterError(f"p must be positive, got {p!r}")
    quad = QuadratureSpec() if quad is None else quad
    k = int(math.floor(p))
    q = p - k
    a = np.asarray(op.entries)
    whole = np.linalg.matrix_power(a, k) if k > 0 else None
    err = diff = 0.0
    if q == 0:
        out = whole
    else:
        frac, diff = _power_integral(op, q, quad)
        err = min(diff, diff ** 2)
        out = frac if whole is None else frac @ whole
        if warn and err > frac_tol:
            warnings.warn(f"fractional power quadrature error estimate {err:.2e} "
                          f"exceeds {frac_tol:.0e}", AccuracyWarning, stacklevel=2)
    res = DenseOperator(out, m_constant=op.m_constant,
                        label=f"({op.label})^{p:g}", grid_step=op.grid_step,
                        accretive=op.accretive and p <= 1,
                        meta={"quad_error": err, "level_difference": diff,
                              "power": p})
    return res


def frac_power_apply(op, p, v, quad=None):
    """``A^p v``; a convenience wrapper around :func:`frac_power_matrix`."""
    v = _check_vector(op, v)
    return frac_power_matrix(op, p, quad).entries @ v


@dataclass
class NegPowerDiagnostics:
    """Small-s behaviour of the integrand ``s^(-q) ||(A + sI)^{-1} u||``.

    ``growth_exponent`` is the log-log slope of the integrand over the probe
    points. An integrand growing like ``s^(-1+0.01)`` or faster (slope at or
    below ``-0.99``) makes the integral diverge at zero, which is reported as
    ``source_condition_violated``.
    """

    q: float
    probe_s: list
    probe_norms: list
    growth_exponent: float
    source_condition_violated: bool
    quad_error: float
    tail_nodes: list = field(default_factory=list)
    tail_norms: list = field(default_factory=list)

    def as_dict(self):
        return {
            "q": self.q,
            "probe_s": list(self.probe_s),
            "probe_norms": list(self.probe_norms),
            "growth_exponent": self.growth_exponent,
            "source_condition_violated": bool(self.source_condition_violated),
            "quad_error": self.quad_error,
            "tail_nodes": list(self.tail_nodes),
            "tail_norms": list(self.tail_norms),
        }


def probe_window(op):
    """Range of s over which small-s integrand growth is measured.

    Finite matrices are invertible below their smallest singular value, so
    growth is probed between ``max(10 sigma_min, 1e-8 ||A||)`` and
    ``0.1 ||A||``. If that range is empty the operator is well posed at this
    scale and the probe falls back to ``[1e-8, 1e-6] ||A||``.
    """
    nrm = op.norm
    lo = max(10 * op.sigma_min, 1e-8 * nrm)
    hi = 0.1 * nrm
    if lo >= hi / 1.5:
        lo, hi = 1e-8 * nrm, 1e-6 * nrm
    return lo, hi


def neg_frac_power_apply(op, q, u, quad=None, n_probe=5):
    """``A^{-q} u`` for ``0 < q < 1`` plus divergence diagnostics.

    Returns ``(w, diagnostics)``. A detected divergence is a signal carried in
    the diagnostics, not an exception: it is the instrument used by the
    converse experiments.
    """
    if not 0 < q < 1:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q!r}")
    u = _check_vector(op, u)
    if u.ndim != 1:
        raise InvalidParameterError("u must be a vector")
    quad = QuadratureSpec() if quad is None else quad
    s_min, s_max = quad.resolve(op)
    t, wf, wc = tanh_sinh_nodes(quad.node_count, math.log(s_min), math.log(s_max),
                                quad.u_max)
    s = np.exp(t)
    a = np.asarray(op.entries)
    n = op.dim
    eye = np.eye(n)

    def solve(sk, v):
        if op.is_diagonal:
            return v / (op.diagonal + sk)
        if op.structure == "lower":
            return la.solve_triangular(a + sk * eye, v, lower=True, check_finite=False)
        return la.solve(a + sk * eye, v, check_finite=False)

    vals = np.array([sk ** (1 - q) * solve(sk, u) for sk in s])
    fine = wf @ vals
    coarse = wc @ vals
    ru = solve(s_min, u)
    low = (s_min ** (1 - q) / (1 - q)) * ru + (
        s_min ** (2 - q) / ((1 - q) * (2 - q))) * solve(s_min, ru)
    high = (s_max ** (-q) / q) * u - (s_max ** (-q - 1) / (q + 1)) * (a @ u)
    scale = math.sin(math.pi * q) / math.pi
    w = scale * (fine + low + high)
    w_coarse = scale * (coarse + low + high)
    diff = float(np.linalg.norm(w - w_coarse) / max(np.linalg.norm(w), 1e-300))
    quad_err = min(diff, diff ** 2)

    lo, hi = probe_window(op)
    ps = np.geomspace(lo, hi, n_probe)
    norms = np.array([sk ** (-q) * np.linalg.norm(solve(sk, u)) for sk in ps])
    if np.all(norms > 0):
        expo = float(np.polyfit(np.log(ps), np.log(norms), 1)[0])
    else:
        expo = 0.0
    tail_idx = np.argsort(s)[:5]
    tail_norms = [float(s[i] ** (-q) * np.linalg.norm(solve(s[i], u))) for i in tail_idx]
    diag = NegPowerDiagnostics(
        q=q,
        probe_s=ps.tolist(),
        probe_norms=norms.tolist(),
        growth_exponent=expo,
        source_condition_violated=bool(expo <= -1 + 0.01),
        quad_error=quad_err,
        tail_nodes=s[tail_idx].tolist(),
        tail_norms=tail_norms,
    )
    if diag.source_condition_violated:
        logger.info("A^-%g u: integrand grows like s^%.3f near 0", q, expo)
    return w, diag
