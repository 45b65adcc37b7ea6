"""Discretized nonnegative operators, their resolvents and certificates.

An operator ``A`` is *nonnegative of type M* when ``A + gamma I`` is invertible
for every ``gamma > 0`` with ``||(A + gamma I)^{-1}|| <= M / gamma``. In a real
Hilbert space this holds with ``M = 1`` exactly when ``<Au, u> >= 0``
(accretive). Everything here works with dense ``float64`` matrices and the
Euclidean norm.
"""

import logging
import math
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
from scipy.special import gamma as gamma_fn

from .errors import (
    AccuracyWarning,
    DecompositionError,
    InvalidDimensionError,
    InvalidParameterError,
    NumericalError,
)

__all__ = [
    "ACC_TOL",
    "CERT_TOL",
    "NULL_TOL",
    "DenseOperator",
    "Certificate",
    "RangeNullDecomposition",
    "build_integration_operator",
    "build_abel_operator",
    "build_diagonal_operator",
    "diagonal_spectrum",
    "certification_grid",
    "certify",
    "resolvent_apply",
    "resolvent_norm",
    "resolvent_top_direction",
    "range_null_decompose",
    "export_csv",
]

logger = logging.getLogger(__name__)

ACC_TOL = 1e-10
CERT_TOL = 1e-8
NULL_TOL = 1e-10
RESIDUAL_TOL = 1e-12

_CACHE_SIZE = 512
_TOP_CACHE_SIZE = 8192
DENSE_SVD_MAX = 1024


class _Factor:
    """Solver for ``(A + gamma I) x = v`` and its transpose at one fixed gamma."""

    def __init__(self, op, gamma):
        self.gamma = gamma
        self._kind = op.structure
        if self._kind == "diagonal":
            self._d = op.diagonal + gamma
        elif self._kind == "lower":
            self._m = op.entries + gamma * np.eye(op.dim)
            if np.any(np.diag(self._m) == 0.0):
                raise NumericalError(
                    f"singular shifted matrix at gamma={gamma:g}")
        else:
            try:
                self._lu = la.lu_factor(op.entries + gamma * np.eye(op.dim),
                                        check_finite=False)
            except la.LinAlgError as exc:
                raise NumericalError(
                    f"LU factorization broke down at gamma={gamma:g}") from exc
            if np.any(np.diag(self._lu[0]) == 0.0):
                raise NumericalError(f"singular shifted matrix at gamma={gamma:g}")

    def solve(self, v, trans=False):
        if self._kind == "diagonal":
            d = self._d if v.ndim == 1 else self._d[:, None]
            return v / d
        if self._kind == "lower":
            return la.solve_triangular(self._m, v, lower=True,
                                       trans=1 if trans else 0,
                                       check_finite=False)
        return la.lu_solve(self._lu, v, trans=1 if trans else 0,
                           check_finite=False)


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """An ``n x n`` real matrix together with its nonnegativity constant.

    Instances are immutable: ``entries`` is copied and marked read-only.
    Factorizations of ``A + gamma I`` and the top singular pair of its
    inverse are memoized per gamma behind a lock,
    so a shared operator can be used from several threads.

    Parameters
    ----------
    entries : (n, n) array_like
        The matrix.
    m_constant : float
        Certified constant ``M >= 1`` with ``gamma ||(A + gamma I)^{-1}|| <= M``.
    label : str
        Free-form description used in reports.
    grid_step : float, optional
        Mesh width ``h`` for discretized integral operators. Only used when
        reporting function-space (L2) norms.
    accretive : bool
        Whether the symmetric part was certified positive semidefinite.
    """

    entries: np.ndarray
    m_constant: float = 1.0
    label: str = ""
    grid_step: float | None = None
    accretive: bool = False
    meta: dict = field(default_factory=dict, compare=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False,
                                  repr=False)
    _factors: OrderedDict = field(default_factory=OrderedDict, init=False,
                                  repr=False)
    _tops: OrderedDict = field(default_factory=OrderedDict, init=False,
                               repr=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidDimensionError(f"expected a square matrix, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidParameterError("matrix has non-finite entries")
        if not (self.m_constant >= 1.0):
            raise InvalidParameterError(
                f"m_constant must be >= 1, got {self.m_constant}")
        if self.grid_step is not None and not self.grid_step > 0:
            raise InvalidParameterError("grid_step must be positive")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def __repr__(self):
        return (f"DenseOperator(dim={self.dim}, m_constant={self.m_constant}, "
                f"label={self.label!r})")

    @property
    def dim(self):
        return self.entries.shape[0]

    @cached_property
    def structure(self):
        a = self.entries
        if np.count_nonzero(a - np.diag(np.diag(a))) == 0:
            return "diagonal"
        if np.count_nonzero(np.triu(a, 1)) == 0:
            return "lower"
        return "general"

    @property
    def is_diagonal(self):
        return self.structure == "diagonal"

    @cached_property
    def diagonal(self):
        d = np.diag(self.entries).copy()
        d.setflags(write=False)
        return d

    @cached_property
    def singular_values(self):
        """Singular values in decreasing order."""
        if self.is_diagonal:
            s = np.sort(np.abs(self.diagonal))[::-1]
        else:
            s = la.svdvals(self.entries, check_finite=False)
        s.setflags(write=False)
        return s

    @property
    def norm(self):
        """Spectral norm ``||A||_2``."""
        return float(self.singular_values[0])

    @property
    def sigma_min(self):
        return float(self.singular_values[-1])

    @property
    def sigma_min_positive(self):
        """Smallest singular value above the nullspace threshold (0 if A = 0)."""
        s = self.singular_values
        keep = s[s > NULL_TOL * s[0]]
        return float(keep[-1]) if keep.size else 0.0

    def matvec(self, v):
        return self.entries @ v

    def __matmul__(self, v):
        return self.entries @ v

    def factor(self, gamma):
        """Return the (memoized) solver for ``A + gamma I``."""
        key = float(gamma)
        with self._lock:
            fac = self._factors.get(key)
            if fac is not None:
                self._factors.move_to_end(key)
                return fac
        fac = _Factor(self, key)
        with self._lock:
            self._factors[key] = fac
            while len(self._factors) > _CACHE_SIZE:
                self._factors.popitem(last=False)
        return fac

    def with_entries(self, entries, label=None, **kw):
        """New operator sharing this one's metadata but different entries."""
        return DenseOperator(entries, m_constant=kw.get("m_constant", self.m_constant),
                             label=self.label if label is None else label,
                             grid_step=kw.get("grid_step", self.grid_step),
                             accretive=kw.get("accretive", self.accretive))


def _symmetric_part_min_eig(a):
    return float(la.eigvalsh((a + a.T) / 2,
                             subset_by_index=[0, 0])[0])


def build_integration_operator(n):
    """Midpoint discretization of ``(Vu)(x) = int_0^x u(y) dy`` on L2(0, 1).

    The matrix has ``h`` below the diagonal and ``h/2`` on it, ``h = 1/n``. Its
    symmetric part is ``(h/2)`` times the all-ones matrix, hence positive
    semidefinite, so the operator is accretive with ``M = 1``.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidDimensionError(f"n must be an integer >= 2, got {n!r}")
    h = 1.0 / n
    a = np.tril(np.full((n, n), h), -1) + np.eye(n) * (h / 2)
    return DenseOperator(a, m_constant=1.0, label=f"integration(n={n})",
                         grid_step=h, accretive=True)


def build_abel_operator(n, alpha):
    """Collocation discretization of the Abel operator ``V^alpha``.

    Kernel ``(x - y)^(alpha - 1) / Gamma(alpha)``, collocation at cell
    midpoints ``x_i = (i - 1/2) h`` and exact integration over each cell
    ``[y_{j-1}, y_j]`` (the diagonal cell is cut at ``x_i``).
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidDimensionError(f"n must be an integer >= 2, got {n!r}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    h = 1.0 / n
    i = np.arange(n)
    # distance from x_i to the right edge of cell j, for j < i: (i - j - 1/2) h
    k = (i[:, None] - i[None, :]).astype(float)
    upper = np.where(k > 0, (k + 0.5) * h, 0.0)
    lower = np.where(k > 0, (k - 0.5) * h, 0.0)
    a = np.where(k > 0, upper ** alpha - lower ** alpha, 0.0)
    a[i, i] = (h / 2) ** alpha
    a /= gamma_fn(alpha + 1.0)
    lam = _symmetric_part_min_eig(a)
    if lam < -ACC_TOL:
        raise NumericalError(
            f"Abel discretization failed the accretivity check (min eig {lam:g})")
    return DenseOperator(a, m_constant=1.0, label=f"abel(n={n}, alpha={alpha:g})",
                         grid_step=h, accretive=True)


def build_diagonal_operator(lambdas):
    """``diag(lambdas)`` with nonnegative entries; accretive with ``M = 1``."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InvalidDimensionError("lambdas must be a nonempty vector")
    if not np.all(np.isfinite(lam)):
        raise InvalidParameterError("lambdas must be finite")
    if np.any(lam < 0):
        raise InvalidParameterError("diagonal entries must be nonnegative")
    return DenseOperator(np.diag(lam), m_constant=1.0,
                         label=f"diagonal(n={lam.size})", accretive=True)


def diagonal_spectrum(kind, n, floor=None, zeros=0, values=None):
    """Named test spectra for diagonal operators.

    ``harmonic`` gives ``1/i``, ``geometric`` gives ``2^{-i}``, ``clamped``
    gives ``max(1/i, floor)`` and ``explicit`` takes ``values`` verbatim.
    ``zeros`` appends that many zero eigenvalues (a nontrivial nullspace).
    """
    if kind == "explicit":
        if values is None:
            raise InvalidParameterError("explicit spectrum needs values")
        lam = np.asarray(values, dtype=float)
    else:
        if n is None or n < 1:
            raise InvalidDimensionError("n must be positive")
        i = np.arange(1, n + 1, dtype=float)
        if kind == "harmonic":
            lam = 1.0 / i
        elif kind == "geometric":
            lam = 2.0 ** (-i)
        elif kind == "clamped":
            if floor is None or floor <= 0:
                raise InvalidParameterError("clamped spectrum needs floor > 0")
            lam = np.maximum(1.0 / i, floor)
        else:
            raise InvalidParameterError(f"unknown spectrum kind {kind!r}")
    if zeros:
        lam = np.concatenate([lam, np.zeros(int(zeros))])
    return lam


def _as_gamma(gamma):
    g = float(gamma)
    if not (g > 0) or not math.isfinite(g):
        raise InvalidParameterError(f"gamma must be positive and finite, got {gamma!r}")
    return g


def _check_vector(op, v):
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2) or v.shape[0] != op.dim:
        raise InvalidDimensionError(
            f"vector of shape {v.shape} does not match operator dimension {op.dim}")
    return v


def resolvent_apply(op, gamma, v, memo=True):
    """Solve ``(A + gamma I) x = v``.

    ``v`` may be a vector or an ``(n, k)`` block of right-hand sides. Up to two
    steps of iterative refinement are taken when the residual exceeds
    ``1e-12 ||v||``; the target is out of reach only when
    ``eps * ||A + gamma I|| * ||x||`` itself is larger than that.
    Pass ``memo=False`` for one-off shifts (root finding) so they do not
    evict grid factorizations from the cache.
    """
    g = _as_gamma(gamma)
    v = _check_vector(op, v)
    fac = op.factor(g) if memo else _Factor(op, g)
    x = fac.solve(v)
    if op.is_diagonal:
        return x
    vnorm = np.linalg.norm(v, axis=0)
    for _ in range(2):
        r = v - (op.entries @ x + g * x)
        if np.all(np.linalg.norm(r, axis=0) <= RESIDUAL_TOL * vnorm):
            break
        x = x + fac.solve(r)
    return x


def _start_vector(n):
    rng = np.random.default_rng(12345)
    x = np.ones(n) + 0.1 * rng.standard_normal(n)
    return x / np.linalg.norm(x)


def resolvent_top_direction(op, gamma, tol=1e-8, maxiter=2000, memo=True):
    """Norm and top right singular vector of ``R = (A + gamma I)^{-1}``.

    Returns ``(norm, x)`` with ``||R x|| = norm`` and ``x`` a unit vector.
    Diagonal operators are handled in closed form. Up to ``DENSE_SVD_MAX``
    the smallest singular triple of ``A + gamma I`` is taken from a dense SVD:
    the singular values of ``R`` cluster near ``1/gamma`` for large gamma,
    which stalls power iteration. Larger operators fall back to power
    iteration on ``R^T R``.
    """
    g = _as_gamma(gamma)
    n = op.dim
    if op.is_diagonal:
        d = np.abs(op.diagonal + g)
        k = int(np.argmin(d))
        x = np.zeros(n)
        x[k] = 1.0
        return 1.0 / float(d[k]), x
    if n <= DENSE_SVD_MAX:
        if memo:
            with op._lock:
                hit = op._tops.get(g)
            if hit is not None:
                return hit[0], hit[1].copy()
        u, s, _ = la.svd(op.entries + g * np.eye(n), check_finite=False)
        x = u[:, -1]
        if x[np.argmax(np.abs(x))] < 0:
            x = -x
        norm = 1.0 / float(s[-1])
        if memo:
            with op._lock:
                op._tops[g] = (norm, x.copy())
                while len(op._tops) > _TOP_CACHE_SIZE:
                    op._tops.popitem(last=False)
        return norm, x
    fac = op.factor(g) if memo else _Factor(op, g)
    x = _start_vector(n)
    mu = 0.0
    for it in range(maxiter):
        y = fac.solve(x)
        z = fac.solve(y, trans=True)
        mu = float(y @ y)
        res = np.linalg.norm(z - mu * x)
        x = z / np.linalg.norm(z)
        if res <= tol * mu:
            break
    else:
        warnings.warn(f"power iteration stalled at gamma={g:g} after {maxiter} steps",
                      AccuracyWarning, stacklevel=2)
    y = fac.solve(x)
    return float(np.linalg.norm(y)), x


def resolvent_norm(op, gamma, tol=1e-8, memo=True):
    """``||(A + gamma I)^{-1}||_2``; see :func:`resolvent_top_direction`."""
    return resolvent_top_direction(op, gamma, tol=tol, memo=memo)[0]


def certification_grid(lo=1e-6, hi=1e3, num=25):
    return np.geomspace(lo, hi, num)


@dataclass(frozen=True)
class Certificate:
    """Outcome of :func:`certify`."""

    passed: bool
    m_constant: float
    max_scaled_norm: float
    min_symmetric_eig: float
    grid: np.ndarray
    scaled_norms: np.ndarray

    def as_dict(self):
        return {
            "passed": bool(self.passed),
            "m_constant": self.m_constant,
            "max_scaled_norm": self.max_scaled_norm,
            "min_symmetric_eig": self.min_symmetric_eig,
            "grid": self.grid.tolist(),
            "scaled_norms": self.scaled_norms.tolist(),
        }


def certify(op, grid=None, cert_tol=CERT_TOL, acc_tol=ACC_TOL):
    """Check ``gamma ||(A + gamma I)^{-1}|| <= M (1 + cert_tol)`` on a grid.

    For operators flagged accretive the symmetric part is also checked to be
    positive semidefinite up to ``acc_tol``.
    """
    grid = certification_grid() if grid is None else np.asarray(grid, dtype=float)
    scaled = np.array([g * resolvent_norm(op, g, memo=False) for g in grid])
    lam = _symmetric_part_min_eig(op.entries)
    ok = bool(np.all(scaled <= op.m_constant * (1 + cert_tol)))
    if op.accretive:
        ok = ok and lam >= -acc_tol
    return Certificate(ok, op.m_constant, float(scaled.max()), lam, grid, scaled)


@dataclass(frozen=True)
class RangeNullDecomposition:
    """``u = u_range + u_null`` with ``u_range`` in the closure of R(A)."""

    u_range: np.ndarray
    u_null: np.ndarray
    norm_bound_check: float


def range_null_decompose(op, u, null_tol=NULL_TOL):
    """Split ``u`` along ``closure(R(A)) (+) N(A)``.

    ``u_null`` is the limit of ``gamma (A + gamma I)^{-1} u`` as gamma -> 0. It is
    obtained by expressing ``u`` in the combined basis of left singular vectors
    (range) and right null singular vectors (nullspace).
    """
    u = _check_vector(op, u)
    if u.ndim != 1:
        raise InvalidDimensionError("u must be a vector")
    U, s, Vt = la.svd(op.entries, check_finite=False)
    thresh = null_tol * s[0] if s[0] > 0 else 0.0
    rank = int(np.count_nonzero(s > thresh))
    if rank == op.dim:
        return RangeNullDecomposition(u.copy(), np.zeros_like(u), 0.0)
    if rank == 0:
        un = u.copy()
        return RangeNullDecomposition(np.zeros_like(u), un,
                                      1.0 if np.linalg.norm(u) > 0 else 0.0)
    basis = np.hstack([U[:, :rank], Vt[rank:].T])
    cb = la.svdvals(basis)
    if cb[-1] < 1e-12:
        raise DecompositionError(
            f"range and nullspace nearly parallel (sigma_min={cb[-1]:.3g})")
    coef = la.solve(basis, u)
    u_null = Vt[rank:].T @ coef[rank:]
    u_range = u - u_null
    un = np.linalg.norm(u)
    ratio = float(np.linalg.norm(u_null) / un) if un > 0 else 0.0
    return RangeNullDecomposition(u_range, u_null, ratio)


def export_csv(op, path):
    """Write the matrix one row per line with full double precision."""
    np.savetxt(path, op.entries, fmt="%.17g", delimiter=",")
