"""Dense symmetric linear algebra and the special functions the statistics need.

Everything here operates on small (k <= ~64) real symmetric matrices.  All
functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    InvalidDimension,
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
)

# Relative asymmetry tolerated on construction; anything worse is an error
# rather than silently averaged away.
_ASYM_TOL = 1e-9
# Eigenvalue / pivot floor for positive-definiteness checks, relative to the
# largest eigenvalue (or diagonal entry) and scaled by dimension.
_PD_FLOOR = 1e-14


def symmetrize(a) -> np.ndarray:
    """Validate a square symmetric array and return its symmetrized copy."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidDimension(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetric("matrix has non-finite entries")
    scale = np.max(np.abs(a))
    asym = np.max(np.abs(a - a.T))
    if scale > 0 and asym > _ASYM_TOL * scale:
        raise NotSymmetric(f"relative asymmetry {asym / scale:.3e} exceeds {_ASYM_TOL}")
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class SymMatrix:
    """A validated dense real symmetric matrix."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", symmetrize(self.a))

    @property
    def dim(self) -> int:
        return self.a.shape[0]


def _as_array(a) -> np.ndarray:
    if isinstance(a, SymMatrix):
        return a.a
    return symmetrize(a)


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when any pivot falls at or below
    dim * 1e-14 * max(diag(a)).
    """
    a = _as_array(a)
    n = a.shape[0]
    tol = n * _PD_FLOOR * max(np.max(np.diag(a)), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= tol:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j} below floor {tol:.3e}")
        L[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sym_eigen(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix."""
    a = _as_array(a)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pathological input
        raise NoConvergence(str(exc)) from exc
    return w[::-1].copy(), v[:, ::-1].copy()


def inv_sqrt(a) -> np.ndarray:
    """Symmetric B with B @ a @ B == identity; requires a positive definite."""
    a = _as_array(a)
    w, v = sym_eigen(a)
    n = a.shape[0]
    if w[0] <= 0.0 or w[-1] <= n * _PD_FLOOR * w[0]:
        raise NotPositiveDefinite(
            f"eigenvalue range [{w[-1]:.3e}, {w[0]:.3e}] is not positive definite"
        )
    b = (v / np.sqrt(w)) @ v.T
    return (b + b.T) / 2.0


def pseudo_inverse(a, rel_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix via its eigendecomposition.

    Eigenvalues at or below rel_tol * max-eigenvalue are treated as exact zeros,
    so the function is total on PSD input.
    """
    a = _as_array(a)
    w, v = sym_eigen(a)
    cutoff = rel_tol * max(w[0], 0.0)
    winv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    g = (v * winv) @ v.T
    return (g + g.T) / 2.0


@dataclass(frozen=True)
class ContrastMatrix:
    """A k x k transform whose first row is constant and whose remaining rows
    each sum to zero (so they annihilate constant profiles)."""

    k: int
    rows: np.ndarray
    kind: str = field(default="helmert")

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (self.k, self.k):
            raise InvalidDimension(f"rows must be {self.k}x{self.k}, got {rows.shape}")
        scale = np.max(np.abs(rows))
        if np.max(np.abs(rows[0] - rows[0, 0])) > 1e-12 * scale:
            raise InvalidDimension("first row must be constant")
        if np.max(np.abs(rows[1:].sum(axis=1))) > 1e-12 * scale:
            raise InvalidDimension("rows 2..k must sum to zero")
        sign, logdet = np.linalg.slogdet(rows)
        if sign == 0 or not np.isfinite(logdet):
            raise InvalidDimension("contrast matrix is singular")
        object.__setattr__(self, "rows", rows)

    @property
    def first_row(self) -> np.ndarray:
        return self.rows[0]

    @property
    def remainder(self) -> np.ndarray:
        """Rows 2..k, the part that maps onto deviations from constancy."""
        return self.rows[1:]


def helmert(k: int) -> ContrastMatrix:
    """Orthonormal Helmert contrast of order k (k >= 2)."""
    if k < 2:
        raise InvalidDimension(f"helmert needs k >= 2, got {k}")
    rows = np.zeros((k, k))
    rows[0, :] = 1.0 / math.sqrt(k)
    for j in range(2, k + 1):
        r = 1.0 / math.sqrt(j * (j - 1))
        rows[j - 1, : j - 1] = r
        rows[j - 1, j - 1] = -(j - 1) * r
    return ContrastMatrix(k=k, rows=rows, kind="helmert")


def diff_contrast(k: int) -> ContrastMatrix:
    """All-ones first row, then successive-difference rows (k >= 2)."""
    if k < 2:
        raise InvalidDimension(f"diff_contrast needs k >= 2, got {k}")
    rows = np.zeros((k, k))
    rows[0, :] = 1.0
    for j in range(2, k + 1):
        rows[j - 1, j - 2] = 1.0
        rows[j - 1, j - 1] = -1.0
    return ContrastMatrix(k=k, rows=rows, kind="first_difference_style")


def contrast(kind: str, k: int) -> ContrastMatrix:
    if kind == "helmert":
        return helmert(k)
    if kind == "first_difference_style":
        return diff_contrast(k)
    raise InvalidDimension(f"unknown contrast kind {kind!r}")


# ---------------------------------------------------------------------------
# Special functions.  Implemented in-repo: the F law needs real-valued degrees
# of freedom, and the prior-df estimator needs digamma/trigamma/tetragamma.
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise NoConvergence(f"incomplete beta continued fraction stalled at a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise DomainError(f"beta parameters must be positive, got a={a}, b={b}")
    if x < 0.0 or x > 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x: float, df1: float, df2: float) -> float:
    """CDF of the F distribution; real-valued degrees of freedom allowed."""
    if df1 <= 0.0 or df2 <= 0.0:
        raise DomainError(f"degrees of freedom must be positive, got ({df1}, {df2})")
    if x < 0.0:
        raise DomainError(f"F variate must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    z = df1 * x / (df1 * x + df2)
    return min(1.0, max(0.0, betainc_reg(df1 / 2.0, df2 / 2.0, z)))


def f_quantile(prob: float, df1: float, df2: float) -> float:
    """Inverse of f_cdf in its first argument (bisection; monotone CDF)."""
    if prob < 0.0 or prob >= 1.0:
        raise DomainError(f"probability must lie in [0, 1), got {prob}")
    if prob == 0.0:
        return 0.0
    hi = 1.0
    for _ in range(400):
        if f_cdf(hi, df1, df2) >= prob:
            break
        hi *= 2.0
    else:  # pragma: no cover
        raise NoConvergence("failed to bracket F quantile")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, df1, df2) < prob:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def student_t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of the Student t distribution with real df."""
    if df <= 0.0:
        raise DomainError(f"df must be positive, got {df}")
    if t < 0.0:
        return 1.0 - student_t_sf(-t, df)
    if t == 0.0:
        return 0.5
    return 0.5 * betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def student_t_isf(prob: float, df: float) -> float:
    """Inverse upper-tail quantile: t with P(T > t) == prob, prob in (0, 1)."""
    if prob <= 0.0 or prob >= 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    if prob > 0.5:
        return -student_t_isf(1.0 - prob, df)
    if prob == 0.5:
        return 0.0
    # t^2 ~ F(1, df) for the two-sided tail 2*prob
    return math.sqrt(f_quantile(1.0 - 2.0 * prob, 1.0, df))


# Asymptotic series kicks in at x >= _POLY_SHIFT; below that the recurrence
# psi(x) = psi(x+1) - 1/x (and its derivatives) walks x up.
_POLY_SHIFT = 8.0


def digamma_trigamma(x: float) -> tuple[float, float]:
    """(psi(x), psi'(x)) for x > 0, absolute error <= 1e-10."""
    if not (x > 0.0) or not math.isfinite(x):
        raise DomainError(f"digamma/trigamma need x > 0, got {x}")
    dig_acc = 0.0
    tri_acc = 0.0
    while x < _POLY_SHIFT:
        dig_acc -= 1.0 / x
        tri_acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    dig = (
        math.log(x)
        - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
    )
    tri = inv + 0.5 * inv2 + inv * inv2 * (
        1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0)))
    )
    return dig + dig_acc, tri + tri_acc


def tetragamma(x: float) -> float:
    """psi''(x) for x > 0 (needed by the trigamma-inverse Newton step)."""
    if not (x > 0.0) or not math.isfinite(x):
        raise DomainError(f"tetragamma needs x > 0, got {x}")
    acc = 0.0
    while x < _POLY_SHIFT:
        acc -= 2.0 / (x * x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # derivative of the trigamma series
    tet = -inv2 - inv * inv2 - inv2 * inv2 * (
        0.5 - inv2 * (1.0 / 6.0 - inv2 * (1.0 / 6.0 - inv2 * (3.0 / 10.0 - inv2 * 5.0 / 6.0)))
    )
    return tet + acc
