"""Polynomial chaos machinery for Gaussian disturbances.

The basis is the orthonormal probabilists' Hermite family evaluated at
standardized disturbances ``w / sigma``, so ``E[psi_k(w)^2] = 1`` and the
variance of an expansion is the plain sum of squared non-constant coefficients.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import ndtri

MAX_TERMS = 10**6
CLAMP_EPS = 1e-9


class PceSizingError(ValueError):
    """Raised when a requested basis is empty or combinatorially explosive."""


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when the collocation basis matrix has deficient column rank."""

    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


@dataclass(frozen=True)
class MultiIndexSet:
    n_w: int
    d_max: int
    indices: np.ndarray = field(repr=False)

    @property
    def n_terms(self) -> int:
        return self.indices.shape[0]

    def __len__(self):
        return self.n_terms


def n_terms(n_w: int, d_max: int) -> int:
    """Number of multivariate terms of total degree <= d_max."""
    return math.comb(n_w + d_max, d_max)


def generate_multi_indices(n_w: int, d_max: int) -> MultiIndexSet:
    """All multi-indices of total degree <= ``d_max`` in graded lexicographic order.

    Within one total degree, indices are listed with the leading variable's
    degree decreasing, so degree one reads ``[1,0,..], [0,1,..], ...``.
    """
    if n_w < 1:
        raise PceSizingError(f"need at least one uncertain parameter, got n_w={n_w}")
    if d_max < 0:
        raise PceSizingError(f"maximal degree must be non-negative, got d_max={d_max}")
    size = n_terms(n_w, d_max)
    if size > MAX_TERMS:
        raise PceSizingError(f"basis with n_w={n_w}, d_max={d_max} has {size} terms (> {MAX_TERMS})")

    rows = []
    for degree in range(d_max + 1):
        block = [
            alpha
            for alpha in itertools.product(range(degree, -1, -1), repeat=n_w)
            if sum(alpha) == degree
        ]
        rows.extend(block)
    indices = np.array(rows, dtype=np.int64).reshape(size, n_w)
    indices.setflags(write=False)
    return MultiIndexSet(n_w=n_w, d_max=d_max, indices=indices)


def hermite_orthonormal(degree: int, x):
    """Probabilists' Hermite polynomial of ``degree`` divided by sqrt(degree!).

    Evaluated with the normalized three-term recurrence
    ``psi_{n+1} = (x psi_n - sqrt(n) psi_{n-1}) / sqrt(n+1)``. Accepts scalars
    or arrays.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    for n in range(degree):
        prev, cur = cur, (x * cur - math.sqrt(n) * prev) / math.sqrt(n + 1)
    return cur if cur.ndim else float(cur)


def _univariate_table(d_max: int, w: np.ndarray) -> np.ndarray:
    """psi_0..psi_dmax evaluated at every entry of ``w``; shape (d_max+1, *w.shape)."""
    table = np.empty((d_max + 1,) + w.shape)
    table[0] = 1.0
    if d_max >= 1:
        table[1] = w
    for n in range(1, d_max):
        table[n + 1] = (w * table[n] - math.sqrt(n) * table[n - 1]) / math.sqrt(n + 1)
    return table


def eval_multivariate_basis(indices: MultiIndexSet, w) -> np.ndarray:
    """Evaluate every basis term at standardized point(s) ``w``.

    ``w`` is a vector of length n_w (returns shape (L,)) or a matrix
    (n_points, n_w) (returns shape (n_points, L)).
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w2 = np.atleast_2d(w)
    if w2.shape[1] != indices.n_w:
        raise ValueError(f"expected points of dimension {indices.n_w}, got {w2.shape[1]}")
    table = _univariate_table(indices.d_max, w2)  # (d+1, n_points, n_w)
    out = np.ones((w2.shape[0], indices.n_terms))
    for i in range(indices.n_w):
        out *= table[indices.indices[:, i], :, i].T
    return out[0] if single else out


def _radical_inverse(i: int, base: int) -> float:
    inv = 1.0 / base
    f = inv
    r = 0.0
    while i > 0:
        r += f * (i % base)
        i //= base
        f *= inv
    return r


def _first_primes(n: int) -> list[int]:
    primes = []
    k = 2
    while len(primes) < n:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return primes


def hammersley_points(n_s: int, n_w: int) -> np.ndarray:
    """Centered Hammersley points in (0, 1)^n_w.

    First coordinate ``(i + 1/2) / n_s``; coordinate j >= 1 is the radical
    inverse of ``i + 1`` in the j-th prime base. Centering keeps every point
    away from the cube faces, where the Gaussian map would explode.
    """
    if n_s < 1 or n_w < 1:
        raise ValueError("n_s and n_w must be positive")
    pts = np.empty((n_s, n_w))
    pts[:, 0] = (np.arange(n_s) + 0.5) / n_s
    for j, base in enumerate(_first_primes(n_w - 1), start=1):
        pts[:, j] = [_radical_inverse(i + 1, base) for i in range(n_s)]
    return pts


def hammersley_gaussian_samples(n_s: int, n_w: int, sigma_w) -> np.ndarray:
    """Deterministic Gaussian disturbance samples, shape (n_s, n_w)."""
    sigma_w = np.asarray(sigma_w, dtype=float).reshape(-1)
    if sigma_w.shape[0] != n_w:
        raise ValueError(f"sigma_w has length {sigma_w.shape[0]}, expected {n_w}")
    if np.any(~(sigma_w > 0)):
        raise ValueError("all standard deviations must be strictly positive")
    u = np.clip(hammersley_points(n_s, n_w), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return ndtri(u) * sigma_w


def _pseudo_inverse(phi: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    q, r, piv = scipy.linalg.qr(phi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    cond = np.inf if diag[-1] == 0 else diag[0] / diag[-1]
    if diag[-1] <= rtol * diag[0]:
        raise RankDeficientError(
            f"collocation matrix is rank deficient (|R| ratio {diag[-1] / diag[0]:.3e}, "
            f"condition estimate {cond:.3e})",
            cond,
        )
    a_perm = scipy.linalg.solve_triangular(r, q.T)
    a = np.empty_like(a_perm)
    a[piv] = a_perm
    return a


@dataclass(frozen=True)
class CollocationSet:
    indices: MultiIndexSet
    sigma_w: np.ndarray
    samples_W: np.ndarray
    basis_Phi: np.ndarray
    regression_A: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.samples_W.shape[0]

    @classmethod
    def from_standardized(cls, standardized, sigma_w, indices: MultiIndexSet) -> "CollocationSet":
        """Build from explicit standardized samples (rows of unit-variance draws)."""
        standardized = np.atleast_2d(np.asarray(standardized, dtype=float))
        sigma_w = np.asarray(sigma_w, dtype=float).reshape(-1)
        n_s = standardized.shape[0]
        if n_s < indices.n_terms:
            raise PceSizingError(f"need n_s >= L = {indices.n_terms} samples, got {n_s}")
        if sigma_w.shape[0] != indices.n_w or standardized.shape[1] != indices.n_w:
            raise ValueError("sigma_w / sample dimension does not match the multi-index set")
        if np.any(sigma_w < 0):
            raise ValueError("standard deviations must be non-negative")
        phi = eval_multivariate_basis(indices, standardized)
        a = _pseudo_inverse(phi)
        samples = standardized * sigma_w
        for arr in (sigma_w, samples, phi, a):
            arr.setflags(write=False)
        return cls(indices, sigma_w, samples, phi, a)


def build_collocation(sigma_w, n_s: int, indices: MultiIndexSet) -> CollocationSet:
    """Hammersley collocation set with its least-squares regression matrix.

    A zero entry in ``sigma_w`` collapses that disturbance direction; the basis
    is evaluated at standardized samples and therefore does not depend on sigma.
    """
    standardized = hammersley_gaussian_samples(n_s, indices.n_w, np.ones(indices.n_w))
    return CollocationSet.from_standardized(standardized, sigma_w, indices)


@dataclass(frozen=True)
class PceCoefficients:
    C: np.ndarray

    @property
    def expectation(self) -> np.ndarray:
        return self.C[0]

    @property
    def variance(self) -> np.ndarray:
        return np.sum(self.C[1:] ** 2, axis=0)


def regression_coefficients(regression_A: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``A @ values`` computed relative to the first row.

    ``A`` maps constant columns onto the constant term, so shifting by row 0
    is exact; it keeps large offsets (positions) out of the regression and
    makes an ensemble of identical rows reproduce its value bit for bit.
    """
    base = values[0]
    coeffs = regression_A @ (values - base)
    coeffs[0] += base
    return coeffs


def regress_moments(colloc: CollocationSet, values):
    """Expectation, variance and coefficients of a map sampled on ``colloc``.

    ``values`` has one row per collocation sample (shape (n_s,) or (n_s, n_dim)).
    """
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 1
    vals = values[:, None] if squeeze else values
    if vals.shape[0] != colloc.n_samples:
        raise ValueError(f"expected {colloc.n_samples} rows of values, got {vals.shape[0]}")
    coeffs = PceCoefficients(regression_coefficients(colloc.regression_A, vals))
    mean, var = coeffs.expectation, coeffs.variance
    if squeeze:
        return float(mean[0]), float(var[0]), coeffs
    return mean, var, coeffs
