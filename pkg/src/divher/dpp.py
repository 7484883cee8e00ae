"""Determinantal point process kernels, spectra, and fixed-size sampling.

Items are columns of a feature matrix.  The Gram matrix of the (unit-norm)
columns acts as the similarity kernel; principal-minor determinants measure
how close to orthogonal a subset of items is, and the fixed-size sampler
draws subsets with probability proportional to those determinants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

# Columns with smaller norm than this normalize to the zero vector.
ZERO_NORM_TOL = 1e-9
# Eigenvalues below this are treated as exact zeros (rank decisions included).
EIGENVALUE_CLAMP = 1e-10
# Eigenvalues below this violate positive semi-definiteness.
PSD_VIOLATION = -1e-8
# Basis vectors with smaller residual are dropped during re-orthonormalization.
BASIS_DROP_TOL = 1e-9

_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


class EigenConvergenceError(RuntimeError):
    """Raised when the rotation sweeps fail to diagonalize a matrix."""


class KernelRankError(ValueError):
    """Raised when a kernel has too few nonzero eigenvalues for the request."""


class EigenSystem(NamedTuple):
    """Eigenvalues sorted ascending with eigenvectors as aligned columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class SamplerStats:
    """Mutable counters a caller may pass to record sampler fallbacks."""

    fallbacks: int = 0


def normalize_columns(features):
    """Scale each column to unit length; near-zero columns become all zeros."""
    m = np.asarray(features, dtype=float)
    if m.ndim != 2 or m.shape[1] < 1:
        raise ValueError("feature matrix must be 2-D with at least one column")
    norms = np.linalg.norm(m, axis=0)
    out = np.zeros_like(m)
    keep = norms >= ZERO_NORM_TOL
    out[:, keep] = m[:, keep] / norms[keep]
    return out


def gram_kernel(features):
    """Pairwise dot products of the columns, as a symmetric PSD matrix."""
    m = np.asarray(features, dtype=float)
    return m.T @ m


def _jacobi_sweeps(a, v, tol, max_sweeps):
    # Cyclic Jacobi rotations; mutates a toward diagonal and accumulates the
    # rotations in v.  Returns (sweeps_run, final_off_diagonal_norm).
    n = a.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        off = math.sqrt(2.0 * off)
        if off <= tol:
            return sweeps, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for i in range(n):
                    if i != p and i != q:
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = aip * c - aiq * s
                        a[p, i] = a[i, p]
                        a[i, q] = aiq * c + aip * s
                        a[q, i] = a[i, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = vip * c - viq * s
                    v[i, q] = viq * c + vip * s
        sweeps += 1
    off = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            off += a[i, j] * a[i, j]
    return sweeps, math.sqrt(2.0 * off)


if _HAVE_NUMBA:
    _jacobi_sweeps = njit(cache=True)(_jacobi_sweeps)


def sym_eigen(kernel):
    """Full eigendecomposition of a symmetric PSD matrix via Jacobi rotations.

    Eigenvalues come back ascending with tiny values clamped to exactly zero;
    eigenvalues below the PSD tolerance raise, since a Gram matrix cannot
    produce them other than through a bug upstream.
    """
    k = np.asarray(kernel, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("kernel must be a square matrix")
    if k.shape[0] == 0:
        raise ValueError("kernel must be at least 1x1")
    asym = np.max(np.abs(k - k.T)) if k.shape[0] > 1 else 0.0
    if asym > 1e-10:
        raise ValueError(f"kernel is asymmetric by {asym:.3e}, above 1e-10")

    a = np.array((k + k.T) / 2.0, dtype=np.float64, order="C")
    v = np.eye(a.shape[0], dtype=np.float64)
    tol = _JACOBI_TOL * max(1.0, float(np.linalg.norm(a)))
    sweeps, off = _jacobi_sweeps(a, v, tol, _JACOBI_MAX_SWEEPS)
    if off > tol:
        raise EigenConvergenceError(
            f"Jacobi rotations did not converge on {a.shape[0]}x{a.shape[0]} "
            f"matrix: off-diagonal residual {off:.3e} after {sweeps} sweeps"
        )

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    if values[0] < PSD_VIOLATION:
        raise ValueError(
            f"matrix is not positive semi-definite: eigenvalue {values[0]:.3e} "
            f"below tolerance {PSD_VIOLATION:.0e}"
        )
    values[values < EIGENVALUE_CLAMP] = 0.0
    return EigenSystem(values, vectors)


def esk_table(eigenvalues, k):
    """Table of elementary symmetric polynomials over eigenvalue prefixes.

    Entry [j, i] is the sum over all size-j subsets of the first i eigenvalues
    of their products, built by the usual two-term recurrence.  Row 0 is all
    ones and entries with j > i are zero.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1:
        raise ValueError("eigenvalues must be a 1-D sequence")
    n = lam.size
    if not 0 <= k <= n:
        raise ValueError(f"subset size k={k} must be within [0, {n}]")
    if n and lam.min() < 0.0:
        raise ValueError("eigenvalues must be nonnegative")
    table = np.zeros((k + 1, n + 1))
    table[0, :] = 1.0
    for j in range(1, k + 1):
        # Same accumulation order as the scalar recurrence
        # e[j, i] = e[j, i-1] + lam[i-1] * e[j-1, i-1].
        table[j, 1:] = np.cumsum(lam * table[j - 1, :-1])
    return table


def det_psd(kernel, eigen: Optional[EigenSystem] = None):
    """Determinant of a PSD matrix, never negative.

    Uses the eigenvalue product when a decomposition is already at hand,
    otherwise diagonal-pivoted elimination where a non-positive pivot means
    the matrix is singular (determinant zero).
    """
    if eigen is not None:
        return float(np.prod(eigen.eigenvalues))
    a = np.array(kernel, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("kernel must be a square matrix")
    n = a.shape[0]
    if n == 0:
        return 1.0
    tol = n * np.finfo(float).eps * max(1.0, float(np.max(np.diag(a), initial=0.0)))
    det = 1.0
    for i in range(n):
        j = i + int(np.argmax(np.diag(a)[i:]))
        pivot = a[j, j]
        if pivot <= tol:
            return 0.0
        if j != i:
            a[[i, j], :] = a[[j, i], :]
            a[:, [i, j]] = a[:, [j, i]]
        det *= pivot
        if i + 1 < n:
            row = a[i, i + 1 :]
            a[i + 1 :, i + 1 :] -= np.outer(row, row) / pivot
    if -1e-10 <= det < 0.0:
        return 0.0
    return det


def _principal_minor(kernel, subset):
    idx = np.asarray(sorted(subset), dtype=int)
    n = kernel.shape[0]
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError(f"subset indices must lie in [0, {n})")
    if idx.size != len(set(int(i) for i in idx)):
        raise ValueError("subset indices must be distinct")
    if idx.size == 0:
        return 1.0
    return det_psd(kernel[np.ix_(idx, idx)])


def dpp_subset_probability(kernel, subset):
    """Exact probability that an unconstrained determinantal draw equals subset.

    Ratio of the subset's principal minor to det(kernel + identity); the
    probabilities over all 2^n subsets sum to one.
    """
    k = np.asarray(kernel, dtype=float)
    num = _principal_minor(k, subset)
    denom = det_psd(k + np.eye(k.shape[0]))
    return num / denom


def kdpp_subset_probability(kernel, subset):
    """Exact probability of a size-k determinantal draw equalling subset.

    Normalizes the subset's principal minor by the degree-k elementary
    symmetric polynomial of the kernel's eigenvalues.
    """
    k_mat = np.asarray(kernel, dtype=float)
    idx = list(subset)
    k = len(idx)
    eigen = sym_eigen(k_mat)
    denom = esk_table(eigen.eigenvalues, k)[k, -1]
    if denom == 0.0:
        raise KernelRankError(
            f"kernel rank is below subset size {k}; size-{k} draws have no support"
        )
    return _principal_minor(k_mat, idx) / denom


def _orthogonal_to_item(basis, item):
    """Orthonormal basis for the span of `basis` orthogonal to coordinate `item`.

    Projects out each column's component along the in-span image of the
    coordinate axis, then re-orthonormalizes with modified Gram-Schmidt,
    dropping the (single) collapsed direction.  Written with explicit loops
    for the JIT; `_orthogonal_to_item_numpy` is the vectorized twin.
    """
    n, r = basis.shape
    w = np.zeros(n)
    for c in range(r):
        coord = basis[item, c]
        for i in range(n):
            w[i] += basis[i, c] * coord
    nw = math.sqrt(np.sum(w * w))
    if nw < 1e-12:
        # Coordinate axis already orthogonal to the span; nothing to remove.
        return basis.copy()
    w /= nw
    out = np.empty((n, r))
    kept = 0
    vec = np.empty(n)
    for c in range(r):
        proj = 0.0
        for i in range(n):
            proj += w[i] * basis[i, c]
        for i in range(n):
            vec[i] = basis[i, c] - proj * w[i]
        for u in range(kept):
            dot = 0.0
            for i in range(n):
                dot += out[i, u] * vec[i]
            for i in range(n):
                vec[i] -= dot * out[i, u]
        norm = math.sqrt(np.sum(vec * vec))
        if norm >= BASIS_DROP_TOL:
            for i in range(n):
                out[i, kept] = vec[i] / norm
            kept += 1
    return np.ascontiguousarray(out[:, :kept])


def _orthogonal_to_item_numpy(basis, item):
    """Vectorized twin of `_orthogonal_to_item` (fallback without the JIT)."""
    n, r = basis.shape
    w = basis @ basis[item, :]
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        return basis.copy()
    w = w / nw
    reduced = basis - np.outer(w, w @ basis)
    kept = []
    for c in range(r):
        vec = reduced[:, c].copy()
        for u in kept:
            vec -= (u @ vec) * u
        norm = np.linalg.norm(vec)
        if norm >= BASIS_DROP_TOL:
            kept.append(vec / norm)
    if not kept:
        return np.zeros((n, 0))
    return np.column_stack(kept)


def _two_phase_select(lam, table, vecs, k, rng):
    """Both sampling phases on a decomposed kernel; may return < k items.

    Phase one walks eigenvalue indices from the top, keeping index i with
    the conditional marginal lam[i] * e[need-1, i-1] / e[need, i].  Phase two
    repeatedly samples an item with probability proportional to its squared
    coordinate mass across the retained eigenvectors, then shrinks the basis
    to the subspace orthogonal to that coordinate.  One uniform variate is
    consumed per phase-one index visited and one per phase-two item.
    """
    n = lam.size
    selected = np.empty(k, dtype=np.int64)
    n_selected = 0
    need = k
    for i in range(n, 0, -1):
        if need == 0:
            break
        if i == need:
            if lam[i - 1] <= 0.0:
                break  # forced onto a null direction; caller tops up
            marginal = 1.0
        else:
            denom = table[need, i]
            if denom <= 0.0:
                continue
            marginal = lam[i - 1] * table[need - 1, i - 1] / denom
        if rng.random() < marginal:
            selected[n_selected] = i - 1
            n_selected += 1
            need -= 1

    items = np.empty(k, dtype=np.int64)
    count = 0
    if n_selected == 0:
        return items[:0]
    basis = np.empty((n, n_selected))
    for c in range(n_selected):
        basis[:, c] = vecs[:, selected[c]]
    while basis.shape[1] > 0:
        u = rng.random()
        masses = np.empty(n)
        total = 0.0
        for i in range(n):
            mass = 0.0
            for c in range(basis.shape[1]):
                mass += basis[i, c] * basis[i, c]
            masses[i] = mass
            total += mass
        if total <= 0.0:
            break
        target = u * total
        acc = 0.0
        item = n - 1
        for i in range(n):
            acc += masses[i]
            if acc >= target:
                item = i
                break
        items[count] = item
        count += 1
        shrunk = _orthogonal_to_item(basis, item)
        if shrunk.shape[1] >= basis.shape[1]:
            break  # basis failed to shrink; bail out and let the caller top up
        basis = shrunk
    return items[:count]


if _HAVE_NUMBA:
    _orthogonal_to_item = njit(cache=True)(_orthogonal_to_item)
    _two_phase_select = njit(cache=True)(_two_phase_select)
else:  # pragma: no cover - exercised only without numba
    _orthogonal_to_item = _orthogonal_to_item_numpy


def _sample_from_spectrum(eigen: EigenSystem, k, rng):
    """Two-phase fixed-size draw given a decomposed kernel.

    May return fewer than k items in degenerate numerical corners; callers
    top up.
    """
    table = esk_table(eigen.eigenvalues, k)
    picked = _two_phase_select(
        eigen.eigenvalues, table, np.ascontiguousarray(eigen.eigenvectors), k, rng
    )
    return [int(i) for i in picked]


def kdpp_sample(features, k, rng, stats: Optional[SamplerStats] = None):
    """Draw k distinct column indices with determinant-weighted probabilities.

    Columns are unit-normalized before the kernel is formed.  When the kernel
    rank r falls short of k, the r rank-supported items are drawn by the exact
    sampler and the remaining slots are filled uniformly without replacement;
    the fallback is tallied on `stats` when given.
    """
    m = np.asarray(features, dtype=float)
    if m.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n = m.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"sample size k={k} must be within [1, {n}]")

    eigen = sym_eigen(gram_kernel(normalize_columns(m)))
    rank = int(np.count_nonzero(eigen.eigenvalues > EIGENVALUE_CLAMP))

    target = min(k, rank)
    chosen = _sample_from_spectrum(eigen, target, rng) if target > 0 else []
    if len(chosen) < k:
        if stats is not None:
            stats.fallbacks += 1
        pool = np.setdiff1d(np.arange(n), np.asarray(chosen, dtype=int))
        fill = rng.choice(pool, size=k - len(chosen), replace=False)
        chosen = list(chosen) + [int(i) for i in fill]
    return np.array(sorted(chosen), dtype=int)
