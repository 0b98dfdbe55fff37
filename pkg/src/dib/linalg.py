"""Symmetric eigensolvers for small PSD matrices.

Everything here operates on dense n x n symmetric matrices where n is a
training batch size (a few dozen, at most a couple hundred).  The dense
path wraps LAPACK's symmetric solver and is the ground truth.  The Lanczos
path covers the top-k use case and is validated against the dense path; at
this scale accuracy beats asymptotics, so it keeps a fully reorthogonalized
basis and deterministic, seeded probe vectors.  A breakdown (zero residual,
meaning the Krylov space hit an invariant subspace) is handled by injecting
a fresh seeded probe orthogonal to the basis built so far, which is what
lets the iteration recover repeated eigenvalues.
"""

from __future__ import annotations

import numpy as np

# Eigenvalues of a trace-normalized PSD matrix may dip slightly negative
# from rounding; anything below this is treated as invalid input.
PSD_CLAMP_TOL = 1e-10


class EigendecompositionError(RuntimeError):
    """Eigendecomposition failed or produced an invalid spectrum."""


class DegenerateJointError(ValueError):
    """Hadamard product of two Gram matrices has numerically zero trace."""


class SymMatrix:
    """Dense symmetric matrix; construction symmetrizes via (M + M^T)/2."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("matrix entries must be finite")
        self.data = (arr + arr.T) / 2.0

    @property
    def n(self) -> int:
        return self.data.shape[0]


class EigenSpectrum:
    """Descending eigenvalues of a SymMatrix, optionally with eigenvectors.

    `k_computed` is the number of eigenpairs actually computed (n for the
    dense path, k for the Lanczos path).  `values` are always sorted
    non-increasing; `vectors`, when present, hold the matching eigenvectors
    as columns.
    """

    __slots__ = ("values", "vectors", "k_computed")

    def __init__(self, values, vectors=None, k_computed=None):
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError("eigenvalues must be a flat vector")
        if np.any(np.diff(vals) > 0):
            raise ValueError("eigenvalues must be sorted non-increasing")
        self.values = vals
        self.vectors = None if vectors is None else np.asarray(vectors, dtype=np.float64)
        self.k_computed = len(vals) if k_computed is None else int(k_computed)


def _clamp_psd_values(values, context):
    if values.min() < -PSD_CLAMP_TOL:
        raise EigendecompositionError(
            f"{context}: eigenvalue {values.min():.3e} below PSD tolerance "
            f"-{PSD_CLAMP_TOL:.0e}; input is not PSD"
        )
    return np.maximum(values, 0.0)


def eig_dense(m: SymMatrix, psd: bool = False, context: str = "matrix") -> EigenSpectrum:
    """Full symmetric eigendecomposition, eigenvalues descending.

    With psd=True the input is asserted to be a trace-normalized PSD matrix:
    eigenvalues below -1e-10 raise, small negatives are clamped to zero, and
    the clamped values must still sum to 1 within 1e-8.
    """
    try:
        vals, vecs = np.linalg.eigh(m.data)
    except np.linalg.LinAlgError as exc:
        raise EigendecompositionError(f"dense eigendecomposition of {context} failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    if psd:
        vals = _clamp_psd_values(vals, context)
        if abs(vals.sum() - 1.0) > 1e-8:
            raise EigendecompositionError(
                f"{context}: clamped spectrum sums to {vals.sum():.12f}, expected 1"
            )
    return EigenSpectrum(vals, vecs, k_computed=m.n)


def eig_lanczos_topk(
    m: SymMatrix,
    k: int,
    s: int | None = None,
    seed: int = 0,
    psd: bool = False,
    max_restarts: int = 16,
    ritz_tol: float = 1e-10,
) -> EigenSpectrum:
    """Top-k eigenvalues (and Ritz vectors) via Lanczos iteration.

    `s` is the initial Krylov budget, default min(2k + 8, n).  Flat spectra
    (typical of large trace-normalized Grams) need more than that to hit the
    accuracy contract, so after `s` steps the basis keeps growing until the
    top-k Ritz values stabilize to `ritz_tol` relative change between
    checkpoints (or the basis spans the whole space).  The basis is fully
    reorthogonalized every step; a breakdown injects a fresh seeded probe
    orthogonal to the accumulated basis, capped at `max_restarts`.
    """
    n = m.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}] for an {n}x{n} matrix, got {k}")
    if s is None:
        s = min(2 * k + 8, n)
    s = int(min(max(s, k), n))
    A = m.data
    scale = max(1.0, float(np.abs(A).max()) * n)
    breakdown_tol = 1e-13 * scale

    rng = np.random.default_rng(seed)
    Q = np.zeros((n, n))
    dim = 0
    restarts = 0

    def fresh_probe():
        for _ in range(32):
            v = rng.standard_normal(n)
            if dim:
                v -= Q[:, :dim] @ (Q[:, :dim].T @ v)
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                return v / nv
        raise EigendecompositionError("Lanczos could not draw a probe outside the current basis")

    def ritz(dim):
        B = Q[:, :dim]
        T = B.T @ A @ B
        w, u = np.linalg.eigh((T + T.T) / 2.0)
        order = np.argsort(w)[::-1][:k]
        return w[order].copy(), B @ u[:, order]

    q = fresh_probe()
    q_prev = np.zeros(n)
    beta = 0.0
    prev_vals = None
    next_check = s
    while dim < n:
        Q[:, dim] = q
        dim += 1
        u = A @ q
        r = u - (q @ u) * q - beta * q_prev
        # Full reorthogonalization, applied twice for good measure.
        r -= Q[:, :dim] @ (Q[:, :dim].T @ r)
        r -= Q[:, :dim] @ (Q[:, :dim].T @ r)
        beta = float(np.linalg.norm(r))
        if dim >= next_check and dim >= k:
            vals, _ = ritz(dim)
            if prev_vals is not None:
                denom = np.maximum(np.abs(prev_vals), 1e-300)
                if float((np.abs(vals - prev_vals) / denom).max()) <= ritz_tol:
                    break
            prev_vals = vals
            next_check = dim + max(k, 4)
        if beta <= breakdown_tol:
            if dim >= n:
                break
            restarts += 1
            if restarts > max_restarts:
                raise EigendecompositionError(
                    f"Lanczos breakdown persisted after {max_restarts} probe restarts"
                )
            q = fresh_probe()
            q_prev = np.zeros(n)
            beta = 0.0
        else:
            q_prev = Q[:, dim - 1]
            q = r / beta

    vals, vecs = ritz(dim)
    if psd:
        vals = _clamp_psd_values(vals, "lanczos spectrum")
    return EigenSpectrum(vals, vecs, k_computed=k)


def hadamard_normalized(a: SymMatrix, b: SymMatrix) -> SymMatrix:
    """Entrywise product of two trace-normalized PSD matrices, renormalized
    to unit trace.  A vanishing trace means both batches collapsed to
    numerically identical joint structure and is reported as an error."""
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} vs {b.n}")
    h = a.data * b.data
    t = float(np.trace(h))
    if t <= 1e-15:
        raise DegenerateJointError(
            f"trace of Hadamard product is {t:.3e}; joint Gram is degenerate"
        )
    return SymMatrix(h / t)
