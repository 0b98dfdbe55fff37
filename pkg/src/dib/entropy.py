"""Low-rank Renyi information measures over kernel Gram matrices.

Given a batch of n feature vectors, a Gaussian kernel produces a similarity
matrix K with unit diagonal; dividing by n yields the trace-normalized Gram
matrix A whose eigenspectrum plays the role of a probability distribution.
The alpha-order entropy is computed from the top-k eigenvalues plus an
averaged residual eigenvalue

    H = 1/(1-alpha) * log2( sum_{i<=k} l_i^alpha + (n-k) * l_r^alpha ),
    l_r = max(0, (1 - sum_{i<=k} l_i) / (n - k)),

so the dominant spectral structure is kept and the noise-prone tail is
flattened into a single average.  At k = n-1 the residual equals the last
eigenvalue exactly and the truncated value coincides with the full-spectrum
entropy.  Joint entropy uses the trace-normalized Hadamard product of two
Grams; conditional entropy and mutual information follow by the usual
identities.  All logs are base 2, so results are in bits.

Gradients with respect to the input batch use the eigenvalue differential
dl_i = v_i' dA v_i, chained through the Gaussian kernel with the bandwidth
treated as a constant of the batch (the bandwidth selection rule is not
differentiated).  Eigenvalue clusters tighter than 1e-8 get an averaged
gradient over the cluster's invariant subspace, which keeps the result
deterministic and basis-independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import EigenSpectrum, SymMatrix, eig_dense, hadamard_normalized

LN2 = math.log(2.0)

SIGMA2_FLOOR = 1e-12
EIG_CLUSTER_TOL = 1e-8


class EntropyDomainError(RuntimeError):
    """Entropy argument left its valid domain; signals corrupted input."""


class DegenerateBatchWarning(UserWarning):
    """All pairwise distances in a batch are zero; bandwidth floored."""


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian-kernel entropy settings.

    alpha: Renyi order, > 0 and away from 1.
    k_rank: spectrum truncation rank (must satisfy 1 <= k <= n-1 at use time).
    bandwidth_rule: "top5" (mean of the 5 smallest positive pairwise squared
        distances in the batch) or "fixed" (sigma2 given explicitly).
    """

    alpha: float = 1.9
    k_rank: int = 10
    bandwidth_rule: str = "top5"
    sigma2: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0.0 and abs(self.alpha - 1.0) >= 1e-6):
            raise ValueError(f"alpha must be > 0 and away from 1, got {self.alpha}")
        if self.k_rank < 1:
            raise ValueError(f"k_rank must be >= 1, got {self.k_rank}")
        if self.bandwidth_rule not in ("top5", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.sigma2 is None or not self.sigma2 > 0.0:
                raise ValueError("fixed bandwidth requires sigma2 > 0")

    def effective_k(self, n: int) -> int:
        return min(self.k_rank, n - 1)


class GramMatrix:
    """Trace-normalized PSD similarity matrix over a batch.

    For the Gaussian kernel every diagonal entry equals 1/n and the trace is
    exactly 1; both are checked at construction.
    """

    __slots__ = ("base", "n")

    def __init__(self, base: SymMatrix):
        n = base.n
        if abs(float(np.trace(base.data)) - 1.0) > 1e-12:
            raise ValueError("Gram matrix must have unit trace")
        if np.abs(np.diag(base.data) - 1.0 / n).max() > 1e-12:
            raise ValueError("Gram matrix diagonal must equal 1/n")
        self.base = base
        self.n = n


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def bandwidth_sigma2(x: np.ndarray, cfg: KernelConfig) -> float:
    """Resolve the kernel bandwidth sigma^2 for a batch under cfg's rule."""
    if cfg.bandwidth_rule == "fixed":
        return float(cfg.sigma2)
    d2 = pairwise_sq_dists(x)
    iu = np.triu_indices(d2.shape[0], k=1)
    pos = np.sort(d2[iu])
    pos = pos[pos > 0.0]
    if pos.size == 0:
        warnings.warn(
            "all pairwise distances are zero; bandwidth floored at 1e-12",
            DegenerateBatchWarning,
            stacklevel=2,
        )
        return SIGMA2_FLOOR
    return max(float(pos[: min(5, pos.size)].mean()), SIGMA2_FLOOR)


def kernel_matrix(x: np.ndarray, sigma2: float) -> np.ndarray:
    k = np.exp(-pairwise_sq_dists(x) / (2.0 * sigma2))
    np.fill_diagonal(k, 1.0)
    return k


def gram_from_batch(x: np.ndarray, cfg: KernelConfig, sigma2: float | None = None) -> GramMatrix:
    """Trace-normalized Gaussian Gram matrix of a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need a 2-d batch with n >= 2 rows, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("batch contains non-finite values")
    if sigma2 is None:
        sigma2 = bandwidth_sigma2(x, cfg)
    return GramMatrix(SymMatrix(kernel_matrix(x, sigma2) / x.shape[0]))


def _validate_entropy(h: float, n: int, context: str) -> float:
    bound = math.log2(n)
    if not np.isfinite(h) or h < -1e-9 or h > bound + 1e-9:
        raise EntropyDomainError(
            f"{context}: entropy {h!r} outside [0, log2({n})]; upstream input is corrupted"
        )
    return float(h)


def renyi_entropy_full(spec: EigenSpectrum, cfg: KernelConfig) -> float:
    """Full-spectrum matrix-based entropy in bits (the k = n reference)."""
    vals = np.maximum(spec.values, 0.0)
    s = float(np.sum(vals**cfg.alpha))
    if s <= 0.0:
        raise EntropyDomainError(f"entropy argument {s!r} is non-positive")
    h = math.log2(s) / (1.0 - cfg.alpha)
    return _validate_entropy(h, len(vals), "full entropy")


def _lowrank_sum(vals: np.ndarray, n: int, k: int, alpha: float) -> tuple[float, float]:
    top = vals[:k]
    lam_r = max(0.0, (1.0 - float(top.sum())) / (n - k))
    s = float(np.sum(top**alpha)) + (n - k) * lam_r**alpha
    return s, lam_r


def renyi_entropy_lowrank(
    spec: EigenSpectrum, n: int, cfg: KernelConfig, k: int | None = None
) -> float:
    """Low-rank entropy in bits from the top-k eigenvalues of a Gram matrix."""
    k = cfg.k_rank if k is None else k
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    if spec.k_computed < k:
        raise ValueError(f"spectrum holds {spec.k_computed} eigenpairs, need {k}")
    vals = np.maximum(spec.values, 0.0)
    s, _ = _lowrank_sum(vals, n, k, cfg.alpha)
    if s <= 0.0:
        raise EntropyDomainError(f"entropy argument {s!r} is non-positive")
    h = math.log2(s) / (1.0 - cfg.alpha)
    return _validate_entropy(h, n, "low-rank entropy")


def gram_entropy(a: GramMatrix, cfg: KernelConfig, k: int | None = None) -> float:
    return renyi_entropy_lowrank(eig_dense(a.base, psd=True, context="gram"), a.n, cfg, k=k)


def joint_entropy(a: GramMatrix, b: GramMatrix, cfg: KernelConfig, k: int | None = None) -> float:
    if a.n != b.n:
        raise ValueError(f"batch size mismatch: {a.n} vs {b.n}")
    joint = hadamard_normalized(a.base, b.base)
    spec = eig_dense(joint, psd=True, context="joint gram")
    return renyi_entropy_lowrank(spec, a.n, cfg, k=k)


def conditional_entropy(a: GramMatrix, b: GramMatrix, cfg: KernelConfig, k: int | None = None) -> float:
    return joint_entropy(a, b, cfg, k=k) - gram_entropy(b, cfg, k=k)


def mutual_information(a: GramMatrix, b: GramMatrix, cfg: KernelConfig, k: int | None = None) -> float:
    return gram_entropy(a, cfg, k=k) + gram_entropy(b, cfg, k=k) - joint_entropy(a, b, cfg, k=k)


def batch_entropy(x: np.ndarray, cfg: KernelConfig, k: int | None = None) -> float:
    """Entropy of a raw batch; builds the Gram matrix internally."""
    a = gram_from_batch(x, cfg)
    return gram_entropy(a, cfg, k=cfg.effective_k(a.n) if k is None else k)


def batch_mutual_information(x: np.ndarray, y: np.ndarray, cfg: KernelConfig, k: int | None = None) -> float:
    a = gram_from_batch(x, cfg)
    b = gram_from_batch(y, cfg)
    return mutual_information(a, b, cfg, k=cfg.effective_k(a.n) if k is None else k)


# --- analytic gradients -----------------------------------------------------


def _pow_alpha_m1(x, alpha: float):
    # x**(alpha-1) with the boundary convention that a (clamped) zero
    # eigenvalue contributes nothing when alpha < 1 would make it blow up.
    if alpha >= 1.0:
        return np.power(x, alpha - 1.0)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    mask = x > 1e-30
    out[mask] = np.power(x[mask], alpha - 1.0)
    return out if out.ndim else float(out)


def _dh_dlambda(vals: np.ndarray, n: int, k: int, alpha: float) -> np.ndarray:
    """dH/dlambda_i over the full spectrum; zero beyond the truncation rank."""
    s, lam_r = _lowrank_sum(vals, n, k, alpha)
    if s <= 0.0:
        raise EntropyDomainError("entropy argument non-positive in gradient")
    coeff = alpha / ((1.0 - alpha) * LN2 * s)
    g = np.zeros(n)
    g[:k] = coeff * (_pow_alpha_m1(vals[:k], alpha) - _pow_alpha_m1(lam_r, alpha))
    return g


def _grad_wrt_gram(spec: EigenSpectrum, n: int, k: int, alpha: float) -> tuple[np.ndarray, bool]:
    """dH/dA from a full spectrum with eigenvectors, cluster-aware."""
    vals = np.maximum(spec.values, 0.0)
    vecs = spec.vectors
    g_lam = _dh_dlambda(vals, n, k, alpha)
    grad = np.zeros((n, n))
    degenerate = False
    i = 0
    while i < n:
        j = i + 1
        while j < n and vals[j - 1] - vals[j] < EIG_CLUSTER_TOL:
            j += 1
        if j - i == 1:
            if g_lam[i] != 0.0:
                v = vecs[:, i]
                grad += g_lam[i] * np.outer(v, v)
        else:
            gbar = float(g_lam[i:j].mean())
            if gbar != 0.0:
                degenerate = True
                vc = vecs[:, i:j]
                grad += gbar * (vc @ vc.T)
        i = j
    return grad, degenerate


def _chain_gram_to_batch(g_gram, kmat, x, sigma2: float) -> np.ndarray:
    """Chain dH/dA through A = K/n and the Gaussian kernel to the batch."""
    n = x.shape[0]
    w = (g_gram / n) * kmat
    np.fill_diagonal(w, 0.0)
    r = w.sum(axis=1)
    return (2.0 / sigma2) * (w @ x - r[:, None] * x)


def entropy_value_and_grad(
    x: np.ndarray, cfg: KernelConfig, k: int | None = None
) -> tuple[float, np.ndarray]:
    """Low-rank entropy of a batch and its gradient with respect to the batch.

    The bandwidth is resolved once on the incoming batch and held constant
    through the differential.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k = cfg.effective_k(n) if k is None else k
    sigma2 = bandwidth_sigma2(x, cfg)
    kmat = kernel_matrix(x, sigma2)
    gram = GramMatrix(SymMatrix(kmat / n))
    spec = eig_dense(gram.base, psd=True, context="gram")
    h = renyi_entropy_lowrank(spec, n, cfg, k=k)
    g_gram, _ = _grad_wrt_gram(spec, n, k, cfg.alpha)
    return h, _chain_gram_to_batch(g_gram, kmat, x, sigma2)


def entropy_grad_wrt_batch(x: np.ndarray, cfg: KernelConfig, k: int | None = None) -> np.ndarray:
    return entropy_value_and_grad(x, cfg, k=k)[1]


def mutual_information_value_and_grads(
    x: np.ndarray, y: np.ndarray, cfg: KernelConfig, k: int | None = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """I(A_x; A_y) and its gradients with respect to both batches.

    I = H(A_x) + H(A_y) - H(joint).  The joint Gram is the trace-normalized
    Hadamard product; for Gaussian-kernel Grams the diagonals are fixed at
    1/n, so the Hadamard trace does not move with the batches and the joint
    chain rule only needs dC/dA_x = (. o A_y)/t.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"batch size mismatch: {n} vs {y.shape[0]}")
    k = cfg.effective_k(n) if k is None else k

    sx = bandwidth_sigma2(x, cfg)
    sy = bandwidth_sigma2(y, cfg)
    kx = kernel_matrix(x, sx)
    ky = kernel_matrix(y, sy)
    ax = kx / n
    ay = ky / n
    raw = ax * ay
    t = float(np.trace(raw))
    if t <= 1e-15:
        raise EntropyDomainError("joint Gram trace vanished; batches collapsed")
    joint = SymMatrix(raw / t)

    spec_x = eig_dense(SymMatrix(ax), psd=True, context="gram(x)")
    spec_y = eig_dense(SymMatrix(ay), psd=True, context="gram(y)")
    spec_j = eig_dense(joint, psd=True, context="joint gram")

    hx = renyi_entropy_lowrank(spec_x, n, cfg, k=k)
    hy = renyi_entropy_lowrank(spec_y, n, cfg, k=k)
    hj = renyi_entropy_lowrank(spec_j, n, cfg, k=k)

    gx_gram, _ = _grad_wrt_gram(spec_x, n, k, cfg.alpha)
    gy_gram, _ = _grad_wrt_gram(spec_y, n, k, cfg.alpha)
    gj_gram, _ = _grad_wrt_gram(spec_j, n, k, cfg.alpha)

    gx_total = gx_gram - (gj_gram * ay) / t
    gy_total = gy_gram - (gj_gram * ax) / t
    gx = _chain_gram_to_batch(gx_total, kx, x, sx)
    gy = _chain_gram_to_batch(gy_total, ky, y, sy)
    return hx + hy - hj, gx, gy
