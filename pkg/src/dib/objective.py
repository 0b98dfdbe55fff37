"""Bottleneck training losses.

Each unimodal term trades the Gram-based mutual information between the
input embedding batch and its encoded representation against a
task-supervision term; the multimodal term does the same between the fused
representation and its variational re-encoding.  Written for minimization:

    loss_m  = I(E^m; Z^m) + beta_m * Task(yhat^m, y)
    loss_mm = I(Z; Ztilde) + beta  * Task(yhat, y)
    total   = sum_m loss_m + loss_mm

Task supervision is cross-entropy for classification and mean absolute
error for regression; it realizes the variational lower bound on the
relevance term, so minimizing it maximizes the information the
representation keeps about the label.  Token sequences are mean-pooled to
per-sample vectors before any Gram matrix is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .entropy import KernelConfig

PROB_EPS = 1e-12


class ObjectiveError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    """Per-term loss values for one step, with fixed JSON field names."""

    i_comp: dict[str, float] = field(default_factory=dict)
    task: dict[str, float] = field(default_factory=dict)
    i_comp_mm: float = 0.0
    task_mm: float = 0.0
    beta_uni: dict[str, float] = field(default_factory=dict)
    beta_mm: float = 0.0
    total: float = 0.0

    def recompute_total(self) -> float:
        return (
            sum(self.i_comp[m] + self.beta_uni[m] * self.task[m] for m in self.i_comp)
            + self.i_comp_mm
            + self.beta_mm * self.task_mm
        )

    def to_json_dict(self) -> dict[str, float]:
        out = {}
        for m in self.i_comp:
            out[f"i_comp_{m}"] = self.i_comp[m]
            out[f"task_{m}"] = self.task[m]
        out["i_comp_mm"] = self.i_comp_mm
        out["task_mm"] = self.task_mm
        out["total"] = self.total
        return out

    def first_non_finite(self) -> str | None:
        for name, value in self.to_json_dict().items():
            if not np.isfinite(value):
                return name
        return None


def task_loss(yhat: Tensor, y: np.ndarray, task: str, classes: int = 2) -> Tensor:
    """CE (classification) or MAE (regression) as a scalar graph node."""
    y = np.asarray(y)
    n = yhat.shape[0]
    if task == "regression":
        target = Tensor(y.astype(np.float64).reshape(yhat.shape))
        return ad.reduce_mean(ad.abs_(ad.sub(yhat, target)))
    if task == "classification" and classes == 2:
        p = ad.clip(yhat, PROB_EPS, 1.0 - PROB_EPS)
        yv = Tensor(y.astype(np.float64).reshape(yhat.shape))
        one = Tensor(np.ones(yhat.shape))
        ll = ad.add(
            ad.mul(yv, ad.log(p)),
            ad.mul(ad.sub(one, yv), ad.log(ad.sub(one, p))),
        )
        return ad.scalar_mul(ad.reduce_mean(ll), -1.0)
    if task == "classification":
        onehot = np.zeros((n, classes))
        onehot[np.arange(n), y.astype(int)] = 1.0
        p = ad.clip(yhat, PROB_EPS, 1.0)
        picked = ad.mul(Tensor(onehot), ad.log(p))
        return ad.scalar_mul(ad.reduce_sum(picked), -1.0 / n)
    raise ObjectiveError(f"unknown task {task!r}")


def _compression(x_pooled, z_pooled: Tensor, cfg: KernelConfig) -> Tensor:
    n = z_pooled.shape[0]
    batch_cfg_k = cfg.effective_k(n)
    x = x_pooled if isinstance(x_pooled, Tensor) else Tensor(np.asarray(x_pooled))
    return ad.mutual_information_node(x, z_pooled, cfg, k=batch_cfg_k)


def uni_lrib_loss(
    e_pooled: np.ndarray,
    z_pooled: Tensor,
    yhat: Tensor,
    y: np.ndarray,
    beta: float,
    cfg: KernelConfig,
    task: str,
    classes: int = 2,
    compression_enabled: bool = True,
):
    """One modality's loss term; returns (scalar node, i_comp float, task float)."""
    t = task_loss(yhat, y, task, classes)
    if compression_enabled:
        comp = _compression(e_pooled, z_pooled, cfg)
        loss = ad.add(comp, ad.scalar_mul(t, beta))
        return loss, float(comp.data), float(t.data)
    return ad.scalar_mul(t, beta), 0.0, float(t.data)


def multi_lrib_loss(
    z: Tensor,
    ztilde: Tensor,
    yhat: Tensor,
    y: np.ndarray,
    beta: float,
    cfg: KernelConfig,
    task: str,
    classes: int = 2,
    compression_enabled: bool = True,
):
    """Multimodal loss term with the same structure as the unimodal one."""
    t = task_loss(yhat, y, task, classes)
    if compression_enabled:
        comp = _compression(z, ztilde, cfg)
        loss = ad.add(comp, ad.scalar_mul(t, beta))
        return loss, float(comp.data), float(t.data)
    return ad.scalar_mul(t, beta), 0.0, float(t.data)


def total_loss(uni_parts: dict[str, tuple], multi_part: tuple, beta_uni: dict[str, float], beta_mm: float):
    """Sum the per-modality and multimodal terms into one scalar node.

    uni_parts maps modality name to (loss node, i_comp, task) as returned by
    uni_lrib_loss; multi_part is the multi_lrib_loss triple.
    """
    breakdown = LossBreakdown(beta_uni=dict(beta_uni), beta_mm=beta_mm)
    terms = []
    for name, (node, comp, task_val) in uni_parts.items():
        terms.append(node)
        breakdown.i_comp[name] = comp
        breakdown.task[name] = task_val
    node, comp, task_val = multi_part
    terms.append(node)
    breakdown.i_comp_mm = comp
    breakdown.task_mm = task_val
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    breakdown.total = float(total.data)
    return total, breakdown
