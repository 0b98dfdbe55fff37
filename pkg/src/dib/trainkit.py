"""Adam optimizer, the joint training loop, evaluation metrics, and the
decline statistic used by the robustness benchmarks.

One training step assembles the whole graph: per-modality variational
encoding, the per-modality information/task terms, bottleneck fusion, the
multimodal encoding and its term, then a single backward pass and an Adam
update with two learning-rate groups (the text encoder versus everything
else).  All randomness of a run flows from one master seed: epoch-level
shuffling, reparameterization noise and dropout masks are drawn from
per-epoch generators spawned deterministically, so a (seed, config,
dataset) triple reproduces its logs bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Dataset, bin_centers, bin_seven
from .entropy import KernelConfig
from .model import DibModel, ModalitySpec
from .objective import LossBreakdown, multi_lrib_loss, total_loss, uni_lrib_loss


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_encoder: float = 1e-5
    lr_model: float = 2e-5
    batch_size: int = 32
    epochs: int = 50
    dropout: float = 0.5
    hidden: int = 50
    heads: int = 5
    fusion_layers: int = 3
    bottleneck_len: int = 2
    alpha: float = 1.9
    k_rank: int = 10
    bandwidth_rule: str = "top5"
    sigma2: float = 0.0  # used only when bandwidth_rule == "fixed"
    beta_uni: float = 1e-5
    beta_multi: float = 1e-5
    task: str = "regression"
    classes: int = 2
    dominant: str = "t"
    text_modality: str = "t"
    gamma_init: float = 0.1
    mi_on_samples: bool = True
    disable_uni_lrib: tuple = ()
    disable_multi_lrib: bool = False
    disable_all_lrib: bool = False
    drop_modalities: tuple = ()
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    split_fractions: tuple = (0.6, 0.2, 0.2)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise TrainingError("batch_size must be >= 2 (Gram matrices need n >= 2)")
        if min(self.lr_encoder, self.lr_model) <= 0 or self.epochs < 1:
            raise TrainingError("learning rates must be positive and epochs >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(f"dropout must be in [0, 1), got {self.dropout}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise TrainingError(f"split fractions must sum to 1, got {self.split_fractions}")

    def kernel_config(self) -> KernelConfig:
        if self.bandwidth_rule == "fixed":
            return KernelConfig(self.alpha, self.k_rank, "fixed", self.sigma2)
        return KernelConfig(self.alpha, self.k_rank, "top5", None)


# --- optimizer ----------------------------------------------------------------


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; pure function of its inputs."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.state: dict[str, tuple] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr_for):
        self.t += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m, v = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
            p.data, m, v = adam_step(
                p.data, g, m, v, self.t, lr_for(name), self.beta1, self.beta2, self.eps
            )
            self.state[name] = (m, v)


# --- metrics -------------------------------------------------------------------


@dataclass
class MetricsReport:
    acc2: float
    acc7: float
    f1_weighted: float
    mae: float
    pearson_corr: float
    degenerate_corr: bool = False

    def as_dict(self) -> dict:
        return {
            "acc2": self.acc2,
            "acc7": self.acc7,
            "f1_weighted": self.f1_weighted,
            "mae": self.mae,
            "pearson_corr": self.pearson_corr,
            "degenerate_corr": self.degenerate_corr,
        }


def pearson(x, y) -> tuple[float, bool]:
    """Pearson correlation; zero-variance input reports (0.0, degenerate)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    vx = x - x.mean()
    vy = y - y.mean()
    denom = np.sqrt(np.sum(vx * vx) * np.sum(vy * vy))
    if denom < 1e-12:
        return 0.0, True
    return float(np.sum(vx * vy) / denom), False


def _ranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    ranks[order] = np.arange(1, len(values) + 1, dtype=np.float64)
    # average ranks across ties
    for v in np.unique(values):
        tie = values == v
        if tie.sum() > 1:
            ranks[tie] = ranks[tie].mean()
    return ranks


def spearman(x, y) -> float:
    rho, _ = pearson(_ranks(x), _ranks(y))
    return rho


def f1_weighted(y_true, y_pred, classes) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    total = len(y_true)
    if total == 0:
        return 0.0
    score = 0.0
    for c in classes:
        support = int(np.sum(y_true == c))
        if support == 0:
            continue
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = support - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        score += (support / total) * f1
    return score


def metrics_from_predictions(preds: np.ndarray, labels: np.ndarray, task: str, classes: int = 2) -> MetricsReport:
    """All five benchmark metrics from raw predictions.

    Regression scores follow the score-range conventions of the synthetic
    generator: binary accuracy is sign agreement with neutral (label == 0)
    samples excluded, seven-class accuracy is agreement of equal-width bins.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if task == "regression":
        mask = labels != 0.0
        pred_pos = preds[mask] > 0
        true_pos = labels[mask] > 0
        acc2 = float(np.mean(pred_pos == true_pos)) if mask.any() else 0.0
        f1 = f1_weighted(true_pos.astype(int), pred_pos.astype(int), (0, 1))
        acc7 = float(np.mean(bin_seven(preds) == bin_seven(labels)))
        mae = float(np.mean(np.abs(preds - labels)))
        corr, degen = pearson(preds, labels)
    elif task == "classification" and classes == 2:
        cls = (preds > 0.5).astype(int)
        y = labels.astype(int)
        acc2 = float(np.mean(cls == y))
        acc7 = acc2  # binary labels have no 7-bin refinement
        f1 = f1_weighted(y, cls, (0, 1))
        mae = float(np.mean(np.abs(preds - labels)))
        corr, degen = pearson(preds, labels)
    elif task == "classification":
        cls = np.argmax(preds, axis=1)
        y = labels.astype(int)
        acc7 = float(np.mean(cls == y))
        centers_p = bin_centers(cls)
        centers_y = bin_centers(y)
        mask = y != (classes // 2)
        acc2 = (
            float(np.mean((centers_p[mask] > 0) == (centers_y[mask] > 0))) if mask.any() else 0.0
        )
        f1 = f1_weighted(y, cls, tuple(range(classes)))
        mae = float(np.mean(np.abs(centers_p - centers_y)))
        corr, degen = pearson(centers_p, centers_y)
    else:
        raise TrainingError(f"unknown task {task!r}")
    return MetricsReport(acc2, acc7, f1, mae, corr, degen)


def decline(m_old: float, m_new: float) -> float:
    """Percentage drop from m_old to m_new; zero baseline reports 0."""
    if abs(m_old) < 1e-12:
        return 0.0
    return (m_old - m_new) / m_old * 100.0


def average_decline(old: MetricsReport, new: MetricsReport) -> float:
    """Mean decline over the five metrics; MAE's orientation is flipped
    because lower MAE is better."""
    parts = [
        decline(old.acc2, new.acc2),
        decline(old.acc7, new.acc7),
        decline(old.f1_weighted, new.f1_weighted),
        decline(old.pearson_corr, new.pearson_corr),
        -decline(old.mae, new.mae),
    ]
    return float(np.mean(parts))


# --- training loop -------------------------------------------------------------


def split_indices(n: int, seed: int, fractions=(0.6, 0.2, 0.2)):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 424242)))
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def task_for_dataset(ds: Dataset) -> tuple[str, int]:
    kind = ds.meta["spec"]["label_kind"]
    if kind == "continuous":
        return "regression", 2
    if kind == "binary":
        return "classification", 2
    return "classification", 7


def build_model(ds: Dataset, cfg: TrainConfig) -> DibModel:
    specs = [
        ModalitySpec(m["name"], m["seq_len"], m["feat_dim"])
        for m in ds.meta["spec"]["modalities"]
        if m["name"] not in cfg.drop_modalities
    ]
    if not specs:
        raise TrainingError("all modalities dropped")
    names = [m.name for m in specs]
    dominant = cfg.dominant if (cfg.dominant == "all" or cfg.dominant in names) else names[0]
    return DibModel(
        specs,
        hidden=cfg.hidden,
        heads=cfg.heads,
        fusion_layers=cfg.fusion_layers,
        bottleneck_len=cfg.bottleneck_len,
        task=cfg.task,
        classes=cfg.classes,
        dominant=dominant,
        gamma_init=cfg.gamma_init,
        seed=cfg.seed,
    )


def missing_gradients(model: DibModel) -> list[str]:
    return [name for name, p in model.params.items() if p.requires_grad and p.grad is None]


def _dropout_mask(rng, shape, rate):
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate).astype(np.float64)


def build_step_graph(model: DibModel, feats: dict, yb: np.ndarray, cfg: TrainConfig,
                     kcfg: KernelConfig, rng) -> tuple:
    """Assemble one training step's loss graph; returns (total node, breakdown).

    Must run under an active Tape to be differentiable.  All noise (eps,
    dropout masks) is drawn from `rng` in a fixed order.
    """
    n = len(yb)
    uni_parts = {}
    streams = {}
    beta_uni = {}
    for m in model.modalities:
        x = np.asarray(feats[m.name], dtype=np.float64)
        e = Tensor(x)
        eps = rng.standard_normal((n, m.seq_len, model.hidden))
        z, mu, _ = model.encode_unimodal(m.name, e, eps)
        streams[m.name] = z
        pooled_e = x.mean(axis=1)
        pooled_z = ad.mean_pool(z if cfg.mi_on_samples else mu, axis=1)
        mask = _dropout_mask(rng, (n, model.hidden), cfg.dropout)
        yhat_m = model.decode_unimodal(m.name, ad.mean_pool(z, axis=1), mask, cfg.dropout)
        enabled = not cfg.disable_all_lrib and m.name not in cfg.disable_uni_lrib
        uni_parts[m.name] = uni_lrib_loss(
            pooled_e, pooled_z, yhat_m, yb, cfg.beta_uni, kcfg,
            cfg.task, cfg.classes, compression_enabled=enabled,
        )
        beta_uni[m.name] = cfg.beta_uni
    fused, _ = model.fuse(streams)
    eps_mm = rng.standard_normal((n, model.hidden))
    ztilde, mu_mm, _ = model.encode_multimodal(fused, eps_mm)
    mask_mm = _dropout_mask(rng, (n, model.hidden), cfg.dropout)
    yhat = model.decode_multimodal(ztilde, mask_mm, cfg.dropout)
    mm_enabled = not (cfg.disable_all_lrib or cfg.disable_multi_lrib)
    multi_part = multi_lrib_loss(
        fused, ztilde if cfg.mi_on_samples else mu_mm, yhat, yb, cfg.beta_multi,
        kcfg, cfg.task, cfg.classes, compression_enabled=mm_enabled,
    )
    return total_loss(uni_parts, multi_part, beta_uni, cfg.beta_multi)


def training_step(model: DibModel, feats: dict, yb: np.ndarray, cfg: TrainConfig,
                  kcfg: KernelConfig, rng, adam: Adam, lr_for) -> LossBreakdown:
    for p in model.params.values():
        p.zero_grad()
    with Tape() as tape:
        total, breakdown = build_step_graph(model, feats, yb, cfg, kcfg, rng)
    bad = breakdown.first_non_finite()
    if bad is not None:
        raise TrainingError(f"non-finite loss component {bad!r}")
    tape.backward(total)
    grads = {name: p.grad for name, p in model.params.items()}
    adam.step(model.params, grads, lr_for)
    for p in model.params.values():
        if not np.isfinite(p.data).all():
            raise TrainingError("parameters left finite range after optimizer step")
    return breakdown


@dataclass
class TrainResult:
    model: DibModel
    log: list
    best_epoch: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def _batch_slices(index_order, batch_size):
    for start in range(0, len(index_order), batch_size):
        chunk = index_order[start : start + batch_size]
        if len(chunk) >= 2:
            yield chunk


def evaluate(model: DibModel, ds: Dataset, indices, cfg: TrainConfig) -> MetricsReport:
    batch = {m.name: ds.features[m.name][indices] for m in model.modalities}
    preds = model.predict(batch)
    return metrics_from_predictions(preds, ds.labels[indices], cfg.task, cfg.classes)


def train(model: DibModel, ds: Dataset, cfg: TrainConfig, log_path=None) -> TrainResult:
    """Run the joint optimization; returns the best-on-validation model.

    The per-epoch log records the mean loss breakdown over batches and the
    validation metrics.  Written as JSON lines when log_path is given.
    """
    tr, va, te = split_indices(ds.n, cfg.seed, cfg.split_fractions)
    kcfg = cfg.kernel_config()
    adam = Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    enc_prefix = f"enc_{cfg.text_modality}_"

    def lr_for(name):
        return cfg.lr_encoder if name.startswith(enc_prefix) else cfg.lr_model

    log = []
    best_score = -np.inf
    best_epoch = -1
    best_snapshot = model.copy_params()
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7700 + epoch)))
            order = tr[rng.permutation(len(tr))]
            sums: dict[str, float] = {}
            n_batches = 0
            for chunk in _batch_slices(order, cfg.batch_size):
                feats = {m.name: ds.features[m.name][chunk] for m in model.modalities}
                bd = training_step(model, feats, ds.labels[chunk], cfg, kcfg, rng, adam, lr_for)
                if epoch == 0 and n_batches == 0:
                    missing = missing_gradients(model)
                    if missing:
                        raise TrainingError(f"parameters without gradients: {missing}")
                for key, value in bd.to_json_dict().items():
                    sums[key] = sums.get(key, 0.0) + value
                n_batches += 1
            if n_batches == 0:
                raise TrainingError("training split yields no batch of size >= 2")
            val = evaluate(model, ds, va, cfg)
            record = {
                "epoch": epoch,
                "loss": {k: v / n_batches for k, v in sums.items()},
                "val": val.as_dict(),
            }
            log.append(record)
            if fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            score = -val.mae if cfg.task == "regression" else val.acc2
            if score > best_score:
                best_score = score
                best_epoch = epoch
                best_snapshot = model.copy_params()
    finally:
        if fh:
            fh.close()
    model.restore_params(best_snapshot)
    return TrainResult(model, log, best_epoch, tr, va, te)


def aggregate_metrics(reports) -> dict:
    """Per-metric mean and standard deviation over seeds."""
    out = {}
    for name in ("acc2", "acc7", "f1_weighted", "mae", "pearson_corr"):
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
