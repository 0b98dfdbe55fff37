"""Robustness and information-plane benchmark harness.

Protocols, all on the synthetic benchmark data:

* noise: a fixed fraction of text token positions is replaced or swapped
  and unit-variance Gaussian noise is added to the continuous modalities,
  on every split; models are retrained on the corrupted data and the
  average metric decline against their clean run is reported.
* intensity: the same protocol swept over a grid of levels, where the
  level sets both the token fraction and the Gaussian standard deviation.
* missing: whole per-sample modality tensors are zeroed at a sweep of
  rates (masks are nested across rates because they share one seed), and
  the metric curves over the rate are reported.
* beta sweep: the model is retrained at several bottleneck multipliers and
  the converged information-plane point (I(input; representation),
  I(representation; label)) is recorded per beta.

Pairing rule: within one seed, every model variant sees the same data,
the same corruption draw and the same training seed, so per-seed
comparisons across variants are paired.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .data import Dataset, corrupt_gaussian, corrupt_tokens, mask_missing
from .entropy import KernelConfig, batch_mutual_information
from .trainkit import (
    TrainConfig,
    average_decline,
    build_model,
    evaluate,
    spearman,
    train,
)

NOISE_TOKEN_RATE = 0.10
NOISE_GAUSSIAN_STD = 1.0
INTENSITY_LEVELS = (0.06, 0.07, 0.08, 0.09, 0.10)
MISSING_RATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
BETA_GRID = (1e-6, 1e-5, 1e-4, 1e-2)

ABLATION_NO_IB = {"disable_all_lrib": True}


def apply_noise_protocol(ds: Dataset, seed: int, token_rate: float = NOISE_TOKEN_RATE,
                         gaussian_std: float = NOISE_GAUSSIAN_STD,
                         token_modality: str = "t") -> Dataset:
    """Token noise on the discrete-style modality, Gaussian noise elsewhere."""
    out = corrupt_tokens(ds, token_rate, seed, modality=token_modality)
    others = [name for name in ds.features if name != token_modality]
    if others:
        out = corrupt_gaussian(out, others, gaussian_std, seed)
    return out


def run_single(ds: Dataset, cfg: TrainConfig, seed: int):
    """Train one model at one seed; returns (result, test metrics)."""
    cfg = replace(cfg, seed=seed)
    model = build_model(ds, cfg)
    result = train(model, ds, cfg)
    test = evaluate(result.model, ds, result.test_idx, cfg)
    return result, test


def _metrics_job(job):
    ds, cfg, seed = job
    return run_single(ds, cfg, seed)[1]


def _frontier_job(job):
    ds, cfg, seed = job
    result, _ = run_single(ds, cfg, seed)
    return information_plane(result.model, ds, result.test_idx, cfg.kernel_config())


def _map_jobs(fn, jobs, workers: int):
    # results come back in job order regardless of completion order, so a
    # parallel run is bit-identical to a serial one
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def bench_noise(ds: Dataset, cfg: TrainConfig, variants=None,
                token_rate: float = NOISE_TOKEN_RATE,
                gaussian_std: float = NOISE_GAUSSIAN_STD,
                workers: int = 1):
    """Clean vs corrupted retraining for each variant and seed.

    Returns (rows, summary).  Rows carry per-seed per-variant clean and
    corrupted metrics plus the average decline; the summary reports mean
    declines per variant and the paired per-seed win count of the first
    variant over the second.
    """
    if variants is None:
        variants = {"full": {}, "no_ib": dict(ABLATION_NO_IB)}
    jobs = []
    keys = []
    for seed in cfg.seeds:
        noisy = apply_noise_protocol(ds, seed=seed, token_rate=token_rate,
                                     gaussian_std=gaussian_std)
        for name, overrides in variants.items():
            vcfg = replace(cfg, **overrides)
            jobs.append((ds, vcfg, seed))
            jobs.append((noisy, vcfg, seed))
            keys.append((seed, name))
    results = _map_jobs(_metrics_job, jobs, workers)
    rows = []
    declines: dict[str, list[float]] = {name: [] for name in variants}
    for i, (seed, name) in enumerate(keys):
        clean_metrics, noisy_metrics = results[2 * i], results[2 * i + 1]
        avg = average_decline(clean_metrics, noisy_metrics)
        declines[name].append(avg)
        row = {"seed": seed, "variant": name, "avg_decline": avg}
        for key, value in clean_metrics.as_dict().items():
            if key != "degenerate_corr":
                row[f"clean_{key}"] = value
        for key, value in noisy_metrics.as_dict().items():
            if key != "degenerate_corr":
                row[f"noisy_{key}"] = value
        rows.append(row)
    names = list(variants)
    summary = {
        "mean_avg_decline": {name: float(np.mean(declines[name])) for name in names},
        "token_rate": token_rate,
        "gaussian_std": gaussian_std,
        "seeds": list(cfg.seeds),
    }
    if len(names) == 2:
        first, second = names
        wins = sum(1 for a, b in zip(declines[first], declines[second]) if a < b)
        summary["paired_wins"] = {first: wins, "of": len(cfg.seeds)}
    return rows, summary


def bench_intensity(ds: Dataset, cfg: TrainConfig, levels=INTENSITY_LEVELS, workers: int = 1):
    """Average decline per noise-intensity level (mean over seeds)."""
    clean_jobs = [(ds, cfg, seed) for seed in cfg.seeds]
    noisy_jobs = []
    for level in levels:
        for seed in cfg.seeds:
            noisy = apply_noise_protocol(ds, seed=seed, token_rate=level, gaussian_std=level)
            noisy_jobs.append((noisy, cfg, seed))
    results = _map_jobs(_metrics_job, clean_jobs + noisy_jobs, workers)
    clean = dict(zip(cfg.seeds, results[: len(cfg.seeds)]))
    rows = []
    pos = len(cfg.seeds)
    for level in levels:
        per_seed = []
        for seed in cfg.seeds:
            per_seed.append(average_decline(clean[seed], results[pos]))
            pos += 1
        rows.append({
            "level": level,
            "avg_decline_mean": float(np.mean(per_seed)),
            "avg_decline_std": float(np.std(per_seed)),
        })
    summary = {"levels": list(levels), "seeds": list(cfg.seeds)}
    return rows, summary


def bench_missing(ds: Dataset, cfg: TrainConfig, rates=MISSING_RATES,
                  mask_seed: int = 1234, workers: int = 1):
    """Metric curves over the missing-modality rate, mean over seeds.

    Rate 0 is always included as the clean reference.  Each training seed
    gets its own mask draw (seeded mask_seed + seed), and because a draw is
    reused across rates, higher rates strictly extend lower ones within a
    seed; averaging over seeds then also averages over mask draws.
    """
    all_rates = [0.0] + [r for r in rates if r > 0.0]
    jobs = []
    for rate in all_rates:
        for seed in cfg.seeds:
            masked = ds if rate == 0.0 else mask_missing(ds, rate, mask_seed + seed)
            jobs.append((masked, cfg, seed))
    results = _map_jobs(_metrics_job, jobs, workers)
    rows = []
    for i, rate in enumerate(all_rates):
        reports = results[i * len(cfg.seeds) : (i + 1) * len(cfg.seeds)]
        row = {"rate": rate}
        for name in ("acc2", "acc7", "f1_weighted", "mae", "pearson_corr"):
            vals = [getattr(r, name) for r in reports]
            row[name] = float(np.mean(vals))
            row[f"{name}_std"] = float(np.std(vals))
        rows.append(row)
    summary = {"rates": [row["rate"] for row in rows], "seeds": list(cfg.seeds)}
    return rows, summary


def information_plane(model, ds: Dataset, indices, kcfg: KernelConfig):
    """(I(input; representation), I(representation; label)) on a split."""
    batch = {m.name: ds.features[m.name][indices] for m in model.modalities}
    pooled = np.concatenate([batch[m.name].mean(axis=1) for m in model.modalities], axis=1)
    _, ztilde = model.represent(batch)
    labels = ds.labels[indices][:, None]
    n = len(indices)
    k = kcfg.effective_k(n)
    i_xt = batch_mutual_information(pooled, ztilde, kcfg, k=k)
    i_ty = batch_mutual_information(ztilde, labels, kcfg, k=k)
    return i_xt, i_ty


def sweep_beta(ds: Dataset, cfg: TrainConfig, betas=BETA_GRID, workers: int = 1):
    """Information-plane frontier points per bottleneck multiplier.

    Both the unimodal and multimodal multipliers are set to each grid
    value; points are averaged over the seed list.
    """
    jobs = []
    for beta in betas:
        bcfg = replace(cfg, beta_uni=beta, beta_multi=beta)
        for seed in bcfg.seeds:
            jobs.append((ds, bcfg, seed))
    points = _map_jobs(_frontier_job, jobs, workers)
    rows = []
    for i, beta in enumerate(betas):
        chunk = points[i * len(cfg.seeds) : (i + 1) * len(cfg.seeds)]
        xs, ys = zip(*chunk)
        rows.append({
            "beta": beta,
            "i_xt": float(np.mean(xs)),
            "i_ty": float(np.mean(ys)),
            "i_xt_std": float(np.std(xs)),
            "i_ty_std": float(np.std(ys)),
        })
    rho = spearman([r["i_xt"] for r in rows], [r["i_ty"] for r in rows]) if len(rows) > 1 else 1.0
    summary = {"betas": [r["beta"] for r in rows], "spearman_rho": rho, "seeds": list(cfg.seeds)}
    return rows, summary
