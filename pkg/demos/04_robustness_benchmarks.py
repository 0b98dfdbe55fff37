"""Corruption protocols and a miniature robustness comparison.

Applies token noise, Gaussian feature noise, and missing-modality masking;
then runs a small paired comparison (full objective vs. the ablation with
both information terms disabled) under the noise protocol.  The full-size
benchmark lives behind `dib bench-noise`; this uses reduced settings to
finish in a couple of minutes.
"""

import warnings

import numpy as np

from dib.bench import apply_noise_protocol, bench_noise
from dib.data import SyntheticSpec, corrupt_gaussian, corrupt_tokens, generate, mask_missing
from dib.trainkit import TrainConfig

warnings.simplefilter("ignore")

spec = SyntheticSpec(n_samples=200, seed=7,
                     strengths={"t": 1.0, "a": 0.7, "v": 0.7}, nuisance_std=0.8)
ds = generate(spec)

print("== corruption operators are pure and recorded in metadata ==")
noisy_tokens = corrupt_tokens(ds, rate=0.10, seed=1)
changed = np.any(noisy_tokens.features["t"] != ds.features["t"], axis=2).sum(axis=1)
print("tokens altered per text sequence (rate 0.10, l=12):", changed[:8])

noisy_feats = corrupt_gaussian(ds, ("a", "v"), std=1.0, seed=1)
print("audio feature std before/after:",
      round(ds.features["a"].std(), 3), "->", round(noisy_feats.features["a"].std(), 3))

masked = mask_missing(ds, rate=0.5, seed=1)
print("fraction of samples missing the text modality:",
      np.mean(masked.meta["missing"]["t"]))
print("corruption log:", [c["kind"] for c in masked.meta["corruptions"]])

print("\n== paired noise-protocol comparison (reduced: 2 seeds, 25 epochs) ==")
cfg = TrainConfig(
    epochs=25, lr_encoder=1.5e-4, lr_model=3e-4,
    hidden=50, heads=5, fusion_layers=3, bottleneck_len=2,
    batch_size=16, dropout=0.0, k_rank=10,
    beta_uni=1.0, beta_multi=30.0, seeds=(0, 1),
)
protocol = apply_noise_protocol(ds, seed=0)
print("protocol applied:", [c["kind"] for c in protocol.meta["corruptions"]])
rows, summary = bench_noise(ds, cfg, workers=2)
for row in rows:
    print(f"  seed {row['seed']} {row['variant']:>6}: clean acc2 {row['clean_acc2']:.3f} "
          f"noisy acc2 {row['noisy_acc2']:.3f} avg decline {row['avg_decline']:+.2f}%")
print("mean average decline:", {k: round(v, 2) for k, v in summary["mean_avg_decline"].items()})
