"""Trace the compression/relevance trade-off over the bottleneck multiplier.

Trains at a few multiplier values and records where each converged model
lands in the information plane: I(input; representation) on one axis,
I(representation; label) on the other.  Larger multipliers weight the task
term more, so both coordinates should grow together along a frontier.
Reduced settings (1 seed, short grid) keep this to a few minutes; the full
sweep is `dib sweep-beta`.
"""

import warnings

from dib.bench import sweep_beta
from dib.data import SyntheticSpec, generate
from dib.trainkit import TrainConfig, spearman

warnings.simplefilter("ignore")

spec = SyntheticSpec(n_samples=200, seed=7,
                     strengths={"t": 1.0, "a": 0.7, "v": 0.7}, nuisance_std=0.8)
ds = generate(spec)
cfg = TrainConfig(
    epochs=30, lr_encoder=1.5e-4, lr_model=3e-4,
    hidden=50, heads=5, fusion_layers=3, bottleneck_len=2,
    batch_size=16, dropout=0.0, k_rank=10, seeds=(0,),
)

betas = (1e-6, 1e-4, 1e-2, 1.0)
rows, summary = sweep_beta(ds, cfg, betas=betas, workers=2)
print("beta      I(X;T)   I(T;Y)")
for row in rows:
    print(f"{row['beta']:<8g}  {row['i_xt']:.4f}   {row['i_ty']:.4f}")
print("rank correlation along the frontier:",
      round(spearman([r["i_xt"] for r in rows], [r["i_ty"] for r in rows]), 3))
