"""Synthetic multimodal data with a controllable sentiment signal, plus the
corruption protocols used by the robustness benchmarks.

Each sample carries a latent score s drawn uniformly from [-3, 3].  Every
modality observes s through a fixed token pattern scaled by that modality's
signal strength, on top of a shared label-independent distractor component
and per-token Gaussian nuisance.  Text is the strong channel by default,
audio and visual the weak redundant ones.  Labels derive from s: its sign
(binary), one of 7 equal-width bins (7-class), or s itself (continuous).

Corruptions are pure functions of (dataset, parameters, seed) and never
touch labels; their application order is appended to the dataset metadata.
Token noise replaces or position-swaps a fixed fraction of positions per
text sequence; feature noise adds elementwise Gaussians to the continuous
modalities; missing masking zeroes whole per-sample modality tensors and
records which ones in the metadata.
"""

from __future__ import annotations

import copy
import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import ModalitySpec

LABEL_RANGE = 3.0
N_BINS = 7

DEFAULT_MODALITIES = (
    ModalitySpec("t", 12, 16),
    ModalitySpec("a", 20, 8),
    ModalitySpec("v", 20, 8),
)
DEFAULT_STRENGTHS = {"t": 1.0, "a": 0.4, "v": 0.4}


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 200
    modalities: tuple = DEFAULT_MODALITIES
    strengths: dict = field(default_factory=lambda: dict(DEFAULT_STRENGTHS))
    label_kind: str = "continuous"  # binary | sevenclass | continuous
    nuisance_std: float = 0.3
    distractor_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise DataError("need at least one sample")
        if self.label_kind not in ("binary", "sevenclass", "continuous"):
            raise DataError(f"unknown label kind {self.label_kind!r}")
        for m in self.modalities:
            if self.strengths.get(m.name, 0.0) < 0:
                raise DataError(f"negative strength for modality {m.name!r}")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str  # token-noise | gaussian-noise | missing-mask
    rate: float = 0.0
    intensity: float = 1.0
    modalities: tuple = ()
    splits: tuple = ("train", "val", "test")
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("token-noise", "gaussian-noise", "missing-mask"):
            raise DataError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise DataError(f"rate must be in [0, 1], got {self.rate}")
        if self.intensity < 0.0:
            raise DataError(f"intensity must be >= 0, got {self.intensity}")


class Dataset:
    """In-memory dataset: per-modality tensors (n, l, d), labels, metadata."""

    def __init__(self, features: dict[str, np.ndarray], labels: np.ndarray, meta: dict):
        self.features = features
        self.labels = labels
        self.meta = meta

    @property
    def n(self) -> int:
        return len(self.labels)

    def modality_specs(self):
        return [
            ModalitySpec(name, arr.shape[1], arr.shape[2])
            for name, arr in self.features.items()
        ]

    def clone(self) -> "Dataset":
        return Dataset(
            {k: v.copy() for k, v in self.features.items()},
            self.labels.copy(),
            copy.deepcopy(self.meta),
        )


def bin_seven(values: np.ndarray) -> np.ndarray:
    """Map scores in [-3, 3] to bins 0..6 (equal width)."""
    width = 2.0 * LABEL_RANGE / N_BINS
    idx = np.floor((np.asarray(values, dtype=np.float64) + LABEL_RANGE) / width).astype(int)
    return np.clip(idx, 0, N_BINS - 1)


def bin_centers(idx: np.ndarray) -> np.ndarray:
    width = 2.0 * LABEL_RANGE / N_BINS
    return -LABEL_RANGE + (np.asarray(idx, dtype=np.float64) + 0.5) * width


def generate(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset for the given spec."""
    root = np.random.SeedSequence(spec.seed)
    pattern_rng, sample_rng = (np.random.default_rng(s) for s in root.spawn(2))

    patterns = {}
    distractors = {}
    for m in spec.modalities:
        p = pattern_rng.standard_normal((m.seq_len, m.feat_dim))
        patterns[m.name] = p / np.sqrt(np.mean(p * p))
        d = pattern_rng.standard_normal((m.seq_len, m.feat_dim))
        distractors[m.name] = d / np.sqrt(np.mean(d * d))

    s = sample_rng.uniform(-LABEL_RANGE, LABEL_RANGE, spec.n_samples)
    u = sample_rng.standard_normal(spec.n_samples)

    features = {}
    for m in spec.modalities:
        strength = spec.strengths.get(m.name, 0.0)
        nuisance = sample_rng.standard_normal((spec.n_samples, m.seq_len, m.feat_dim))
        features[m.name] = (
            strength * s[:, None, None] * patterns[m.name][None]
            + spec.distractor_std * u[:, None, None] * distractors[m.name][None]
            + spec.nuisance_std * nuisance
        )

    if spec.label_kind == "binary":
        labels = (s > 0).astype(np.float64)
    elif spec.label_kind == "sevenclass":
        labels = bin_seven(s).astype(np.float64)
    else:
        labels = s.copy()

    meta = {
        "spec": {
            "n_samples": spec.n_samples,
            "modalities": [asdict(m) for m in spec.modalities],
            "strengths": dict(spec.strengths),
            "label_kind": spec.label_kind,
            "nuisance_std": spec.nuisance_std,
            "distractor_std": spec.distractor_std,
            "seed": spec.seed,
        },
        "corruptions": [],
        "missing": {},
    }
    return Dataset(features, labels, meta)


def _eligible(n: int, sample_mask) -> np.ndarray:
    if sample_mask is None:
        return np.arange(n)
    mask = np.asarray(sample_mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(int)


def corrupt_tokens(ds: Dataset, rate: float, seed: int, modality: str = "t", sample_mask=None) -> Dataset:
    """Replace or position-swap round(rate * l) token positions per sequence.

    Replacement tokens are drawn from the dataset's own token pool for the
    modality (the continuous analog of random token replacement); swap
    positions are deranged pairwise among the chosen positions, an odd
    leftover falls back to replacement.
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"rate must be in [0, 1], got {rate}")
    out = ds.clone()
    if rate == 0.0:
        out.meta["corruptions"].append({"kind": "token-noise", "rate": rate, "seed": seed, "modality": modality})
        return out
    arr = out.features[modality]
    n, l, _ = arr.shape
    pool = ds.features[modality].reshape(n * l, -1)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 911)))
    n_alter = int(round(rate * l))
    for i in _eligible(n, sample_mask):
        if n_alter == 0:
            continue
        positions = rng.choice(l, size=n_alter, replace=False)
        swap_flags = rng.random(n_alter) < 0.5
        swaps = positions[swap_flags]
        replaces = list(positions[~swap_flags])
        if len(swaps) % 2 == 1:
            replaces.append(swaps[-1])
            swaps = swaps[:-1]
        for a, b in zip(swaps[0::2], swaps[1::2]):
            arr[i, a], arr[i, b] = arr[i, b].copy(), arr[i, a].copy()
        for p in replaces:
            own = i * l + p
            draw = own
            while draw == own:
                draw = int(rng.integers(0, len(pool)))
            arr[i, p] = pool[draw]
    out.meta["corruptions"].append({"kind": "token-noise", "rate": rate, "seed": seed, "modality": modality})
    return out


def corrupt_gaussian(ds: Dataset, modalities, std: float, seed: int, sample_mask=None) -> Dataset:
    """Add N(0, std^2) elementwise to the named modalities."""
    if std < 0:
        raise DataError(f"std must be >= 0, got {std}")
    out = ds.clone()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 912)))
    idx = _eligible(out.n, sample_mask)
    for name in modalities:
        if std > 0.0:
            noise = rng.standard_normal((len(idx),) + out.features[name].shape[1:])
            out.features[name][idx] += std * noise
    out.meta["corruptions"].append(
        {"kind": "gaussian-noise", "std": std, "seed": seed, "modalities": list(modalities)}
    )
    return out


def mask_missing(ds: Dataset, rate: float, seed: int, modalities=None, sample_mask=None) -> Dataset:
    """Zero whole per-sample modality tensors with probability `rate` each.

    The availability mask lands in meta["missing"][name] as a 0/1 list
    (1 = masked out); the zeroed input is what the model consumes.
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"rate must be in [0, 1], got {rate}")
    out = ds.clone()
    names = list(out.features) if modalities is None else list(modalities)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 913)))
    idx = _eligible(out.n, sample_mask)
    for name in names:
        drop = rng.random(len(idx)) < rate
        out.features[name][idx[drop]] = 0.0
        mask = np.array(out.meta["missing"].get(name, [0] * out.n))
        mask[idx[drop]] = 1
        out.meta["missing"][name] = mask.astype(int).tolist()
    out.meta["corruptions"].append(
        {"kind": "missing-mask", "rate": rate, "seed": seed, "modalities": names}
    )
    return out


# --- on-disk format ----------------------------------------------------------


def write_tensor(path, arr: np.ndarray):
    """Flat binary tensor: u32 rank, u32 dims, then little-endian f64 payload."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        return np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()


def save_dataset(ds: Dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in ds.features.items():
        write_tensor(directory / f"{name}.tensor", arr)
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label"])
        for i, y in enumerate(ds.labels):
            writer.writerow([i, repr(float(y))])
    with open(directory / "meta.json", "w") as fh:
        json.dump(ds.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no dataset at {directory} (missing meta.json)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    features = {}
    for mod in meta["spec"]["modalities"]:
        features[mod["name"]] = read_tensor(directory / f"{mod['name']}.tensor")
    labels = []
    with open(directory / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(float(row["label"]))
    return Dataset(features, np.asarray(labels), meta)
