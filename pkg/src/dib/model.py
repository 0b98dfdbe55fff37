"""The double-bottleneck network.

Per modality, a variational encoder maps the token sequence E^m to a
Gaussian posterior and samples Z^m via the reparameterization trick.  A
short stack of learnable bottleneck embeddings then mediates all
cross-modal exchange: each fusion layer first updates the bottleneck by
attending over the concatenation of the current modality streams, then
lets every stream attend back into the updated bottleneck through a scaled
residual.  After M layers the dominant stream (text by default) is pooled
and passed through a second variational encoder; small MLP decoders map
representations to predictions.

Attention here is the plain projected dot-product form: queries from the
target sequence, keys/values from the source, softmax scaled by
1/sqrt(d_head), heads realized as column blocks of the projections, no
output projection.  With a single head this reduces exactly to the
textbook single-head formula.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"DIBMDL01"
CHECKPOINT_VERSION = 1

LOG_SIGMA_LO = -8.0
LOG_SIGMA_HI = 8.0
LOG_SIGMA_INIT = -2.0


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    seq_len: int
    feat_dim: int

    def __post_init__(self):
        if self.seq_len < 1 or self.feat_dim < 1:
            raise ValueError(f"modality {self.name!r} needs seq_len >= 1 and feat_dim >= 1")


def multihead_attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int):
    """Cross attention (n, lq, h) x (n, lkv, h) -> (n, lq, h).

    Returns (output, attention weights per head); every weight row sums
    to 1 by construction of the softmax.
    """
    h = wq.shape[-1]
    if h % heads != 0:
        raise ModelError(f"hidden width {h} not divisible by {heads} heads")
    dh = h // heads
    q = ad.matmul(q_in, wq)
    k = ad.matmul(kv_in, wk)
    v = ad.matmul(kv_in, wv)
    outs = []
    weights = []
    for i in range(heads):
        cols = (slice(None), slice(None), slice(i * dh, (i + 1) * dh))
        qi, ki, vi = ad.slice_(q, cols), ad.slice_(k, cols), ad.slice_(v, cols)
        scores = ad.matmul(qi, ad.swapaxes_last(ki))
        attn = ad.softmax(scores, axis=-1, scale=1.0 / np.sqrt(dh))
        weights.append(attn)
        outs.append(ad.matmul(attn, vi))
    return concat_or_single(outs), weights


def concat_or_single(parts):
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


class DibModel:
    """Parameter container plus the forward graph builders.

    `task` is "classification" (classes == 2 gives the sigmoid decoder,
    more classes the softmax one) or "regression".  `dominant` names the
    stream pooled for the multimodal representation ("all" pools over the
    concatenation of every stream).
    """

    def __init__(
        self,
        modalities,
        hidden: int = 50,
        heads: int = 5,
        fusion_layers: int = 3,
        bottleneck_len: int = 2,
        task: str = "regression",
        classes: int = 2,
        dominant: str = "t",
        gamma_init: float = 0.1,
        seed: int = 0,
    ):
        self.modalities = list(modalities)
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate modality names: {names}")
        if task not in ("classification", "regression"):
            raise ModelError(f"unknown task {task!r}")
        if dominant != "all" and dominant not in names:
            raise ModelError(f"dominant stream {dominant!r} not among modalities {names}")
        if hidden % heads != 0:
            raise ModelError(f"hidden={hidden} must be divisible by heads={heads}")
        if bottleneck_len < 1:
            raise ModelError("bottleneck length must be >= 1")
        if bottleneck_len >= min(m.seq_len for m in self.modalities):
            raise ModelError("bottleneck must be shorter than every modality sequence")

        self.hidden = hidden
        self.heads = heads
        self.fusion_layers = fusion_layers
        self.bottleneck_len = bottleneck_len
        self.task = task
        self.classes = classes
        self.dominant = dominant
        self.gamma_init = gamma_init
        self.out_dim = 1 if (task == "regression" or classes == 2) else classes

        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.params: dict[str, Tensor] = {}

        def weight(name, fan_in, shape):
            self.params[name] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape), requires_grad=True)

        def bias(name, shape):
            self.params[name] = Tensor(np.zeros(shape), requires_grad=True)

        def variational_head(prefix, fan_in):
            # Start the noise scale small (log sigma ~ -2) so early training
            # is signal-dominated; sigma stays free to grow under the
            # compression pressure.
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, 2 * h))
            w[:, h:] *= 0.1
            b = np.zeros(2 * h)
            b[h:] = LOG_SIGMA_INIT
            self.params[f"{prefix}_w2"] = Tensor(w, requires_grad=True)
            self.params[f"{prefix}_b2"] = Tensor(b, requires_grad=True)

        h = hidden
        for m in self.modalities:
            weight(f"enc_{m.name}_w1", m.feat_dim, (m.feat_dim, h))
            bias(f"enc_{m.name}_b1", (h,))
            variational_head(f"enc_{m.name}", h)
            weight(f"dec_{m.name}_w1", h, (h, h))
            bias(f"dec_{m.name}_b1", (h,))
            weight(f"dec_{m.name}_w2", h, (h, self.out_dim))
            bias(f"dec_{m.name}_b2", (self.out_dim,))
        self.params["bottleneck"] = Tensor(
            rng.normal(0.0, 0.02, (bottleneck_len, h)), requires_grad=True
        )
        # The last layer only redistributes into streams the head consumes;
        # anything else would be parameters with no gradient path.
        for layer in range(fusion_layers):
            for proj in ("wq", "wk", "wv"):
                weight(f"fus{layer}_upd_{proj}", h, (h, h))
            for m in self.redistribute_targets(layer):
                for proj in ("wq", "wk", "wv"):
                    weight(f"fus{layer}_red_{m}_{proj}", h, (h, h))
                self.params[f"fus{layer}_gamma_{m}"] = Tensor(
                    np.full((1,), gamma_init), requires_grad=True
                )
        weight("mm_enc_w1", h, (h, h))
        bias("mm_enc_b1", (h,))
        variational_head("mm_enc", h)
        weight("mm_dec_w1", h, (h, h))
        bias("mm_dec_b1", (h,))
        weight("mm_dec_w2", h, (h, self.out_dim))
        bias("mm_dec_b2", (self.out_dim,))

    def redistribute_targets(self, layer: int) -> list[str]:
        names = [m.name for m in self.modalities]
        if layer < self.fusion_layers - 1 or self.dominant == "all":
            return names
        return [self.dominant]

    # --- forward pieces -------------------------------------------------

    def _variational(self, x: Tensor, w1, b1, w2, b2, eps, stage: str):
        # ReLU is the MLP's hidden nonlinearity; the [mu, log_sigma] head is
        # linear so the encoder can drive sigma below 1 (a ReLU-clamped
        # log_sigma would impose a permanent unit noise floor and make the
        # representation untrainable at this scale).
        pre = ad.relu(ad.add(ad.matmul(x, w1), b1))
        out = ad.add(ad.matmul(pre, w2), b2)
        h = self.hidden
        mu = ad.slice_(out, (Ellipsis, slice(0, h)))
        log_sigma = ad.clip(
            ad.slice_(out, (Ellipsis, slice(h, 2 * h))), LOG_SIGMA_LO, LOG_SIGMA_HI
        )
        if not np.isfinite(mu.data).all() or not np.isfinite(log_sigma.data).all():
            raise ModelError(f"non-finite posterior parameters at {stage}")
        if eps is None:
            z = mu
        else:
            z = ad.gaussian_sample(mu, log_sigma, eps)
        return z, mu, log_sigma

    def encode_unimodal(self, name: str, e: Tensor, eps: np.ndarray | None):
        """(n, l_m, d_m) -> sampled (n, l_m, hidden); eps=None means eval (mu)."""
        p = self.params
        return self._variational(
            e,
            p[f"enc_{name}_w1"], p[f"enc_{name}_b1"],
            p[f"enc_{name}_w2"], p[f"enc_{name}_b2"],
            eps, stage=f"encoder({name})",
        )

    def encode_multimodal(self, z: Tensor, eps: np.ndarray | None):
        p = self.params
        return self._variational(
            z, p["mm_enc_w1"], p["mm_enc_b1"], p["mm_enc_w2"], p["mm_enc_b2"],
            eps, stage="multimodal encoder",
        )

    def bottleneck_update(self, u: Tensor, b: Tensor, layer: int):
        p = self.params
        out, _ = multihead_attention(
            b, u,
            p[f"fus{layer}_upd_wq"], p[f"fus{layer}_upd_wk"], p[f"fus{layer}_upd_wv"],
            self.heads,
        )
        return out

    def modality_redistribute(self, name: str, z: Tensor, b: Tensor, layer: int):
        p = self.params
        attended, _ = multihead_attention(
            z, b,
            p[f"fus{layer}_red_{name}_wq"], p[f"fus{layer}_red_{name}_wk"],
            p[f"fus{layer}_red_{name}_wv"], self.heads,
        )
        return ad.add(z, ad.mul(p[f"fus{layer}_gamma_{name}"], attended))

    def fuse(self, streams: dict[str, Tensor]):
        """Run the fusion stack and pool the dominant stream to (n, hidden)."""
        names = [m.name for m in self.modalities]
        zs = dict(streams)
        n = zs[names[0]].shape[0]

        def unified():
            return zs[names[0]] if len(names) == 1 else ad.concat([zs[nm] for nm in names], axis=1)

        if self.fusion_layers > 0:
            b = ad.expand_batch(self.params["bottleneck"], n)
            for layer in range(self.fusion_layers):
                b = self.bottleneck_update(unified(), b, layer)
                for nm in self.redistribute_targets(layer):
                    zs[nm] = self.modality_redistribute(nm, zs[nm], b, layer)
        pooled = ad.mean_pool(unified() if self.dominant == "all" else zs[self.dominant], axis=1)
        return ad.relu(pooled), zs

    def _decode(self, z: Tensor, w1, b1, w2, b2, mask, rate):
        zin = ad.dropout(z, rate, mask) if mask is not None else z
        hidden = ad.relu(ad.add(ad.matmul(zin, w1), b1))
        out = ad.add(ad.matmul(hidden, w2), b2)
        if self.task == "regression":
            return out
        if self.classes == 2:
            return ad.sigmoid(out)
        return ad.softmax(out, axis=-1)

    def decode_unimodal(self, name: str, z: Tensor, mask=None, rate: float = 0.0):
        p = self.params
        return self._decode(z, p[f"dec_{name}_w1"], p[f"dec_{name}_b1"],
                            p[f"dec_{name}_w2"], p[f"dec_{name}_b2"], mask, rate)

    def decode_multimodal(self, z: Tensor, mask=None, rate: float = 0.0):
        p = self.params
        return self._decode(z, p["mm_dec_w1"], p["mm_dec_b1"],
                            p["mm_dec_w2"], p["mm_dec_b2"], mask, rate)

    # --- whole-model helpers ---------------------------------------------

    def predict(self, batch: dict[str, np.ndarray]) -> np.ndarray:
        """Deterministic eval forward: eps = 0 everywhere, dropout off."""
        streams = {}
        for m in self.modalities:
            z, _, _ = self.encode_unimodal(m.name, Tensor(batch[m.name]), eps=None)
            streams[m.name] = z
        fused, _ = self.fuse(streams)
        ztilde, _, _ = self.encode_multimodal(fused, eps=None)
        out = self.decode_multimodal(ztilde).data
        if self.task == "regression" or self.classes == 2:
            return out[:, 0]
        return out

    def represent(self, batch: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode (fused, multimodal) representations for diagnostics."""
        streams = {}
        for m in self.modalities:
            z, _, _ = self.encode_unimodal(m.name, Tensor(batch[m.name]), eps=None)
            streams[m.name] = z
        fused, _ = self.fuse(streams)
        ztilde, _, _ = self.encode_multimodal(fused, eps=None)
        return fused.data, ztilde.data

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    @staticmethod
    def expected_parameter_count(modalities, hidden, fusion_layers, bottleneck_len, out_dim,
                                 dominant: str = "t") -> int:
        """Closed-form parameter count; linear in fusion depth and modality count."""
        h = hidden
        n_mod = len(modalities)
        enc = sum(m.feat_dim * h + h + 2 * h * h + 2 * h for m in modalities)
        dec = n_mod * (h * h + h + h * out_dim + out_dim)
        n_last = n_mod if dominant == "all" else 1
        redis = ((fusion_layers - 1) * n_mod + n_last) if fusion_layers > 0 else 0
        fusion = fusion_layers * 3 * h * h + redis * (3 * h * h + 1)
        mm = 2 * (h * h + h) + (2 * h * h + 2 * h) + (h * out_dim + out_dim)
        return enc + dec + fusion + bottleneck_len * h + mm

    def config_dict(self) -> dict:
        return {
            "modalities": [
                {"name": m.name, "seq_len": m.seq_len, "feat_dim": m.feat_dim}
                for m in self.modalities
            ],
            "hidden": self.hidden,
            "heads": self.heads,
            "fusion_layers": self.fusion_layers,
            "bottleneck_len": self.bottleneck_len,
            "task": self.task,
            "classes": self.classes,
            "dominant": self.dominant,
            "gamma_init": self.gamma_init,
        }

    # --- checkpoint container --------------------------------------------

    def save(self, path):
        """Versioned binary container; layout documented in the README."""
        header = json.dumps(self.config_dict(), sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(struct.pack("<I", len(self.params)))
            for name, p in self.params.items():
                raw = name.encode("utf-8")
                arr = np.ascontiguousarray(p.data, dtype="<f8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "DibModel":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != CHECKPOINT_MAGIC:
                raise ModelError(f"bad checkpoint magic {magic!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise ModelError(f"unsupported checkpoint version {version}")
            (hlen,) = struct.unpack("<I", fh.read(4))
            cfg = json.loads(fh.read(hlen).decode("utf-8"))
            model = cls(
                [ModalitySpec(**m) for m in cfg["modalities"]],
                hidden=cfg["hidden"],
                heads=cfg["heads"],
                fusion_layers=cfg["fusion_layers"],
                bottleneck_len=cfg["bottleneck_len"],
                task=cfg["task"],
                classes=cfg["classes"],
                dominant=cfg["dominant"],
                gamma_init=cfg["gamma_init"],
            )
            (count,) = struct.unpack("<I", fh.read(4))
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
                n_items = int(np.prod(shape)) if rank else 1
                data = np.frombuffer(fh.read(8 * n_items), dtype="<f8").reshape(shape)
                if name not in model.params:
                    raise ModelError(f"checkpoint tensor {name!r} unknown to this architecture")
                if model.params[name].data.shape != data.shape:
                    raise ModelError(
                        f"checkpoint tensor {name!r} has shape {data.shape}, "
                        f"expected {model.params[name].data.shape}"
                    )
                model.params[name] = Tensor(data.copy(), requires_grad=True)
        return model

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore_params(self, snapshot: dict[str, np.ndarray]):
        for k, arr in snapshot.items():
            self.params[k] = Tensor(arr.copy(), requires_grad=True)
