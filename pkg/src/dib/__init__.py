"""Low-rank Renyi entropy information bottleneck toolkit.

A numpy library implementing matrix-based information measures over kernel
Gram matrices, a minimal reverse-mode differentiation engine, a multimodal
bottleneck-fusion network trained with a double information-bottleneck
objective, synthetic data with corruption protocols, and a benchmark
harness exposed through the `dib` command line tool.
"""

__version__ = "0.1.0"

from .entropy import KernelConfig, gram_from_batch, batch_entropy, batch_mutual_information
from .linalg import SymMatrix, EigenSpectrum, eig_dense, eig_lanczos_topk, hadamard_normalized
from .model import DibModel, ModalitySpec
from .data import SyntheticSpec, CorruptionSpec, generate
from .trainkit import TrainConfig, train, evaluate, decline

__all__ = [
    "KernelConfig", "gram_from_batch", "batch_entropy", "batch_mutual_information",
    "SymMatrix", "EigenSpectrum", "eig_dense", "eig_lanczos_topk", "hadamard_normalized",
    "DibModel", "ModalitySpec",
    "SyntheticSpec", "CorruptionSpec", "generate",
    "TrainConfig", "train", "evaluate", "decline",
    "__version__",
]
