"""Frozen extractor followed by the circuit, with a softmax / cross-entropy readout."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .frontend import FrozenExtractor
from .qsim import Exact, MeasurementMode
from .vqc import CircuitParams, expectations


@dataclass(frozen=True)
class HybridModel:
    extractor: FrozenExtractor
    vqc: CircuitParams
    readout_qubits: tuple = (0, 1)
    mode: MeasurementMode = field(default_factory=Exact)

    def __post_init__(self):
        U = self.vqc.num_qubits
        if self.extractor.output_dim != U:
            raise ValueError(
                f"extractor output dim {self.extractor.output_dim} != circuit qubits {U}"
            )
        a, b = self.readout_qubits
        if a == b or not (0 <= a < U and 0 <= b < U):
            raise ValueError(f"readout qubits {self.readout_qubits} invalid for {U} qubits")
        object.__setattr__(self, "readout_qubits", (int(a), int(b)))

    def features(self, x) -> np.ndarray:
        return self.extractor.apply(x)

    def with_vqc(self, vqc: CircuitParams) -> "HybridModel":
        return replace(self, vqc=vqc)

    def with_mode(self, mode: MeasurementMode) -> "HybridModel":
        return replace(self, mode=mode)


def hybrid_forward(model: HybridModel, x) -> np.ndarray:
    """Two logits: the readout qubits' Z expectations."""
    return hybrid_logits(model, np.asarray(x, dtype=np.float64)[None, :])[0]


def hybrid_logits(model: HybridModel, X) -> np.ndarray:
    """Batched :func:`hybrid_forward`; ``X`` is ``(N, D)``, result ``(N, 2)``."""
    feats = model.extractor.apply_batch(X)
    return expectations(model.vqc, feats, model.mode)[:, list(model.readout_qubits)]


def _check_label(label) -> int:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return int(label)


def softmax_cross_entropy(logits, label) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    label = _check_label(label)
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[label])


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row loss for ``(N, 2)`` logits."""
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(labels)), labels.astype(np.int64)]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: HybridModel, x):
    """``(class, probabilities)``; equal probabilities go to class 0."""
    return predict_logits(hybrid_forward(model, x))


def predict_logits(logits):
    probs = softmax(logits)
    return int(probs[1] > probs[0]), probs


def evaluate(model: HybridModel, dataset, chunk: int = 4096):
    """Mean loss and accuracy over ``dataset`` in sample-index order."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    losses = np.empty(len(dataset))
    correct = 0
    for start in range(0, len(dataset), chunk):
        sl = slice(start, start + chunk)
        logits = hybrid_logits(model, dataset.x[sl])
        labels = dataset.labels[sl]
        losses[sl] = batch_cross_entropy(logits, labels)
        correct += int(((logits[:, 1] > logits[:, 0]).astype(np.uint8) == labels).sum())
    return float(losses.mean()), correct / len(dataset)


def empirical_loss(model: HybridModel, dataset) -> float:
    return evaluate(model, dataset)[0]
