"""Frozen classical feature extractors: PCA, tensor-train network, MLP.

All extractors map R^D -> R^U and are immutable once built.  The trainable
ones are fitted together with a throwaway linear-softmax head on a source
dataset and the head is discarded.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .qsim import make_rng
from .vqc import sigmoid_phi

log = logging.getLogger(__name__)

KINDS = ("pca", "ttn", "mlp")


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss."""


def _freeze(arrays: dict) -> dict:
    out = {}
    for name, arr in arrays.items():
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        out[name] = arr
    return out


def params_checksum(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class FrozenExtractor:
    kind: str
    input_dim: int
    output_dim: int
    params: dict = field(repr=False)
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    frozen: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        object.__setattr__(self, "params", _freeze(self.params))

    def checksum(self) -> str:
        return params_checksum(self.params)

    def apply(self, x) -> np.ndarray:
        return apply_extractor(self, x)

    def apply_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected (N, {self.input_dim}) inputs, got {X.shape}")
        return _FORWARD[self.kind](self.params, self.config, X)


def apply_extractor(e: FrozenExtractor, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (e.input_dim,):
        raise ValueError(f"extractor expects input of length {e.input_dim}, got shape {x.shape}")
    return e.apply_batch(x[None, :])[0]


# ------------------------------------------------------------------------- PCA


def fit_pca(data, k: int) -> FrozenExtractor:
    """Top-``k`` principal components of ``data`` (N x D).

    Components come out in descending-variance order; each is signed so its
    largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    N, D = data.shape
    if k > D:
        raise ValueError(f"cannot keep {k} components of {D}-dimensional data")
    if k < 1 or N < k:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={N}")
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = s**2 / max(N - 1, 1)
    comps = vt[:k]
    if comps.shape[0] < k:  # fewer samples than requested directions
        raise ValueError(f"only {comps.shape[0]} components available from {N} samples")
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    notes = []
    if np.any(eigvals[:k] <= 1e-12 * max(eigvals[0], 1e-300)) or eigvals[0] == 0:
        msg = "degenerate data: some retained components have zero variance"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    eig = np.zeros(k)
    eig[: min(k, eigvals.size)] = eigvals[:k]
    return FrozenExtractor(
        "pca", D, k,
        {"mean": mean, "components": comps, "eigenvalues": eig},
        provenance={"fit": "pca", "n_samples": N, "warnings": notes},
    )


def _pca_forward(params, config, X):
    return (X - params["mean"]) @ params["components"].T


# ------------------------------------------------------------------ tensor train


@dataclass(frozen=True)
class TtnSpec:
    """Tensor-train (TT-matrix) representation of a linear map R^D -> R^U.

    Core ``k`` has shape ``(rank[k], input_modes[k], output_modes[k], rank[k+1])``;
    boundary ranks are 1.  Inputs shorter than ``prod(input_modes)`` are
    zero-padded.
    """

    input_modes: tuple
    output_modes: tuple
    ranks: tuple
    cores: tuple = field(repr=False)

    def __post_init__(self):
        K = len(self.input_modes)
        if len(self.output_modes) != K or len(self.ranks) != K + 1 or len(self.cores) != K:
            raise ValueError("input_modes, output_modes, cores need one entry per core; ranks K+1")
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ValueError(f"boundary ranks must be 1, got {self.ranks}")
        for k, core in enumerate(self.cores):
            want = (self.ranks[k], self.input_modes[k], self.output_modes[k], self.ranks[k + 1])
            if np.shape(core) != want:
                raise ValueError(f"core {k} has shape {np.shape(core)}, expected {want} (rank mismatch)")

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_modes))

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_modes))

    @classmethod
    def random(cls, input_modes, output_modes, rank: int, seed: int,
               mean: float = 0.0, std: Optional[float] = None) -> "TtnSpec":
        K = len(input_modes)
        ranks = (1,) + (rank,) * (K - 1) + (1,)
        rng = make_rng(seed, 0x77)
        cores = []
        for k in range(K):
            shape = (ranks[k], input_modes[k], output_modes[k], ranks[k + 1])
            s = std if std is not None else 1.0 / math.sqrt(ranks[k] * input_modes[k])
            cores.append(mean + s * rng.standard_normal(shape))
        return cls(tuple(input_modes), tuple(output_modes), ranks, tuple(cores))

    def dense_matrix(self) -> np.ndarray:
        """Explicit ``(prod(input_modes), U)`` matrix; test oracle for small specs."""
        K = len(self.cores)
        # full[i1, u1, ..., iK, uK] by chaining one core at a time
        full = self.cores[0][0]  # (n1, m1, r1)
        for k in range(1, K):
            full = np.tensordot(full, self.cores[k], axes=([-1], [0]))
        full = full[..., 0]
        axes = list(range(0, 2 * K, 2)) + list(range(1, 2 * K, 2))
        return full.transpose(axes).reshape(self.input_size, self.output_size)


def _pad(X: np.ndarray, size: int) -> np.ndarray:
    if X.shape[1] > size:
        raise ValueError(f"input of length {X.shape[1]} exceeds factorized size {size}")
    if X.shape[1] == size:
        return X
    return np.pad(X, ((0, 0), (0, size - X.shape[1])))


def _tt_contract(cores, input_modes, X, keep=False):
    """Left-to-right contraction of ``X`` (N x prod n) with TT-matrix cores.

    The running tensor is ``(N, outputs so far, rank, remaining input)``.
    """
    N = X.shape[0]
    t = X.reshape(N, 1, 1, -1)
    saved = []
    for core, n in zip(cores, input_modes):
        _, Mp, r, rest = t.shape
        t5 = t.reshape(N, Mp, r, n, rest // n)
        if keep:
            saved.append(t5)
        out = np.einsum("npaiq,aimc->npmcq", t5, core, optimize=True)
        t = out.reshape(N, Mp * core.shape[2], core.shape[3], rest // n)
    return t.reshape(N, -1), saved


def ttn_forward(spec: TtnSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y, _ = _tt_contract(spec.cores, spec.input_modes, _pad(x[None, :], spec.input_size))
    return y[0]


def _tt_backward(cores, saved, g):
    """Gradients wrt each core given ``g = dL/dy`` (N x U)."""
    N = g.shape[0]
    grads = [None] * len(cores)
    gt = g.reshape(N, -1, 1, 1)
    for k in reversed(range(len(cores))):
        t5 = saved[k]
        core = cores[k]
        Mp, rest = t5.shape[1], t5.shape[4]
        g5 = gt.reshape(N, Mp, core.shape[2], core.shape[3], rest)
        grads[k] = np.einsum("npaiq,npmcq->aimc", t5, g5, optimize=True)
        gt = np.einsum("npmcq,aimc->npaiq", g5, core, optimize=True).reshape(N, Mp, core.shape[0], -1)
    return grads


def kmer_lift(X: np.ndarray, alphabet: int, window: int) -> np.ndarray:
    """k-mer occurrence tensor of one-hot sequences, flattened to ``alphabet**window``.

    Row ``n`` is the sum over sliding windows of the outer product of the
    window's one-hot columns, i.e. a histogram of window contents.
    """
    N = X.shape[0]
    L = X.shape[1] // alphabet
    onehot = X.reshape(N, L, alphabet)
    idx = onehot.argmax(axis=2)
    valid = onehot.max(axis=2) > 0
    codes = np.zeros((N, L - window + 1), dtype=np.int64)
    ok = np.ones((N, L - window + 1), dtype=bool)
    for j in range(window):
        codes = codes * alphabet + idx[:, j:j + L - window + 1]
        ok &= valid[:, j:j + L - window + 1]
    out = np.zeros((N, alphabet**window))
    rows = np.broadcast_to(np.arange(N)[:, None], codes.shape)
    np.add.at(out, (rows[ok], codes[ok]), 1.0)
    return out


def _ttn_lift(config, X):
    if config.get("lift", "none") == "kmer":
        return kmer_lift(X, config["alphabet"], config["window"])
    return X


def _ttn_cores(params, config):
    return [params[f"core{k}"] for k in range(len(config["input_modes"]))]


def _ttn_forward(params, config, X):
    Z = _pad(_ttn_lift(config, X), int(np.prod(config["input_modes"])))
    y, _ = _tt_contract(_ttn_cores(params, config), config["input_modes"], Z)
    return y + params["bias"]


def ttn_spec_of(e: FrozenExtractor) -> TtnSpec:
    cores = _ttn_cores(e.params, e.config)
    ranks = tuple(c.shape[0] for c in cores) + (1,)
    return TtnSpec(tuple(e.config["input_modes"]), tuple(e.config["output_modes"]), ranks, tuple(cores))


def factorize(n: int, parts: int) -> tuple:
    """Near-balanced factorization of ``n`` (or the next integer that has one)."""
    while True:
        f = _balanced_factors(n, parts)
        if f is not None:
            return f
        n += 1


def _balanced_factors(n, parts):
    if parts == 1:
        return (n,)
    target = n ** (1.0 / parts)
    cands = [d for d in range(2, n) if n % d == 0]
    if not cands:
        return None
    best = None
    for d in sorted(cands, key=lambda d: abs(d - target)):
        rest = _balanced_factors(n // d, parts - 1)
        if rest is not None:
            best = tuple(sorted((d,) + rest))
            break
    return best


# ------------------------------------------------------------------------- MLP


def _mlp_forward(params, config, X, keep=False):
    acts = [X]
    h = X
    n_hidden = len(config["hidden"])
    for i in range(n_hidden):
        h = np.tanh(h @ params[f"W{i}"] + params[f"b{i}"])
        acts.append(h)
    out = h @ params[f"W{n_hidden}"] + params[f"b{n_hidden}"]
    return (out, acts) if keep else out


def _mlp_backward(params, config, acts, g):
    n_hidden = len(config["hidden"])
    grads = {}
    for i in reversed(range(n_hidden + 1)):
        grads[f"W{i}"] = acts[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        if i > 0:
            g = (g @ params[f"W{i}"].T) * (1.0 - acts[i] ** 2)
    return grads


def init_mlp(input_dim: int, hidden: Sequence[int], output_dim: int, seed: int) -> dict:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(seed, 0x31)
    sizes = [input_dim, *hidden, output_dim]
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = math.sqrt(6.0 / (a + b))
        params[f"W{i}"] = rng.uniform(-lim, lim, size=(a, b))
        params[f"b{i}"] = np.zeros(b)
    return params


_FORWARD = {
    "pca": _pca_forward,
    "ttn": _ttn_forward,
    "mlp": lambda p, c, X: _mlp_forward(p, c, X),
}


# ---------------------------------------------------------------- pre-training


def init_ttn(input_dim: int, output_dim: int, seed: int, rank: int = 3, lift: str = "none",
             alphabet: int = 4, window: int = 7, n_cores: Optional[int] = None):
    """Initial parameters and config of a TTN extractor."""
    if lift == "kmer":
        input_modes = (alphabet,) * window
        init_mean, init_std = 0.3, 0.5
    else:
        input_modes = factorize(input_dim, n_cores or 4)
        init_mean, init_std = 0.0, None
    out_modes = _spread_output(output_dim, len(input_modes))
    spec = TtnSpec.random(input_modes, out_modes, rank, seed, mean=init_mean, std=init_std)
    params = {f"core{k}": c for k, c in enumerate(spec.cores)}
    params["bias"] = np.zeros(output_dim)
    config = {"input_modes": list(input_modes), "output_modes": list(out_modes), "rank": rank, "lift": lift}
    if lift == "kmer":
        config.update(alphabet=alphabet, window=window)
    return params, config


def _spread_output(output_dim: int, K: int) -> tuple:
    """Prime factors of ``output_dim`` spread over the first cores, padded with 1s."""
    factors, n, d = [], output_dim, 2
    while n > 1:
        while n % d == 0:
            factors.append(d)
            n //= d
        d += 1
    while len(factors) > K:
        factors = sorted(factors)
        factors = [factors[0] * factors[1]] + factors[2:]
    return tuple(factors) + (1,) * (K - len(factors))


def _feature_grads(kind, params, config, X):
    """Forward pass returning features and a closure mapping dL/dfeatures to param grads."""
    if kind == "mlp":
        out, acts = _mlp_forward(params, config, X, keep=True)
        return out, lambda g: _mlp_backward(params, config, acts, g)
    Z = _pad(_ttn_lift(config, X), int(np.prod(config["input_modes"])))
    cores = _ttn_cores(params, config)
    y, saved = _tt_contract(cores, config["input_modes"], Z, keep=True)
    out = y + params["bias"]

    def back(g):
        grads = {f"core{k}": gk for k, gk in enumerate(_tt_backward(cores, saved, g))}
        grads["bias"] = g.sum(axis=0)
        return grads

    return out, back


def source_loss_and_grads(kind, params, config, head, X, y):
    """Mean CE of head(phi(extractor(X))) and gradients for extractor and head.

    The head reads the sigmoid-squashed features, the same squashing the
    circuit encoding applies downstream.
    """
    feats, back = _feature_grads(kind, params, config, X)
    s = sigmoid_phi(feats)
    logits = s @ head["W"] + head["b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    head_grads = {"W": s.T @ g, "b": g.sum(axis=0)}
    g_feat = (g @ head["W"].T) * s * (1.0 - s)
    return loss, back(g_feat), head_grads, np.argmax(logp, axis=1)


def pretrain_extractor(kind: str, source, head_dim: int = 2, epochs: int = 20, lr: float = 0.05,
                       seed: int = 0, output_dim: int = 8, batch_size: int = 32,
                       hidden: Sequence[int] = (64, 32), rank: int = 3, lift: str = "none",
                       window: int = 7) -> FrozenExtractor:
    """Fit extractor + linear-softmax head by minibatch SGD on the source set, keep the extractor.

    ``provenance['loss_history']`` holds the full-source loss before training
    (entry 0) and after each epoch.
    """
    if kind not in ("mlp", "ttn"):
        raise ValueError(f"pretrain_extractor handles mlp or ttn, got {kind!r}")
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    X = source.x.astype(np.float64)
    y = source.labels.astype(np.int64)
    if np.any(y >= head_dim):
        raise ValueError(f"labels exceed head width {head_dim}")
    D = X.shape[1]
    if kind == "mlp":
        params = init_mlp(D, hidden, output_dim, seed)
        config = {"hidden": list(hidden)}
    else:
        params, config = init_ttn(D, output_dim, seed, rank=rank, lift=lift, window=window)
    rng = make_rng(seed, 0x9E)
    lim = math.sqrt(6.0 / (output_dim + head_dim))
    head = {"W": rng.uniform(-lim, lim, size=(output_dim, head_dim)), "b": np.zeros(head_dim)}

    def full_loss():
        losses, correct = [], 0
        for start in range(0, len(y), 512):
            sl = slice(start, start + 512)
            loss, _, _, pred = source_loss_and_grads(kind, params, config, head, X[sl], y[sl])
            losses.append(loss * (pred.size))
            correct += int((pred == y[sl]).sum())
        return sum(losses) / len(y), correct / len(y)

    history = [full_loss()[0]]
    acc = None
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            b = order[start:start + batch_size]
            loss, grads, hgrads, _ = source_loss_and_grads(kind, params, config, head, X[b], y[b])
            if not np.isfinite(loss):
                raise NumericalAbort(f"non-finite source loss at epoch {epoch}, step {start // batch_size}")
            for name, g in grads.items():
                params[name] = params[name] - lr * g
            for name, g in hgrads.items():
                head[name] = head[name] - lr * g
        loss, acc = full_loss()
        if not np.isfinite(loss):
            raise NumericalAbort(f"non-finite source loss after epoch {epoch}")
        history.append(loss)
        log.info("pretrain %s epoch %d loss %.4f acc %.4f", kind, epoch, loss, acc)
    provenance = {
        "source": source.descriptor,
        "source_size": len(source),
        "epochs": epochs,
        "lr": lr,
        "batch_size": batch_size,
        "seed": seed,
        "head_dim": head_dim,
        "loss_history": [float(v) for v in history],
        "final_source_loss": float(history[-1]),
        "final_source_accuracy": None if acc is None else float(acc),
    }
    return FrozenExtractor(kind, D, output_dim, params, config=config, provenance=provenance)
