"""Fine-tuning the circuit on a frozen extractor, plus the error/bound bookkeeping."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .datagen import LabeledDataset
from .frontend import FrozenExtractor, NumericalAbort
from .grad import loss_and_grad, readout_jacobian
from .hybrid import HybridModel, batch_cross_entropy, empirical_loss
from .qsim import Exact, MeasurementMode, Shots, make_rng
from .vqc import CircuitParams, expectations

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc", "grad_norm_mean", "grad_norm_max")


# ------------------------------------------------------------------ bound formulas


def theorem3_lr(R: float, L: float, beta: float, T_sgd: int) -> float:
    """Step size ``R / sqrt(L^2 + beta^2 R^2) / sqrt(T)`` that balances the SGD bound."""
    if T_sgd < 1:
        raise ValueError(f"T_sgd must be >= 1, got {T_sgd}")
    denom = L**2 + beta**2 * R**2
    if denom <= 0:
        raise ValueError("L^2 + beta^2 R^2 must be positive")
    return (1.0 / math.sqrt(T_sgd)) * (R / math.sqrt(denom))


def opt_error_bound(R: float, L: float, beta: float, T_sgd: int) -> float:
    """``beta R^2 + R sqrt((L^2 + beta^2 R^2) / T)``."""
    if T_sgd < 1:
        raise ValueError(f"T_sgd must be >= 1, got {T_sgd}")
    return beta * R**2 + R * math.sqrt((L**2 + beta**2 * R**2) / T_sgd)


@dataclass(frozen=True)
class BoundConstants:
    beta: float
    L: float
    R: float
    C_FX: float
    C_FV: float
    D_A: int
    D_B: int
    M: int
    U: int
    T_sgd: int = 1
    D: Optional[int] = None

    def __post_init__(self):
        for name in ("beta", "L", "R"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("C_FX", "C_FV"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("D_A", "D_B", "M", "U", "T_sgd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive size, got {getattr(self, name)}")
        if self.D is not None and self.D <= 0:
            raise ValueError("D must be a positive size")


def bound_table(c: BoundConstants) -> dict:
    """Unit-constant values of the three error bounds.

    Hidden constants and log factors of the O-tilde forms are set to 1, so the
    numbers are only meaningful for comparing trends.  The circuit-only
    column is included for reference.
    """
    approx = math.sqrt(c.C_FX / c.D_A) + 1.0 / math.sqrt(c.M)
    est = math.sqrt(c.C_FV / c.D_B)
    opt = opt_error_bound(c.R, c.L, c.beta, c.T_sgd)
    rows = {
        "pretrained_plus_vqc": {
            "approximation": {"formula": "sqrt(C_FX/|D_A|) + 1/sqrt(M)", "value": approx},
            "estimation": {"formula": "sqrt(C_FV/|D_B|)", "value": est},
            "optimization": {"formula": "beta*R^2 + R*sqrt((L^2 + beta^2*R^2)/T_sgd)", "value": opt},
        },
        "vqc_only": {
            "approximation": {"formula": "1/sqrt(U) + 1/sqrt(M)", "value": 1 / math.sqrt(c.U) + 1 / math.sqrt(c.M)},
            "estimation": {
                "formula": "sqrt(C_FV/|D|)",
                "value": None if c.D is None else math.sqrt(c.C_FV / c.D),
            },
            "optimization": {"formula": "~0 (under a PL condition)", "value": 0.0},
        },
    }
    return {
        "label": "unit-constant bound values (trend comparison only)",
        "constants": {k: getattr(c, k) for k in c.__dataclass_fields__},
        "theorem3_lr": theorem3_lr(c.R, c.L, c.beta, c.T_sgd) if c.L**2 + c.beta**2 * c.R**2 > 0 else None,
        "bounds": rows,
    }


# ----------------------------------------------------------------- constant probes


def estimate_circuit_constants(params: CircuitParams, features: np.ndarray, observables: Sequence[int],
                               probe_count: int = 8, seed: int = 0, h: float = 1e-4):
    """Empirical ``(beta_hat, L_hat)`` for the readouts ``observables``.

    ``L_hat^2`` is the mean over samples and observables of ``|grad f|^2``.
    For curvature, each (sample, observable) takes the largest
    ``|(grad f(theta + h v) - grad f(theta)) / h|`` over ``probe_count`` random
    unit directions ``v``; ``beta_hat^2`` is the mean of its square.  The probe
    maximum never exceeds the Hessian operator norm.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    observables = list(observables)
    P = params.num_params
    if P == 0:
        return 0.0, 0.0
    rng = make_rng(seed, 0xB7)
    probes = rng.standard_normal((probe_count, P))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    base = params.flat()
    sq_grad, sq_curv = [], []
    for x in features:
        g0 = readout_jacobian(params, x)[:, observables]  # (P, n_obs)
        sq_grad.extend((g0**2).sum(axis=0))
        best = np.zeros(len(observables))
        for v in probes:
            gv = readout_jacobian(params.with_flat(base + h * v), x)[:, observables]
            best = np.maximum(best, np.linalg.norm((gv - g0) / h, axis=0))
        sq_curv.extend(best**2)
    beta_hat = math.sqrt(float(np.mean(sq_curv)))
    L_hat = math.sqrt(float(np.mean(sq_grad)))
    if not (np.isfinite(beta_hat) and np.isfinite(L_hat)):
        raise NumericalAbort("non-finite constant estimate")
    return beta_hat, L_hat


def estimate_constants(model: HybridModel, dataset: LabeledDataset, probe_count: int = 8, seed: int = 0):
    feats = model.extractor.apply_batch(dataset.x)
    return estimate_circuit_constants(model.vqc, feats, model.readout_qubits, probe_count, seed)


# ----------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    """``lr_mode`` is ``"fixed"`` (uses ``lr``) or ``"theorem3"`` (uses R, L, beta)."""

    epochs: int = 30
    lr: float = 0.001
    lr_mode: str = "fixed"
    R: Optional[float] = None
    L: Optional[float] = None
    beta: Optional[float] = None
    batch_size: int = 1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_mode == "fixed":
            if not self.lr >= 0:
                raise ValueError(f"fixed learning rate must be >= 0, got {self.lr}")
        elif self.lr_mode == "theorem3":
            if None in (self.R, self.L, self.beta):
                raise ValueError("theorem3 learning rate needs R, L and beta")
        else:
            raise ValueError(f"unknown lr_mode {self.lr_mode!r}")

    def step_size(self) -> float:
        if self.lr_mode == "theorem3":
            return theorem3_lr(self.R, self.L, self.beta, self.epochs)
        return self.lr

    @property
    def clip_radius(self) -> Optional[float]:
        return self.R if self.lr_mode == "theorem3" else None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    grad_norm_mean: float
    grad_norm_max: float
    wall_time: float = 0.0


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    step_size: float = 0.0
    extractor_checksum: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for r in self.records:
            vals = [str(r.epoch)] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def _eval_features(model: HybridModel, feats: np.ndarray, labels: np.ndarray):
    logits = expectations(model.vqc, feats, model.mode)[:, list(model.readout_qubits)]
    loss = float(batch_cross_entropy(logits, labels).mean())
    acc = float(((logits[:, 1] > logits[:, 0]).astype(np.uint8) == labels).mean())
    return loss, acc


def sgd_train(model: HybridModel, target_train: LabeledDataset, target_test: Optional[LabeledDataset],
              config: TrainConfig, callback: Optional[Callable] = None):
    """Update only the circuit angles by SGD on cross-entropy.

    Per-sample gradients inside a batch are averaged in sample order.  In
    theorem3 mode each update gradient is rescaled to norm ``R`` when longer.
    Returns ``(final_model, trace)``.
    """
    if len(target_train) == 0:
        raise ValueError("empty training set")
    checksum = model.extractor.checksum()
    eta = config.step_size()
    radius = config.clip_radius
    train_feats = model.extractor.apply_batch(target_train.x)
    test_feats = None if target_test is None else model.extractor.apply_batch(target_test.x)
    for name, feats in (("training", train_feats), ("test", test_feats)):
        if feats is not None and not np.all(np.isfinite(feats)):
            raise NumericalAbort(f"non-finite extractor features on the {name} set")
    labels = target_train.labels
    rng = make_rng(config.seed, 0x5D)
    theta = model.vqc.flat()
    params = model.vqc
    readout = model.readout_qubits
    trace = TrainTrace(step_size=eta, extractor_checksum=checksum)
    n = len(target_train)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        norms = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            g = np.zeros_like(theta)
            for i in batch:
                loss, gi = loss_and_grad(params, train_feats[i], int(labels[i]), readout)
                if not np.isfinite(loss):
                    raise NumericalAbort(f"non-finite training loss at epoch {epoch}, sample {int(i)}")
                g += gi
            g /= len(batch)
            norm = float(np.linalg.norm(g))
            norms.append(norm)
            if radius is not None and norm > radius:
                g *= radius / norm
            if eta != 0.0:
                theta = theta - eta * g
                params = params.with_flat(theta)
        current = model.with_vqc(params)
        tr_loss, tr_acc = _eval_features(current, train_feats, labels)
        if test_feats is not None:
            te_loss, te_acc = _eval_features(current, test_feats, target_test.labels)
        else:
            te_loss, te_acc = float("nan"), float("nan")
        if not np.isfinite(tr_loss):
            raise NumericalAbort(f"non-finite training loss after epoch {epoch}")
        rec = EpochRecord(epoch, tr_loss, tr_acc, te_loss, te_acc,
                          float(np.mean(norms)), float(np.max(norms)), time.perf_counter() - t0)
        trace.records.append(rec)
        log.info("epoch %d train %.4f/%.3f test %.4f/%.3f", epoch, tr_loss, tr_acc, te_loss, te_acc)
        if callback is not None:
            callback(rec)
    if model.extractor.checksum() != checksum:
        raise RuntimeError("extractor parameters changed during fine-tuning")
    return model.with_vqc(params), trace


# -------------------------------------------------------------- error decomposition


@dataclass(frozen=True)
class ErrorDecomposition:
    approx_proxy: float
    est_proxy: float
    opt_proxy: float
    train_loss: float
    test_loss: float
    oracle_min_train_loss: float
    notes: dict = field(default_factory=lambda: dict(_DECOMP_NOTES))

    def as_dict(self) -> dict:
        return {
            "label": "empirical proxies, not the bounded quantities themselves",
            "approx_proxy": self.approx_proxy,
            "est_proxy": self.est_proxy,
            "opt_proxy": self.opt_proxy,
            "train_loss": self.train_loss,
            "test_loss": self.test_loss,
            "oracle_min_train_loss": self.oracle_min_train_loss,
            "notes": self.notes,
        }


_DECOMP_NOTES = {
    "approx_proxy": "proxy: lowest training loss reached by a longer oracle run from the same init",
    "est_proxy": "proxy: test loss minus training loss of the final model",
    "opt_proxy": "proxy: final training loss minus the oracle-run minimum",
}


def decompose_errors(model_final: HybridModel, model_init: HybridModel, target_train: LabeledDataset,
                     target_test: LabeledDataset, oracle_config: Optional[TrainConfig] = None,
                     oracle_min: Optional[float] = None) -> ErrorDecomposition:
    """Split the final test loss into approximation / estimation / optimisation proxies.

    The oracle minimum is the smallest training loss seen across a run of
    ``oracle_config`` from ``model_init`` (or the given ``oracle_min``),
    never larger than the final model's own training loss.  The three proxies
    telescope to the test loss.
    """
    train_loss = empirical_loss(model_final, target_train)
    test_loss = empirical_loss(model_final, target_test)
    if oracle_min is None:
        if oracle_config is None:
            raise ValueError("need oracle_config or oracle_min")
        _, otrace = sgd_train(model_init, target_train, None, oracle_config)
        oracle_min = float(otrace.column("train_loss").min())
    oracle_min = min(float(oracle_min), train_loss)
    return ErrorDecomposition(
        approx_proxy=oracle_min,
        est_proxy=test_loss - train_loss,
        opt_proxy=train_loss - oracle_min,
        train_loss=train_loss,
        test_loss=test_loss,
        oracle_min_train_loss=oracle_min,
    )


# -------------------------------------------------------------------------- sweeps


SWEEP_AXES = ("qubits", "target_size", "shots", "epochs")


@dataclass
class SweepBase:
    """Fixed ingredients of a sweep; ``extractor_for(U)`` builds the front end."""

    train: LabeledDataset
    test: LabeledDataset
    extractor_for: Callable[[int], FrozenExtractor]
    config: TrainConfig
    qubits: int = 8
    depth: int = 2
    init_seed: int = 0
    init_scale: float = np.pi
    mode: MeasurementMode = field(default_factory=Exact)


def balanced_head(dataset: LabeledDataset, size: int) -> LabeledDataset:
    """First ``size`` samples in dataset order, taken alternately from each class."""
    idx0 = np.flatnonzero(dataset.labels == 0)
    idx1 = np.flatnonzero(dataset.labels == 1)
    n1 = size // 2
    n0 = size - n1
    if n0 > idx0.size or n1 > idx1.size:
        raise ValueError(f"dataset too small for a balanced subset of {size}")
    return dataset.subset(np.sort(np.concatenate([idx0[:n0], idx1[:n1]])))


def dedupe(values: Sequence) -> list:
    seen, out = set(), []
    for v in values:
        if v in seen:
            continue
        seen.add(v)
        out.append(v)
    if len(out) != len(values):
        warnings.warn(f"duplicate sweep values dropped: {list(values)} -> {out}", stacklevel=2)
    return out


def init_model(extractor: FrozenExtractor, depth: int, seed: int, scale: float = np.pi,
               mode: MeasurementMode = Exact()) -> HybridModel:
    vqc = CircuitParams.random(extractor.output_dim, depth, seed, scale)
    return HybridModel(extractor, vqc, (0, 1), mode)


def run_cell(base: SweepBase, axis: str, value):
    qubits, train, config, mode = base.qubits, base.train, base.config, base.mode
    if axis == "qubits":
        qubits = int(value)
    elif axis == "target_size":
        train = balanced_head(base.train, int(value))
    elif axis == "shots":
        mode = Shots(int(value), base.config.seed)
    elif axis == "epochs":
        config = replace(config, epochs=int(value))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    extractor = base.extractor_for(qubits)
    model = init_model(extractor, base.depth, base.init_seed, base.init_scale, Exact())
    before = extractor.checksum()
    final, trace = sgd_train(model, train, base.test, config)
    last = trace.final()
    row = {
        "axis": axis,
        "value": value,
        "qubits": qubits,
        "target_size": len(train),
        "epochs": config.epochs,
        "train_loss": last.train_loss,
        "train_acc": last.train_acc,
        "test_loss": last.test_loss,
        "test_acc": last.test_acc,
        "est_proxy": last.test_loss - last.train_loss,
        "extractor_unchanged": extractor.checksum() == before,
    }
    if isinstance(mode, Shots):
        shot_model = final.with_mode(mode)
        row["shots_test_loss"] = empirical_loss(shot_model, base.test)
        row["shots_loss_deviation"] = abs(row["shots_test_loss"] - last.test_loss)
    return row, final, trace


def sweep(axis: str, values: Sequence, base: SweepBase) -> list:
    """One training run per value; returns a list of metric rows."""
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in dedupe(list(values)):
        row, _, _ = run_cell(base, axis, v)
        rows.append(row)
    return rows
