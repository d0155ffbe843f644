"""On-disk formats: dataset containers (``VQCD``) and model checkpoints (``VQCM``).

Dataset container, little-endian::

    b"VQCD" | version u16 | D u32 | N u32 | condition u8 | split u8
    N records of (D float32, label u8)

plus a JSON descriptor sidecar.  Split code 3 means the records hold a
train block followed by a test block; the sidecar's ``n_train`` says where
the test block starts.

Checkpoint::

    b"VQCM" | version u16 | header length u32 | JSON header | float64 blobs

Every array is stored raw (``<f8``, C order) at the offset named in the
header, so a load reproduces parameters bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .datagen import LabeledDataset, TrainTestSplit
from .frontend import FrozenExtractor
from .hybrid import HybridModel
from .qsim import Exact, Shots
from .vqc import CircuitParams

DATASET_MAGIC = b"VQCD"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"VQCM"
CHECKPOINT_VERSION = 1

_HEADER = struct.Struct("<4sHIIBB")
_CKPT_HEADER = struct.Struct("<4sHI")

CONDITIONS = {"clean": 0, "noisy": 1}
SPLITS = {"source": 0, "train": 1, "test": 2, "train+test": 3}


class FormatError(ValueError):
    """File is not a valid container/checkpoint (bad magic, truncated, inconsistent)."""


class VersionError(FormatError):
    """File was written by an unsupported format version."""


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ------------------------------------------------------------------------ datasets


def _record_dtype(D: int) -> np.dtype:
    return np.dtype([("x", "<f4", (D,)), ("y", "u1")])


def encode_dataset(x: np.ndarray, labels: np.ndarray, condition: str, split: str) -> bytes:
    N, D = x.shape
    head = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, D, N, CONDITIONS[condition], SPLITS[split])
    rec = np.empty(N, dtype=_record_dtype(D))
    rec["x"] = x
    rec["y"] = labels
    return head + rec.tobytes()


def save_dataset(data, path) -> Path:
    """Write a :class:`LabeledDataset` or :class:`TrainTestSplit` plus its ``.json`` sidecar."""
    path = Path(path)
    if isinstance(data, TrainTestSplit):
        x = np.concatenate([data.train.x, data.test.x])
        y = np.concatenate([data.train.labels, data.test.labels])
        split = "train+test"
        desc = dict(data.descriptor, n_train=len(data.train), n_test=len(data.test))
        condition = data.condition
    else:
        x, y, split, condition = data.x, data.labels, data.split, data.condition
        desc = dict(data.descriptor)
    blob = encode_dataset(x, y, condition, split)
    atomic_write(path, blob)
    desc["container"] = {"file": path.name, "sha256": hashlib.sha256(blob).hexdigest(),
                         "split": split, "condition": condition}
    atomic_write_text(descriptor_path(path), dumps_json(desc))
    return path


def descriptor_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_container(path):
    """Raw ``(x, labels, condition, split)`` from a container file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, D, N, cond, split = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise VersionError(f"{path}: dataset format version {version} unsupported (this build reads {DATASET_VERSION})")
    dtype = _record_dtype(D)
    need = _HEADER.size + N * dtype.itemsize
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes for {N} records of dim {D}, found {len(raw)}")
    rec = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size, count=N)
    conds = {v: k for k, v in CONDITIONS.items()}
    splits = {v: k for k, v in SPLITS.items()}
    if cond not in conds or split not in splits:
        raise FormatError(f"{path}: unknown condition/split codes {cond}/{split}")
    if np.any(rec["y"] > 1):
        raise FormatError(f"{path}: labels outside {{0, 1}}")
    return np.array(rec["x"]), np.array(rec["y"]), conds[cond], splits[split]


def load_dataset(path):
    """Inverse of :func:`save_dataset`."""
    x, y, condition, split = read_container(path)
    dpath = descriptor_path(path)
    desc = json.loads(dpath.read_text()) if dpath.exists() else {}
    if split == "train+test":
        if "n_train" not in desc:
            raise FormatError(f"{path}: train+test container without n_train in its descriptor")
        k = int(desc["n_train"])
        return TrainTestSplit(
            LabeledDataset(x[:k], y[:k], "train", condition, desc),
            LabeledDataset(x[k:], y[k:], "test", condition, desc),
            desc,
        )
    return LabeledDataset(x, y, split, condition, desc)


# ---------------------------------------------------------------------- checkpoints


class _Blobs:
    def __init__(self):
        self.parts = []
        self.offset = 0

    def add(self, arr) -> dict:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        ref = {"shape": list(arr.shape), "offset": self.offset, "nbytes": arr.nbytes}
        self.parts.append(arr.tobytes())
        self.offset += arr.nbytes
        return ref


def _extractor_header(e: FrozenExtractor, blobs: _Blobs) -> dict:
    return {
        "kind": e.kind,
        "input_dim": e.input_dim,
        "output_dim": e.output_dim,
        "config": e.config,
        "provenance": e.provenance,
        "arrays": {name: blobs.add(arr) for name, arr in sorted(e.params.items())},
    }


def encode_checkpoint(obj) -> bytes:
    """Serialize a :class:`FrozenExtractor` or a :class:`HybridModel`."""
    blobs = _Blobs()
    if isinstance(obj, FrozenExtractor):
        header = {"model": "extractor", "extractor": _extractor_header(obj, blobs)}
    elif isinstance(obj, HybridModel):
        mode = {"kind": "exact"} if isinstance(obj.mode, Exact) else {"kind": "shots", "M": obj.mode.M, "seed": obj.mode.seed}
        header = {
            "model": "hybrid",
            "extractor": _extractor_header(obj.extractor, blobs),
            "vqc": {"num_qubits": obj.vqc.num_qubits, "depth": obj.vqc.depth, "angles": blobs.add(obj.vqc.angles)},
            "readout_qubits": list(obj.readout_qubits),
            "mode": mode,
        }
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    header["format_version"] = CHECKPOINT_VERSION
    text = json.dumps(header, sort_keys=True, default=_json_default).encode("utf-8")
    return _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text)) + text + b"".join(blobs.parts)


def save_checkpoint(obj, path) -> Path:
    atomic_write(path, encode_checkpoint(obj))
    return Path(path)


def _array(payload: bytes, ref: dict, path) -> np.ndarray:
    start, n = ref["offset"], ref["nbytes"]
    if start + n > len(payload):
        raise FormatError(f"{path}: checkpoint truncated (array at {start}+{n} beyond {len(payload)} bytes)")
    arr = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=start)
    return arr.reshape(ref["shape"]).astype(np.float64)


def _extractor_from(h: dict, payload: bytes, path) -> FrozenExtractor:
    params = {name: _array(payload, ref, path) for name, ref in h["arrays"].items()}
    return FrozenExtractor(h["kind"], h["input_dim"], h["output_dim"], params,
                           config=h["config"], provenance=h["provenance"])


def load_checkpoint(path, expect_qubits=None):
    """Load an extractor or hybrid model; ``expect_qubits`` checks the output width."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"{path}: checkpoint format version {version} is not supported by this build "
            f"(reads version {CHECKPOINT_VERSION}); upgrade the tool or re-export the checkpoint"
        )
    end = _CKPT_HEADER.size + hlen
    if len(raw) < end:
        raise FormatError(f"{path}: checkpoint truncated inside its header")
    try:
        header = json.loads(raw[_CKPT_HEADER.size:end].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable checkpoint header ({exc})") from None
    payload = raw[end:]
    arrays = list(header["extractor"]["arrays"].values())
    if header["model"] == "hybrid":
        arrays.append(header["vqc"]["angles"])
    total = sum(ref["nbytes"] for ref in arrays)
    if len(payload) != total:
        raise FormatError(f"{path}: checkpoint payload is {len(payload)} bytes, header declares {total}")
    extractor = _extractor_from(header["extractor"], payload, path)
    if expect_qubits is not None and extractor.output_dim != expect_qubits:
        raise DimensionMismatch(
            f"{path}: extractor output dim is {extractor.output_dim} but the run expects U={expect_qubits}"
        )
    if header["model"] == "extractor":
        return extractor
    v = header["vqc"]
    vqc = CircuitParams(v["num_qubits"], v["depth"], _array(payload, v["angles"], path))
    m = header["mode"]
    mode = Exact() if m["kind"] == "exact" else Shots(m["M"], m["seed"])
    return HybridModel(extractor, vqc, tuple(header["readout_qubits"]), mode)


class DimensionMismatch(ValueError):
    """Checkpoint width disagrees with the requested qubit count."""
