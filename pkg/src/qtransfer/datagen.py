"""Synthetic benchmark data: charge-stability diagrams and TFBS-style DNA sequences.

Every sample is generated from its own counter-based stream
``make_rng(master_seed, stream, index)`` so datasets can be regenerated
bit-identically from their descriptor, in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .qsim import make_rng

GRID = 50
SEQ_LEN = 101
BASES = "ACGT"
DEFAULT_MOTIF = "TGACTCA"
TRAIN_FRACTION = 0.9

# Shape parameters of the rendered diagrams.  They are copied into every
# descriptor so the exact generator configuration travels with the data.
DOT_PARAMS = {
    "grid": GRID,
    "single_slope": [-1.4, -0.7],
    "single_count": [3, 6],
    "double_steep_slope": [-4.0, -2.0],
    "double_shallow_slope": [-0.5, -0.25],
    "double_count": [3, 5],
    "line_width": [1.0, 2.0],
    "anticrossing_gap": 2.5,
    "anticrossing_segment": 3.0,
    "noise_sigma": 0.15,
    "jitter_amplitude": [0.5, 1.5],
    "background_tilt": 0.2,
    "background_offset": 0.1,
}

_STREAM = {"clean": 0, "noisy": 1, "tfbs": 2}
_KIND_CODE = {"single": 0, "double": 1}


@dataclass
class LabeledDataset:
    """Samples ``x`` (N x D, float32) with binary ``labels``.

    ``split`` is one of source/train/test, ``condition`` clean/noisy.
    """

    x: np.ndarray
    labels: np.ndarray
    split: str = "train"
    condition: str = "clean"
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.x.ndim != 2 or self.x.shape[0] != self.labels.shape[0]:
            raise ValueError(f"x shape {self.x.shape} incompatible with {self.labels.shape[0]} labels")
        if np.any(self.labels > 1):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, index, split: Optional[str] = None) -> "LabeledDataset":
        index = np.asarray(index)
        desc = dict(self.descriptor, subset_of=self.split, subset_size=int(index.size))
        return LabeledDataset(self.x[index], self.labels[index], split or self.split, self.condition, desc)


@dataclass
class TrainTestSplit:
    train: LabeledDataset
    test: LabeledDataset
    descriptor: dict = field(default_factory=dict)
    sequences: Optional[list] = field(default=None, repr=False)

    @property
    def condition(self) -> str:
        return self.train.condition


# ------------------------------------------------------------------ dot diagrams


@dataclass
class DotDiagram:
    pixels: np.ndarray
    label: int


def _line_intensity(xx, yy, slope, offset, width, jitter=None):
    # vertical offset y - (slope x + b), converted to perpendicular distance
    shift = 0.0 if jitter is None else jitter(xx)
    d = (yy - slope * xx - offset - shift) / np.sqrt(1.0 + slope**2)
    return np.exp(-(d**2) / (2 * width**2))


def _family_offsets(rng, slope, count):
    """Offsets ``b`` of ``count`` parallel lines crossing the grid, jittered spacing."""
    corners = np.array([0.0, GRID - 1])
    xs, ys = np.meshgrid(corners, corners)
    b = (ys - slope * xs).ravel()
    lo, hi = b.min(), b.max()
    spacing = (hi - lo) / (count + 1)
    base = lo + spacing * np.arange(1, count + 1)
    return base + rng.uniform(-0.3, 0.3, size=count) * spacing


def _make_jitter(rng, noisy):
    if not noisy:
        return None
    amp = rng.uniform(*DOT_PARAMS["jitter_amplitude"])
    freq = rng.uniform(0.1, 0.4)
    phase = rng.uniform(0, 2 * np.pi)
    return lambda xx: amp * np.sin(freq * xx + phase)


def gen_dot_diagram(kind: str, condition: str, seed) -> DotDiagram:
    """Render one 50x50 diagram.

    The clean geometry depends only on ``(kind, seed)``; a noisy diagram with
    the same seed is the clean one plus jitter, pixel noise and a tilted
    background, clipped to [0, 1].
    """
    if kind not in _KIND_CODE or condition not in ("clean", "noisy"):
        raise ValueError(f"bad diagram kind/condition {kind!r}/{condition!r}")
    key = seed if isinstance(seed, tuple) else (seed,)
    geom = make_rng(*key, _KIND_CODE[kind])
    noise = make_rng(*key, _KIND_CODE[kind], 7)
    noisy = condition == "noisy"
    yy, xx = np.mgrid[0:GRID, 0:GRID].astype(np.float64)

    # noisy line jitter is drawn from its own stream so the geometry is shared
    def family(slope_range, count_range):
        slope = geom.uniform(*slope_range)
        count = int(geom.integers(count_range[0], count_range[1] + 1))
        offsets = _family_offsets(geom, slope, count)
        widths = geom.uniform(*DOT_PARAMS["line_width"], size=count)
        img = np.zeros_like(xx)
        for b, w in zip(offsets, widths):
            img = np.maximum(img, _line_intensity(xx, yy, slope, b, w, _make_jitter(noise, noisy)))
        return img, slope, offsets

    if kind == "single":
        img, _, _ = family(DOT_PARAMS["single_slope"], DOT_PARAMS["single_count"])
    else:
        a, sa, ba = family(DOT_PARAMS["double_steep_slope"], DOT_PARAMS["double_count"])
        b, sb, bb = family(DOT_PARAMS["double_shallow_slope"], DOT_PARAMS["double_count"])
        img = np.maximum(a, b)
        gap = DOT_PARAMS["anticrossing_gap"]
        seg = DOT_PARAMS["anticrossing_segment"]
        for oa in ba:
            for ob in bb:
                # intersection of y = sa x + oa and y = sb x + ob
                x0 = (ob - oa) / (sa - sb)
                y0 = sa * x0 + oa
                if not (-gap <= x0 <= GRID - 1 + gap and -gap <= y0 <= GRID - 1 + gap):
                    continue
                r2 = (xx - x0) ** 2 + (yy - y0) ** 2
                img *= 1.0 - np.exp(-r2 / (2 * (gap / 1.5) ** 2))
                # short bridge along the (1, 1) diagonal joining the split triple points
                t = ((xx - x0) + (yy - y0)) / np.sqrt(2)
                d = ((xx - x0) - (yy - y0)) / np.sqrt(2)
                bridge = np.exp(-(d**2) / 2.0) * (np.abs(t) <= seg)
                img = np.maximum(img, bridge)
    if noisy:
        tilt = DOT_PARAMS["background_tilt"]
        bg = (
            noise.uniform(0, DOT_PARAMS["background_offset"])
            + noise.uniform(-tilt, tilt) * xx / (GRID - 1)
            + noise.uniform(-tilt, tilt) * yy / (GRID - 1)
        )
        img = img + bg + noise.normal(0.0, DOT_PARAMS["noise_sigma"], size=img.shape)
    pixels = np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return DotDiagram(pixels, _KIND_CODE[kind])


def orientation_coherence(pixels: np.ndarray, quantile: float = 0.8) -> float:
    """Doubled-angle mean resultant length of the strongest image gradients.

    1.0 means every strong edge shares one orientation (one line family);
    crossing families pull it down.
    """
    gy, gx = np.gradient(np.asarray(pixels, dtype=np.float64))
    mag = np.hypot(gx, gy)
    strong = mag >= np.quantile(mag, quantile)
    if not strong.any() or mag.max() == 0:
        return 0.0
    theta = np.arctan2(gy[strong], gx[strong])
    return float(np.abs(np.mean(np.exp(2j * theta))))


def _stratified_split(labels: np.ndarray, rng: np.random.Generator):
    """Train gets ``floor(0.9 n)`` samples, class counts differing by at most one."""
    n = labels.size
    n_train = int(np.floor(TRAIN_FRACTION * n + 1e-9))
    idx0 = rng.permutation(np.flatnonzero(labels == 0))
    idx1 = rng.permutation(np.flatnonzero(labels == 1))
    # larger class first so both train and test stay balanced
    first, second = (idx0, idx1) if idx0.size >= idx1.size else (idx1, idx0)
    take_first = (n_train + 1) // 2
    take_second = n_train - take_first
    if take_second > second.size:
        take_second = second.size
        take_first = n_train - take_second
    train = np.concatenate([first[:take_first], second[:take_second]])
    test = np.concatenate([first[take_first:], second[take_second:]])
    return rng.permutation(train), rng.permutation(test)


def _finish_split(x, labels, condition, descriptor, split_seed) -> TrainTestSplit:
    rng = make_rng(*split_seed)
    tr, te = _stratified_split(labels, rng)
    desc = dict(descriptor, n_train=int(tr.size), n_test=int(te.size))
    full = LabeledDataset(x, labels, "train", condition, desc)
    return TrainTestSplit(full.subset(tr, "train"), full.subset(te, "test"), desc)


def gen_dot_condition(n: int, condition: str, seed: int) -> TrainTestSplit:
    """``n`` diagrams (half single, half double) of one condition, split 90/10."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be an even integer >= 2, got {n}")
    stream = _STREAM[condition]
    labels = np.repeat(np.array([0, 1], dtype=np.uint8), n // 2)
    x = np.empty((n, GRID * GRID), dtype=np.float32)
    for i, lab in enumerate(labels):
        kind = "single" if lab == 0 else "double"
        x[i] = gen_dot_diagram(kind, condition, (seed, stream, i)).pixels.ravel()
    descriptor = {
        "generator": "dots",
        "n": n,
        "seed": seed,
        "condition": condition,
        "params": DOT_PARAMS,
        "sample_seed_rule": "make_rng(seed, stream, index, kind) with stream clean=0 noisy=1",
    }
    return _finish_split(x, labels, condition, descriptor, (seed, stream, 0x5917))


def gen_dot_dataset(n_per_condition: int = 2000, seed: int = 0):
    """``(clean, noisy)`` splits with ``n_per_condition`` diagrams each."""
    return gen_dot_condition(n_per_condition, "clean", seed), gen_dot_condition(n_per_condition, "noisy", seed)


# --------------------------------------------------------------------- DNA / TFBS


_BASE_INDEX = {b: i for i, b in enumerate(BASES)}


def one_hot_encode_dna(seq: str) -> np.ndarray:
    """Position-major one-hot: entry ``4 p + index(base)`` is 1, base order A, C, G, T."""
    if len(seq) != SEQ_LEN:
        raise ValueError(f"sequence must have length {SEQ_LEN}, got {len(seq)}")
    try:
        idx = np.fromiter((_BASE_INDEX[b] for b in seq), dtype=np.int64, count=SEQ_LEN)
    except KeyError as exc:
        raise ValueError(f"invalid base {exc.args[0]!r}; alphabet is {BASES}") from None
    out = np.zeros(4 * SEQ_LEN, dtype=np.float64)
    out[4 * np.arange(SEQ_LEN) + idx] = 1.0
    return out


def _background(rng, gc: float, length: int) -> np.ndarray:
    p = np.array([(1 - gc) / 2, gc / 2, gc / 2, (1 - gc) / 2])
    return rng.choice(4, size=length, p=p)


def gen_tfbs_sequence(label: int, motif: str, background_gc: float, rng, mutation_rate: float = 0.2) -> str:
    bases = _background(rng, background_gc, SEQ_LEN)
    if label == 1:
        planted = np.array([_BASE_INDEX[b] for b in motif])
        if rng.random() < mutation_rate:
            # point mutation: one motif position redrawn uniformly from ACGT
            planted[rng.integers(len(motif))] = rng.integers(4)
        pos = rng.integers(0, SEQ_LEN - len(motif) + 1)
        bases[pos:pos + len(motif)] = planted
    return "".join(BASES[i] for i in bases)


def gen_tfbs_dataset(n: int = 2000, motif: str = DEFAULT_MOTIF, background_gc: float = 0.5,
                     seed: int = 0, mutation_rate: float = 0.2) -> TrainTestSplit:
    """Balanced motif / no-motif sequences, one-hot encoded, split 90/10."""
    if len(motif) > SEQ_LEN:
        raise ValueError(f"motif of length {len(motif)} longer than the {SEQ_LEN}-base sequence")
    if len(motif) > 20:
        raise ValueError(f"motif length must be <= 20, got {len(motif)}")
    if set(motif) - set(BASES):
        raise ValueError(f"motif {motif!r} has characters outside {BASES}")
    if not 0 < background_gc < 1:
        raise ValueError(f"background_gc must be in (0, 1), got {background_gc}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    n_pos = n // 2
    labels = np.array([1] * n_pos + [0] * (n - n_pos), dtype=np.uint8)
    x = np.empty((n, 4 * SEQ_LEN), dtype=np.float32)
    seqs = []
    for i, lab in enumerate(labels):
        seq = gen_tfbs_sequence(int(lab), motif, background_gc, make_rng(seed, _STREAM["tfbs"], i), mutation_rate)
        seqs.append(seq)
        x[i] = one_hot_encode_dna(seq)
    descriptor = {
        "generator": "tfbs",
        "n": n,
        "seed": seed,
        "motif": motif,
        "background_gc": background_gc,
        "mutation_rate": mutation_rate,
        "condition": "clean",
        "sample_seed_rule": "make_rng(seed, 2, index)",
    }
    split = _finish_split(x, labels, "clean", descriptor, (seed, _STREAM["tfbs"], 0x5917))
    split.sequences = seqs  # generation order, not split order
    return split


def regenerate(descriptor: dict) -> TrainTestSplit:
    """Rebuild a dataset from its descriptor."""
    gen = descriptor.get("generator")
    if gen == "dots":
        return gen_dot_condition(descriptor["n"], descriptor["condition"], descriptor["seed"])
    if gen == "tfbs":
        return gen_tfbs_dataset(descriptor["n"], descriptor["motif"], descriptor["background_gc"],
                                descriptor["seed"], descriptor.get("mutation_rate", 0.2))
    raise ValueError(f"descriptor has unknown generator {gen!r}")
