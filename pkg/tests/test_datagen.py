import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtransfer.datagen import (
    BASES,
    DEFAULT_MOTIF,
    GRID,
    SEQ_LEN,
    gen_dot_condition,
    gen_dot_dataset,
    gen_dot_diagram,
    gen_tfbs_dataset,
    gen_tfbs_sequence,
    one_hot_encode_dna,
    orientation_coherence,
    regenerate,
)
from qtransfer.qsim import make_rng


@pytest.fixture(scope="module")
def clean2000():
    return gen_dot_condition(2000, "clean", 0)


def test_diagram_shape_and_range():
    for kind in ("single", "double"):
        for cond in ("clean", "noisy"):
            d = gen_dot_diagram(kind, cond, 3)
            assert d.pixels.shape == (GRID, GRID)
            assert d.pixels.min() >= 0 and d.pixels.max() <= 1
            assert d.label == (kind == "double")


def test_diagram_deterministic():
    a = gen_dot_diagram("double", "noisy", 11)
    b = gen_dot_diagram("double", "noisy", 11)
    assert np.array_equal(a.pixels, b.pixels)


def test_single_dot_structure_check():
    # one line family -> strong edges share an orientation; two families do not
    single = [orientation_coherence(gen_dot_diagram("single", "clean", s).pixels) for s in range(100)]
    double = [orientation_coherence(gen_dot_diagram("double", "clean", s).pixels) for s in range(100)]
    assert min(single) >= 0.95
    assert max(double) < min(single)


def test_noise_calibration():
    diffs = []
    for s in range(100):
        for kind in ("single", "double"):
            clean = gen_dot_diagram(kind, "clean", s).pixels
            noisy = gen_dot_diagram(kind, "noisy", s).pixels
            diffs.append(np.abs(noisy - clean).mean())
    assert min(diffs) > 0
    assert 0.05 < np.mean(diffs) < 0.3


def test_dataset_sizes(clean2000):
    assert len(clean2000.train) == 1800 and len(clean2000.test) == 200
    labels = np.concatenate([clean2000.train.labels, clean2000.test.labels])
    assert np.bincount(labels).tolist() == [1000, 1000]
    for part in (clean2000.train, clean2000.test):
        counts = np.bincount(part.labels, minlength=2)
        assert abs(counts[0] - counts[1]) <= 1
    assert clean2000.train.dim == 2500
    assert clean2000.train.x.min() >= 0 and clean2000.train.x.max() <= 1


def test_small_n_rule():
    s = gen_dot_condition(4, "clean", 1)
    assert len(s.train) == 3 and len(s.test) == 1
    assert np.bincount(np.concatenate([s.train.labels, s.test.labels])).tolist() == [2, 2]


def test_odd_n_rejected():
    with pytest.raises(ValueError):
        gen_dot_condition(3, "clean", 0)


def test_dot_dataset_pair():
    clean, noisy = gen_dot_dataset(6, seed=2)
    assert clean.condition == "clean" and noisy.condition == "noisy"


def test_regeneration():
    s = gen_dot_condition(10, "noisy", 5)
    r = regenerate(s.descriptor)
    assert np.array_equal(s.train.x, r.train.x) and np.array_equal(s.test.labels, r.test.labels)
    t = gen_tfbs_dataset(20, seed=3)
    r = regenerate(t.descriptor)
    assert np.array_equal(t.train.x, r.train.x)


def test_pca_logistic_learnability(clean2000):
    from sklearn.linear_model import LogisticRegression

    from qtransfer.frontend import fit_pca

    pca = fit_pca(clean2000.train.x, 8)
    clf = LogisticRegression(max_iter=2000).fit(pca.apply_batch(clean2000.train.x), clean2000.train.labels)
    acc = clf.score(pca.apply_batch(clean2000.test.x), clean2000.test.labels)
    assert acc >= 0.85


def test_one_hot_examples():
    v = one_hot_encode_dna("A" * SEQ_LEN)
    assert np.flatnonzero(v).tolist() == list(range(0, 404, 4))
    with pytest.raises(ValueError):
        one_hot_encode_dna("A" * 100)
    with pytest.raises(ValueError):
        one_hot_encode_dna("N" * SEQ_LEN)
    v = one_hot_encode_dna(("ACGT" * 26)[:SEQ_LEN])
    assert v.sum() == 101
    assert np.all(v.reshape(101, 4).sum(axis=1) == 1)


@given(st.text(alphabet=BASES, min_size=SEQ_LEN, max_size=SEQ_LEN))
def test_one_hot_property(seq):
    v = one_hot_encode_dna(seq)
    assert v.shape == (404,) and v.sum() == 101 and (v == 0).sum() == 303


def mismatches(seq, motif):
    best = len(motif)
    for i in range(len(seq) - len(motif) + 1):
        best = min(best, sum(a != b for a, b in zip(seq[i:i + len(motif)], motif)))
    return best


def test_tfbs_positive_contains_motif():
    exact = 0
    for s in range(500):
        seq = gen_tfbs_sequence(1, DEFAULT_MOTIF, 0.5, make_rng(s, 2, 0))
        m = mismatches(seq, DEFAULT_MOTIF)
        assert m <= 1
        exact += m == 0
    assert exact / 500 >= 0.8


def test_tfbs_n2():
    t = gen_tfbs_dataset(2, seed=0)
    labels = np.concatenate([t.train.labels, t.test.labels])
    assert sorted(labels.tolist()) == [0, 1]
    assert mismatches(t.sequences[0], DEFAULT_MOTIF) <= 1


def test_tfbs_gc_content():
    t = gen_tfbs_dataset(1000, background_gc=0.5, seed=4)
    negs = [s for s, lab in zip(t.sequences, [1] * 500 + [0] * 500) if lab == 0]
    gc = np.mean([sum(c in "GC" for c in s) / SEQ_LEN for s in negs])
    assert 0.47 <= gc <= 0.53


def test_tfbs_deterministic_and_errors():
    a, b = gen_tfbs_dataset(30, seed=9), gen_tfbs_dataset(30, seed=9)
    assert np.array_equal(a.train.x, b.train.x)
    with pytest.raises(ValueError):
        gen_tfbs_dataset(10, motif="A" * 21)
    with pytest.raises(ValueError):
        gen_tfbs_dataset(10, background_gc=1.0)
    with pytest.raises(ValueError):
        gen_tfbs_dataset(10, motif="ACGN")
