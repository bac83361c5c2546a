import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetfuse.genetics import (AlignedSequence, GeneticDistanceMatrix, NoComparableSitesError, SaturationError,
                              k80_distance, pairwise_distances, read_sequences, spectral_embed)

PURINES, PYRIMIDINES = "AG", "CT"
TRANSITION = {"A": "G", "G": "A", "C": "T", "T": "C"}
TRANSVERSION = {"A": "C", "G": "T", "C": "A", "T": "G"}


def seq(i, bases):
    return AlignedSequence(str(i), bases)


def k80_oracle(a: str, b: str) -> mpmath.mpf:
    """Independent arbitrary-precision K80 with pairwise deletion."""
    mpmath.mp.dps = 50
    ts = tv = n = 0
    for x, y in zip(a, b):
        if x in "N-" or y in "N-":
            continue
        n += 1
        if x == y:
            continue
        same_class = (x in PURINES and y in PURINES) or (x in PYRIMIDINES and y in PYRIMIDINES)
        ts += same_class
        tv += not same_class
    P, Q = mpmath.mpf(ts) / n, mpmath.mpf(tv) / n
    return -mpmath.log(1 - 2 * P - Q) / 2 - mpmath.log(1 - 2 * Q) / 4


def mutate(rng, bases: str, p_ts: float, p_tv: float) -> str:
    out = []
    for b in bases:
        u = rng.random()
        out.append(TRANSITION[b] if u < p_ts else TRANSVERSION[b] if u < p_ts + p_tv else b)
    return "".join(out)


def test_identical_sequences_have_zero_distance():
    assert k80_distance(seq(0, "AAAA"), seq(1, "AAAA")) == 0.0


def test_p_point1_q_point05_frozen_value():
    a = "A" * 20
    b = "GG" + "C" + "A" * 17  # 2 transitions, 1 transversion of 20
    assert k80_distance(seq(0, a), seq(1, b)) == pytest.approx(0.170181, abs=5e-7)
    assert abs(k80_distance(seq(0, a), seq(1, b)) - float(k80_oracle(a, b))) < 1e-12


def test_single_transition_frozen_value():
    d = k80_distance(seq(0, "AAGG"), seq(1, "AGGG"))
    assert d == pytest.approx(0.346574, abs=5e-7)
    assert abs(d - float(-mpmath.log(mpmath.mpf("0.5")) / 2)) < 1e-12


def test_random_pairs_match_high_precision_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        a = "".join(rng.choice(list("ACGT"), 100))
        b = mutate(rng, a, rng.uniform(0, 0.2), rng.uniform(0, 0.1))
        worst = max(worst, abs(k80_distance(seq(0, a), seq(1, b)) - float(k80_oracle(a, b))))
    assert worst < 1e-12


def test_saturation_raises():
    with pytest.raises(SaturationError):
        k80_distance(seq(0, "AC"), seq(1, "CA"))  # Q = 1
    with pytest.raises(SaturationError):
        k80_distance(seq(0, "AAAA"), seq(1, "GGAA"))  # 1 - 2P - Q = 0


def test_gap_and_n_sites_are_deleted_pairwise():
    assert k80_distance(seq(0, "AAN-A"), seq(1, "AGAAA")) == pytest.approx(float(k80_oracle("AAN-A", "AGAAA")))
    with pytest.raises(NoComparableSitesError):
        k80_distance(seq(0, "NN"), seq(1, "AA"))


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        k80_distance(seq(0, "AAA"), seq(1, "AA"))


def test_invalid_symbols_rejected():
    with pytest.raises(ValueError):
        AlignedSequence("x", "ACGU")


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet="ACGT", min_size=8, max_size=40), st.integers(0, 2**31))
def test_symmetry_and_zero_iff_identical(a, seed):
    rng = np.random.default_rng(seed)
    b = mutate(rng, a, 0.08, 0.04)
    try:
        d_ab = k80_distance(seq(0, a), seq(1, b))
    except SaturationError:
        return
    assert d_ab == k80_distance(seq(1, b), seq(0, a))
    assert (d_ab == 0.0) == (a == b)


def test_distance_increases_with_transitions():
    base = "A" * 40
    previous = -1.0
    for n_ts in range(0, 12):
        d = k80_distance(seq(0, base), seq(1, "G" * n_ts + "C" * 3 + "A" * (37 - n_ts)))
        assert d > previous
        previous = d


def test_pairwise_examples():
    one = pairwise_distances([seq(0, "ACGT")])
    assert one.d.shape == (1, 1) and one.d[0, 0] == 0.0
    same = pairwise_distances([seq(i, "ACGTAC") for i in range(4)])
    assert np.array_equal(same.d, np.zeros((4, 4)))


def test_pairwise_matches_naive_double_loop():
    rng = np.random.default_rng(1)
    root = "".join(rng.choice(list("ACGT"), 50))
    batch = [seq(i, mutate(rng, root, 0.05, 0.03)) for i in range(6)]
    dm = pairwise_distances(batch)
    for i, j in itertools.product(range(6), repeat=2):
        expected = 0.0 if i == j else k80_distance(batch[i], batch[j])
        assert dm.d[i, j] == expected
    assert np.array_equal(dm.d, dm.d.T)


def test_pairwise_non_strict_records_undefined_pairs():
    batch = [seq(0, "AC"), seq(1, "CA"), seq(2, "AC")]
    with pytest.raises(SaturationError):
        pairwise_distances(batch)
    dm = pairwise_distances(batch, strict=False)
    assert dm.undefined == frozenset({(0, 1), (1, 2)})
    assert math.isinf(dm.d[0, 1]) and dm.d[0, 2] == 0.0


def test_ragged_batch_rejected():
    with pytest.raises(ValueError, match="ragged"):
        pairwise_distances([seq(0, "ACG"), seq(1, "AC")])


def test_ragged_file_rejected(tmp_path):
    path = tmp_path / "s.tsv"
    path.write_text("a\tACGT\nb\tACG\n")
    with pytest.raises(ValueError, match="length 3"):
        read_sequences(path)


def _matrix(d):
    return GeneticDistanceMatrix([str(i) for i in range(len(d))], np.asarray(d, dtype=np.float64))


def test_embedding_of_zero_distances_is_constant():
    emb = spectral_embed(_matrix(np.zeros((4, 4))), 2)
    assert np.allclose(emb, emb[0])


def test_two_clusters_separate_by_sign():
    d = np.full((6, 6), 1.0)
    d[:3, :3] = d[3:, 3:] = 0.05
    np.fill_diagonal(d, 0.0)
    x = spectral_embed(_matrix(d), 1)[:, 0]
    assert np.all(np.sign(x[:3]) == np.sign(x[0]))
    assert np.all(np.sign(x[3:]) == -np.sign(x[0]))
    # dense-solver oracle: Fiedler vector of the affinity Laplacian
    w = np.exp(-d / d[~np.eye(6, dtype=bool)].mean())
    np.fill_diagonal(w, 0)
    vals, vecs = np.linalg.eigh(np.diag(w.sum(1)) - w)
    np.testing.assert_allclose(np.abs(x), np.abs(vecs[:, 1]), atol=1e-10)


def test_two_cases_have_opposite_rows():
    emb = spectral_embed(_matrix([[0.0, 0.3], [0.3, 0.0]]), 1)
    assert emb[0, 0] == pytest.approx(-emb[1, 0], abs=1e-12)
    assert abs(emb[0, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_columns_have_unit_norm_and_fixed_sign():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(7, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    emb = spectral_embed(_matrix(d), 3)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=0), 1.0, atol=1e-12)
    for col in emb.T:
        assert col[np.argmax(np.abs(col))] > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_embedding_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(6, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    perm = rng.permutation(6)
    a = spectral_embed(_matrix(d), 2)
    b = spectral_embed(_matrix(d[np.ix_(perm, perm)]), 2)
    w = np.exp(-d / d[~np.eye(6, dtype=bool)].mean())
    np.fill_diagonal(w, 0)
    vals = np.linalg.eigvalsh(np.diag(w.sum(1)) - w)
    if np.min(np.diff(vals[:4])) < 1e-6:
        return  # repeated eigenvalues leave the basis undetermined
    for c in range(2):
        assert np.allclose(a[perm, c], b[:, c], atol=1e-8) or np.allclose(a[perm, c], -b[:, c], atol=1e-8)


def test_embedding_dim_must_be_below_batch_size():
    with pytest.raises(ValueError):
        spectral_embed(_matrix(np.zeros((3, 3))), 3)
