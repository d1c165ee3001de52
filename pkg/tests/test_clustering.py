import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teinfluence.clustering import (
    ActionSequence,
    dba_average,
    dtw_alignment,
    dtw_distance,
    kmeans_dtw,
    load_centroids_csv,
    load_clusters_csv,
    pairwise_dtw,
    pointwise_mean,
    save_centroids_csv,
    save_clusters_csv,
    select_channel,
    total_dtw,
)
from teinfluence.errors import InvalidArgumentError, ParseError
from teinfluence.sim import planted_action_shapes
from teinfluence.te import TePeak


def brute_dtw(a, b):
    """Minimum cost over every monotone warping path, enumerated explicitly."""
    n, m = len(a), len(b)
    best = np.inf

    def walk(i, j, cost):
        nonlocal best
        cost += abs(a[i] - b[j])
        if cost >= best:
            return
        if (i, j) == (n - 1, m - 1):
            best = cost
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, cost)
        if i + 1 < n:
            walk(i + 1, j, cost)
        if j + 1 < m:
            walk(i, j + 1, cost)

    walk(0, 0, 0.0)
    return best


quantized = st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=5)


# --- DTW --------------------------------------------------------------------------


def test_dtw_examples():
    assert dtw_distance([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0
    assert dtw_distance([0, 0, 0], [1, 1, 1]) == 3.0
    assert dtw_distance([0, 1], [0, 0, 1]) == 0.0


def test_dtw_empty():
    with pytest.raises(InvalidArgumentError):
        dtw_distance([], [1.0])


@settings(max_examples=300, deadline=None)
@given(quantized, quantized)
def test_dtw_matches_path_enumeration(a, b):
    assert dtw_distance(a, b) == pytest.approx(brute_dtw(a, b), abs=1e-12)
    assert dtw_distance(a, b) == dtw_distance(b, a)
    assert dtw_distance(a, a) == 0.0


def test_dtw_all_short_pairs_exhaustive():
    alphabet = (0.0, 0.5, 1.0)
    seqs = [list(s) for n in range(1, 4) for s in itertools.product(alphabet, repeat=n)]
    for a, b in itertools.product(seqs, repeat=2):
        assert dtw_distance(a, b) == pytest.approx(brute_dtw(a, b), abs=1e-12)


@settings(deadline=None)
@given(quantized, quantized)
def test_alignment_path_cost_matches_distance(a, b):
    d, pi, pj = dtw_alignment(a, b)
    assert (pi[0], pj[0]) == (0, 0) and (pi[-1], pj[-1]) == (len(a) - 1, len(b) - 1)
    assert np.all(np.diff(pi) >= 0) and np.all(np.diff(pj) >= 0)
    assert np.all(np.diff(pi) + np.diff(pj) >= 1)
    assert sum(abs(a[i] - b[j]) for i, j in zip(pi, pj)) == pytest.approx(d, abs=1e-12)


def test_band_never_lowers_cost():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.random(15), rng.random(15)
        assert dtw_distance(a, b, band=2) >= dtw_distance(a, b) - 1e-12
        assert dtw_distance(a, b, band=0) == pytest.approx(np.abs(a - b).sum())


def test_pairwise_matrix():
    X = np.random.default_rng(1).random((5, 7))
    D = pairwise_dtw(X)
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)
    assert D[1, 3] == dtw_distance(X[1], X[3])


# --- DBA --------------------------------------------------------------------------


def test_dba_examples():
    s = np.array([0.2, 0.6, 0.4])
    assert np.array_equal(dba_average([s]), s)
    assert np.array_equal(dba_average([s, s]), s)
    pair = [[0, 0, 1], [0, 1, 1]]
    assert total_dtw(dba_average(pair), pair) <= total_dtw([0, 0.5, 1], pair)


def test_dba_empty():
    with pytest.raises(InvalidArgumentError):
        dba_average([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_dba_never_worse_than_start(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 10))
    init = pointwise_mean(X)
    start = total_dtw(init, X)
    costs = [total_dtw(dba_average(X, it, init=init), X) for it in range(5)]
    assert costs[0] == pytest.approx(start)
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


# --- k-means -----------------------------------------------------------------------


def label_accuracy(pred, truth):
    same = np.mean(pred == truth)
    return max(same, 1 - same)


def test_kmeans_planted_shapes():
    X, y = planted_action_shapes(60, 0.05, rng=np.random.default_rng(3))
    result = kmeans_dtw(X, 2, 10, seed=3)
    assert label_accuracy(result.assignments, y) >= 0.95
    assert result.centroids.shape == (2, 15)


def test_kmeans_k1_is_dba_of_all():
    X = np.random.default_rng(2).random((6, 8))
    result = kmeans_dtw(X, 1, 1, seed=0)
    assert np.all(result.assignments == 0)
    assert np.array_equal(result.centroids[0], dba_average(X))
    assert result.inertia == pytest.approx(total_dtw(result.centroids[0], X))


def test_kmeans_k_equals_n():
    X = np.random.default_rng(4).random((5, 6))
    result = kmeans_dtw(X, 5, 3, seed=0)
    assert result.inertia == 0.0
    assert sorted(result.assignments) == list(range(5))


def test_kmeans_too_few_sequences():
    with pytest.raises(InvalidArgumentError):
        kmeans_dtw(np.zeros((2, 5)), 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_kmeans_inertia_non_increasing(seed, k):
    X = np.random.default_rng(seed).random((12, 8))
    result = kmeans_dtw(X, k, 2, seed=seed)
    h = result.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    assert result.inertia == h[-1] >= 0


def test_kmeans_deterministic_and_partition_stable():
    X, _ = planted_action_shapes(30, 0.05, rng=np.random.default_rng(8))
    a, b = kmeans_dtw(X, 2, 4, seed=1), kmeans_dtw(X, 2, 4, seed=1)
    assert np.array_equal(a.assignments, b.assignments) and a.inertia == b.inertia
    # different initial centroids reaching the same inertia give the same partition
    for s in range(2, 6):
        c = kmeans_dtw(X, 2, 4, seed=s)
        if c.inertia == pytest.approx(a.inertia):
            assert label_accuracy(c.assignments, a.assignments) == 1.0


# --- channel selection and files ------------------------------------------------


def peak(anchor, window):
    return TePeak(anchor, 0.3, np.asarray(window), anchor - 19, anchor - 5)


def test_select_channel():
    w = np.column_stack([np.linspace(0, 1, 15), np.full(15, 0.5)])
    (seq,) = select_channel([peak(40, w)], "lin_vel")
    assert seq.values.shape == (15,) and np.array_equal(seq.values, w[:, 0])
    (ang,) = select_channel([peak(40, w)], 1)
    assert np.all(ang.values == 0.5)
    assert select_channel([], "ang_vel") == []
    with pytest.raises(InvalidArgumentError):
        select_channel([peak(40, w)], "pan")
    with pytest.raises(InvalidArgumentError):
        select_channel([peak(40, w)], 2)


def test_cluster_files_round_trip(tmp_path):
    X, _ = planted_action_shapes(8, 0.05)
    seqs = [ActionSequence(x, 20 + 10 * i, "exp00" if i < 4 else "exp01") for i, x in enumerate(X)]
    result = kmeans_dtw(X, 2, 2, seed=0)
    save_clusters_csv(tmp_path / "c.csv", seqs, result)
    save_centroids_csv(tmp_path / "m.csv", result)
    rows = load_clusters_csv(tmp_path / "c.csv")
    assert [r[0] for r in rows] == list(range(8))
    assert [r[3] for r in rows] == list(result.assignments)
    assert rows[5][1:3] == ("exp01", 70)
    assert np.array_equal(load_centroids_csv(tmp_path / "m.csv"), result.centroids)
    assert (tmp_path / "m.csv").read_text().startswith("cluster_id,frame_offset,value\n")


def test_centroid_gaps_rejected(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("cluster_id,frame_offset,value\n0,0,0.5\n0,2,0.5\n")
    with pytest.raises(ParseError):
        load_centroids_csv(p)
