"""K-means over action sequences under dynamic time warping.

DTW uses absolute-difference local cost and the three classic steps
(diagonal, up, left).  Centroids are updated by DTW barycenter averaging: each
centroid frame collects the member values aligned to it and takes their
median, which is the exact minimizer of summed absolute cost for fixed
alignments, so the total DTW distance never increases between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .data import read_csv_columns, read_csv_text, save_series
from .errors import InvalidArgumentError, ParseError
from .te import TePeak


@numba.njit(cache=True)
def _dtw_table(a, b, band):
    n, m = a.size, b.size
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        lo, hi = 1, m
        if band >= 0:
            lo = max(1, i - band)
            hi = min(m, i + band)
        for j in range(lo, hi + 1):
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = abs(a[i - 1] - b[j - 1]) + best
    return D


@numba.njit(cache=True)
def _dtw_path(D):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    pi = np.empty(i + j, dtype=np.int64)
    pj = np.empty(i + j, dtype=np.int64)
    k = 0
    while True:
        pi[k] = i - 1
        pj[k] = j - 1
        k += 1
        if i == 1 and j == 1:
            break
        diag, up, left = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    return pi[:k][::-1].copy(), pj[:k][::-1].copy()


@numba.njit(cache=True)
def _dtw_many(a, B, band):
    out = np.empty(B.shape[0])
    for r in range(B.shape[0]):
        out[r] = _dtw_table(a, B[r], band)[-1, -1]
    return out


def _as_seq(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-D sequence")
    return arr


def dtw_distance(a, b, band: int | None = None) -> float:
    """DTW distance; ``band`` is an optional Sakoe-Chiba half-width in frames."""
    a, b = _as_seq(a, "a"), _as_seq(b, "b")
    w = -1 if band is None else max(int(band), abs(a.size - b.size))
    return float(_dtw_table(a, b, w)[-1, -1])


def dtw_alignment(a, b, band: int | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """DTW distance plus the optimal warping path as index arrays into ``a`` and ``b``."""
    a, b = _as_seq(a, "a"), _as_seq(b, "b")
    w = -1 if band is None else max(int(band), abs(a.size - b.size))
    D = _dtw_table(a, b, w)
    pi, pj = _dtw_path(D)
    return float(D[-1, -1]), pi, pj


def _stack(sequences) -> np.ndarray:
    try:
        X = np.array([np.asarray(s, dtype=np.float64) for s in sequences], dtype=np.float64)
    except ValueError:
        raise InvalidArgumentError("sequences must share one length") from None
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidArgumentError("need a non-empty set of equal-length 1-D sequences")
    return np.ascontiguousarray(X)


def pairwise_dtw(sequences, band: int | None = None) -> np.ndarray:
    X = _stack(sequences)
    w = -1 if band is None else int(band)
    n = X.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        D[i, i + 1 :] = _dtw_many(X[i], X[i + 1 :], w)
    return D + D.T


def total_dtw(center, sequences, band: int | None = None) -> float:
    X = _stack(sequences)
    w = -1 if band is None else int(band)
    return float(_dtw_many(np.ascontiguousarray(center, dtype=np.float64), X, w).sum())


def _dba_update(center: np.ndarray, X: np.ndarray, band: int) -> np.ndarray:
    buckets: list[list[float]] = [[] for _ in range(center.size)]
    for s in X:
        pi, pj = _dtw_path(_dtw_table(center, s, band))
        for i, j in zip(pi, pj):
            buckets[i].append(s[j])
    return np.array([np.median(b) for b in buckets])


def dba_average(sequences, iterations: int = 10, init=None, band: int | None = None) -> np.ndarray:
    """DTW barycenter of equal-length sequences.

    Starts from ``init`` when given, otherwise from the medoid.  An update is
    kept only if it lowers the total DTW distance; iteration stops early at a
    fixed point.
    """
    X = _stack(sequences)
    w = -1 if band is None else int(band)
    if init is None:
        if X.shape[0] <= 2:
            center = X[0].copy()
        else:
            center = X[int(np.argmin(pairwise_dtw(X, band).sum(axis=1)))].copy()
    else:
        center = np.array(init, dtype=np.float64)
        if center.shape != (X.shape[1],):
            raise InvalidArgumentError("init must match the sequence length")
    cost = float(_dtw_many(center, X, w).sum())
    for _ in range(int(iterations)):
        if cost == 0.0:
            break
        new = _dba_update(center, X, w)
        new_cost = float(_dtw_many(new, X, w).sum())
        if not new_cost < cost:
            break
        center, cost = new, new_cost
    return center


def pointwise_mean(sequences) -> np.ndarray:
    return _stack(sequences).mean(axis=0)


@dataclass(frozen=True)
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray  # (k, length)
    inertia: float
    inertia_history: tuple[float, ...] = ()


def _seed_centers(D: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """k-means++ seeding on a precomputed DTW distance matrix."""
    n = D.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = D[:, chosen].min(axis=1) ** 2
        d2[chosen] = 0.0
        if d2.sum() > 0:
            nxt = int(rng.choice(n, p=d2 / d2.sum()))
        else:
            rest = [i for i in range(n) if i not in chosen]
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
    return chosen


def _assign(X: np.ndarray, centroids: np.ndarray, band: int) -> tuple[np.ndarray, np.ndarray]:
    dist = np.stack([_dtw_many(c, X, band) for c in centroids], axis=1)
    labels = np.argmin(dist, axis=1)
    return labels, dist[np.arange(X.shape[0]), labels]


def kmeans_dtw(
    sequences,
    k: int = 2,
    restarts: int = 10,
    seed: int = 0,
    max_iter: int = 50,
    dba_iterations: int = 10,
    band: int | None = None,
) -> ClusterResult:
    """Best-of-``restarts`` DTW k-means with DBA centroids.

    Each restart seeds centroids k-means++ style from the member sequences,
    then alternates nearest-centroid assignment and a DBA update warm-started
    from the current centroid.  A cluster that loses all members keeps its
    previous centroid.
    """
    X = _stack(sequences)
    n = X.shape[0]
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if n < k:
        raise InvalidArgumentError(f"need at least k={k} sequences, got {n}")
    w = -1 if band is None else int(band)
    if k == 1:
        # one cluster: the barycenter of everything, independent of seeding
        center = dba_average(X, dba_iterations, band=band)
        _, dist = _assign(X, center[None, :], w)
        inertia = float(dist.sum())
        return ClusterResult(1, np.zeros(n, dtype=np.int64), center[None, :].copy(), inertia, (inertia,))
    rng = np.random.default_rng(seed)
    D = pairwise_dtw(X, band)
    best: ClusterResult | None = None
    for _ in range(max(1, restarts)):
        centroids = X[_seed_centers(D, k, rng)].copy()
        labels, dist = _assign(X, centroids, w)
        history = [float(dist.sum())]
        for _ in range(max_iter):
            for c in range(k):
                members = X[labels == c]
                if members.shape[0]:
                    centroids[c] = dba_average(members, dba_iterations, init=centroids[c], band=band)
            new_labels, dist = _assign(X, centroids, w)
            history.append(float(dist.sum()))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        result = ClusterResult(k, labels.copy(), centroids.copy(), history[-1], tuple(history))
        if best is None or result.inertia < best.inertia:
            best = result
    return best


@dataclass(frozen=True)
class ActionSequence:
    values: np.ndarray
    anchor_t: int
    experiment_id: str = ""
    channel: int = 0


def select_channel(
    peaks: Sequence[TePeak], channel: int | str, channel_names: Sequence[str] = ("lin_vel", "ang_vel"), experiment_id: str = ""
) -> list[ActionSequence]:
    """Project each peak's attributed action window onto one action channel."""
    if isinstance(channel, str):
        if channel not in channel_names:
            raise InvalidArgumentError(f"unknown action channel {channel!r}")
        ch = list(channel_names).index(channel)
    else:
        ch = int(channel)
        if not 0 <= ch < len(channel_names):
            raise InvalidArgumentError(f"action channel {ch} out of range")
    out = []
    for p in peaks:
        if ch >= p.action_window.shape[1]:
            raise InvalidArgumentError(f"action channel {ch} not present in peak window")
        out.append(ActionSequence(p.action_window[:, ch].copy(), p.anchor_t, experiment_id, ch))
    return out


CLUSTERS_HEADER = ("sequence_id", "experiment_id", "anchor_t", "cluster_id")
CENTROIDS_HEADER = ("cluster_id", "frame_offset", "value")


def save_clusters_csv(path, sequences: Sequence[ActionSequence], result: ClusterResult) -> None:
    rows = ((i, s.experiment_id, s.anchor_t, int(c)) for i, (s, c) in enumerate(zip(sequences, result.assignments)))
    save_series(path, CLUSTERS_HEADER, rows)


def save_centroids_csv(path, result: ClusterResult) -> None:
    rows = ((c, j, float(v)) for c in range(result.k) for j, v in enumerate(result.centroids[c]))
    save_series(path, CENTROIDS_HEADER, rows)


def load_centroids_csv(path) -> np.ndarray:
    """Centroid matrix ``(k, length)`` from a centroids file."""
    cols = read_csv_columns(path, CENTROIDS_HEADER)
    cid = cols["cluster_id"].astype(np.int64)
    off = cols["frame_offset"].astype(np.int64)
    if cid.size == 0:
        return np.zeros((0, 0))
    out = np.full((cid.max() + 1, off.max() + 1), np.nan)
    out[cid, off] = cols["value"]
    if np.isnan(out).any():
        raise ParseError("centroid table has gaps", path)
    return out


def load_clusters_csv(path) -> list[tuple[int, str, int, int]]:
    """``(sequence_id, experiment_id, anchor_t, cluster_id)`` rows."""
    rows = read_csv_text(path, CLUSTERS_HEADER)
    try:
        return [
            (int(r["sequence_id"]), r["experiment_id"], int(r["anchor_t"]), int(r["cluster_id"])) for _, r in rows
        ]
    except ValueError:
        raise ParseError("non-integer id or anchor", path) from None
