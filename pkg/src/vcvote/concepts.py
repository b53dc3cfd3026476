"""Visual-concept dictionary: K-means clustering of feature vectors and
nearest-center queries.

The dictionary is learned once over pooled training features and treated as
immutable afterwards.  Clustering is plain Lloyd iteration with k-means++
seeding; empty clusters are re-seeded from the point farthest from its
assigned center, which keeps the center count exact and the objective
non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class ConceptDictionary:
    """Cluster centers over feature space, one row per concept."""

    centers: np.ndarray      # (|V|, D) float64
    seed: int = 0
    iterations: int = 0
    inertia: float = 0.0
    inertia_history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def depth(self) -> int:
        return self.centers.shape[1]

    def __post_init__(self):
        if self.centers.ndim != 2 or self.size < 1:
            raise ValueError("dictionary needs at least one center")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("non-finite cluster center")
        if self.size > 1:
            d = cdist(self.centers, self.centers)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0.0:
                raise ValueError("duplicate cluster centers")


def _kpp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding: per step, draw a few D^2-weighted candidates
    and keep the one that lowers the potential most."""
    n = x.shape[0]
    n_candidates = 2 + int(np.log(k)) if k > 1 else 1
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            centers[i] = x[rng.integers(n)]
            continue
        picks = np.searchsorted(np.cumsum(d2), rng.random(n_candidates) * total)
        picks = np.minimum(picks, n - 1)
        best_idx, best_d2, best_pot = None, None, np.inf
        for idx in picks:
            cand_d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
            pot = cand_d2.sum()
            if pot < best_pot:
                best_idx, best_d2, best_pot = int(idx), cand_d2, pot
        centers[i] = x[best_idx]
        d2 = best_d2
    return centers


def _lloyd(x: np.ndarray, init: np.ndarray, max_iter: int, tol: float):
    n, k = x.shape[0], init.shape[0]
    centers = init.copy()
    history = []
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = cdist(x, centers, "sqeuclidean")
        assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), assign]

        # re-seed empty clusters from the farthest points
        counts = np.bincount(assign, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(point_d2.argmax())
            centers[c] = x[far]
            assign[far] = c
            point_d2[far] = 0.0
            counts = np.bincount(assign, minlength=k)

        inertia = float(point_d2.sum())
        history.append(inertia)
        for c in range(k):
            if counts[c] > 0:
                centers[c] = x[assign == c].mean(axis=0)
        if prev - inertia <= tol * max(prev, 1e-300) and np.isfinite(prev):
            break
        prev = inertia
    return centers, history, it


def fit_dictionary(maps, k: int, seed: int = 0, max_iter: int = 300,
                   tol: float = 1e-4, sample_cap: int = 1_000_000,
                   n_init: int = 8) -> ConceptDictionary:
    """Cluster all cell vectors of the given feature maps into k concepts.

    `maps` is an iterable of FeatureMap-like objects (anything with a
    (H, W, D) `.data` array) or plain (N, D) arrays.  Vectors beyond
    `sample_cap` are subsampled uniformly.  Runs `n_init` seedings and keeps
    the lowest-inertia result; deterministic given the seed.
    """
    chunks = []
    for m in maps:
        a = m if isinstance(m, np.ndarray) else m.data
        chunks.append(np.asarray(a, dtype=np.float64).reshape(-1, a.shape[-1]))
    if not chunks:
        raise ValueError("no feature maps given")
    x = np.concatenate(chunks, axis=0)
    rng = np.random.default_rng(seed)
    if x.shape[0] > sample_cap:
        idx = rng.choice(x.shape[0], size=sample_cap, replace=False)
        x = x[np.sort(idx)]
    n = x.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds sample count {n}")

    centers, history, it = None, None, 0
    for _restart in range(max(1, n_init)):
        c0 = _kpp_init(x, k, rng)
        c, h, i = _lloyd(x, c0, max_iter, tol)
        if history is None or h[-1] < history[-1]:
            centers, history, it = c, h, i

    # jitter exact duplicates apart (degenerate data); keeps count at k
    if k > 1:
        dd = cdist(centers, centers)
        np.fill_diagonal(dd, np.inf)
        scale = max(float(np.abs(centers).max()), 1.0)
        dup_rng = np.random.default_rng(seed + 1)
        while dd.min() <= 0.0:
            i, j = np.unravel_index(int(dd.argmin()), dd.shape)
            centers[j] += dup_rng.normal(0.0, 1e-9 * scale, size=centers.shape[1])
            dd = cdist(centers, centers)
            np.fill_diagonal(dd, np.inf)

    return ConceptDictionary(centers=centers, seed=seed, iterations=it,
                             inertia=history[-1], inertia_history=tuple(history))


def distance(f: np.ndarray, v: int, dictionary: ConceptDictionary) -> float:
    """Euclidean distance from vector f to concept center v."""
    return float(np.linalg.norm(np.asarray(f, dtype=np.float64)
                                - dictionary.centers[v]))


def distances_to_centers(features: np.ndarray,
                         dictionary: ConceptDictionary,
                         concept_ids=None) -> np.ndarray:
    """Distance matrix from every cell of (H, W, D) features to each center.

    Returns (H*W, n_concepts) float64, cells flattened row-major.
    """
    flat = np.asarray(features, dtype=np.float64).reshape(-1, features.shape[-1])
    centers = dictionary.centers
    if concept_ids is not None:
        centers = centers[np.asarray(concept_ids, dtype=int)]
    return cdist(flat, centers)


def best_match_in(positions, fm, v: int,
                  dictionary: ConceptDictionary) -> tuple[tuple[int, int], float]:
    """Position among `positions` whose feature vector is closest to center v.

    Ties break lexicographically by (row, col).  `positions` must be
    non-empty; `fm` is FeatureMap-like (has a (H, W, D) `.data` array).
    """
    positions = list(positions)
    if not positions:
        raise ValueError("empty position set")
    data = fm if isinstance(fm, np.ndarray) else fm.data
    center = dictionary.centers[v]
    best_p, best_r = None, np.inf
    for p in sorted(positions):
        r = float(np.linalg.norm(data[p[0], p[1]].astype(np.float64) - center))
        if r < best_r:
            best_p, best_r = tuple(p), r
    return best_p, best_r
