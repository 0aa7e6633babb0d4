"""Lloyd's k-means with k-means++ seeding, and the clustering matrices built from it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .linalg import as_matrix, make_rng


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    n_iter: int
    # objective after every assignment step, non-increasing
    trace: list = field(default_factory=list)


def _sq_dists(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_plusplus(points, k, rng):
    """D^2-weighted seeding.  Falls back to uniform picks once every point is covered."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[i] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[i : i + 1])[:, 0])
    return centroids


def _repair_empty(points, labels, centroids, k):
    """Give every empty cluster the point farthest from its centroid in the largest cluster."""
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        d = np.sum((points[members] - centroids[big]) ** 2, axis=1)
        moved = members[int(np.argmax(d))]
        labels[moved] = j
        centroids[j] = points[moved]
        counts[big] -= 1
        counts[j] = 1
    return labels


def _objective(points, labels, centroids):
    return float(np.sum((points - centroids[labels]) ** 2))


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-10,
           n_init: int = 10) -> KMeansResult:
    """Cluster the rows of ``points`` into exactly ``k`` non-empty groups.

    Each of the ``n_init`` runs seeds with k-means++ and iterates
    assignment/update until the centroid shift (Frobenius) drops below ``tol``,
    the labels stop changing, or ``max_iter`` iterations have run.  The run with
    the lowest objective wins (earliest run on ties).  Distance ties go to the
    lowest cluster index.  All runs draw from one generator seeded by ``seed``.
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise InvalidArgument(f"k={k!r} must satisfy 1 <= k <= {n}")
    if max_iter < 1:
        raise InvalidArgument("max_iter must be at least 1")
    if tol < 0:
        raise InvalidArgument("tol must be non-negative")
    if n_init < 1:
        raise InvalidArgument("n_init must be at least 1")
    k = int(k)
    rng = make_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(points, k, rng, max_iter, tol)
        if best is None or run.objective < best.objective:
            best = run
    return best


def _lloyd(points, k, rng, max_iter, tol) -> KMeansResult:
    centroids = kmeans_plusplus(points, k, rng)
    labels = None
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels = np.argmin(_sq_dists(points, centroids), axis=1)
        new_labels = _repair_empty(points, new_labels, centroids, k)
        trace.append(_objective(points, new_labels, centroids))
        new_centroids = np.stack([points[new_labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(np.sum((new_centroids - centroids) ** 2)))
        unchanged = labels is not None and np.array_equal(labels, new_labels)
        labels, centroids = new_labels, new_centroids
        if shift < tol or unchanged:
            break
    return KMeansResult(
        labels=labels,
        centroids=centroids,
        objective=_objective(points, labels, centroids),
        n_iter=n_iter,
        trace=trace,
    )


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """One-hot clustering matrix ``C`` (k x N) and the matrices derived from it.

    ``P = C C^T`` is diagonal with the cluster sizes, ``C_bar = P^-1 C`` averages
    within clusters and ``centroids = C_bar @ embeddings``.
    """

    labels: np.ndarray
    C: np.ndarray
    C_bar: np.ndarray
    P: np.ndarray
    centroids: np.ndarray

    @classmethod
    def from_labels(cls, labels, k: int, embeddings) -> "ClusterAssignment":
        labels = np.asarray(labels, dtype=np.int64)
        embeddings = as_matrix(embeddings, "embeddings")
        if labels.shape != (embeddings.shape[0],):
            raise InvalidArgument("one label per embedding row is required")
        if labels.min() < 0 or labels.max() >= k:
            raise InvalidArgument(f"labels must lie in [0, {k})")
        C = np.zeros((k, labels.shape[0]))
        C[labels, np.arange(labels.shape[0])] = 1.0
        sizes = C.sum(axis=1)
        if np.any(sizes == 0):
            raise InvalidArgument("empty clusters are not allowed")
        C_bar = C / sizes[:, None]
        return cls(labels=labels, C=C, C_bar=C_bar, P=np.diag(sizes), centroids=C_bar @ embeddings)

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.diag(self.P).copy()
