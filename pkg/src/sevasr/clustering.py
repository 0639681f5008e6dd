"""K-means over speaker embeddings and centroid-based test assignment.

Clustering is deterministic: ids are put in lexicographic order before any
random draw, initialization is k-means++ from a seeded generator, and
nearest-centroid ties break toward the lowest centroid index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
COSINE = "cosine"


@dataclass
class ClusterModel:
    """K centroids plus the speaker assignments they were fit on."""

    centroids: np.ndarray  # K x D
    assignments: dict[str, int]
    inertia: float
    metric: str = EUCLIDEAN
    inertia_history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def aggregate_speaker_embedding(utterance_embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Speaker-level embedding: componentwise mean of utterance vectors."""
    if len(utterance_embeddings) == 0:
        raise ValidationError("cannot aggregate an empty embedding list")
    dims = {np.asarray(v).shape for v in utterance_embeddings}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ValidationError(f"inconsistent embedding shapes: {sorted(dims)}")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in utterance_embeddings])
    return stacked.mean(axis=0)


def _costs(points: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    """Point-to-centroid cost matrix, n x K."""
    if metric == EUCLIDEAN:
        diff = points[:, None, :] - centroids[None, :, :]
        return np.einsum("nkd,nkd->nk", diff, diff)
    if metric == COSINE:
        pn = np.linalg.norm(points, axis=1, keepdims=True)
        cn = np.linalg.norm(centroids, axis=1, keepdims=True)
        if (pn == 0).any() or (cn == 0).any():
            raise ValidationError("cosine metric undefined for zero vectors")
        return 1.0 - (points / pn) @ (centroids / cn).T
    raise ValidationError(f"unknown metric: {metric!r}")


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator, metric: str) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn with cost-proportional weight."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        cost = _costs(points, points[chosen], metric).min(axis=1)
        total = cost.sum()
        if total > 0:
            idx = int(rng.choice(n, p=cost / total))
        else:
            idx = int(rng.integers(n))  # all points coincide
        chosen.append(idx)
    return points[chosen].copy()


def kmeans(
    vectors: Mapping[str, np.ndarray],
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 0.0,
    metric: str = EUCLIDEAN,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ initialization.

    Stops at an assignment fixed point, when the inertia decrease falls
    below `tol`, or after `max_iters`. An emptied cluster is reseeded to
    the point currently farthest from its assigned centroid. Inertia is
    the sum of costs to assigned centroids and, for the Euclidean metric,
    never increases between iterations.
    """
    if k <= 0:
        raise ValidationError(f"K must be positive, got {k}")
    if max_iters < 1:
        raise ValidationError(f"max_iters must be >= 1, got {max_iters}")
    ids = sorted(vectors)
    if k > len(ids):
        raise ValidationError(f"K={k} exceeds number of vectors ({len(ids)})")
    points = np.stack([np.asarray(vectors[i], dtype=np.float64) for i in ids])
    if points.ndim != 2 or not np.isfinite(points).all():
        raise ValidationError("embeddings must be finite vectors of one common dimension")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, k, rng, metric)

    labels = np.zeros(len(ids), dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iters):
        cost = _costs(points, centroids, metric)
        new_labels = cost.argmin(axis=1)  # argmin takes the lowest index on ties

        assigned_cost = cost[np.arange(len(ids)), new_labels]
        for empty in [j for j in range(k) if not (new_labels == j).any()]:
            farthest = int(assigned_cost.argmax())
            new_labels[farthest] = empty
            centroids[empty] = points[farthest]
            assigned_cost[farthest] = 0.0

        converged = history and (new_labels == labels).all()
        labels = new_labels
        for j in range(k):
            centroids[j] = points[labels == j].mean(axis=0)

        inertia = float(_costs(points, centroids, metric)[np.arange(len(ids)), labels].sum())
        if history and metric == EUCLIDEAN and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        if converged or (len(history) >= 2 and history[-2] - history[-1] < tol):
            break

    return ClusterModel(
        centroids=centroids,
        assignments={i: int(l) for i, l in zip(ids, labels)},
        inertia=history[-1],
        metric=metric,
        inertia_history=history,
    )


def assign_cluster(model: ClusterModel, embedding: np.ndarray) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape != (model.dim,):
        raise ValidationError(f"embedding has dim {emb.shape}, centroids have dim {model.dim}")
    return int(_costs(emb[None, :], model.centroids, model.metric)[0].argmin())


def mismatched_assignment(model: ClusterModel, embedding: np.ndarray) -> int:
    """The complement of assign_cluster; only defined for K=2."""
    if model.k != 2:
        raise ValidationError(f"mismatched assignment requires K=2, got K={model.k}")
    return 1 - assign_cluster(model, embedding)


def cluster_purity(assignments: Mapping[str, int], truth: Mapping[str, int]) -> float:
    """Fraction of points whose cluster's majority true label matches theirs."""
    if not assignments:
        raise ValidationError("no assignments to score")
    by_cluster: dict[int, list[int]] = {}
    for sid, c in assignments.items():
        by_cluster.setdefault(c, []).append(truth[sid])
    matched = sum(int(np.bincount(members).max()) for members in by_cluster.values())
    return matched / len(assignments)


def save_cluster_model(model: ClusterModel, path) -> None:
    """Write `K D inertia`, K centroid lines, then one speaker line each.

    Only Euclidean models are serializable; the file format carries no
    metric field.
    """
    if model.metric != EUCLIDEAN:
        raise ValidationError("only euclidean cluster models can be saved")
    lines = [f"{model.k} {model.dim} {model.inertia!r}"]
    for row in model.centroids:
        lines.append(" ".join(repr(float(x)) for x in row))
    for sid in sorted(model.assignments):
        lines.append(f"{sid} {model.assignments[sid]}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_cluster_model(path) -> ClusterModel:
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValidationError(f"empty cluster model file: {path}")
    try:
        k_s, d_s, inertia_s = lines[0].split()
        k, d, inertia = int(k_s), int(d_s), float(inertia_s)
    except ValueError as exc:
        raise ValidationError(f"bad cluster model header {lines[0]!r}: {exc}") from exc
    if len(lines) < 1 + k:
        raise ValidationError(f"cluster model file truncated: expected {k} centroid lines")
    centroids = np.array([[float(x) for x in lines[1 + j].split()] for j in range(k)])
    if centroids.shape != (k, d):
        raise ValidationError(f"centroid block has shape {centroids.shape}, expected ({k}, {d})")
    assignments = {}
    for ln in lines[1 + k:]:
        sid, idx = ln.rsplit(" ", 1)
        c = int(idx)
        if not 0 <= c < k:
            raise ValidationError(f"assignment {ln!r} has cluster index outside [0, {k})")
        assignments[sid] = c
    return ClusterModel(centroids=centroids, assignments=assignments, inertia=inertia)
