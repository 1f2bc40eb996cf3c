"""Exact distance geometry: K-means with selection diagnostics, silhouette,
nearest-neighbor queries, and densest-core identification.

Everything here is deterministic for a fixed seed: centroid sums use a fixed
reduction order, assignment ties go to the lower cluster index, and neighbor
ties go to the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError
from .records import read_records, write_records

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray      # k x d
    assignments: np.ndarray    # N ints, each < k
    inertia: float
    seed: int
    iterations_run: int

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def _check_points(points: np.ndarray, name: str = "points") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise GeometryError(f"{name} must be a 2-D array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise GeometryError(f"{name} contains non-finite coordinates")
    return pts


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ||a||^2 + ||b||^2 - 2ab, clipped: cancellation can leave tiny negatives
    d2 = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty(k, dtype=np.int64)
    centers[0] = rng.integers(n)
    d2 = _sq_dists(points, points[centers[:1]])[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = rng.integers(n)
        else:
            centers[i] = rng.choice(n, p=d2 / total)
        d2 = np.minimum(d2, _sq_dists(points, points[centers[i : i + 1]])[:, 0])
    return points[centers].copy()


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = _sq_dists(points, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, d2


def _lloyd(
    points: np.ndarray,
    centroids: np.ndarray,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    """Lloyd iterations from the given centroids.

    Returns (centroids, assignments, inertia, iterations, inertia_history)
    where the assignments are nearest-centroid under the returned centroids.
    """
    k = centroids.shape[0]
    centroids = centroids.copy()
    history: list[float] = []
    prev_inertia = np.inf
    iterations = 0
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for iterations in range(1, max_iter + 1):
        labels, _ = _assign(points, centroids)
        # direct subtraction: exact zeros when a centroid sits on its point,
        # unlike the expanded-form distances used for the argmin
        point_d2 = ((points - centroids[labels]) ** 2).sum(axis=1)
        # empty-cluster repair: move the empty centroid onto the point
        # farthest from its own centroid, drawn from a cluster that can
        # spare one (so the repair never empties another cluster)
        while True:
            counts = np.bincount(labels, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if empties.size == 0:
                break
            donors = counts[labels] > 1
            far = int(np.argmax(np.where(donors, point_d2, -np.inf)))
            centroids[empties[0]] = points[far]
            labels[far] = empties[0]
            point_d2[far] = 0.0
        inertia = float(point_d2.sum())
        history.append(inertia)
        if prev_inertia - inertia <= tol * max(prev_inertia, 1e-300) and np.isfinite(prev_inertia):
            break
        prev_inertia = inertia
        # fixed reduction order: per-dimension bincount sums
        sums = np.stack(
            [np.bincount(labels, weights=points[:, j], minlength=k) for j in range(points.shape[1])],
            axis=1,
        )
        centroids = sums / counts[:, None]
    return centroids, labels, history[-1], iterations, history


def kmeans(points, k: int, seed: int, max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL) -> ClusterModel:
    """K-means with k-means++ seeding; deterministic for fixed (points, k, seed)."""
    pts = _check_points(points)
    n = pts.shape[0]
    if k < 1:
        raise GeometryError("k must be >= 1")
    if n < k:
        raise GeometryError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    init = _kmeans_pp_init(pts, k, rng)
    centroids, labels, inertia, iterations, _ = _lloyd(pts, init, max_iter, tol)
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=labels,
        inertia=inertia,
        seed=seed,
        iterations_run=iterations,
    )


def _grow_centroids(points: np.ndarray, model: ClusterModel, k: int) -> np.ndarray:
    """Extend a converged model to k centroids by adding the points that are
    farthest from their assigned centroid. Starting Lloyd from this set cannot
    end above the smaller model's inertia."""
    centroids = model.centroids
    labels, _ = _assign(points, centroids)
    point_d2 = ((points - centroids[labels]) ** 2).sum(axis=1)
    extra = []
    for _ in range(k - model.k):
        far = int(np.argmax(point_d2))
        extra.append(points[far])
        point_d2 = np.minimum(point_d2, _sq_dists(points, points[far : far + 1])[:, 0])
    return np.vstack([centroids, np.array(extra)])


def inertia_curve(points, k_range: Sequence[int], seed: int) -> list[tuple[int, float]]:
    """Within-cluster sum of squares per k, non-increasing in k.

    Each k gets a fresh seeded run; in addition, the previous k's solution is
    grown by one-or-more far points and refined, and the better of the two is
    kept. That nesting is what makes the curve monotone even when a fresh run
    lands in a worse local optimum.
    """
    pts = _check_points(points)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise GeometryError("k_range is empty")
    if ks[0] < 1 or ks[-1] > pts.shape[0]:
        raise GeometryError(f"k_range must lie within [1, {pts.shape[0]}]")
    out: list[tuple[int, float]] = []
    best: ClusterModel | None = None
    for k in ks:
        model = kmeans(pts, k, seed)
        if best is not None:
            grown = _grow_centroids(pts, best, k)
            centroids, labels, inertia, iterations, _ = _lloyd(pts, grown)
            if inertia < model.inertia:
                model = ClusterModel(
                    k=k,
                    centroids=centroids,
                    assignments=labels,
                    inertia=inertia,
                    seed=seed,
                    iterations_run=iterations,
                )
        best = model
        out.append((k, model.inertia))
    return out


def silhouette(points, assignments) -> float:
    """Mean silhouette over all points; singleton clusters contribute 0."""
    pts = _check_points(points)
    labels = np.asarray(assignments, dtype=np.int64)
    if labels.shape[0] != pts.shape[0]:
        raise GeometryError("assignments length must match points")
    unique = np.unique(labels)
    if unique.size < 2:
        raise GeometryError("silhouette requires at least 2 clusters")
    dists = np.sqrt(_sq_dists(pts, pts))
    n = pts.shape[0]
    scores = np.zeros(n)
    masks = {int(c): labels == c for c in unique}
    sizes = {c: int(m.sum()) for c, m in masks.items()}
    for i in range(n):
        own = int(labels[i])
        if sizes[own] == 1:
            continue  # score 0 by convention
        a = dists[i][masks[own]].sum() / (sizes[own] - 1)
        b = min(dists[i][masks[c]].mean() for c in masks if c != own)
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def knn(points2d, query_index: int, m: int) -> tuple[np.ndarray, float]:
    """The m nearest neighbors of one point (itself excluded) and the radius
    that encloses them. Distance ties break toward the lower point index."""
    pts = _check_points(points2d, "points2d")
    n = pts.shape[0]
    if not 0 <= query_index < n:
        raise GeometryError(f"query_index {query_index} out of range for {n} points")
    if m < 1 or m > n - 1:
        raise GeometryError(f"m must be in [1, {n - 1}], got {m}")
    d = np.sqrt(((pts - pts[query_index]) ** 2).sum(axis=1))
    d[query_index] = np.inf
    order = np.lexsort((np.arange(n), d))
    neighbors = order[:m]
    return neighbors, float(d[neighbors[-1]])


def _knn_radii(sub: np.ndarray, m: int, chunk: int = 1024) -> np.ndarray:
    """Distance to the m-th nearest neighbor (self excluded) for every row."""
    n = sub.shape[0]
    radii = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = _sq_dists(sub[start:stop], sub)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        radii[start:stop] = np.sqrt(np.partition(d2, m - 1, axis=1)[:, m - 1])
    return radii


def densest_core(points2d, candidate_indices, m: int) -> tuple[int, np.ndarray, float]:
    """Find the candidate whose m nearest neighbors (within the candidate set)
    sit inside the smallest radius.

    Returns (center_index, member_indices, radius) with members = the center
    followed by its m neighbors in distance order; indices are global. Ties on
    radius resolve to the lowest center index.
    """
    pts = _check_points(points2d, "points2d")
    cands = np.unique(np.asarray(candidate_indices, dtype=np.int64))
    if cands.size == 0:
        raise GeometryError("candidate_indices is empty")
    if cands[0] < 0 or cands[-1] >= pts.shape[0]:
        raise GeometryError("candidate index out of range")
    if m < 1 or m > cands.size - 1:
        raise GeometryError(f"m must be in [1, {cands.size - 1}], got {m}")
    sub = pts[cands]
    radii = _knn_radii(sub, m)
    center_pos = int(np.argmin(radii))  # ties: argmin picks the first, i.e. lowest index
    d = np.sqrt(((sub - sub[center_pos]) ** 2).sum(axis=1))
    d[center_pos] = np.inf
    order = np.lexsort((cands, d))[:m]
    members = np.concatenate(([cands[center_pos]], cands[order]))
    return int(cands[center_pos]), members, float(radii[center_pos])


# ---------------------------------------------------------------------------
# Serialization (header record + one assignment per line)


def save_cluster(model: ClusterModel, ids: Sequence[str], path: str | Path) -> str:
    if len(ids) != model.assignments.shape[0]:
        raise GeometryError("ids length must match assignments")
    header = {
        "kind": "cluster_model",
        "k": model.k,
        "seed": model.seed,
        "inertia": model.inertia,
        "iterations_run": model.iterations_run,
        "centroids": [[float(v) for v in row] for row in model.centroids],
    }
    rows = ({"id": pid, "cluster": int(c)} for pid, c in zip(ids, model.assignments))
    return write_records(path, [header, *rows])


def load_cluster(path: str | Path) -> tuple[ClusterModel, list[str]]:
    records = read_records(path)
    if not records or records[0].get("kind") != "cluster_model":
        raise GeometryError(f"{path}: missing cluster_model header")
    header = records[0]
    ids = [r["id"] for r in records[1:]]
    assignments = np.array([r["cluster"] for r in records[1:]], dtype=np.int64)
    centroids = np.array(header["centroids"], dtype=np.float64)
    model = ClusterModel(
        k=int(header["k"]),
        centroids=centroids,
        assignments=assignments,
        inertia=float(header["inertia"]),
        seed=int(header["seed"]),
        iterations_run=int(header["iterations_run"]),
    )
    if assignments.size and assignments.max() >= model.k:
        raise GeometryError(f"{path}: assignment index exceeds k")
    return model, ids
