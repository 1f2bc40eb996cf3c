"""2-D projection of embedding matrices by t-SNE, with optimizer diagnostics.

The exact O(N^2) gradient is used up to `exact_limit` points; beyond that the
affinities are restricted to 3*perplexity neighbors and the repulsive term is
approximated with a Barnes-Hut quadtree (theta-controlled). The quadtree path
is written for correctness, not speed: full-corpus projections take a while.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TsneError
from .records import dumps_record, read_records, sha256_text, write_records

_ENTROPY_TOL = 1e-10
_MAX_SEARCH_STEPS = 256
_DUPLICATE_JITTER = 1e-10


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    learning_rate: float = 200.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    early_exaggeration_iters: int = 250
    theta: float = 0.5
    pca_dim: int | None = 50
    exact_limit: int = 5000
    init_scale: float = 1e-4
    min_gain: float = 0.01
    kl_log_every: int = 25


@dataclass
class Projection2D:
    ids: list[str]
    coords: np.ndarray  # N x 2
    params: TsneParams
    seed: int
    kl_history: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise TsneError(f"coords must be N x 2, got {coords.shape}")
        if not np.isfinite(coords).all():
            raise TsneError("coords contain non-finite values")
        if len(self.ids) != coords.shape[0]:
            raise TsneError("ids must align with coordinate rows")
        self.coords = coords

    def content_digest(self) -> str:
        return sha256_text("".join(dumps_record(r) + "\n" for r in _projection_records(self)))


def _as_array(matrix) -> tuple[np.ndarray, list[str]]:
    if hasattr(matrix, "vectors"):
        return np.asarray(matrix.vectors, dtype=np.float64), list(matrix.ids)
    arr = np.asarray(matrix, dtype=np.float64)
    return arr, [str(i) for i in range(arr.shape[0])]


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


def pca_reduce(X: np.ndarray, dim: int) -> np.ndarray:
    """Project onto the top principal components, with a sign convention that
    makes the result reproducible (largest-magnitude loading positive)."""
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[: min(dim, vt.shape[0])]
    for r in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[r])))
        if comps[r, j] < 0:
            comps[r] = -comps[r]
    return Xc @ comps.T


def _perturb_duplicates(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # exact duplicates break the bandwidth search (zero-distance rows)
    _, inverse = np.unique(X, axis=0, return_inverse=True)
    seen: set[int] = set()
    X = X.copy()
    for i in range(X.shape[0]):
        key = int(inverse[i])
        if key in seen:
            X[i] = X[i] + rng.normal(size=X.shape[1]) * _DUPLICATE_JITTER
        else:
            seen.add(key)
    return X


def _search_bandwidth(d2_row: np.ndarray, target_entropy: float) -> tuple[np.ndarray, float]:
    """Binary-search the precision so the row's conditional distribution hits
    the target entropy. d2_row must not contain the self distance."""
    beta, lo, hi = 1.0, 0.0, math.inf
    p = np.zeros_like(d2_row)
    for _ in range(_MAX_SEARCH_STEPS):
        p = np.exp(-d2_row * beta)
        s = p.sum()
        if s <= 0.0:
            entropy = 0.0
        else:
            entropy = math.log(s) + beta * float(d2_row @ p) / s
        diff = entropy - target_entropy
        if abs(diff) <= _ENTROPY_TOL:
            break
        if diff > 0:
            lo = beta
            beta = beta * 2.0 if hi == math.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (lo + beta) / 2.0
    s = p.sum()
    if s <= 0.0:
        raise TsneError("bandwidth search failed: degenerate distance row")
    return p / s, beta


def conditional_affinities(d2_rows: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-stochastic conditional affinities with per-row calibrated bandwidth."""
    target = math.log(perplexity)
    out = np.empty_like(d2_rows)
    for i in range(d2_rows.shape[0]):
        out[i], _ = _search_bandwidth(d2_rows[i], target)
    return out


def joint_affinities(X: np.ndarray, perplexity: float) -> np.ndarray:
    """Dense symmetric affinity matrix: non-negative, zero diagonal, sums to 1."""
    n = X.shape[0]
    d2 = _sq_dists(X, X)
    np.fill_diagonal(d2, 0.0)
    target = math.log(perplexity)
    cond = np.zeros((n, n))
    index = np.arange(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        p, _ = _search_bandwidth(row, target)
        cond[i, index != i] = p
    return (cond + cond.T) / (2.0 * n)


def _neighbor_sq_dists(X: np.ndarray, k: int, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    n = X.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    d2s = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = _sq_dists(X[start:stop], X)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        for r in range(stop - start):
            sel = part[r]
            order = np.lexsort((sel, d2[r, sel]))
            idx[start + r] = sel[order]
            d2s[start + r] = d2[r, sel[order]]
    return idx, d2s


def sparse_joint_affinities(
    X: np.ndarray, perplexity: float, n_neighbors: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric affinities restricted to each point's nearest neighbors.

    Returns COO triplets (rows, cols, vals) sorted by (row, col); vals sum to 1.
    """
    n = X.shape[0]
    nbr_idx, nbr_d2 = _neighbor_sq_dists(X, n_neighbors)
    cond = conditional_affinities(nbr_d2, perplexity)
    rows = np.repeat(np.arange(n, dtype=np.int64), n_neighbors)
    cols = nbr_idx.ravel()
    vals = cond.ravel()
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    v = np.concatenate([vals, vals])
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    boundary = np.flatnonzero(np.concatenate(([True], (np.diff(r) != 0) | (np.diff(c) != 0))))
    rows_u, cols_u = r[boundary], c[boundary]
    vals_u = np.add.reduceat(v, boundary) / (2.0 * n)
    return rows_u, cols_u, vals_u


def kl_and_grad(P: np.ndarray, Y: np.ndarray, kl_against: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Exact KL divergence and its gradient for the Student-t low-D kernel.

    `kl_against` lets the caller report KL of the raw affinities while the
    gradient uses exaggerated ones.
    """
    d2 = _sq_dists(Y, Y)
    W = 1.0 / (1.0 + d2)
    np.fill_diagonal(W, 0.0)
    Z = W.sum()
    Q = W / Z
    M = (P - Q) * W
    grad = 4.0 * (M.sum(axis=1)[:, None] * Y - M @ Y)
    Pk = P if kl_against is None else kl_against
    mask = Pk > 0
    kl = float((Pk[mask] * np.log(Pk[mask] / Q[mask])).sum())
    return kl, grad


# ---------------------------------------------------------------------------
# Barnes-Hut repulsion


class _QuadNode:
    __slots__ = ("cx", "cy", "hw", "mass", "comx", "comy", "children", "points")

    def __init__(self, cx: float, cy: float, hw: float):
        self.cx, self.cy, self.hw = cx, cy, hw
        self.mass = 0
        self.comx = 0.0
        self.comy = 0.0
        self.children: list["_QuadNode | None"] | None = None
        self.points: list[int] = []


class _QuadTree:
    def __init__(self, Y: np.ndarray, max_depth: int = 40):
        lo = Y.min(axis=0)
        hi = Y.max(axis=0)
        center = (lo + hi) / 2.0
        hw = float(max(hi - lo) / 2.0) + 1e-9
        self.Y = Y
        self.max_depth = max_depth
        self.root = _QuadNode(float(center[0]), float(center[1]), hw)
        for i in range(Y.shape[0]):
            self._insert(self.root, i, 0)

    def _insert(self, node: _QuadNode, i: int, depth: int) -> None:
        x, y = self.Y[i]
        node.comx = (node.comx * node.mass + x) / (node.mass + 1)
        node.comy = (node.comy * node.mass + y) / (node.mass + 1)
        node.mass += 1
        if node.children is None:
            if not node.points or depth >= self.max_depth:
                node.points.append(i)
                return
            # split: the residents were already counted in this node's
            # aggregates, so they only descend into children
            node.children = [None, None, None, None]
            resident = node.points
            node.points = []
            for j in resident:
                self._descend(node, j, depth)
            self._descend(node, i, depth)
        else:
            self._descend(node, i, depth)

    def _descend(self, node: _QuadNode, i: int, depth: int) -> None:
        x, y = self.Y[i]
        quadrant = (2 if y > node.cy else 0) + (1 if x > node.cx else 0)
        child = node.children[quadrant]
        if child is None:
            half = node.hw / 2.0
            cx = node.cx + (half if x > node.cx else -half)
            cy = node.cy + (half if y > node.cy else -half)
            child = _QuadNode(cx, cy, half)
            node.children[quadrant] = child
        self._insert(child, i, depth + 1)


def _bh_repulsion(Y: np.ndarray, theta: float) -> tuple[np.ndarray, float]:
    """Approximate repulsive forces and partition sum via quadtree traversal.

    rep[i] = sum_j w_ij^2 (y_i - y_j), Z = sum_{i != j} w_ij with
    w = 1/(1 + d^2); far cells contribute through their center of mass.
    """
    tree = _QuadTree(Y)
    n = Y.shape[0]
    rep = np.zeros_like(Y)
    z_total = 0.0
    theta2 = theta * theta
    for i in range(n):
        yi_x, yi_y = Y[i]
        acc_x = acc_y = z_i = 0.0
        stack = [tree.root]
        while stack:
            node = stack.pop()
            if node.mass == 0:
                continue
            dx = yi_x - node.comx
            dy = yi_y - node.comy
            d2 = dx * dx + dy * dy
            if node.children is None:
                for j in node.points:
                    if j == i:
                        continue
                    djx = yi_x - Y[j, 0]
                    djy = yi_y - Y[j, 1]
                    w = 1.0 / (1.0 + djx * djx + djy * djy)
                    z_i += w
                    acc_x += w * w * djx
                    acc_y += w * w * djy
            elif (2.0 * node.hw) ** 2 < theta2 * d2:
                w = 1.0 / (1.0 + d2)
                z_i += node.mass * w
                acc_x += node.mass * w * w * dx
                acc_y += node.mass * w * w * dy
            else:
                for child in node.children:
                    if child is not None:
                        stack.append(child)
        rep[i, 0] = acc_x
        rep[i, 1] = acc_y
        z_total += z_i
    return rep, z_total


def bh_kl_and_grad(
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
    Y: np.ndarray,
    theta: float,
    kl_vals: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Barnes-Hut gradient over sparse affinities. theta=0 recovers the exact sum."""
    diff = Y[rows] - Y[cols]
    d2 = (diff * diff).sum(axis=1)
    w = 1.0 / (1.0 + d2)
    attr = np.zeros_like(Y)
    np.add.at(attr, rows, (vals * w)[:, None] * diff)
    rep, z = _bh_repulsion(Y, theta)
    if z <= 0.0:
        raise TsneError("degenerate embedding: empty partition sum")
    grad = 4.0 * (attr - rep / z)
    pv = vals if kl_vals is None else kl_vals
    mask = pv > 0
    kl = float((pv[mask] * np.log(pv[mask] / w[mask])).sum()) + math.log(z)
    return kl, grad


# ---------------------------------------------------------------------------
# Optimization


def _optimize(step, n: int, params: TsneParams, rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, float]]]:
    Y = rng.normal(scale=params.init_scale, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history: list[tuple[int, float]] = []
    for it in range(params.iterations):
        exaggerate = it < params.early_exaggeration_iters
        momentum = 0.5 if exaggerate else 0.8
        want_kl = it % params.kl_log_every == 0
        kl, grad = step(Y, exaggerate, want_kl)
        if want_kl:
            if not math.isfinite(kl):
                raise TsneError(f"KL divergence became non-finite at iteration {it}")
            history.append((it, kl))
        inc = (update * grad) < 0.0
        gains[inc] += 0.2
        gains[~inc] *= 0.8
        np.clip(gains, params.min_gain, None, out=gains)
        update = momentum * update - params.learning_rate * (gains * grad)
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if not np.isfinite(Y).all():
            raise TsneError(f"embedding became non-finite at iteration {it} (step size too large)")
    kl, _ = step(Y, False, True)
    if not math.isfinite(kl):
        raise TsneError(f"KL divergence became non-finite at iteration {params.iterations}")
    history.append((params.iterations, kl))
    return Y, history


def project(matrix, params: TsneParams | None = None, seed: int = 0) -> Projection2D:
    """Run t-SNE on an embedding matrix; deterministic for fixed inputs and seed."""
    params = params or TsneParams()
    X, ids = _as_array(matrix)
    n = X.shape[0]
    if params.perplexity < 2:
        raise TsneError("perplexity must be >= 2")
    if n < 3 * params.perplexity + 1:
        raise TsneError(
            f"N={n} is too small for perplexity {params.perplexity}; "
            f"need N >= {math.ceil(3 * params.perplexity + 1)} or a lower perplexity"
        )
    if not np.isfinite(X).all():
        raise TsneError("input matrix contains non-finite values")
    rng = np.random.default_rng(seed)
    if params.pca_dim and X.shape[1] > params.pca_dim:
        X = pca_reduce(X, params.pca_dim)
    X = _perturb_duplicates(X, rng)

    if n <= params.exact_limit:
        P = joint_affinities(X, params.perplexity)
        P_eff = P * params.early_exaggeration

        def step(Y, exaggerate, want_kl):
            return kl_and_grad(P_eff if exaggerate else P, Y, kl_against=P if want_kl else None)

    else:
        k = int(min(n - 1, math.floor(3 * params.perplexity)))
        rows, cols, vals = sparse_joint_affinities(X, params.perplexity, k)
        vals_eff = vals * params.early_exaggeration

        def step(Y, exaggerate, want_kl):
            return bh_kl_and_grad(
                rows, cols, vals_eff if exaggerate else vals, Y, params.theta,
                kl_vals=vals if want_kl else None,
            )

    Y, history = _optimize(step, n, params, rng)
    return Projection2D(ids=ids, coords=Y, params=params, seed=seed, kl_history=history)


def trustworthiness(matrix, projection, neighborhood_size: int) -> float:
    """How faithfully the 2-D neighborhoods preserve high-D ones (1 = perfect).

    Penalizes points that enter a projected neighborhood without being among
    the same point's nearest neighbors in the original space.
    """
    X, _ = _as_array(matrix)
    Y = projection.coords if isinstance(projection, Projection2D) else np.asarray(projection, dtype=np.float64)
    n = X.shape[0]
    m = neighborhood_size
    if Y.shape[0] != n:
        raise TsneError("projection rows must match matrix rows")
    if m < 1 or m >= n:
        raise TsneError(f"neighborhood_size must be in [1, {n - 1}]")
    if 2 * n - 3 * m - 1 <= 0:
        raise TsneError(f"neighborhood_size {m} too large for N={n}")
    dx = _sq_dists(X, X)
    np.fill_diagonal(dx, np.inf)
    order_x = np.argsort(dx, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    cols = np.arange(n)
    for i in range(n):
        ranks[i, order_x[i]] = cols + 1  # 1-based rank, self excluded via inf
    dy = _sq_dists(Y, Y)
    np.fill_diagonal(dy, np.inf)
    nn_y = np.argsort(dy, axis=1, kind="stable")[:, :m]
    penalty = 0
    for i in range(n):
        r = ranks[i, nn_y[i]]
        penalty += int((r[r > m] - m).sum())
    return 1.0 - 2.0 * penalty / (n * m * (2 * n - 3 * m - 1))


# ---------------------------------------------------------------------------
# Serialization


def _projection_records(proj: Projection2D) -> list[dict]:
    header = {
        "kind": "projection2d",
        "seed": proj.seed,
        "params": asdict(proj.params),
        "final_kl": proj.kl_history[-1][1] if proj.kl_history else None,
        "kl_history": [[it, kl] for it, kl in proj.kl_history],
    }
    rows = [
        {"id": pid, "x": float(x), "y": float(y)}
        for pid, (x, y) in zip(proj.ids, proj.coords)
    ]
    return [header, *rows]


def save_projection(proj: Projection2D, path: str | Path) -> str:
    return write_records(path, _projection_records(proj))


def load_projection(path: str | Path) -> Projection2D:
    records = read_records(path)
    if not records or records[0].get("kind") != "projection2d":
        raise TsneError(f"{path}: missing projection2d header")
    header = records[0]
    ids = [r["id"] for r in records[1:]]
    coords = np.array([[r["x"], r["y"]] for r in records[1:]], dtype=np.float64)
    if not ids:
        coords = np.zeros((0, 2))
    return Projection2D(
        ids=ids,
        coords=coords,
        params=TsneParams(**header["params"]),
        seed=int(header["seed"]),
        kl_history=[(int(it), float(kl)) for it, kl in header.get("kl_history", [])],
    )
