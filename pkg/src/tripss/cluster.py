"""Density-based segmentation of fused embeddings.

HDBSCAN (mutual-reachability MST, condensed tree, excess-of-mass extraction)
selects scene-like clusters; hyperparameters are chosen by maximizing the
DBCV validity index over a grid; each cluster is represented by its medoid.

Everything operates on a dense Euclidean distance matrix: videos sampled at
around 1 fps stay in the low thousands of frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

logger = logging.getLogger(__name__)

NOISE = -1

DEFAULT_MIN_CLUSTER_SIZES = (2, 3, 5, 8, 12, 20)
DEFAULT_MIN_SAMPLES = (1, 2, 5, 10)


class UndefinedDbcvError(ValueError):
    """DBCV is undefined: fewer than two clusters or no clustered points."""


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int
    min_samples: int

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.min_samples > self.min_cluster_size:
            raise ValueError("min_samples must not exceed min_cluster_size")


@dataclass(frozen=True)
class MutualReachabilityGraph:
    core_distances: np.ndarray  # (n,)
    weights: np.ndarray  # (n, n) dense, symmetric, zero diagonal


@dataclass
class ClusterSolution:
    labels: np.ndarray  # (n,), NOISE = -1
    params: ClusterParams | None
    dbcv: float | None
    medoid_indices: dict[int, int]  # cluster label -> row index
    note: str = ""
    report: list[dict] = field(default_factory=list)  # per grid point diagnostics


def _distance_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return squareform(pdist(X)) if X.shape[0] > 1 else np.zeros((X.shape[0],) * 2)


def core_distances(X: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest neighbor (self excluded)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n <= min_samples:
        raise ValueError(f"need more than min_samples={min_samples} points, got {n}")
    dist = _distance_matrix(X)
    # column 0 of the sorted row is the zero self-distance
    return np.sort(dist, axis=1)[:, min_samples]


def mutual_reachability(X: np.ndarray, core: np.ndarray) -> MutualReachabilityGraph:
    """d_mreach(a, b) = max(core(a), core(b), d(a, b)); zero diagonal."""
    dist = _distance_matrix(X)
    core = np.asarray(core, dtype=np.float64)
    if core.shape[0] != dist.shape[0]:
        raise ValueError("core distance count does not match point count")
    weights = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(weights, 0.0)
    return MutualReachabilityGraph(core_distances=core, weights=weights)


def build_mst(graph: MutualReachabilityGraph | np.ndarray) -> list[tuple[int, int, float]]:
    """Prim's minimum spanning tree over a dense weight matrix.

    Ties break deterministically toward the smaller vertex index.
    """
    weights = graph.weights if isinstance(graph, MutualReachabilityGraph) else np.asarray(graph)
    n = weights.shape[0]
    if n < 2:
        raise ValueError("MST requires at least 2 points")
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    best[0] = 0.0
    np.minimum(best, weights[0], out=best)
    best_from[weights[0] <= best] = 0
    best_from[0] = -1
    edges: list[tuple[int, int, float]] = []
    for _ in range(n - 1):
        masked = np.where(in_tree, np.inf, best)
        v = int(np.argmin(masked))  # first minimum -> smallest index on ties
        u = int(best_from[v])
        edges.append((min(u, v), max(u, v), float(best[v])))
        in_tree[v] = True
        improved = ~in_tree & (weights[v] < best)
        best[improved] = weights[v][improved]
        best_from[improved] = v
    return edges


def _single_linkage(edges: list[tuple[int, int, float]], n: int):
    """Union-find dendrogram from MST edges sorted ascending.

    Returns (children, heights, sizes) keyed by internal node ids n..2n-2.
    """
    order = sorted(edges, key=lambda e: (e[2], e[0], e[1]))
    parent = list(range(2 * n - 1))
    children: dict[int, tuple[int, int]] = {}
    heights: dict[int, float] = {}
    sizes = [1] * n + [0] * (n - 1)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    next_id = n
    for u, v, w in order:
        ru, rv = find(u), find(v)
        children[next_id] = (ru, rv)
        heights[next_id] = w
        sizes[next_id] = sizes[ru] + sizes[rv]
        parent[ru] = parent[rv] = next_id
        next_id += 1
    return children, heights, sizes


def _leaves_under(node: int, children: dict[int, tuple[int, int]], n: int) -> list[int]:
    stack, out = [node], []
    while stack:
        cur = stack.pop()
        if cur < n:
            out.append(cur)
        else:
            stack.extend(children[cur])
    return out


def condense_and_extract(
    edges: list[tuple[int, int, float]], n: int, min_cluster_size: int
) -> np.ndarray:
    """Condense the single-linkage hierarchy and extract clusters by excess of mass.

    Splits spawning a side with fewer than min_cluster_size points are treated
    as points falling out of the parent. Cluster stability sums
    (lambda_point - lambda_birth) with lambda = 1 / d_mreach; the root is
    never selected, so an all-noise result is legal.
    """
    if n < 2 or n < min_cluster_size:
        return np.full(n, NOISE, dtype=np.int64)

    children, heights, _ = _single_linkage(edges, n)
    sizes = [1] * n + [0] * (n - 1)
    for node in sorted(children):
        l, r = children[node]
        sizes[node] = sizes[l] + sizes[r]

    root = 2 * n - 2
    with np.errstate(divide="ignore"):
        lam = {node: (np.inf if heights[node] == 0 else 1.0 / heights[node]) for node in children}

    # condensed tree rows: (parent_cluster, child, lambda, child_size); child is
    # a condensed cluster id (>= n) or a point (< n)
    rows: list[tuple[int, int, float, int]] = []
    relabel = {root: n}
    next_label = n + 1
    stack = [root]
    while stack:
        node = stack.pop(0)
        if node < n:
            continue
        cluster = relabel[node]
        l, r = children[node]
        big_l = sizes[l] >= min_cluster_size
        big_r = sizes[r] >= min_cluster_size
        if big_l and big_r:
            for side in (l, r):
                relabel[side] = next_label
                rows.append((cluster, next_label, lam[node], sizes[side]))
                next_label += 1
            stack.extend((l, r))
        elif big_l or big_r:
            big, small = (l, r) if big_l else (r, l)
            relabel[big] = cluster
            for leaf in _leaves_under(small, children, n):
                rows.append((cluster, leaf, lam[node], 1))
            stack.append(big)
        else:
            for leaf in _leaves_under(l, children, n) + _leaves_under(r, children, n):
                rows.append((cluster, leaf, lam[node], 1))

    cluster_ids = sorted({r[0] for r in rows} | {r[1] for r in rows if r[1] >= n})
    births = {n: 0.0}
    for parent_c, child, lam_val, _size in rows:
        if child >= n:
            births[child] = lam_val
    stability = {c: 0.0 for c in cluster_ids}
    for parent_c, _child, lam_val, size in rows:
        stability[parent_c] += (lam_val - births[parent_c]) * size

    cluster_children: dict[int, list[int]] = {c: [] for c in cluster_ids}
    cluster_parent: dict[int, int] = {}
    for parent_c, child, _lam, _size in rows:
        if child >= n:
            cluster_children[parent_c].append(child)
            cluster_parent[child] = parent_c

    # excess of mass, bottom-up; the root (label n) is excluded
    selected = {c: True for c in cluster_ids if c != n}
    for node in sorted((c for c in cluster_ids if c != n), reverse=True):
        subtree = sum(stability[ch] for ch in cluster_children[node])
        if cluster_children[node] and subtree > stability[node]:
            selected[node] = False
            stability[node] = subtree
        else:
            queue = list(cluster_children[node])
            while queue:
                ch = queue.pop()
                selected[ch] = False
                queue.extend(cluster_children[ch])

    chosen = sorted(c for c, keep in selected.items() if keep)
    label_of = {c: i for i, c in enumerate(chosen)}
    labels = np.full(n, NOISE, dtype=np.int64)
    for parent_c, child, _lam, _size in rows:
        if child >= n:
            continue
        cur = parent_c
        while cur != n and cur not in label_of:
            cur = cluster_parent[cur]
        if cur in label_of:
            labels[child] = label_of[cur]
    return labels


def hdbscan(X: np.ndarray, params: ClusterParams) -> np.ndarray:
    """Full pipeline: core distances -> mutual reachability -> MST -> extraction."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if n < params.min_cluster_size or n <= params.min_samples:
        return np.full(n, NOISE, dtype=np.int64)
    core = core_distances(X, params.min_samples)
    graph = mutual_reachability(X, core)
    edges = build_mst(graph)
    return condense_and_extract(edges, n, params.min_cluster_size)


def _all_points_core_distances(dist: np.ndarray, dim: int) -> np.ndarray:
    """Inverse-distance power mean density estimate over all clustered points.

    Points with a zero-distance twin get core distance 0.
    """
    m = dist.shape[0]
    if m < 2:
        return np.zeros(m)
    with np.errstate(divide="ignore"):
        inv = np.where(dist > 0, 1.0 / dist, np.inf) ** dim
    np.fill_diagonal(inv, 0.0)
    out = np.empty(m)
    for i in range(m):
        row = inv[i]
        finite = row[np.isfinite(row)]
        has_twin = np.isinf(row).any()
        if has_twin:
            out[i] = 0.0
        else:
            out[i] = (finite.sum() / (m - 1)) ** (-1.0 / dim)
    return out


def dbcv(X: np.ndarray, labels: np.ndarray) -> float:
    """Density-based cluster validity in [-1, 1].

    Mutual reachability uses the all-points core distance computed over every
    clustered (non-noise) point; per-cluster sparseness is the largest edge of
    the cluster's internal reachability MST; separation is the smallest
    cross-cluster reachability distance. Noise points count in the weights but
    contribute no cluster term.

    The max-MST-edge sparseness is tie-invariant (every MST of a graph has
    the same sorted weight sequence), which keeps the score well-defined on
    mutual-reachability graphs, where exact weight ties are systematic.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    cluster_ids = sorted(set(labels[labels != NOISE].tolist()))
    if len(cluster_ids) < 2:
        raise UndefinedDbcvError(
            "undefined DBCV: need at least two clusters "
            f"(got {len(cluster_ids)})"
        )

    member_idx = np.flatnonzero(labels != NOISE)
    pts = X[member_idx]
    sub_labels = labels[member_idx]
    dim = X.shape[1]
    dist = _distance_matrix(pts)
    apc = _all_points_core_distances(dist, dim)
    mrd = np.maximum(dist, np.maximum(apc[:, None], apc[None, :]))
    np.fill_diagonal(mrd, 0.0)

    score = 0.0
    for c in cluster_ids:
        rows = np.flatnonzero(sub_labels == c)
        size = rows.shape[0]
        if size == 1:
            sparseness = 0.0
        else:
            sub = mrd[np.ix_(rows, rows)]
            sparseness = max(w for _u, _v, w in build_mst(sub))
        others = np.flatnonzero(sub_labels != c)
        separation = float(mrd[np.ix_(rows, others)].min())
        denom = max(separation, sparseness)
        validity = 0.0 if denom == 0 else (separation - sparseness) / denom
        score += (size / n) * validity
    return float(score)


def grid_search(
    X: np.ndarray,
    grid: list[ClusterParams] | None = None,
    max_noise_fraction: float = 0.5,
) -> ClusterSolution:
    """Run HDBSCAN per grid point and keep the configuration maximizing DBCV.

    Configurations with undefined DBCV or more than half the points labeled
    noise are skipped. Near-ties (1e-9) prefer larger min_cluster_size, then
    smaller min_samples. If everything is skipped, the configuration with the
    fewest noise points and at least one cluster wins; failing that, the video
    collapses to a single cluster of all frames.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if grid is None:
        grid = default_grid(n)

    report: list[dict] = []
    scored: list[tuple[float, ClusterParams, np.ndarray]] = []
    unscored: list[tuple[int, ClusterParams, np.ndarray]] = []
    for params in grid:
        labels = hdbscan(X, params)
        n_noise = int((labels == NOISE).sum())
        n_clusters = len(set(labels.tolist()) - {NOISE})
        entry = {
            "params": {"min_cluster_size": params.min_cluster_size, "min_samples": params.min_samples},
            "n_clusters": n_clusters,
            "n_noise": n_noise,
        }
        if n_noise > max_noise_fraction * n:
            entry["dbcv"] = "skipped:noise>50%"
            if n_clusters >= 1:
                unscored.append((n_noise, params, labels))
            report.append(entry)
            continue
        try:
            score = dbcv(X, labels)
        except UndefinedDbcvError:
            entry["dbcv"] = "skipped:undefined"
            if n_clusters >= 1:
                unscored.append((n_noise, params, labels))
            report.append(entry)
            continue
        entry["dbcv"] = score
        report.append(entry)
        scored.append((score, params, labels))

    if scored:
        best_score = max(s for s, _p, _l in scored)
        candidates = [(p, l, s) for s, p, l in scored if s >= best_score - 1e-9]
        candidates.sort(key=lambda c: (-c[0].min_cluster_size, c[0].min_samples))
        params, labels, score = candidates[0]
        return ClusterSolution(
            labels=labels,
            params=params,
            dbcv=score,
            medoid_indices=medoids(X, labels),
            report=report,
        )

    if unscored:
        unscored.sort(key=lambda c: (c[0], -c[1].min_cluster_size, c[1].min_samples))
        n_noise, params, labels = unscored[0]
        return ClusterSolution(
            labels=labels,
            params=params,
            dbcv=None,
            medoid_indices=medoids(X, labels),
            note="no configuration had a defined DBCV; kept the least-noise clustering",
            report=report,
        )

    labels = np.zeros(n, dtype=np.int64)
    return ClusterSolution(
        labels=labels,
        params=None,
        dbcv=None,
        medoid_indices=medoids(X, labels),
        note="grid exhausted; single cluster of all frames",
        report=report,
    )


def default_grid(n: int) -> list[ClusterParams]:
    """Default hyperparameter grid clipped to the dataset size."""
    grid = []
    for mcs in DEFAULT_MIN_CLUSTER_SIZES:
        if mcs < 2 or mcs > n // 2:
            continue
        for ms in DEFAULT_MIN_SAMPLES:
            if ms < 1 or ms > mcs or ms >= n:
                continue
            grid.append(ClusterParams(min_cluster_size=mcs, min_samples=ms))
    return grid


def medoids(X: np.ndarray, labels: np.ndarray) -> dict[int, int]:
    """Per cluster, the member minimizing summed distance to the others.

    Ties break toward the smaller row index; noise is excluded.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    out: dict[int, int] = {}
    for c in sorted(set(labels.tolist()) - {NOISE}):
        rows = np.flatnonzero(labels == c)
        sub = _distance_matrix(X[rows])
        sums = sub.sum(axis=1)
        out[int(c)] = int(rows[int(np.argmin(sums))])
    return out
