"""Density clustering via HDBSCAN.

Dense O(N^2) implementation sized for per-scene clouds: core distances,
mutual-reachability graph, Prim MST, single-linkage dendrogram, condensed
tree and excess-of-mass cluster extraction. Deterministic: no RNG anywhere,
ties broken by index order.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

NOISE = -1
_LAMBDA_FLOOR = 1e-12  # merge distances below this are treated as coincident


@dataclass
class Clustering:
    cluster_id: np.ndarray  # (N,) int64, NOISE for unclustered points
    num_clusters: int

    def members(self, cluster: int) -> np.ndarray:
        return np.nonzero(self.cluster_id == cluster)[0]


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    sq = np.sum(points**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return dist


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest neighbour, the point itself
    counting as the first."""
    k = min(max(min_samples, 1), dist.shape[0])
    return np.partition(dist, k - 1, axis=1)[:, k - 1]


def mutual_reachability(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    return np.maximum(dist, np.maximum(core[:, None], core[None, :]))


def minimum_spanning_tree(weights: np.ndarray) -> np.ndarray:
    """Kruskal on the dense weight matrix, edges processed in (w, i, j)
    order. The explicit tie convention matters: mutual-reachability graphs
    are full of exact ties (edges sharing a point's core distance) and the
    condensed-tree membership of tie points depends on the merge order, so
    library and test oracles must break ties identically."""
    n = weights.shape[0]
    if n < 2:
        return np.empty((0, 3))
    iu, ju = np.triu_indices(n, k=1)
    w = weights[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = np.arange(n, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    edges = np.empty((n - 1, 3))
    count = 0
    for k in order:
        a, b = int(iu[k]), int(ju[k])
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        parent[ra] = rb
        edges[count] = (a, b, w[k])
        count += 1
        if count == n - 1:
            break
    return edges


def single_linkage_tree(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Merge list in scipy linkage layout: (left, right, distance, size);
    merge i creates node n + i."""
    parent = np.arange(2 * n - 1, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = np.empty((n - 1, 4))
    for i, (a, b, w) in enumerate(mst_edges):
        ra, rb = find(int(a)), find(int(b))
        new = n + i
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
        merges[i] = (ra, rb, w, size[new])
    return merges


def condense_tree(merges: np.ndarray, n: int, min_cluster_size: int):
    """Collapse the dendrogram: splits where both sides hold at least
    ``min_cluster_size`` points spawn child clusters, smaller sides fall out
    point by point. Returns (parent, child, lambda, size) record arrays with
    condensed cluster ids starting at ``n`` (root = n)."""
    children = {n + i: (int(merges[i, 0]), int(merges[i, 1])) for i in range(len(merges))}
    distances = {n + i: float(merges[i, 2]) for i in range(len(merges))}
    sizes = {n + i: int(merges[i, 3]) for i in range(len(merges))}
    for leaf in range(n):
        sizes[leaf] = 1

    def leaves_of(node: int):
        stack = [node]
        out = []
        while stack:
            cur = stack.pop()
            if cur < n:
                out.append(cur)
            else:
                stack.extend(children[cur])
        return sorted(out)

    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rec_parent: list[int] = []
    rec_child: list[int] = []
    rec_lambda: list[float] = []
    rec_size: list[int] = []

    stack = [root]
    while stack:
        node = stack.pop()
        if node < n:
            continue
        label = relabel[node]
        left, right = children[node]
        lam = 1.0 / max(distances[node], _LAMBDA_FLOOR)
        big_left = sizes[left] >= min_cluster_size
        big_right = sizes[right] >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                relabel[child] = next_label
                rec_parent.append(label)
                rec_child.append(next_label)
                rec_lambda.append(lam)
                rec_size.append(sizes[child])
                next_label += 1
                stack.append(child)
        elif not big_left and not big_right:
            for child in (left, right):
                for leaf in leaves_of(child):
                    rec_parent.append(label)
                    rec_child.append(leaf)
                    rec_lambda.append(lam)
                    rec_size.append(1)
        else:
            keep, drop = (left, right) if big_left else (right, left)
            relabel[keep] = label
            stack.append(keep)
            for leaf in leaves_of(drop):
                rec_parent.append(label)
                rec_child.append(leaf)
                rec_lambda.append(lam)
                rec_size.append(1)
    return (
        np.asarray(rec_parent, dtype=np.int64),
        np.asarray(rec_child, dtype=np.int64),
        np.asarray(rec_lambda, dtype=np.float64),
        np.asarray(rec_size, dtype=np.int64),
    )


def cluster_stabilities(parents, childs, lambdas, sizes, n: int) -> dict[int, float]:
    births: dict[int, float] = {}
    for child, lam in zip(childs, lambdas):
        if child >= n:
            births[int(child)] = min(float(lam), births.get(int(child), np.inf))
    births[n] = 0.0
    stability: dict[int, float] = defaultdict(float)
    for parent, lam, size in zip(parents, lambdas, sizes):
        stability[int(parent)] += (float(lam) - births[int(parent)]) * int(size)
    return dict(stability)


def extract_clusters_eom(parents, childs, lambdas, sizes, n: int) -> list[list[int]]:
    """Excess-of-mass selection; the root is never selectable. Returns the
    member point lists of the selected clusters."""
    stability = cluster_stabilities(parents, childs, lambdas, sizes, n)
    cluster_children = defaultdict(list)
    point_parent: dict[int, int] = {}
    for parent, child in zip(parents, childs):
        if child >= n:
            cluster_children[int(parent)].append(int(child))
        else:
            point_parent[int(child)] = int(parent)

    all_clusters = sorted(stability)
    selected: dict[int, bool] = {c: False for c in all_clusters}
    score = dict(stability)
    for c in reversed(all_clusters):
        if c == n:
            continue
        child_sum = sum(score[ch] for ch in cluster_children[c])
        if cluster_children[c] and child_sum > stability[c]:
            score[c] = child_sum
            selected[c] = False
        else:
            selected[c] = True
            stack = list(cluster_children[c])
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(cluster_children[d])

    # nearest selected ancestor-or-self per condensed cluster
    parent_of = {}
    for parent, child in zip(parents, childs):
        if child >= n:
            parent_of[int(child)] = int(parent)
    owner: dict[int, int | None] = {}

    def owning_cluster(c: int):
        if c in owner:
            return owner[c]
        if selected.get(c, False):
            owner[c] = c
        elif c == n:
            owner[c] = None
        else:
            owner[c] = owning_cluster(parent_of[c])
        return owner[c]

    groups: dict[int, list[int]] = defaultdict(list)
    for point, par in point_parent.items():
        own = owning_cluster(par)
        if own is not None:
            groups[own].append(point)
    return [sorted(groups[c]) for c in sorted(groups, key=lambda c: min(groups[c]))]


def hdbscan(points: np.ndarray, min_cluster_size: int = 10, min_samples: int = 5) -> Clustering:
    """Cluster points; ids are dense, ordered by each cluster's smallest
    member index, with NOISE (-1) for unclustered points."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    labels = np.full(n, NOISE, dtype=np.int64)
    if n < 2 or n < min_cluster_size:
        return Clustering(cluster_id=labels, num_clusters=0)
    dist = pairwise_distances(points)
    core = core_distances(dist, min_samples)
    mreach = mutual_reachability(dist, core)
    mst = minimum_spanning_tree(mreach)
    merges = single_linkage_tree(mst, n)
    parents, childs, lambdas, sizes = condense_tree(merges, n, min_cluster_size)
    clusters = extract_clusters_eom(parents, childs, lambdas, sizes, n)
    for cid, members in enumerate(clusters):
        labels[members] = cid
    return Clustering(cluster_id=labels, num_clusters=len(clusters))
