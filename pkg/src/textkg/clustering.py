"""Density-based clustering over embedding vectors.

``hdbscan_labels`` is a self-contained HDBSCAN: mutual-reachability
distances, a deterministic Prim minimum spanning tree, single-linkage
condensation with a minimum cluster size, and excess-of-mass stability
selection (the root is never selected, so a structureless input is all
noise). ``threshold_labels`` is the simple distance-threshold agglomerative
mode used as a test double and as an optional pipeline setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-10


def cosine_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    sims = np.clip(vectors @ vectors.T, -1.0, 1.0)
    dist = 1.0 - sims
    np.fill_diagonal(dist, 0.0)
    return np.maximum(dist, 0.0)


def _prim_mst(weights: np.ndarray) -> list[tuple[float, int, int]]:
    """Deterministic Prim MST; ties resolved by smallest node index."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    best = weights[0].copy()
    best_from[:] = 0
    best[0] = np.inf
    edges: list[tuple[float, int, int]] = []
    for _ in range(n - 1):
        nxt = int(np.argmin(best))
        edges.append((float(best[nxt]), int(best_from[nxt]), nxt))
        in_tree[nxt] = True
        improved = weights[nxt] < best
        improved &= ~in_tree
        best[improved] = weights[nxt][improved]
        best_from[improved] = nxt
        best[nxt] = np.inf
    return edges


@dataclass
class _Condensed:
    parent: int | None
    birth_lambda: float
    points: list[tuple[int, float]] = field(default_factory=list)
    children: list[tuple[int, float, int]] = field(default_factory=list)  # (id, lambda, size)


def hdbscan_labels(vectors: np.ndarray, min_cluster_size: int = 2,
                   min_samples: int | None = None) -> np.ndarray:
    """Cluster unit vectors by cosine density; -1 marks noise."""
    n = len(vectors)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    min_cluster_size = max(2, int(min_cluster_size))
    if n == 1:
        return np.array([-1], dtype=np.int64)
    if min_samples is None:
        min_samples = min_cluster_size
    min_samples = max(1, min(int(min_samples), n))

    dist = cosine_distance_matrix(np.asarray(vectors, dtype=np.float64))
    # Core distance: distance to the min_samples-th neighbor, self included.
    sorted_dist = np.sort(dist, axis=1)
    core = sorted_dist[:, min_samples - 1]
    reach = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(reach, 0.0)

    edges = sorted(_prim_mst(reach),
                   key=lambda e: (e[0], min(e[1], e[2]), max(e[1], e[2])))

    # Single-linkage dendrogram over the MST.
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    current: dict[int, int] = {i: i for i in range(n)}
    sizes: dict[int, int] = {i: 1 for i in range(n)}
    dendro: dict[int, tuple[int, int, float]] = {}
    next_id = n
    for weight, a, b in edges:
        ra, rb = find(a), find(b)
        da, db = current[ra], current[rb]
        node = next_id
        next_id += 1
        dendro[node] = (da, db, weight)
        sizes[node] = sizes[da] + sizes[db]
        parent[ra] = node
        parent[rb] = node
        parent[node] = node
        current[node] = node

    root = next_id - 1

    def leaves(node: int) -> list[int]:
        stack, out = [node], []
        while stack:
            cur = stack.pop()
            if cur < n:
                out.append(cur)
            else:
                left, right, _ = dendro[cur]
                stack.extend((left, right))
        return out

    # Condensed tree: clusters smaller than min_cluster_size fall out as points.
    condensed: dict[int, _Condensed] = {0: _Condensed(parent=None, birth_lambda=0.0)}
    next_cluster = 1
    stack: list[tuple[int, int]] = [(root, 0)]
    while stack:
        node, cluster = stack.pop()
        if node < n:
            condensed[cluster].points.append((node, np.inf))
            continue
        left, right, weight = dendro[node]
        lam = 1.0 / max(weight, _EPS)
        left_size = sizes[left] if left >= n else 1
        right_size = sizes[right] if right >= n else 1
        left_big = left_size >= min_cluster_size
        right_big = right_size >= min_cluster_size
        if left_big and right_big:
            for child in (left, right):
                child_id = next_cluster
                next_cluster += 1
                child_size = sizes[child] if child >= n else 1
                condensed[cluster].children.append((child_id, lam, child_size))
                condensed[child_id] = _Condensed(parent=cluster, birth_lambda=lam)
                stack.append((child, child_id))
        elif left_big or right_big:
            small = right if left_big else left
            for point in leaves(small):
                condensed[cluster].points.append((point, lam))
            stack.append((left if left_big else right, cluster))
        else:
            for point in leaves(left) + leaves(right):
                condensed[cluster].points.append((point, lam))

    # Stability and excess-of-mass selection; the root is never selectable.
    stability: dict[int, float] = {}
    for cid, info in condensed.items():
        total = sum(min(lam, 1e12) - info.birth_lambda for _, lam in info.points)
        total += sum(size * (lam - info.birth_lambda)
                     for _, lam, size in info.children)
        stability[cid] = total

    selected: set[int] = set()
    subtree_value: dict[int, float] = {}
    for cid in sorted(condensed, reverse=True):
        info = condensed[cid]
        child_value = sum(subtree_value[child] for child, _, _ in info.children)
        if cid == 0:
            continue
        if info.children and child_value > stability[cid]:
            subtree_value[cid] = child_value
        else:
            subtree_value[cid] = stability[cid]
            selected.add(cid)
            _prune_descendants(condensed, cid, selected)

    labels = np.full(n, -1, dtype=np.int64)
    if selected:
        membership: dict[int, list[int]] = {cid: [] for cid in selected}
        for cid, info in condensed.items():
            owner = cid
            while owner is not None and owner not in selected:
                owner = condensed[owner].parent
            if owner is None:
                continue
            membership[owner].extend(point for point, _ in info.points)
        ordered = sorted(membership.items(), key=lambda kv: min(kv[1]) if kv[1] else -1)
        for label, (_, points) in enumerate(ordered):
            for point in points:
                labels[point] = label
    return labels


def _prune_descendants(condensed: dict[int, _Condensed], cid: int,
                       selected: set[int]) -> None:
    stack = [child for child, _, _ in condensed[cid].children]
    while stack:
        cur = stack.pop()
        selected.discard(cur)
        stack.extend(child for child, _, _ in condensed[cur].children)


def threshold_labels(vectors: np.ndarray, distance_threshold: float,
                     min_cluster_size: int = 2) -> np.ndarray:
    """Single-linkage components at a fixed cosine-distance threshold."""
    n = len(vectors)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    dist = cosine_distance_matrix(np.asarray(vectors, dtype=np.float64))
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= distance_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    labels = np.full(n, -1, dtype=np.int64)
    label = 0
    for rep in sorted(groups):
        members = groups[rep]
        if len(members) >= max(2, min_cluster_size):
            for m in members:
                labels[m] = label
            label += 1
    return labels
