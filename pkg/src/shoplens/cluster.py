"""Noise-aware density clustering of customer affinity rows.

Pipeline: core distances -> mutual reachability minimum spanning tree ->
condensed cluster tree at min_cluster_size -> excess-of-mass stability
selection. Points that never sit inside a selected cluster are noise
(label -1).

Conventions, fixed for reproducibility:
  - The core distance is the distance to the min_samples-th nearest
    neighbor, not counting the point itself.
  - Merges at equal distances collapse into one multiway event, so a
    dataset whose pairwise distances are all equal yields a single cluster
    (when n >= min_cluster_size) rather than an arbitrary binary cascade.
  - The tree root is a candidate cluster, so a single tight blob comes back
    as one cluster, never as all-noise.
  - All tie-breaking is by point index; permuting the input rows permutes
    the labeling accordingly (same partition, possibly renamed ids).
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DensityParams:
    min_cluster_size: int = 5
    min_samples: int = 5
    metric: str = "euclidean"

    def validate(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError(f"min_cluster_size must be >= 2, got {self.min_cluster_size}")
        if self.min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")
        if self.min_samples > self.min_cluster_size:
            raise ValueError("min_samples must not exceed min_cluster_size")
        if self.metric != "euclidean":
            raise ValueError(f"unsupported metric {self.metric!r}")


@dataclass
class ClusterLabeling:
    labels: np.ndarray           # per-row cluster id, -1 = noise
    n_clusters: int
    sizes: dict[int, int]        # includes -1 when noise is present


@dataclass
class ClusterProfile:
    cluster_id: int
    centroid: np.ndarray
    normalized_centroid: np.ndarray
    zero_centroid: bool


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def core_distances(points: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to each point's min_samples-th nearest neighbor (excluding
    itself)."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n <= min_samples:
        raise ValueError(f"need more than min_samples={min_samples} points, got {n}")
    dist = _pairwise(points)
    return np.sort(dist, axis=1)[:, min_samples]


def mutual_reachability_mst(points: np.ndarray, core: np.ndarray) -> list[tuple[int, int, float]]:
    """Minimum spanning tree under max(core_a, core_b, d(a, b)).

    Prim's algorithm over the complete graph; on ties the lowest-index
    vertex joins first, so the tree is deterministic.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    dist = _pairwise(points)
    mreach = np.maximum(dist, np.maximum(core[:, None], core[None, :]))

    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1)
    best[0] = 0.0
    edges: list[tuple[int, int, float]] = []
    for _ in range(n):
        candidates = np.where(in_tree, np.inf, best)
        v = int(np.argmin(candidates))  # argmin takes the first minimum: index tie-break
        in_tree[v] = True
        if parent[v] >= 0:
            edges.append((int(parent[v]), v, float(best[v])))
        improve = ~in_tree & (mreach[v] < best)
        parent[improve] = v
        best[improve] = mreach[v][improve]
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        self.parent[rb] = ra
        return ra


def _merge_tree(edges: list[tuple[int, int, float]], n: int):
    """Tie-aware single-linkage tree: equal-weight merges become one
    multiway node. Returns (root, children, weight, size, min_point) where
    leaves are point indices 0..n-1 and internal nodes follow."""
    ordered = sorted(edges, key=lambda e: (e[2], min(e[0], e[1]), max(e[0], e[1])))
    uf = _UnionFind(n)
    node_of = {i: i for i in range(n)}
    children: dict[int, list[int]] = {}
    weight: dict[int, float] = {}
    size = {i: 1 for i in range(n)}
    min_point = {i: i for i in range(n)}
    next_node = n

    i = 0
    while i < len(ordered):
        w = ordered[i][2]
        group_members: dict[int, list[int]] = {}
        while i < len(ordered) and ordered[i][2] == w:
            a, b, _ = ordered[i]
            i += 1
            ra, rb = uf.find(a), uf.find(b)
            if ra == rb:
                continue
            ma = group_members.pop(ra, None) or [node_of[ra]]
            mb = group_members.pop(rb, None) or [node_of[rb]]
            r = uf.union(ra, rb)
            group_members[r] = ma + mb
        for root, members in group_members.items():
            node = next_node
            next_node += 1
            kids = sorted(members, key=lambda c: min_point[c])
            children[node] = kids
            weight[node] = w
            size[node] = sum(size[c] for c in kids)
            min_point[node] = min(min_point[c] for c in kids)
            node_of[root] = node

    root = node_of[uf.find(0)]
    return root, children, weight, size, min_point


def _leaves_under(node: int, children: dict[int, list[int]], n: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            out.append(cur)
        else:
            stack.extend(children[cur])
    return sorted(out)


def extract_clusters(mst: list[tuple[int, int, float]],
                     params: DensityParams = DensityParams()) -> ClusterLabeling:
    """Condensed-tree extraction with excess-of-mass cluster selection.

    Walking the merge tree from the root with lambda = 1/distance: a
    component that splits into two or more pieces of at least
    min_cluster_size starts that many new clusters; smaller pieces fall out
    of their cluster as individual points. A cluster's stability is the
    accumulated (departure lambda - birth lambda) mass; a parent beats its
    children when its stability is at least the children's combined, and
    the tree root competes like any other cluster. Points whose departure
    chain never meets a selected cluster are noise.
    """
    params.validate()
    n = len(mst) + 1
    if n < 2:
        raise ValueError("need at least 2 points (one spanning-tree edge)")
    uf_check = _UnionFind(n)
    for a, b, w in mst:
        if not (0 <= a < n and 0 <= b < n) or w < 0:
            raise ValueError(f"bad edge ({a}, {b}, {w})")
        if uf_check.find(a) == uf_check.find(b):
            raise ValueError("edge list contains a cycle; not a tree")
        uf_check.union(a, b)

    root, children, weight, size, min_point = _merge_tree(mst, n)
    mcs = params.min_cluster_size

    root_cid = n
    next_cid = n + 1
    records: list[tuple[int, int, float, int]] = []  # (parent cid, point, lambda, 1)
    birth = {root_cid: 0.0}
    cluster_size = {root_cid: n}
    cluster_kids: dict[int, list[int]] = {root_cid: []}
    cluster_parent: dict[int, int] = {}
    point_departure: dict[int, tuple[int, float]] = {}
    split_records: list[tuple[int, int, float, int]] = []  # (parent, child cid, lambda, size)

    stack = [(root, root_cid)]
    while stack:
        node, cid = stack.pop()
        if node < n:
            # a bare point can only carry a cluster id if mcs were 1; guarded above
            raise AssertionError("leaf reached with a cluster identity")
        lam = math.inf if weight[node] == 0.0 else 1.0 / weight[node]
        kids = children[node]
        big = [c for c in kids if size[c] >= mcs]
        small = [c for c in kids if size[c] < mcs]
        if len(big) >= 2:
            for c in big:
                new_cid = next_cid
                next_cid += 1
                birth[new_cid] = lam
                cluster_size[new_cid] = size[c]
                cluster_kids[new_cid] = []
                cluster_kids[cid].append(new_cid)
                cluster_parent[new_cid] = cid
                split_records.append((cid, new_cid, lam, size[c]))
                stack.append((c, new_cid))
            spill = small
        elif len(big) == 1:
            stack.append((big[0], cid))
            spill = small
        else:
            spill = kids
        for c in spill:
            for p in _leaves_under(c, children, n):
                records.append((cid, p, lam, 1))
                point_departure[p] = (cid, lam)

    stability = {cid: 0.0 for cid in birth}
    for parent_cid, _, lam, sz in records + split_records:
        stability[parent_cid] += sz * (lam - birth[parent_cid])

    selected = {cid: True for cid in birth}
    if n < mcs:
        selected[root_cid] = False
    adjusted = dict(stability)
    for cid in sorted(birth, reverse=True):
        kids = cluster_kids[cid]
        if not kids:
            continue
        child_sum = sum(adjusted[k] for k in kids)
        if child_sum > adjusted[cid]:
            selected[cid] = False
            adjusted[cid] = child_sum
        else:
            walk = list(kids)
            while walk:
                d = walk.pop()
                selected[d] = False
                walk.extend(cluster_kids[d])

    raw_labels = np.full(n, -1, dtype=int)
    for p in range(n):
        cid, _ = point_departure[p]
        while cid is not None and not selected.get(cid, False):
            cid = cluster_parent.get(cid)
        if cid is not None:
            raw_labels[p] = cid

    chosen = sorted(
        {c for c in raw_labels if c >= 0},
        key=lambda c: (-int((raw_labels == c).sum()), int(np.flatnonzero(raw_labels == c)[0])),
    )
    remap = {c: i for i, c in enumerate(chosen)}
    labels = np.array([remap.get(c, -1) for c in raw_labels], dtype=int)
    sizes = {int(v): int((labels == v).sum()) for v in sorted(set(labels.tolist()))}
    return ClusterLabeling(labels=labels, n_clusters=len(chosen), sizes=sizes)


def cluster_rows(points: np.ndarray,
                 params: DensityParams = DensityParams()) -> ClusterLabeling:
    """Full pass: core distances, reachability MST, cluster extraction."""
    params.validate()
    core = core_distances(points, params.min_samples)
    mst = mutual_reachability_mst(np.asarray(points, dtype=float), core)
    return extract_clusters(mst, params)


def profile_clusters(labeling: ClusterLabeling, w: np.ndarray) -> list[ClusterProfile]:
    """Mean affinity row per non-noise cluster, plus its unit-norm version.

    A zero centroid cannot be normalized; it is flagged and left as zero.
    """
    w = np.asarray(w, dtype=float)
    if len(w) != len(labeling.labels):
        raise ValueError("labeling and affinity matrix disagree on row count")
    profiles = []
    for cid in range(labeling.n_clusters):
        centroid = w[labeling.labels == cid].mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm == 0:
            profiles.append(ClusterProfile(cid, centroid, centroid.copy(), True))
        else:
            profiles.append(ClusterProfile(cid, centroid, centroid / norm, False))
    return profiles
