"""Match step: class-wise connected patch graph and triplet extraction."""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np


class TripletError(ValueError):
    """Raised when a batch cannot produce triplets (fewer than two labels)."""


def _labels_of(batch) -> np.ndarray:
    labels = batch.labels if hasattr(batch, "labels") else batch
    return np.asarray(labels, dtype=np.int64).reshape(-1)


@dataclass(frozen=True, eq=False)
class PatchGraph:
    """Nodes ``0..n-1`` are the batch patches in order; duplicates follow.

    ``patch_index[k]`` is the patch a node stands for, so a duplicate and its
    original share one embedding.
    """

    patch_index: np.ndarray
    labels: np.ndarray
    is_duplicate: np.ndarray
    attractive_edges: np.ndarray  # (E_a, 2)
    rejective_edges: np.ndarray  # (E_r, 2)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def num_originals(self) -> int:
        return int(np.count_nonzero(~self.is_duplicate))

    def neighbors(self, kind: str) -> list[list[int]]:
        edges = self.attractive_edges if kind == "attractive" else self.rejective_edges
        adj = [[] for _ in range(self.num_nodes)]
        for i, j in edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return adj

    def to_edge_list(self) -> str:
        lines = [f"A {i} {j}" for i, j in self.attractive_edges]
        lines += [f"R {i} {j}" for i, j in self.rejective_edges]
        return "\n".join(lines) + "\n"

    def dump(self, path):
        with open(path, "w") as f:
            f.write(self.to_edge_list())


def read_edge_list(path):
    """Parse an ``A|R i j`` dump back into (attractive, rejective) arrays."""
    att, rej = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("A", "R"):
                raise ValueError(f"{path}:{lineno}: expected 'A|R i j'")
            (att if parts[0] == "A" else rej).append((int(parts[1]), int(parts[2])))
    as_arr = lambda e: np.array(e, dtype=np.int64).reshape(-1, 2)
    return as_arr(att), as_arr(rej)


def build_graph(batch, rng) -> PatchGraph:
    """Insert patches one at a time in random order.

    Every newcomer gets one attractive edge to a uniformly chosen earlier node
    of its class and one rejective edge to a uniformly chosen earlier node of
    another class, whenever such nodes exist. Nodes left without a same-class
    partner are duplicated and joined to their copy.
    """
    labels = _labels_of(batch)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise TripletError("cannot form triplets: batch needs at least two distinct labels")
    rng = np.random.default_rng(rng)
    n = len(labels)

    by_class: dict[int, list[int]] = {int(c): [] for c in classes}
    inserted = 0
    attractive, rejective = [], []
    for node in rng.permutation(n):
        node = int(node)
        c = int(labels[node])
        same = by_class[c]
        if same:
            attractive.append((int(same[rng.integers(len(same))]), node))
        n_other = inserted - len(same)
        if n_other > 0:
            # walk class buckets to find the k-th earlier node of another class
            k = int(rng.integers(n_other))
            for other, members in by_class.items():
                if other == c:
                    continue
                if k < len(members):
                    rejective.append((int(members[k]), node))
                    break
                k -= len(members)
        same.append(node)
        inserted += 1

    patch_index = list(range(n))
    dup_labels = []
    for c, members in by_class.items():
        if len(members) == 1:
            orig = members[0]
            attractive.append((orig, n + len(dup_labels)))
            patch_index.append(orig)
            dup_labels.append(c)

    all_labels = np.concatenate([labels, np.array(dup_labels, dtype=np.int64)])
    is_dup = np.zeros(len(all_labels), dtype=bool)
    is_dup[n:] = True
    return PatchGraph(
        patch_index=np.array(patch_index, dtype=np.int64),
        labels=all_labels,
        is_duplicate=is_dup,
        attractive_edges=np.array(attractive, dtype=np.int64).reshape(-1, 2),
        rejective_edges=np.array(rejective, dtype=np.int64).reshape(-1, 2),
    )


def extract_triplets(g: PatchGraph, rng) -> np.ndarray:
    """One ``(anchor, positive, negative)`` row of node indices per original node."""
    rng = np.random.default_rng(rng)
    att = g.neighbors("attractive")
    rej = g.neighbors("rejective")
    originals = np.flatnonzero(~g.is_duplicate)
    out = np.empty((len(originals), 3), dtype=np.int64)
    for row, a in enumerate(originals):
        pos = att[a]
        if not pos:
            raise TripletError(f"node {a} has no attractive neighbour; graph is invalid")
        neg = rej[a]
        if not neg:
            neg = originals[g.labels[originals] != g.labels[a]]
            if len(neg) == 0:
                raise TripletError("cannot form triplets: graph has a single class")
        out[row] = (a, pos[rng.integers(len(pos))], neg[rng.integers(len(neg))])
    return out


def triplets_to_patches(g: PatchGraph, triplets: np.ndarray) -> np.ndarray:
    """Map node-index triplets onto patch (embedding) indices."""
    return g.patch_index[np.asarray(triplets, dtype=np.int64)]


def random_triplets(batch, count: int, rng) -> np.ndarray:
    """Unconstrained baseline: uniform anchor, same-label positive, other-label negative.

    Indices refer to patches; a positive equal to its anchor stands for the
    duplicate of a label that occurs once.
    """
    labels = _labels_of(batch)
    if len(np.unique(labels)) < 2:
        raise TripletError("cannot form triplets: batch needs at least two distinct labels")
    rng = np.random.default_rng(rng)
    members = defaultdict(list)
    rank = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels):
        rank[i] = len(members[int(c)])
        members[int(c)].append(i)
    n = len(labels)
    out = np.empty((int(count), 3), dtype=np.int64)
    for row in range(int(count)):
        a = int(rng.integers(n))
        same = members[int(labels[a])]
        if len(same) == 1:
            p = a
        else:
            j = int(rng.integers(len(same) - 1))
            p = same[j if j < rank[a] else j + 1]
        k = int(rng.integers(n - len(same)))
        neg = k
        for c, m in members.items():
            if c == labels[a]:
                continue
            if k < len(m):
                neg = m[k]
                break
            k -= len(m)
        out[row] = (a, p, neg)
    return out


def check_classwise_connected(g: PatchGraph) -> bool:
    """BFS over attractive edges within each class; built from the edge list only."""
    labels = np.asarray(g.labels)
    if len(labels) == 0:
        return True
    adj = defaultdict(list)
    for i, j in np.asarray(g.attractive_edges).reshape(-1, 2):
        if labels[i] == labels[j]:
            adj[int(i)].append(int(j))
            adj[int(j)].append(int(i))
    for c in np.unique(labels):
        nodes = np.flatnonzero(labels == c)
        seen = {int(nodes[0])}
        queue = deque(seen)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != len(nodes):
            return False
    return True
