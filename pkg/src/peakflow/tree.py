"""Array-backed binary regression tree shared by the boosted and bagged ensembles.

Rows go left when ``x[feature] < threshold``. Leaves have ``feature == -1``.
Nodes are numbered in the order they were created (breadth-first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# per-node statistics carried through serialization when present
STAT_FIELDS = ("grad", "hess", "gain", "n_samples")


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row of ``X`` lands in."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            cur = node[active]
            f = self.feature[cur]
            internal = f >= 0
            active, cur, f = active[internal], cur[internal], f[internal]
            if not active.size:
                break
            go_left = X[active, f] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, node: int = 0) -> dict:
        """Nested-node representation used by the JSON model files."""
        out: dict = {"depth": int(self.depth[node])}
        for name, arr in self.stats.items():
            v = arr[node]
            out[name] = int(v) if name == "n_samples" else float(v)
        if self.feature[node] < 0:
            out["leaf"] = float(self.value[node])
            return out
        out["feature"] = int(self.feature[node])
        out["threshold"] = float(self.threshold[node])
        out["value"] = float(self.value[node])
        out["left"] = self.to_dict(int(self.left[node]))
        out["right"] = self.to_dict(int(self.right[node]))
        return out

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        builder = TreeBuilder(tuple(k for k in STAT_FIELDS if k in root))
        queue = [(root, None, False)]
        # breadth-first, so node ids match those assigned during training
        while queue:
            nxt = []
            for node, parent, is_left in queue:
                stats = {k: node[k] for k in builder.stat_names}
                nid = builder.add(node["leaf"] if "leaf" in node else node["value"], node["depth"], **stats)
                if parent is not None:
                    builder.link(parent, nid, is_left)
                if "leaf" not in node:
                    builder.set_split(nid, node["feature"], node["threshold"])
                    nxt.append((node["left"], nid, True))
                    nxt.append((node["right"], nid, False))
            queue = nxt
        return builder.build()


class TreeBuilder:
    def __init__(self, stat_names=()):
        self.stat_names = tuple(stat_names)
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.depth: list[int] = []
        self.stats: dict[str, list] = {k: [] for k in self.stat_names}

    def add(self, value: float, depth: int, **stats) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.depth.append(int(depth))
        for k in self.stat_names:
            self.stats[k].append(stats.get(k, 0))
        return len(self.feature) - 1

    def set_split(self, node: int, feature: int, threshold: float) -> None:
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)

    def link(self, parent: int, child: int, is_left: bool) -> None:
        if is_left:
            self.left[parent] = child
        else:
            self.right[parent] = child

    def set_stat(self, node: int, name: str, value) -> None:
        self.stats[name][node] = value

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=float),
            depth=np.array(self.depth, dtype=np.int64),
            stats={
                k: np.array(v, dtype=np.int64 if k == "n_samples" else float)
                for k, v in self.stats.items()
            },
        )


def midpoint(lo: float, hi: float) -> float:
    """Split threshold between adjacent distinct values ``lo < hi``.

    Falls back to ``hi`` when rounding collapses the midpoint onto ``lo``,
    so ``lo`` still routes left and ``hi`` right.
    """
    mid = lo + (hi - lo) / 2.0
    if not lo < mid <= hi:
        mid = hi
    return float(mid)
