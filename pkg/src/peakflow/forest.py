"""Bagged variance-reduction regression forest for peak magnitudes."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import FrameworkConfig, PeakflowError
from .features import FeatureMatrix
from .tree import Tree, TreeBuilder, midpoint

FORMAT = "peakflow-rf"
VERSION = 1


class PeakModelUnavailable(PeakflowError):
    """Too few peak rows to train the forest; callers fall back to the baseline."""


@dataclass(frozen=True)
class RfParams:
    n_trees: int = 700
    max_depth: int = 8
    min_samples_leaf: int = 5
    feature_fraction: float = 0.80
    min_peak_rows: int = 10
    rng_seed: int = 0

    @classmethod
    def from_config(cls, config: FrameworkConfig) -> "RfParams":
        return cls(
            n_trees=config.rf_n_trees,
            max_depth=config.rf_max_depth,
            min_samples_leaf=config.rf_min_samples_leaf,
            feature_fraction=config.rf_feature_fraction,
            min_peak_rows=config.min_peak_rows,
            rng_seed=config.rng_seed,
        )


@dataclass(eq=False)
class RfModel:
    trees: list
    columns: tuple
    tree_seeds: list
    n_train: int
    target_min: float
    target_max: float
    params: RfParams
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "columns": list(self.columns),
            "params": dict(self.params.__dict__),
            "rng_seed": self.params.rng_seed,
            "tree_seeds": [int(s) for s in self.tree_seeds],
            "n_train": self.n_train,
            "target_min": self.target_min,
            "target_max": self.target_max,
            "meta": self.meta,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, allow_nan=False, separators=(",", ":")) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "RfModel":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError(f"not a {FORMAT} v{VERSION} document")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            columns=tuple(d["columns"]),
            tree_seeds=[int(s) for s in d["tree_seeds"]],
            n_train=int(d["n_train"]),
            target_min=float(d["target_min"]),
            target_max=float(d["target_max"]),
            params=RfParams(**d["params"]),
            meta=dict(d.get("meta", {})),
        )

    @classmethod
    def from_json(cls, text_or_path) -> "RfModel":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def tree_seeds(rng_seed: int, n_trees: int) -> list[int]:
    """Per-tree seeds, a pure function of (rng_seed, tree index)."""
    state = np.random.SeedSequence([rng_seed, 1]).generate_state(n_trees, dtype=np.uint64)
    return [int(s) for s in state]


def bootstrap_indices(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, n, size=n)


def _best_split(X, y, rows, cols, min_leaf):
    n = rows.size
    best = (0.0, -1, 0.0)
    yc = y[rows] - np.mean(y[rows])  # centred: reduction = n * S_L^2 / (n_L * n_R)
    n_left = np.arange(1, n)
    size_ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    for c in cols:
        x = X[rows, c]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cs = np.cumsum(yc[order])[:-1]
        valid = size_ok & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        red = np.where(valid, cs * cs * n / (n_left * (n - n_left)), -np.inf)
        i = int(np.argmax(red))
        if red[i] > best[0]:
            best = (float(red[i]), int(c), midpoint(float(xs[i]), float(xs[i + 1])))
    return best


def grow_tree(X, y, rows, params: RfParams, rng: np.random.Generator) -> Tree:
    """CART regression tree on bootstrap row indices ``rows`` (repeats allowed)."""
    p = X.shape[1]
    k = max(1, int(math.floor(params.feature_fraction * p + 1e-9)))
    builder = TreeBuilder(("n_samples",))

    def leaf_value(r):
        yr = y[r]
        return float(np.clip(np.mean(yr), yr.min(), yr.max()))

    root = builder.add(leaf_value(rows), 0, n_samples=rows.size)
    queue = [(root, rows, 0)]
    head = 0
    while head < len(queue):
        node, r, depth = queue[head]
        head += 1
        if depth >= params.max_depth or r.size < 2 * params.min_samples_leaf:
            continue
        yr = y[r]
        if yr.min() == yr.max():
            continue
        cols = np.arange(p) if k == p else np.sort(rng.choice(p, size=k, replace=False))
        gain, f, thr = _best_split(X, y, r, cols, params.min_samples_leaf)
        if f < 0 or not gain > 0:
            continue
        go_left = X[r, f] < thr
        rl, rr = r[go_left], r[~go_left]
        builder.set_split(node, f, thr)
        lid = builder.add(leaf_value(rl), depth + 1, n_samples=rl.size)
        rid = builder.add(leaf_value(rr), depth + 1, n_samples=rr.size)
        builder.link(node, lid, True)
        builder.link(node, rid, False)
        queue.append((lid, rl, depth + 1))
        queue.append((rid, rr, depth + 1))
    return builder.build()


def fit_rf(
    peak_rows: FeatureMatrix | np.ndarray,
    targets=None,
    params: RfParams | FrameworkConfig = RfParams(),
    workers: int = 1,
    columns: Optional[tuple] = None,
) -> RfModel:
    """Train the peak forest.

    ``peak_rows`` is a FeatureMatrix (its ``y`` is used unless ``targets`` is
    given) or a plain 2-d array. Raises PeakModelUnavailable with fewer than
    ``min_peak_rows`` rows. Results do not depend on ``workers``.
    """
    if isinstance(params, FrameworkConfig):
        params = RfParams.from_config(params)
    if isinstance(peak_rows, FeatureMatrix):
        X = peak_rows.X
        columns = peak_rows.columns
        y = peak_rows.y if targets is None else targets
    else:
        X = np.asarray(peak_rows, dtype=float)
        if columns is None:
            columns = tuple(f"f{i}" for i in range(X.shape[1]))
        y = targets
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("rows and targets differ in length")
    if y.size < params.min_peak_rows:
        raise PeakModelUnavailable(
            f"{y.size} peak rows available, at least {params.min_peak_rows} required"
        )
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite peak rows or targets")

    seeds = tree_seeds(params.rng_seed, params.n_trees)
    n = y.size

    def build(i: int) -> Tree:
        rng = np.random.default_rng(seeds[i])
        rows = rng.integers(0, n, size=n)
        return grow_tree(X, y, rows, params, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    else:
        trees = [build(i) for i in range(params.n_trees)]
    return RfModel(
        trees=trees,
        columns=tuple(columns),
        tree_seeds=seeds,
        n_train=int(n),
        target_min=float(y.min()),
        target_max=float(y.max()),
        params=params,
        meta={"n_peak_rows": int(n)},
    )


def _rows(model: RfModel, rows) -> np.ndarray:
    if isinstance(rows, FeatureMatrix):
        if rows.columns != tuple(model.columns):
            raise ValueError(f"column mismatch: model {list(model.columns)} vs rows {list(rows.columns)}")
        return rows.X
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != len(model.columns):
        raise ValueError(f"expected {len(model.columns)} feature columns, got shape {X.shape}")
    return X


def predict_rf(model: RfModel, rows) -> np.ndarray:
    """Mean of the per-tree predictions, summed in tree order."""
    X = _rows(model, rows)
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree.predict(X)
    # averaging cannot leave the target range; clip only removes rounding
    return np.clip(acc / len(model.trees), model.target_min, model.target_max)


def oob_predictions(model: RfModel, X, y=None) -> np.ndarray:
    """Out-of-bag prediction for each training row (NaN if always in-bag).

    ``X`` must be the training rows, in training order.
    """
    X = _rows(model, X)
    if X.shape[0] != model.n_train:
        raise ValueError("out-of-bag predictions need the original training rows")
    acc = np.zeros(model.n_train)
    count = np.zeros(model.n_train)
    for seed, tree in zip(model.tree_seeds, model.trees):
        in_bag = np.zeros(model.n_train, dtype=bool)
        in_bag[bootstrap_indices(seed, model.n_train)] = True
        oob = ~in_bag
        if oob.any():
            acc[oob] += tree.predict(X[oob])
            count[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, acc / count, np.nan)
