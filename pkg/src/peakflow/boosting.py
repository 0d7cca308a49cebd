"""Second-order gradient-boosted regression trees with squared-error loss.

Exact greedy split search over presorted feature values, per-round row
subsampling without replacement, per-split column subsampling, L1/L2 leaf
regularization and early stopping on validation KGE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import DegenerateInputError, FrameworkConfig
from .features import FeatureMatrix
from .tree import Tree, TreeBuilder, midpoint
from .verify import kge

FORMAT = "peakflow-gbt"
VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    learning_rate: float = 0.1
    max_depth: int = 5
    subsample: float = 0.95
    colsample: float = 0.90
    min_child_weight: float = 1.0
    l1_penalty: float = 0.0
    l2_penalty: float = 1.0
    min_split_loss: float = 0.0
    n_rounds: int = 400
    early_stop_patience: int = 30
    rng_seed: int = 0

    @classmethod
    def from_config(cls, config: FrameworkConfig) -> "GbtParams":
        return cls(**{k: getattr(config, k) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    grad_left: float
    hess_left: float
    grad_right: float
    hess_right: float
    gain: float


@dataclass(eq=False)
class GbtModel:
    base_score: float
    learning_rate: float
    trees: list
    columns: tuple
    params: GbtParams
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "columns": list(self.columns),
            "params": dict(self.params.__dict__),
            "rng_seed": self.params.rng_seed,
            "meta": self.meta,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, allow_nan=False, separators=(",", ":")) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError(f"not a {FORMAT} v{VERSION} document")
        return cls(
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            columns=tuple(d["columns"]),
            params=GbtParams(**d["params"]),
            meta=dict(d.get("meta", {})),
        )

    @classmethod
    def from_json(cls, text_or_path) -> "GbtModel":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def _shrink(G, alpha: float):
    """Soft-threshold the gradient sum by the L1 penalty."""
    if alpha == 0:
        return G
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _score(G, H, alpha: float, lam: float):
    s = _shrink(G, alpha)
    return s * s / (H + lam)


def split_gain(grad_left, hess_left, grad_right, hess_right, params: GbtParams) -> float:
    """Loss reduction of a split, net of ``min_split_loss``."""
    a, lam = params.l1_penalty, params.l2_penalty
    return float(
        0.5 * (
            _score(grad_left, hess_left, a, lam)
            + _score(grad_right, hess_right, a, lam)
            - _score(grad_left + grad_right, hess_left + hess_right, a, lam)
        )
        - params.min_split_loss
    )


def leaf_weight(G: float, H: float, params: GbtParams) -> float:
    denom = H + params.l2_penalty
    if denom <= 0:
        return 0.0
    return float(-_shrink(G, params.l1_penalty) / denom)


def _best_split(X, S, g, h, G, H, cols, params) -> Optional[SplitCandidate]:
    """Exact greedy search over the presorted rows ``S`` (features x rows)."""
    Sc = S[cols]
    xs = X[Sc, cols[:, None]]
    GL = np.cumsum(g[Sc], axis=1)[:, :-1]
    HL = np.cumsum(h[Sc], axis=1)[:, :-1]
    GR = G - GL
    HR = H - HL
    valid = (xs[:, 1:] > xs[:, :-1]) & (HL >= params.min_child_weight) & (HR >= params.min_child_weight)
    if not valid.any():
        return None
    a, lam = params.l1_penalty, params.l2_penalty
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (_score(GL, HL, a, lam) + _score(GR, HR, a, lam) - _score(G, H, a, lam)) - params.min_split_loss
    gain = np.where(valid, gain, -np.inf)
    pos = np.argmax(gain, axis=1)  # first maximum -> lowest threshold
    per_col = gain[np.arange(len(cols)), pos]
    c = int(np.argmax(per_col))  # first maximum -> lowest feature index
    if not per_col[c] > 0:
        return None
    i = int(pos[c])
    return SplitCandidate(
        feature=int(cols[c]),
        threshold=midpoint(float(xs[c, i]), float(xs[c, i + 1])),
        grad_left=float(GL[c, i]),
        hess_left=float(HL[c, i]),
        grad_right=float(GR[c, i]),
        hess_right=float(HR[c, i]),
        gain=float(per_col[c]),
    )


def grow_tree(X, S, g, h, params: GbtParams, rng: np.random.Generator) -> Tree:
    """Grow one boosted tree breadth-first.

    ``S`` is a (n_features, m) array: for each feature, the indices of the m
    sampled rows sorted by that feature's value.
    """
    n, p = X.shape
    k = max(1, int(math.floor(params.colsample * p + 1e-9)))
    builder = TreeBuilder(("grad", "hess", "gain"))
    rows0 = np.sort(S[0])
    G0, H0 = float(np.sum(g[rows0])), float(np.sum(h[rows0]))
    root = builder.add(leaf_weight(G0, H0, params), 0, grad=G0, hess=H0, gain=0.0)
    queue = [(root, S, G0, H0, 0)]
    is_left = np.zeros(n, dtype=bool)
    head = 0
    while head < len(queue):
        node, S_node, G, H, depth = queue[head]
        head += 1
        if depth >= params.max_depth or S_node.shape[1] < 2:
            continue
        cols = np.arange(p) if k == p else np.sort(rng.choice(p, size=k, replace=False))
        cand = _best_split(X, S_node, g, h, G, H, cols, params)
        if cand is None:
            continue
        rows = S_node[0]
        go_left = X[rows, cand.feature] < cand.threshold
        left_rows, right_rows = np.sort(rows[go_left]), np.sort(rows[~go_left])
        # exact child sums so stored statistics reproduce the stored gain
        GL, HL = float(np.sum(g[left_rows])), float(np.sum(h[left_rows]))
        GR, HR = float(np.sum(g[right_rows])), float(np.sum(h[right_rows]))
        if HL < params.min_child_weight or HR < params.min_child_weight:
            continue
        gain = split_gain(GL, HL, GR, HR, params)
        if not gain > 0:
            continue
        builder.set_split(node, cand.feature, cand.threshold)
        builder.set_stat(node, "grad", GL + GR)
        builder.set_stat(node, "hess", HL + HR)
        builder.set_stat(node, "gain", gain)
        is_left[left_rows] = True
        mask = is_left[S_node]
        m_left = left_rows.size
        S_left = S_node[mask].reshape(p, m_left)
        S_right = S_node[~mask].reshape(p, -1)
        is_left[left_rows] = False
        lid = builder.add(leaf_weight(GL, HL, params), depth + 1, grad=GL, hess=HL, gain=0.0)
        rid = builder.add(leaf_weight(GR, HR, params), depth + 1, grad=GR, hess=HR, gain=0.0)
        builder.link(node, lid, True)
        builder.link(node, rid, False)
        queue.append((lid, S_left, GL, HL, depth + 1))
        queue.append((rid, S_right, GR, HR, depth + 1))
    return builder.build()


def _check_matrix(fm: FeatureMatrix, name: str) -> None:
    if not np.isfinite(fm.X).all():
        raise ValueError(f"{name}: non-finite feature value")
    if not np.isfinite(fm.y).all():
        raise ValueError(f"{name}: non-finite target value")


def kge_eval_hook(predictions, targets) -> float:
    """Validation score for early stopping: KGE, or -inf when undefined."""
    try:
        return kge(predictions, targets)[0]
    except DegenerateInputError:
        return -math.inf


def fit_gbt(
    train: FeatureMatrix,
    valid: Optional[FeatureMatrix],
    params: GbtParams | FrameworkConfig,
) -> GbtModel:
    """Fit a boosted ensemble; with a non-empty ``valid`` set the model is
    truncated at the round with the best validation KGE."""
    if isinstance(params, FrameworkConfig):
        params = GbtParams.from_config(params)
    if len(train) == 0:
        raise ValueError("empty training matrix")
    _check_matrix(train, "train")
    use_valid = valid is not None and len(valid) > 0
    if use_valid:
        _check_matrix(valid, "valid")
        if valid.columns != train.columns:
            raise ValueError("validation columns differ from training columns")

    X, y = train.X, train.y
    n, p = X.shape
    rng = np.random.default_rng([params.rng_seed, 0])
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    base = float(np.mean(y))
    h = np.ones(n)
    acc_train = np.zeros(n)
    acc_valid = np.zeros(len(valid)) if use_valid else None

    trees: list[Tree] = []
    history: list[float] = []
    best_score, best_round = -math.inf, 0
    n_sub = max(1, int(math.floor(params.subsample * n + 1e-9)))
    for r in range(params.n_rounds):
        g = (base + params.learning_rate * acc_train) - y
        if n_sub < n:
            in_sample = np.zeros(n, dtype=bool)
            in_sample[rng.choice(n, size=n_sub, replace=False)] = True
            S = order[in_sample[order]].reshape(p, n_sub)
        else:
            S = order
        tree = grow_tree(X, S, g, h, params, rng)
        trees.append(tree)
        acc_train += tree.predict(X)
        if use_valid:
            acc_valid += tree.predict(valid.X)
            score = kge_eval_hook(base + params.learning_rate * acc_valid, valid.y)
            history.append(score)
            if score > best_score:
                best_score, best_round = score, r + 1
            elif math.isfinite(best_score) and (r + 1) - best_round >= params.early_stop_patience:
                break

    if not use_valid or not math.isfinite(best_score):
        best_round = len(trees)
    meta = {
        "rounds_trained": len(trees),
        "rounds_used": best_round,
        "best_valid_kge": best_score if math.isfinite(best_score) else None,
        "n_train_rows": int(n),
        "n_valid_rows": int(len(valid)) if use_valid else 0,
    }
    return GbtModel(base, params.learning_rate, trees[:best_round], train.columns, params, meta)


def _rows(model, rows) -> np.ndarray:
    if isinstance(rows, FeatureMatrix):
        if rows.columns != tuple(model.columns):
            raise ValueError(f"column mismatch: model {list(model.columns)} vs rows {list(rows.columns)}")
        return rows.X
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.columns):
        raise ValueError(f"expected {len(model.columns)} feature columns, got shape {X.shape}")
    return X


def predict_gbt(model: GbtModel, rows, n_trees: Optional[int] = None) -> np.ndarray:
    """``base_score + learning_rate * sum of leaf weights`` for each row."""
    X = _rows(model, rows)
    acc = np.zeros(X.shape[0])
    for tree in model.trees[:n_trees]:
        acc += tree.predict(X)
    return model.base_score + model.learning_rate * acc


def staged_predict(model: GbtModel, rows) -> Iterator[np.ndarray]:
    """Predictions after 0, 1, ..., len(trees) rounds."""
    X = _rows(model, rows)
    acc = np.zeros(X.shape[0])
    yield model.base_score + model.learning_rate * acc
    for tree in model.trees:
        acc += tree.predict(X)
        yield model.base_score + model.learning_rate * acc
