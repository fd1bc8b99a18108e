"""Random forest over IPv4-octet features, written from scratch on numpy.

Trees are CART classifiers grown on Gini impurity. Rows with identical
feature vectors can never be separated by a split, so training collapses
them into weighted points (positive and negative weight per distinct
vector); a bootstrap sample becomes a multinomial draw of those weights.
The grown trees are the same as on the expanded sample.
"""

from __future__ import annotations

import ipaddress
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .logpipe import LabeledRecord
from .seeding import rng_for

MODEL_FORMAT = "scalesentry-forest"
MODEL_VERSION = 1
N_FEATURES = 4


class ModelUnavailable(RuntimeError):
    """Training was asked to learn from an empty table."""


@dataclass
class ForestParams:
    n_trees: int = 100
    rng_seed: int = 42
    max_depth: int = 12
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    train_fraction: float = 0.8
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")

    def split_width(self, n_features: int) -> int:
        k = self.features_per_split or math.ceil(math.sqrt(n_features))
        return max(1, min(k, n_features))


def ip_features(ip: str) -> tuple[int, int, int, int]:
    a, b, c, d = (int(part) for part in ip.split("."))
    return a, b, c, d


def feature_matrix(ips: Sequence[str]) -> np.ndarray:
    cache: dict[str, tuple[int, int, int, int]] = {}
    rows = []
    for ip in ips:
        fv = cache.get(ip)
        if fv is None:
            fv = cache[ip] = ip_features(ip)
        rows.append(fv)
    return np.array(rows, dtype=np.int64).reshape(len(rows), N_FEATURES)


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    Samples go left when ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive fraction of the node's (weighted) samples
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            idx = np.nonzero(active)[0]
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionTree":
        return cls(
            feature=np.array(data["feature"], dtype=np.int64),
            threshold=np.array(data["threshold"], dtype=np.float64),
            left=np.array(data["left"], dtype=np.int64),
            right=np.array(data["right"], dtype=np.int64),
            value=np.array(data["value"], dtype=np.float64),
            n_samples=np.array(data["n_samples"], dtype=np.float64),
        )


def best_split(X: np.ndarray, pos: np.ndarray, neg: np.ndarray, feature: int,
               min_leaf: float) -> tuple[float, float] | None:
    """Best Gini split on one feature as ``(weighted_impurity, threshold)``."""
    values, inverse = np.unique(X[:, feature], return_inverse=True)
    if len(values) < 2:
        return None
    cpos = np.cumsum(np.bincount(inverse, weights=pos, minlength=len(values)))[:-1]
    cneg = np.cumsum(np.bincount(inverse, weights=neg, minlength=len(values)))[:-1]
    tpos, tneg = pos.sum(), neg.sum()
    n_left = cpos + cneg
    n_right = (tpos + tneg) - n_left
    valid = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    rpos, rneg = tpos - cpos, tneg - cneg
    with np.errstate(divide="ignore", invalid="ignore"):
        gini_left = n_left - (cpos * cpos + cneg * cneg) / n_left
        gini_right = n_right - (rpos * rpos + rneg * rneg) / n_right
    score = np.where(valid, gini_left + gini_right, np.inf) / (tpos + tneg)
    j = int(np.argmin(score))
    threshold = (values[j] + values[j + 1]) / 2.0
    if np.issubdtype(X.dtype, np.integer):
        threshold = math.floor(threshold)
    return float(score[j]), float(threshold)


def gini(pos: float, neg: float) -> float:
    n = pos + neg
    if n <= 0:
        return 0.0
    return 1.0 - (pos / n) ** 2 - (neg / n) ** 2


def grow_tree(X: np.ndarray, pos: np.ndarray, neg: np.ndarray, params: ForestParams,
              rng: np.random.Generator) -> DecisionTree:
    """Grow one CART tree on weighted points (``pos``/``neg`` weight per row of ``X``)."""
    d = X.shape[1]
    k = params.split_width(d)
    min_leaf = params.min_samples_leaf
    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def new_node(p: float, q: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(p / (p + q) if p + q > 0 else 0.0)
        n_samples.append(p + q)
        return len(feature) - 1

    keep = (pos + neg) > 0
    root_idx = np.nonzero(keep)[0]
    root = new_node(float(pos[root_idx].sum()), float(neg[root_idx].sum()))
    stack = [(root, root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        p, q = float(pos[idx].sum()), float(neg[idx].sum())
        if depth >= params.max_depth or p == 0 or q == 0 or p + q < 2 * min_leaf:
            continue
        Xn, pn, qn = X[idx], pos[idx], neg[idx]
        best = None
        evaluated = 0
        for f in rng.permutation(d):
            if evaluated >= k and best is not None:
                break
            col = Xn[:, f]
            if col.min() == col.max():
                continue
            evaluated += 1
            found = best_split(Xn, pn, qn, int(f), min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], found[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        mask = Xn[:, f] <= thr
        li, ri = idx[mask], idx[~mask]
        ln = new_node(float(pos[li].sum()), float(neg[li].sum()))
        rn = new_node(float(pos[ri].sum()), float(neg[ri].sum()))
        feature[node], threshold[node], left[node], right[node] = f, thr, ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(n_samples, dtype=np.float64),
    )


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    params: ForestParams
    f1: float = 0.0
    degenerate: bool = False
    n_train: int = 0
    n_test: int = 0
    meta: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        if len(X) == 0:
            return np.zeros(0)
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        total = np.zeros(len(uniq))
        for tree in self.trees:
            total += tree.predict_proba(uniq)
        return (total / len(self.trees))[inverse.reshape(-1)]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": asdict(self.params),
            "f1": self.f1,
            "degenerate": self.degenerate,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "meta": self.meta,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForestModel":
        if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
            raise ValueError("not a scalesentry forest model (or unsupported version)")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in data["trees"]],
            params=ForestParams(**data["params"]),
            f1=data["f1"],
            degenerate=data["degenerate"],
            n_train=data["n_train"],
            n_test=data["n_test"],
            meta=data.get("meta", {}),
        )


def save_model(model: ForestModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ForestModel:
    return ForestModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _weighted_points(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pos = np.bincount(inverse, weights=(y == 1).astype(float), minlength=len(uniq))
    neg = np.bincount(inverse, weights=(y != 1).astype(float), minlength=len(uniq))
    return uniq, pos, neg


def fit_forest(X: np.ndarray, y: np.ndarray, params: ForestParams) -> ForestModel:
    """Fit ``params.n_trees`` trees; tree ``i`` draws only from its own seeded stream."""
    X = np.asarray(X)
    y = np.asarray(y)
    if len(X) == 0:
        raise ModelUnavailable("cannot train on an empty table")
    uniq, pos, neg = _weighted_points(X, y)
    n = float(len(X))
    probs = np.concatenate([pos, neg]) / n
    trees = []
    for i in range(params.n_trees):
        rng = rng_for(params.rng_seed, "tree", i)
        if params.bootstrap:
            draw = rng.multinomial(len(X), probs / probs.sum()).astype(float)
            bpos, bneg = draw[: len(uniq)], draw[len(uniq):]
        else:
            bpos, bneg = pos, neg
        trees.append(grow_tree(uniq, bpos, bneg, params, rng))
    return ForestModel(trees=trees, params=params)


def f1(predictions: Sequence[int], truth: Sequence[int]) -> float:
    if len(predictions) != len(truth):
        raise ValueError("predictions and truth differ in length")
    tp = fp = fn = 0
    for p, t in zip(predictions, truth):
        if p == 1 and t == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif t == 1:
            fn += 1
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def train(records: Sequence[LabeledRecord], params: ForestParams | None = None) -> ForestModel:
    """Seeded train/test split, fit on the train part, F1 on the held-out part.

    The returned model carries the held-out F1. A corpus whose training part
    holds a single label is flagged ``degenerate`` and scores F1 = 0.
    """
    params = params or ForestParams()
    if not records:
        raise ModelUnavailable("no labeled records")
    X = feature_matrix([r.xff_ip for r in records])
    y = np.array([r.label for r in records], dtype=np.int64)
    n = len(records)
    order = rng_for(params.rng_seed, "split").permutation(n)
    n_train = int(round(n * params.train_fraction))
    n_train = min(max(n_train, 1), n - 1) if n >= 2 else n
    train_idx, test_idx = order[:n_train], order[n_train:]
    model = fit_forest(X[train_idx], y[train_idx], params)
    model.n_train, model.n_test = len(train_idx), len(test_idx)
    labels = set(y[train_idx].tolist())
    if len(labels) < 2:
        model.degenerate = True
        model.f1 = 0.0
        return model
    if len(test_idx):
        model.f1 = f1(model.predict(X[test_idx]).tolist(), y[test_idx].tolist())
    return model


def predict_proba(model: ForestModel, fv: Sequence[int] | str) -> float:
    if isinstance(fv, str):
        fv = ip_features(fv)
    if len(fv) != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {len(fv)}")
    return float(model.predict_proba(np.array([fv], dtype=np.int64))[0])


def top_k_attackers(model: ForestModel, window_records: Iterable[LabeledRecord],
                    k: int = 10) -> list[tuple[str, float]]:
    """Rank the window's distinct IPs by predicted attack probability."""
    positives: dict[str, int] = {}
    for r in window_records:
        positives[r.xff_ip] = positives.get(r.xff_ip, 0) + (1 if r.label == 1 else 0)
    if not positives:
        return []
    ips = list(positives)
    scores = model.predict_proba(feature_matrix(ips))
    ranked = sorted(
        zip(ips, scores.tolist()),
        key=lambda item: (-item[1], -positives[item[0]], int(ipaddress.IPv4Address(item[0]))),
    )
    return ranked[:k]
