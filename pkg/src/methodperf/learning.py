"""CART regression trees and random forests for method-level performance models.

Both learners follow the scikit-learn estimator protocol (``fit``/``predict``,
``get_params``/``set_params``) so they drop into pipelines and model
selection utilities. Split search is deterministic: candidate thresholds are
midpoints between consecutive distinct feature values and ties are broken by
the lower feature index, then the lower threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .traces import MethodDataset

_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeHyperparams:
    min_samples_leaf: int = 2
    max_depth: int | None = None
    min_impurity_decrease: float = 0.0

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")


def tree_seed(seed: int | None, index: int) -> int:
    """Seed of tree ``index`` in a forest built with master ``seed``."""
    entropy = [0 if seed is None else int(seed), int(index)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


class RegressionTree(RegressorMixin, BaseEstimator):
    """Least-squares CART regression tree.

    Parameters
    ----------
    min_samples_leaf : int, default=2
        Minimum number of training rows in each leaf.
    max_depth : int or None, default=None
        Depth limit; ``None`` grows until leaves are pure or too small to split.
    min_impurity_decrease : float, default=0.0
        A node is split only if the SSE decrease divided by the number of
        training rows reaches this value.
    max_features : int, "sqrt" or None, default=None
        Number of features examined per node (drawn at random). ``None`` uses all.
    random_state : int, Generator or None
        Source of the per-node feature subsets; unused when all features are examined.
    """

    def __init__(self, min_samples_leaf=2, max_depth=None, min_impurity_decrease=0.0,
                 max_features=None, random_state=None):
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.min_impurity_decrease = min_impurity_decrease
        self.max_features = max_features
        self.random_state = random_state

    def _n_candidate_features(self, d: int) -> int:
        if self.max_features is None:
            return d
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, min(d, int(self.max_features)))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        self.n_features_in_ = X.shape[1]
        rng = (self.random_state if isinstance(self.random_state, np.random.Generator)
               else np.random.default_rng(self.random_state))
        self._build(X, y, rng)
        return self

    def _build(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> None:
        n, d = X.shape
        k = self._n_candidate_features(d)
        feature, threshold, left, right = [], [], [], []
        value, count, sse, decrease, depth_of = [], [], [], [], []

        def new_node(idx, depth):
            ys = y[idx]
            mu = float(ys.sum()) / len(idx)
            dev = ys - mu
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            value.append(mu)
            count.append(len(idx))
            sse.append(float(dev @ dev))
            decrease.append(0.0)
            depth_of.append(depth)
            return len(feature) - 1

        root = new_node(np.arange(n), 0)
        stack = [(root, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            ys = y[idx]
            if (ys == ys[0]).all():
                continue
            if self.max_depth is not None and depth_of[node] >= self.max_depth:
                continue
            if len(idx) < 2 * self.min_samples_leaf:
                continue
            if k < d:
                feats = np.sort(rng.choice(d, size=k, replace=False))
                split = self._best_split(X, ys, idx, feats)
                if split is None:
                    split = self._best_split(X, ys, idx, np.arange(d))
            else:
                split = self._best_split(X, ys, idx, np.arange(d))
            if split is None:
                continue
            f, t, gain = split
            if gain / n < self.min_impurity_decrease:
                continue
            mask = X[idx, f] <= t
            li, ri = idx[mask], idx[~mask]
            feature[node], threshold[node] = int(f), float(t)
            lnode = new_node(li, depth_of[node] + 1)
            rnode = new_node(ri, depth_of[node] + 1)
            left[node], right[node] = lnode, rnode
            decrease[node] = max(0.0, sse[node] - sse[lnode] - sse[rnode])
            # right pushed first so the left subtree is numbered first
            stack.append((rnode, ri))
            stack.append((lnode, li))

        self.feature_ = np.array(feature, dtype=np.int64)
        self.threshold_ = np.array(threshold, dtype=float)
        self.children_left_ = np.array(left, dtype=np.int64)
        self.children_right_ = np.array(right, dtype=np.int64)
        self.value_ = np.array(value, dtype=float)
        self.n_node_samples_ = np.array(count, dtype=np.int64)
        self.sse_ = np.array(sse, dtype=float)
        self.impurity_decrease_ = np.array(decrease, dtype=float)

    def _best_split(self, X, ys, idx, feats):
        msl = self.min_samples_leaf
        n = len(idx)
        yc = ys - float(ys.sum()) / n
        Xn = X[idx[:, None], feats]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = Xn[order, np.arange(len(feats))]
        valid = xs[1:] > xs[:-1]
        if msl > 1:
            valid[: msl - 1] = False
            valid[n - msl:] = False
        if not valid.any():
            return None
        ysorted = yc[order]
        csum = np.cumsum(ysorted, axis=0)[:-1]
        csq = np.cumsum(ysorted * ysorted, axis=0)[:-1]
        tot, totsq = float(yc.sum()), float(yc @ yc)
        nl = np.arange(1, n, dtype=float)[:, None]
        cost = (csq - csum * csum / nl) + ((totsq - csq) - (tot - csum) ** 2 / (n - nl))
        cost[~valid] = np.inf
        best = float(cost.min())
        parent = totsq - tot * tot / n
        tol = _TIE_RTOL * max(abs(parent), abs(best), 1.0)
        # column-major scan: lowest feature index, then lowest threshold
        j = int(np.argmax((cost <= best + tol).any(axis=0)))
        i = int(np.argmax(cost[:, j] <= best + tol))
        t = 0.5 * (xs[i, j] + xs[i + 1, j])
        return int(feats[j]), float(t), max(0.0, parent - float(cost[i, j]))

    # -- inference
    def apply(self, X) -> np.ndarray:
        check_is_fitted(self, "feature_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature_[node]
            internal = f >= 0
            if not internal.any():
                return node
            r = rows[internal]
            go_left = X[r, f[internal]] <= self.threshold_[node[internal]]
            node[r] = np.where(go_left, self.children_left_[node[r]], self.children_right_[node[r]])

    def predict(self, X) -> np.ndarray:
        leaves = self.apply(X)
        return self.value_[leaves]

    @property
    def n_leaves_(self) -> int:
        return int((self.feature_ < 0).sum())

    @property
    def feature_importances_(self) -> np.ndarray:
        imp = np.zeros(self.n_features_in_)
        internal = self.feature_ >= 0
        np.add.at(imp, self.feature_[internal], self.impurity_decrease_[internal])
        total = imp.sum()
        return imp / total if total > 0 else imp

    def decrease_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw SSE decreases per feature and per co-occurring feature pair.

        A split on feature f with decrease D adds D to pair (f, g) for every
        distinct feature g split on along its root path.
        """
        d = self.n_features_in_
        single = np.zeros(d)
        pair = np.zeros((d, d))
        stack = [(0, frozenset())]
        while stack:
            node, path = stack.pop()
            f = self.feature_[node]
            if f < 0:
                continue
            D = self.impurity_decrease_[node]
            single[f] += D
            for g in path:
                if g != f:
                    a, b = (f, g) if f < g else (g, f)
                    pair[a, b] += D
            sub = path | {int(f)}
            stack.append((self.children_right_[node], sub))
            stack.append((self.children_left_[node], sub))
        return single, pair

    # -- serialization
    def to_dict(self) -> dict:
        check_is_fitted(self, "feature_")

        def node(i):
            if self.feature_[i] < 0:
                return {"value": self.value_[i], "n": int(self.n_node_samples_[i]),
                        "sse": self.sse_[i]}
            return {"feature": int(self.feature_[i]), "threshold": self.threshold_[i],
                    "n": int(self.n_node_samples_[i]), "sse": self.sse_[i],
                    "value": self.value_[i], "decrease": self.impurity_decrease_[i],
                    "left": node(self.children_left_[i]), "right": node(self.children_right_[i])}

        return {"kind": "tree", "params": self.get_params(deep=False) | {"random_state": None},
                "n_features": int(self.n_features_in_), "root": node(0)}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        params = {k: v for k, v in doc.get("params", {}).items() if k != "random_state"}
        tree = cls(**params)
        cols: dict[str, list] = {k: [] for k in
                                 ("feature", "threshold", "left", "right", "value", "n", "sse", "dec")}

        def add(nd):
            i = len(cols["feature"])
            internal = "feature" in nd
            cols["feature"].append(nd["feature"] if internal else -1)
            cols["threshold"].append(nd["threshold"] if internal else np.nan)
            cols["left"].append(-1)
            cols["right"].append(-1)
            cols["value"].append(nd["value"])
            cols["n"].append(nd["n"])
            cols["sse"].append(nd["sse"])
            cols["dec"].append(nd.get("decrease", 0.0))
            if internal:
                cols["left"][i] = add(nd["left"])
                cols["right"][i] = add(nd["right"])
            return i

        add(doc["root"])
        tree.n_features_in_ = int(doc["n_features"])
        tree.feature_ = np.array(cols["feature"], dtype=np.int64)
        tree.threshold_ = np.array(cols["threshold"], dtype=float)
        tree.children_left_ = np.array(cols["left"], dtype=np.int64)
        tree.children_right_ = np.array(cols["right"], dtype=np.int64)
        tree.value_ = np.array(cols["value"], dtype=float)
        tree.n_node_samples_ = np.array(cols["n"], dtype=np.int64)
        tree.sse_ = np.array(cols["sse"], dtype=float)
        tree.impurity_decrease_ = np.array(cols["dec"], dtype=float)
        return tree


def _fit_member(X, y, seed, params, bootstrap):
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    tree = RegressionTree(random_state=rng, **params)
    return tree.fit(X[rows], y[rows])


class RandomForest(RegressorMixin, BaseEstimator):
    """Bagged CART trees with per-node feature subsampling; predictions are averaged.

    Tree ``i`` draws its bootstrap sample and feature subsets from
    ``tree_seed(random_state, i)``, so the fitted forest does not depend on ``n_jobs``.
    """

    def __init__(self, n_estimators=100, min_samples_leaf=2, max_depth=None,
                 min_impurity_decrease=0.0, max_features="sqrt", bootstrap=True,
                 random_state=None, n_jobs=1):
        self.n_estimators = n_estimators
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.min_impurity_decrease = min_impurity_decrease
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("a forest needs at least two training rows")
        self.n_features_in_ = X.shape[1]
        params = dict(min_samples_leaf=self.min_samples_leaf, max_depth=self.max_depth,
                      min_impurity_decrease=self.min_impurity_decrease,
                      max_features=self.max_features)
        self.seeds_ = [tree_seed(self.random_state, i) for i in range(self.n_estimators)]
        if self.n_jobs in (None, 1):
            self.estimators_ = [_fit_member(X, y, s, params, self.bootstrap) for s in self.seeds_]
        else:
            self.estimators_ = Parallel(n_jobs=self.n_jobs)(
                delayed(_fit_member)(X, y, s, params, self.bootstrap) for s in self.seeds_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.float64)
        return np.mean([t.predict(X) for t in self.estimators_], axis=0)

    @property
    def feature_importances_(self) -> np.ndarray:
        single = sum(t.decrease_tables()[0] for t in self.estimators_)
        total = single.sum()
        return single / total if total > 0 else single

    def decrease_tables(self) -> tuple[np.ndarray, np.ndarray]:
        single = np.zeros(self.n_features_in_)
        pair = np.zeros((self.n_features_in_, self.n_features_in_))
        for t in self.estimators_:
            s, p = t.decrease_tables()
            single += s
            pair += p
        return single, pair

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {"kind": "forest", "params": self.get_params(deep=False) | {"n_jobs": 1},
                "n_features": int(self.n_features_in_), "seeds": list(self.seeds_),
                "trees": [t.to_dict() for t in self.estimators_]}

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomForest":
        forest = cls(**doc.get("params", {}))
        forest.n_features_in_ = int(doc["n_features"])
        forest.seeds_ = list(doc.get("seeds", []))
        forest.estimators_ = [RegressionTree.from_dict(t) for t in doc["trees"]]
        return forest


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "tree":
        return RegressionTree.from_dict(doc)
    if kind == "forest":
        return RandomForest.from_dict(doc)
    raise ValueError(f"unknown model kind {kind!r}")


# -- functional entry points --------------------------------------------------

def fit_cart(dataset: MethodDataset, hp: TreeHyperparams = TreeHyperparams(),
             seed: int | None = None) -> RegressionTree:
    tree = RegressionTree(hp.min_samples_leaf, hp.max_depth, hp.min_impurity_decrease,
                          random_state=seed)
    return tree.fit(dataset.X, dataset.time_ns)


def fit_forest(dataset: MethodDataset, n_trees: int = 100,
               hp: TreeHyperparams = TreeHyperparams(), seed: int | None = None,
               n_jobs: int = 1) -> RandomForest:
    forest = RandomForest(n_trees, hp.min_samples_leaf, hp.max_depth, hp.min_impurity_decrease,
                          random_state=seed, n_jobs=n_jobs)
    return forest.fit(dataset.X, dataset.time_ns)


def mape(actual, predicted) -> float | None:
    """Mean absolute percentage error over rows with non-zero actual values.

    Returns ``None`` when every actual value is zero.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    keep = a != 0
    if not keep.any():
        return None
    return float(100.0 * np.mean(np.abs((a[keep] - p[keep]) / a[keep])))


def zero_actuals(actual) -> int:
    return int((np.asarray(actual) == 0).sum())


Term = tuple  # (option,) or (option_a, option_b)


def importance(model, feature_names: Sequence[str]) -> list[tuple[Term, float]]:
    """Option and option-pair importances from SSE decreases.

    Scores are divided by the total decrease of all splits, so single-option
    scores sum to 1 (or are all 0 for a model without splits). A pair's score
    is the decrease of splits on one member below a split on the other.
    Sorted by descending score, then by term.
    """
    single, pair = model.decrease_tables()
    total = single.sum()
    scale = 1.0 / total if total > 0 else 0.0
    names = list(feature_names)
    out = [((names[i],), float(single[i] * scale)) for i in range(len(names))]
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            out.append(((names[i], names[j]), float(pair[i, j] * scale)))
    return sorted(out, key=lambda t: (-t[1], len(t[0]), t[0]))


def term_key(term: Term) -> str:
    return "*".join(term)


def parse_term(text: str) -> Term:
    parts = tuple(p.strip() for p in text.split("*"))
    if not 1 <= len(parts) <= 2 or not all(parts):
        raise ValueError(f"terms are an option or a pair 'a*b', got {text!r}")
    return parts


@dataclass
class PerfModel:
    method: str
    predictor: Any
    train_mape: float | None
    test_mape: float | None
    abs_perf: float
    rel_perf: float = 0.0
    phase: int = 1
    zero_test_rows: int = 0
    importance: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return self.predictor.predict(np.atleast_2d(X))

    def to_dict(self, include_model: bool = True) -> dict:
        out = {"method": self.method, "phase": self.phase, "train_mape": self.train_mape,
               "test_mape": self.test_mape, "abs_perf_ns": self.abs_perf,
               "rel_perf": self.rel_perf, "zero_test_rows": self.zero_test_rows}
        if self.importance:
            out["importance"] = [{"term": term_key(t), "score": s} for t, s in self.importance]
        if include_model:
            out["model"] = self.predictor.to_dict()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "PerfModel":
        return cls(doc["method"], model_from_dict(doc["model"]), doc.get("train_mape"),
                   doc.get("test_mape"), doc.get("abs_perf_ns", 0.0), doc.get("rel_perf", 0.0),
                   doc.get("phase", 1), doc.get("zero_test_rows", 0),
                   [(parse_term(e["term"]), e["score"]) for e in doc.get("importance", [])])
