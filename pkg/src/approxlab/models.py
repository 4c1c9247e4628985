"""Desk-scale classifier zoo used for both the black-box target and the
substitute candidates: logistic regression trained by minibatch SGD, exact
k-NN, Gini decision trees, and bootstrap random forests.

Decision conventions fixed for reproducible agreement counts: logistic
ties at probability 0.5 predict benign; k-NN breaks distance ties by lower
stored index; tree leaves and forest votes break ties toward benign.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Label
from .features import FeatureVector, SpaceMismatchError

MODEL_FORMAT = "approxlab-model/1"

LabeledVectors = Sequence[tuple[FeatureVector, Label]]


class DimMismatchError(ValueError):
    """Parameter block and feature dimensionality disagree."""


class SingleClassError(ValueError):
    """Training data holds only one class."""


class EmptyDataError(ValueError):
    """No data where at least one sample is required."""


class EvenKError(ValueError):
    """k-NN needs odd k so binary votes cannot tie."""


class ModelKind(enum.Enum):
    LOGREG = "logreg"
    KNN = "knn"
    DECISION_TREE = "tree"
    RANDOM_FOREST = "forest"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 50
    minibatch: int = 32
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("learning_rate, epochs and minibatch must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")

    def digest(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class PredModel:
    kind: ModelKind
    feature_space: str  # descriptor "space:dim"
    params: dict
    train_config_digest: str = ""


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: dict[Label, float]
    n: int


_LABEL_OF_INT = (Label.BENIGN, Label.MALWARE)


def _label_int(label: Label) -> int:
    return 0 if label is Label.BENIGN else 1


def _as_matrix(data: LabeledVectors) -> tuple[np.ndarray, np.ndarray, str]:
    if not data:
        raise EmptyDataError("no training data")
    descriptor = data[0][0].descriptor()
    if any(fv.descriptor() != descriptor for fv, _ in data):
        raise SpaceMismatchError("mixed feature spaces in training data")
    X = np.stack([fv.values for fv, _ in data])
    y = np.array([_label_int(label) for _, label in data], dtype=np.float64)
    return X, y, descriptor


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss_grad(
    theta: np.ndarray, batch: LabeledVectors, l2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy (natural log) plus 0.5*l2*||w||^2, with its
    analytic gradient.  theta is the weight vector with the bias appended."""
    X, y, _ = _as_matrix(batch)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (X.shape[1] + 1,):
        raise DimMismatchError(
            f"theta has {theta.size} entries, expected {X.shape[1] + 1}"
        )
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    # log(1 + e^z) - y*z is the cross-entropy of sigmoid(z), stably computed
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    residual = _sigmoid(z) - y
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ residual / len(batch) + l2 * w
    grad[-1] = residual.mean()
    return loss, grad


def train_logreg(data: LabeledVectors, config: TrainConfig = TrainConfig()) -> PredModel:
    """Minibatch SGD from zero weights; shuffle order is derived from the seed."""
    X, y, descriptor = _as_matrix(data)
    if len(set(y.tolist())) < 2:
        raise SingleClassError("logistic regression needs both classes present")
    rng = np.random.default_rng(config.seed)
    theta = np.zeros(X.shape[1] + 1)
    pairs = list(data)
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), config.minibatch):
            batch = [pairs[i] for i in order[start : start + config.minibatch]]
            _, grad = logreg_loss_grad(theta, batch, l2=config.l2)
            theta = theta - config.learning_rate * grad
    return PredModel(
        ModelKind.LOGREG,
        descriptor,
        {"weights": theta[:-1], "bias": float(theta[-1])},
        config.digest(),
    )


def train_knn(data: LabeledVectors, k: int = 5) -> PredModel:
    if not data:
        raise EmptyDataError("no training data")
    if k % 2 == 0:
        raise EvenKError(f"k must be odd, got {k}")
    if not 1 <= k <= len(data):
        raise ValueError(f"k={k} outside [1, {len(data)}]")
    X, y, descriptor = _as_matrix(data)
    return PredModel(
        ModelKind.KNN,
        descriptor,
        {"points": X, "labels": y.astype(np.int64), "k": k},
    )


# -- decision trees ---------------------------------------------------------


def _gini_counts(n1: np.ndarray, n: np.ndarray) -> np.ndarray:
    p1 = n1 / n
    return 1.0 - p1 * p1 - (1.0 - p1) * (1.0 - p1)


def _best_split(X, y, rows, feature_idx, min_leaf):
    """Lowest weighted-Gini split over the allowed features.

    Ties resolve to the lowest feature index, then the lowest threshold
    (features scanned in order; candidate thresholds ascending; only strict
    improvements replace the incumbent).
    """
    n = rows.size
    best = None  # (cost, feature, threshold)
    for f in feature_idx:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        ones = np.cumsum(y[rows][order])
        cut = np.nonzero(v[:-1] < v[1:])[0]  # split between distinct values
        if cut.size == 0:
            continue
        nl = cut + 1
        nr = n - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        nl, nr, cut = nl[ok], nr[ok], cut[ok]
        ones_l = ones[cut]
        ones_r = ones[-1] - ones_l
        cost = (nl * _gini_counts(ones_l, nl) + nr * _gini_counts(ones_r, nr)) / n
        at = int(np.argmin(cost))  # first minimum = lowest threshold
        if best is None or cost[at] < best[0]:
            best = (float(cost[at]), f, float((v[cut[at]] + v[cut[at] + 1]) / 2.0))
    return best


def _majority_label(y_rows: np.ndarray) -> str:
    ones = int(y_rows.sum())
    # benign wins exact ties
    label = Label.MALWARE if ones * 2 > y_rows.size else Label.BENIGN
    return label.value


def _grow_tree(X, y, rows, depth, max_depth, min_leaf, feature_idx, nodes):
    ones = y[rows].sum()
    if (
        depth >= max_depth
        or rows.size < 2 * min_leaf
        or ones == 0
        or ones == rows.size
    ):
        nodes.append({"leaf": _majority_label(y[rows])})
        return len(nodes) - 1
    split = _best_split(X, y, rows, feature_idx, min_leaf)
    if split is None:
        nodes.append({"leaf": _majority_label(y[rows])})
        return len(nodes) - 1
    _, f, threshold = split
    node = {"feature": int(f), "threshold": threshold, "left": -1, "right": -1}
    nodes.append(node)
    at = len(nodes) - 1
    mask = X[rows, f] <= threshold
    node["left"] = _grow_tree(X, y, rows[mask], depth + 1, max_depth, min_leaf, feature_idx, nodes)
    node["right"] = _grow_tree(X, y, rows[~mask], depth + 1, max_depth, min_leaf, feature_idx, nodes)
    return at


def train_tree(
    data: LabeledVectors, max_depth: int = 8, min_leaf: int = 1
) -> PredModel:
    """Greedy Gini tree with deterministic tie-breaking."""
    X, y, descriptor = _as_matrix(data)
    if max_depth < 1 or min_leaf < 1:
        raise ValueError("max_depth and min_leaf must be positive")
    nodes: list[dict] = []
    _grow_tree(X, y, np.arange(len(data)), 0, max_depth, min_leaf, range(X.shape[1]), nodes)
    return PredModel(ModelKind.DECISION_TREE, descriptor, {"nodes": nodes})


def _forest_subseed(seed: int, index: int) -> int:
    h = hashlib.sha256(f"forest:{seed}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def train_forest(
    data: LabeledVectors,
    n_trees: int = 50,
    max_depth: int = 8,
    seed: int = 0,
    min_leaf: int = 1,
) -> PredModel:
    """Majority vote over trees grown on seeded bootstraps, each restricted
    to a sqrt(d)-sized feature subset drawn from its own recorded seed."""
    X, y, descriptor = _as_matrix(data)
    if n_trees < 1:
        raise ValueError("need at least one tree")
    n, d = X.shape
    n_features = max(1, round(math.sqrt(d)))
    trees, feature_seeds = [], []
    for i in range(n_trees):
        tree_seed = _forest_subseed(seed, i)
        rng = np.random.default_rng(tree_seed)
        rows = rng.integers(0, n, size=n)
        subset = np.sort(rng.choice(d, size=n_features, replace=False))
        nodes: list[dict] = []
        _grow_tree(X, y, rows, 0, max_depth, min_leaf, subset, nodes)
        trees.append(nodes)
        feature_seeds.append(tree_seed)
    return PredModel(
        ModelKind.RANDOM_FOREST,
        descriptor,
        {"trees": trees, "feature_seeds": feature_seeds},
    )


# -- prediction and evaluation ----------------------------------------------


def _walk_tree(nodes: list[dict], x: np.ndarray) -> int:
    node = nodes[0]
    while "leaf" not in node:
        node = nodes[node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]]
    return _label_int(Label(node["leaf"]))


def predict(model: PredModel, fv: FeatureVector) -> Label:
    """Label-only prediction; no confidence score crosses this interface."""
    if fv.descriptor() != model.feature_space:
        raise SpaceMismatchError(
            f"model expects {model.feature_space}, got {fv.descriptor()}"
        )
    x = fv.values
    if model.kind is ModelKind.LOGREG:
        z = float(model.params["weights"] @ x + model.params["bias"])
        return Label.MALWARE if z > 0 else Label.BENIGN  # p > 0.5; ties benign
    if model.kind is ModelKind.KNN:
        points = model.params["points"]
        diffs = points - x
        dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
        order = np.lexsort((np.arange(len(points)), dists))  # distance, then index
        votes = model.params["labels"][order[: model.params["k"]]]
        return _LABEL_OF_INT[int(votes.sum() * 2 > votes.size)]
    if model.kind is ModelKind.DECISION_TREE:
        return _LABEL_OF_INT[_walk_tree(model.params["nodes"], x)]
    if model.kind is ModelKind.RANDOM_FOREST:
        votes = sum(_walk_tree(nodes, x) for nodes in model.params["trees"])
        return _LABEL_OF_INT[int(votes * 2 > len(model.params["trees"]))]
    raise ValueError(f"unknown model kind {model.kind}")


def evaluate(model: PredModel, data: LabeledVectors) -> EvalReport:
    if not data:
        raise EmptyDataError("no evaluation data")
    totals: dict[Label, int] = {}
    hits: dict[Label, int] = {}
    correct = 0
    for fv, label in data:
        totals[label] = totals.get(label, 0) + 1
        if predict(model, fv) == label:
            hits[label] = hits.get(label, 0) + 1
            correct += 1
    per_class = {lab: hits.get(lab, 0) / n for lab, n in totals.items()}
    return EvalReport(correct / len(data), per_class, len(data))


SUBSTITUTE_DEFAULTS = {
    ModelKind.KNN: {"k": 5},
    ModelKind.DECISION_TREE: {"max_depth": 8, "min_leaf": 2},
    ModelKind.RANDOM_FOREST: {"n_trees": 50, "max_depth": 8},
    # unit-scale pixel features want a larger step than TrainConfig's default
    ModelKind.LOGREG: {"learning_rate": 1.0},
}


def train_by_kind(
    kind: ModelKind, data: LabeledVectors, seed: int = 0, **overrides
) -> PredModel:
    """Uniform entry point the progressive driver uses; zoo defaults apply.

    k-NN's k is clamped to the largest odd value the data supports, so
    early small batches still train."""
    args = dict(SUBSTITUTE_DEFAULTS[kind])
    args.update(overrides)
    if kind is ModelKind.LOGREG:
        return train_logreg(data, TrainConfig(seed=seed, **args))
    if kind is ModelKind.KNN:
        n = len(data)
        if n:
            args["k"] = min(args["k"], n if n % 2 else n - 1)
        return train_knn(data, **args)
    if kind is ModelKind.DECISION_TREE:
        return train_tree(data, **args)
    return train_forest(data, seed=seed, **args)


# -- serialization -----------------------------------------------------------


def _params_jsonable(model: PredModel) -> dict:
    p = model.params
    if model.kind is ModelKind.LOGREG:
        return {"weights": p["weights"].tolist(), "bias": p["bias"]}
    if model.kind is ModelKind.KNN:
        return {
            "points": p["points"].tolist(),
            "labels": p["labels"].tolist(),
            "k": p["k"],
        }
    return p


def _params_runtime(kind: ModelKind, p: dict) -> dict:
    if kind is ModelKind.LOGREG:
        return {"weights": np.asarray(p["weights"], np.float64), "bias": float(p["bias"])}
    if kind is ModelKind.KNN:
        return {
            "points": np.asarray(p["points"], np.float64),
            "labels": np.asarray(p["labels"], np.int64),
            "k": int(p["k"]),
        }
    return p


def model_to_dict(model: PredModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "kind": model.kind.value,
        "feature_space": model.feature_space,
        "params": _params_jsonable(model),
        "train_config_digest": model.train_config_digest,
    }


def model_from_dict(payload: dict) -> PredModel:
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {payload.get('format')!r}")
    kind = ModelKind(payload["kind"])
    return PredModel(
        kind,
        payload["feature_space"],
        _params_runtime(kind, payload["params"]),
        payload.get("train_config_digest", ""),
    )


def save_model(model: PredModel, path: Path | str) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True, indent=1))


def load_model(path: Path | str) -> PredModel:
    return model_from_dict(json.loads(Path(path).read_text()))
