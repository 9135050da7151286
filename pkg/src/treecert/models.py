"""Stump and tree ensembles, per-feature aggregation, and the model document.

Both model kinds route ``x`` to the right child iff ``x[feature] >= threshold``.
The prediction of an ensemble is the sum of its members; the predicted class
is the sign of that sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .geometry import AxisBox

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for malformed, truncated or unsupported model documents."""


def _finite(name: str, value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    left_value: float
    right_value: float

    def __post_init__(self):
        if int(self.feature) != self.feature or self.feature < 0:
            raise ValueError(f"feature must be a non-negative integer, got {self.feature}")
        object.__setattr__(self, "feature", int(self.feature))
        for name in ("threshold", "left_value", "right_value"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))

    def predict(self, x) -> float:
        return self.right_value if x[self.feature] >= self.threshold else self.left_value


@dataclass(frozen=True)
class StumpEnsemble:
    stumps: tuple[Stump, ...]
    dimension: int

    def __init__(self, stumps, dimension: int):
        stumps = tuple(stumps)
        if dimension < 0:
            raise ValueError("dimension must be non-negative")
        for s in stumps:
            if s.feature >= dimension:
                raise ValueError(f"stump feature {s.feature} out of range for dimension {dimension}")
        object.__setattr__(self, "stumps", stumps)
        object.__setattr__(self, "dimension", int(dimension))

    def __len__(self):
        return len(self.stumps)

    def append(self, stump: Stump) -> "StumpEnsemble":
        return StumpEnsemble(self.stumps + (stump,), self.dimension)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Vectorised F over the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_dim(X.shape[1], self.dimension)
        out = np.zeros(X.shape[0])
        for s in self.stumps:
            out += np.where(X[:, s.feature] >= s.threshold, s.right_value, s.left_value)
        return out


def _check_dim(got: int, want: int) -> None:
    if got != want:
        raise ValueError(f"input has {got} features, model expects {want}")


def evaluate_stump_ensemble(ensemble: StumpEnsemble, x) -> float:
    x = np.asarray(x, dtype=float)
    _check_dim(x.shape[0], ensemble.dimension)
    return float(sum(s.predict(x) for s in ensemble.stumps))


@dataclass(frozen=True)
class FeatureAggregate:
    """The summed step function of all stumps splitting one feature.

    ``interval_values[t]`` is the contribution on ``[thresholds[t-1], thresholds[t])``
    with the outer intervals unbounded.
    """

    feature: int
    thresholds: np.ndarray
    interval_values: np.ndarray

    def __call__(self, value: float) -> float:
        return float(self.interval_values[np.searchsorted(self.thresholds, value, side="right")])

    @property
    def lower_bounds(self) -> np.ndarray:
        return np.concatenate(([-np.inf], self.thresholds))

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.concatenate((self.thresholds, [np.inf]))

    def interval_index(self, values) -> np.ndarray:
        return np.searchsorted(self.thresholds, values, side="right")


def aggregate_features(ensemble: StumpEnsemble) -> dict[int, FeatureAggregate]:
    by_feature: dict[int, dict[float, list[float]]] = {}
    for s in ensemble.stumps:
        # per threshold: [sum of left values, sum of right values]
        acc = by_feature.setdefault(s.feature, {}).setdefault(s.threshold, [0.0, 0.0])
        acc[0] += s.left_value
        acc[1] += s.right_value
    out = {}
    for j in sorted(by_feature):
        items = sorted(by_feature[j].items())
        thresholds = np.array([t for t, _ in items])
        lefts = np.array([lr[0] for _, lr in items])
        rights = np.array([lr[1] for _, lr in items])
        # interval t sits right of thresholds[:t] and left of thresholds[t:]
        right_prefix = np.concatenate(([0.0], np.cumsum(rights)))
        left_suffix = np.concatenate((np.cumsum(lefts[::-1])[::-1], [0.0]))
        out[j] = FeatureAggregate(j, thresholds, right_prefix + left_suffix)
    return out


# ----------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Leaf:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", _finite("leaf value", self.value))


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"

    def __post_init__(self):
        if int(self.feature) != self.feature or self.feature < 0:
            raise ValueError(f"feature must be a non-negative integer, got {self.feature}")
        object.__setattr__(self, "feature", int(self.feature))
        object.__setattr__(self, "threshold", _finite("threshold", self.threshold))
        if not isinstance(self.left, (Leaf, Split)) or not isinstance(self.right, (Leaf, Split)):
            raise ValueError("split children must be tree nodes")


TreeNode = Union[Leaf, Split]


def evaluate_tree(tree: TreeNode, x) -> float:
    node = tree
    while isinstance(node, Split):
        node = node.right if x[node.feature] >= node.threshold else node.left
    return node.value


def tree_max_feature(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return -1
    return max(tree.feature, tree_max_feature(tree.left), tree_max_feature(tree.right))


def tree_depth(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def iter_leaves(tree: TreeNode, dimension: int) -> Iterator[tuple[AxisBox, float]]:
    """Depth-first (left before right) leaves with their decision boxes."""
    stack = [(tree, AxisBox.full(dimension))]
    while stack:
        node, box = stack.pop()
        if isinstance(node, Leaf):
            yield box, node.value
            continue
        left, right = box.split(node.feature, node.threshold)
        # an unreachable child (empty box) cannot affect any prediction
        if right is not None:
            stack.append((node.right, right))
        if left is not None:
            stack.append((node.left, left))


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[TreeNode, ...]
    dimension: int

    def __init__(self, trees, dimension: int):
        trees = tuple(trees)
        for t in trees:
            if tree_max_feature(t) >= dimension:
                raise ValueError(f"tree uses a feature outside dimension {dimension}")
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "dimension", int(dimension))

    def __len__(self):
        return len(self.trees)

    def append(self, tree: TreeNode) -> "TreeEnsemble":
        return TreeEnsemble(self.trees + (tree,), self.dimension)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_dim(X.shape[1], self.dimension)
        return np.array([sum(evaluate_tree(t, x) for t in self.trees) for x in X])


def evaluate_tree_ensemble(ensemble: TreeEnsemble, x) -> float:
    x = np.asarray(x, dtype=float)
    _check_dim(x.shape[0], ensemble.dimension)
    return float(sum(evaluate_tree(t, x) for t in ensemble.trees))


def stumps_as_trees(ensemble: StumpEnsemble) -> TreeEnsemble:
    trees = [Split(s.feature, s.threshold, Leaf(s.left_value), Leaf(s.right_value)) for s in ensemble.stumps]
    return TreeEnsemble(trees, ensemble.dimension)


Model = Union[StumpEnsemble, TreeEnsemble]


# ----------------------------------------------------------------------------
# model document


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def model_to_dict(model: Model) -> dict:
    if isinstance(model, StumpEnsemble):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "stumps",
            "dimension": model.dimension,
            "stumps": [
                {"feature": s.feature, "threshold": s.threshold, "left": s.left_value, "right": s.right_value}
                for s in model.stumps
            ],
        }
    if isinstance(model, TreeEnsemble):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "trees",
            "dimension": model.dimension,
            "trees": [_node_to_dict(t) for t in model.trees],
        }
    raise TypeError(f"not a model: {type(model).__name__}")


def serialize_model(model: Model) -> str:
    # json writes floats with repr(), which round-trips exactly
    return json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"


def _reject_constant(name):
    raise ModelFormatError(f"non-finite number {name} in model document")


def _node_from_dict(obj, depth=0) -> TreeNode:
    if depth > 512:
        raise ModelFormatError("tree nesting too deep")
    if not isinstance(obj, dict):
        raise ModelFormatError("tree node must be an object")
    if "leaf" in obj:
        return Leaf(_number(obj["leaf"]))
    try:
        return Split(
            _integer(obj["feature"]),
            _number(obj["threshold"]),
            _node_from_dict(obj["left"], depth + 1),
            _node_from_dict(obj["right"], depth + 1),
        )
    except KeyError as exc:
        raise ModelFormatError(f"tree node missing field {exc}") from None


def _number(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFormatError(f"expected a number, got {v!r}")
    return float(v)


def _integer(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelFormatError(f"expected an integer, got {v!r}")
    return v


def model_from_dict(doc) -> Model:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    kind = doc.get("kind")
    try:
        dimension = _integer(doc["dimension"])
        if kind == "stumps":
            items = doc["stumps"]
            if not isinstance(items, list):
                raise ModelFormatError("'stumps' must be a list")
            stumps = []
            for s in items:
                if not isinstance(s, dict):
                    raise ModelFormatError("stump must be an object")
                stumps.append(
                    Stump(_integer(s["feature"]), _number(s["threshold"]), _number(s["left"]), _number(s["right"]))
                )
            return StumpEnsemble(stumps, dimension)
        if kind == "trees":
            items = doc["trees"]
            if not isinstance(items, list):
                raise ModelFormatError("'trees' must be a list")
            return TreeEnsemble([_node_from_dict(t) for t in items], dimension)
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc}") from None
    except ModelFormatError:
        raise
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def deserialize_model(text: str) -> Model:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid model document: {exc}") from None
    return model_from_dict(doc)


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> Model:
    with open(path) as fh:
        return deserialize_model(fh.read())
