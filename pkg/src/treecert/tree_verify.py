"""Robustness verification for decision trees and tree ensembles.

A single tree is verified exactly by scanning its leaves.  For ensembles the
leaves every tree can reach are combined group by group: a clique picks one
reachable leaf per tree whose boxes intersect, and is kept only if the
intersection box is itself reachable from ``x`` (pairwise reachability is not
enough outside l_inf).  Groups of cliques are then merged level by level,
each group standing in for a "virtual tree" whose leaves are its cliques.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import AxisBox, box_intersect, box_reachable, check_norm
from .models import TreeEnsemble, TreeNode, evaluate_tree, iter_leaves
from .stump_verify import ResourceLimitError, VerificationResult

DEFAULT_CLIQUE_CAP = 10**6


@dataclass(frozen=True)
class LeafRecord:
    tree_index: int
    leaf_id: int
    box: AxisBox
    value: float


@dataclass(frozen=True)
class PseudoNode:
    members: frozenset
    box: AxisBox
    value: float


@dataclass(frozen=True)
class MultiLevelConfig:
    clique_size: int = 3
    levels: int = 2
    max_cliques: int = DEFAULT_CLIQUE_CAP

    def __post_init__(self):
        if self.clique_size < 1 or self.levels < 1:
            raise ValueError("clique_size and levels must both be >= 1")


def compute_leaf_boxes(tree: TreeNode, dimension: int, tree_index: int = 0) -> list[LeafRecord]:
    return [LeafRecord(tree_index, i, box, value) for i, (box, value) in enumerate(iter_leaves(tree, dimension))]


def _reachable_leaves(records: Sequence[LeafRecord], x, p, epsilon) -> list[LeafRecord]:
    return [r for r in records if box_reachable(x, r.box, p, epsilon)]


def verify_single_tree(tree: TreeNode, x, y, p: float, epsilon: float, dimension: Optional[int] = None) -> VerificationResult:
    """Exact: the worst leaf value among leaves whose box the ball touches."""
    x = np.asarray(x, dtype=float)
    p = check_norm(p)
    if dimension is None:
        dimension = x.shape[0]
    if epsilon == 0:
        return VerificationResult(float(y * evaluate_tree(tree, x)), True)
    margin = min(
        y * value for box, value in iter_leaves(tree, dimension) if box_reachable(x, box, p, epsilon)
    )
    return VerificationResult(float(margin), True)


def enumerate_cliques(parts: Sequence[Sequence[PseudoNode]], x, p: float, epsilon: float, cap: int = DEFAULT_CLIQUE_CAP) -> list[PseudoNode]:
    """All choices of one node per part whose joint box meets the eps-ball.

    Partial cliques are dropped as soon as their box misses the ball: the box
    only shrinks as parts are added, so such a clique can never recover.  The
    result is therefore the same as enumerating every intersecting clique and
    checking the ball once at the end.
    """
    current = [n for n in parts[0] if box_reachable(x, n.box, p, epsilon)]
    for part in parts[1:]:
        grown = []
        for a in current:
            for b in part:
                box = box_intersect(a.box, b.box)
                if box is None or not box_reachable(x, box, p, epsilon):
                    continue
                grown.append(PseudoNode(a.members | b.members, box, a.value + b.value))
                if len(grown) > cap:
                    raise ResourceLimitError(f"more than {cap} live cliques in one group")
        current = grown
    return current


def check_clique(box: Optional[AxisBox], x, p: float, epsilon: float) -> bool:
    """Keep a clique iff its intersection box is within the ball."""
    return box_reachable(x, box, p, epsilon)


def verify_ensemble_multilevel(
    ensemble: TreeEnsemble,
    x,
    y,
    p: float,
    epsilon: float,
    config: MultiLevelConfig = MultiLevelConfig(),
    leaf_records: Optional[Sequence[Sequence[LeafRecord]]] = None,
) -> VerificationResult:
    """Sound lower bound on ``min y F(x+delta)`` for a tree ensemble.

    Trees are grouped ``clique_size`` at a time in ensemble order.  The bound
    is exact when the last level holds a single group (e.g. ``clique_size >=
    T`` with one level); ``complete`` reports that case.
    """
    x = np.asarray(x, dtype=float)
    p = check_norm(p)
    if not isinstance(config, MultiLevelConfig):
        raise TypeError("config must be a MultiLevelConfig")
    T = len(ensemble.trees)
    if T == 0:
        return VerificationResult(0.0, True)
    if leaf_records is None:
        leaf_records = [compute_leaf_boxes(t, ensemble.dimension, i) for i, t in enumerate(ensemble.trees)]
    K = config.clique_size

    # level 0: every tree is a part whose nodes are its reachable leaves
    parts = [
        [PseudoNode(frozenset([(r.tree_index, r.leaf_id)]), r.box, y * r.value) for r in _reachable_leaves(recs, x, p, epsilon)]
        for recs in leaf_records
    ]
    for _ in range(config.levels):
        groups = [parts[i : i + K] for i in range(0, len(parts), K)]
        parts = [enumerate_cliques(g, x, p, epsilon, config.max_cliques) for g in groups]
        if len(parts) == 1:
            break
    complete = len(parts) == 1
    margin = sum(min(n.value for n in part) for part in parts)
    return VerificationResult(float(margin), complete)


def verify_ensemble_sum_of_trees(ensemble: TreeEnsemble, x, y, p: float, epsilon: float) -> VerificationResult:
    """The loosest bound: each tree attacked independently, worst cases summed."""
    margin = sum(verify_single_tree(t, x, y, p, epsilon, ensemble.dimension).margin_lower_bound for t in ensemble.trees)
    return VerificationResult(float(margin), len(ensemble.trees) <= 1)
