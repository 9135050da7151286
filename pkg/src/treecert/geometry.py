"""Axis-aligned boxes and point-to-box distances under l0, lp and l_inf norms.

Boxes follow the routing rule used throughout the package: a split on
``(feature, threshold)`` sends ``x`` right iff ``x[feature] >= threshold``, so
every box is a product of intervals ``[lo, hi)``.  Distances are always taken
to the closure ``[lo, hi]``; this can only over-estimate what an adversary
reaches, which keeps every verifier sound.

Norms are passed around as a float ``p``: ``0`` for l0, ``math.inf`` for
l_inf, anything in ``(0, inf)`` for lp.  For ``0 < p < inf`` distances and
budgets are compared in p-th power units (``sum |dz|^p`` against ``eps**p``)
so no roots are taken on the hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

# relative slack used when comparing a reach cost against a budget
BUDGET_RTOL = 1e-9


def check_norm(p: float) -> float:
    p = float(p)
    if not (p == 0 or p > 0):
        raise ValueError(f"norm order must be 0, positive, or inf; got {p}")
    return p


def parse_norm(text: str) -> float:
    """Parse ``l0``, ``l1``, ``l2.5``, ``linf`` (or bare numbers / ``inf``)."""
    t = text.strip().lower()
    if t.startswith("l"):
        t = t[1:]
    if t in ("inf", "infinity"):
        return math.inf
    try:
        return check_norm(float(t))
    except ValueError:
        raise ValueError(f"unrecognised norm {text!r}") from None


def norm_name(p: float) -> str:
    if math.isinf(p):
        return "linf"
    if p == int(p):
        return f"l{int(p)}"
    return f"l{p:g}"


@dataclass(frozen=True)
class PerturbationSpec:
    p: float
    epsilon: float

    def __post_init__(self):
        check_norm(self.p)
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if self.p == 0 and self.epsilon != int(self.epsilon):
            raise ValueError("l0 budget must be an integer feature count")

    @property
    def budget(self) -> float:
        return power_budget(self.p, self.epsilon)


def power_budget(p: float, epsilon: float) -> float:
    """The budget in the units `coordinate_costs` uses: eps**p for finite p > 0."""
    if p == 0 or math.isinf(p):
        return float(epsilon)
    return float(epsilon) ** p


def within_budget(cost, budget: float):
    """Tolerant ``cost <= budget`` (accepts arrays)."""
    return cost <= budget * (1.0 + BUDGET_RTOL) + 1e-15


def coordinate_costs(gaps: np.ndarray, p: float) -> np.ndarray:
    """Per-coordinate cost of moving by ``gaps`` (non-negative)."""
    gaps = np.asarray(gaps, dtype=float)
    if p == 0:
        return (gaps > 0).astype(float)
    if math.isinf(p):
        return gaps
    with np.errstate(over="ignore"):
        return gaps**p


def combine_costs(costs: np.ndarray, p: float, axis=-1) -> np.ndarray:
    """Aggregate per-coordinate costs: max for l_inf, sum otherwise."""
    if math.isinf(p):
        return np.max(costs, axis=axis, initial=0.0)
    return np.sum(costs, axis=axis)


class AxisBox:
    """Product of half-open intervals ``[lo_i, hi_i)`` with ``lo_i < hi_i``.

    Unbounded sides are stored as ``-inf`` / ``+inf``.  Empty intersections
    are reported as ``None`` by `box_intersect`, never as inverted bounds.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d and the same length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo >= hi):
            raise ValueError("box is empty; use box_intersect to detect emptiness")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lo = lo
        self.hi = hi

    @classmethod
    def full(cls, dimension: int) -> "AxisBox":
        return cls(np.full(dimension, -np.inf), np.full(dimension, np.inf))

    @property
    def dimension(self) -> int:
        return self.lo.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((self.lo <= x) & (x < self.hi)))

    def split(self, feature: int, threshold: float) -> tuple[Optional["AxisBox"], Optional["AxisBox"]]:
        """Children boxes of a ``x[feature] >= threshold`` test (None if empty)."""
        left_hi = self.hi.copy()
        left_hi[feature] = min(left_hi[feature], threshold)
        right_lo = self.lo.copy()
        right_lo[feature] = max(right_lo[feature], threshold)
        left = AxisBox(self.lo, left_hi) if self.lo[feature] < left_hi[feature] else None
        right = AxisBox(right_lo, self.hi) if right_lo[feature] < self.hi[feature] else None
        return left, right

    def __eq__(self, other):
        if not isinstance(other, AxisBox):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        parts = [f"[{l:g},{h:g})" for l, h in zip(self.lo, self.hi)]
        return "AxisBox(" + " x ".join(parts) + ")"


def closure_gaps(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """|z - x| per coordinate where z clamps x onto [lo, hi] (broadcasts)."""
    return np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)


def box_cost(x, box: AxisBox, p: float) -> float:
    """Distance from x to the box closure in budget units (``dist**p`` for lp)."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.lo.shape:
        raise ValueError(f"point has dimension {x.shape}, box has {box.lo.shape}")
    gaps = closure_gaps(x, box.lo, box.hi)
    return float(combine_costs(coordinate_costs(gaps, p), p))


def point_box_distance(x, box: Optional[AxisBox], p: float) -> float:
    """Minimum lp distance from ``x`` to the closure of ``box``; +inf if empty.

    For ``p == 0`` this is the number of coordinates that must change.
    """
    p = check_norm(p)
    if box is None:
        return math.inf
    cost = box_cost(x, box, p)
    if p == 0 or math.isinf(p):
        return cost
    return cost ** (1.0 / p)


def box_intersect(a: AxisBox, b: AxisBox) -> Optional[AxisBox]:
    if a.dimension != b.dimension:
        raise ValueError("boxes have different dimensions")
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(lo >= hi):
        return None
    return AxisBox(lo, hi)


def box_reachable(x, box: Optional[AxisBox], p: float, epsilon: float) -> bool:
    """Whether some point of ``box`` lies within the eps-ball around ``x``.

    A zero budget means no perturbation at all, so only actual membership
    counts (the closure would otherwise admit boundary points x never visits).
    """
    if box is None:
        return False
    if epsilon == 0:
        return box.contains(x)
    return bool(within_budget(box_cost(x, box, p), power_budget(p, epsilon)))


def ball_intersects_box(x, epsilon: float, p: float, box: Optional[AxisBox]) -> bool:
    if box is None:
        return False
    return point_box_distance(x, box, p) <= epsilon


def interval_costs(x, lo, hi, p: float) -> np.ndarray:
    """Cost to move scalar(s) ``x`` into the closure of ``[lo, hi)`` (broadcasts)."""
    gaps = closure_gaps(np.asarray(x, dtype=float), np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    return coordinate_costs(gaps, p)
