"""Robustness verification for decision-stump ensembles.

Every verifier returns a lower bound on ``min y * F(x + delta)`` over the
perturbation ball.  The sample is certified robust iff the bound is strictly
positive, so a clean score of exactly zero counts as an error.

A stump ensemble is separable: ``F(x) = sum_j g_j(x_j)`` with ``g_j`` the
aggregated step function of feature ``j``.  Per feature, an adversary picks
one interval of ``g_j``; reaching it costs ``dist(x_j, interval)**p``.

* l0 and l_inf are solved exactly in near-linear time.
* lp, 0 < p < inf, is NP-complete; `verify_lp_dp` gives a sound bound by a
  knapsack-style DP over a discretised budget, `verify_lp_exact` enumerates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import BUDGET_RTOL, check_norm, interval_costs, power_budget, within_budget
from .models import FeatureAggregate, Stump, StumpEnsemble, aggregate_features

DEFAULT_EXACT_CAP = 10**7


class ResourceLimitError(RuntimeError):
    """An exact or enumerative procedure would exceed its configured size cap."""


@dataclass(frozen=True)
class VerificationResult:
    margin_lower_bound: float
    complete: bool

    @property
    def robust(self) -> bool:
        return self.margin_lower_bound > 0


def _aggregates(ensemble: StumpEnsemble, aggregates) -> Mapping[int, FeatureAggregate]:
    return aggregate_features(ensemble) if aggregates is None else aggregates


def _check_sample(ensemble: StumpEnsemble, x, y):
    x = np.asarray(x, dtype=float)
    if x.shape != (ensemble.dimension,):
        raise ValueError(f"sample has shape {x.shape}, model expects ({ensemble.dimension},)")
    if y not in (-1, 1):
        raise ValueError(f"label must be -1 or +1, got {y}")
    return x, float(y)


def clean_margin(aggs: Mapping[int, FeatureAggregate], x, y) -> float:
    return float(y * sum(agg(x[j]) for j, agg in aggs.items()))


def feature_options(agg: FeatureAggregate, xj: float, y: float, p: float):
    """(cost, signed value) of every interval of one feature for one sample."""
    costs = interval_costs(xj, agg.lower_bounds, agg.upper_bounds, p)
    return costs, y * agg.interval_values


# ----------------------------------------------------------------------------
# exact l0 and l_inf


def verify_l0(ensemble: StumpEnsemble, x, y, k: int, aggregates=None) -> VerificationResult:
    """Exact l0 verification: the adversary rewrites at most ``k`` features."""
    x, y = _check_sample(ensemble, x, y)
    if int(k) != k or not 0 <= k <= ensemble.dimension:
        raise ValueError(f"l0 budget must be an integer in [0, {ensemble.dimension}]")
    aggs = _aggregates(ensemble, aggregates)
    base = clean_margin(aggs, x, y)
    # largest achievable drop per feature, ties broken by feature index
    drops = sorted(
        (float(np.min(y * agg.interval_values)) - y * agg(x[j]), j) for j, agg in aggs.items()
    )
    margin = base + sum(c for c, _ in drops[: int(k)] if c < 0)
    return VerificationResult(margin, True)


def verify_linf(ensemble: StumpEnsemble, x, y, epsilon: float, aggregates=None) -> VerificationResult:
    x, y = _check_sample(ensemble, x, y)
    aggs = _aggregates(ensemble, aggregates)
    if epsilon == 0:
        return VerificationResult(clean_margin(aggs, x, y), True)
    margin = 0.0
    for j, agg in aggs.items():
        costs, values = feature_options(agg, x[j], y, math.inf)
        margin += float(np.min(values[within_budget(costs, epsilon)]))
    return VerificationResult(margin, True)


# ----------------------------------------------------------------------------
# sound lp verification by dynamic programming


def grid_cells(budget: float, precision: float) -> int:
    """Smallest P with P * precision > budget."""
    if not precision > 0:
        raise ValueError("DP precision must be positive")
    return int(math.floor(budget / precision * (1.0 + BUDGET_RTOL))) + 1


def cost_cells(costs: np.ndarray, precision: float) -> np.ndarray:
    """Grid cells needed to pay ``costs``; at least 1, rounded in the adversary's favour."""
    cells = np.ceil(costs / precision * (1.0 - BUDGET_RTOL) - 1e-12)
    return np.maximum(cells, 1.0)


def dp_step(table: np.ndarray, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
    """One feature of the recursion, batched over samples.

    ``table[n, a-1]`` bounds the minimum over the features processed so far with
    ``a`` cells of budget.  Giving ``c`` cells to the new feature leaves
    ``a - c + 1`` for the rest; the extra cell absorbs the rounding of both
    parts up to the grid, which is what keeps the bound sound.  The minimum
    over budgets only needs one term per interval: the table is non-increasing
    in budget, so the cheapest cell count reaching an interval dominates.
    """
    n, P = table.shape
    out = np.full((n, P), np.inf)
    cols = np.arange(P)
    for t in range(cells.shape[1]):
        c = cells[:, t]
        idx = cols[None, :] - c[:, None].astype(np.int64) + 1
        ok = idx >= 0
        cand = np.take_along_axis(table, np.clip(idx, 0, P - 1), axis=1) + values[:, t : t + 1]
        np.minimum(out, np.where(ok, cand, np.inf), out=out)
    return out


def dp_table(option_lists: Sequence[tuple[np.ndarray, np.ndarray]], n: int, P: int) -> np.ndarray:
    """Run the recursion over ``option_lists`` of (cells, values), each (n, m)."""
    table = np.zeros((n, P))
    for cells, values in option_lists:
        table = dp_step(table, cells, values)
    return table


def dp_options(aggs: Mapping[int, FeatureAggregate], X: np.ndarray, y: np.ndarray, p: float, precision: float, P: int, skip=None):
    """(cells, values) per active feature for a batch of samples."""
    out = []
    for j, agg in aggs.items():
        if j == skip:
            continue
        costs = interval_costs(X[:, j : j + 1], agg.lower_bounds[None, :], agg.upper_bounds[None, :], p)
        cells = cost_cells(costs, precision)
        cells[cells > P] = P + 1  # unreachable; dp_step never indexes it
        out.append((cells, y[:, None] * agg.interval_values[None, :]))
    return out


def verify_lp_dp_batch(
    ensemble: StumpEnsemble, X, y, p: float, epsilon: float, precision: float, aggregates=None
) -> np.ndarray:
    """Sound lp margin lower bounds for every row of ``X``."""
    p = check_norm(p)
    if not (0 < p < math.inf):
        raise ValueError("DP verification needs 0 < p < inf")
    if not precision > 0:
        raise ValueError("DP precision must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    aggs = _aggregates(ensemble, aggregates)
    if epsilon == 0:
        return np.array([clean_margin(aggs, x, yy) for x, yy in zip(X, y)])
    P = grid_cells(power_budget(p, epsilon), precision)
    table = dp_table(dp_options(aggs, X, y, p, precision, P), X.shape[0], P)
    return table[:, P - 1]


def verify_lp_dp(ensemble: StumpEnsemble, x, y, p: float, epsilon: float, precision: float, aggregates=None) -> VerificationResult:
    """Sound but incomplete lp verification on a budget grid of step ``precision``.

    The grid is laid over the p-th power budget ``eps**p``.  A zero radius is
    answered exactly by the clean margin.
    """
    x, y = _check_sample(ensemble, x, y)
    bound = verify_lp_dp_batch(ensemble, x[None, :], np.array([y]), p, epsilon, precision, aggregates)[0]
    return VerificationResult(float(bound), epsilon == 0)


# ----------------------------------------------------------------------------
# exact lp by enumeration


def _pareto(costs: np.ndarray, values: np.ndarray, budget: float):
    """Reachable (cost, value) options, dropping any dominated by a cheaper, lower one."""
    keep = within_budget(costs, budget)
    pairs = sorted(zip(costs[keep].tolist(), values[keep].tolist()))
    front = []
    best = math.inf
    for c, v in pairs:
        if v < best:
            front.append((c, v))
            best = v
    return front


def verify_lp_exact(
    ensemble: StumpEnsemble, x, y, p: float, epsilon: float, aggregates=None, cap: int = DEFAULT_EXACT_CAP
) -> VerificationResult:
    """Exact lp verification by branch-and-bound over one interval per feature.

    Exponential in the worst case; refuses with `ResourceLimitError` when the
    product of per-feature option counts exceeds ``cap``.
    """
    p = check_norm(p)
    if not (0 < p < math.inf):
        raise ValueError("exact lp verification needs 0 < p < inf")
    x, y = _check_sample(ensemble, x, y)
    aggs = _aggregates(ensemble, aggregates)
    if epsilon == 0:
        return VerificationResult(clean_margin(aggs, x, y), True)
    budget = power_budget(p, epsilon)
    fronts = []
    size = 1
    for j, agg in aggs.items():
        costs, values = feature_options(agg, x[j], y, p)
        front = _pareto(costs, values, budget)
        size *= len(front)
        if size > cap:
            raise ResourceLimitError(f"exact enumeration needs more than {cap} combinations")
        fronts.append(front)
    # features with a single option contribute a constant
    base = sum(f[0][1] for f in fronts if len(f) == 1)
    fronts = sorted((f for f in fronts if len(f) > 1), key=len, reverse=True)
    floor_rest = np.concatenate((np.cumsum([f[-1][1] for f in fronts][::-1])[::-1], [0.0]))
    limit = budget * (1.0 + BUDGET_RTOL) + 1e-15
    best = math.inf

    def search(i: int, spent: float, value: float) -> None:
        nonlocal best
        if value + floor_rest[i] >= best:
            return
        if i == len(fronts):
            best = value
            return
        for c, v in fronts[i]:
            if spent + c > limit:
                break
            search(i + 1, spent + c, value + v)

    search(0, 0.0, 0.0)
    return VerificationResult(base + best, True)


# ----------------------------------------------------------------------------
# Knapsack reduction


def build_knapsack_instance(weights, values, capacity: float, target: float, p: float):
    """Stump verification instance whose answer decides a 0-1 Knapsack.

    Item ``i`` becomes feature ``i`` with one stump at ``eta_i = w_i**(1/p)``
    that pays ``target/T`` everywhere and loses ``v_i`` to the right of
    ``eta_i``.  With ``x = 0`` and radius ``capacity**(1/p)``, the sample is
    *not* robust (margin <= 0) iff some subset of total weight <= capacity has
    value >= target.

    Returns ``(ensemble, x, y, epsilon)``.
    """
    weights = np.asarray(weights, dtype=float)
    values = np.asarray(values, dtype=float)
    if weights.shape != values.shape or weights.ndim != 1 or len(weights) == 0:
        raise ValueError("weights and values must be equal-length non-empty vectors")
    if np.any(weights <= 0) or np.any(values <= 0):
        raise ValueError("weights and values must be positive")
    if not (0 < p < math.inf):
        raise ValueError("the reduction needs 0 < p < inf")
    n = len(weights)
    share = target / n
    stumps = [Stump(i, weights[i] ** (1.0 / p), share, share - values[i]) for i in range(n)]
    return StumpEnsemble(stumps, n), np.zeros(n), 1, float(capacity) ** (1.0 / p)
