"""Certified robust boosting of decision stumps and trees.

Each new stump (or tree node) is chosen to minimise a *verified* upper bound
on the robust exponential loss: for every training sample the worst-case
margin over the perturbation ball is replaced by a sound lower bound, and the
exponential of its negation is summed.

For stumps the bound comes from the budget-grid DP.  With the candidate
split ``(j, b)`` processed last, the bound for weights ``(w_l, w_r)`` is::

    min(A_L + y*w_l, A_R + y*(w_l + w_r))

where ``A_L`` / ``A_R`` are the best the adversary can do with the previous
stumps while landing left / right of ``b``.  ``A_L`` and ``A_R`` do not depend
on the weights, so the loss is jointly convex in ``(w_l, w_r)`` and is
minimised by coordinate descent.

Trees are grown node by node with the same machinery, using per-sample
residual budgets and the sum of worst-case margins of the earlier trees as a
(loose but cheap) stand-in for the previous ensemble.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .geometry import AxisBox, check_norm, coordinate_costs, interval_costs, power_budget, within_budget
from .models import (
    FeatureAggregate,
    Leaf,
    Split,
    Stump,
    StumpEnsemble,
    TreeEnsemble,
    TreeNode,
    aggregate_features,
)
from .stump_verify import cost_cells, dp_table, grid_cells
from .tree_verify import verify_single_tree

log = logging.getLogger(__name__)

# exponent cap inside exp(); margins this extreme never occur with bounded weights
_EXP_CAP = 700.0


class TrainingError(RuntimeError):
    """Training cannot proceed (no candidate splits, no trainable samples)."""


@dataclass(frozen=True)
class TrainConfig:
    p: float = 1.0
    epsilon: float = 0.0
    rounds: int = 20
    precision: float = 0.01
    schedule_length: int = 1
    shrinkage: float = 1.0
    max_depth: int = 1
    candidate_cap: int = 256
    coord_descent_iters: int = 10
    bisection_tolerance: float = 1e-6
    weight_bound: float = 10.0

    def __post_init__(self):
        check_norm(self.p)
        if self.p == 0:
            raise ValueError("training supports lp with p > 0 (including inf)")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if not (0 < self.shrinkage <= 1):
            raise ValueError("shrinkage must lie in (0, 1]")
        for name in ("precision", "weight_bound", "bisection_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("schedule_length", "max_depth", "candidate_cap", "coord_descent_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class RoundLog:
    round: int
    epsilon: float
    robust_loss: float
    seconds: float
    feature: int = -1
    threshold: float = math.nan


# ----------------------------------------------------------------------------
# small pieces


def epsilon_schedule(target_epsilon: float, t: int, schedule_length: int) -> float:
    """Linear ramp: ``target * min(1, t / S)`` with ``t`` counted from 1."""
    if schedule_length < 1:
        raise ValueError("schedule_length must be >= 1")
    return target_epsilon * min(1.0, t / schedule_length)


def candidate_splits(values, cap: int = 256) -> np.ndarray:
    """Midpoints between consecutive distinct values, thinned to ``cap`` by quantile."""
    u = np.unique(np.asarray(values, dtype=float))
    if u.size < 2:
        return np.empty(0)
    mids = (u[:-1] + u[1:]) / 2.0
    if mids.size > cap:
        idx = ((np.arange(cap) + 0.5) * mids.size / cap).astype(np.int64)
        mids = mids[idx]
    return mids


@dataclass(frozen=True)
class PathBudget:
    epsilon: float
    crossings: tuple[int, ...] = field(default_factory=tuple)


def sample_budget(x, path, p: float, epsilon: float) -> PathBudget:
    """Residual budget of ``x`` at a node reached via ``path``.

    ``path`` lists ``(feature, threshold, goes_right)`` for every split on the
    way down.  Each step where ``x`` sits on the other side costs
    ``|x_j - b|**p``; what is left is returned, clamped at zero.
    """
    if not (0 < p < math.inf):
        raise ValueError("per-sample budgets need 0 < p < inf")
    spent = 0.0
    crossings = []
    seen = set()
    for t, (j, b, goes_right) in enumerate(path):
        if j in seen:
            raise ValueError(f"feature {j} appears twice on the path")
        seen.add(j)
        if (x[j] >= b) != bool(goes_right):
            crossings.append(t)
            spent += abs(x[j] - b) ** p
    rest = epsilon**p - spent
    return PathBudget(max(rest, 0.0) ** (1.0 / p), tuple(crossings))


# ----------------------------------------------------------------------------
# leaf weights


def _robust_losses(AL, AR, y, wl, wr) -> np.ndarray:
    m = np.minimum(AL + y * wl[:, None], AR + y * (wl + wr)[:, None])
    return np.exp(np.minimum(-m, _EXP_CAP)).sum(axis=1)


def _bisect_shift(fixed, moving, y, lo, hi, steps):
    """Minimise ``sum exp(-min(fixed, moving + y w))`` over ``w`` in ``[lo, hi]`` per row.

    The objective is convex in ``w``; bisect on the sign of its derivative.
    """

    def slope(w):
        shifted = moving + y * w[:, None]
        e = np.where(shifted < fixed, np.exp(np.minimum(-shifted, _EXP_CAP)), 0.0)
        return -(e * y).sum(axis=1)

    s_lo = slope(lo)
    s_hi = slope(hi)
    a, b = lo.copy(), hi.copy()
    for _ in range(steps):
        mid = 0.5 * (a + b)
        up = slope(mid) > 0
        b = np.where(up, mid, b)
        a = np.where(up, a, mid)
    return np.where(s_lo >= 0, lo, np.where(s_hi <= 0, hi, 0.5 * (a + b)))


def solve_leaf_weights(AL, AR, y, config: TrainConfig):
    """Coordinate descent on ``sum exp(-min(A_L + y w_l, A_R + y (w_l + w_r)))``.

    ``AL`` / ``AR`` are ``(n_candidates, n_samples)`` (or 1-d for a single
    split); ``+inf`` marks a side the sample cannot reach.  Each sweep takes
    three exact 1-D steps: ``w_l`` in closed form (both leaves shift), ``w_r``
    by bisection (right leaf only), then the left leaf alone by bisection.
    The last step undoes the coupling of the first two, which otherwise
    zigzag slowly.  Updates are kept only if they lower the loss, so the
    result never does worse than ``(0, 0)``.  Returns ``(w_l, w_r, loss)``.
    """
    single = np.ndim(AL) == 1
    AL = np.atleast_2d(np.asarray(AL, dtype=float))
    AR = np.atleast_2d(np.asarray(AR, dtype=float))
    y = np.asarray(y, dtype=float)
    C = AL.shape[0]
    W = config.weight_bound
    wl = np.zeros(C)
    wr = np.zeros(C)
    loss = _robust_losses(AL, AR, y, wl, wr)
    pos = y > 0
    steps = max(1, min(60, math.ceil(math.log2(2 * W / config.bisection_tolerance))))
    full_lo, full_hi = np.full(C, -W), np.full(C, W)

    def accept(cand_l, cand_r):
        nonlocal wl, wr, loss
        new = _robust_losses(AL, AR, y, cand_l, cand_r)
        better = new < loss
        wl = np.where(better, cand_l, wl)
        wr = np.where(better, cand_r, wr)
        loss = np.where(better, new, loss)

    for _ in range(config.coord_descent_iters):
        before = loss
        # w_l: both branches shift by y*w_l, so the optimum balances the classes
        z = -np.minimum(AL, AR + y * wr[:, None])
        lp = logsumexp(np.where(pos, z, -np.inf), axis=1)
        ln = logsumexp(np.where(pos, -np.inf, z), axis=1)
        with np.errstate(invalid="ignore"):
            cand = np.clip(0.5 * (lp - ln), -W, W)
        accept(np.where(np.isnan(cand), wl, cand), wr)

        # w_r with w_l fixed
        L = AL + y * wl[:, None]
        accept(wl, _bisect_shift(L, AR + y * wl[:, None], y, full_lo, full_hi, steps))

        # left leaf alone: w_l moves, w_l + w_r stays, |w_r| <= W kept
        v = wl + wr
        lo = np.maximum(-W, v - W)
        hi = np.minimum(W, v + W)
        u = _bisect_shift(AR + y * v[:, None], AL, y, lo, hi, steps)
        accept(u, v - u)

        if np.all(before - loss < 1e-9):
            break
    if single:
        return float(wl[0]), float(wr[0]), float(loss[0])
    return wl, wr, loss


# ----------------------------------------------------------------------------
# stump training


def _reach_cells(costs, contains, p, epsilon, precision, P):
    """Grid cells to reach each option; ``P + 1`` marks it unreachable."""
    if epsilon == 0:
        return np.where(contains, 1, P + 1)
    if math.isinf(p):
        return np.where(within_budget(costs, epsilon), 1, P + 1)
    cells = cost_cells(costs, precision)
    return np.where(cells > P, P + 1, cells).astype(np.int64)


def _grid_size(p, epsilon, precision) -> int:
    if epsilon == 0 or math.isinf(p):
        return 1
    return grid_cells(power_budget(p, epsilon), precision)


def _options(aggs, X, y, p, epsilon, precision, P, skip=None):
    """(cells, signed values) per active feature, honouring the zero-radius rule."""
    out = []
    for j, agg in aggs.items():
        if j == skip:
            continue
        xj = X[:, j : j + 1]
        lo, hi = agg.lower_bounds[None, :], agg.upper_bounds[None, :]
        costs = interval_costs(xj, lo, hi, p)
        cells = _reach_cells(costs, (lo <= xj) & (xj < hi), p, epsilon, precision, P)
        out.append((cells, y[:, None] * agg.interval_values[None, :]))
    return out


def _lookup(table, cells, P):
    """table[n, P - cells[n]] with +inf where unreachable; ``cells`` is (..., N)."""
    n = table.shape[0]
    cells = np.asarray(cells)
    idx = np.clip(P - cells, 0, P - 1)
    vals = table[np.arange(n), idx] if cells.ndim == 1 else table[np.arange(n)[None, :], idx]
    return np.where(cells <= P, vals, np.inf)


def split_side_bounds(
    rest_table: np.ndarray,
    agg: Optional[FeatureAggregate],
    xj: np.ndarray,
    y: np.ndarray,
    thresholds: np.ndarray,
    p: float,
    epsilon: float,
    precision: float,
):
    """``A_L``, ``A_R`` of shape (n_thresholds, n_samples) for splits on one feature.

    ``rest_table`` is the DP table over every other feature; ``agg`` is the
    previous ensemble's step function on this feature (``None`` if unused).
    Intervals of ``agg`` entirely on one side of a threshold contribute the
    same term for every threshold, so only the interval the threshold cuts
    needs per-threshold work.
    """
    P = rest_table.shape[1]
    if agg is None:
        lows, highs, vals = np.array([-np.inf]), np.array([np.inf]), np.array([0.0])
        thr = np.empty(0)
    else:
        lows, highs, vals = agg.lower_bounds, agg.upper_bounds, agg.interval_values
        thr = agg.thresholds
    x = xj[:, None]
    costs = interval_costs(x, lows[None, :], highs[None, :], p)
    cells = _reach_cells(costs, (lows[None, :] <= x) & (x < highs[None, :]), p, epsilon, precision, P)
    # q[n, t]: best bound landing in interval t
    q = np.stack([_lookup(rest_table, cells[:, t], P) for t in range(len(vals))], axis=1) + y[:, None] * vals[None, :]
    m = len(vals)
    prefix = np.full((len(y), m + 1), np.inf)
    suffix = np.full((len(y), m + 1), np.inf)
    for t in range(m):
        prefix[:, t + 1] = np.minimum(prefix[:, t], q[:, t])
        suffix[:, m - 1 - t] = np.minimum(suffix[:, m - t], q[:, m - 1 - t])

    thresholds = np.asarray(thresholds, dtype=float)
    k = np.searchsorted(thr, thresholds, side="right")  # interval cut by each threshold
    lo_k, hi_k, v_k = lows[k], highs[k], vals[k]
    b = thresholds[:, None]
    xs = xj[None, :]
    # left part [lo_k, b) and right part [b, hi_k) of the cut interval
    left_cost = interval_costs(xs, lo_k[:, None], b, p)
    right_cost = interval_costs(xs, b, hi_k[:, None], p)
    left_cells = _reach_cells(left_cost, (lo_k[:, None] <= xs) & (xs < b), p, epsilon, precision, P)
    right_cells = _reach_cells(right_cost, (b <= xs) & (xs < hi_k[:, None]), p, epsilon, precision, P)
    yv = y[None, :] * v_k[:, None]
    left_part = np.where(lo_k[:, None] < b, _lookup(rest_table, left_cells, P) + yv, np.inf)
    right_part = _lookup(rest_table, right_cells, P) + yv
    # whole intervals strictly left of the cut are t < k, strictly right are t > k
    AL = np.minimum(prefix[:, k].T, left_part)
    AR = np.minimum(suffix[:, np.minimum(k + 1, m)].T, right_part)
    return AL, AR


def _rest_table(aggs, X, y, p, epsilon, precision, skip):
    P = _grid_size(p, epsilon, precision)
    return dp_table(_options(aggs, X, y, p, epsilon, precision, P, skip=skip), X.shape[0], P)


def robust_margin_lower_bound(ensemble: StumpEnsemble, X, y, feature: int, threshold: float, w_l: float, w_r: float, p: float, epsilon: float, precision: float) -> np.ndarray:
    """Per-sample DP bound on ``min y (F(x+d) + w_l + w_r [x_j+d_j >= b])``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    aggs = aggregate_features(ensemble)
    table = _rest_table(aggs, X, y, p, epsilon, precision, skip=feature)
    AL, AR = split_side_bounds(table, aggs.get(feature), X[:, feature], y, np.array([threshold]), p, epsilon, precision)
    return np.minimum(AL[0] + y * w_l, AR[0] + y * (w_l + w_r))


def robust_loss_bound(ensemble: StumpEnsemble, X, y, p: float, epsilon: float, precision: float, last_feature: Optional[int] = None) -> float:
    """``sum exp(-D)`` with the DP run over the ensemble (``last_feature`` processed last)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    aggs = aggregate_features(ensemble)
    P = _grid_size(p, epsilon, precision)
    order = dict(aggs)
    if last_feature is not None and last_feature in order:
        order[last_feature] = order.pop(last_feature)
    table = dp_table(_options(order, X, y, p, epsilon, precision, P), X.shape[0], P)
    return float(np.exp(np.minimum(-table[:, P - 1], _EXP_CAP)).sum())


@dataclass
class SplitChoice:
    feature: int
    threshold: float
    w_l: float
    w_r: float
    loss: float
    bounds: tuple = ()


def best_stump_split(X, y, aggs, candidates, config: TrainConfig, epsilon: float, feature_mask=None) -> SplitChoice:
    """Scan every (feature, threshold) and return the lowest robust-loss split.

    Ties go to the smallest feature, then the smallest threshold.
    """
    best: Optional[SplitChoice] = None
    shared_table = None
    for j, thresholds in enumerate(candidates):
        if len(thresholds) == 0 or (feature_mask is not None and not feature_mask[j]):
            continue
        if j in aggs:
            table = _rest_table(aggs, X, y, config.p, epsilon, config.precision, skip=j)
        else:
            if shared_table is None:
                shared_table = _rest_table(aggs, X, y, config.p, epsilon, config.precision, skip=None)
            table = shared_table
        AL, AR = split_side_bounds(table, aggs.get(j), X[:, j], y, thresholds, config.p, epsilon, config.precision)
        wl, wr, loss = solve_leaf_weights(AL, AR, y, config)
        i = int(np.argmin(loss))
        if best is None or loss[i] < best.loss:
            best = SplitChoice(j, float(thresholds[i]), float(wl[i]), float(wr[i]), float(loss[i]), (AL[i], AR[i]))
    if best is None:
        raise TrainingError("no candidate split on any feature")
    return best


def _as_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if X.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return X, y


def dataset_candidates(X, cap: int) -> list[np.ndarray]:
    return [candidate_splits(X[:, j], cap) for j in range(X.shape[1])]


def fit_stump_round(X, y, ensemble: StumpEnsemble, config: TrainConfig, round_index: int, candidates=None):
    """Fit stump number ``round_index`` (from 1); returns ``(stump, log)``."""
    X, y = _as_xy(X, y)
    start = time.perf_counter()
    eps = epsilon_schedule(config.epsilon, round_index, config.schedule_length)
    if candidates is None:
        candidates = dataset_candidates(X, config.candidate_cap)
    aggs = aggregate_features(ensemble)
    choice = best_stump_split(X, y, aggs, candidates, config, eps)
    lr = config.shrinkage
    wl, wr = lr * choice.w_l, lr * choice.w_r
    AL, AR = choice.bounds
    loss = float(np.exp(np.minimum(-np.minimum(AL + y * wl, AR + y * (wl + wr)), _EXP_CAP)).sum())
    stump = Stump(choice.feature, choice.threshold, wl, wl + wr)
    entry = RoundLog(round_index, eps, loss, time.perf_counter() - start, choice.feature, choice.threshold)
    return stump, entry


def fit_stump_ensemble(X, y, config: TrainConfig, callback: Optional[Callable[[RoundLog], None]] = None):
    """Boost ``config.rounds`` robust stumps; returns ``(ensemble, logs)``."""
    X, y = _as_xy(X, y)
    ensemble = StumpEnsemble([], X.shape[1])
    candidates = dataset_candidates(X, config.candidate_cap)
    logs = []
    for t in range(1, config.rounds + 1):
        stump, entry = fit_stump_round(X, y, ensemble, config, t, candidates)
        ensemble = ensemble.append(stump)
        logs.append(entry)
        log.info("round %d eps=%.4g robust_loss=%.6g (%.2fs)", t, entry.epsilon, entry.robust_loss, entry.seconds)
        if callback is not None:
            callback(entry)
    return ensemble, logs


# ----------------------------------------------------------------------------
# tree training


def _box_costs(X, box: AxisBox, p) -> np.ndarray:
    gaps = np.maximum(box.lo[None, :] - X, 0.0) + np.maximum(X - box.hi[None, :], 0.0)
    costs = coordinate_costs(gaps, p)
    return costs.max(axis=1) if math.isinf(p) else costs.sum(axis=1)


def _one_sided_weight(prior, y, W) -> float:
    lp = logsumexp(-prior[y > 0]) if np.any(y > 0) else -np.inf
    ln = logsumexp(-prior[y < 0]) if np.any(y < 0) else -np.inf
    if lp == -np.inf and ln == -np.inf:
        return 0.0
    return float(np.clip(0.5 * (lp - ln), -W, W))


def fit_tree(X, y, prior_margins, config: TrainConfig, candidates=None, trace=None) -> TreeNode:
    """Grow one robust tree on top of per-sample constant ``prior_margins``.

    At a node with box ``B`` at depth ``k`` (root is depth 0) the radius is
    ``epsilon_schedule(eps, k + 1, S)``; a sample takes part iff its distance
    to ``B`` is within that radius, and only the leftover budget may be spent
    crossing the node's threshold.  Features already split on along the path
    are not reused.  ``trace``, if a list, receives one dict per split node.
    """
    X, y = _as_xy(X, y)
    prior = np.asarray(prior_margins, dtype=float)
    if candidates is None:
        candidates = dataset_candidates(X, config.candidate_cap)
    p, lr, W = config.p, config.shrinkage, config.weight_bound
    d = X.shape[1]

    def grow(box: AxisBox, depth: int, used: frozenset, value: float, root: bool) -> TreeNode:
        eps = epsilon_schedule(config.epsilon, depth + 1, config.schedule_length)
        budget = power_budget(p, eps)
        if eps == 0:
            member = np.array([box.contains(x) for x in X]) if len(X) else np.zeros(0, bool)
            spent = np.zeros(len(X))
        else:
            spent = _box_costs(X, box, p)
            member = within_budget(spent, budget)
        idx = np.flatnonzero(member)
        if idx.size == 0:
            if root:
                raise TrainingError("no sample can reach the root")
            return Leaf(lr * value)
        ys, pr = y[idx], prior[idx]
        if depth >= config.max_depth:
            return Leaf(lr * value)
        if np.all(ys == ys[0]):
            return Leaf(lr * _one_sided_weight(pr, ys, W))
        if math.isinf(p) or eps == 0:
            residual = np.full(idx.size, budget)
        else:
            residual = np.maximum(budget - spent[idx], 0.0)

        best = None
        for j in range(d):
            if j in used:
                continue
            thr = candidates[j]
            thr = thr[(thr > box.lo[j]) & (thr < box.hi[j])]
            if thr.size == 0:
                continue
            xj = X[idx, j][None, :]
            b = thr[:, None]
            cross = coordinate_costs(np.abs(xj - b), p)
            reach = (residual[None, :] > 0) & within_budget(cross, residual[None, :])
            left = xj < b
            AL = np.where(left | reach, pr[None, :], np.inf)
            AR = np.where(~left | reach, pr[None, :], np.inf)
            wl, wr, loss = solve_leaf_weights(AL, AR, ys, config)
            i = int(np.argmin(loss))
            if best is None or loss[i] < best[4]:
                best = (j, float(thr[i]), float(wl[i]), float(wr[i]), float(loss[i]))
        if best is None:
            return Leaf(lr * value)
        j, b, wl, wr, loss = best
        if trace is not None:
            trace.append({"depth": depth, "feature": j, "threshold": b, "epsilon": eps, "n_samples": int(idx.size), "loss": loss})
        lbox, rbox = box.split(j, b)
        return Split(
            j,
            b,
            grow(lbox, depth + 1, used | {j}, wl, False),
            grow(rbox, depth + 1, used | {j}, wl + wr, False),
        )

    return grow(AxisBox.full(d), 0, frozenset(), 0.0, True)


def tree_worst_margins(tree: TreeNode, X, y, p: float, epsilon: float) -> np.ndarray:
    return np.array([verify_single_tree(tree, x, yy, p, epsilon, X.shape[1]).margin_lower_bound for x, yy in zip(X, y)])


def fit_tree_ensemble(X, y, config: TrainConfig, callback: Optional[Callable[[RoundLog], None]] = None):
    """Boost ``config.rounds`` robust trees; returns ``(ensemble, logs, prior_margins)``.

    After each tree the per-sample constant grows by that tree's exact
    worst-case margin at the full radius.
    """
    X, y = _as_xy(X, y)
    candidates = dataset_candidates(X, config.candidate_cap)
    prior = np.zeros(X.shape[0])
    ensemble = TreeEnsemble([], X.shape[1])
    logs = []
    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        tree = fit_tree(X, y, prior, config, candidates)
        prior = prior + tree_worst_margins(tree, X, y, config.p, config.epsilon)
        ensemble = ensemble.append(tree)
        entry = RoundLog(t, config.epsilon, float(np.exp(np.minimum(-prior, _EXP_CAP)).sum()), time.perf_counter() - start)
        logs.append(entry)
        log.info("tree %d robust_loss=%.6g (%.2fs)", t, entry.robust_loss, entry.seconds)
        if callback is not None:
            callback(entry)
    return ensemble, logs, prior
