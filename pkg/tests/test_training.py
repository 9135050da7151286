import math

import numpy as np
import pytest

from oracles import standard_stump_booster, standard_tree
from treecert.models import Leaf, Split, Stump, StumpEnsemble, aggregate_features
from treecert.stump_verify import verify_lp_exact
from treecert.training import (
    TrainConfig,
    TrainingError,
    candidate_splits,
    epsilon_schedule,
    fit_stump_ensemble,
    fit_stump_round,
    fit_tree,
    _rest_table,
    fit_tree_ensemble,
    robust_loss_bound,
    robust_margin_lower_bound,
    sample_budget,
    solve_leaf_weights,
    split_side_bounds,
    tree_worst_margins,
)
from treecert.tree_verify import MultiLevelConfig, verify_ensemble_multilevel, verify_single_tree


def split_loss(AL, AR, y, wl, wr):
    return float(np.exp(-np.minimum(AL + y * wl, AR + y * (wl + wr))).sum())


def noisy_data(rng, n=300, d=3, noise=0.3):
    X = rng.uniform(0, 1, (n, d))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] > 0.75, 1.0, -1.0)
    flip = rng.random(n) < noise
    return X, np.where(flip, -y, y)


def interior_candidates(X, k=9):
    return [np.quantile(X[:, j], np.linspace(0.3, 0.7, k)) for j in range(X.shape[1])]


# ---------------------------------------------------------------- small pieces


def test_epsilon_schedule():
    assert epsilon_schedule(1.0, 1, 5) == pytest.approx(0.2)
    assert epsilon_schedule(1.0, 7, 5) == 1.0
    assert epsilon_schedule(0.3, 1, 1) == 0.3
    with pytest.raises(ValueError):
        epsilon_schedule(1.0, 1, 0)


def test_candidate_splits():
    assert candidate_splits([0, 1]).tolist() == [0.5]
    assert candidate_splits([1, 1, 1]).size == 0
    vals = np.random.default_rng(0).permutation(1000) / 7.0
    c = candidate_splits(vals, 256)
    assert c.size == 256 and c.min() > vals.min() and c.max() < vals.max()
    assert np.all(np.diff(c) > 0)


def test_sample_budget():
    assert sample_budget(np.array([0.0]), [], 1, 1.0).epsilon == 1.0
    b = sample_budget(np.array([0.2]), [(0, 0.5, True)], 1, 1.0)
    assert b.epsilon == pytest.approx(0.7) and b.crossings == (0,)
    b = sample_budget(np.array([0.0, 1.0]), [(0, 0.6, True), (1, 0.2, False)], 2, 1.0)
    assert b.epsilon == 0.0 and b.crossings == (0, 1)
    # a sample already on the region's side spends nothing
    assert sample_budget(np.array([0.9]), [(0, 0.5, True)], 2, 1.0).epsilon == 1.0
    with pytest.raises(ValueError):
        sample_budget(np.array([0.0]), [(0, 0.5, True), (0, 0.7, True)], 1, 1.0)


def test_budget_shrinks_down_a_path():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.uniform(0, 1, 4)
        path = [(j, float(rng.uniform(0, 1)), bool(rng.integers(2))) for j in rng.permutation(4)]
        budgets = [sample_budget(x, path[:k], 1.5, 0.8) for k in range(5)]
        for a, b in zip(budgets, budgets[1:]):
            crossed = len(b.crossings) > len(a.crossings)
            assert b.epsilon < a.epsilon or not crossed or a.epsilon == 0
            assert b.epsilon <= a.epsilon


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(shrinkage=1.5)
    with pytest.raises(ValueError):
        TrainConfig(p=0)
    with pytest.raises(ValueError):
        TrainConfig(precision=0)
    with pytest.raises(ValueError):
        TrainConfig(epsilon=-1)


# ---------------------------------------------------------------- leaf weights


def test_balanced_left_gives_zero():
    AL = np.array([0.0, 0.0])
    AR = np.full(2, np.inf)
    wl, wr, _ = solve_leaf_weights(AL, AR, np.array([1.0, -1.0]), TrainConfig())
    assert wl == pytest.approx(0.0, abs=1e-9)


def test_closed_form_half_log_ratio():
    # gamma_+ = e, gamma_- = 1
    AL = np.array([-1.0, 0.0])
    AR = np.full(2, np.inf)
    wl, _, loss = solve_leaf_weights(AL, AR, np.array([1.0, -1.0]), TrainConfig())
    assert wl == pytest.approx(0.5, abs=1e-9)
    assert loss == pytest.approx(2 * math.sqrt(math.e))


def test_solution_beats_grid_search():
    rng = np.random.default_rng(2)
    W = 2.0
    cfg = TrainConfig(weight_bound=W)
    grid = np.linspace(-W, W, 41)
    for _ in range(20):
        n = 12
        y = rng.choice([-1.0, 1.0], n)
        AL = rng.normal(0, 1, n)
        AR = rng.normal(0, 1, n)
        AL[rng.random(n) < 0.3] = np.inf
        AR[np.isinf(AL)] = rng.normal(0, 1, int(np.isinf(AL).sum()))
        wl, wr, loss = solve_leaf_weights(AL, AR, y, cfg)
        assert abs(wl) <= W and abs(wr) <= W
        assert loss == pytest.approx(split_loss(AL, AR, y, wl, wr))
        best = min(split_loss(AL, AR, y, a, b) for a in grid for b in grid)
        assert loss <= best + 1e-6


def test_split_loss_convex_along_segments():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = 10
        y = rng.choice([-1.0, 1.0], n)
        AL, AR = rng.normal(0, 1, n), rng.normal(0, 1, n)
        for _ in range(10):
            u, v = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
            mid = (u + v) / 2
            lhs = split_loss(AL, AR, y, *mid)
            assert lhs <= 0.5 * (split_loss(AL, AR, y, *u) + split_loss(AL, AR, y, *v)) + 1e-9


# ---------------------------------------------------------------- split bounds


def test_first_round_bounds():
    X = np.array([[0.2], [0.9]])
    y = np.array([1.0, -1.0])
    empty = StumpEnsemble([], 1)
    m = robust_margin_lower_bound(empty, X, y, 0, 0.5, 0.3, 0.4, 1, 0.0, 0.01)
    assert m.tolist() == pytest.approx([0.3, -0.7])
    m = robust_margin_lower_bound(empty, X, y, 0, 0.5, 0.3, 0.4, 1, 1.0, 0.01)
    assert m.tolist() == pytest.approx([min(0.3, 0.7), min(-0.3, -0.7)])


def test_split_bound_below_exact_margin():
    rng = np.random.default_rng(4)
    for _ in range(25):
        d = 3
        prior = StumpEnsemble(
            [Stump(int(rng.integers(d)), float(rng.uniform(0, 1)), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))) for _ in range(3)], d
        )
        X = rng.uniform(0, 1, (8, d))
        y = rng.choice([-1.0, 1.0], 8)
        j = int(rng.integers(d))
        # thresholds sometimes coincide with an existing one
        b = float(rng.choice([s.threshold for s in prior.stumps] + [0.5]))
        wl, wr = rng.uniform(-1, 1, 2)
        bound = robust_margin_lower_bound(prior, X, y, j, b, wl, wr, 1, 0.3, 0.01)
        full = prior.append(Stump(j, b, wl, wl + wr))
        for x, t, m in zip(X, y, bound):
            assert m <= verify_lp_exact(full, x, int(t), 1, 0.3).margin_lower_bound + 1e-12


def test_split_bounds_cover_candidates_at_once():
    rng = np.random.default_rng(5)
    prior = StumpEnsemble([Stump(0, 0.4, 0.2, -0.1), Stump(1, 0.5, -0.3, 0.3)], 2)
    X = rng.uniform(0, 1, (10, 2))
    y = rng.choice([-1.0, 1.0], 10)
    thresholds = np.array([0.1, 0.4, 0.7])
    aggs = aggregate_features(prior)
    table = _rest_table(aggs, X, y, 2, 0.3, 0.01, skip=0)
    AL, AR = split_side_bounds(table, aggs[0], X[:, 0], y, thresholds, 2, 0.3, 0.01)
    for i, b in enumerate(thresholds):
        m = robust_margin_lower_bound(prior, X, y, 0, b, 0.25, -0.5, 2, 0.3, 0.01)
        assert np.allclose(np.minimum(AL[i] + y * 0.25, AR[i] + y * (0.25 - 0.5)), m)


# ---------------------------------------------------------------- stump training


def test_separable_data_solved_in_one_round():
    X = np.array([[0.0], [0.1], [0.2], [0.8], [0.9], [1.0]])
    y = np.array([-1, -1, -1, 1, 1, 1.0])
    ens, logs = fit_stump_ensemble(X, y, TrainConfig(p=1, epsilon=0.0, rounds=1))
    assert np.all(np.sign(ens.predict(X)) == y)
    assert 0.2 < ens.stumps[0].threshold < 0.8


def test_zero_radius_matches_standard_booster():
    rng = np.random.default_rng(6)
    X, y = noisy_data(rng)
    cand = interior_candidates(X)
    ref = standard_stump_booster(X, y, cand, rounds=6, lr=0.5)
    cfg = TrainConfig(p=1, epsilon=0.0, rounds=6, shrinkage=0.5)
    ens = StumpEnsemble([], X.shape[1])
    for t, (j, b, u, v) in enumerate(ref, start=1):
        stump, _ = fit_stump_round(X, y, ens, cfg, t, cand)
        assert (stump.feature, stump.threshold) == (j, b)
        assert stump.left_value == pytest.approx(u, abs=1e-5)
        assert stump.right_value == pytest.approx(v, abs=1e-5)
        ens = ens.append(stump)


def test_loss_never_exceeds_zero_stump():
    rng = np.random.default_rng(7)
    X, y = noisy_data(rng, n=80)
    for p, eps in ((1, 0.3), (2, 0.3), (math.inf, 0.1), (1, 0.0)):
        cfg = TrainConfig(p=p, epsilon=eps, rounds=5, precision=0.01, shrinkage=0.5)
        ens, logs = fit_stump_ensemble(X, y, cfg)
        for t, entry in enumerate(logs):
            before = StumpEnsemble(ens.stumps[:t], ens.dimension)
            after = StumpEnsemble(ens.stumps[: t + 1], ens.dimension)
            zero = robust_loss_bound(before, X, y, p, eps, 0.01, last_feature=entry.feature)
            assert entry.robust_loss <= zero * (1 + 1e-9)
            assert entry.robust_loss == pytest.approx(robust_loss_bound(after, X, y, p, eps, 0.01, last_feature=entry.feature))
            # order-free cases: the bound descends round over round
            if (math.isinf(p) or eps == 0) and t:
                assert entry.robust_loss <= logs[t - 1].robust_loss * (1 + 1e-9)


def test_trained_bound_is_valid_against_exact_verifier():
    rng = np.random.default_rng(8)
    X, y = noisy_data(rng, n=40)
    cfg = TrainConfig(p=1, epsilon=0.2, rounds=4, precision=0.01)
    ens, logs = fit_stump_ensemble(X, y, cfg)
    last = ens.stumps[-1]
    prev = StumpEnsemble(ens.stumps[:-1], ens.dimension)
    # recover (w_l, w_r) of the final stump; shrinkage is 1
    bound = robust_margin_lower_bound(prev, X, y, last.feature, last.threshold, last.left_value, last.right_value - last.left_value, 1, 0.2, 0.01)
    aggs = aggregate_features(ens)
    for x, t, m in zip(X, y, bound):
        assert m <= verify_lp_exact(ens, x, int(t), 1, 0.2, aggs).margin_lower_bound + 1e-12


def test_training_is_deterministic():
    rng = np.random.default_rng(9)
    X, y = noisy_data(rng, n=60)
    cfg = TrainConfig(p=2, epsilon=0.2, rounds=3, schedule_length=2)
    a, _ = fit_stump_ensemble(X, y, cfg)
    b, _ = fit_stump_ensemble(X, y, cfg)
    assert a == b


def test_training_errors():
    with pytest.raises(TrainingError):
        fit_stump_ensemble(np.ones((5, 2)), np.array([1, -1, 1, -1, 1.0]), TrainConfig(rounds=1))
    with pytest.raises(TrainingError):
        fit_stump_ensemble(np.zeros((0, 2)), np.zeros(0), TrainConfig(rounds=1))


def test_schedule_is_logged():
    rng = np.random.default_rng(10)
    X, y = noisy_data(rng, n=40)
    _, logs = fit_stump_ensemble(X, y, TrainConfig(p=1, epsilon=0.3, rounds=4, schedule_length=3))
    assert [e.epsilon for e in logs] == pytest.approx([0.1, 0.2, 0.3, 0.3])


# ---------------------------------------------------------------- trees


def _as_tuple(node):
    if isinstance(node, Leaf):
        return ("leaf", node.value)
    return (node.feature, node.threshold, _as_tuple(node.left), _as_tuple(node.right))


def _assert_same_tree(a, b):
    if a[0] == "leaf":
        assert b[0] == "leaf" and a[1] == pytest.approx(b[1], abs=1e-5)
        return
    assert a[:2] == b[:2]
    _assert_same_tree(a[2], b[2])
    _assert_same_tree(a[3], b[3])


@pytest.mark.parametrize("p,eps", [(1, 0.0), (math.inf, 0.05)])
def test_depth_one_tree_is_a_stump(p, eps):
    rng = np.random.default_rng(11)
    X, y = noisy_data(rng, n=100)
    cand = interior_candidates(X)
    cfg = TrainConfig(p=p, epsilon=eps, rounds=1, max_depth=1, shrinkage=0.7)
    tree = fit_tree(X, y, np.zeros(len(y)), cfg, cand)
    stump, _ = fit_stump_round(X, y, StumpEnsemble([], 3), cfg, 1, cand)
    assert isinstance(tree, Split)
    assert (tree.feature, tree.threshold) == (stump.feature, stump.threshold)
    assert tree.left.value == pytest.approx(stump.left_value)
    assert tree.right.value == pytest.approx(stump.right_value)


def test_zero_radius_tree_matches_standard_tree():
    rng = np.random.default_rng(12)
    X, y = noisy_data(rng, n=400)
    cand = interior_candidates(X)
    prior = 0.3 * rng.normal(size=len(y))
    cfg = TrainConfig(p=2, epsilon=0.0, max_depth=2, shrinkage=0.5)
    ours = _as_tuple(fit_tree(X, y, prior, cfg, cand))
    ref = standard_tree(X, y, prior, cand, depth=2, lr=0.5, W=cfg.weight_bound)
    _assert_same_tree(ours, ref)


def test_tree_respects_depth_and_feature_reuse():
    rng = np.random.default_rng(13)
    X, y = noisy_data(rng, n=120, d=4)
    trace = []
    tree = fit_tree(X, y, np.zeros(len(y)), TrainConfig(p=1, epsilon=0.2, max_depth=3, schedule_length=3), trace=trace)

    def paths(node, used):
        if isinstance(node, Leaf):
            return 0
        assert node.feature not in used
        return 1 + max(paths(node.left, used | {node.feature}), paths(node.right, used | {node.feature}))

    assert paths(tree, frozenset()) <= 3
    # the radius ramps with depth
    eps_by_depth = {t["depth"]: t["epsilon"] for t in trace}
    assert eps_by_depth[0] == pytest.approx(0.2 / 3)


def test_tree_ensemble_prior_is_sum_of_tree_minima():
    rng = np.random.default_rng(14)
    X, y = noisy_data(rng, n=60)
    cfg = TrainConfig(p=1, epsilon=0.15, rounds=3, max_depth=2)
    ens, logs, prior = fit_tree_ensemble(X, y, cfg)
    assert len(ens) == 3 and len(logs) == 3
    again = sum(tree_worst_margins(t, X, y, 1, 0.15) for t in ens.trees)
    assert np.allclose(prior, again)
    for i in range(20):
        direct = sum(verify_single_tree(t, X[i], y[i], 1, 0.15).margin_lower_bound for t in ens.trees)
        assert prior[i] == pytest.approx(direct)
        exact = verify_ensemble_multilevel(ens, X[i], y[i], 1, 0.15, MultiLevelConfig(3, 1)).margin_lower_bound
        assert prior[i] <= exact + 1e-12


def test_single_class_node_gets_one_sided_leaf():
    X = np.array([[0.1], [0.2], [0.3]])
    y = np.ones(3)
    tree = fit_tree(X, y, np.zeros(3), TrainConfig(p=1, epsilon=0.0, max_depth=2, weight_bound=3.0, shrinkage=0.5))
    assert tree == Leaf(1.5)
