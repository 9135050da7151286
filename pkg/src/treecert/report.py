"""Run a verifier over a dataset and write / merge per-sample reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import check_norm, norm_name
from .models import Model, StumpEnsemble, TreeEnsemble, aggregate_features, stumps_as_trees
from .stump_verify import verify_l0, verify_linf, verify_lp_dp, verify_lp_exact
from .tree_verify import (
    MultiLevelConfig,
    compute_leaf_boxes,
    verify_ensemble_multilevel,
    verify_ensemble_sum_of_trees,
    verify_single_tree,
)

log = logging.getLogger(__name__)

STUMP_METHODS = ("l0-exact", "linf-exact", "lp-dp", "lp-exact")
TREE_METHODS = ("tree-single", "tree-multilevel")
METHODS = STUMP_METHODS + TREE_METHODS
CSV_COLUMNS = ("sample_index", "label", "clean_pred", "margin_lb", "robust", "time_ms")


class MethodMismatchError(ValueError):
    """The requested verification method cannot handle this model / norm."""


@dataclass
class VerifyOptions:
    method: str
    p: float
    epsilon: float
    precision: float = 0.01
    clique_size: int = 3
    levels: int = 2
    exact_cap: int = 10**7


@dataclass
class SampleRow:
    sample_index: int
    label: int
    clean_pred: float
    margin_lb: float
    robust: int
    time_ms: float


@dataclass
class VerificationReport:
    rows: list
    method: str
    norm: str
    epsilon: float
    model: str = ""
    dataset: str = ""
    complete: bool = True

    @property
    def standard_err(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([r.label * r.clean_pred <= 0 for r in self.rows]))

    @property
    def verified_err(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([not r.robust for r in self.rows]))

    @property
    def mean_time_ms(self) -> float:
        return float(np.mean([r.time_ms for r in self.rows])) if self.rows else 0.0

    def summary(self) -> dict:
        return {
            "method": self.method,
            "norm": self.norm,
            "epsilon": self.epsilon,
            "standard_err": self.standard_err,
            "verified_err": self.verified_err,
            "mean_time_ms": self.mean_time_ms,
            "n_samples": len(self.rows),
            "complete": self.complete,
            "model": self.model,
            "dataset": self.dataset,
        }


def check_method(model: Model, options: VerifyOptions) -> None:
    m, p = options.method, check_norm(options.p)
    if m not in METHODS:
        raise MethodMismatchError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if m in STUMP_METHODS and not isinstance(model, StumpEnsemble):
        raise MethodMismatchError(f"method {m} needs a stump model")
    if m == "l0-exact" and p != 0:
        raise MethodMismatchError("l0-exact verifies the l0 norm only")
    if m == "linf-exact" and not math.isinf(p):
        raise MethodMismatchError("linf-exact verifies the l_inf norm only")
    if m in ("lp-dp", "lp-exact") and not (0 < p < math.inf):
        raise MethodMismatchError(f"{m} needs 0 < p < inf")
    if p == 0 and int(options.epsilon) != options.epsilon:
        raise MethodMismatchError("an l0 radius must be an integer")


class _Verifier:
    """Per-model precomputation shared by every sample."""

    def __init__(self, model: Model, options: VerifyOptions):
        check_method(model, options)
        self.model = model
        self.options = options
        if isinstance(model, StumpEnsemble):
            self.aggs = aggregate_features(model)
        trees = model if isinstance(model, TreeEnsemble) else stumps_as_trees(model)
        self.trees = trees
        if options.method == "tree-multilevel":
            self.leaf_records = [compute_leaf_boxes(t, trees.dimension, i) for i, t in enumerate(trees.trees)]

    def clean(self, x) -> float:
        return float(self.model.predict(x[None, :])[0])

    def __call__(self, x, y):
        o = self.options
        m = o.method
        if m == "l0-exact":
            return verify_l0(self.model, x, y, int(o.epsilon), self.aggs)
        if m == "linf-exact":
            return verify_linf(self.model, x, y, o.epsilon, self.aggs)
        if m == "lp-dp":
            return verify_lp_dp(self.model, x, y, o.p, o.epsilon, o.precision, self.aggs)
        if m == "lp-exact":
            return verify_lp_exact(self.model, x, y, o.p, o.epsilon, self.aggs, cap=o.exact_cap)
        if m == "tree-single":
            if len(self.trees.trees) == 1:
                return verify_single_tree(self.trees.trees[0], x, y, o.p, o.epsilon, self.trees.dimension)
            return verify_ensemble_sum_of_trees(self.trees, x, y, o.p, o.epsilon)
        config = MultiLevelConfig(o.clique_size, o.levels)
        return verify_ensemble_multilevel(self.trees, x, y, o.p, o.epsilon, config, self.leaf_records)


def _run_chunk(model, options, X, y, offset):
    verifier = _Verifier(model, options)
    rows, complete = [], True
    for i, (x, yy) in enumerate(zip(X, y)):
        start = time.perf_counter()
        res = verifier(x, int(yy))
        elapsed = (time.perf_counter() - start) * 1e3
        complete &= res.complete
        rows.append(SampleRow(offset + i, int(yy), verifier.clean(x), res.margin_lower_bound, int(res.robust), elapsed))
    return rows, complete


def verify_dataset(model: Model, X, y, options: VerifyOptions, jobs: int = 1, model_name: str = "", dataset_name: str = "") -> VerificationReport:
    check_method(model, options)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).reshape(-1)
    if jobs <= 1 or len(y) < 2:
        rows, complete = _run_chunk(model, options, X, y, 0)
    else:
        bounds = np.linspace(0, len(y), min(jobs, len(y)) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_chunk, model, options, X[a:b], y[a:b], a) for a, b in zip(bounds[:-1], bounds[1:])]
            parts = [f.result() for f in futures]
        rows = [r for part, _ in parts for r in part]
        complete = all(c for _, c in parts)
    return VerificationReport(rows, options.method, norm_name(options.p), float(options.epsilon), model_name, dataset_name, complete)


# ----------------------------------------------------------------------------
# files


def write_report(report: VerificationReport, csv_path) -> Path:
    """Write per-sample rows to ``csv_path`` and the summary beside it as JSON."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([r.sample_index, r.label, repr(r.clean_pred), repr(r.margin_lb), r.robust, f"{r.time_ms:.4f}"])
    summary_path = csv_path.with_suffix(".summary.json")
    summary_path.write_text(json.dumps(report.summary(), indent=1) + "\n")
    return summary_path


def read_summaries(directory) -> list[dict]:
    out = []
    for path in sorted(Path(directory).glob("*.summary.json")):
        doc = json.loads(path.read_text())
        doc["source"] = path.name
        out.append(doc)
    return out


REPORT_COLUMNS = ("model", "dataset", "method", "norm", "epsilon", "standard_err", "verified_err", "mean_time_ms", "n_samples", "complete", "monotone_in_eps")


def merge_summaries(summaries: list[dict]) -> list[dict]:
    """One row per (model, dataset, method, norm, epsilon), sorted by those keys.

    ``monotone_in_eps`` is false on a row whose verified error is lower than
    at a smaller epsilon for the same (model, dataset, method, norm).
    """
    key = lambda s: (s.get("model", ""), s.get("dataset", ""), s["method"], s["norm"], float(s["epsilon"]))
    rows = []
    prev_key, prev_err = None, -math.inf
    for s in sorted(summaries, key=key):
        group = key(s)[:4]
        if group != prev_key:
            prev_key, prev_err = group, -math.inf
        ok = s["verified_err"] >= prev_err - 1e-12
        if not ok:
            log.warning("verified error drops with epsilon for %s at eps=%s", group, s["epsilon"])
        prev_err = max(prev_err, s["verified_err"])
        row = {c: s.get(c, "") for c in REPORT_COLUMNS}
        row["monotone_in_eps"] = int(ok)
        rows.append(row)
    return rows


def write_merged(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
