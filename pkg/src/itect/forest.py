"""False-positive-penalizing random forest with zero-FP calibration.

CART-style axis-aligned trees over entropy-profile features. Benign
samples carry extra weight in the Gini criterion so splits that would
misclassify benign-ware as malware are expensive. After training, the
vote cutoff is pushed just above the highest benign score seen across
cross-validation folds, so no validation benign sample is flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass
class TreeNode:
    # Split node: dim/threshold/left/right set. Leaf: malware_fraction/count.
    dim: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    malware_fraction: float | None = None
    count: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.dim is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"malware_fraction": self.malware_fraction, "count": self.count}
        return {
            "dim": self.dim,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "dim" in d:
            return cls(
                dim=d["dim"],
                threshold=d["threshold"],
                left=cls.from_dict(d["left"]),
                right=cls.from_dict(d["right"]),
            )
        return cls(malware_fraction=d["malware_fraction"], count=d["count"])


@dataclass(frozen=True)
class ForestConfig:
    trees: int = 100
    class_weight_fp: float = 5.0
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if self.class_weight_fp < 1:
            raise ValueError("class_weight_fp must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class TrainedForest:
    trees: list[TreeNode]
    config: ForestConfig
    feature_cols: list[int]
    cutoff: float | None = None
    calibration: dict | None = field(default=None, repr=False)

    @property
    def vote_step(self) -> float:
        return 1.0 / (2.0 * len(self.trees))

    def save(self, path: str | Path) -> None:
        doc = {
            "config": asdict(self.config),
            "cutoff": self.cutoff,
            "feature_cols": self.feature_cols,
            "calibration": self.calibration,
            "trees": [t.to_dict() for t in self.trees],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedForest":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            trees=[TreeNode.from_dict(t) for t in doc["trees"]],
            config=ForestConfig(**doc["config"]),
            feature_cols=list(doc["feature_cols"]),
            cutoff=doc["cutoff"],
            calibration=doc.get("calibration"),
        )


def _weighted_gini_cost(
    wl0: np.ndarray, wl1: np.ndarray, wr0: np.ndarray, wr1: np.ndarray
) -> np.ndarray:
    wl = wl0 + wl1
    wr = wr0 + wr1
    total = wl + wr
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - (wl0 / wl) ** 2 - (wl1 / wl) ** 2
        gr = 1.0 - (wr0 / wr) ** 2 - (wr1 / wr) ** 2
    return (wl * gl + wr * gr) / total


def _best_split(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    feat_ids: np.ndarray,
    min_leaf: int,
) -> tuple[int, float] | None:
    best_cost = np.inf
    best = None
    for f in feat_ids:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        ys = y[order]
        ws = w[order]
        cum1 = np.cumsum(ws * ys)
        cum_all = np.cumsum(ws)
        total1 = cum1[-1]
        total_all = cum_all[-1]
        # Candidate boundaries after position i (left = first i+1 rows).
        i = np.arange(len(xs) - 1)
        valid = xs[i] < xs[i + 1]
        if min_leaf > 1:
            valid &= (i + 1 >= min_leaf) & (len(xs) - i - 1 >= min_leaf)
        if not np.any(valid):
            continue
        wl1 = cum1[:-1]
        wl = cum_all[:-1]
        wl0 = wl - wl1
        wr1 = total1 - wl1
        wr0 = (total_all - wl) - wr1
        cost = _weighted_gini_cost(wl0, wl1, wr0, wr1)
        cost = np.where(valid, cost, np.inf)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = cost[j]
            best = (int(f), float((xs[j] + xs[j + 1]) / 2.0))
    return best


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    rng: np.random.Generator,
    n_subset: int,
    max_depth: int | None,
    min_leaf: int,
    depth: int = 0,
) -> TreeNode:
    n = len(y)
    frac = float(y.mean())
    if (
        n < 2 * min_leaf
        or frac in (0.0, 1.0)
        or (max_depth is not None and depth >= max_depth)
    ):
        return TreeNode(malware_fraction=frac, count=n)
    feat_ids = rng.choice(x.shape[1], size=n_subset, replace=False)
    split = _best_split(x, y, w, feat_ids, min_leaf)
    if split is None:
        return TreeNode(malware_fraction=frac, count=n)
    f, t = split
    mask = x[:, f] <= t
    if not mask.any() or mask.all():
        return TreeNode(malware_fraction=frac, count=n)
    return TreeNode(
        dim=f,
        threshold=t,
        left=_grow(x[mask], y[mask], w[mask], rng, n_subset, max_depth, min_leaf, depth + 1),
        right=_grow(x[~mask], y[~mask], w[~mask], rng, n_subset, max_depth, min_leaf, depth + 1),
    )


def train_forest(
    rows: np.ndarray,
    labels: Sequence[int],
    config: ForestConfig,
    feature_cols: Sequence[int] | None = None,
) -> TrainedForest:
    """Train an uncalibrated forest; labels are 1 = malware, 0 = benign.

    Each tree sees a bootstrap sample and sqrt(D) random features per
    split; benign samples weigh ``class_weight_fp`` in the impurity.
    """
    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(y) != x.shape[0]:
        raise ValueError("rows/labels shape mismatch")
    if len(np.unique(y)) < 2:
        raise DataError("training data must contain both classes")
    w = np.where(y == 0, config.class_weight_fp, 1.0)
    n, d = x.shape
    n_subset = max(1, int(math.isqrt(d)))
    trees = []
    for t in range(config.trees):
        rng = np.random.default_rng([config.seed, t])
        idx = rng.integers(0, n, n)
        trees.append(
            _grow(
                x[idx], y[idx], w[idx], rng, n_subset, config.max_depth, config.min_leaf
            )
        )
    return TrainedForest(
        trees=trees,
        config=config,
        feature_cols=list(feature_cols) if feature_cols is not None else list(range(d)),
    )


def _tree_vote(node: TreeNode, row: np.ndarray) -> bool:
    while not node.is_leaf:
        node = node.left if row[node.dim] <= node.threshold else node.right
    return node.malware_fraction > 0.5


def score(forest: TrainedForest, row: np.ndarray) -> float:
    """Fraction of trees voting malware for one feature row."""
    row = np.asarray(row, dtype=np.float64)
    votes = sum(_tree_vote(t, row) for t in forest.trees)
    return votes / len(forest.trees)


def score_rows(forest: TrainedForest, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return np.array([score(forest, r) for r in rows])


def predict(forest: TrainedForest, row: np.ndarray) -> bool:
    if forest.cutoff is None:
        raise DataError("forest is not calibrated; no cutoff set")
    return score(forest, row) >= forest.cutoff


def _stratified_folds(
    y: np.ndarray, folds: int, seed: int
) -> np.ndarray:
    assign = np.empty(len(y), dtype=np.int64)
    rng = np.random.default_rng([seed, 0xF01D])
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assign[idx] = np.arange(len(idx)) % folds
    return assign


def calibrate_zero_fp(
    rows: np.ndarray,
    labels: Sequence[int],
    config: ForestConfig,
    folds: int = 10,
    feature_cols: Sequence[int] | None = None,
) -> TrainedForest:
    """Train and attach the most conservative zero-FP vote cutoff.

    For each stratified fold the forest is retrained on the others and
    the held-out fold scored; the cutoff is the maximum benign
    validation score plus half a vote step, so every benign validation
    sample lands strictly below it. The returned forest is retrained
    on the full data with that cutoff attached.
    """
    if folds < 2:
        raise DataError("folds must be >= 2")
    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    assign = _stratified_folds(y, folds, config.seed)
    max_benign = 0.0
    fold_stats = []
    for f in range(folds):
        held = assign == f
        if not np.any(held & (y == 0)):
            raise DataError(f"fold {f} has no benign rows")
        fold_config = ForestConfig(
            trees=config.trees,
            class_weight_fp=config.class_weight_fp,
            max_depth=config.max_depth,
            min_leaf=config.min_leaf,
            seed=config.seed + f + 1,
        )
        sub = train_forest(x[~held], y[~held], fold_config)
        val_scores = score_rows(sub, x[held])
        benign_scores = val_scores[y[held] == 0]
        fold_stats.append(
            {"fold": f, "benign_max": float(benign_scores.max())}
        )
        max_benign = max(max_benign, float(benign_scores.max()))
    final = train_forest(x, y, config, feature_cols=feature_cols)
    final.cutoff = max_benign + final.vote_step
    final.calibration = {
        "folds": folds,
        "seed": config.seed,
        "benign_validation_max": max_benign,
        "per_fold": fold_stats,
    }
    return final


DEFAULT_FP_BUDGETS = (0.0, 0.002, 0.01, 0.05, 0.1, 0.15)


def roc_points(
    scored: Sequence[tuple[float, int]],
    fp_budgets: Sequence[float] = DEFAULT_FP_BUDGETS,
) -> list[tuple[float, float]]:
    """(FP rate, TP rate) at each FP-rate budget.

    For each budget, the threshold giving the highest TP rate whose FP
    rate stays within the budget (the ROC staircase read left to right).
    """
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([l for _, l in scored], dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("need both classes to compute ROC points")
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    fprs = np.empty(len(thresholds))
    tprs = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        pred = scores >= t
        fprs[i] = (pred & (labels == 0)).sum() / n_neg
        tprs[i] = (pred & (labels == 1)).sum() / n_pos
    points = []
    for budget in fp_budgets:
        ok = fprs <= budget
        best = int(np.flatnonzero(ok)[np.argmax(tprs[ok])])
        points.append((float(fprs[best]), float(tprs[best])))
    return points
