"""k-fold evaluation harness, quality measures and the link-subset study.

Accuracy is the exact-match fraction; the k-fold summary reports the mean of
the per-fold accuracies and their population standard deviation
``sqrt(mean(acc^2) - mean(acc)^2)``.  Folds are stratified by class with a
seeded shuffle and a rotating remainder offset, so fold sizes never differ by
more than one sample while class proportions stay balanced.  One FoldPlan can
be shared across model kinds and across all link subsets for fair comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .features import N_FEATURES, fit_scaling, link_block_slice
from .learn import (
    RandomForest,
    SvmEnsemble,
    train_random_forest,
    train_svm_ensemble,
)
from .topology import STRAIGHT_LINKS, Taxonomy, labels_for_taxonomy


@dataclass(frozen=True)
class FoldPlan:
    """Partition of a dataset into k folds (disjoint, exhaustive, balanced)."""

    k: int
    assignments: np.ndarray

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def build_fold_plan(y_idx: np.ndarray, k: int, seed) -> FoldPlan:
    """Stratified fold assignment with globally balanced fold sizes."""
    y_idx = np.asarray(y_idx, dtype=int)
    n = len(y_idx)
    if k < 2 or k > n:
        raise ValueError(f"fold count {k} must be in [2, {n}]")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=int)
    offset = 0
    for klass in np.unique(y_idx):
        rows = np.flatnonzero(y_idx == klass)
        rows = rng.permutation(rows)
        assignments[rows] = (offset + np.arange(len(rows))) % k
        offset = (offset + len(rows)) % k
    return FoldPlan(k=k, assignments=assignments)


def accuracy(predictions, labels) -> float:
    """Exact-match fraction over paired predictions and reference labels."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels must have equal length")
    if not labels:
        raise ValueError("accuracy of an empty set is undefined")
    hits = sum(1 for p, t in zip(predictions, labels) if p == t)
    return hits / len(labels)


def confusion_matrix(predictions, labels, taxonomy: Taxonomy) -> np.ndarray:
    """Row-normalized confusion counts; entry (r, c) = P(predicted c | true r)."""
    y = len(taxonomy.classes)
    counts = np.zeros((y, y))
    for pred, true in zip(predictions, labels):
        counts[taxonomy.index(true), taxonomy.index(pred)] += 1
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


@dataclass(frozen=True)
class ModelSpec:
    """Training recipe shared by the harness, the subset study and the CLI."""

    kind: str  # "svm" | "rf"
    c: float = 1.0
    epochs: int = 50
    batch_size: int = 32
    n_trees: int = 100
    max_depth: int = 10
    feature_subset: int | None = None

    def __post_init__(self):
        if self.kind not in ("svm", "rf"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def describe(self) -> str:
        # no commas: the descriptor lands in CSV columns
        if self.kind == "svm":
            return f"svm(C={self.c:g} epochs={self.epochs})"
        return f"rf(trees={self.n_trees} depth={self.max_depth})"


def train_model(x_scaled: np.ndarray, y_idx: np.ndarray, classes: tuple[str, ...],
                spec: ModelSpec, seed) -> SvmEnsemble | RandomForest:
    if spec.kind == "svm":
        return train_svm_ensemble(
            x_scaled, y_idx, classes,
            c=spec.c, epochs=spec.epochs, batch_size=spec.batch_size, seed=seed,
        )
    return train_random_forest(
        x_scaled, y_idx, classes,
        n_trees=spec.n_trees, max_depth=spec.max_depth,
        feature_subset=spec.feature_subset, seed=seed,
    )


@dataclass
class EvaluationReport:
    taxonomy: str
    model: str
    fold_accuracies: np.ndarray
    acc_mean: float
    acc_std: float
    confusion: np.ndarray  # row-normalized, pooled over folds


def fold_summary(fold_accuracies: np.ndarray) -> tuple[float, float]:
    mean = float(fold_accuracies.mean())
    std = float(np.sqrt(max((fold_accuracies ** 2).mean() - mean ** 2, 0.0)))
    return mean, std


def cross_validate(
    x: np.ndarray,
    labels: list[str],
    taxonomy: Taxonomy,
    model_spec: ModelSpec,
    k: int = 10,
    seed: int = 0,
    fold_plan: FoldPlan | None = None,
    column_mask: np.ndarray | None = None,
    zero_globals: bool = False,
) -> EvaluationReport:
    """Fit scaling and model per fold on the training split, score the test split.

    ``column_mask`` restricts the feature columns (the subset study drops the
    blocks of excluded links); ``zero_globals`` blanks the speed/length pair
    before scaling when a subset cannot support them.
    """
    x = np.asarray(x, dtype=float)
    mapped = labels_for_taxonomy(list(labels), taxonomy)
    y_idx = np.array([taxonomy.index(lab) for lab in mapped], dtype=int)
    if fold_plan is None:
        fold_plan = build_fold_plan(y_idx, k, seed)
    if column_mask is None:
        column_mask = np.ones(x.shape[1], dtype=bool)
    work = x.copy()
    if zero_globals:
        work[:, 0:2] = 0.0
    work = work[:, column_mask]

    model_seeds = np.random.SeedSequence([int(seed), 0x5EED]).spawn(fold_plan.k)
    y_classes = len(taxonomy.classes)
    counts = np.zeros((y_classes, y_classes))
    fold_acc = np.empty(fold_plan.k)
    for fold in range(fold_plan.k):
        train_rows = fold_plan.train_rows(fold)
        test_rows = fold_plan.test_rows(fold)
        scaling = fit_scaling(work[train_rows])
        x_train = scaling.apply(work[train_rows])
        x_test = scaling.apply(work[test_rows])
        model = train_model(x_train, y_idx[train_rows], taxonomy.classes,
                            model_spec, model_seeds[fold])
        pred = np.atleast_1d(model.predict(x_test))
        truth = y_idx[test_rows]
        fold_acc[fold] = float((pred == truth).mean()) if len(truth) else 1.0
        for p, t in zip(pred, truth):
            counts[t, p] += 1
    sums = counts.sum(axis=1, keepdims=True)
    confusion = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    mean, std = fold_summary(fold_acc)
    return EvaluationReport(
        taxonomy=taxonomy.name,
        model=model_spec.describe(),
        fold_accuracies=fold_acc,
        acc_mean=mean,
        acc_std=std,
        confusion=confusion,
    )


# ---------------------------------------------------------------------------
# link subsets


@dataclass(frozen=True)
class SubsetSpec:
    id: str
    links: tuple[int, ...]

    def __post_init__(self):
        if not self.links:
            raise ValueError("a subset must contain at least one link")


BUILTIN_SUBSETS: tuple[SubsetSpec, ...] = (
    SubsetSpec("A", (1, 2, 3, 4, 5, 6, 7, 8, 9)),
    SubsetSpec("B", (1,)),
    SubsetSpec("C", (5,)),
    SubsetSpec("D", (9,)),
    SubsetSpec("E", (1, 5)),
    SubsetSpec("F", (1, 9)),
    SubsetSpec("G", (5, 9)),
    SubsetSpec("H", (1, 5, 9)),
    SubsetSpec("I", (2,)),
    SubsetSpec("J", (4,)),
    SubsetSpec("K", (6,)),
    SubsetSpec("L", (8,)),
    SubsetSpec("M", (1, 2, 4, 5)),
    SubsetSpec("N", (5, 6, 8, 9)),
    SubsetSpec("O", (2, 4, 6, 8)),
    SubsetSpec("P", (1, 2, 4, 6, 8, 9)),
    SubsetSpec("Q", (3,)),
    SubsetSpec("R", (7,)),
    SubsetSpec("S", (3, 7)),
    SubsetSpec("T", (1, 3, 7, 9)),
)


def subset_by_id(subset_id: str) -> SubsetSpec:
    for spec in BUILTIN_SUBSETS:
        if spec.id == subset_id:
            return spec
    raise KeyError(f"unknown subset id {subset_id!r}")


def subset_columns(spec: SubsetSpec) -> tuple[np.ndarray, bool]:
    """Column mask for a subset plus whether the global pair must be zeroed.

    Speed and length need onset differences of at least two straight links, so
    subsets with fewer keep the two global columns only as zeros.
    """
    mask = np.zeros(N_FEATURES, dtype=bool)
    mask[0:2] = True
    for link in spec.links:
        mask[link_block_slice(link)] = True
    zero_globals = len(set(spec.links) & set(STRAIGHT_LINKS)) < 2
    return mask, zero_globals


def subset_evaluation(
    x: np.ndarray,
    labels: list[str],
    taxonomy: Taxonomy,
    model_spec: ModelSpec,
    specs: list[SubsetSpec] | tuple[SubsetSpec, ...] = BUILTIN_SUBSETS,
    k: int = 10,
    seed: int = 0,
    fold_plan: FoldPlan | None = None,
) -> list[tuple[SubsetSpec, EvaluationReport]]:
    """Cross-validate once per link subset, sharing a single fold plan."""
    if not specs:
        raise ValueError("need at least one subset spec")
    mapped = labels_for_taxonomy(list(labels), taxonomy)
    y_idx = np.array([taxonomy.index(lab) for lab in mapped], dtype=int)
    if fold_plan is None:
        fold_plan = build_fold_plan(y_idx, k, seed)
    results = []
    for spec in specs:
        mask, zero_globals = subset_columns(spec)
        report = cross_validate(
            x, labels, taxonomy, model_spec, k=k, seed=seed,
            fold_plan=fold_plan, column_mask=mask, zero_globals=zero_globals,
        )
        results.append((spec, report))
    return results


# ---------------------------------------------------------------------------
# plot-ready outputs

RESULTS_HEADER = ["taxonomy", "model", "subset", "fold", "accuracy"]
SUMMARY_HEADER = ["taxonomy", "model", "subset", "acc_mean", "acc_std"]


def write_results_csv(path: str, rows: list[tuple[str, str, str, int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for taxonomy, model, subset, fold, acc in rows:
            writer.writerow([taxonomy, model, subset, fold, repr(float(acc))])


def write_summary_csv(path: str, rows: list[tuple[str, str, str, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for taxonomy, model, subset, mean, std in rows:
            writer.writerow([taxonomy, model, subset, repr(float(mean)), repr(float(std))])


def write_confusion_csv(path: str, matrix: np.ndarray, taxonomy: Taxonomy) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + list(taxonomy.classes))
        for name, row in zip(taxonomy.classes, matrix):
            writer.writerow([name] + [repr(float(v)) for v in row])
