"""From-scratch classifiers: l2-regularized linear SVM and a CART random forest.

The SVM minimizes ``0.5 * ||b||^2 + C * sum(max(0, 1 - y * <b, x>))`` by
stochastic subgradient descent with the step schedule ``eta_t = 1 / (lambda t)``
where ``lambda = 1 / (C * |D|)``.  A constant-one feature augments the inputs
so the bias is regularized like every other weight and the objective keeps its
plain form over the augmented space.  Multi-class problems are composed
one-vs-one: one SVM per class pair plus a mapping from (pair, sign) to class,
combined by majority vote.

The random forest grows bootstrapped CART trees with Gini-impurity splits over
a fresh random feature subset per node; prediction is the majority vote over
trees.  Ties break toward the lowest class index everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .features import ScalingTransform
from .topology import Taxonomy


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Derive n child seeds; accepts ints and already-spawned SeedSequences."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(max(n, 1))


def augment(x: np.ndarray) -> np.ndarray:
    """Append the constant-one bias feature."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([x, [1.0]])
    return np.hstack([x, np.ones((x.shape[0], 1))])


@dataclass
class LinearSvm:
    """Pairwise linear decision rule; ``beta`` includes the trailing bias weight."""

    beta: np.ndarray
    c: float
    class_pair: tuple[int, int]  # (class index for sign -1, class index for sign +1)
    objective_per_epoch: list[float] = field(default_factory=list)

    def decision(self, x_aug: np.ndarray) -> np.ndarray:
        return np.asarray(x_aug, dtype=float) @ self.beta


def svm_objective(beta: np.ndarray, x_aug: np.ndarray, y: np.ndarray, c: float) -> float:
    """Regularized hinge objective evaluated on the full data set."""
    margins = y * (x_aug @ beta)
    hinge = np.maximum(0.0, 1.0 - margins)
    return float(0.5 * beta @ beta + c * hinge.sum())


def train_svm_binary(
    x: np.ndarray,
    y: np.ndarray,
    c: float = 1.0,
    epochs: int = 50,
    batch_size: int = 32,
    seed=0,
    class_pair: tuple[int, int] = (0, 1),
) -> LinearSvm:
    """Fit one binary SVM on +/-1 labels; deterministic for a given seed.

    Mini-batches of a seeded shuffle feed the subgradient steps.  At every
    epoch end the objective is recorded at the average of all iterates so far;
    that averaged vector is also the returned weight vector after the final
    epoch.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("x must be 2-d with one label per row")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training data must contain both classes")
    n = len(x)
    x_aug = augment(x)
    lam = 1.0 / (c * n)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)
    beta = np.zeros(x_aug.shape[1])
    running_sum = np.zeros_like(beta)
    steps = 0
    svm = LinearSvm(beta=beta, c=c, class_pair=class_pair)
    t = 0  # samples processed; keeps the schedule on the per-sample scale
    for _ in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            chunk = perm[lo: lo + batch_size]
            t += len(chunk)
            eta = 1.0 / (lam * t)
            xb = x_aug[chunk]
            yb = y[chunk]
            margins = yb * (xb @ beta)
            viol = margins < 1.0
            grad = lam * beta
            if np.any(viol):
                grad = grad - (yb[viol, None] * xb[viol]).sum(axis=0) / len(chunk)
            beta = beta - eta * grad
            norm = np.linalg.norm(beta)
            if norm > radius:
                beta = beta * (radius / norm)
            running_sum += beta
            steps += 1
        averaged = running_sum / steps
        svm.objective_per_epoch.append(svm_objective(averaged, x_aug, y, c))
        svm.beta = averaged
    return svm


@dataclass
class SvmEnsemble:
    """One-vs-one composition of pairwise SVMs over an ordered class list."""

    svms: list[LinearSvm]
    classes: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def gamma(self, k: int, sign: int) -> int:
        """Class index voted by SVM ``k`` for a decision sign of +/-1."""
        neg, pos = self.svms[k].class_pair
        return pos if sign > 0 else neg

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Majority vote over all pairwise decisions; ties break low."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x_aug = augment(x if not single else x[None, :])
        votes = np.zeros((x_aug.shape[0], self.n_classes), dtype=int)
        rows = np.arange(x_aug.shape[0])
        for k, svm in enumerate(self.svms):
            scores = x_aug @ svm.beta
            signs = np.where(scores >= 0.0, 1, -1)
            neg, pos = svm.class_pair
            votes[rows, np.where(signs > 0, pos, neg)] += 1
        pred = votes.argmax(axis=1)
        return pred[0] if single else pred


def train_svm_ensemble(
    x: np.ndarray,
    y_idx: np.ndarray,
    classes: tuple[str, ...],
    c: float = 1.0,
    epochs: int = 50,
    batch_size: int = 32,
    seed=0,
) -> SvmEnsemble:
    """Train all pairwise SVMs; pairs missing a class in the data are skipped."""
    x = np.asarray(x, dtype=float)
    y_idx = np.asarray(y_idx, dtype=int)
    present = set(np.unique(y_idx).tolist())
    pairs = [p for p in combinations(range(len(classes)), 2) if p[0] in present and p[1] in present]
    children = spawn_seeds(seed, len(pairs))
    svms = []
    for k, (a, b) in enumerate(pairs):
        mask = (y_idx == a) | (y_idx == b)
        labels = np.where(y_idx[mask] == b, 1.0, -1.0)
        svms.append(
            train_svm_binary(
                x[mask], labels, c=c, epochs=epochs, batch_size=batch_size,
                seed=children[k], class_pair=(a, b),
            )
        )
    return SvmEnsemble(svms=svms, classes=tuple(classes))


def predict_ensemble(model: SvmEnsemble, x: np.ndarray) -> np.ndarray:
    return model.predict(x)


# ---------------------------------------------------------------------------
# random forest


@dataclass
class CartTree:
    """Array-encoded binary decision tree (feature < 0 marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    klass: np.ndarray
    bootstrap_indices: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        node = np.zeros(x.shape[0], dtype=int)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.klass[node]
            idx = node[active]
            go_left = x[active, feat[active]] <= self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])


def _gini_counts(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    frac = counts / totals[:, None]
    return 1.0 - (frac * frac).sum(axis=1)


def _best_split(x, y, idx, n_classes, feature_ids):
    """Lowest weighted child Gini over candidate midpoints of the features."""
    n = len(idx)
    ys = y[idx]
    best = None  # (cost, feature, threshold)
    for f in feature_ids:
        col = x[idx, f]
        order = np.argsort(col, kind="stable")
        cs = col[order]
        change = np.flatnonzero(cs[1:] > cs[:-1])
        if len(change) == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys[order]] = 1.0
        prefix = np.cumsum(onehot, axis=0)
        left_counts = prefix[change]
        total = prefix[-1]
        right_counts = total - left_counts
        n_left = (change + 1).astype(float)
        n_right = n - n_left
        cost = (
            n_left * _gini_counts(left_counts, n_left)
            + n_right * _gini_counts(right_counts, n_right)
        ) / n
        j = int(np.argmin(cost))
        if best is None or cost[j] < best[0]:
            best = (float(cost[j]), int(f), float(0.5 * (cs[change[j]] + cs[change[j] + 1])))
    return best


def _grow_tree(x, y, n_classes, n_feats, rng, bootstrap):
    """Grow to purity; every node records its majority class for later pruning."""
    feature, threshold, left, right, klass = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        klass.append(-1)
        return len(feature) - 1

    d = x.shape[1]
    stack = [(bootstrap, new_node())]
    while stack:
        idx, slot = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        klass[slot] = int(counts.argmax())
        parent_gini = 1.0 - float(((counts / len(idx)) ** 2).sum())
        split = None
        if parent_gini > 0.0:
            feats = rng.choice(d, size=min(n_feats, d), replace=False)
            split = _best_split(x, y, idx, n_classes, feats)
            if split is not None and split[0] >= parent_gini - 1e-12:
                split = None
        if split is None:
            continue
        _, f, thr = split
        go_left = x[idx, f] <= thr
        feature[slot] = f
        threshold[slot] = thr
        left_slot = new_node()
        right_slot = new_node()
        left[slot] = left_slot
        right[slot] = right_slot
        stack.append((idx[~go_left], right_slot))
        stack.append((idx[go_left], left_slot))
    return CartTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        klass=np.array(klass, dtype=int),
        bootstrap_indices=bootstrap,
    )


def _prune_tree(tree: CartTree, max_depth: int) -> CartTree:
    """Truncate at ``max_depth``; cut nodes become majority-class leaves.

    Pruning a fully grown tree makes node counts monotone in the depth cap:
    the tree pruned at depth d is a subtree of the one pruned at depth d + 1.
    """
    feature, threshold, left, right, klass = [], [], [], [], []
    stack = [(0, 0, -1, False)]  # (source node, depth, parent slot, is right child)
    while stack:
        src, depth, parent, is_right = stack.pop()
        slot = len(feature)
        is_leaf = tree.feature[src] < 0 or depth >= max_depth
        feature.append(-1 if is_leaf else int(tree.feature[src]))
        threshold.append(0.0 if is_leaf else float(tree.threshold[src]))
        left.append(-1)
        right.append(-1)
        klass.append(int(tree.klass[src]))
        if parent >= 0:
            (right if is_right else left)[parent] = slot
        if not is_leaf:
            stack.append((int(tree.right[src]), depth + 1, slot, True))
            stack.append((int(tree.left[src]), depth + 1, slot, False))
    return CartTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        klass=np.array(klass, dtype=int),
        bootstrap_indices=tree.bootstrap_indices,
    )


@dataclass
class RandomForest:
    trees: list[CartTree]
    classes: tuple[str, ...]
    max_depth: int
    feature_subset: int

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_nodes(self) -> int:
        return sum(t.n_nodes for t in self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        votes = np.zeros((x.shape[0], self.n_classes), dtype=int)
        rows = np.arange(x.shape[0])
        for tree in self.trees:
            votes[rows, tree.predict(x)] += 1
        pred = votes.argmax(axis=1)
        return pred[0] if single else pred


def train_random_forest(
    x: np.ndarray,
    y_idx: np.ndarray,
    classes: tuple[str, ...],
    n_trees: int = 100,
    max_depth: int = 10,
    feature_subset: int | None = None,
    seed=0,
) -> RandomForest:
    """Bootstrapped CART trees, deterministic per seed, node for node."""
    x = np.asarray(x, dtype=float)
    y_idx = np.asarray(y_idx, dtype=int)
    if len(x) == 0:
        raise ValueError("training data must be nonempty")
    if feature_subset is None:
        feature_subset = int(np.ceil(np.sqrt(x.shape[1])))
    n = len(x)
    children = spawn_seeds(seed, n_trees)
    trees = []
    for k in range(n_trees):
        rng = np.random.default_rng(children[k])
        bootstrap = rng.integers(0, n, size=n)
        full = _grow_tree(x, y_idx, len(classes), feature_subset, rng, bootstrap)
        trees.append(_prune_tree(full, max_depth))
    return RandomForest(trees=trees, classes=tuple(classes), max_depth=max_depth,
                        feature_subset=feature_subset)


def predict_forest(model: RandomForest, x: np.ndarray) -> np.ndarray:
    return model.predict(x)


# ---------------------------------------------------------------------------
# model files

FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    """A trained model together with its taxonomy and training-split scaling."""

    taxonomy: Taxonomy
    scaling: ScalingTransform
    model: SvmEnsemble | RandomForest

    @property
    def kind(self) -> str:
        return "svm_ensemble" if isinstance(self.model, SvmEnsemble) else "random_forest"

    def predict_labels(self, x_raw: np.ndarray) -> list[str]:
        scaled = self.scaling.apply(x_raw)
        idx = np.atleast_1d(self.model.predict(scaled))
        return [self.taxonomy.classes[i] for i in idx]


def save_model(path: str, bundle: ModelBundle) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "taxonomy": {"name": bundle.taxonomy.name, "classes": list(bundle.taxonomy.classes)},
        "scaling": {"lo": bundle.scaling.lo.tolist(), "hi": bundle.scaling.hi.tolist()},
        "model_kind": bundle.kind,
    }
    if isinstance(bundle.model, SvmEnsemble):
        doc["model"] = {
            "classes": list(bundle.model.classes),
            "pairs": [
                {
                    "neg": svm.class_pair[0],
                    "pos": svm.class_pair[1],
                    "c": svm.c,
                    "weights": svm.beta.tolist(),
                }
                for svm in bundle.model.svms
            ],
        }
    else:
        forest = bundle.model
        doc["model"] = {
            "classes": list(forest.classes),
            "max_depth": forest.max_depth,
            "feature_subset": forest.feature_subset,
            "trees": [
                {
                    "feature": tree.feature.tolist(),
                    "threshold": tree.threshold.tolist(),
                    "left": tree.left.tolist(),
                    "right": tree.right.tolist(),
                    "class": tree.klass.tolist(),
                }
                for tree in forest.trees
            ],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path: str) -> ModelBundle:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    taxonomy = Taxonomy(doc["taxonomy"]["name"], tuple(doc["taxonomy"]["classes"]))
    scaling = ScalingTransform(
        lo=np.array(doc["scaling"]["lo"]), hi=np.array(doc["scaling"]["hi"])
    )
    spec = doc["model"]
    if doc["model_kind"] == "svm_ensemble":
        svms = [
            LinearSvm(
                beta=np.array(p["weights"]),
                c=p["c"],
                class_pair=(p["neg"], p["pos"]),
            )
            for p in spec["pairs"]
        ]
        model: SvmEnsemble | RandomForest = SvmEnsemble(svms=svms, classes=tuple(spec["classes"]))
    elif doc["model_kind"] == "random_forest":
        trees = [
            CartTree(
                feature=np.array(t["feature"], dtype=int),
                threshold=np.array(t["threshold"], dtype=float),
                left=np.array(t["left"], dtype=int),
                right=np.array(t["right"], dtype=int),
                klass=np.array(t["class"], dtype=int),
            )
            for t in spec["trees"]
        ]
        model = RandomForest(
            trees=trees,
            classes=tuple(spec["classes"]),
            max_depth=spec["max_depth"],
            feature_subset=spec["feature_subset"],
        )
    else:
        raise ValueError(f"unknown model kind {doc['model_kind']!r}")
    return ModelBundle(taxonomy=taxonomy, scaling=scaling, model=model)
