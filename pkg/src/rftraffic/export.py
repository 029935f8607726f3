"""Standalone inference-source emission and microcontroller memory budgeting.

The emitter produces one freestanding C89 translation unit with exactly two
external symbols: ``int predict(const double features[92])`` and a version
string constant.  Model parameters are unrolled into static const tables; no
includes, no allocation, no library calls, so the unit compiles for bare-metal
targets.

Program-memory footprints are estimated with a declared cost model (bytes per
serialized weight, bytes per tree node, fixed overhead) and checked against
the built-in microcontroller profiles.  The sweet-spot search walks a forest
parameter grid and returns the most accurate configuration whose estimate
fits a given profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__
from .evaluate import FoldPlan, ModelSpec, build_fold_plan, cross_validate
from .features import fit_scaling
from .learn import RandomForest, SvmEnsemble, train_random_forest
from .topology import Taxonomy, labels_for_taxonomy


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    program_memory_bytes: int
    ram_bytes: int


#: built-in microcontroller targets (program memory / RAM, decimal kB)
PLATFORMS: tuple[PlatformProfile, ...] = (
    PlatformProfile("msp", 16_320, 512),
    PlatformProfile("atmega", 32_000, 2_000),
    PlatformProfile("esp", 4_000_000, 532_000),
)


def platform_by_name(name: str) -> PlatformProfile:
    for profile in PLATFORMS:
        if profile.name == name:
            return profile
    raise KeyError(f"unknown platform {name!r} (expected msp, atmega or esp)")


@dataclass(frozen=True)
class CostModel:
    """Declared byte costs of the emitted tables; configurable, documented."""

    bytes_per_weight: int = 4
    bytes_per_node: int = 8
    overhead_bytes: int = 512


@dataclass(frozen=True)
class MemoryEstimate:
    code_bytes: int
    fits: dict[str, bool]
    n_weights: int
    n_nodes: int


def _model_counts(model: SvmEnsemble | RandomForest) -> tuple[int, int]:
    if isinstance(model, SvmEnsemble):
        return sum(len(svm.beta) for svm in model.svms), 0
    return 0, model.n_nodes


def estimate_memory(
    model: SvmEnsemble | RandomForest,
    platforms: tuple[PlatformProfile, ...] = PLATFORMS,
    cost: CostModel = CostModel(),
) -> MemoryEstimate:
    """Deterministic cost-model estimate plus a fit verdict per platform."""
    n_weights, n_nodes = _model_counts(model)
    code_bytes = (
        cost.overhead_bytes
        + cost.bytes_per_weight * n_weights
        + cost.bytes_per_node * n_nodes
    )
    fits = {p.name: code_bytes <= p.program_memory_bytes for p in platforms}
    return MemoryEstimate(code_bytes=code_bytes, fits=fits, n_weights=n_weights, n_nodes=n_nodes)


def count_operations(model: SvmEnsemble | RandomForest) -> int:
    """Worst-case per-prediction operation count (multiply-adds or compares)."""
    if isinstance(model, SvmEnsemble):
        return sum(len(svm.beta) for svm in model.svms)
    total = 0
    for tree in model.trees:
        depth = np.zeros(tree.n_nodes, dtype=int)
        deepest = 0
        for node in range(tree.n_nodes):  # parents precede children in the layout
            if tree.feature[node] >= 0:
                depth[tree.left[node]] = depth[node] + 1
                depth[tree.right[node]] = depth[node] + 1
            else:
                deepest = max(deepest, int(depth[node]))
        total += deepest
    return total


# ---------------------------------------------------------------------------
# C89 emission


def _c_float(value: float) -> str:
    text = repr(float(value))
    return text if any(ch in text for ch in ".e") else text + ".0"


def _c_int_table(name: str, values) -> str:
    body = ", ".join(str(int(v)) for v in values)
    return f"static const int {name}[{len(values)}] = {{ {body} }};"


def _c_double_table(name: str, values) -> str:
    body = ", ".join(_c_float(v) for v in values)
    return f"static const double {name}[{len(values)}] = {{ {body} }};"


def _emit_header(kind: str) -> list[str]:
    return [
        "/* generated vehicle-class inference routine; freestanding C89 */",
        f'const char predict_version[] = "rftraffic {__version__} {kind}";',
        "",
    ]


def _emit_vote_tail(n_classes: int) -> list[str]:
    return [
        "    best = 0;",
        f"    for (k = 1; k < {n_classes}; ++k) {{",
        "        if (votes[k] > votes[best]) {",
        "            best = k;",
        "        }",
        "    }",
        "    return best;",
        "}",
        "",
    ]


def _emit_svm(model: SvmEnsemble) -> str:
    n_pairs = len(model.svms)
    dim = len(model.svms[0].beta) - 1
    y = model.n_classes
    lines = _emit_header("svm_ensemble")
    rows = []
    for svm in model.svms:
        rows.append("{ " + ", ".join(_c_float(v) for v in svm.beta) + " }")
    lines.append(f"static const double pair_weights[{n_pairs}][{dim + 1}] = {{")
    for i, row in enumerate(rows):
        lines.append("    " + row + ("," if i < n_pairs - 1 else ""))
    lines.append("};")
    lines.append(_c_int_table("pair_neg", [svm.class_pair[0] for svm in model.svms]))
    lines.append(_c_int_table("pair_pos", [svm.class_pair[1] for svm in model.svms]))
    lines.extend(
        [
            "",
            f"int predict(const double features[{dim}])",
            "{",
            f"    int votes[{y}];",
            "    double acc;",
            "    int k;",
            "    int i;",
            "    int best;",
            f"    for (k = 0; k < {y}; ++k) {{",
            "        votes[k] = 0;",
            "    }",
            f"    for (k = 0; k < {n_pairs}; ++k) {{",
            f"        acc = pair_weights[k][{dim}];",
            f"        for (i = 0; i < {dim}; ++i) {{",
            "            acc += pair_weights[k][i] * features[i];",
            "        }",
            "        if (acc >= 0.0) {",
            "            votes[pair_pos[k]] += 1;",
            "        } else {",
            "            votes[pair_neg[k]] += 1;",
            "        }",
            "    }",
        ]
    )
    lines.extend(_emit_vote_tail(y))
    return "\n".join(lines)


def _emit_forest(model: RandomForest, dim: int) -> str:
    y = model.n_classes
    roots = []
    feature, threshold, left, right, klass = [], [], [], [], []
    offset = 0
    for tree in model.trees:
        roots.append(offset)
        feature.extend(tree.feature.tolist())
        threshold.extend(tree.threshold.tolist())
        left.extend((tree.left + np.where(tree.left >= 0, offset, 0)).tolist())
        right.extend((tree.right + np.where(tree.right >= 0, offset, 0)).tolist())
        klass.extend(tree.klass.tolist())
        offset += tree.n_nodes
    lines = _emit_header("random_forest")
    lines.append(_c_int_table("tree_root", roots))
    lines.append(_c_int_table("node_feature", feature))
    lines.append(_c_double_table("node_threshold", threshold))
    lines.append(_c_int_table("node_left", left))
    lines.append(_c_int_table("node_right", right))
    lines.append(_c_int_table("node_class", klass))
    lines.extend(
        [
            "",
            f"int predict(const double features[{dim}])",
            "{",
            f"    int votes[{y}];",
            "    int t;",
            "    int n;",
            "    int k;",
            "    int best;",
            f"    for (k = 0; k < {y}; ++k) {{",
            "        votes[k] = 0;",
            "    }",
            f"    for (t = 0; t < {len(model.trees)}; ++t) {{",
            "        n = tree_root[t];",
            "        while (node_feature[n] >= 0) {",
            "            if (features[node_feature[n]] <= node_threshold[n]) {",
            "                n = node_left[n];",
            "            } else {",
            "                n = node_right[n];",
            "            }",
            "        }",
            "        votes[node_class[n]] += 1;",
            "    }",
        ]
    )
    lines.extend(_emit_vote_tail(y))
    return "\n".join(lines)


def emit_inference_source(model: SvmEnsemble | RandomForest, n_features: int = 92) -> str:
    """One self-contained C89 source file mapping a feature array to a class index."""
    if isinstance(model, SvmEnsemble):
        if not model.svms:
            raise ValueError("cannot emit source for an empty ensemble")
        return _emit_svm(model)
    if not model.trees:
        raise ValueError("cannot emit source for an empty forest")
    return _emit_forest(model, n_features)


# ---------------------------------------------------------------------------
# sweet-spot search


@dataclass
class SweetSpotResult:
    found: bool
    platform: str
    n_trees: int | None = None
    max_depth: int | None = None
    acc_mean: float | None = None
    acc_std: float | None = None
    code_bytes: int | None = None
    grid: list[dict] | None = None


def grid_search(
    x: np.ndarray,
    labels: list[str],
    taxonomy: Taxonomy,
    tree_counts: tuple[int, ...],
    depths: tuple[int, ...],
    k: int = 10,
    seed: int = 0,
    cost: CostModel = CostModel(),
) -> list[dict]:
    """Evaluate every forest parameterization once, platform-independently.

    Accuracy per cell comes from cross-validation on a shared fold plan; the
    memory estimate comes from a forest trained on the full corpus, which is
    what would be deployed.
    """
    if not tree_counts or not depths:
        raise ValueError("tree and depth grids must be nonempty")
    x = np.asarray(x, dtype=float)
    mapped = labels_for_taxonomy(list(labels), taxonomy)
    y_idx = np.array([taxonomy.index(lab) for lab in mapped], dtype=int)
    plan: FoldPlan = build_fold_plan(y_idx, k, seed)
    scaling = fit_scaling(x)
    x_scaled = scaling.apply(x)
    deploy_seed = np.random.SeedSequence([int(seed), 0xDE9107]).spawn(1)[0]

    grid = []
    for n_trees in sorted(tree_counts):
        for depth in sorted(depths):
            spec = ModelSpec(kind="rf", n_trees=n_trees, max_depth=depth)
            report = cross_validate(
                x, labels, taxonomy, spec, k=k, seed=seed, fold_plan=plan
            )
            deployed = train_random_forest(
                x_scaled, y_idx, taxonomy.classes,
                n_trees=n_trees, max_depth=depth, seed=deploy_seed,
            )
            estimate = estimate_memory(deployed, cost=cost)
            grid.append(
                {
                    "n_trees": n_trees,
                    "max_depth": depth,
                    "acc_mean": report.acc_mean,
                    "acc_std": report.acc_std,
                    "code_bytes": estimate.code_bytes,
                    "op_count": count_operations(deployed),
                }
            )
    return grid


def best_fitting(grid: list[dict], platform: PlatformProfile) -> SweetSpotResult:
    """Pick the best grid cell under a platform budget.

    Highest accuracy wins; ties break by smaller memory, then lower depth.
    """
    annotated = [dict(cell, fits=cell["code_bytes"] <= platform.program_memory_bytes)
                 for cell in grid]
    fitting = [cell for cell in annotated if cell["fits"]]
    if not fitting:
        return SweetSpotResult(found=False, platform=platform.name, grid=annotated)
    best = min(fitting, key=lambda c: (-c["acc_mean"], c["code_bytes"], c["max_depth"]))
    return SweetSpotResult(
        found=True,
        platform=platform.name,
        n_trees=best["n_trees"],
        max_depth=best["max_depth"],
        acc_mean=best["acc_mean"],
        acc_std=best["acc_std"],
        code_bytes=best["code_bytes"],
        grid=annotated,
    )


def sweet_spot_search(
    x: np.ndarray,
    labels: list[str],
    taxonomy: Taxonomy,
    platform: PlatformProfile,
    tree_counts: tuple[int, ...],
    depths: tuple[int, ...],
    k: int = 10,
    seed: int = 0,
    cost: CostModel = CostModel(),
) -> SweetSpotResult:
    """Exhaustive forest grid evaluation under a program-memory budget."""
    grid = grid_search(x, labels, taxonomy, tree_counts, depths, k=k, seed=seed, cost=cost)
    return best_fitting(grid, platform)
