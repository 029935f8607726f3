import numpy as np
import pytest

from conftest import compile_and_predict
from rftraffic.export import (
    PLATFORMS,
    CostModel,
    best_fitting,
    count_operations,
    emit_inference_source,
    estimate_memory,
    grid_search,
    platform_by_name,
    sweet_spot_search,
)
from rftraffic.features import fit_scaling
from rftraffic.learn import (
    LinearSvm,
    RandomForest,
    SvmEnsemble,
    train_random_forest,
    train_svm_ensemble,
)
from rftraffic.topology import BINARY, BODY_STYLE, SIZE_BASED


@pytest.fixture(scope="module")
def trained(body_small):
    x, labels = body_small
    scaling = fit_scaling(x)
    scaled = scaling.apply(x)
    y = np.array([BODY_STYLE.index(l) for l in labels])
    ens = train_svm_ensemble(scaled, y, BODY_STYLE.classes, epochs=10, seed=6)
    forest = train_random_forest(scaled, y, BODY_STYLE.classes, n_trees=12,
                                 max_depth=8, seed=6)
    return scaled, y, ens, forest


def test_platform_profiles():
    budgets = {p.name: (p.program_memory_bytes, p.ram_bytes) for p in PLATFORMS}
    assert budgets == {
        "msp": (16_320, 512),
        "atmega": (32_000, 2_000),
        "esp": (4_000_000, 532_000),
    }
    assert platform_by_name("atmega").ram_bytes == 2000
    with pytest.raises(KeyError):
        platform_by_name("cortex")


def test_empty_model_costs_overhead_only():
    empty = SvmEnsemble(svms=[], classes=("a", "b"))
    assert estimate_memory(empty).code_bytes == CostModel().overhead_bytes
    empty_forest = RandomForest(trees=[], classes=("a", "b"), max_depth=1, feature_subset=1)
    assert estimate_memory(empty_forest).code_bytes == CostModel().overhead_bytes


def test_memory_monotone_in_trees_and_depth(binary_small):
    x, labels = binary_small
    y = np.array([BINARY.index(l) for l in labels])
    shallow = train_random_forest(x, y, BINARY.classes, n_trees=20, max_depth=4, seed=3)
    deep = train_random_forest(x, y, BINARY.classes, n_trees=20, max_depth=12, seed=3)
    more = train_random_forest(x, y, BINARY.classes, n_trees=40, max_depth=12, seed=3)
    e_shallow = estimate_memory(shallow).code_bytes
    e_deep = estimate_memory(deep).code_bytes
    e_more = estimate_memory(more).code_bytes
    assert e_shallow <= e_deep <= e_more


def test_deep_wide_forest_straddles_budgets(body_small):
    x, labels = body_small
    y = np.array([BODY_STYLE.index(l) for l in labels])
    forest = train_random_forest(x, y, BODY_STYLE.classes, n_trees=100, max_depth=20, seed=1)
    estimate = estimate_memory(forest)
    assert not estimate.fits["msp"]
    assert estimate.fits["esp"]


def test_operation_count_scales_with_pairs(trained):
    _, _, ens, forest = trained
    assert count_operations(ens) == 21 * 93  # Y(Y-1)/2 dot products of 92+bias
    assert count_operations(forest) > 0
    assert count_operations(forest) <= forest.max_depth * len(forest.trees)


def test_emitted_svm_source_shape(trained):
    _, _, ens, _ = trained
    source = emit_inference_source(ens)
    assert "int predict(const double features[92])" in source
    assert 'const char predict_version[]' in source
    assert "pair_weights[21][93]" in source
    assert "#include" not in source
    assert "//" not in source  # C89: block comments only


def test_emitted_sources_match_library_predictions(trained):
    scaled, _, ens, forest = trained
    rng = np.random.default_rng(77)
    vectors = rng.uniform(-1.0, 1.0, size=(300, 92))
    for model in (ens, forest):
        source = emit_inference_source(model)
        c_pred = compile_and_predict(source, vectors)
        assert np.array_equal(c_pred, model.predict(vectors))


def test_stump_forest_emits_single_branch(binary_small):
    x, labels = binary_small
    y = np.array([BINARY.index(l) for l in labels])
    stump = train_random_forest(x, y, BINARY.classes, n_trees=1, max_depth=1,
                                feature_subset=92, seed=0)
    assert stump.trees[0].n_nodes == 3
    source = emit_inference_source(stump)
    assert "node_feature[3]" in source
    vectors = np.random.default_rng(1).uniform(-1, 1, size=(50, 92))
    assert np.array_equal(compile_and_predict(source, vectors), stump.predict(vectors))


def test_emit_rejects_empty_models():
    with pytest.raises(ValueError):
        emit_inference_source(SvmEnsemble(svms=[], classes=("a", "b")))
    with pytest.raises(ValueError):
        emit_inference_source(RandomForest([], ("a",), 1, 1))


# ---------------------------------------------------------------------------
# sweet spot


def test_sweet_spot_unlimited_budget_is_grid_best(binary_small):
    x, labels = binary_small
    from rftraffic.export import PlatformProfile

    unlimited = PlatformProfile("lab", 10**12, 10**9)
    result = sweet_spot_search(x, labels, BINARY, unlimited,
                               tree_counts=(2, 5), depths=(2, 4), k=3, seed=4)
    assert result.found
    best_acc = max(cell["acc_mean"] for cell in result.grid)
    assert result.acc_mean == best_acc


def test_sweet_spot_zero_budget_is_no_fit(binary_small):
    x, labels = binary_small
    from rftraffic.export import PlatformProfile

    none = PlatformProfile("dust", 0, 0)
    result = sweet_spot_search(x, labels, BINARY, none,
                               tree_counts=(2,), depths=(2,), k=3, seed=4)
    assert not result.found
    assert result.n_trees is None


def test_sweet_spot_dominance_and_tiebreak(binary_small):
    x, labels = binary_small
    grid = grid_search(x, labels, BINARY, tree_counts=(2, 5, 10), depths=(2, 6),
                       k=3, seed=4)
    platform = platform_by_name("msp")
    result = best_fitting(grid, platform)
    assert result.found
    fitting = [c for c in result.grid if c["fits"]]
    assert all(result.acc_mean >= c["acc_mean"] for c in fitting)
    ties = [c for c in fitting if c["acc_mean"] == result.acc_mean]
    assert result.code_bytes == min(c["code_bytes"] for c in ties)


def test_grid_rejects_empty(binary_small):
    x, labels = binary_small
    with pytest.raises(ValueError):
        grid_search(x, labels, BINARY, tree_counts=(), depths=(2,), k=3, seed=0)
