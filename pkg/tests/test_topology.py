import pytest

from rftraffic.topology import (
    BINARY,
    BODY_STYLE,
    BODY_STYLE_CLASSES,
    SIZE_BASED,
    ConfigError,
    STRAIGHT_LINKS,
    SystemParams,
    Topology,
    coarsen_label,
    get_taxonomy,
    labels_for_taxonomy,
    link_distance,
    load_system_config,
)


def test_default_params_match_deployed_values():
    p = SystemParams()
    assert p.sample_period_ms == 8.0
    assert p.filter_size_n == 10
    assert p.guard_w == 10
    assert p.start_offset_h == 5
    assert p.theta_start == 0.92
    assert p.theta_end == 0.975
    assert p.theta_guard == 0.95
    assert Topology().longitudinal_spacing_m == 5.0


def test_threshold_ordering_enforced():
    with pytest.raises(ConfigError):
        SystemParams(theta_start=0.98)  # start above end
    with pytest.raises(ConfigError):
        SystemParams(theta_guard=0.99)  # guard above end
    with pytest.raises(ConfigError):
        SystemParams(filter_size_n=0)


def test_link_distance_examples():
    topo = Topology()
    assert link_distance(topo, 1, 5) == 5.0
    assert link_distance(topo, 1, 9) == 10.0
    assert link_distance(topo, 5, 5) == 0.0


def test_link_distance_symmetric_and_positive():
    topo = Topology(longitudinal_spacing_m=7.5)
    for i in STRAIGHT_LINKS:
        for j in STRAIGHT_LINKS:
            assert link_distance(topo, i, j) == link_distance(topo, j, i)
            if i != j:
                assert link_distance(topo, i, j) > 0
    assert link_distance(topo, 1, 5) == 7.5
    assert link_distance(topo, 1, 9) == 15.0


def test_link_distance_rejects_diagonals():
    topo = Topology()
    with pytest.raises(ValueError, match="diagonal"):
        link_distance(topo, 1, 2)
    with pytest.raises(ValueError):
        link_distance(topo, 7, 9)


def test_link_map_is_bijection():
    topo = Topology()
    assert sorted(topo.link_map) == list(range(1, 10))
    assert len(set(topo.link_map.values())) == 9
    assert topo.link_map[1] == (0, 0)
    assert topo.link_map[5] == (1, 1)
    assert topo.link_map[9] == (2, 2)


def test_straight_links_midpoints_on_spacing_grid():
    topo = Topology()
    assert [topo.link_midpoint_m(link) for link in (1, 5, 9)] == [0.0, 5.0, 10.0]
    # links 3 and 7 span the full deployment and share the central midpoint
    assert topo.link_midpoint_m(3) == topo.link_midpoint_m(7) == 5.0


def test_taxonomy_shapes():
    assert len(BINARY.classes) == 2
    assert len(SIZE_BASED.classes) == 3
    assert len(BODY_STYLE.classes) == 7
    assert BINARY.classes == ("car-like", "truck-like")
    assert SIZE_BASED.classes == ("small", "mid-size", "large")


def test_coarsen_examples():
    assert coarsen_label("van", BINARY) == "car-like"
    assert coarsen_label("semitruck", SIZE_BASED) == "large"
    assert coarsen_label("truck", BODY_STYLE) == "truck"


def test_coarsen_total_and_idempotent():
    for label in BODY_STYLE_CLASSES:
        assert coarsen_label(label, BINARY) in BINARY.classes
        assert coarsen_label(label, SIZE_BASED) in SIZE_BASED.classes
        assert coarsen_label(label, BODY_STYLE) == label


def test_coarsen_unknown_label():
    with pytest.raises(KeyError):
        coarsen_label("bicycle", BINARY)
    with pytest.raises(KeyError):
        labels_for_taxonomy(["car-like"], SIZE_BASED)


def test_labels_passthrough_when_already_coarse():
    assert labels_for_taxonomy(["car-like", "truck-like"], BINARY) == ["car-like", "truck-like"]
    assert labels_for_taxonomy(["van", "bus"], BINARY) == ["car-like", "truck-like"]


def test_get_taxonomy_unknown():
    with pytest.raises(ConfigError):
        get_taxonomy("fhwa13")


def test_config_file_defaults_and_overrides(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("")
    topo, params = load_system_config(str(empty))
    assert topo == Topology()
    assert params == SystemParams()

    cfg = tmp_path / "custom.cfg"
    cfg.write_text(
        "# deployment overrides\n"
        "longitudinal_spacing_m = 4.0\n"
        "filter_size_n = 8\n"
        "theta_start = 0.9\n"
    )
    topo, params = load_system_config(str(cfg))
    assert topo.longitudinal_spacing_m == 4.0
    assert params.filter_size_n == 8
    assert params.theta_start == 0.9
    assert params.guard_w == 10  # untouched default


def test_config_file_rejects_unknown_and_malformed(tmp_path):
    bad_key = tmp_path / "bad.cfg"
    bad_key.write_text("spacing = 4\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_system_config(str(bad_key))

    bad_val = tmp_path / "badval.cfg"
    bad_val.write_text("filter_size_n = ten\n")
    with pytest.raises(ConfigError, match="invalid value"):
        load_system_config(str(bad_val))

    no_eq = tmp_path / "noeq.cfg"
    no_eq.write_text("theta_start 0.9\n")
    with pytest.raises(ConfigError):
        load_system_config(str(no_eq))
