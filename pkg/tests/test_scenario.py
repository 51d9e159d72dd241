"""Scenario resolution, layout connectivity, limited-RF knob, YAML round-trip."""

import numpy as np
import pytest

from macdmp import netsim
from macdmp.scenario import (ConfigError, ScenarioConfig, build_scenario_topology,
                             bundled_names, get_scenario, load_yaml, save_yaml)


def test_bundled_scenarios_build_connected():
    for name in bundled_names():
        cfg = get_scenario(name)
        topo = build_scenario_topology(cfg)
        assert len(topo.nodes) == cfg.n_nodes
        n_high = sum(1 for s in topo.nodes if s.traffic_class == "high")
        assert n_high == cfg.n_high


def test_layout_is_deterministic():
    a = build_scenario_topology(get_scenario("s8_2v6"))
    b = build_scenario_topology(get_scenario("s8_2v6"))
    assert [s.position for s in a.nodes] == [s.position for s in b.nodes]
    np.testing.assert_array_equal(a.adjacency, b.adjacency)


def test_link_boundary_matches_target_range():
    cfg = get_scenario("s8_2v6")
    radio = cfg.radio()
    at = netsim.received_power(radio, cfg.target_range_m)
    beyond = netsim.received_power(radio, cfg.target_range_m * 1.000001)
    assert at >= radio.rx_sensitivity > beyond


def test_limited_rf_shrinks_range():
    # doubling f_c and halving P_t cuts the link radius by 2 * sqrt(2)
    base = get_scenario("s8_2v6")
    limited = get_scenario("s8_2v6", limited_rf=True)
    r = limited.radio()
    want_radius = base.target_range_m * (1 / 2.0) * (1 / np.sqrt(2.0))
    at = netsim.received_power(r, want_radius)
    assert at == pytest.approx(r.rx_sensitivity, rel=1e-9)
    assert netsim.received_power(r, base.target_range_m) < r.rx_sensitivity


def test_yaml_round_trip(tmp_path):
    cfg = ScenarioConfig(name="x", n_nodes=4, n_high=2,
                         positions=[[0, 0], [1, 1], [2, 2], [3, 3]],
                         limited_rf=True, queue_capacity=17)
    p = tmp_path / "x.yaml"
    save_yaml(cfg, p)
    back = load_yaml(p)
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()


def test_config_hash_changes_with_fields():
    a = ScenarioConfig(name="x", n_nodes=4, n_high=2)
    b = ScenarioConfig(name="x", n_nodes=4, n_high=3)
    assert a.config_hash() != b.config_hash()


def test_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(name="x", n_nodes=1, n_high=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(name="x", n_nodes=4, n_high=5)
    with pytest.raises(ConfigError):
        ScenarioConfig(name="x", n_nodes=4, n_high=2, positions=[[0, 0]])


def test_load_yaml_reports_unknown_and_missing_fields(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("name: y\nn_nodes: 3\n")
    with pytest.raises(ConfigError, match="n_high"):
        load_yaml(p)
    p.write_text("name: y\nn_nodes: 3\nn_high: 1\nbogus: 2\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_yaml(p)
