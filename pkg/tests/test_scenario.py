"""Scenario document tests: schema validation, overrides, bundled files."""

import math

import pytest
import yaml

from teleacc.scenario import (ScenarioError, apply_overrides, list_bundled,
                              load_scenario, resolve_scenario)


def minimal_doc() -> dict:
    return {
        "schema_version": 1,
        "v_ref": 5.0,
        "duration": 10.0,
        "path": [[-5.0, 0.0], [50.0, 0.0]],
        "obstacles": [[[10.0, 2.0], [12.0, 2.0], [12.0, 4.0], [10.0, 4.0]]],
    }


def test_minimal_document_gets_defaults():
    scn = load_scenario(minimal_doc())
    assert scn.v_ref == 5.0
    assert len(scn.obstacles) == 1
    assert scn.params.wheelbase == 2.9
    assert scn.cfg.N == 40 and scn.cfg.t_s == 0.05 and scn.cfg.T_H == 2.0
    assert scn.weights.w_v_term == 100.0
    assert scn.start_state.v == 0.0
    assert scn.seed == 0
    assert scn.name == "scenario"


def test_two_vertex_obstacle_rejected_with_location():
    doc = minimal_doc()
    doc["obstacles"] = [[[0.0, 0.0], [1.0, 0.0]]]
    with pytest.raises(ScenarioError, match=r"obstacles\[0\]"):
        load_scenario(doc)


def test_non_convex_obstacle_rejected_with_location():
    doc = minimal_doc()
    doc["obstacles"].append([[0, 0], [4, 0], [4, 4], [2, 1], [0, 4]])
    with pytest.raises(ScenarioError, match=r"obstacles\[1\]"):
        load_scenario(doc)


def test_inconsistent_horizon_rejected():
    doc = minimal_doc()
    doc["controller"] = {"N": 40, "t_s": 0.05, "T_H": 3.0}
    with pytest.raises(ScenarioError, match="controller"):
        load_scenario(doc)


def test_schema_version_required():
    doc = minimal_doc()
    del doc["schema_version"]
    with pytest.raises(ScenarioError, match="schema_version"):
        load_scenario(doc)
    doc["schema_version"] = 2
    with pytest.raises(ScenarioError, match="schema_version"):
        load_scenario(doc)


def test_unknown_fields_rejected():
    doc = minimal_doc()
    doc["extra"] = 1
    with pytest.raises(ScenarioError, match="extra"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["vehicle"] = {"wheelbse": 2.9}
    with pytest.raises(ScenarioError, match="wheelbse"):
        load_scenario(doc)


def test_bad_values_carry_location():
    doc = minimal_doc()
    doc["path"] = [[0.0, 0.0], ["x", 1.0]]
    with pytest.raises(ScenarioError, match=r"path\[1\]\[0\]"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["start"] = {"delta": 0.7}
    with pytest.raises(ScenarioError, match="start.delta"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["duration"] = math.inf
    with pytest.raises(ScenarioError, match="duration"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["path"] = [[0.0, 0.0], [0.0, 0.0]]
    with pytest.raises(ScenarioError, match="stalls"):
        load_scenario(doc)


def test_overrides_apply_before_validation():
    doc = minimal_doc()
    doc["controller"] = {"N": 40, "t_s": 0.05, "T_H": 3.0}   # inconsistent
    # the override repairs the document, so it must load
    scn = load_scenario(doc, overrides=["controller.T_H=2.0"])
    assert scn.cfg.T_H == 2.0


def test_override_value_types():
    doc = apply_overrides(minimal_doc(), ["controller.M=31", "vehicle.a_min=-3.5"])
    assert doc["controller"]["M"] == 31
    assert isinstance(doc["controller"]["M"], int)
    assert doc["vehicle"]["a_min"] == -3.5
    scn = load_scenario(doc)
    assert scn.cfg.M == 31 and scn.params.a_min == -3.5


def test_override_does_not_mutate_input():
    doc = minimal_doc()
    apply_overrides(doc, ["controller.M=31"])
    assert "controller" not in doc


def test_malformed_override_rejected():
    with pytest.raises(ScenarioError, match="override"):
        apply_overrides(minimal_doc(), ["controller.M"])


def test_bundled_listing_and_resolution():
    names = list_bundled()
    assert "paper-fig4" in names and "empty-road" in names
    path = resolve_scenario("paper-fig4")
    assert path.is_file()
    with pytest.raises(ScenarioError, match="bundled"):
        resolve_scenario("does-not-exist")
    with pytest.raises(ScenarioError, match="file not found"):
        resolve_scenario("does-not-exist.yaml")


def test_bundled_fig4_contents():
    scn = load_scenario(resolve_scenario("paper-fig4"))
    assert scn.name == "paper-fig4"
    assert len(scn.obstacles) == 5
    assert scn.v_ref == 5.0
    # straight path along the x axis
    assert all(y == 0.0 for _, y in scn.reference_path)
    # obstacles alternate left/right with shrinking offsets, last is the wall
    centers = [tuple(map(float, __import__("numpy").mean(o.as_array(), axis=0)))
               for o in scn.obstacles]
    sides = [1 if cy > 0 else -1 for _, cy in centers]
    assert sides[:4] == [1, -1, 1, -1]
    offsets = [abs(cy) for _, cy in centers[:4]]
    assert offsets == sorted(offsets, reverse=True)


def test_bundled_empty_road_has_no_obstacles():
    scn = load_scenario(resolve_scenario("empty-road"))
    assert scn.obstacles == ()
    assert scn.v_ref == 5.0


def test_yaml_file_round_trip(tmp_path):
    p = tmp_path / "custom.yaml"
    p.write_text(yaml.safe_dump(minimal_doc()))
    scn = load_scenario(p)
    assert scn.name == "custom"
    assert len(scn.obstacles) == 1


def test_unreadable_file_message(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "missing.yaml")
