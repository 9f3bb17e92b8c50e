import json

import pytest

from testbed.scenario import ScenarioError, load_scenario


def write(tmp_path, doc):
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(doc))
    return p


def test_minimal_scenario_defaults(tmp_path):
    s = load_scenario(write(tmp_path, {}))
    assert s.broker_port == 1883
    assert s.partitions == 4
    assert s.gateway_port == 8080
    assert s.traffic is None and s.lighting is None


def test_full_scenario(tmp_path):
    s = load_scenario(
        write(
            tmp_path,
            {
                "broker": {"port": 1884},
                "log": {"data_dir": "/tmp/x", "partitions": 2},
                "gateway": {"port": 9090},
                "traffic": {
                    "seed": 7,
                    "sensors": [{"id": "A", "label": "Gate"}],
                    "start_ts": "2017-03-01T00:00:00Z",
                    "end_ts": "2017-03-01T01:00:00Z",
                    "base_rate": 10,
                },
                "lighting": {"seed": 9, "locations": [{"id": "L1"}], "hold_seconds": 60, "power_w": 60},
            },
        )
    )
    assert s.broker_port == 1884
    assert s.traffic.seed == 7
    assert s.traffic.sensors[0].label == "Gate"
    assert s.lighting.hold_seconds == 60
    assert s.power_w == 60
    assert s.sensor_labels() == {"A": "Gate", "L1": "L1"}


def test_unknown_top_level_key_rejected(tmp_path):
    with pytest.raises(ScenarioError, match="mqtt"):
        load_scenario(write(tmp_path, {"mqtt": {}}))


def test_unknown_nested_key_rejected(tmp_path):
    with pytest.raises(ScenarioError, match="traffic.rate"):
        load_scenario(write(tmp_path, {"traffic": {"rate": 5}}))


def test_bad_timestamp_named(tmp_path):
    with pytest.raises(ScenarioError, match="start_ts"):
        load_scenario(write(tmp_path, {"traffic": {"start_ts": "yesterday"}}))


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"broker": }')
    with pytest.raises(ScenarioError, match="line 1"):
        load_scenario(p)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario(tmp_path / "nope.json")


def test_sim_config_errors_surface(tmp_path):
    with pytest.raises(ScenarioError, match="diurnal_profile"):
        load_scenario(write(tmp_path, {"traffic": {"diurnal_profile": [1.0]}}))
    with pytest.raises(ScenarioError, match="hold_seconds"):
        load_scenario(write(tmp_path, {"lighting": {"hold_seconds": 0}}))


def test_shipped_scenarios_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "scenarios"
    traffic = load_scenario(root / "traffic-2sensor.json")
    assert [s.id for s in traffic.traffic.sensors] == ["S01", "S02"]
    assert traffic.traffic.seed == 42
    lighting = load_scenario(root / "lighting-2room.json")
    assert [l.id for l in lighting.lighting.locations] == ["L01", "L02"]
    assert lighting.lighting.hold_seconds == 180
