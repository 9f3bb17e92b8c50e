"""Scenario file loading: one JSON document configures every stage.

Strict parsing: unknown keys are rejected with a path diagnostic, since a
typo in a scenario silently changing an experiment is worse than an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from testbed.model import parse_ts
from testbed.simulators.lighting import LightingSimConfig, LocationSpec
from testbed.simulators.traffic import SensorSpec, TrafficSimConfig


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    broker_port: int = 1883
    data_dir: str = "testbed-data"
    partitions: int = 4
    gateway_port: int = 8080
    gateway_static: str | None = None
    traffic: TrafficSimConfig | None = None
    lighting: LightingSimConfig | None = None

    @property
    def power_w(self) -> float:
        return self.lighting.power_w if self.lighting else 40.0

    def sensor_labels(self) -> dict[str, str]:
        labels = {}
        if self.traffic:
            labels.update({s.id: s.label or s.id for s in self.traffic.sensors})
        if self.lighting:
            labels.update({l.id: l.label or l.id for l in self.lighting.locations})
        return labels


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    _reject_unknown(doc, {"broker", "log", "traffic", "lighting", "gateway"}, "")
    scenario = Scenario()

    broker = _section(doc, "broker", {"port"})
    if "port" in broker:
        scenario.broker_port = _int_field(broker, "port", "broker.port")

    log_section = _section(doc, "log", {"data_dir", "partitions"})
    if "data_dir" in log_section:
        scenario.data_dir = _str_field(log_section, "data_dir", "log.data_dir")
    if "partitions" in log_section:
        scenario.partitions = _int_field(log_section, "partitions", "log.partitions")
        if scenario.partitions < 1:
            raise ScenarioError("log.partitions: must be >= 1")

    gateway = _section(doc, "gateway", {"port", "static_dir"})
    if "port" in gateway:
        scenario.gateway_port = _int_field(gateway, "port", "gateway.port")
    if "static_dir" in gateway:
        scenario.gateway_static = _str_field(gateway, "static_dir", "gateway.static_dir")

    if "traffic" in doc:
        scenario.traffic = _traffic_config(doc["traffic"])
    if "lighting" in doc:
        scenario.lighting = _lighting_config(doc["lighting"])
    return scenario


def _traffic_config(raw) -> TrafficSimConfig:
    if not isinstance(raw, dict):
        raise ScenarioError("traffic: must be an object")
    allowed = {"seed", "sensors", "start_ts", "end_ts", "base_rate", "class_mix", "diurnal_profile"}
    _reject_unknown(raw, allowed, "traffic.")
    kwargs = {}
    if "seed" in raw:
        kwargs["seed"] = _int_field(raw, "seed", "traffic.seed")
    if "base_rate" in raw:
        kwargs["base_rate"] = _num_field(raw, "base_rate", "traffic.base_rate")
    if "sensors" in raw:
        kwargs["sensors"] = [
            SensorSpec(id=_str_field(s, "id", f"traffic.sensors[{i}].id"), label=s.get("label", ""))
            for i, s in enumerate(_obj_list(raw, "sensors", "traffic.sensors", {"id", "label"}))
        ]
    for key in ("start_ts", "end_ts"):
        if key in raw:
            try:
                kwargs[key] = parse_ts(raw[key])
            except ValueError as exc:
                raise ScenarioError(f"traffic.{key}: {exc}") from None
    if "class_mix" in raw:
        if not isinstance(raw["class_mix"], dict):
            raise ScenarioError("traffic.class_mix: must be an object")
        kwargs["class_mix"] = {k: float(v) for k, v in raw["class_mix"].items()}
    if "diurnal_profile" in raw:
        kwargs["diurnal_profile"] = _float_list(raw, "diurnal_profile", "traffic.diurnal_profile")
    try:
        return TrafficSimConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"traffic: {exc}") from None


def _lighting_config(raw) -> LightingSimConfig:
    if not isinstance(raw, dict):
        raise ScenarioError("lighting: must be an object")
    allowed = {"seed", "locations", "motion_rate_profile", "hold_seconds", "power_w"}
    _reject_unknown(raw, allowed, "lighting.")
    kwargs = {}
    if "seed" in raw:
        kwargs["seed"] = _int_field(raw, "seed", "lighting.seed")
    if "hold_seconds" in raw:
        kwargs["hold_seconds"] = _int_field(raw, "hold_seconds", "lighting.hold_seconds")
    if "power_w" in raw:
        kwargs["power_w"] = _num_field(raw, "power_w", "lighting.power_w")
    if "locations" in raw:
        kwargs["locations"] = [
            LocationSpec(id=_str_field(s, "id", f"lighting.locations[{i}].id"), label=s.get("label", ""))
            for i, s in enumerate(_obj_list(raw, "locations", "lighting.locations", {"id", "label"}))
        ]
    if "motion_rate_profile" in raw:
        kwargs["motion_rate_profile"] = _float_list(raw, "motion_rate_profile", "lighting.motion_rate_profile")
    try:
        return LightingSimConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"lighting: {exc}") from None


def _section(doc: dict, name: str, allowed: set[str]) -> dict:
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ScenarioError(f"{name}: must be an object")
    _reject_unknown(raw, allowed, f"{name}.")
    return raw


def _reject_unknown(raw: dict, allowed: set[str], prefix: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ScenarioError(f"unknown key {prefix}{key} (allowed: {', '.join(sorted(allowed))})")


def _int_field(raw: dict, key: str, where: str) -> int:
    v = raw.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ScenarioError(f"{where}: must be an integer")
    return v


def _num_field(raw: dict, key: str, where: str) -> float:
    v = raw.get(key)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ScenarioError(f"{where}: must be a number")
    return float(v)


def _str_field(raw: dict, key: str, where: str) -> str:
    v = raw.get(key)
    if not isinstance(v, str) or not v:
        raise ScenarioError(f"{where}: must be a non-empty string")
    return v


def _obj_list(raw: dict, key: str, where: str, allowed: set[str]) -> list[dict]:
    v = raw.get(key)
    if not isinstance(v, list) or not all(isinstance(x, dict) for x in v):
        raise ScenarioError(f"{where}: must be a list of objects")
    for i, x in enumerate(v):
        _reject_unknown(x, allowed, f"{where}[{i}].")
    return v


def _float_list(raw: dict, key: str, where: str) -> list[float]:
    v = raw.get(key)
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ScenarioError(f"{where}: must be a list of numbers")
    return [float(x) for x in v]
