"""Scenario documents: schema, validation, bundled files.

A scenario is a YAML mapping with a required ``schema_version`` and
sections for the reference path, obstacles, start state, and the three
tuning blocks (vehicle, controller, weights).  All units SI, angles in
radians.  Validation errors carry the document location that caused
them, e.g. ``obstacles[2]: polygon is not convex``.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .tree import ControllerConfig, Obstacle
from .vehicle import VehicleParams, VehicleState
from .velocity import VelocityWeights

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "name", "duration", "seed", "v_ref", "start",
             "path", "vehicle", "controller", "weights", "obstacles"}


class ScenarioError(ValueError):
    """Scenario validation failure, prefixed with the offending location."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass(frozen=True)
class Scenario:
    """Validated, immutable description of one closed-loop run."""

    name: str
    obstacles: tuple[Obstacle, ...]
    reference_path: tuple[tuple[float, float], ...]
    v_ref: float
    start_state: VehicleState
    params: VehicleParams
    cfg: ControllerConfig
    weights: VelocityWeights
    duration: float
    seed: int

    def __post_init__(self) -> None:
        if len(self.reference_path) < 2:
            raise ValueError("reference path needs at least 2 points")
        for i in range(len(self.reference_path) - 1):
            x0, y0 = self.reference_path[i]
            x1, y1 = self.reference_path[i + 1]
            if math.hypot(x1 - x0, y1 - y0) <= 0.0:
                raise ValueError(f"reference path stalls at segment {i}")
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.v_ref < 0:
            raise ValueError(f"v_ref must be non-negative, got {self.v_ref}")


def _require_mapping(node, loc: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ScenarioError(loc, f"expected a mapping, got {type(node).__name__}")
    return node


def _number(node, loc: str) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ScenarioError(loc, f"expected a number, got {node!r}")
    if not math.isfinite(node):
        raise ScenarioError(loc, f"expected a finite number, got {node!r}")
    return float(node)


def _point(node, loc: str) -> tuple[float, float]:
    if not isinstance(node, (list, tuple)) or len(node) != 2:
        raise ScenarioError(loc, f"expected an [x, y] pair, got {node!r}")
    return (_number(node[0], f"{loc}[0]"), _number(node[1], f"{loc}[1]"))


def _build(cls, section, loc: str):
    """Instantiate a config dataclass from a document section.

    Unknown keys are rejected (they are always typos) and the dataclass's
    own invariants are re-raised with the section location attached.
    """
    section = _require_mapping(section, loc)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in section.items():
        f = fields.get(key)
        if f is None:
            raise ScenarioError(f"{loc}.{key}", "unknown field")
        if f.type == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioError(f"{loc}.{key}",
                                    f"expected an integer, got {value!r}")
            kwargs[key] = value
        else:
            kwargs[key] = _number(value, f"{loc}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ScenarioError(loc, str(exc)) from None


def _parse(doc, origin: str) -> Scenario:
    doc = _require_mapping(doc, origin)
    for key in doc:
        if key not in _TOP_KEYS:
            raise ScenarioError(key, "unknown top-level field")

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version",
                            f"expected {SCHEMA_VERSION}, got {version!r}")

    params = _build(VehicleParams, doc.get("vehicle"), "vehicle")
    cfg = _build(ControllerConfig, doc.get("controller"), "controller")
    weights = _build(VelocityWeights, doc.get("weights"), "weights")

    path_node = doc.get("path")
    if not isinstance(path_node, list) or len(path_node) < 2:
        raise ScenarioError("path", "expected a list of at least 2 [x, y] points")
    path = tuple(_point(p, f"path[{i}]") for i, p in enumerate(path_node))

    obstacles = []
    for i, verts in enumerate(doc.get("obstacles") or []):
        loc = f"obstacles[{i}]"
        if not isinstance(verts, list):
            raise ScenarioError(loc, "expected a list of [x, y] vertices")
        pts = tuple(_point(v, f"{loc}[{j}]") for j, v in enumerate(verts))
        try:
            obstacles.append(Obstacle(vertices=pts))
        except ValueError as exc:
            raise ScenarioError(loc, str(exc)) from None

    start = _require_mapping(doc.get("start"), "start")
    state_kwargs = {}
    for key in ("x", "y", "theta", "delta", "v"):
        state_kwargs[key] = _number(start.get(key, 0.0), f"start.{key}")
    for key in start:
        if key not in state_kwargs:
            raise ScenarioError(f"start.{key}", "unknown field")
    if abs(state_kwargs["delta"]) > params.delta_max:
        raise ScenarioError("start.delta",
                            f"exceeds delta_max = {params.delta_max}")
    if state_kwargs["v"] < 0:
        raise ScenarioError("start.v", "must be non-negative")

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("seed", f"expected an integer, got {seed!r}")

    name = doc.get("name", Path(origin).stem if origin else "scenario")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", f"expected a non-empty string, got {name!r}")

    try:
        return Scenario(
            name=name,
            obstacles=tuple(obstacles),
            reference_path=path,
            v_ref=_number(doc.get("v_ref"), "v_ref"),
            start_state=VehicleState(**state_kwargs),
            params=params,
            cfg=cfg,
            weights=weights,
            duration=_number(doc.get("duration"), "duration"),
            seed=seed,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(origin or "scenario", str(exc)) from None


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` assignments onto a parsed document.

    Values are parsed as YAML scalars so ``controller.M=31`` yields an
    int and ``vehicle.a_min=-3.5`` a float.  Happens before validation.
    """
    out = copy.deepcopy(doc) if isinstance(doc, dict) else doc
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ScenarioError(item, "override must look like section.key=value")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ScenarioError(key, f"cannot descend into scalar '{part}'")
            node = child
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ScenarioError(key, f"unparseable value {raw!r}") from None
    return out


def list_bundled() -> list[str]:
    root = resources.files("teleacc").joinpath("scenarios")
    return sorted(p.name[:-len(".yaml")] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def resolve_scenario(ref: str | Path) -> Path:
    """Map a CLI scenario reference to a file: a path as given, or the
    name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if p.suffix in (".yaml", ".yml"):
        raise ScenarioError(str(ref), "file not found")
    bundled = resources.files("teleacc").joinpath("scenarios") / f"{ref}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError(
        str(ref), f"not a file or bundled scenario (bundled: {', '.join(list_bundled())})")


def load_scenario(source: str | Path | dict, overrides=()) -> Scenario:
    """Parse and validate a scenario from a file path or a parsed mapping."""
    if isinstance(source, dict):
        doc, origin = source, ""
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(str(path), f"cannot read: {exc}") from None
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(str(path), f"bad document: {exc}") from None
        origin = str(path)
    if overrides:
        doc = apply_overrides(doc if isinstance(doc, dict) else {}, overrides)
    return _parse(doc, origin)
