"""Per-tick cruise-control orchestration.

Each tick runs the full pipeline: braking-fan rollout and collision
check, reduction to (s_safe, kappa_crit), velocity optimization, and
command extraction. Steering is never touched; the controller only
limits how fast the operator may drive along whatever path they steer.

The controller works in the vehicle frame of the current pose: the
rollout starts at the origin and obstacles are expected in that frame.
Callers tracking a world pose transform obstacle vertices before the
tick.

compute_command never raises. Whatever goes wrong (solver reports
failure, inputs are garbage), it degrades to a maximal-braking ramp so
the caller always has a velocity command to execute.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from math import isfinite

from .tree import ControllerConfig, Obstacle, TreeResult, plan_tree
from .vehicle import VehicleParams, VehicleState, clamp
from .velocity import (VelocityLimits, VelocitySolution, VelocityWeights,
                       build_problem, extract_command, solve)


@dataclass(frozen=True)
class OperatorCommand:
    """What the human (or script) wants: steering is executed as-is,
    velocity is a wish the safety layer may cut down."""

    delta_des: float
    v_des: float
    timestamp: float = 0.0

    def clamped(self, params: VehicleParams, cfg: ControllerConfig) -> "OperatorCommand":
        delta = clamp(self.delta_des if isfinite(self.delta_des) else 0.0,
                      -params.delta_max, params.delta_max)
        v = clamp(self.v_des if isfinite(self.v_des) else 0.0,
                  0.0, cfg.v_des_max)
        return OperatorCommand(delta_des=delta, v_des=v, timestamp=self.timestamp)


@dataclass(frozen=True)
class AccOutput:
    v_cmd: float
    s_safe: float
    override_active: bool
    compute_time: float                  # wall clock, ms
    tree: TreeResult | None              # diagnostics; None when the tick degraded
    solution: VelocitySolution | None


def fallback_command(v_curr: float, prev_output: AccOutput | None,
                     params: VehicleParams, cfg: ControllerConfig) -> float:
    """Maximal-braking ramp used when the optimizer fails.

    One quarter horizon of a_min per tick empties any reachable speed
    well inside T_H; prev_output is accepted for interface symmetry but
    the ramp depends only on the live speed.
    """
    n_fb = max(1, cfg.N // 4)
    return max(0.0, v_curr + params.a_min * cfg.t_s * n_fb)


def _sanitized(delta_curr: float, v_curr: float, a_curr: float, v_des: float,
               params: VehicleParams, cfg: ControllerConfig
               ) -> tuple[float, float, float, float]:
    """Clamp inputs into the contract box, warning when that changes them.

    Non-finite values are treated as the most conservative reading:
    zero speed demand, neutral steering, no measured acceleration.
    """
    raw = (delta_curr, v_curr, a_curr, v_des)
    if not all(isfinite(x) for x in raw):
        warnings.warn(f"non-finite controller inputs {raw}, braking",
                      RuntimeWarning, stacklevel=3)
        delta_curr = delta_curr if isfinite(delta_curr) else 0.0
        v_curr = v_curr if isfinite(v_curr) else 0.0
        a_curr = a_curr if isfinite(a_curr) else 0.0
        v_des = v_des if isfinite(v_des) else 0.0
    clean = (
        clamp(delta_curr, -params.delta_max, params.delta_max),
        max(0.0, v_curr),
        clamp(a_curr, params.a_min, params.a_max),
        clamp(v_des, 0.0, cfg.v_des_max),
    )
    # warn on material violations only; measured signals routinely land
    # an ulp past a saturation bound
    if any(abs(c - r) > 1e-6 for c, r in
           zip(clean, (delta_curr, v_curr, a_curr, v_des))):
        warnings.warn(
            f"controller inputs outside bounds, clamped: "
            f"(delta={delta_curr:.3g}, v={v_curr:.3g}, a={a_curr:.3g}, "
            f"v_des={v_des:.3g})", RuntimeWarning, stacklevel=3)
    return clean


def compute_command(delta_curr: float, v_curr: float, a_curr: float,
                    v_des: float, obstacles: list[Obstacle],
                    params: VehicleParams, cfg: ControllerConfig,
                    weights: VelocityWeights,
                    prev_output: AccOutput | None = None) -> AccOutput:
    """One controller tick; always returns a command.

    Obstacles are polygons in the vehicle frame of the current pose.
    """
    t0 = time.perf_counter()
    delta_c, v_c, a_c, vd = _sanitized(delta_curr, v_curr, a_curr, v_des,
                                       params, cfg)

    tree: TreeResult | None = None
    sol: VelocitySolution | None = None
    v_cmd: float | None = None
    try:
        z = VehicleState(x=0.0, y=0.0, theta=0.0, delta=delta_c, v=v_c)
        tree = plan_tree(z, obstacles, params, cfg)
        sol = solve(build_problem(v_c, a_c, vd, tree, cfg, weights,
                                  VelocityLimits.from_params(params)))
        if sol.status != "failed":
            v_cmd = extract_command(sol)
    except Exception as exc:  # safety root: degrade, never propagate
        warnings.warn(f"controller tick degraded to fallback: {exc!r}",
                      RuntimeWarning, stacklevel=2)

    if v_cmd is None:
        v_cmd = fallback_command(v_c, prev_output, params, cfg)
    v_cmd = min(v_cmd, vd)   # the ACC may slow the operator down, never speed up

    return AccOutput(
        v_cmd=v_cmd,
        s_safe=tree.s_safe if tree is not None else 0.0,
        override_active=v_cmd < vd - cfg.override_threshold,
        compute_time=(time.perf_counter() - t0) * 1e3,
        tree=tree,
        solution=sol,
    )


class AccController:
    """Stateful wrapper running strictly sequential ticks.

    Holds the configuration triple and the previous output so a failing
    tick can hand the fallback its context. One instance, one vehicle.
    """

    def __init__(self, params: VehicleParams | None = None,
                 cfg: ControllerConfig | None = None,
                 weights: VelocityWeights | None = None):
        self.params = params if params is not None else VehicleParams()
        self.cfg = cfg if cfg is not None else ControllerConfig()
        self.weights = weights if weights is not None else VelocityWeights()
        self.prev_output: AccOutput | None = None

    def tick(self, delta_curr: float, v_curr: float, a_curr: float,
             v_des: float, obstacles: list[Obstacle]) -> AccOutput:
        out = compute_command(delta_curr, v_curr, a_curr, v_des, obstacles,
                              self.params, self.cfg, self.weights,
                              prev_output=self.prev_output)
        self.prev_output = out
        return out
