"""Kinematic bicycle model and shared vehicle types."""

from __future__ import annotations

import math
from dataclasses import dataclass


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, x))


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True, slots=True)
class VehicleState:
    """Pose, steering angle and speed: z = [x, y, theta, delta, v]."""

    x: float
    y: float
    theta: float
    delta: float
    v: float


@dataclass(frozen=True, slots=True)
class ControlInput:
    """Steering rate and longitudinal acceleration: u = [delta_rate, a]."""

    delta_rate: float
    a: float


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and actuation limits of the controlled vehicle."""

    wheelbase: float = 2.9
    body_length: float = 4.4
    body_width: float = 1.9
    delta_max: float = 0.5        # rad
    ddelta_max: float = 0.4       # rad/s
    a_min: float = -4.0           # m/s^2
    a_max: float = 2.0            # m/s^2
    a_lat_max: float = 3.0        # m/s^2
    j_max: float = 10.0           # m/s^3

    def __post_init__(self) -> None:
        if self.wheelbase <= 0 or self.body_length <= 0 or self.body_width <= 0:
            raise ValueError("vehicle geometry must be positive")
        if not (0 < self.delta_max < math.pi / 2):
            raise ValueError("delta_max must lie in (0, pi/2)")
        if self.ddelta_max <= 0 or self.j_max <= 0:
            raise ValueError("rate limits must be positive")
        if self.a_min >= 0 or self.a_max <= 0 or self.a_lat_max <= 0:
            raise ValueError("acceleration limits must bracket zero")


def euler_step(z: VehicleState, u: ControlInput, t_s: float,
               params: VehicleParams) -> VehicleState:
    """Advance the bicycle model one Forward Euler step: z' = z + t_s * dz.

    dx = v cos(theta), dy = v sin(theta), dtheta = v tan(delta)/L,
    ddelta = delta_rate, dv = a.  Saturation lives here so planner and
    plant share it: delta clamps to +-delta_max, v to >= 0, theta wraps
    to (-pi, pi].  This sits inside an M*N loop every controller tick,
    hence the summed finiteness test and inlined clamp/wrap.
    """
    # finite iff the sum is finite (inf-inf and inf+inf both fail the test)
    if not math.isfinite(z.x + z.y + z.theta + z.delta + z.v
                         + u.delta_rate + u.a + t_s):
        raise ValueError(f"non-finite euler_step input: z={z}, u={u}, t_s={t_s}")
    if t_s <= 0:
        raise ValueError(f"step time must be positive, got {t_s}")
    delta = z.delta + t_s * u.delta_rate
    dmax = params.delta_max
    v = z.v + t_s * u.a
    return VehicleState(
        x=z.x + t_s * z.v * math.cos(z.theta),
        y=z.y + t_s * z.v * math.sin(z.theta),
        theta=math.pi - (math.pi - (z.theta + t_s * z.v * math.tan(z.delta)
                                    / params.wheelbase)) % (2.0 * math.pi),
        delta=-dmax if delta < -dmax else (dmax if delta > dmax else delta),
        v=v if v > 0.0 else 0.0,
    )


def curvature_from_steering(delta: float, wheelbase: float) -> float:
    """Path curvature of the bicycle model: kappa = tan(delta) / L."""
    if not math.isfinite(delta) or abs(delta) >= math.pi / 2:
        raise ValueError(f"steering angle out of range: {delta}")
    if wheelbase <= 0:
        raise ValueError(f"wheelbase must be positive, got {wheelbase}")
    return math.tan(delta) / wheelbase
