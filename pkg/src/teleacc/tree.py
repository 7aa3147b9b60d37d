"""Braking-trajectory fan, collision checking, safe progress and the
critical curvature profile."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from .vehicle import (ControlInput, VehicleParams, VehicleState,
                      curvature_from_steering, euler_step)


@dataclass(frozen=True)
class Obstacle:
    """Convex polygon in the world frame, vertices counterclockwise."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        verts = self.vertices
        if len(verts) < 3:
            raise ValueError(f"obstacle needs >= 3 vertices, got {len(verts)}")
        if not all(math.isfinite(c) for xy in verts for c in xy):
            raise ValueError("obstacle has non-finite coordinates")
        n = len(verts)
        for i in range(n):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % n]
            cx, cy = verts[(i + 2) % n]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross <= 1e-12:
                raise ValueError(
                    "obstacle must be strictly convex and counterclockwise "
                    f"(violated at vertex {i})")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)


@dataclass(frozen=True)
class ControllerConfig:
    """Horizon discretization and fan density of the safety planner."""

    T_H: float = 2.0
    N: int = 40
    t_s: float = 0.05
    M: int = 15
    edge_sample_spacing: float = 0.5
    v_des_max: float = 5.0
    override_threshold: float = 0.2

    def __post_init__(self) -> None:
        if self.T_H <= 0 or self.N <= 0 or self.t_s <= 0:
            raise ValueError("horizon values must be positive")
        if abs(self.t_s * self.N - self.T_H) > 1e-9:
            raise ValueError(
                f"inconsistent horizon: t_s*N = {self.t_s * self.N} != T_H = {self.T_H}")
        if self.M < 3 or self.M % 2 == 0:
            raise ValueError(f"M must be odd and >= 3, got {self.M}")
        if self.edge_sample_spacing <= 0:
            raise ValueError("edge_sample_spacing must be positive")
        if self.v_des_max <= 0 or self.override_threshold < 0:
            raise ValueError("v_des_max must be positive, override_threshold >= 0")


@dataclass(frozen=True)
class Trajectory:
    """One constant-input braking rollout of the fan."""

    states: tuple[VehicleState, ...]
    input: ControlInput
    progress: np.ndarray
    safe_progress: float
    first_collision_index: int | None


@dataclass(frozen=True)
class TreeResult:
    s_safe: float
    kappa_crit: np.ndarray
    trajectories: tuple[Trajectory, ...]


def ellipse_axes(params: VehicleParams) -> tuple[float, float]:
    """Semi-axes of the smallest ratio-preserving ellipse around the body
    rectangle: a = (length/2)*sqrt(2), b = (width/2)*sqrt(2)."""
    return (0.5 * params.body_length * math.sqrt(2.0),
            0.5 * params.body_width * math.sqrt(2.0))


def steering_rates(M: int, ddelta_max: float) -> np.ndarray:
    """Uniform steering-rate sweep: rate_m = -dmax + 2*dmax*(m-1)/(M-1)."""
    if M < 2:
        raise ValueError(f"need at least 2 rates, got M={M}")
    m = np.arange(1, M + 1, dtype=float)
    return -ddelta_max + 2.0 * ddelta_max * (m - 1.0) / (M - 1.0)


def stop_deceleration(v_curr: float, T_H: float) -> float:
    """Constant deceleration that reaches standstill at the horizon end."""
    if v_curr < 0 or T_H <= 0:
        raise ValueError(f"bad stop_deceleration inputs: v={v_curr}, T_H={T_H}")
    return -v_curr / T_H


def generate_tree(z_curr: VehicleState, params: VehicleParams,
                  cfg: ControllerConfig) -> list[Trajectory]:
    """Roll out M braking trajectories under constant u_m = [rate_m, a_stop]."""
    a_stop = stop_deceleration(z_curr.v, cfg.T_H)
    trajectories = []
    for rate in steering_rates(cfg.M, params.ddelta_max):
        u = ControlInput(delta_rate=float(rate), a=a_stop)
        states = [z_curr]
        for _ in range(cfg.N):
            states.append(euler_step(states[-1], u, cfg.t_s, params))
        xy = np.array([(s.x, s.y) for s in states])
        steps = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        progress = np.concatenate(([0.0], np.cumsum(steps)))
        trajectories.append(Trajectory(
            states=tuple(states), input=u, progress=progress,
            safe_progress=float(progress[-1]), first_collision_index=None))
    return trajectories


def ellipse_contains(p: tuple[float, float], a: float, b: float) -> bool:
    """Point-in-ellipse test in the vehicle frame; boundary counts."""
    if a <= 0 or b <= 0:
        raise ValueError("ellipse semi-axes must be positive")
    return (p[0] / a) ** 2 + (p[1] / b) ** 2 <= 1.0


@functools.lru_cache(maxsize=256)
def obstacle_sample_points(obstacle: Obstacle, spacing: float) -> np.ndarray:
    """Vertices plus edge points sampled at most `spacing` apart."""
    verts = obstacle.as_array()
    points = [verts]
    n = len(verts)
    for i in range(n):
        p0 = verts[i]
        p1 = verts[(i + 1) % n]
        length = float(np.hypot(*(p1 - p0)))
        k = int(math.ceil(length / spacing))
        if k > 1:
            frac = np.arange(1, k, dtype=float)[:, None] / k
            points.append(p0 + frac * (p1 - p0))
    return np.vstack(points)


def _points_in_convex_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Vectorized membership test for a CCW convex polygon (boundary counts)."""
    inside = np.ones(len(points), dtype=bool)
    n = len(verts)
    for i in range(n):
        edge = verts[(i + 1) % n] - verts[i]
        rel = points - verts[i]
        inside &= edge[0] * rel[:, 1] - edge[1] * rel[:, 0] >= 0.0
    return inside


def _collision_mask(xs: np.ndarray, ys: np.ndarray, thetas: np.ndarray,
                    obstacles: list[Obstacle], params: VehicleParams,
                    cfg: ControllerConfig) -> np.ndarray:
    """Collision flag per query pose against all obstacles.

    Obstacle boundary points are transformed into each pose's frame and
    tested against the bounding ellipse; a pose whose center lies inside
    an obstacle is also a collision (covers full containment, which
    boundary sampling alone would miss).  Poses outside every obstacle's
    bounding circle (inflated by the ellipse semi-major axis) are screened
    out first; on open road that skips the transform entirely.
    """
    a, b = ellipse_axes(params)
    spacing = min(cfg.edge_sample_spacing, min(a, b) / 2.0)
    mask = np.zeros(len(xs), dtype=bool)
    if not obstacles:
        return mask
    near = np.zeros(len(xs), dtype=bool)
    for o in obstacles:
        verts = o.as_array()
        cx, cy = verts.mean(axis=0)
        reach = float(np.hypot(verts[:, 0] - cx, verts[:, 1] - cy).max()) + a
        near |= (xs - cx) ** 2 + (ys - cy) ** 2 <= reach * reach
    if not near.any():
        return mask
    qx, qy, qt = xs[near], ys[near], thetas[near]
    points = np.vstack([obstacle_sample_points(o, spacing) for o in obstacles])
    cos_t = np.cos(qt)
    sin_t = np.sin(qt)
    dx = points[None, :, 0] - qx[:, None]
    dy = points[None, :, 1] - qy[:, None]
    px = cos_t[:, None] * dx + sin_t[:, None] * dy
    py = -sin_t[:, None] * dx + cos_t[:, None] * dy
    hit = np.any((px / a) ** 2 + (py / b) ** 2 <= 1.0, axis=1)
    centers = np.column_stack((qx, qy))
    for o in obstacles:
        hit |= _points_in_convex_polygon(centers, o.as_array())
    mask[near] = hit
    return mask


def check_state_collision(z: VehicleState, obstacles: list[Obstacle],
                          params: VehicleParams, cfg: ControllerConfig) -> bool:
    mask = _collision_mask(np.array([z.x]), np.array([z.y]),
                           np.array([z.theta]), obstacles, params, cfg)
    return bool(mask[0])


def _safe_progress_from_mask(traj: Trajectory, mask: np.ndarray) -> Trajectory:
    """Fill safety fields given per-state collision flags.

    states[0] is the present, uncontrollable pose and never counts; a
    collision at states[1] yields zero safe progress.
    """
    colliding = np.flatnonzero(mask[1:])
    if colliding.size == 0:
        return replace(traj, safe_progress=float(traj.progress[-1]),
                       first_collision_index=None)
    first = int(colliding[0]) + 1
    return replace(traj, safe_progress=float(traj.progress[first - 1]),
                   first_collision_index=first)


def safe_progress(traj: Trajectory, obstacles: list[Obstacle],
                  params: VehicleParams, cfg: ControllerConfig) -> float:
    xs = np.array([s.x for s in traj.states])
    ys = np.array([s.y for s in traj.states])
    thetas = np.array([s.theta for s in traj.states])
    mask = _collision_mask(xs, ys, thetas, obstacles, params, cfg)
    return _safe_progress_from_mask(traj, mask).safe_progress


def global_safe_progress(trajectories: list[Trajectory]) -> float:
    if not trajectories:
        raise ValueError("global safe progress of an empty tree is undefined")
    return min(t.safe_progress for t in trajectories)


def critical_curvature_profile(delta_curr: float, params: VehicleParams,
                               cfg: ControllerConfig) -> np.ndarray:
    """Curvature of the steering profile that saturates earliest.

    delta_n = clamp(delta_curr + n*t_s*rate_crit, +-delta_max) for n=1..N
    with rate_crit = sign(delta_curr)*ddelta_max; sign(0) resolves to +1
    (either choice gives the same |kappa| bound).
    """
    sign = -1.0 if delta_curr < 0 else 1.0
    rate = sign * params.ddelta_max
    n = np.arange(1, cfg.N + 1, dtype=float)
    deltas = np.clip(delta_curr + n * cfg.t_s * rate,
                     -params.delta_max, params.delta_max)
    return np.array([curvature_from_steering(d, params.wheelbase) for d in deltas])


def plan_tree(z_curr: VehicleState, obstacles: list[Obstacle],
              params: VehicleParams, cfg: ControllerConfig) -> TreeResult:
    """Fan rollout plus collision check, reduced to s_safe and kappa_crit."""
    trajectories = generate_tree(z_curr, params, cfg)
    xs = np.array([s.x for t in trajectories for s in t.states])
    ys = np.array([s.y for t in trajectories for s in t.states])
    thetas = np.array([s.theta for t in trajectories for s in t.states])
    mask = _collision_mask(xs, ys, thetas, obstacles, params, cfg)
    n_states = cfg.N + 1
    checked = [
        _safe_progress_from_mask(t, mask[i * n_states:(i + 1) * n_states])
        for i, t in enumerate(trajectories)
    ]
    return TreeResult(
        s_safe=global_safe_progress(checked),
        kappa_crit=critical_curvature_profile(z_curr.delta, params, cfg),
        trajectories=tuple(checked),
    )
