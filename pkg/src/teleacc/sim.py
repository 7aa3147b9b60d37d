"""Deterministic closed-loop simulation: scripted operator, plant,
telemetry log.

The loop ties the pieces together at the controller period: a path
tracker stands in for the human operator (or an external command source
feeds commands in), the controller limits the velocity command, and a
simple actuator model integrates the vehicle. Everything is pure float
arithmetic off the wall clock, so identical scenarios replay to
byte-identical logs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import AccController, OperatorCommand
from .scenario import Scenario
from .tree import ControllerConfig, Obstacle
from .vehicle import ControlInput, VehicleParams, VehicleState, clamp, \
    euler_step, normalize_angle

# "at standstill with v_cmd = 0 for 2 s": the optimizer's commands decay
# exponentially toward zero near a blocking obstacle and never reach it
# exactly, so standstill reads as below one millimeter per second.
STANDSTILL_EPS = 1e-3
STANDSTILL_HOLD = 2.0

LOG_COLUMNS = ("t", "x", "y", "theta", "delta", "v", "a", "delta_des",
               "v_des", "v_cmd", "s_safe", "override_active", "solver_status")


class Path:
    """Piecewise-linear reference path with arc-length lookups."""

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"path must be (K>=2, 2), got {pts.shape}")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0.0):
            raise ValueError("path has a zero-length segment")
        self.points = pts
        self.seg_len = lengths
        self.cum = np.concatenate(([0.0], np.cumsum(lengths)))
        self.length = float(self.cum[-1])
        self.tangents = seg / lengths[:, None]
        self.headings = np.arctan2(self.tangents[:, 1], self.tangents[:, 0])

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc length of the closest path point and the signed lateral
        offset of (x, y) from it, left of travel positive."""
        rel_x = x - self.points[:-1, 0]
        rel_y = y - self.points[:-1, 1]
        t = np.clip(rel_x * self.tangents[:, 0] + rel_y * self.tangents[:, 1],
                    0.0, self.seg_len)
        dx = rel_x - t * self.tangents[:, 0]
        dy = rel_y - t * self.tangents[:, 1]
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        lateral = (self.tangents[i, 0] * dy[i] - self.tangents[i, 1] * dx[i])
        return float(self.cum[i] + t[i]), float(lateral)

    def _segment(self, s: float) -> int:
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        return min(max(i, 0), len(self.seg_len) - 1)

    def point_at(self, s: float) -> tuple[float, float]:
        s = clamp(s, 0.0, self.length)
        i = self._segment(s)
        t = s - self.cum[i]
        return (float(self.points[i, 0] + t * self.tangents[i, 0]),
                float(self.points[i, 1] + t * self.tangents[i, 1]))

    def heading_at(self, s: float) -> float:
        return float(self.headings[self._segment(clamp(s, 0.0, self.length))])


@dataclass(frozen=True)
class OperatorGains:
    """Tuning of the scripted path tracker.

    The command period bounds how far one emitted delta_des may move
    from the live steering angle, mimicking a rate-limited wheel.
    """

    k_lat: float = 0.6
    k_head: float = 1.2
    lookahead_min: float = 2.0
    lookahead_gain: float = 0.5
    cmd_period: float = 0.05


def scripted_operator(z: VehicleState, path: Path, v_ref: float,
                      params: VehicleParams,
                      gains: OperatorGains = OperatorGains()) -> OperatorCommand:
    """Lookahead path tracker standing in for the human operator.

    Steers so the lookahead point's lateral offset and heading error
    cancel (curvature command mapped through the bicycle relation
    delta = atan(L*kappa)); always requests v_ref.
    """
    s, _ = path.project(z.x, z.y)
    la = max(gains.lookahead_min, gains.lookahead_gain * z.v)
    px, py = path.point_at(s + la)
    dx, dy = px - z.x, py - z.y
    y_body = -math.sin(z.theta) * dx + math.cos(z.theta) * dy
    e_psi = normalize_angle(path.heading_at(s + la) - z.theta)
    kappa_cmd = gains.k_lat * y_body / (la * la) + gains.k_head * e_psi / la
    raw = clamp(math.atan(params.wheelbase * kappa_cmd),
                -params.delta_max, params.delta_max)
    slew = params.ddelta_max * gains.cmd_period
    delta_des = z.delta + clamp(raw - z.delta, -slew, slew)
    return OperatorCommand(delta_des=delta_des, v_des=v_ref)


def plant_step(z: VehicleState, delta_des: float, v_cmd: float,
               params: VehicleParams, dt: float,
               a_prev: float = 0.0) -> tuple[VehicleState, float]:
    """One actuator tick toward (delta_des, v_cmd).

    Steering slews toward delta_des at no more than ddelta_max; the
    acceleration is the one-tick proportional command clamped to
    [a_min, a_max] and jerk-limited against the previous applied
    acceleration. Returns the new state and the applied acceleration.
    """
    if dt <= 0:
        raise ValueError(f"plant step time must be positive, got {dt}")
    rate = clamp((delta_des - z.delta) / dt, -params.ddelta_max, params.ddelta_max)
    a_des = clamp((v_cmd - z.v) / dt, params.a_min, params.a_max)
    a = clamp(a_des, a_prev - params.j_max * dt, a_prev + params.j_max * dt)
    return euler_step(z, ControlInput(delta_rate=rate, a=a), dt, params), a


class Plant:
    """Actuator state between ticks: the pose, the jerk-limit memory,
    and the realized acceleration the controller measures.

    a_applied is what the actuator commanded last tick (the jerk chain
    and the log use it; euler_step replays exactly from it). a_meas is
    the realized (v1 - v0)/dt, which differs at the v >= 0 clamp and is
    what a real vehicle would report as a_curr.
    """

    def __init__(self, z0: VehicleState, params: VehicleParams):
        self.state = z0
        self.params = params
        self.a_applied = 0.0
        self.a_meas = 0.0

    def step(self, delta_des: float, v_cmd: float, dt: float) -> VehicleState:
        z = self.state
        z1, a = plant_step(z, delta_des, v_cmd, self.params, dt, self.a_applied)
        self.a_applied = a
        self.a_meas = (z1.v - z.v) / dt
        self.state = z1
        return z1


@dataclass(frozen=True)
class LogRow:
    t: float
    x: float
    y: float
    theta: float
    delta: float
    v: float
    a: float
    delta_des: float
    v_des: float
    v_cmd: float
    s_safe: float
    override_active: bool
    compute_time: float        # wall-clock ms; reported via the summary only
    solver_status: str


@dataclass
class SimLog:
    """Per-tick telemetry of one run.

    Serialization keeps every control-loop quantity at 9 significant
    digits; wall-clock compute times stay out of the text form so that
    identical runs write identical bytes (they surface as summary
    statistics instead).
    """

    scenario: str
    period: float
    rows: list[LogRow] = field(default_factory=list)
    terminated: str = "duration"     # duration | standstill

    def to_text(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for r in self.rows:
            vals = [f"{getattr(r, c):.9g}" for c in LOG_COLUMNS[:11]]
            vals.append("1" if r.override_active else "0")
            vals.append(r.solver_status)
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str, scenario: str = "", period: float = 0.0) -> "SimLog":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or tuple(lines[0].split(",")) != LOG_COLUMNS:
            raise ValueError("log header does not match the schema")
        rows = []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != len(LOG_COLUMNS):
                raise ValueError(f"log row has {len(parts)} fields: {ln!r}")
            nums = [float(p) for p in parts[:11]]
            rows.append(LogRow(*nums, override_active=parts[11] == "1",
                               compute_time=0.0, solver_status=parts[12]))
        return SimLog(scenario=scenario, period=period, rows=rows)


def body_polygon(z: VehicleState, params: VehicleParams) -> np.ndarray:
    """World-frame corners of the body rectangle centered on the pose."""
    hl, hw = 0.5 * params.body_length, 0.5 * params.body_width
    c, s = math.cos(z.theta), math.sin(z.theta)
    corners = np.array([(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)])
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + (z.x, z.y)


def obstacles_in_body_frame(z: VehicleState,
                            obstacles) -> list[Obstacle]:
    """Obstacle polygons re-expressed in the frame of the given pose."""
    c, s = math.cos(z.theta), math.sin(z.theta)
    out = []
    for o in obstacles:
        verts = o.as_array()
        dx = verts[:, 0] - z.x
        dy = verts[:, 1] - z.y
        out.append(Obstacle(vertices=tuple(
            (float(c * px + s * py), float(-s * px + c * py))
            for px, py in zip(dx, dy))))
    return out


def run_scenario(scn: Scenario, mode: str = "scripted", command_source=None,
                 command_timeout: float = 0.5) -> SimLog:
    """Run the closed loop until the duration elapses or the vehicle has
    been at standstill with a zero velocity command for 2 s.

    In "scripted" mode the bundled path tracker drives. In "external"
    mode `command_source(t, z)` supplies OperatorCommand or None per
    tick; after command_timeout without one, the desired velocity is
    treated as zero while the last steering request is held (steering
    stays the operator's, velocity is safety's).
    """
    if mode not in ("scripted", "external"):
        raise ValueError(f"unknown mode {mode!r}")
    controller = AccController(scn.params, scn.cfg, scn.weights)
    plant = Plant(scn.start_state, scn.params)
    path = Path(scn.reference_path)
    dt = scn.cfg.t_s
    log = SimLog(scenario=scn.name, period=dt)

    last_cmd = OperatorCommand(delta_des=scn.start_state.delta, v_des=0.0)
    last_rx = -math.inf
    hold_ticks = int(round(STANDSTILL_HOLD / dt))
    still = 0
    n_ticks = int(round(scn.duration / dt))
    for k in range(n_ticks):
        t = k * dt
        z = plant.state
        if mode == "scripted":
            cmd = scripted_operator(z, path, scn.v_ref, scn.params)
        else:
            fresh = command_source(t, z) if command_source is not None else None
            if fresh is not None:
                last_cmd, last_rx = fresh, t
            cmd = last_cmd
            if t - last_rx > command_timeout:
                cmd = replace(cmd, v_des=0.0)
        cmd = cmd.clamped(scn.params, scn.cfg)

        out = controller.tick(z.delta, z.v, plant.a_meas, cmd.v_des,
                              obstacles_in_body_frame(z, scn.obstacles))
        status = out.solution.status if out.solution is not None else "fallback"
        plant.step(cmd.delta_des, out.v_cmd, dt)
        # a is the acceleration the actuator applies leaving this row's
        # state, so euler_step replays the log exactly.
        log.rows.append(LogRow(
            t=t, x=z.x, y=z.y, theta=z.theta, delta=z.delta, v=z.v,
            a=plant.a_applied, delta_des=cmd.delta_des, v_des=cmd.v_des,
            v_cmd=out.v_cmd, s_safe=out.s_safe,
            override_active=out.override_active,
            compute_time=out.compute_time, solver_status=status))

        if z.v <= STANDSTILL_EPS and out.v_cmd <= STANDSTILL_EPS:
            still += 1
            if still >= hold_ticks:
                log.terminated = "standstill"
                break
        else:
            still = 0
    return log


def min_obstacle_clearance(log: SimLog, scn: Scenario) -> float:
    """Smallest distance between the exact body rectangle and any
    obstacle over the whole log (0 means touch or overlap).

    Uses an exact polygon-distance routine independent of the
    controller's ellipse approximation, so summaries double as a
    collision audit.
    """
    from shapely.geometry import Polygon

    if not scn.obstacles:
        return math.inf
    polys = [Polygon(o.vertices) for o in scn.obstacles]
    best = math.inf
    for r in log.rows:
        z = VehicleState(x=r.x, y=r.y, theta=r.theta, delta=r.delta, v=r.v)
        body = Polygon(body_polygon(z, scn.params))
        for p in polys:
            d = body.distance(p)
            if d < best:
                best = d
            if best == 0.0:
                return 0.0
    return float(best)


def summarize(log: SimLog, scn: Scenario) -> dict:
    """Sidecar summary: safety margins, override duty cycle, timing."""
    times = np.array([r.compute_time for r in log.rows]) if log.rows else np.zeros(1)
    overrides = sum(1 for r in log.rows if r.override_active)
    clearance = min_obstacle_clearance(log, scn)
    last = log.rows[-1] if log.rows else None
    return {
        "scenario": log.scenario,
        "ticks": len(log.rows),
        "duration": round(len(log.rows) * log.period, 9),
        "terminated": log.terminated,
        "min_obstacle_clearance": None if math.isinf(clearance) else clearance,
        "collision": clearance <= 0.0,
        "override_duty_cycle": overrides / len(log.rows) if log.rows else 0.0,
        "mean_compute_ms": float(times.mean()),
        "p99_compute_ms": float(np.percentile(times, 99)),
        "final_x": last.x if last else None,
        "final_v": last.v if last else None,
    }


def write_run(log: SimLog, scn: Scenario, out_dir, overrides=()) -> dict:
    """Write the log, the sidecar summary, and plot-ready series files.

    Returns the summary dict (with file paths added).
    """
    from pathlib import Path as FsPath

    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"{log.scenario}.log"
    log_path.write_text(log.to_text())

    summary = summarize(log, scn)
    summary["overrides"] = list(overrides)
    summary["log"] = str(log_path)

    series = {
        "velocity.csv": ("t,v,v_des,v_cmd",
                         lambda r: (r.t, r.v, r.v_des, r.v_cmd)),
        "steering.csv": ("t,delta,delta_des", lambda r: (r.t, r.delta, r.delta_des)),
        "trace.csv": ("x,y", lambda r: (r.x, r.y)),
    }
    for fname, (header, pick) in series.items():
        lines = [header]
        lines += [",".join(f"{v:.9g}" for v in pick(r)) for r in log.rows]
        (out / fname).write_text("\n".join(lines) + "\n")

    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
