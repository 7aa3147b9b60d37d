"""Teleoperation bridge: operator commands in, controller + plant ticks
at 20 Hz, state telemetry out.

The session logic is a plain synchronous object with an injectable
clock, so every safety rule (command timeout, failsafe, degraded
emission) is testable without sockets or an event loop. The network
shell wraps it in one receive task and one tick task per connection;
the two meet only at the latest-command mailbox, which keeps just the
newest command (last-writer-wins).

Wire protocol: JSON text frames, one inbound type ("command"), two
outbound ("session-info" once on connect, "state" every tick). Field
documentation lives in docs/protocol.md. Floats ride as plain JSON
numbers at full precision, so encode/decode round-trips exactly.
"""
from __future__ import annotations

import asyncio
import json
import math
import time
from dataclasses import dataclass

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .controller import AccController, OperatorCommand, fallback_command
from .scenario import Scenario
from .sim import LogRow, Plant, SimLog, obstacles_in_body_frame
from .tree import TreeResult
from .vehicle import VehicleState

PROTOCOL_VERSION = 1
COMMAND_TIMEOUT = 0.5
TREE_MAX_TRAJECTORIES = 5
TREE_MAX_POINTS = 10


def decimate_tree(tree: TreeResult | None, z: VehicleState,
                  max_trajectories: int = TREE_MAX_TRAJECTORIES,
                  max_points: int = TREE_MAX_POINTS) -> list[dict]:
    """World-frame outline of the braking fan, thinned for the wire.

    Picks evenly spread fan members and horizon samples; each entry
    carries its polyline and the decimated index of the first colliding
    point (None when the member is collision-free).
    """
    if tree is None or not tree.trajectories:
        return []
    ct, st = math.cos(z.theta), math.sin(z.theta)
    m = len(tree.trajectories)
    picks = sorted({round(i * (m - 1) / (max_trajectories - 1))
                    for i in range(min(max_trajectories, m))})
    out = []
    for ti in picks:
        traj = tree.trajectories[ti]
        n = len(traj.states)
        idx = sorted({round(i * (n - 1) / (max_points - 1))
                      for i in range(min(max_points, n))})
        pts = []
        collide_at = None
        for out_i, si in enumerate(idx):
            s = traj.states[si]
            pts.append([z.x + ct * s.x - st * s.y, z.y + st * s.x + ct * s.y])
            if (traj.first_collision_index is not None and collide_at is None
                    and si >= traj.first_collision_index):
                collide_at = out_i
        out.append({"points": pts, "collision_index": collide_at})
    return out


@dataclass
class SessionStats:
    ticks: int = 0
    skipped: int = 0
    malformed: int = 0
    commands: int = 0


class Session:
    """One operator, one vehicle: mailbox, failsafe, tick loop state."""

    def __init__(self, scn: Scenario, clock=time.monotonic,
                 command_timeout: float = COMMAND_TIMEOUT):
        self.scn = scn
        self.clock = clock
        self.command_timeout = command_timeout
        self.controller = AccController(scn.params, scn.cfg, scn.weights)
        self.plant = Plant(scn.start_state, scn.params)
        self.latest: OperatorCommand = OperatorCommand(
            delta_des=scn.start_state.delta, v_des=0.0)
        self.last_rx = -math.inf
        self.failsafe_engaged = True   # no command yet counts as stale
        self.degraded = False
        self.connected = False
        self.seq = 0
        self.stats = SessionStats()
        self.log = SimLog(scenario=scn.name, period=scn.cfg.t_s)
        self._last_msg: dict | None = None

    # -- inbound ----------------------------------------------------------

    def ingest_command(self, text: str) -> OperatorCommand | None:
        """Parse, validate, clamp, stamp. Junk is dropped and counted,
        never fatal; unknown fields are ignored by construction."""
        try:
            doc = json.loads(text)
        except (ValueError, TypeError):
            self.stats.malformed += 1
            return None
        if not isinstance(doc, dict) or doc.get("type", "command") != "command":
            self.stats.malformed += 1
            return None
        steering = doc.get("steering")
        velocity = doc.get("velocity")
        ok = (isinstance(steering, (int, float)) and not isinstance(steering, bool)
              and isinstance(velocity, (int, float)) and not isinstance(velocity, bool))
        if not ok:
            self.stats.malformed += 1
            return None
        now = self.clock()
        cmd = OperatorCommand(
            delta_des=float(steering), v_des=float(velocity), timestamp=now,
        ).clamped(self.scn.params, self.scn.cfg)
        self.latest = cmd
        self.last_rx = now
        self.stats.commands += 1
        return cmd

    # -- tick -------------------------------------------------------------

    def tick(self) -> dict:
        """One controller + plant step; returns the state message.

        The failsafe zeroes the desired velocity while holding the last
        steering request. An internal failure re-emits the last-known
        state flagged degraded; the plant still advances exactly once,
        on a conservative braking command.
        """
        cfg = self.scn.cfg
        self.failsafe_engaged = (self.clock() - self.last_rx) > self.command_timeout
        cmd = self.latest
        v_des = 0.0 if self.failsafe_engaged else cmd.v_des
        z = self.plant.state
        t = self.stats.ticks * cfg.t_s

        try:
            out = self.controller.tick(
                z.delta, z.v, self.plant.a_meas, v_des,
                obstacles_in_body_frame(z, self.scn.obstacles))
            msg = {
                "type": "state",
                "version": PROTOCOL_VERSION,
                "seq": self.seq,
                "t": t,
                "pose": {"x": z.x, "y": z.y, "theta": z.theta},
                "delta": z.delta,
                "v": z.v,
                "v_des": v_des,
                "v_cmd": out.v_cmd,
                "s_safe": out.s_safe,
                "override_active": out.override_active,
                "failsafe_engaged": self.failsafe_engaged,
                "degraded": False,
                "tree": decimate_tree(out.tree, z),
            }
            v_cmd = out.v_cmd
            status = out.solution.status if out.solution is not None else "fallback"
            self.degraded = False
        except Exception:
            v_cmd = fallback_command(z.v, None, self.scn.params, cfg)
            status = "fallback"
            self.degraded = True
            msg = dict(self._last_msg) if self._last_msg is not None else {
                "type": "state", "version": PROTOCOL_VERSION,
                "pose": {"x": z.x, "y": z.y, "theta": z.theta},
                "delta": z.delta, "v": z.v, "v_des": v_des, "v_cmd": v_cmd,
                "s_safe": 0.0, "override_active": True,
                "failsafe_engaged": self.failsafe_engaged, "tree": [],
            }
            msg["seq"] = self.seq
            msg["degraded"] = True

        self.plant.step(cmd.delta_des, v_cmd, cfg.t_s)
        self.log.rows.append(LogRow(
            t=t, x=z.x, y=z.y, theta=z.theta, delta=z.delta, v=z.v,
            a=self.plant.a_applied, delta_des=cmd.delta_des, v_des=v_des,
            v_cmd=v_cmd, s_safe=msg["s_safe"],
            override_active=bool(msg["override_active"]),
            compute_time=0.0, solver_status=status))
        self.seq += 1
        self.stats.ticks += 1
        self._last_msg = msg
        return msg

    def session_info(self) -> dict:
        scn = self.scn
        p = scn.params
        return {
            "type": "session-info",
            "version": PROTOCOL_VERSION,
            "scenario": scn.name,
            "tick_period": scn.cfg.t_s,
            "command_timeout": self.command_timeout,
            "limits": {
                "delta_max": p.delta_max,
                "ddelta_max": p.ddelta_max,
                "v_des_max": scn.cfg.v_des_max,
            },
            "body": {"length": p.body_length, "width": p.body_width,
                     "wheelbase": p.wheelbase},
            "path": [list(pt) for pt in scn.reference_path],
            "obstacles": [[list(v) for v in o.vertices] for o in scn.obstacles],
        }


def encode(msg: dict) -> str:
    return json.dumps(msg, separators=(",", ":"))


def build_app(scn: Scenario, command_timeout: float = COMMAND_TIMEOUT) -> FastAPI:
    """FastAPI application: websocket endpoint plus health report.

    Each websocket connection owns an isolated Session. The tick task
    schedules against absolute deadlines, so the long-run average period
    stays at the controller period even though individual ticks jitter;
    a tick that misses a whole period is counted as skipped, never
    silently dropped.
    """
    app = FastAPI()
    sessions: set[Session] = set()
    started = time.monotonic()

    @app.get("/health")
    def health() -> dict:
        ticks = sum(s.stats.ticks for s in sessions)
        skipped = sum(s.stats.skipped for s in sessions)
        malformed = sum(s.stats.malformed for s in sessions)
        return {
            "status": "ok",
            "scenario": scn.name,
            "sessions": len(sessions),
            "tick_rate_hz": 1.0 / scn.cfg.t_s,
            "uptime": time.monotonic() - started,
            "ticks": ticks,
            "skipped_ticks": skipped,
            "malformed_commands": malformed,
        }

    async def _receiver(ws: WebSocket, session: Session) -> None:
        while True:
            session.ingest_command(await ws.receive_text())

    async def _ticker(ws: WebSocket, session: Session) -> None:
        period = scn.cfg.t_s
        next_deadline = time.monotonic() + period
        while True:
            delay = next_deadline - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                # an entire period has passed: count each missed slot
                missed = int(-delay // period)
                session.stats.skipped += missed
                next_deadline += missed * period
            next_deadline += period
            await ws.send_text(encode(session.tick()))

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        session = Session(scn, command_timeout=command_timeout)
        session.connected = True
        sessions.add(session)
        try:
            await ws.send_text(encode(session.session_info()))
            recv = asyncio.create_task(_receiver(ws, session))
            tick = asyncio.create_task(_ticker(ws, session))
            done, pending = await asyncio.wait(
                {recv, tick}, return_when=asyncio.FIRST_EXCEPTION)
            for task in pending:
                task.cancel()
            for task in done:
                exc = task.exception()
                if exc is not None and not isinstance(exc, WebSocketDisconnect):
                    raise exc
        except WebSocketDisconnect:
            pass
        finally:
            session.connected = False
            sessions.discard(session)

    return app


def serve(scn: Scenario, port: int = 8700, host: str = "127.0.0.1",
          command_timeout: float = COMMAND_TIMEOUT) -> None:
    """Run the bridge until interrupted.

    The socket is bound here, before uvicorn takes over, so a taken
    port surfaces as OSError instead of a logged-and-swallowed startup
    failure.
    """
    import socket

    import uvicorn

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    config = uvicorn.Config(build_app(scn, command_timeout), host=host,
                            port=port, log_level="warning")
    uvicorn.Server(config).run(sockets=[sock])
