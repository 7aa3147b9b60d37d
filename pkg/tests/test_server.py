"""Bridge tests: session safety rules on a fake clock, wire encoding,
and the websocket endpoint end to end on a test client."""

import json
import math

import pytest

from teleacc.scenario import load_scenario, resolve_scenario
from teleacc.server import (PROTOCOL_VERSION, Session, build_app,
                            decimate_tree, encode)
from teleacc.tree import ControllerConfig, Obstacle, plan_tree
from teleacc.vehicle import VehicleParams, VehicleState


class FakeClock:
    def __init__(self, t: float = 0.0):
        self.t = t

    def __call__(self) -> float:
        return self.t


@pytest.fixture(scope="module")
def road():
    return load_scenario(resolve_scenario("empty-road"))


@pytest.fixture(scope="module")
def fig4():
    return load_scenario(resolve_scenario("paper-fig4"))


def make_session(scn, t0: float = 0.0):
    clock = FakeClock(t0)
    return Session(scn, clock=clock), clock


# ------------------------------------------------------------ command intake

def test_new_session_is_failsafe_until_first_command(road):
    s, clock = make_session(road)
    assert s.failsafe_engaged
    msg = s.tick()
    assert msg["failsafe_engaged"] is True
    assert msg["v_des"] == 0.0
    s.ingest_command('{"steering": 0.0, "velocity": 4.0}')
    msg = s.tick()
    assert msg["failsafe_engaged"] is False
    assert msg["v_des"] == 4.0


@pytest.mark.parametrize("frame", [
    "not json at all",
    '"just a string"',
    "[1, 2, 3]",
    '{"type": "telemetry", "steering": 0.0, "velocity": 1.0}',
    '{"velocity": 1.0}',
    '{"steering": 0.1}',
    '{"steering": "0.1", "velocity": 1.0}',
    '{"steering": true, "velocity": 1.0}',
    '{"steering": 0.1, "velocity": null}',
])
def test_malformed_frames_dropped_and_counted(road, frame):
    s, _ = make_session(road)
    assert s.ingest_command(frame) is None
    assert s.stats.malformed == 1
    assert s.stats.commands == 0
    assert s.failsafe_engaged    # junk never feeds the mailbox


def test_wellformed_variants_accepted(road):
    s, _ = make_session(road)
    assert s.ingest_command('{"steering": 0.1, "velocity": 3}') is not None
    assert s.ingest_command(
        '{"type": "command", "steering": 0, "velocity": 0}') is not None
    assert s.ingest_command(
        '{"steering": 0.0, "velocity": 1.0, "extra": "ignored"}') is not None
    assert s.stats.commands == 3
    assert s.stats.malformed == 0


def test_command_values_clamped_to_limits(road):
    s, _ = make_session(road)
    cmd = s.ingest_command('{"steering": 9.9, "velocity": -1.0}')
    assert cmd.delta_des == road.params.delta_max
    assert cmd.v_des == 0.0
    cmd = s.ingest_command('{"steering": NaN, "velocity": Infinity}')
    assert cmd.delta_des == 0.0 and cmd.v_des == 0.0


def test_failsafe_timeout_is_strict(road):
    s, clock = make_session(road)
    s.ingest_command('{"steering": 0.0, "velocity": 4.0}')
    clock.t = 0.5
    assert s.tick()["failsafe_engaged"] is False   # exactly at the limit
    clock.t = 0.5001
    msg = s.tick()
    assert msg["failsafe_engaged"] is True
    assert msg["v_des"] == 0.0


def test_failsafe_brakes_to_standstill(road):
    s, clock = make_session(road)
    s.ingest_command('{"steering": 0.0, "velocity": 5.0}')
    clock.t = 10.0    # stream went silent long ago
    for _ in range(200):
        s.tick()
    assert s.plant.state.v <= 1e-3


# ------------------------------------------------------------------- ticking

def test_tick_sequencing_and_log(road):
    s, _ = make_session(road)
    msgs = [s.tick() for _ in range(3)]
    assert [m["seq"] for m in msgs] == [0, 1, 2]
    assert [m["t"] for m in msgs] == [0.0, road.cfg.t_s, 2 * road.cfg.t_s]
    assert s.stats.ticks == 3
    assert len(s.log.rows) == 3      # exactly one plant step per tick
    assert all(m["type"] == "state" and m["version"] == PROTOCOL_VERSION
               for m in msgs)


def test_tick_moves_vehicle_under_live_command(road):
    s, _ = make_session(road)
    s.ingest_command('{"steering": 0.0, "velocity": 5.0}')
    first = s.tick()
    for _ in range(10):
        last = s.tick()
    assert last["pose"]["x"] > first["pose"]["x"]
    assert last["v"] > 4.5
    assert last["v_cmd"] <= 5.0 + 1e-9


def test_internal_failure_reemits_last_state_degraded(road):
    s, _ = make_session(road)
    s.ingest_command('{"steering": 0.0, "velocity": 5.0}')
    good = s.tick()
    assert good["degraded"] is False

    class Broken:
        def tick(self, *a, **kw):
            raise RuntimeError("synthetic fault")

    s.controller = Broken()
    msg = s.tick()
    assert msg["degraded"] is True
    assert msg["seq"] == good["seq"] + 1
    # telemetry freezes at the last known snapshot
    assert msg["pose"] == good["pose"] and msg["v"] == good["v"]
    # but the plant still advanced, on the conservative ramp
    assert s.stats.ticks == 2
    assert len(s.log.rows) == 2
    assert s.log.rows[-1].solver_status == "fallback"
    # held fault: speed keeps bleeding off
    for _ in range(60):
        s.tick()
    assert s.plant.state.v < good["v"]


def test_degraded_flag_clears_after_recovery(road):
    s, _ = make_session(road)
    s.ingest_command('{"steering": 0.0, "velocity": 5.0}')
    s.tick()
    real = s.controller

    class Broken:
        def tick(self, *a, **kw):
            raise RuntimeError("synthetic fault")

    s.controller = Broken()
    assert s.tick()["degraded"] is True
    s.controller = real
    assert s.tick()["degraded"] is False


# ----------------------------------------------------------------- tree wire

def test_decimated_tree_bounds_and_root(fig4):
    s, _ = make_session(fig4)
    msg = s.tick()
    tree = msg["tree"]
    assert 1 <= len(tree) <= 5
    z = fig4.start_state
    for entry in tree:
        assert 2 <= len(entry["points"]) <= 10
        assert entry["points"][0] == pytest.approx([z.x, z.y])
        ci = entry["collision_index"]
        assert ci is None or 0 <= ci < len(entry["points"])


def test_decimate_tree_world_transform():
    params, cfg = VehicleParams(), ControllerConfig()
    body = VehicleState(x=0.0, y=0.0, theta=0.0, delta=0.0, v=5.0)
    tree = plan_tree(body, [], params, cfg)
    z = VehicleState(x=3.0, y=-2.0, theta=math.pi / 2, delta=0.0, v=5.0)
    out = decimate_tree(tree, z)
    assert len(out) == 5
    straight = out[len(out) // 2]
    assert straight["collision_index"] is None
    # body +x maps to world +y for a quarter-turn pose
    xs = [p[0] for p in straight["points"]]
    ys = [p[1] for p in straight["points"]]
    assert xs == pytest.approx([3.0] * len(xs), abs=1e-9)
    assert ys[-1] > ys[0]


def test_decimate_tree_flags_blocked_member():
    params, cfg = VehicleParams(), ControllerConfig()
    wall = Obstacle(vertices=((4.0, -1.0), (6.0, -1.0), (6.0, 1.0), (4.0, 1.0)))
    z = VehicleState(x=0.0, y=0.0, theta=0.0, delta=0.0, v=5.0)
    tree = plan_tree(z, [wall], params, cfg)
    out = decimate_tree(tree, z)
    straight = out[len(out) // 2]
    assert straight["collision_index"] is not None


def test_decimate_tree_handles_empty():
    z = VehicleState(x=0.0, y=0.0, theta=0.0, delta=0.0, v=0.0)
    assert decimate_tree(None, z) == []


# ----------------------------------------------------------------- encoding

def test_encode_is_compact_and_lossless(road):
    s, _ = make_session(road)
    s.ingest_command('{"steering": 0.123456789012345, "velocity": 4.999999999}')
    msg = s.tick()
    text = encode(msg)
    assert " " not in text.split('"tree"')[0]
    assert json.loads(text) == msg


def test_session_info_contents(road):
    s, _ = make_session(road)
    info = s.session_info()
    assert info["type"] == "session-info"
    assert info["version"] == PROTOCOL_VERSION
    assert info["scenario"] == road.name
    assert info["tick_period"] == road.cfg.t_s
    assert info["command_timeout"] == 0.5
    assert info["limits"] == {"delta_max": road.params.delta_max,
                              "ddelta_max": road.params.ddelta_max,
                              "v_des_max": road.cfg.v_des_max}
    assert info["body"]["wheelbase"] == road.params.wheelbase
    assert len(info["path"]) >= 2
    assert json.loads(encode(info)) == info


# ------------------------------------------------------------ socket layer

def ws_client(scn):
    from fastapi.testclient import TestClient
    return TestClient(build_app(scn))


def test_websocket_handshake_then_states(road):
    client = ws_client(road)
    with client.websocket_connect("/session") as ws:
        hello = json.loads(ws.receive_text())
        assert hello["type"] == "session-info"
        assert hello["scenario"] == road.name
        seqs = []
        for _ in range(4):
            msg = json.loads(ws.receive_text())
            assert msg["type"] == "state"
            seqs.append(msg["seq"])
        assert seqs == [0, 1, 2, 3]


def test_websocket_command_reaches_controller(road):
    client = ws_client(road)
    with client.websocket_connect("/session") as ws:
        ws.receive_text()
        ws.send_text('{"steering": 0.0, "velocity": 3.5}')
        for _ in range(6):
            msg = json.loads(ws.receive_text())
            if not msg["failsafe_engaged"]:
                assert msg["v_des"] == 3.5
                break
        else:
            pytest.fail("command never reached the loop")


def test_websocket_survives_garbage(road):
    client = ws_client(road)
    with client.websocket_connect("/session") as ws:
        ws.receive_text()
        ws.send_text("garbage {{{")
        msg = json.loads(ws.receive_text())
        assert msg["type"] == "state"
        health = client.get("/health").json()
        assert health["malformed_commands"] >= 1


def test_health_counts_sessions(road):
    client = ws_client(road)
    assert client.get("/health").json()["sessions"] == 0
    with client.websocket_connect("/session") as ws:
        ws.receive_text()
        ws.receive_text()
        health = client.get("/health").json()
        assert health["status"] == "ok"
        assert health["sessions"] == 1
        assert health["ticks"] >= 1
        assert health["tick_rate_hz"] == pytest.approx(20.0)
    assert client.get("/health").json()["sessions"] == 0
