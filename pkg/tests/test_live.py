import numpy as np
import pytest

from hjadapt.grid import Grid, ValueField
from hjadapt.live import (
    MSG_ACK,
    MSG_SLICE,
    MSG_STATE,
    SCHEMA_VERSION,
    LiveSession,
    create_app,
    enqueue_with_backpressure,
    slice_extract,
)
from hjadapt.sim import Scenario
from hjadapt.solver import ConstraintFunction, SolverSettings


def square_grid(n=41, half=1.0):
    return Grid(lower=(-half, -half), upper=(half, half), counts=(n, n))


def mini_scenario():
    g = square_grid(n=41, half=2.0)
    return Scenario(
        name="mini",
        model_name="double_integrator",
        model_params={"u_max": 1.0},
        grid=g,
        constraint=ConstraintFunction.for_grid(
            g, position_dims=(0,), margin=0.1, domain_dims=(0, 1)
        ),
        start_state=(-1.4, 0.0),
        goal_state=(0.9, 0.0),
        position_dims=(0,),
        goal_dims=(0,),
        goal_tolerance=0.1,
        duration=10.0,
        solver=SolverSettings(fd_order=2, max_iterations=3000),
    )


# --- slice extraction ------------------------------------------------------------


def test_slice_zero_line_of_linear_field():
    g = square_grid()
    xs = g.states()
    field = ValueField(grid=g, values=xs[..., 0].copy())
    plane, contours, axes = slice_extract(field, {"dims": [0, 1]})
    assert plane.shape == (41, 41)
    assert len(contours) == 1
    pts = np.asarray(contours[0])
    # zero set of h = x is the vertical line x = 0, any y
    assert np.allclose(pts[:, 0], 0.0, atol=1e-9)
    assert pts[:, 1].min() == pytest.approx(-1.0)
    assert pts[:, 1].max() == pytest.approx(1.0)


def test_slice_all_positive_has_no_contour():
    g = square_grid()
    field = ValueField(grid=g, values=np.ones(g.counts))
    _, contours, _ = slice_extract(field, {"dims": [0, 1]})
    assert contours == []


def test_slice_circle_contour_tracks_radius():
    g = square_grid(n=81)
    xs = g.states()
    r = 0.6
    field = ValueField(grid=g,
                       values=np.linalg.norm(xs, axis=-1) - r)
    _, contours, _ = slice_extract(field, {"dims": [0, 1]})
    assert len(contours) == 1
    pts = np.asarray(contours[0])
    radial = np.linalg.norm(pts, axis=1)
    assert np.max(np.abs(radial - r)) <= max(g.spacing)


def test_slice_3d_fixed_dim_snaps_to_node():
    g = Grid(lower=(-1.0, -1.0, 0.0), upper=(1.0, 1.0, 1.0),
             counts=(21, 21, 11))
    xs = g.states()
    field = ValueField(grid=g, values=xs[..., 0] + xs[..., 2])
    plane, _, _ = slice_extract(
        field, {"dims": [0, 1], "fixed": {2: 0.52}}
    )
    # 0.52 snaps to the node at 0.5
    assert plane[0, 0] == pytest.approx(-1.0 + 0.5)
    with pytest.raises(ValueError):
        slice_extract(field, {"dims": [0, 1]})  # dim 2 neither sliced nor fixed
    with pytest.raises(ValueError):
        slice_extract(field, {"dims": [0, 0], "fixed": {2: 0.0}})


def test_slice_transposed_dims():
    g = square_grid()
    xs = g.states()
    field = ValueField(grid=g, values=xs[..., 0].copy())
    plane_xy, _, _ = slice_extract(field, {"dims": [0, 1]})
    plane_yx, _, _ = slice_extract(field, {"dims": [1, 0]})
    assert np.array_equal(plane_yx, plane_xy.T)


# --- outbound backpressure --------------------------------------------------------


def state_msg(i):
    return {"type": MSG_STATE, "step": i}


def slice_msg(v):
    return {"type": MSG_SLICE, "version": v}


def test_backpressure_never_drops_state_updates():
    from collections import deque

    q = deque()
    for i in range(10):
        enqueue_with_backpressure(q, state_msg(i), maxlen=4)
    steps = [m["step"] for m in q if m["type"] == MSG_STATE]
    # at capacity the oldest goes, but ordering of survivors is intact
    assert steps == sorted(steps)
    assert steps[-1] == 9


def test_backpressure_sheds_slices_before_states():
    from collections import deque

    q = deque()
    enqueue_with_backpressure(q, slice_msg(1), maxlen=3)
    enqueue_with_backpressure(q, state_msg(0), maxlen=3)
    enqueue_with_backpressure(q, state_msg(1), maxlen=3)
    # queue full: a new state update evicts the slice, not a state
    enqueue_with_backpressure(q, state_msg(2), maxlen=3)
    types = [m["type"] for m in q]
    assert types == [MSG_STATE] * 3
    # a new slice at capacity is simply dropped
    assert enqueue_with_backpressure(q, slice_msg(2), maxlen=3) is False
    assert len(q) == 3


def test_backpressure_coalesces_slices_newest_wins():
    from collections import deque

    q = deque()
    enqueue_with_backpressure(q, slice_msg(1), maxlen=10)
    enqueue_with_backpressure(q, state_msg(0), maxlen=10)
    enqueue_with_backpressure(q, slice_msg(2), maxlen=10)
    versions = [m["version"] for m in q if m["type"] == MSG_SLICE]
    assert versions == [2]


# --- session stepping and commands -----------------------------------------------


@pytest.fixture(scope="module")
def session_scenario():
    return mini_scenario()


def fresh_session(scenario):
    return LiveSession(scenario, slice_rate_hz=1000.0)


def test_session_emits_state_updates(session_scenario):
    sess = fresh_session(session_scenario)
    msgs = sess.session_step()
    states = [m for m in msgs if m["type"] == MSG_STATE]
    assert len(states) == 1
    m = states[0]
    assert m["schema_version"] == SCHEMA_VERSION
    assert m["step"] == 1
    assert len(m["x"]) == 2 and m["h"] > 0
    # first step also carries the initial field slice
    assert any(msg["type"] == MSG_SLICE for msg in msgs)


def test_command_ack_carries_new_revision(session_scenario):
    sess = fresh_session(session_scenario)
    rev0 = sess.state.revision
    sess.submit({"type": "add_obstacle", "command_id": "c1",
                 "shape": {"kind": "box", "lows": [0.5], "highs": [0.7]}})
    msgs = sess.session_step()
    acks = [m for m in msgs if m["type"] == MSG_ACK]
    assert len(acks) == 1
    assert acks[0]["status"] == "applied"
    assert acks[0]["command_id"] == "c1"
    assert acks[0]["revision"] == rev0 + 1
    oid = acks[0]["obstacle_id"]
    assert any(s.id == oid for s in sess.lane.env.constraint.shapes)


def test_command_applies_before_the_same_steps_state(session_scenario):
    """A command and the state update from the same step must be causally
    ordered: the ack precedes the state update and the solver already sees
    the new environment when the state is produced."""
    sess = fresh_session(session_scenario)
    sess.submit({"type": "add_obstacle",
                 "shape": {"kind": "box", "lows": [0.5], "highs": [0.7]}})
    msgs = sess.session_step()
    kinds = [m["type"] for m in msgs]
    assert kinds.index(MSG_ACK) < kinds.index(MSG_STATE)
    state = next(m for m in msgs if m["type"] == MSG_STATE)
    assert state["field_version"] >= 1  # refinement work already granted


def test_unknown_and_malformed_commands_rejected(session_scenario):
    sess = fresh_session(session_scenario)
    sess.submit({"type": "teleport"})
    sess.submit({"type": "add_obstacle", "shape": {"kind": "circle"}})
    msgs = sess.session_step()
    acks = [m for m in msgs if m["type"] == MSG_ACK]
    assert [a["status"] for a in acks] == ["rejected", "rejected"]
    assert "unknown command" in acks[0]["reason"]


def test_pause_blocks_stepping_and_commands(session_scenario):
    sess = fresh_session(session_scenario)
    sess.session_step()
    t_paused = sess.state.sim_time
    sess.submit({"type": "pause"})
    msgs = sess.session_step()
    assert sess.state.mode == "paused"
    assert not any(m["type"] == MSG_STATE for m in msgs)
    assert sess.state.sim_time == t_paused
    # mutating commands bounce while paused
    sess.submit({"type": "set_goal", "goal": [0.0, 0.0]})
    acks = [m for m in sess.session_step() if m["type"] == MSG_ACK]
    assert acks[0]["status"] == "rejected"
    sess.submit({"type": "resume"})
    msgs = sess.session_step()
    assert sess.state.mode == "running"
    assert any(m["type"] == MSG_STATE for m in msgs)
    assert sess.state.sim_time > t_paused


def test_reset_restores_initial_state(session_scenario):
    sess = fresh_session(session_scenario)
    for _ in range(3):
        sess.session_step()
    sess.submit({"type": "reset"})
    sess.session_step()
    assert sess.state.sim_time == pytest.approx(1.0 / session_scenario.control_rate)
    assert sess.state.step == 1


def test_set_goal_steers_the_nominal(session_scenario):
    sess = fresh_session(session_scenario)
    sess.submit({"type": "set_goal", "goal": [-1.4, 0.0]})
    sess.session_step()
    assert np.allclose(sess.controller.goal, [-1.4, 0.0])
    sess.submit({"type": "set_goal", "goal": [1.0, 2.0, 3.0]})
    acks = [m for m in sess.session_step() if m["type"] == MSG_ACK]
    assert acks[0]["status"] == "rejected"


def test_set_disturbance_bounds_bumps_revision(session_scenario):
    sess = fresh_session(session_scenario)
    rev0 = sess.state.revision
    sess.submit({"type": "set_disturbance_bounds",
                 "lows": [-0.2], "highs": [0.2]})
    sess.session_step()
    assert sess.state.revision == rev0 + 1
    assert np.allclose(sess.lane.env.disturbance_set.highs, [0.2])


def test_slice_message_layout(session_scenario):
    sess = fresh_session(session_scenario)
    sess.session_step()
    msg = sess.slice_message()
    assert msg["type"] == MSG_SLICE
    assert msg["shape"] == [41, 41]
    assert len(msg["values"]) == 41 * 41
    assert msg["extent"][0] == [-2.0, 2.0]
    assert all(isinstance(v, float) for v in msg["values"][:5])


# --- HTTP and websocket service --------------------------------------------------


@pytest.fixture(scope="module")
def client(session_scenario):
    from starlette.testclient import TestClient

    app = create_app(scenarios={"mini": session_scenario}, speed=1e6)
    with TestClient(app) as c:
        yield c


def test_scenario_listing(client):
    r = client.get("/scenarios")
    assert r.status_code == 200
    assert r.json()["scenarios"] == ["mini"]


def test_session_lifecycle_over_http(client):
    r = client.post("/sessions", json={"scenario": "nope"})
    assert r.status_code == 404
    r = client.post("/sessions", json={"scenario": "mini"})
    assert r.status_code == 200
    body = r.json()
    assert body["schema_version"] == SCHEMA_VERSION
    sid = body["session_id"]
    assert body["grid"]["counts"] == [41, 41]
    info = client.get(f"/sessions/{sid}").json()
    assert info["mode"] == "running" and info["sim_time"] == 0.0
    assert client.post(f"/sessions/{sid}/stop").json() == {"stopped": sid}
    assert client.get(f"/sessions/{sid}").status_code == 404


def test_websocket_streams_and_acknowledges(client):
    sid = client.post("/sessions", json={"scenario": "mini"}).json()["session_id"]
    with client.websocket_connect(f"/sessions/{sid}/ws") as ws:
        hello = ws.receive_json()
        assert hello["type"] == "hello"
        assert hello["session"]["scenario"] == "mini"
        ws.send_json({"type": "add_obstacle", "command_id": "ws1",
                      "shape": {"kind": "box", "lows": [0.5],
                                "highs": [0.7]}})
        seen_ack = seen_state = None
        for _ in range(300):
            msg = ws.receive_json()
            if msg["type"] == MSG_ACK and msg.get("command_id") == "ws1":
                seen_ack = msg
            if msg["type"] == MSG_STATE:
                seen_state = msg
            if seen_ack and seen_state:
                break
        assert seen_ack is not None and seen_ack["status"] == "applied"
        assert seen_state is not None and seen_state["step"] >= 1
    client.post(f"/sessions/{sid}/stop")


def test_websocket_rejects_unknown_session(client):
    from starlette.websockets import WebSocketDisconnect

    with pytest.raises(WebSocketDisconnect):
        with client.websocket_connect("/sessions/ghost/ws") as ws:
            ws.receive_json()
