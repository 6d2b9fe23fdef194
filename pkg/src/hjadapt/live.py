"""Interactive simulation service: one websocket per session streaming robot
state and value-function slices while operator commands (obstacles, wind
bounds, goal moves, pause) feed the safety solver mid-run.

Wire format: type-tagged JSON messages, schema version 1 (documented in
docs/wire_schema.md; the dashboard consumes nothing else).

Concurrency: the control loop, solver, and transport share one logical
timeline per session. The solver runs on an emulated per-step budget exactly
like the batch harness; pacing (real-time speed multiplier) is applied only in
the websocket loop, so a paused or slow client never stalls safety math it has
already been granted.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .dynamics import Polytope, integrate_step
from .filter import filter_control, nominal_control
from .grid import OutOfBoundsError, ValueField, finite_difference
from .refine import EnvironmentDelta
from .sim import Scenario, _make_lane, _true_disturbance
from .solver import Shape

SCHEMA_VERSION = 1

# server -> client message types
MSG_STATE = "state_update"
MSG_SLICE = "field_slice"
MSG_ACK = "ack"
MSG_EVENT = "event_log"
MSG_METRICS = "metrics"

COMMAND_TYPES = (
    "add_obstacle", "remove_obstacle", "set_disturbance_bounds",
    "set_control_bounds", "set_goal", "pause", "resume", "reset", "set_slice",
)


def slice_extract(field: ValueField, slice_spec: dict):
    """Extract a 2D plane and its zero contour from an n-D field.

    slice_spec: {"dims": [i, j], "fixed": {dim: value}} where every dimension
    not in dims must appear in fixed; fixed values snap to the nearest node.
    Returns (values_2d, contours, axes) with contours as world-coordinate
    polylines of the zero level set.
    """
    from skimage import measure

    grid = field.grid
    dims = [int(d) for d in slice_spec["dims"]]
    if len(dims) != 2 or dims[0] == dims[1]:
        raise ValueError("slice needs two distinct dims")
    fixed = {int(k): float(v) for k, v in dict(slice_spec.get("fixed", {})).items()}
    sel = [slice(None)] * grid.ndim
    for d in range(grid.ndim):
        if d in dims:
            continue
        if d not in fixed:
            raise ValueError(f"dimension {d} is neither sliced nor fixed")
        coords = grid.coordinate_vectors()[d]
        sel[d] = int(np.argmin(np.abs(coords - fixed[d])))
    plane = field.values[tuple(sel)]
    if dims[0] > dims[1]:
        plane = plane.T  # rows follow the first requested dim
    vectors = grid.coordinate_vectors()
    axes = (vectors[dims[0]], vectors[dims[1]])
    contours = []
    for poly in measure.find_contours(plane, 0.0):
        pts = []
        for r, c in poly:
            pts.append([
                float(axes[0][0] + r * (axes[0][1] - axes[0][0])),
                float(axes[1][0] + c * (axes[1][1] - axes[1][0])),
            ])
        contours.append(pts)
    return plane, contours, axes


def _shape_from_payload(payload: dict, fallback_id: str) -> Shape:
    kind = payload.get("kind")
    sid = payload.get("id") or fallback_id
    if kind == "circle":
        return Shape(kind="circle", id=sid,
                     center=tuple(float(v) for v in payload["center"]),
                     radius=float(payload["radius"]))
    if kind == "box":
        return Shape(kind="box", id=sid,
                     lows=tuple(float(v) for v in payload["lows"]),
                     highs=tuple(float(v) for v in payload["highs"]))
    raise ValueError(f"unsupported obstacle kind {kind!r}")


def _shape_payload(shape: Shape) -> dict:
    if shape.kind == "circle":
        return {"kind": "circle", "id": shape.id,
                "center": [float(v) for v in shape.center],
                "radius": float(shape.radius)}
    if shape.kind == "box":
        return {"kind": "box", "id": shape.id,
                "lows": [float(v) for v in shape.lows],
                "highs": [float(v) for v in shape.highs]}
    return {"kind": shape.kind, "id": shape.id}


def enqueue_with_backpressure(queue: deque, message: dict, maxlen: int):
    """Bounded outbound buffer: when full, field slices are dropped (newest
    slice wins) but state updates are never dropped or reordered."""
    if message["type"] == MSG_SLICE:
        # coalesce: an unsent older slice is superseded by this one
        for i in range(len(queue) - 1, -1, -1):
            if queue[i]["type"] == MSG_SLICE:
                del queue[i]
                break
    if len(queue) >= maxlen:
        if message["type"] == MSG_SLICE:
            return False  # drop the frame, keep state ordering intact
        for i, queued in enumerate(queue):
            if queued["type"] == MSG_SLICE:
                del queue[i]
                break
        else:
            queue.popleft()  # last resort: shed the oldest message
    queue.append(message)
    return True


@dataclass
class SessionState:
    scenario_name: str
    mode: str = "running"  # running | paused
    sim_time: float = 0.0
    field_version: int = 0
    connected_clients: int = 0
    revision: int = 0
    step: int = 0

    def payload(self):
        return {
            "scenario": self.scenario_name,
            "mode": self.mode,
            "sim_time": round(self.sim_time, 9),
            "field_version": self.field_version,
            "connected_clients": self.connected_clients,
            "revision": self.revision,
            "step": self.step,
        }


class LiveSession:
    """One interactive scenario run. Commands are applied at control-step
    boundaries only; every command is acknowledged with the revision it
    produced or a typed rejection."""

    def __init__(self, scenario: Scenario, slice_rate_hz: float = 10.0):
        self.scenario = scenario
        self.slice_rate_hz = slice_rate_hz
        self._ids = itertools.count(1)
        self.reset()

    def reset(self):
        sc = self.scenario
        self.model = sc.build_model()
        from .refine import EnvironmentState

        env = EnvironmentState(
            constraint=sc.constraint,
            control_set=self.model.control_set,
            disturbance_set=self.model.disturbance_set,
        )
        self.lane = _make_lane(sc, "adaptive", self.model, env)
        self.controller = sc.make_controller()
        self.x = sc.grid.wrap(np.array(sc.start_state, dtype=float))
        self.goal = np.asarray(sc.goal_state, dtype=float)
        self.state = SessionState(scenario_name=sc.name)
        self.commands = deque()
        self.rng = np.random.default_rng(0)
        self._last_slice_version = -1
        self._last_slice_time = -math.inf
        self._grads = None
        self._grads_version = -1
        dims = list(sc.position_dims[:2])
        if len(dims) < 2:
            dims = [0, 1]
        fixed = {
            d: float(self.x[d]) for d in range(sc.grid.ndim) if d not in dims
        }
        self.slice_spec = {"dims": dims, "fixed": fixed}

    # -- commands -------------------------------------------------------------

    def submit(self, command: dict):
        self.commands.append(dict(command))

    def _reject(self, command, reason):
        return {
            "type": MSG_ACK, "schema_version": SCHEMA_VERSION,
            "command_id": command.get("command_id"),
            "command": command.get("type"),
            "status": "rejected", "reason": reason,
            "revision": self.state.revision,
        }

    def _apply_command(self, command: dict):
        """Returns (messages, deltas) for one operator command."""
        ctype = command.get("type")
        if ctype not in COMMAND_TYPES:
            return [self._reject(command, f"unknown command type {ctype!r}")], []
        if self.state.mode == "paused" and ctype not in ("resume", "reset"):
            return [self._reject(command, "session is paused")], []
        deltas = []
        try:
            if ctype == "add_obstacle":
                shape = _shape_from_payload(
                    dict(command.get("shape", {})), f"op_{next(self._ids)}"
                )
                deltas.append(EnvironmentDelta(kind="add_obstacle", shape=shape))
                extra = {"obstacle_id": shape.id}
            elif ctype == "remove_obstacle":
                deltas.append(EnvironmentDelta(kind="remove_obstacle",
                                               shape_id=command["id"]))
                extra = {"obstacle_id": command["id"]}
            elif ctype == "set_disturbance_bounds":
                deltas.append(EnvironmentDelta(
                    kind="set_disturbance_bounds",
                    disturbance_set=Polytope.box(command["lows"], command["highs"]),
                ))
                extra = {}
            elif ctype == "set_control_bounds":
                deltas.append(EnvironmentDelta(
                    kind="set_control_bounds",
                    control_set=Polytope.box(command["lows"], command["highs"]),
                ))
                extra = {}
            elif ctype == "set_goal":
                goal = np.asarray(command["goal"], dtype=float)
                if goal.shape != self.goal.shape:
                    raise ValueError("goal dimension mismatch")
                self.goal = goal
                self.controller.goal = goal
                extra = {}
            elif ctype == "set_slice":
                fixed = {int(k): float(v)
                         for k, v in dict(command.get("fixed", {})).items()}
                spec = {"dims": self.slice_spec["dims"], "fixed": fixed}
                if "dims" in command:
                    spec["dims"] = [int(d) for d in command["dims"]]
                slice_extract(self.lane.field, spec)  # validate now
                self.slice_spec = spec
                self._last_slice_version = -1  # force a fresh frame
                extra = {"slice": spec}
            elif ctype == "pause":
                self.state.mode = "paused"
                extra = {}
            elif ctype == "resume":
                self.state.mode = "running"
                extra = {}
            elif ctype == "reset":
                self.reset()
                extra = {}
        except (KeyError, ValueError, TypeError, OutOfBoundsError) as err:
            return [self._reject(command, str(err))], []
        if deltas:
            self.lane.apply_deltas(deltas)
        self.state.revision = self.lane.env.revision
        ack = {
            "type": MSG_ACK, "schema_version": SCHEMA_VERSION,
            "command_id": command.get("command_id"),
            "command": ctype, "status": "applied",
            "revision": self.state.revision,
        }
        ack.update(extra)
        msgs = [ack]
        if deltas:
            msgs.append(self._event(f"{ctype} applied at revision "
                                    f"{self.state.revision}"))
        return msgs, deltas

    def _event(self, message):
        return {"type": MSG_EVENT, "schema_version": SCHEMA_VERSION,
                "t": round(self.state.sim_time, 9), "message": message}

    # -- stepping -------------------------------------------------------------

    def _gradients(self, field):
        if field is not None and self._grads_version != field.version:
            self._grads = finite_difference(field)
            self._grads_version = field.version
        return self._grads

    def session_step(self):
        """Advance one control period and return the emitted messages."""
        sc = self.scenario
        msgs = []
        phase_before = getattr(getattr(self.lane, "state", None), "phase", None)
        while self.commands:
            out, _ = self._apply_command(self.commands.popleft())
            msgs.extend(out)
        if self.state.mode == "paused":
            return msgs

        dt = sc.control_period
        self.lane.advance(dt, sc.iteration_cost)
        phase_after = getattr(getattr(self.lane, "state", None), "phase", None)
        if phase_before is not None and phase_after != phase_before:
            msgs.append(self._event(f"solver phase changed to {phase_after}"))

        known = self.model.with_sets(
            control_set=self.lane.env.control_set,
            disturbance_set=self.lane.env.disturbance_set,
        )
        u_nom = nominal_control(self.controller, known, self.x)
        field = self.lane.field
        grads = self._gradients(field)
        try:
            res = filter_control(field, known, self.x, u_nom, sc.filter,
                                 gradients=grads)
        except OutOfBoundsError as err:
            res = filter_control(field, known, err.clamped, u_nom, sc.filter,
                                 gradients=grads)
        d = _true_disturbance(sc, self.model, self.state.sim_time, self.x,
                              res.grad, self.rng)
        self.x = sc.grid.wrap(integrate_step(self.model, self.x, res.u, d, dt))
        self.state.sim_time += dt
        self.state.step += 1
        self.state.field_version = field.version

        ell = float(self.lane.env.constraint.evaluate(self.x))
        msgs.append({
            "type": MSG_STATE, "schema_version": SCHEMA_VERSION,
            "step": self.state.step,
            "t": round(self.state.sim_time, 9),
            "x": [float(v) for v in self.x],
            "u": [float(v) for v in np.atleast_1d(res.u)],
            "u_nom": [float(v) for v in np.atleast_1d(u_nom)],
            "h": float(res.h),
            "ell": ell,
            "status": res.status,
            "field_version": field.version,
        })
        throttle_ok = (
            self.state.sim_time - self._last_slice_time
            >= 1.0 / self.slice_rate_hz - 1e-9
        )
        if field.version != self._last_slice_version and throttle_ok:
            msgs.append(self.slice_message(field))
            self._last_slice_version = field.version
            self._last_slice_time = self.state.sim_time
        if self.state.step % 25 == 0:
            msgs.append(self.metrics_message())
        return msgs

    def slice_message(self, field=None):
        field = field or self.lane.field
        plane, contours, axes = slice_extract(field, self.slice_spec)
        dims = self.slice_spec["dims"]
        return {
            "type": MSG_SLICE, "schema_version": SCHEMA_VERSION,
            "version": field.version,
            "slice": {
                "dims": list(dims),
                "fixed": {str(k): float(v)
                          for k, v in self.slice_spec["fixed"].items()},
            },
            "shape": [int(n) for n in plane.shape],
            "extent": [
                [float(axes[0][0]), float(axes[0][-1])],
                [float(axes[1][0]), float(axes[1][-1])],
            ],
            "values": [float(v) for v in plane.ravel()],
            "contours": contours,
            "obstacles": [
                _shape_payload(s)
                for s in self.lane.env.constraint.shapes
                if s.id != "__unknown__"
            ],
            "goal": [float(v) for v in self.goal],
        }

    def metrics_message(self):
        stats = self.lane.stats()
        return {
            "type": MSG_METRICS, "schema_version": SCHEMA_VERSION,
            "t": round(self.state.sim_time, 9),
            "solver": stats,
            "revision": self.state.revision,
            "mode": self.state.mode,
        }


# ---------------------------------------------------------------------------
# HTTP/websocket app


def create_app(scenarios: dict = None, slice_rate_hz: float = 10.0,
               speed: float = 1.0, queue_maxlen: int = 64):
    """FastAPI app hosting interactive sessions.

    scenarios maps name -> Scenario (defaults to the built-in set). Sessions
    are created over HTTP and driven over one websocket each.
    """
    import anyio

    if scenarios is None:
        from .scenarios import SCENARIO_BUILDERS

        scenarios = {name: build() for name, build in SCENARIO_BUILDERS.items()}

    app = FastAPI(title="hjadapt live service")
    sessions: dict = {}
    counter = itertools.count(1)

    @app.get("/scenarios")
    def list_scenarios():
        return {
            "schema_version": SCHEMA_VERSION,
            "scenarios": sorted(scenarios.keys()),
        }

    @app.post("/sessions")
    def start_session(body: dict):
        name = body.get("scenario")
        if name not in scenarios:
            raise HTTPException(status_code=404, detail=f"no scenario {name!r}")
        sid = f"s{next(counter)}"
        sessions[sid] = LiveSession(scenarios[name], slice_rate_hz=slice_rate_hz)
        sc = scenarios[name]
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": sid,
            "scenario": name,
            "control_rate": sc.control_rate,
            "grid": {
                "lower": list(sc.grid.lower),
                "upper": list(sc.grid.upper),
                "counts": list(sc.grid.counts),
            },
            "position_dims": list(sc.position_dims),
        }

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        if sid not in sessions:
            raise HTTPException(status_code=404, detail="no such session")
        return sessions[sid].state.payload()

    @app.post("/sessions/{sid}/stop")
    def stop_session(sid: str):
        if sessions.pop(sid, None) is None:
            raise HTTPException(status_code=404, detail="no such session")
        return {"stopped": sid}

    @app.websocket("/sessions/{sid}/ws")
    async def session_ws(ws: WebSocket, sid: str):
        session = sessions.get(sid)
        if session is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        session.state.connected_clients += 1
        outbound: deque = deque()
        period = session.scenario.control_period / max(speed, 1e-6)
        try:
            await ws.send_json({
                "type": "hello", "schema_version": SCHEMA_VERSION,
                "session": session.state.payload(),
            })
            async with anyio.create_task_group() as tg:

                async def ingest():
                    # commands land in the queue and apply at the next step
                    try:
                        while True:
                            session.submit(await ws.receive_json())
                    except WebSocketDisconnect:
                        tg.cancel_scope.cancel()

                tg.start_soon(ingest)
                while sessions.get(sid) is session:
                    await anyio.sleep(period)
                    for msg in session.session_step():
                        enqueue_with_backpressure(outbound, msg, queue_maxlen)
                    while outbound:
                        await ws.send_json(outbound.popleft())
                tg.cancel_scope.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            session.state.connected_clients -= 1

    app.state.sessions = sessions
    return app


def serve(app=None, host: str = "127.0.0.1", port: int = 8700):
    import uvicorn

    uvicorn.run(app or create_app(), host=host, port=port)
