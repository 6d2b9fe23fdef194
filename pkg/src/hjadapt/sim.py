"""Closed-loop scenario harness: sensing, events, baselines, and metrics.

One run is one deterministic timeline. The safety solver does not race the
control loop; instead each control period grants the solver a fixed emulated
wall-time budget and every solver iteration is charged a configured cost, so
slow-solver phenomena (stale fields, late convergence) reproduce bit-identically
across machines. The filter at step t only ever sees fields published at or
before t.

Variants:

  adaptive              deltas stream into the warm-started refiner
  static_env            the refiner never hears about environment changes
  jointcbf              filter runs on the pointwise min of per-obstacle
                        converged fields (naive barrier combination)
  global_hjr_recompute  every delta restarts a from-scratch solve; the filter
                        only sees converged fields
  backup_cbf            barrier value = worst constraint along a fixed backup
                        policy rollout, recomputed per query
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .dynamics import DynamicsModel, build_model, integrate_step
from .filter import (
    FilterSettings,
    NominalController,
    filter_control,
    nominal_control,
    solve_halfspace_box_qp,
    worst_case_disturbance,
)
from .grid import (
    Grid,
    OutOfBoundsError,
    ValueField,
    finite_difference,
    interpolate,
)
from .refine import (
    EnvironmentDelta,
    EnvironmentState,
    drain_deltas,
    init_refiner,
    refine_iteration,
)
from .solver import (
    ConstraintFunction,
    Shape,
    SolverSettings,
    run_to_convergence,
)


# ---------------------------------------------------------------------------
# Scenario definition


@dataclass(frozen=True)
class Event:
    """Scheduled environment change. Fires at most once."""

    delta: EnvironmentDelta
    time: float = None
    region_center: tuple = None  # proximity trigger over region_dims of x
    region_radius: float = None
    region_dims: tuple = None
    label: str = ""

    def triggered(self, t, x):
        if self.time is not None:
            return t >= self.time
        if self.region_center is not None:
            dims = list(self.region_dims or range(len(self.region_center)))
            d = np.linalg.norm(np.asarray(x)[dims] - np.asarray(self.region_center))
            return d <= self.region_radius
        return False


def _default_controller():
    return {"kind": "proportional_goal", "gains": {}}


def _default_sensing():
    return {"mode": "none"}


def _default_disturbance():
    return {"kind": "none"}


def _default_backup():
    return {"horizon": 2.0, "dt": 0.05}


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop experiment."""

    name: str
    model_name: str
    grid: Grid
    constraint: ConstraintFunction  # environment known at t = 0
    start_state: tuple
    goal_state: tuple
    model_params: dict = dc_field(default_factory=dict)
    position_dims: tuple = (0,)
    goal_dims: tuple = None  # dims checked for goal arrival (default: position)
    goal_tolerance: float = 0.15
    controller: dict = dc_field(default_factory=_default_controller)
    hidden_shapes: tuple = ()  # physically present, revealed by sensing
    events: tuple = ()
    sensing: dict = dc_field(default_factory=_default_sensing)
    duration: float = 10.0
    control_rate: float = 50.0
    refine_mode: str = "plain"  # plain | safeadapt
    solver: SolverSettings = SolverSettings(fd_order=2)
    filter: FilterSettings = FilterSettings()
    iteration_cost: float = 0.02  # emulated seconds charged per solver iteration
    init_field: dict = dc_field(default_factory=lambda: {"kind": "sdf"})
    disturbance: dict = dc_field(default_factory=_default_disturbance)
    backup: dict = dc_field(default_factory=_default_backup)
    start_jitter: dict = dc_field(default_factory=dict)  # {dim: scale} per seed

    def __post_init__(self):
        for ev in self.events:
            if ev.time is not None and not 0 <= ev.time <= self.duration:
                raise ValueError(f"event at t={ev.time} outside duration")
        if self.refine_mode not in ("plain", "safeadapt"):
            raise ValueError("refine_mode must be 'plain' or 'safeadapt'")

    @property
    def control_period(self):
        return 1.0 / self.control_rate

    def build_model(self) -> DynamicsModel:
        return build_model(self.model_name, **self.model_params)

    def make_controller(self) -> NominalController:
        spec = dict(self.controller)
        return NominalController(
            kind=spec.get("kind", "proportional_goal"),
            goal=np.asarray(self.goal_state, dtype=float),
            gains=dict(spec.get("gains", {})),
            waypoints=list(spec.get("waypoints", [])),
        )


# ---------------------------------------------------------------------------
# Run record


@dataclass
class RunRecord:
    scenario_name: str
    variant: str
    seed: int
    times: np.ndarray
    states: np.ndarray
    u_nominal: np.ndarray
    u_applied: np.ndarray
    statuses: list
    h_values: np.ndarray
    ell_values: np.ndarray
    events_fired: list
    collision: bool
    first_violation_time: float
    goal_reached: bool
    goal_time: float
    solver_stats: dict

    @property
    def min_ell(self):
        return float(np.min(self.ell_values)) if self.ell_values.size else np.inf

    def summary(self) -> dict:
        """Deterministic summary (no wall-clock content)."""
        return {
            "scenario": self.scenario_name,
            "variant": self.variant,
            "seed": int(self.seed),
            "steps": int(self.times.size),
            "collision": bool(self.collision),
            "first_violation_time": (
                None if self.first_violation_time is None
                else round(float(self.first_violation_time), 9)
            ),
            "goal_reached": bool(self.goal_reached),
            "goal_time": (
                None if self.goal_time is None else round(float(self.goal_time), 9)
            ),
            "min_ell": round(self.min_ell, 9),
            "min_h": round(float(np.min(self.h_values)), 9)
            if self.h_values.size else None,
            "events_fired": [[round(float(t), 9), label]
                             for t, label in self.events_fired],
            "solver": {k: int(v) if isinstance(v, (int, np.integer)) else v
                       for k, v in sorted(self.solver_stats.items())},
        }

    def trajectory_csv(self) -> str:
        n = self.states.shape[1] if self.states.size else 0
        m = self.u_applied.shape[1] if self.u_applied.size else 0
        cols = (["t"] + [f"x{i}" for i in range(n)]
                + [f"u_nom{i}" for i in range(m)] + [f"u{i}" for i in range(m)]
                + ["status", "h", "ell"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for k in range(self.times.size):
            row = [repr(float(self.times[k]))]
            row += [repr(float(v)) for v in self.states[k]]
            row += [repr(float(v)) for v in self.u_nominal[k]]
            row += [repr(float(v)) for v in self.u_applied[k]]
            row += [self.statuses[k], repr(float(self.h_values[k])),
                    repr(float(self.ell_values[k]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Converged-field cache (scenario definitions are immutable, so keyed reuse
# across seeds/variants is safe and keeps batch runs affordable)

_FIELD_CACHE: dict = {}


def _converged_field(key, grid: Grid, model: DynamicsModel,
                     constraint: ConstraintFunction,
                     settings: SolverSettings) -> ValueField:
    if key not in _FIELD_CACHE:
        init = ValueField(grid=grid, values=constraint.on_grid(grid))
        result = run_to_convergence(init, "pde", model, settings,
                                    constraint=constraint)
        _FIELD_CACHE[key] = result.field
    return _FIELD_CACHE[key]


def clear_field_cache():
    _FIELD_CACHE.clear()


def _initial_field(scenario: Scenario, model: DynamicsModel,
                   env: EnvironmentState) -> ValueField:
    spec = dict(scenario.init_field)
    kind = spec.get("kind", "sdf")
    ell = env.constraint.on_grid(scenario.grid)
    if kind == "sdf":
        return ValueField(grid=scenario.grid, values=ell)
    if kind == "converged":
        return _converged_field((scenario.name, "init"), scenario.grid, model,
                                env.constraint, scenario.solver)
    if kind == "conservative_ball":
        center = np.asarray(spec["center"], dtype=float)
        radius = float(spec["radius"])
        pts = scenario.grid.states()
        ball = radius - np.linalg.norm(
            pts[..., list(scenario.position_dims)] - center, axis=-1
        )
        return ValueField(grid=scenario.grid, values=np.minimum(ell, ball))
    if kind == "optimistic_inflate":
        base = _converged_field((scenario.name, "init"), scenario.grid, model,
                                env.constraint, scenario.solver)
        inflated = np.minimum(base.values + float(spec.get("delta", 0.2)), ell)
        return ValueField(grid=scenario.grid, values=inflated)
    if kind == "file":
        from .grid import load_field

        return load_field(spec["path"])
    raise ValueError(f"unknown init_field kind {kind!r}")


# ---------------------------------------------------------------------------
# Solver lanes (one per variant): each owns what the robot *knows*


class _LaneBase:
    def __init__(self):
        self.iterations = 0
        self.node_updates = 0
        self.publishes = 0
        self._budget = 0.0

    def apply_deltas(self, deltas):
        pass

    def advance(self, budget, cost):
        pass

    @property
    def field(self):
        raise NotImplementedError

    @property
    def env(self):
        raise NotImplementedError

    def stats(self):
        return {
            "iterations": int(self.iterations),
            "node_updates": int(self.node_updates),
            "publishes": int(self.publishes),
        }


class _RefinerLane(_LaneBase):
    """adaptive and static_env: warm-started refiner, publish every iteration."""

    def __init__(self, scenario: Scenario, model: DynamicsModel,
                 env: EnvironmentState, forward_deltas: bool):
        super().__init__()
        self.forward = forward_deltas
        h0 = _converged_field((scenario.name, "init"), scenario.grid, model,
                              env.constraint, scenario.solver)
        self.state = init_refiner(h0, env, model, scenario.solver,
                                  mode=scenario.refine_mode)
        # the initial field is already converged; start idle
        self.state.last_sup_delta = 0.0
        if self.state.mode == "safeadapt":
            self.state.phase = "refining"
        self._dirty = False

    def apply_deltas(self, deltas):
        if not self.forward or not deltas:
            return
        self.state = drain_deltas(self.state, deltas)
        self._dirty = True

    def advance(self, budget, cost):
        self._budget += budget
        eps = self.state.settings.convergence_eps
        while self._budget >= cost:
            idle = (not self._dirty and self.state.last_sup_delta <= eps
                    and not (self.state.mode == "safeadapt"
                             and self.state.phase == "retracting"))
            if idle:
                self._budget = 0.0
                break
            self._budget -= cost
            self.state = refine_iteration(self.state)
            self.iterations += 1
            self.node_updates += self.state.current.grid.num_nodes
            self.publishes += 1
            if self.state.last_sup_delta <= eps:
                self._dirty = False

    @property
    def field(self):
        return self.state.current

    @property
    def env(self):
        return self.state.env


class _RecomputeLane(_LaneBase):
    """global_hjr_recompute: restart from ell on every delta, publish only on
    convergence (the filter runs on stale fields in between)."""

    def __init__(self, scenario: Scenario, model: DynamicsModel,
                 env: EnvironmentState):
        super().__init__()
        self.scenario = scenario
        self.model = model
        self.published = _converged_field(
            (scenario.name, "init"), scenario.grid, model, env.constraint,
            scenario.solver,
        )
        self.published_env = env
        self.working = None
        self.working_env = env

    def apply_deltas(self, deltas):
        if not deltas:
            return
        env = self.working_env
        for d in deltas:
            env = d.apply(env)
        self.working_env = env
        h0 = ValueField(grid=self.scenario.grid,
                        values=env.constraint.on_grid(self.scenario.grid))
        self.working = init_refiner(h0, env, self.model, self.scenario.solver,
                                    mode="plain")

    def advance(self, budget, cost):
        self._budget += budget
        if self.working is None:
            self._budget = 0.0
            return
        eps = self.working.settings.convergence_eps
        while self._budget >= cost and self.working is not None:
            self._budget -= cost
            self.working = refine_iteration(self.working)
            self.iterations += 1
            self.node_updates += self.scenario.grid.num_nodes
            if self.working.last_sup_delta <= eps:
                self.published = self.working.current
                self.published_env = self.working.env
                self.publishes += 1
                self.working = None

    @property
    def field(self):
        return self.published

    @property
    def env(self):
        # the filter's model knowledge follows the last *converged* solve
        return self.published_env


class _JointLane(_LaneBase):
    """jointcbf: per-obstacle converged fields combined by pointwise min."""

    def __init__(self, scenario: Scenario, model: DynamicsModel,
                 env: EnvironmentState):
        super().__init__()
        self.scenario = scenario
        self.model = model
        self._env = env
        base = replace(env.constraint, shapes=())
        self.pieces = {
            "__domain__": _converged_field(
                (scenario.name, "joint", "__domain__"), scenario.grid, model,
                base, scenario.solver,
            )
        }
        for shape in env.constraint.shapes:
            self._add_piece(base, shape)
        self._combined = None

    def _add_piece(self, base_constraint, shape: Shape):
        single = base_constraint.with_shape(shape)
        self.pieces[shape.id] = _converged_field(
            (self.scenario.name, "joint", shape.id), self.scenario.grid,
            self.model, single, self.scenario.solver,
        )
        self._combined = None

    def apply_deltas(self, deltas):
        base = replace(self._env.constraint, shapes=())
        for d in deltas:
            self._env = d.apply(self._env)
            if d.kind == "add_obstacle":
                self._add_piece(base, d.shape)
            elif d.kind == "remove_obstacle":
                self.pieces.pop(d.shape_id, None)
                self._combined = None

    @property
    def field(self):
        if self._combined is None:
            vals = np.min([p.values for p in self.pieces.values()], axis=0)
            self.publishes += 1
            self._combined = ValueField(grid=self.scenario.grid, values=vals,
                                        version=self.publishes)
        return self._combined

    @property
    def env(self):
        return self._env


class _BackupLane(_LaneBase):
    """backup_cbf: no precomputed field; barrier values come from rollouts of a
    fixed fallback policy, evaluated on demand in the filter path."""

    def __init__(self, scenario: Scenario, model: DynamicsModel,
                 env: EnvironmentState):
        super().__init__()
        self.scenario = scenario
        self.model = model
        self._env = env

    def apply_deltas(self, deltas):
        for d in deltas:
            self._env = d.apply(self._env)

    @property
    def field(self):
        return None

    @property
    def env(self):
        return self._env


def _backup_policy(model: DynamicsModel, x):
    """Fixed fallback input: brake to minimum speed (unicycle-style models) or
    hover-stabilize in place (quadrotor-style models)."""
    name = model.name
    if name == "unicycle_3d":
        return np.array([model.control_set.lows[0], 0.0])
    if name == "extended_unicycle":
        return np.array([-model.control_set.highs[0], 0.0])
    if name.startswith("planar_quadrotor"):
        from .dynamics import GRAVITY

        # proportional hover: kill velocity, hold altitude
        s = np.clip(-1.2 * x[2] / GRAVITY, model.control_set.lows[0],
                    model.control_set.highs[0])
        thrust = np.clip(GRAVITY - 1.2 * x[3], model.control_set.lows[1],
                         model.control_set.highs[1])
        return np.array([s, thrust])
    if name in ("double_integrator",):
        u_max = model.control_set.highs[0]
        return np.array([-np.sign(x[1]) * u_max if abs(x[1]) > 1e-9 else 0.0])
    return model.control_set.clip(np.zeros(model.control_dim))


def backup_value(model: DynamicsModel, constraint: ConstraintFunction, x,
                 horizon: float, dt: float) -> float:
    """min of the constraint along the backup-policy rollout from x."""
    x = np.asarray(x, dtype=float)
    worst = float(constraint.evaluate(x))
    steps = max(int(round(horizon / dt)), 1)
    for _ in range(steps):
        u = _backup_policy(model, x)
        x = integrate_step(model, x, u, None, dt)
        worst = min(worst, float(constraint.evaluate(x)))
    return worst


def _backup_filter(lane: _BackupLane, model: DynamicsModel, x, u_nom,
                   fsettings: FilterSettings):
    sc = lane.scenario
    horizon = float(sc.backup.get("horizon", 2.0))
    bdt = float(sc.backup.get("dt", 0.05))
    constraint = lane.env.constraint

    def hb(state):
        return backup_value(model, constraint, state, horizon, bdt)

    h = hb(x)
    grad = np.zeros(model.state_dim)
    for d in range(model.state_dim):
        eps = 0.5 * sc.grid.spacing[d]
        lo = np.array(x, dtype=float)
        hi = np.array(x, dtype=float)
        lo[d] -= eps
        hi[d] += eps
        grad[d] = (hb(hi) - hb(lo)) / (2.0 * eps)
    xf = np.asarray(x, dtype=float)
    a = grad @ model.g(xf)
    b = -fsettings.gamma * h - float(grad @ model.f(xf))
    _, wc = worst_case_disturbance(model, xf, grad)
    b -= wc
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    if float(a @ u_nom) >= b:
        from .filter import FilterResult

        return FilterResult(u=u_nom.copy(), status="inactive",
                            margin=float(a @ u_nom - b), h=h, grad=grad)
    u, feasible = solve_halfspace_box_qp(
        a, b, model.control_set.lows, model.control_set.highs, u_nom
    )
    from .filter import FilterResult

    return FilterResult(u=u, status="active" if feasible else "infeasible",
                        margin=float(a @ u - b), h=h, grad=grad)


def _make_lane(scenario: Scenario, variant: str, model: DynamicsModel,
               env: EnvironmentState):
    if variant == "adaptive":
        return _RefinerLane(scenario, model, env, forward_deltas=True)
    if variant == "static_env":
        return _RefinerLane(scenario, model, env, forward_deltas=False)
    if variant == "jointcbf":
        return _JointLane(scenario, model, env)
    if variant == "global_hjr_recompute":
        return _RecomputeLane(scenario, model, env)
    if variant == "backup_cbf":
        return _BackupLane(scenario, model, env)
    raise ValueError(f"unknown variant {variant!r}")


VARIANTS = ("adaptive", "static_env", "jointcbf", "global_hjr_recompute",
            "backup_cbf")


# ---------------------------------------------------------------------------
# Sensing


class SensingState:
    """Per-run mutable sensing bookkeeping (reveal-once semantics)."""

    def __init__(self):
        self.revealed = set()
        self.seen_mask = None  # conservative-visibility position mask
        self.last_update = -np.inf


def _segment_clear(p0, p1, shapes, step):
    """True when the segment p0->p1 stays outside every blocking shape."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.linalg.norm(p1 - p0))
    n = max(int(math.ceil(length / step)), 1)
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    for shape in shapes:
        if np.any(shape.sdf(pts[1:-1]) < 0.0):
            return False
    return True


def line_of_sight(pos, target, blocking_shapes, step=0.05):
    return _segment_clear(pos, target, blocking_shapes, step)


def _shape_anchor(shape: Shape):
    if shape.kind == "circle":
        return np.asarray(shape.center, dtype=float)
    if shape.kind == "box":
        return 0.5 * (np.asarray(shape.lows, dtype=float)
                      + np.asarray(shape.highs, dtype=float))
    raise ValueError(f"no sensing anchor for shape kind {shape.kind!r}")


def _position_axes(scenario: Scenario):
    vecs = scenario.grid.coordinate_vectors()
    return [vecs[d] for d in scenario.position_dims]


def _visibility_mask(scenario: Scenario, pos, true_shapes, radius):
    """Boolean mask over the position-plane nodes visible from pos: within
    range and with an unblocked straight-line ray."""
    axes = _position_axes(scenario)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    pos = np.asarray(pos, dtype=float)
    within = np.linalg.norm(pts - pos, axis=-1) <= radius
    vis = np.zeros(pts.shape[0], dtype=bool)
    step = 0.75 * min(scenario.grid.spacing[d] for d in scenario.position_dims)
    n_samples = max(int(math.ceil(radius / step)), 2)
    ts = np.linspace(0.0, 1.0, n_samples + 1)[1:-1]
    idx = np.nonzero(within)[0]
    if idx.size:
        # all sample points for all candidate rays at once
        segs = pos[None, None, :] + ts[None, :, None] * (
            pts[idx][:, None, :] - pos[None, None, :]
        )
        blocked = np.zeros(idx.size, dtype=bool)
        for shape in true_shapes:
            blocked |= np.any(shape.sdf(segs) < 0.0, axis=-1)
        vis[idx] = ~blocked
    return vis.reshape([len(ax) for ax in axes])


def _unknown_shape(scenario: Scenario, seen_mask) -> Shape:
    """Sampled SDF of the not-yet-seen region (negative where unseen)."""
    from scipy import ndimage

    axes = _position_axes(scenario)
    spacing = [scenario.grid.spacing[d] for d in scenario.position_dims]
    unseen = ~seen_mask
    if not unseen.any():
        sdf = np.full(seen_mask.shape, 10.0 * max(
            hi - lo for lo, hi in zip(scenario.grid.lower, scenario.grid.upper)
        ))
    elif not seen_mask.any():
        sdf = np.full(seen_mask.shape, -1.0)
    else:
        outside = ndimage.distance_transform_edt(seen_mask, sampling=spacing)
        inside = ndimage.distance_transform_edt(unseen, sampling=spacing)
        sdf = np.where(unseen, -inside, outside)
    return Shape(kind="sampled", id="__unknown__", axes=tuple(axes),
                 sdf_values=sdf)


def sensing_update(scenario: Scenario, x, t, env: EnvironmentState,
                   state: SensingState, true_shapes=()):
    """Environment deltas produced by onboard sensing at state x.

    Range mode reveals each hidden obstacle exactly once when its anchor comes
    within the detection radius (and, in conservative mode, has line of sight).
    Conservative visibility additionally maintains a seen-region mask and keeps
    the unexplored region inside the constraint until it is observed.
    """
    spec = scenario.sensing
    if spec.get("mode", "none") == "none":
        return []
    rate = float(spec.get("rate_hz", 2.0))
    if t - state.last_update < 1.0 / rate - 1e-9:
        return []
    state.last_update = t
    radius = float(spec.get("radius", np.inf))
    conservative = spec.get("visibility", "optimistic") == "conservative"
    pos = np.asarray(x, dtype=float)[list(scenario.position_dims)]
    deltas = []
    blockers = [s for s in true_shapes if s.kind in ("circle", "box")]
    for shape in scenario.hidden_shapes:
        if shape.id in state.revealed:
            continue
        if float(shape.sdf(pos)) > radius:
            continue
        if conservative:
            anchor = _shape_anchor(shape)
            others = [s for s in blockers if s.id != shape.id]
            if not line_of_sight(pos, anchor, others):
                continue
        state.revealed.add(shape.id)
        deltas.append(EnvironmentDelta(kind="add_obstacle", shape=shape))
    if conservative:
        vis = _visibility_mask(scenario, pos, blockers, radius)
        if state.seen_mask is None:
            state.seen_mask = vis
            grew = True
        else:
            grew = bool(np.any(vis & ~state.seen_mask))
            state.seen_mask = state.seen_mask | vis
        if grew:
            unknown = _unknown_shape(scenario, state.seen_mask)
            kept = tuple(s for s in env.constraint.shapes
                         if s.id != "__unknown__")
            new_constraint = replace(env.constraint, shapes=kept + (unknown,))
            deltas.append(EnvironmentDelta(kind="set_constraint",
                                           constraint=new_constraint))
    return deltas


# ---------------------------------------------------------------------------
# Disturbance truth


def _true_disturbance(scenario: Scenario, model: DynamicsModel, t, x, grad, rng):
    spec = scenario.disturbance
    kind = spec.get("kind", "none")
    if kind == "none" or model.disturbance_dim == 0:
        return None
    if kind == "wind":
        start = float(spec.get("start", 0.0))
        # draw every step so the stream stays aligned across variants
        jitter = rng.uniform(-1.0, 1.0, size=model.disturbance_dim)
        if t < start:
            return np.zeros(model.disturbance_dim)
        bias = np.asarray(spec.get("bias", [0.0] * model.disturbance_dim),
                          dtype=float)
        return bias + float(spec.get("jitter", 0.0)) * jitter
    if kind == "random":
        lows = model.disturbance_set.lows
        highs = model.disturbance_set.highs
        return rng.uniform(lows, highs)
    if kind == "adversarial":
        d, _ = worst_case_disturbance(model, x, grad)
        return d
    raise ValueError(f"unknown disturbance kind {kind!r}")


# ---------------------------------------------------------------------------
# Main loop


def _safe_interpolate(field: ValueField, x, gradients):
    try:
        return interpolate(field, x, gradients)
    except OutOfBoundsError as err:
        return interpolate(field, err.clamped, gradients)


def run_scenario(scenario: Scenario, variant: str, seed: int) -> RunRecord:
    """Integrate the closed loop at the control rate under one variant.

    Failures (collisions, infeasible filters, non-convergence) are recorded in
    the RunRecord, never raised.
    """
    model = scenario.build_model()
    rng = np.random.default_rng(seed)

    env0 = EnvironmentState(
        constraint=scenario.constraint,
        control_set=model.control_set,
        disturbance_set=model.disturbance_set,
    )
    lane = _make_lane(scenario, variant, model, env0)

    # ground truth: hidden shapes are physically present from the start
    true_constraint = scenario.constraint
    for shape in scenario.hidden_shapes:
        true_constraint = true_constraint.with_shape(shape)
    true_env = EnvironmentState(
        constraint=true_constraint,
        control_set=model.control_set,
        disturbance_set=model.disturbance_set,
    )
    true_shapes = list(true_constraint.shapes)

    x = np.array(scenario.start_state, dtype=float)
    for dim, scale in scenario.start_jitter.items():
        x[int(dim)] += rng.uniform(-scale, scale)
    x = scenario.grid.wrap(x)

    ctrl = scenario.make_controller()
    sensing = SensingState()
    dt = scenario.control_period
    n_steps = int(round(scenario.duration * scenario.control_rate))
    goal_dims = list(scenario.goal_dims
                     if scenario.goal_dims is not None
                     else scenario.position_dims)
    goal = np.asarray(scenario.goal_state, dtype=float)[goal_dims]

    times, states, u_noms, u_apps = [], [], [], []
    statuses, hs, ells = [], [], []
    events_fired = []
    pending_events = list(scenario.events)
    collision = False
    first_violation = None
    goal_reached = False
    goal_time = None
    grad_cache = {"version": None, "grads": None}

    def gradients_for(field):
        if field is None:
            return None
        if grad_cache["version"] != (id(field), field.version):
            grad_cache["grads"] = finite_difference(field)
            grad_cache["version"] = (id(field), field.version)
        return grad_cache["grads"]

    for k in range(n_steps + 1):
        t = k * dt

        # events mutate the ground truth and (variant permitting) the lane
        fired_now = []
        for ev in list(pending_events):
            if ev.triggered(t, x):
                pending_events.remove(ev)
                true_env = ev.delta.apply(true_env)
                true_shapes = list(true_env.constraint.shapes)
                events_fired.append((t, ev.label or ev.delta.kind))
                fired_now.append(ev.delta)
        deltas = fired_now + sensing_update(scenario, x, t, lane.env, sensing,
                                            true_shapes)
        if deltas:
            lane.apply_deltas(deltas)

        lane.advance(dt, scenario.iteration_cost)

        known_model = model.with_sets(
            control_set=lane.env.control_set,
            disturbance_set=lane.env.disturbance_set,
        )
        u_nom = nominal_control(ctrl, known_model, x)
        if variant == "backup_cbf":
            res = _backup_filter(lane, known_model, x, u_nom, scenario.filter)
        else:
            field = lane.field
            grads = gradients_for(field)
            try:
                res = filter_control(field, known_model, x, u_nom,
                                     scenario.filter, gradients=grads)
            except OutOfBoundsError as err:
                from .filter import FilterResult

                h_clamped, _ = _safe_interpolate(field, err.clamped, grads)
                res = FilterResult(u=known_model.control_set.clip(u_nom),
                                   status="out_of_bounds", margin=-np.inf,
                                   h=h_clamped)

        ell_here = float(true_env.constraint.evaluate(x))
        times.append(t)
        states.append(x.copy())
        u_noms.append(np.atleast_1d(u_nom).astype(float))
        u_apps.append(np.atleast_1d(res.u).astype(float))
        statuses.append(res.status)
        hs.append(float(res.h))
        ells.append(ell_here)

        if ell_here < 0.0 and not collision:
            collision = True
            first_violation = t
            break
        if float(np.linalg.norm(x[goal_dims] - goal)) <= scenario.goal_tolerance:
            goal_reached = True
            goal_time = t
            break
        if k == n_steps:
            break

        d = _true_disturbance(scenario, model, t, x, res.grad, rng)
        x = scenario.grid.wrap(integrate_step(model, x, res.u, d, dt))

    stats = lane.stats()
    return RunRecord(
        scenario_name=scenario.name,
        variant=variant,
        seed=seed,
        times=np.asarray(times),
        states=np.asarray(states),
        u_nominal=np.asarray(u_noms),
        u_applied=np.asarray(u_apps),
        statuses=statuses,
        h_values=np.asarray(hs),
        ell_values=np.asarray(ells),
        events_fired=events_fired,
        collision=collision,
        first_violation_time=first_violation,
        goal_reached=goal_reached,
        goal_time=goal_time,
        solver_stats=stats,
    )


# ---------------------------------------------------------------------------
# Rollouts and metrics


def rollout(field: ValueField, model: DynamicsModel,
            constraint: ConstraintFunction, controller: NominalController,
            x0, duration: float, rate: float, fsettings: FilterSettings,
            disturbance: str = "none", rng=None):
    """Filtered closed-loop rollout against a fixed field. Returns min ell,
    the trajectory, and the filter statuses (used for invariance checks)."""
    x = np.asarray(x0, dtype=float)
    dt = 1.0 / rate
    grads = finite_difference(field)
    states = [x.copy()]
    min_ell = float(constraint.evaluate(x))
    statuses = []
    hs = []
    for k in range(int(round(duration * rate))):
        u_nom = nominal_control(controller, model, x)
        try:
            res = filter_control(field, model, x, u_nom, fsettings,
                                 gradients=grads)
        except OutOfBoundsError as err:
            res = filter_control(field, model, err.clamped, u_nom, fsettings,
                                 gradients=grads)
        statuses.append(res.status)
        hs.append(res.h)
        if disturbance == "adversarial":
            d, _ = worst_case_disturbance(model, x, res.grad)
        elif disturbance == "random" and model.disturbance_dim:
            gen = rng or np.random.default_rng(0)
            d = gen.uniform(model.disturbance_set.lows,
                            model.disturbance_set.highs)
        else:
            d = None
        x = field.grid.wrap(integrate_step(model, x, res.u, d, dt))
        states.append(x.copy())
        min_ell = min(min_ell, float(constraint.evaluate(x)))
    return {
        "min_ell": min_ell,
        "states": np.asarray(states),
        "statuses": statuses,
        "h": np.asarray(hs),
    }


def metrics(records) -> dict:
    """Aggregate RunRecords into a Table-style summary keyed by variant."""
    records = list(records)
    if not records:
        raise ValueError("metrics needs at least one record")
    out = {}
    for rec in records:
        row = out.setdefault(rec.variant, {
            "runs": 0, "collisions": 0, "goals_reached": 0,
            "min_ell": [], "goal_times": [], "solver_iterations": 0,
            "solver_node_updates": 0,
        })
        row["runs"] += 1
        row["collisions"] += int(rec.collision)
        row["goals_reached"] += int(rec.goal_reached)
        row["min_ell"].append(rec.min_ell)
        if rec.goal_time is not None:
            row["goal_times"].append(float(rec.goal_time))
        row["solver_iterations"] += rec.solver_stats.get("iterations", 0)
        row["solver_node_updates"] += rec.solver_stats.get("node_updates", 0)
    for row in out.values():
        ml = row.pop("min_ell")
        row["min_ell_worst"] = round(float(np.min(ml)), 9)
        row["min_ell_median"] = round(float(np.median(ml)), 9)
        gt = row.pop("goal_times")
        row["goal_time_mean"] = round(float(np.mean(gt)), 9) if gt else None
    return out
