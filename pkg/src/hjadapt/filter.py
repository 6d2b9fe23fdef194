"""CBF-QP safety filter over box-constrained inputs.

The per-step problem is min ||u - u_nom||^2 subject to a single halfspace
a.u >= b (the barrier-decay constraint with the worst-case disturbance folded
into b) and the box input set. That structure admits an exact parametric
solution -- project, then walk the clipping breakpoints -- so the 50 Hz hot
path needs no general QP solver. A brute-force control-grid oracle validates
it in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .dynamics import DynamicsModel, Polytope
from .grid import GradientField, ValueField, finite_difference, interpolate
from .solver import ConstraintFunction


@dataclass(frozen=True)
class FilterSettings:
    gamma: float = 1.0  # per-second decay rate in the barrier constraint
    dt_term: bool = False  # include the (h_k - h_{k-1})/delta tightening
    dt_delta: float = 0.1
    infeasible_policy: str = "least_violating"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class FilterResult:
    u: np.ndarray
    status: str  # inactive | active | infeasible
    margin: float
    h: float = 0.0
    grad: np.ndarray = None

    def __iter__(self):  # allow u, status, margin = filter_control(...)
        yield self.u
        yield self.status
        yield self.margin


def worst_case_disturbance(model: DynamicsModel, x, grad):
    """min over disturbance vertices of <grad, w(x) d> and the attaining d."""
    grad = np.asarray(grad, dtype=float)
    if model.disturbance_dim == 0 or model.disturbance_set is None:
        return np.zeros(0), 0.0
    a_d = np.einsum("i,ij->j", grad, model.w(np.asarray(x, dtype=float)))
    dset = model.disturbance_set
    if dset.kind == "box":
        d_star = np.where(a_d >= 0, dset.lows, dset.highs)
        return d_star, float(a_d @ d_star)
    vals = dset.vertex_list @ a_d
    i = int(np.argmin(vals))
    return dset.vertex_list[i].copy(), float(vals[i])


def solve_halfspace_box_qp(a, b, lows, highs, u_nom):
    """Exact minimizer of ||u - u_nom||^2 s.t. a.u >= b, lows <= u <= highs.

    Returns (u, feasible). The solution path u(mu) = clip(u_nom + mu a) is
    piecewise linear in the multiplier mu with a.u(mu) nondecreasing, so the
    active mu is found by walking the clipping breakpoints.
    """
    a = np.asarray(a, dtype=float)
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    u0 = np.clip(u_nom, lows, highs)
    if a @ u0 >= b:
        return u0, True
    # max of a.u over the box (free coords keep the nominal value; they do not
    # affect a.u but keep the fallback close to u_nom)
    u_sup = np.where(a > 0, highs, np.where(a < 0, lows, u0))
    if a @ u_sup < b:
        return u_sup, False

    def u_of(mu):
        return np.clip(u_nom + mu * a, lows, highs)

    # each coordinate path clip(u_nom_i + mu a_i) changes slope where it enters
    # or leaves the box; between those breakpoints a.u(mu) is linear and
    # nondecreasing, so locate the crossing segment and interpolate exactly
    bps = {0.0}
    for i in range(a.size):
        if a[i] == 0.0:
            continue
        for bound in (lows[i], highs[i]):
            t = (bound - u_nom[i]) / a[i]
            if t > 0.0 and np.isfinite(t):
                bps.add(float(t))
    mu_prev = 0.0
    val_prev = float(a @ u0)
    for t in sorted(bps)[1:]:
        val_t = float(a @ u_of(t))
        if val_t >= b:
            mu = mu_prev + (b - val_prev) * (t - mu_prev) / (val_t - val_prev)
            return u_of(mu), True
        mu_prev, val_prev = t, val_t
    # past the last breakpoint every moving coordinate is saturated, and the
    # support value was already checked feasible above
    return u_sup.copy(), True


def assemble_constraint(field: ValueField, model: DynamicsModel, x,
                        settings: FilterSettings,
                        gradients: GradientField = None,
                        prev_field: ValueField = None):
    """Build (a, b, h, grad) for the barrier constraint a.u >= b at state x."""
    h, grad = interpolate(field, x, gradients)
    xf = np.asarray(x, dtype=float)
    a = np.einsum("i,ij->j", grad, model.g(xf))
    drift = float(grad @ model.f(xf))
    _, wc = worst_case_disturbance(model, xf, grad)
    b = -settings.gamma * h - drift - wc
    if settings.dt_term and prev_field is not None:
        h_prev, _ = interpolate(prev_field, x)
        b = b - (h - h_prev) / settings.dt_delta
    return a, b, h, grad


def filter_control(field: ValueField, model: DynamicsModel, x, u_nom,
                   settings: FilterSettings,
                   gradients: GradientField = None,
                   prev_field: ValueField = None) -> FilterResult:
    """Minimal-deviation safe control. u_nom is returned bit-identical when the
    constraint is already slack."""
    a, b, h, grad = assemble_constraint(
        field, model, x, settings, gradients, prev_field
    )
    uset = model.control_set
    if uset.kind != "box":
        raise NotImplementedError("filter_control expects a box control set")
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    if float(a @ u_nom) >= b:
        return FilterResult(
            u=u_nom.copy(), status="inactive", margin=float(a @ u_nom - b),
            h=h, grad=grad,
        )
    u, feasible = solve_halfspace_box_qp(a, b, uset.lows, uset.highs, u_nom)
    status = "active" if feasible else "infeasible"
    return FilterResult(u=u, status=status, margin=float(a @ u - b), h=h, grad=grad)


def qp_oracle(a, b, lows, highs, u_nom, resolution=201):
    """Exhaustive feasible-grid search used to validate the direct QP solve."""
    a = np.asarray(a, dtype=float)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lows, highs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    feas = pts @ a >= b
    if not np.any(feas):
        return None, False
    pts = pts[feas]
    cost = np.sum((pts - np.asarray(u_nom)) ** 2, axis=-1)
    return pts[int(np.argmin(cost))], True


# ---------------------------------------------------------------------------
# Nominal controllers


@dataclass
class NominalController:
    kind: str  # lqr_hover | proportional_goal | waypoint
    goal: np.ndarray
    gains: dict = dc_field(default_factory=dict)
    waypoints: list = dc_field(default_factory=list)
    _lqr_gain: np.ndarray = dc_field(default=None, repr=False)
    _wp_index: int = 0

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)


def _lqr_hover_gain(model: DynamicsModel, gains: dict):
    from scipy.linalg import solve_continuous_are

    from .dynamics import GRAVITY

    A = np.zeros((4, 4))
    A[0, 2] = 1.0
    A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = GRAVITY
    B[3, 1] = 1.0
    Q = np.diag(gains.get("q", [4.0, 4.0, 1.0, 1.0]))
    R = np.diag(gains.get("r", [1.0, 0.1]))
    P = solve_continuous_are(A, B, Q, R)
    return np.linalg.solve(R, B.T @ P)


def nominal_control(ctrl: NominalController, model: DynamicsModel, x) -> np.ndarray:
    """Safety-agnostic policy output, clipped into the control set."""
    x = np.asarray(x, dtype=float)
    if ctrl.kind == "lqr_hover":
        from .dynamics import GRAVITY

        if ctrl._lqr_gain is None:
            ctrl._lqr_gain = _lqr_hover_gain(model, ctrl.gains)
        u_ff = np.array([0.0, GRAVITY])
        u = u_ff - ctrl._lqr_gain @ (x - ctrl.goal)
    elif ctrl.kind == "proportional_goal":
        u = _proportional(ctrl, model, x, ctrl.goal)
    elif ctrl.kind == "waypoint":
        wp = np.asarray(ctrl.waypoints[ctrl._wp_index], dtype=float)
        tol = ctrl.gains.get("waypoint_tol", 0.2)
        pos_dims = list(range(wp.size))
        if (
            np.linalg.norm(x[pos_dims] - wp) < tol
            and ctrl._wp_index < len(ctrl.waypoints) - 1
        ):
            ctrl._wp_index += 1
            wp = np.asarray(ctrl.waypoints[ctrl._wp_index], dtype=float)
        goal = ctrl.goal.copy()
        goal[: wp.size] = wp
        u = _proportional(ctrl, model, x, goal)
    else:
        raise ValueError(f"unknown controller kind {ctrl.kind!r}")
    return model.control_set.clip(u)


def _proportional(ctrl: NominalController, model: DynamicsModel, x, goal):
    g = ctrl.gains
    name = model.name
    if name in ("single_integrator_1d", "drift_1d"):
        return np.array([g.get("kp", 1.0) * (goal[0] - x[0])])
    if name == "double_integrator":
        return np.array(
            [g.get("kp", 1.0) * (goal[0] - x[0]) - g.get("kd", 1.5) * x[1]]
        )
    if name == "unicycle_3d":
        dx, dy = goal[0] - x[0], goal[1] - x[1]
        heading = np.arctan2(dy, dx)
        err = np.arctan2(np.sin(heading - x[2]), np.cos(heading - x[2]))
        omega = g.get("k_heading", 2.0) * err
        dist = float(np.hypot(dx, dy))
        v = g.get("k_speed", 1.0) * dist
        return np.array([v, omega])
    if name == "extended_unicycle":
        dx, dy = goal[0] - x[0], goal[1] - x[1]
        heading = np.arctan2(dy, dx)
        err = np.arctan2(np.sin(heading - x[3]), np.cos(heading - x[3]))
        v_des = g.get("k_speed", 1.0) * float(np.hypot(dx, dy))
        return np.array(
            [g.get("k_accel", 1.0) * (v_des - x[2]), g.get("k_heading", 2.0) * err]
        )
    if name.startswith("planar_quadrotor"):
        from .dynamics import GRAVITY

        kp = g.get("kp", 1.2)
        kd = g.get("kd", 1.6)
        s = kp * (goal[0] - x[0]) - kd * x[2]  # lateral: tan(roll) command
        T = GRAVITY + kp * (goal[1] - x[1]) - kd * x[3]
        return np.array([s / GRAVITY, T])
    raise ValueError(f"no proportional law for model {name!r}")


def nearest_safe_subgoal(field: ValueField, goal, position_dims,
                         margin: float = 0.0, current=None,
                         fixed_values: dict = None):
    """Closest safe node (position distance) to the goal on the zero-velocity
    slice; the goal itself when already safe, the current state when the whole
    slice is unsafe."""
    grid = field.grid
    position_dims = list(position_dims)
    fixed_values = dict(fixed_values or {})
    goal = np.asarray(goal, dtype=float)
    # fix non-position dims at the node nearest the requested value (default 0)
    sel = [slice(None)] * grid.ndim
    goal_state = np.zeros(grid.ndim)
    for d in range(grid.ndim):
        if d in position_dims:
            goal_state[d] = goal[position_dims.index(d)]
            continue
        coords = grid.coordinate_vectors()[d]
        want = fixed_values.get(d, 0.0)
        i = int(np.argmin(np.abs(coords - want)))
        sel[d] = i
        goal_state[d] = coords[i]
    slice_vals = field.values[tuple(sel)]
    try:
        h_goal, _ = interpolate(field, goal_state)
        if h_goal >= margin:
            return goal_state
    except Exception:
        pass
    safe = slice_vals >= margin
    if not np.any(safe):
        return None if current is None else np.asarray(current, dtype=float)
    axes = [grid.coordinate_vectors()[d] for d in position_dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([m for m in mesh], axis=-1)
    dist = np.linalg.norm(pos - goal, axis=-1)
    dist[~safe] = np.inf
    best = np.unravel_index(int(np.argmin(dist)), dist.shape)
    out = goal_state.copy()
    for k, d in enumerate(position_dims):
        out[d] = axes[k][best[k]]
    return out
