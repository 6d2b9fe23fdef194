"""Control/disturbance-affine dynamics models and Hamiltonian evaluation.

All models have the form xdot = f(x) + g(x) u + w(x) d with u, d drawn from
polytopes (boxes in practice). The optimal Hamiltonian max_u min_d <grad, F>
decomposes per input because F is affine, so boxes admit a sign-based fast
path; vertex lists fall back to exhaustive enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class Polytope:
    """Box (lows/highs) or explicit vertex list."""

    kind: str  # "box" | "vertices"
    lows: np.ndarray = None
    highs: np.ndarray = None
    vertex_list: np.ndarray = None

    def __post_init__(self):
        if self.kind == "box":
            lows = np.atleast_1d(np.asarray(self.lows, dtype=float))
            highs = np.atleast_1d(np.asarray(self.highs, dtype=float))
            if lows.shape != highs.shape or np.any(lows > highs):
                raise ValueError("box polytope needs lows <= highs elementwise")
            object.__setattr__(self, "lows", lows)
            object.__setattr__(self, "highs", highs)
        elif self.kind == "vertices":
            verts = np.atleast_2d(np.asarray(self.vertex_list, dtype=float))
            if verts.size == 0:
                raise ValueError("vertex polytope needs at least one vertex")
            object.__setattr__(self, "vertex_list", verts)
        else:
            raise ValueError(f"unknown polytope kind {self.kind!r}")

    @staticmethod
    def box(lows, highs):
        return Polytope(kind="box", lows=lows, highs=highs)

    @staticmethod
    def point(value):
        return Polytope(kind="vertices", vertex_list=np.atleast_2d(value))

    @property
    def dim(self):
        if self.kind == "box":
            return self.lows.shape[0]
        return self.vertex_list.shape[1]

    def vertices(self):
        if self.kind == "box":
            corners = itertools.product(*zip(self.lows, self.highs))
            return np.array(list(corners), dtype=float)
        return self.vertex_list.copy()

    def contains(self, v, tol=1e-9):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.kind == "box":
            return bool(np.all(v >= self.lows - tol) and np.all(v <= self.highs + tol))
        return any(np.allclose(v, vert, atol=tol) for vert in self.vertex_list)

    def clip(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.kind == "box":
            return np.clip(v, self.lows, self.highs)
        dists = np.linalg.norm(self.vertex_list - v, axis=1)
        return self.vertex_list[int(np.argmin(dists))].copy()

    def is_subset_of(self, other: "Polytope", tol=1e-9) -> bool:
        if self.kind == "box" and other.kind == "box":
            return bool(
                np.all(self.lows >= other.lows - tol)
                and np.all(self.highs <= other.highs + tol)
            )
        return all(other.contains(v, tol) for v in self.vertices())

    def support(self, direction):
        """max_{v in P} <direction, v> and the attaining vertex."""
        a = np.atleast_1d(np.asarray(direction, dtype=float))
        if self.kind == "box":
            v = np.where(a >= 0, self.highs, self.lows)
            return float(a @ v), v
        vals = self.vertex_list @ a
        i = int(np.argmax(vals))
        return float(vals[i]), self.vertex_list[i].copy()


@dataclass(frozen=True)
class DynamicsModel:
    """xdot = f(x) + g(x) u + w(x) d. f/g/w accept batched states (..., n)."""

    name: str
    state_dim: int
    control_dim: int
    disturbance_dim: int
    f: callable
    g: callable
    w: callable
    control_set: Polytope = None
    disturbance_set: Polytope = None
    periodic_dims: tuple = field(default=())

    def open_loop(self, x, u, d=None):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = self.f(x) + np.einsum("...ij,j->...i", self.g(x), u)
        if self.disturbance_dim > 0 and d is not None:
            d = np.atleast_1d(np.asarray(d, dtype=float))
            out = out + np.einsum("...ij,j->...i", self.w(x), d)
        return out

    def with_sets(self, control_set=None, disturbance_set=None):
        return replace(
            self,
            control_set=control_set or self.control_set,
            disturbance_set=disturbance_set or self.disturbance_set,
        )


def _zero_matrix(cols):
    def w(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (x.shape[-1], cols))

    return w


def _term_extremum(a, polytope, maximize):
    """Batched extremum of <a, v> over the polytope. a shape (..., m)."""
    if polytope is None or polytope.dim == 0:
        return np.zeros(a.shape[:-1]), np.zeros(a.shape[:-1] + (0,))
    if polytope.kind == "box":
        pick_hi = (a >= 0) if maximize else (a < 0)
        v = np.where(pick_hi, polytope.highs, polytope.lows)
        return np.einsum("...m,...m->...", a, v), v
    vals = np.einsum("...m,vm->...v", a, polytope.vertex_list)
    idx = np.argmax(vals, axis=-1) if maximize else np.argmin(vals, axis=-1)
    best = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
    return best, polytope.vertex_list[idx]


def optimal_hamiltonian(model: DynamicsModel, x, grad, use_vertices=False):
    """Worst-case-disturbance, best-case-control Hamiltonian.

    value = min_d max_u <grad, f + g u + w d>; returns (value, u*, d*).
    Batched over leading axes of x/grad. use_vertices forces enumeration
    (used to validate the box fast path).
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    drift = np.einsum("...i,...i->...", grad, model.f(x))
    a_u = np.einsum("...i,...ij->...j", grad, model.g(x))
    if use_vertices and model.control_set is not None:
        uset = Polytope(kind="vertices", vertex_list=model.control_set.vertices())
    else:
        uset = model.control_set
    u_term, u_star = _term_extremum(a_u, uset, maximize=True)
    value = drift + u_term
    d_star = np.zeros(grad.shape[:-1] + (model.disturbance_dim,))
    if model.disturbance_dim > 0 and model.disturbance_set is not None:
        a_d = np.einsum("...i,...ij->...j", grad, model.w(x))
        dset = model.disturbance_set
        if use_vertices:
            dset = Polytope(kind="vertices", vertex_list=dset.vertices())
        d_term, d_star = _term_extremum(a_d, dset, maximize=False)
        value = value + d_term
    return value, u_star, d_star


def dissipation_bounds(model: DynamicsModel, states):
    """Per-dimension sup of |F_i| over the given states and all U x D vertices.

    Exact for affine dynamics at the sampled states; conservative only up to
    the sampling of x.
    """
    states = np.asarray(states, dtype=float).reshape(-1, model.state_dim)
    if states.size == 0:
        raise ValueError("dissipation_bounds needs a nonempty region")
    f = model.f(states)
    bounds = np.zeros(model.state_dim)
    u_verts = (
        model.control_set.vertices()
        if model.control_set is not None
        else np.zeros((1, model.control_dim))
    )
    d_verts = (
        model.disturbance_set.vertices()
        if (model.disturbance_set is not None and model.disturbance_dim > 0)
        else np.zeros((1, max(model.disturbance_dim, 0)))
    )
    g = model.g(states)
    w = model.w(states) if model.disturbance_dim > 0 else None
    for u in u_verts:
        gu = np.einsum("xij,j->xi", g, u)
        for d in d_verts:
            F = f + gu
            if w is not None and d.size:
                F = F + np.einsum("xij,j->xi", w, d)
            bounds = np.maximum(bounds, np.max(np.abs(F), axis=0))
    return bounds


def integrate_step(model: DynamicsModel, x, u, d=None, dt=0.01):
    """Single RK4 step with u, d held constant over the interval."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = model.open_loop(x, u, d)
    k2 = model.open_loop(x + 0.5 * dt * k1, u, d)
    k3 = model.open_loop(x + 0.5 * dt * k2, u, d)
    k4 = model.open_loop(x + dt * k3, u, d)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------------------
# Built-in models


def single_integrator_1d(u_max=1.0, u_min=None):
    """xdot = u; the 1D desk oracle model."""
    if u_min is None:
        u_min = -u_max

    def f(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    return DynamicsModel(
        name="single_integrator_1d",
        state_dim=1,
        control_dim=1,
        disturbance_dim=0,
        f=f,
        g=g,
        w=_zero_matrix(0),
        control_set=Polytope.box([u_min], [u_max]),
    )


def drift_1d(drift=1.0, u_max=0.5):
    """xdot = drift + u with |u| <= u_max; empty viability kernel when
    drift > u_max (the state is forced out of any bounded interval)."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, drift)

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    return DynamicsModel(
        name="drift_1d",
        state_dim=1,
        control_dim=1,
        disturbance_dim=0,
        f=f,
        g=g,
        w=_zero_matrix(0),
        control_set=Polytope.box([-u_max], [u_max]),
    )


def double_integrator(u_max=1.0, d_max=0.0):
    """pdot = v, vdot = u (+ d on the acceleration when d_max > 0)."""

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 1, 0] = 1.0
        return out

    dist_dim = 1 if d_max > 0 else 0

    def w(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, dist_dim))
        if dist_dim:
            out[..., 1, 0] = 1.0
        return out

    return DynamicsModel(
        name="double_integrator",
        state_dim=2,
        control_dim=1,
        disturbance_dim=dist_dim,
        f=f,
        g=g,
        w=w,
        control_set=Polytope.box([-u_max], [u_max]),
        disturbance_set=Polytope.box([-d_max], [d_max]) if dist_dim else None,
    )


def extended_unicycle(a_max=1.0, omega_max=2.0, v_min_input=None):
    """px' = v cos(th), py' = v sin(th), v' = a, th' = omega; inputs (a, omega)."""

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 2] * np.cos(x[..., 3])
        out[..., 1] = x[..., 2] * np.sin(x[..., 3])
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (4, 2))
        out[..., 2, 0] = 1.0
        out[..., 3, 1] = 1.0
        return out

    return DynamicsModel(
        name="extended_unicycle",
        state_dim=4,
        control_dim=2,
        disturbance_dim=0,
        f=f,
        g=g,
        w=_zero_matrix(0),
        control_set=Polytope.box([-a_max, -omega_max], [a_max, omega_max]),
        periodic_dims=(3,),
    )


def unicycle_3d(v_min=0.1, v_max=1.0, omega_max=2.0):
    """Speed-controlled unicycle on (px, py, th): inputs (v, omega), v >= v_min.

    The minimum forward velocity makes stopping impossible, which is what
    makes naive per-obstacle barrier combinations unsafe in tight passages.
    """

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (3, 2))
        out[..., 0, 0] = np.cos(x[..., 2])
        out[..., 1, 0] = np.sin(x[..., 2])
        out[..., 2, 1] = 1.0
        return out

    return DynamicsModel(
        name="unicycle_3d",
        state_dim=3,
        control_dim=2,
        disturbance_dim=0,
        f=f,
        g=g,
        w=_zero_matrix(0),
        control_set=Polytope.box([v_min, -omega_max], [v_max, omega_max]),
        periodic_dims=(2,),
    )


GRAVITY = 9.81


def planar_quadrotor(
    phi_max=0.3, thrust_min=0.5 * GRAVITY, thrust_max=1.5 * GRAVITY, d_max=None
):
    """py' = vy (+d0), pz' = vz (+d1), vy' = g tan(phi), vz' = T - g.

    Inputs (phi, T). phi bounds must stay strictly inside (-pi/2, pi/2) to keep
    tan finite. d_max=(dy, dz) adds a velocity-level wind disturbance.
    """
    if not 0 < phi_max < np.pi / 2:
        raise ValueError("phi_max must lie in (0, pi/2)")

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 2]
        out[..., 1] = x[..., 3]
        out[..., 3] = -GRAVITY
        return out

    # tan(phi) is nonlinear in phi, so the control is the pre-warped input
    # s = tan(phi); bounds map monotonically and the dynamics stay affine.
    s_max = np.tan(phi_max)

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (4, 2))
        out[..., 2, 0] = GRAVITY
        out[..., 3, 1] = 1.0
        return out

    dist_dim = 2 if d_max is not None else 0

    def w(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (4, dist_dim))
        if dist_dim:
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = 1.0
        return out

    dset = None
    if dist_dim:
        d_max_arr = np.atleast_1d(np.asarray(d_max, dtype=float))
        if d_max_arr.size == 1:
            d_max_arr = np.repeat(d_max_arr, 2)
        dset = Polytope.box(-d_max_arr, d_max_arr)

    return DynamicsModel(
        name="planar_quadrotor_disturbed" if dist_dim else "planar_quadrotor",
        state_dim=4,
        control_dim=2,
        disturbance_dim=dist_dim,
        f=f,
        g=g,
        w=w,
        control_set=Polytope.box([-s_max, thrust_min], [s_max, thrust_max]),
        disturbance_set=dset,
    )


def planar_quadrotor_disturbed(phi_max=0.3, thrust_min=0.5 * GRAVITY,
                               thrust_max=1.5 * GRAVITY, d_max=(0.3, 0.3)):
    return planar_quadrotor(phi_max, thrust_min, thrust_max, d_max=d_max)


MODEL_BUILDERS = {
    "single_integrator_1d": single_integrator_1d,
    "drift_1d": drift_1d,
    "double_integrator": double_integrator,
    "extended_unicycle": extended_unicycle,
    "unicycle_3d": unicycle_3d,
    "planar_quadrotor": planar_quadrotor,
    "planar_quadrotor_disturbed": planar_quadrotor_disturbed,
}


def build_model(name, **params) -> DynamicsModel:
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODEL_BUILDERS)}")
    return builder(**params)
