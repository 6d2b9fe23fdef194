"""HJ dynamic-programming kernels and constraint (signed-distance) functions.

Two update rules over a grid-sampled value function h:

  pde:  h <- h + dt * min(0, H*)            (contractive, values only decrease)
  vi:   h <- min(ell, h + dt * H*)          (clipped above by the constraint)

H* is the worst-case-disturbance optimal Hamiltonian, discretized with upwind
differences and global Lax-Friedrichs dissipation. Time steps satisfy a CFL
bound; a fixed outer step is split into CFL-satisfying substeps internally.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import DynamicsModel, dissipation_bounds, optimal_hamiltonian
from .grid import Grid, GradientField, ValueField, finite_difference

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is a hard dependency
    _njit = None


# ---------------------------------------------------------------------------
# Obstacle shapes and constraint functions


@dataclass(frozen=True)
class Shape:
    """Obstacle primitive over the constraint's position dims (SDF < 0 inside)."""

    kind: str  # circle | box | halfspace | sampled
    id: str = ""
    center: tuple = None
    radius: float = None
    lows: tuple = None
    highs: tuple = None
    normal: tuple = None
    offset: float = None
    axes: tuple = None  # coordinate vectors for sampled SDFs
    sdf_values: np.ndarray = None

    def sdf(self, pos):
        """Signed distance at positions (..., k); negative inside the obstacle."""
        pos = np.asarray(pos, dtype=float)
        if self.kind == "circle":
            c = np.asarray(self.center, dtype=float)
            return np.linalg.norm(pos - c, axis=-1) - self.radius
        if self.kind == "box":
            lo = np.asarray(self.lows, dtype=float)
            hi = np.asarray(self.highs, dtype=float)
            center = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            q = np.abs(pos - center) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(np.max(q, axis=-1), 0.0)
            return outside + inside
        if self.kind == "halfspace":
            # obstacle is {p | <n, p> + offset <= 0}; n need not be unit
            n = np.asarray(self.normal, dtype=float)
            return (pos @ n + self.offset) / np.linalg.norm(n)
        if self.kind == "sampled":
            return _interp_nd(self.axes, self.sdf_values, pos)
        raise ValueError(f"unknown shape kind {self.kind!r}")


def _interp_nd(axes, values, pos):
    """Multilinear interpolation of a sampled array, clamped at the edges."""
    pos = np.asarray(pos, dtype=float)
    flat = pos.reshape(-1, pos.shape[-1])
    out = np.zeros(flat.shape[0])
    idx = []
    frac = []
    for d, ax in enumerate(axes):
        ax = np.asarray(ax, dtype=float)
        t = (flat[:, d] - ax[0]) / (ax[1] - ax[0])
        t = np.clip(t, 0.0, len(ax) - 1.0)
        i = np.minimum(t.astype(int), len(ax) - 2)
        idx.append(i)
        frac.append(t - i)
    for corner in range(1 << len(axes)):
        w = np.ones(flat.shape[0])
        at = []
        for d in range(len(axes)):
            bit = (corner >> d) & 1
            w = w * (frac[d] if bit else 1.0 - frac[d])
            at.append(idx[d] + bit)
        out += w * values[tuple(at)]
    return out.reshape(pos.shape[:-1])


@dataclass(frozen=True)
class ConstraintFunction:
    """ell(x) >= 0 iff x is failure-free: outside every obstacle shape and
    (optionally) inside the domain box with the configured margin."""

    shapes: tuple = ()
    position_dims: tuple = (0, 1)
    domain_lower: tuple = None  # over position-independent full state dims
    domain_upper: tuple = None
    domain_dims: tuple = None
    domain_margin: float = 0.0
    weight: float = 1.0

    def evaluate(self, x):
        """ell at states (..., n)."""
        x = np.asarray(x, dtype=float)
        pos = x[..., list(self.position_dims)] if self.position_dims else x
        val = np.full(x.shape[:-1], np.inf)
        for shape in self.shapes:
            val = np.minimum(val, shape.sdf(pos))
        if self.domain_dims:
            lo = np.asarray(self.domain_lower, dtype=float)
            hi = np.asarray(self.domain_upper, dtype=float)
            xs = x[..., list(self.domain_dims)]
            border = np.minimum(np.min(xs - lo, axis=-1), np.min(hi - xs, axis=-1))
            val = np.minimum(val, border - self.domain_margin)
        return self.weight * val

    def __call__(self, x):
        return self.evaluate(x)

    def on_grid(self, grid: Grid):
        return self.evaluate(grid.states())

    def with_shape(self, shape: Shape):
        return replace(self, shapes=self.shapes + (shape,))

    def without_shape(self, shape_id: str):
        kept = tuple(s for s in self.shapes if s.id != shape_id)
        if len(kept) == len(self.shapes):
            raise KeyError(f"no shape with id {shape_id!r}")
        return replace(self, shapes=kept)

    @staticmethod
    def for_grid(grid: Grid, shapes=(), position_dims=(0, 1), margin=0.0,
                 domain_dims=None, weight=1.0):
        """Constraint over a grid's non-periodic extent (domain acts as walls)."""
        if domain_dims is None:
            domain_dims = tuple(i for i, p in enumerate(grid.periodic) if not p)
        return ConstraintFunction(
            shapes=tuple(shapes),
            position_dims=tuple(position_dims),
            domain_lower=tuple(grid.lower[i] for i in domain_dims),
            domain_upper=tuple(grid.upper[i] for i in domain_dims),
            domain_dims=tuple(domain_dims),
            domain_margin=margin,
            weight=weight,
        )


def sdf_evaluate(constraint: ConstraintFunction, x):
    return float(constraint.evaluate(np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# Solver settings and Hamiltonian evaluation


@dataclass(frozen=True)
class SolverSettings:
    time_step_mode: str = "fixed"  # "fixed" | "cfl"
    delta: float = 0.1
    cfl_factor: float = 0.5
    convergence_eps: float = 1e-4
    max_iterations: int = 2000
    fd_order: int = 1

    def __post_init__(self):
        if self.delta <= 0 or self.convergence_eps <= 0:
            raise ValueError("delta and convergence_eps must be positive")
        if not 0 < self.cfl_factor <= 1:
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.time_step_mode not in ("fixed", "cfl"):
            raise ValueError("time_step_mode must be 'fixed' or 'cfl'")


class SolverFault(RuntimeError):
    def __init__(self, node, message="non-finite value produced"):
        self.node = node
        super().__init__(f"{message} at node {node}")


class _FieldView:
    """Cheap (grid, values) pair for inner substeps; skips ValueField's
    defensive copy and finiteness check on every substep."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        self.grid = grid
        self.values = values


def _make_hamiltonian_kernel():
    """Compiled whole-grid dissipated-Hamiltonian sweep (box input sets).

    The outer DP loop spends nearly all its time here, so the per-node work
    (upwind ENO differences, bang-bang control/disturbance optimization, and
    Lax-Friedrichs dissipation) is fused into one pass over the flat array.
    Math mirrors finite_difference + _optimal_value term for term.
    """
    if _njit is None:
        return None

    @_njit(cache=True)
    def kernel(v, f, g, w, u_lo, u_hi, d_lo, d_hi, alpha, spacing,
               counts, periodic, strides, order, out):
        nd = counts.shape[0]
        m = u_lo.shape[0]
        p = d_lo.shape[0]
        n_nodes = v.shape[0]
        central = np.empty(nd)
        for i in range(n_nodes):
            value = 0.0
            diss = 0.0
            for d in range(nd):
                c = counts[d]
                st = strides[d]
                k = (i // st) % c
                dx = spacing[d]
                if periodic[d]:
                    ip = i + ((k + 1) % c - k) * st
                    im = i + ((k - 1) % c - k) * st
                else:
                    kp = k + 1 if k + 1 < c else c - 1
                    km = k - 1 if k > 0 else 0
                    ip = i + (kp - k) * st
                    im = i + (km - k) * st
                v0 = v[i]
                vp = v[ip]
                vm = v[im]
                left = (v0 - vm) / dx
                right = (vp - v0) / dx
                if order == 2:
                    if periodic[d]:
                        ipp = i + ((k + 2) % c - k) * st
                        imm = i + ((k - 2) % c - k) * st
                    else:
                        kpp = k + 2 if k + 2 < c else c - 1
                        kmm = k - 2 if k - 2 > 0 else 0
                        ipp = i + (kpp - k) * st
                        imm = i + (kmm - k) * st
                    dx2 = dx * dx
                    d2 = (vp - 2.0 * v0 + vm) / dx2
                    d2m = (v0 - 2.0 * vm + v[imm]) / dx2
                    d2p = (v[ipp] - 2.0 * vp + v0) / dx2
                    cm = d2m if abs(d2m) <= abs(d2) else d2
                    cp = d2 if abs(d2) <= abs(d2p) else d2p
                    left = left + 0.5 * dx * cm
                    right = right - 0.5 * dx * cp
                if not periodic[d]:
                    if k == 0:
                        left = 0.0
                    if k == c - 1:
                        right = 0.0
                central[d] = 0.5 * (left + right)
                value += central[d] * f[i, d]
                diss += 0.5 * alpha[d] * (right - left)
            for j in range(m):
                a = 0.0
                for d in range(nd):
                    a += central[d] * g[i, d, j]
                value += a * (u_hi[j] if a >= 0.0 else u_lo[j])
            for j in range(p):
                a = 0.0
                for d in range(nd):
                    a += central[d] * w[i, d, j]
                value += a * (d_lo[j] if a >= 0.0 else d_hi[j])
            out[i] = value + diss
        return out

    return kernel


_HAMILTONIAN_KERNEL = _make_hamiltonian_kernel()


class HamiltonianEvaluator:
    """Caches grid states, dynamics terms, and Lax-Friedrichs dissipation for
    one (model, grid) pair; the dynamics matrices depend on x only, so they
    are evaluated once."""

    def __init__(self, model: DynamicsModel, grid: Grid, fd_order: int = 1):
        self.model = model
        self.grid = grid
        self.fd_order = fd_order
        self.states = grid.states()
        self.alpha = dissipation_bounds(model, self.states)
        self._f = model.f(self.states)
        self._g = model.g(self.states)
        self._w = (
            model.w(self.states)
            if (model.disturbance_dim > 0 and model.disturbance_set is not None)
            else None
        )
        self._kernel_args = self._prepare_kernel()

    def _prepare_kernel(self):
        """Flat, contiguous views for the compiled sweep; None when a set is
        not a box (the numpy vertex-enumeration path handles those)."""
        if _HAMILTONIAN_KERNEL is None:
            return None
        uset = self.model.control_set
        dset = self.model.disturbance_set if self._w is not None else None
        if uset is not None and uset.kind != "box":
            return None
        if dset is not None and dset.kind != "box":
            return None
        grid = self.grid
        n = grid.num_nodes
        nd = grid.ndim
        f = np.ascontiguousarray(self._f.reshape(n, nd), dtype=float)
        if uset is not None:
            g = np.ascontiguousarray(
                self._g.reshape(n, nd, -1), dtype=float)
            u_lo = np.asarray(uset.lows, dtype=float)
            u_hi = np.asarray(uset.highs, dtype=float)
        else:
            g = np.zeros((n, nd, 0))
            u_lo = np.zeros(0)
            u_hi = np.zeros(0)
        if dset is not None:
            w = np.ascontiguousarray(
                self._w.reshape(n, nd, -1), dtype=float)
            d_lo = np.asarray(dset.lows, dtype=float)
            d_hi = np.asarray(dset.highs, dtype=float)
        else:
            w = np.zeros((n, nd, 0))
            d_lo = np.zeros(0)
            d_hi = np.zeros(0)
        counts = np.asarray(grid.counts, dtype=np.int64)
        strides = np.ones(nd, dtype=np.int64)
        for d in range(nd - 2, -1, -1):
            strides[d] = strides[d + 1] * counts[d + 1]
        return (
            f, g, w, u_lo, u_hi, d_lo, d_hi,
            np.asarray(self.alpha, dtype=float),
            np.asarray(grid.spacing, dtype=float),
            counts,
            np.asarray(grid.periodic, dtype=np.bool_),
            strides,
        )

    def _optimal_value(self, central):
        """min over d, max over u of <central, f + g u + w d> at every node."""
        value = np.einsum("...i,...i->...", central, self._f)
        uset = self.model.control_set
        if uset is not None:
            a_u = np.einsum("...i,...ij->...j", central, self._g)
            if uset.kind == "box":
                u_star = np.where(a_u >= 0, uset.highs, uset.lows)
                value = value + np.einsum("...m,...m->...", a_u, u_star)
            else:
                vals = np.einsum("...m,vm->...v", a_u, uset.vertex_list)
                value = value + np.max(vals, axis=-1)
        if self._w is not None:
            dset = self.model.disturbance_set
            a_d = np.einsum("...i,...ij->...j", central, self._w)
            if dset.kind == "box":
                d_star = np.where(a_d >= 0, dset.lows, dset.highs)
                value = value + np.einsum("...m,...m->...", a_d, d_star)
            else:
                vals = np.einsum("...m,vm->...v", a_d, dset.vertex_list)
                value = value + np.min(vals, axis=-1)
        return value

    def hamiltonian(self, field):
        """Dissipated optimal Hamiltonian at every node."""
        if self._kernel_args is not None:
            v = np.ascontiguousarray(field.values, dtype=float).ravel()
            out = np.empty(v.shape[0])
            _HAMILTONIAN_KERNEL(v, *self._kernel_args, self.fd_order, out)
            return out.reshape(self.grid.counts)
        grads = finite_difference(field, order=self.fd_order, boundary="zero")
        central = grads.central_stack()
        value = self._optimal_value(central)
        # h evolves forward as h += dt*H, so the stabilizing viscosity enters
        # with a plus sign (upwinding: for H ~ a*h_x this picks the forward
        # quotient when a > 0)
        for i in range(self.grid.ndim):
            value = value + 0.5 * self.alpha[i] * (grads.right[i] - grads.left[i])
        return value

    def hamiltonian_at(self, values: np.ndarray, idx: np.ndarray):
        """Dissipated Hamiltonian at the given multi-indices only (HJ-Patch path).

        idx has shape (K, ndim). Gradients are computed from direct neighbor
        gathers so the cost scales with K, not with the grid size.
        """
        left, right = _local_differences(
            self.grid, values, idx, order=self.fd_order
        )
        central = 0.5 * (left + right)
        x = self.grid.lower + idx * np.asarray(self.grid.spacing)
        value, _, _ = optimal_hamiltonian(self.model, x, central)
        value = value + 0.5 * np.sum(self.alpha * (right - left), axis=-1)
        return value


def _gather_shifted(grid: Grid, values, idx, axis, offset):
    """values at idx shifted along one axis, replicating edges (non-periodic)."""
    cols = []
    c = grid.counts[axis]
    shifted = idx[:, axis] + offset
    if grid.periodic[axis]:
        shifted = shifted % c
    else:
        shifted = np.clip(shifted, 0, c - 1)
    for d in range(grid.ndim):
        cols.append(shifted if d == axis else idx[:, d])
    return values[tuple(cols)]


def _local_differences(grid: Grid, values, idx, order=1):
    """One-sided differences at selected nodes; mirrors finite_difference."""
    K = idx.shape[0]
    left = np.zeros((K, grid.ndim))
    right = np.zeros((K, grid.ndim))
    v0 = values[tuple(idx[:, d] for d in range(grid.ndim))]
    for axis in range(grid.ndim):
        dx = grid.spacing[axis]
        c = grid.counts[axis]
        vp = _gather_shifted(grid, values, idx, axis, +1)
        vm = _gather_shifted(grid, values, idx, axis, -1)
        l = (v0 - vm) / dx
        r = (vp - v0) / dx
        if order == 2:
            vpp = _gather_shifted(grid, values, idx, axis, +2)
            vmm = _gather_shifted(grid, values, idx, axis, -2)
            d2 = (vp - 2 * v0 + vm) / (dx * dx)
            d2m = (v0 - 2 * vm + vmm) / (dx * dx)
            d2p = (vpp - 2 * vp + v0) / (dx * dx)
            l = l + 0.5 * dx * np.where(np.abs(d2m) <= np.abs(d2), d2m, d2)
            r = r - 0.5 * dx * np.where(np.abs(d2) <= np.abs(d2p), d2, d2p)
        if not grid.periodic[axis]:
            # Neumann edges, matching finite_difference(boundary="zero")
            at_lo = idx[:, axis] == 0
            at_hi = idx[:, axis] == c - 1
            l = np.where(at_lo, 0.0, l)
            r = np.where(at_hi, 0.0, r)
        left[:, axis] = l
        right[:, axis] = r
    return left, right


# ---------------------------------------------------------------------------
# Time stepping


def cfl_dt(model: DynamicsModel, grid: Grid, settings: SolverSettings,
           region_states=None, alpha=None):
    """CFL-bounded time step: c / sum_i(maxspeed_i / spacing_i), capped at delta."""
    if alpha is None:
        states = region_states if region_states is not None else grid.states()
        alpha = dissipation_bounds(model, states)
    denom = float(np.sum(np.asarray(alpha) / np.asarray(grid.spacing)))
    if denom <= 0.0:
        return settings.delta
    return min(settings.delta, settings.cfl_factor / denom)


def _substeps(settings: SolverSettings, evaluator: HamiltonianEvaluator):
    dt_cfl = cfl_dt(evaluator.model, evaluator.grid, settings, alpha=evaluator.alpha)
    if settings.time_step_mode == "cfl":
        return 1, dt_cfl
    n = max(1, math.ceil(settings.delta / dt_cfl - 1e-12))
    return n, settings.delta / n


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        node = np.unravel_index(
            int(np.argmax(~np.isfinite(values))), values.shape
        )
        raise SolverFault(node)


def pde_step(field: ValueField, model: DynamicsModel, settings: SolverSettings,
             evaluator: HamiltonianEvaluator = None) -> ValueField:
    """One outer step of the contractive update h += dt * min(0, H*)."""
    if evaluator is None:
        evaluator = HamiltonianEvaluator(model, field.grid, settings.fd_order)
    values = np.array(field.values)
    n_sub, dt = _substeps(settings, evaluator)
    for _ in range(n_sub):
        ham = evaluator.hamiltonian(_FieldView(field.grid, values))
        values = values + dt * np.minimum(0.0, ham)
    _check_finite(values)
    return field.with_values(values)


def vi_step(field: ValueField, constraint_values: np.ndarray, model: DynamicsModel,
            settings: SolverSettings, evaluator: HamiltonianEvaluator = None) -> ValueField:
    """One outer step of the variational-inequality update h = min(ell, h + dt H*)."""
    if evaluator is None:
        evaluator = HamiltonianEvaluator(model, field.grid, settings.fd_order)
    values = np.array(field.values)
    n_sub, dt = _substeps(settings, evaluator)
    for _ in range(n_sub):
        ham = evaluator.hamiltonian(_FieldView(field.grid, values))
        values = np.minimum(constraint_values, values + dt * ham)
    _check_finite(values)
    return field.with_values(values)


@dataclass
class ConvergenceResult:
    field: ValueField
    iterations: int
    deltas: list
    converged: bool
    node_updates: int
    wall_seconds: float = 0.0


def run_to_convergence(init: ValueField, update: str, model: DynamicsModel,
                       settings: SolverSettings, constraint: ConstraintFunction = None,
                       constraint_values: np.ndarray = None,
                       evaluator: HamiltonianEvaluator = None) -> ConvergenceResult:
    """Iterate pde or vi steps until the sup-norm change drops below eps."""
    if update not in ("pde", "vi"):
        raise ValueError("update must be 'pde' or 'vi'")
    if evaluator is None:
        evaluator = HamiltonianEvaluator(model, init.grid, settings.fd_order)
    if update == "vi" and constraint_values is None:
        if constraint is None:
            raise ValueError("vi update needs a constraint function")
        constraint_values = constraint.on_grid(init.grid)
    t0 = time.perf_counter()
    field = init
    deltas = []
    n_sub, _ = _substeps(settings, evaluator)
    node_updates = 0
    converged = False
    for _ in range(settings.max_iterations):
        if update == "pde":
            new = pde_step(field, model, settings, evaluator)
        else:
            new = vi_step(field, constraint_values, model, settings, evaluator)
        node_updates += n_sub * field.grid.num_nodes
        sup = float(np.max(np.abs(new.values - field.values)))
        deltas.append(sup)
        field = new
        if sup <= settings.convergence_eps:
            converged = True
            break
    return ConvergenceResult(
        field=field,
        iterations=len(deltas),
        deltas=deltas,
        converged=converged,
        node_updates=node_updates,
        wall_seconds=time.perf_counter() - t0,
    )


def stationarity_residual(field: ValueField, model: DynamicsModel,
                          settings: SolverSettings, constraint_values=None,
                          evaluator: HamiltonianEvaluator = None):
    """Per-node stationarity: min(0, H*) for pde; min(ell - h, H*) for vi.

    A converged field should have residual >= -tol everywhere (the residual is
    clipped from above at 0 for the pde form so 'residual >= -tol' is the test).
    """
    if evaluator is None:
        evaluator = HamiltonianEvaluator(model, field.grid, settings.fd_order)
    ham = evaluator.hamiltonian(field)
    if constraint_values is None:
        return np.minimum(0.0, ham)
    return np.minimum(constraint_values - field.values, ham)
