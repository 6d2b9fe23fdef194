"""Localized active-set contraction of a candidate value function.

Only grid nodes near the zero level set ("potentially unsafe") receive the
contractive DP update; nodes whose value decreased seed the next active set
via axis-aligned padding. On convergence (empty active set) the 0-superlevel
set is the viability kernel of the candidate's own safe set, at a fraction of
the node updates a global sweep needs when the damage is localized.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dynamics import DynamicsModel
from .grid import Grid, ValueField, finite_difference
from .refine import EnvironmentDelta, EnvironmentState, classify_update
from .solver import (
    ConstraintFunction,
    HamiltonianEvaluator,
    SolverFault,
    SolverSettings,
    cfl_dt,
)

DECREASE_TOL = 1e-12  # "value changed" means decreased by more than this


@dataclass
class ActiveSet:
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def count(self) -> int:
        return int(np.sum(self.mask))

    def indices(self) -> np.ndarray:
        """Multi-indices of active nodes, shape (count, ndim)."""
        return np.argwhere(self.mask)

    @staticmethod
    def empty(grid: Grid) -> "ActiveSet":
        return ActiveSet(np.zeros(grid.counts, dtype=bool))


@dataclass(frozen=True)
class PatchSettings:
    zeta: float = None  # None: auto from band gradient at (re)initialization
    zeta_kappa: float = 2.0
    pad_order: int = None  # None: tied to solver.fd_order
    solver: SolverSettings = dc_field(default_factory=SolverSettings)

    def effective_pad(self) -> int:
        p = self.pad_order if self.pad_order is not None else self.solver.fd_order
        if p < 1:
            raise ValueError("pad order must be >= 1")
        return p


def near_boundary_set(field: ValueField, zeta: float) -> np.ndarray:
    """Boolean mask of nodes with |h| <= zeta."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    return np.abs(field.values) <= zeta


def pad(mask: np.ndarray, p: int, grid: Grid) -> np.ndarray:
    """Union of (2p+1)^n neighborhoods; wraps periodic dims, clips the rest.

    Box dilation is separable, so each axis is dilated independently.
    """
    out = np.asarray(mask, dtype=bool).copy()
    for axis in range(grid.ndim):
        acc = out.copy()
        for shift in range(1, p + 1):
            if grid.periodic[axis]:
                acc |= np.roll(out, shift, axis=axis)
                acc |= np.roll(out, -shift, axis=axis)
            else:
                rolled_fwd = np.roll(out, shift, axis=axis)
                rolled_back = np.roll(out, -shift, axis=axis)
                sl = [slice(None)] * grid.ndim
                sl[axis] = slice(0, shift)
                rolled_fwd[tuple(sl)] = False
                sl[axis] = slice(-shift, None)
                rolled_back[tuple(sl)] = False
                acc |= rolled_fwd
                acc |= rolled_back
        out = acc
    return out


def auto_zeta(field: ValueField, settings: PatchSettings) -> float:
    """Band half-width kappa * max spacing * max gradient norm near the boundary."""
    if settings.zeta is not None:
        return settings.zeta
    grads = finite_difference(field, order=settings.solver.fd_order)
    gnorm = np.linalg.norm(grads.central_stack(), axis=-1)
    max_dx = max(field.grid.spacing)
    band = np.abs(field.values) <= settings.zeta_kappa * max_dx * max(
        float(np.max(gnorm)), 1.0
    )
    g_hat = float(np.max(gnorm[band])) if np.any(band) else float(np.max(gnorm))
    return settings.zeta_kappa * max_dx * max(g_hat, 1e-6)


@dataclass
class PatchState:
    field: ValueField
    active: ActiveSet
    zeta: float
    env: EnvironmentState = None
    iteration: int = 0


def init_patch(h0: ValueField, model: DynamicsModel, settings: PatchSettings,
               constraint: ConstraintFunction = None,
               certified: np.ndarray = None) -> PatchState:
    """Clip below ell (when given), build the initial near-boundary active set,
    and drop oracle-certified cells (honored at initialization only)."""
    values = np.array(h0.values)
    if constraint is not None:
        values = np.minimum(constraint.on_grid(h0.grid), values)
    field = h0.publish(values)
    zeta = auto_zeta(field, settings)
    mask = near_boundary_set(field, zeta)
    if certified is not None:
        mask &= ~np.asarray(certified, dtype=bool)
    return PatchState(field=field, active=ActiveSet(mask), zeta=zeta)


def patch_iteration(state: PatchState, model: DynamicsModel,
                    settings: PatchSettings,
                    evaluator: HamiltonianEvaluator = None) -> PatchState:
    """One localized contraction sweep over the active set."""
    field = state.field
    if state.active.count == 0:
        state.field = field.publish()
        state.iteration += 1
        return state
    if evaluator is None:
        evaluator = HamiltonianEvaluator(model, field.grid, settings.solver.fd_order)
    idx = state.active.indices()
    values = np.array(field.values)
    sub = settings.solver
    dt_cfl = cfl_dt(model, field.grid, sub, alpha=evaluator.alpha)
    n_sub = max(1, int(np.ceil(sub.delta / dt_cfl - 1e-12)))
    dt = sub.delta / n_sub
    sel = tuple(idx[:, d] for d in range(field.grid.ndim))
    for _ in range(n_sub):
        ham = evaluator.hamiltonian_at(values, idx)
        values[sel] = values[sel] + dt * np.minimum(0.0, ham)
    if not np.all(np.isfinite(values[sel])):
        bad = int(np.argmax(~np.isfinite(values[sel])))
        raise SolverFault(tuple(idx[bad]))
    decreased = np.zeros(field.grid.counts, dtype=bool)
    decreased[sel] = field.values[sel] - values[sel] > DECREASE_TOL
    new_field = field.publish(values)
    band = near_boundary_set(new_field, state.zeta)
    new_mask = pad(decreased, settings.effective_pad(), field.grid) & band
    state.field = new_field
    state.active = ActiveSet(new_mask)
    state.iteration += 1
    return state


def patch_apply_delta(state: PatchState, delta: EnvironmentDelta,
                      settings: PatchSettings,
                      env: EnvironmentState = None) -> PatchState:
    """Environment-change branch logic: worse actuation/disturbance activates
    the whole boundary band; new obstacles clip the field and activate the
    overlap; safety-enhancing updates leave the active set alone."""
    old_env = env if env is not None else state.env
    if old_env is None:
        raise ValueError("patch_apply_delta needs the current environment")
    new_env = delta.apply(old_env)
    grid = state.field.grid
    values = np.array(state.field.values)
    mask = state.active.mask.copy()

    from .refine import _sets_grown, _sets_shrunk  # shared inclusion tests

    if _sets_shrunk(new_env.control_set, old_env.control_set) or _sets_grown(
        new_env.disturbance_set, old_env.disturbance_set
    ):
        mask = near_boundary_set(state.field, state.zeta)

    ell_new = new_env.constraint.on_grid(grid)
    violated = values > ell_new + 1e-9
    if np.any(violated):
        values = np.minimum(ell_new, values)
        new_field = state.field.publish(values)
        band = near_boundary_set(new_field, state.zeta)
        mask = (mask | violated) & band
        state.field = new_field
    state.active = ActiveSet(mask)
    state.env = new_env
    return state


@dataclass
class PatchStats:
    iterations: int = 0
    total_node_updates: int = 0
    active_counts: list = dc_field(default_factory=list)
    sup_deltas: list = dc_field(default_factory=list)
    wall_nanos: list = dc_field(default_factory=list)
    converged: bool = False

    def to_csv(self) -> str:
        lines = ["iteration,active_count,sup_delta,wall_nanos"]
        for i, (c, d, w) in enumerate(
            zip(self.active_counts, self.sup_deltas, self.wall_nanos)
        ):
            lines.append(f"{i},{c},{d:.6e},{w}")
        return "\n".join(lines) + "\n"


def run_patch(h0: ValueField, model: DynamicsModel, settings: PatchSettings,
              constraint: ConstraintFunction = None, certified: np.ndarray = None):
    """Iterate until the active set empties. Returns (field, stats)."""
    state = init_patch(h0, model, settings, constraint, certified)
    evaluator = HamiltonianEvaluator(model, h0.grid, settings.solver.fd_order)
    stats = PatchStats()
    dt_cfl = cfl_dt(model, h0.grid, settings.solver, alpha=evaluator.alpha)
    n_sub = max(1, int(np.ceil(settings.solver.delta / dt_cfl - 1e-12)))
    for _ in range(settings.solver.max_iterations):
        if state.active.count == 0:
            stats.converged = True
            break
        count = state.active.count
        prev = state.field.values
        t0 = time.perf_counter_ns()
        state = patch_iteration(state, model, settings, evaluator)
        elapsed = time.perf_counter_ns() - t0
        stats.iterations += 1
        stats.total_node_updates += count * n_sub
        stats.active_counts.append(count)
        stats.sup_deltas.append(float(np.max(np.abs(state.field.values - prev))))
        stats.wall_nanos.append(elapsed)
    return state.field, stats
