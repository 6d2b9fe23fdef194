"""Warm-started value-function refinement with in-the-loop environment updates.

Two modes:

  plain      VI updates only; converges to the viability kernel of the
             constraint set from any conservative initialization.
  safeadapt  two-phase: contractive pde updates ("retracting") until the
             field is stationary, then VI updates ("refining"). Safety-
             decreasing environment changes clip the field to the new
             constraint and force a return to the retracting phase, which
             keeps the count of falsely-safe nodes non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .dynamics import DynamicsModel, Polytope
from .grid import ValueField
from .solver import (
    ConstraintFunction,
    HamiltonianEvaluator,
    Shape,
    SolverSettings,
    pde_step,
    vi_step,
)

# strict tolerance on "exists x with h > ell" so float noise cannot flap the phase
CLIP_TOL = 1e-9


@dataclass(frozen=True)
class EnvironmentState:
    constraint: ConstraintFunction
    control_set: Polytope
    disturbance_set: Polytope = None
    revision: int = 0


@dataclass(frozen=True)
class EnvironmentDelta:
    """One environment change. classification is computed, never supplied."""

    kind: str  # add_obstacle | remove_obstacle | set_control_bounds |
    #            set_disturbance_bounds | set_constraint
    shape: Shape = None
    shape_id: str = None
    control_set: Polytope = None
    disturbance_set: Polytope = None
    constraint: ConstraintFunction = None

    def apply(self, env: EnvironmentState) -> EnvironmentState:
        if self.kind == "add_obstacle":
            return replace(
                env,
                constraint=env.constraint.with_shape(self.shape),
                revision=env.revision + 1,
            )
        if self.kind == "remove_obstacle":
            return replace(
                env,
                constraint=env.constraint.without_shape(self.shape_id),
                revision=env.revision + 1,
            )
        if self.kind == "set_control_bounds":
            return replace(env, control_set=self.control_set, revision=env.revision + 1)
        if self.kind == "set_disturbance_bounds":
            return replace(
                env, disturbance_set=self.disturbance_set, revision=env.revision + 1
            )
        if self.kind == "set_constraint":
            return replace(env, constraint=self.constraint, revision=env.revision + 1)
        raise ValueError(f"unknown delta kind {self.kind!r}")


def _sets_shrunk(new: Polytope, old: Polytope) -> bool:
    if new is None or old is None:
        return False
    return new.is_subset_of(old) and not old.is_subset_of(new)


def _sets_grown(new: Polytope, old: Polytope) -> bool:
    if old is None:
        return new is not None
    if new is None:
        return False
    return old.is_subset_of(new) and not new.is_subset_of(old)


def classify_update(old_env: EnvironmentState, new_env: EnvironmentState,
                    current: ValueField):
    """safety_decreasing iff controls shrank, disturbances grew, or some node's
    new constraint dips below the current value function."""
    u_shrunk = _sets_shrunk(new_env.control_set, old_env.control_set)
    d_grown = _sets_grown(new_env.disturbance_set, old_env.disturbance_set)
    ell_new = new_env.constraint.on_grid(current.grid)
    constraint_violated = bool(np.any(current.values > ell_new + CLIP_TOL))
    if u_shrunk or d_grown or constraint_violated:
        return "safety_decreasing"
    u_grown = _sets_grown(new_env.control_set, old_env.control_set)
    d_shrunk = _sets_shrunk(new_env.disturbance_set, old_env.disturbance_set)
    u_mixed = (
        new_env.control_set is not None
        and old_env.control_set is not None
        and not new_env.control_set.is_subset_of(old_env.control_set)
        and not old_env.control_set.is_subset_of(new_env.control_set)
    )
    if u_mixed:
        return "mixed"
    if u_grown or d_shrunk or not constraint_violated:
        return "safety_enhancing"
    return "mixed"


@dataclass
class RefinerState:
    mode: str  # "plain" | "safeadapt"
    phase: str  # "retracting" | "refining"
    current: ValueField
    env: EnvironmentState
    base_model: DynamicsModel
    settings: SolverSettings
    iteration: int = 0
    last_sup_delta: float = np.inf
    _evaluator: HamiltonianEvaluator = dc_field(default=None, repr=False)
    _constraint_values: np.ndarray = dc_field(default=None, repr=False)

    @property
    def model(self) -> DynamicsModel:
        return self.base_model.with_sets(
            control_set=self.env.control_set,
            disturbance_set=self.env.disturbance_set,
        )

    def evaluator(self) -> HamiltonianEvaluator:
        if self._evaluator is None:
            self._evaluator = HamiltonianEvaluator(
                self.model, self.current.grid, self.settings.fd_order
            )
        return self._evaluator

    def constraint_values(self) -> np.ndarray:
        if self._constraint_values is None:
            self._constraint_values = self.env.constraint.on_grid(self.current.grid)
        return self._constraint_values

    def _invalidate(self):
        self._evaluator = None
        self._constraint_values = None


def init_refiner(h0: ValueField, env: EnvironmentState, base_model: DynamicsModel,
                 settings: SolverSettings = None, mode: str = "plain") -> RefinerState:
    """Clip the candidate below the constraint and set up the iteration."""
    if mode not in ("plain", "safeadapt"):
        raise ValueError("mode must be 'plain' or 'safeadapt'")
    settings = settings or SolverSettings()
    ell = env.constraint.on_grid(h0.grid)
    clipped = h0.publish(np.minimum(h0.values, ell))
    return RefinerState(
        mode=mode,
        phase="retracting" if mode == "safeadapt" else "refining",
        current=clipped,
        env=env,
        base_model=base_model,
        settings=settings,
        _constraint_values=ell,
    )


def refine_iteration(state: RefinerState) -> RefinerState:
    """One DP iteration; always publishes a new field version (heartbeat)."""
    if (
        state.mode == "safeadapt"
        and state.phase == "retracting"
        and state.last_sup_delta < state.settings.convergence_eps
    ):
        state.phase = "refining"
    evaluator = state.evaluator()
    if state.mode == "safeadapt" and state.phase == "retracting":
        stepped = pde_step(state.current, state.model, state.settings, evaluator)
    else:
        stepped = vi_step(
            state.current, state.constraint_values(), state.model,
            state.settings, evaluator,
        )
    sup = float(np.max(np.abs(stepped.values - state.current.values)))
    state.current = state.current.publish(stepped.values)
    state.iteration += 1
    state.last_sup_delta = sup
    return state


def apply_environment_delta(state: RefinerState, delta: EnvironmentDelta) -> RefinerState:
    return drain_deltas(state, [delta])


def drain_deltas(state: RefinerState, deltas) -> RefinerState:
    """Apply queued deltas as one aggregate update (classified post-drain)."""
    deltas = list(deltas)
    if not deltas:
        return state
    old_env = state.env
    new_env = old_env
    for delta in deltas:
        new_env = delta.apply(new_env)
    classification = classify_update(old_env, new_env, state.current)
    state.env = new_env
    state._invalidate()
    if state.mode == "safeadapt" and classification != "safety_enhancing":
        ell = state.constraint_values()
        state.current = state.current.publish(np.minimum(ell, state.current.values))
        state.phase = "retracting"
        state.last_sup_delta = np.inf
    return state


def false_positive_count(field: ValueField, oracle_kernel: ValueField,
                         eps: float = 1e-6) -> int:
    """Nodes the field calls safe that the oracle kernel calls unsafe, with a
    +-eps indifference band around zero on both fields."""
    if field.grid != oracle_kernel.grid:
        raise ValueError("false_positive_count requires matching grids")
    return int(np.sum((field.values > eps) & (oracle_kernel.values < -eps)))
