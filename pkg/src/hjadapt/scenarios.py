"""Built-in desk-scale scenarios used by the batch runner and the test suite.

Each builder returns a fully specified, immutable Scenario; the numbers here
(grids, bounds, detection radii, emulated solver costs) were tuned empirically
so the qualitative outcomes are robust across seeds on a laptop-class machine.
"""

from __future__ import annotations

import numpy as np

from .dynamics import Polytope
from .filter import FilterSettings
from .grid import Grid
from .refine import EnvironmentDelta
from .sim import Event, Scenario
from .solver import ConstraintFunction, Shape, SolverSettings


def wind_corridor_scenario() -> Scenario:
    """Lateral station-keeping next to a wall while a fan turns on mid-run.

    The robot (double integrator on the lateral axis) moves toward a goal near
    the +1 wall. At t = 2 s the wind rises from +-0.05 to a strong one-sided
    push toward the wall; the disturbance-bound update reaches the safety
    solver only in adaptive mode. A safety-aware run keeps enough braking
    margin for the true wind; a stale one drives into the doomed band between
    the old and new braking envelopes.
    """
    g = Grid(lower=(-1.5, -2.0), upper=(1.5, 2.0), counts=(61, 61))
    constraint = ConstraintFunction(
        shapes=(
            Shape(kind="box", id="wall_hi", lows=(1.0,), highs=(10.0,)),
            Shape(kind="box", id="wall_lo", lows=(-10.0,), highs=(-1.0,)),
        ),
        position_dims=(0,),
        domain_lower=(-2.0,), domain_upper=(2.0,), domain_dims=(1,),
        domain_margin=0.1,
    )
    gust = Event(
        delta=EnvironmentDelta(
            kind="set_disturbance_bounds",
            disturbance_set=Polytope.box([-0.4], [0.4]),
        ),
        time=1.0,
        label="fan high",
    )
    return Scenario(
        name="wind_corridor",
        model_name="double_integrator",
        model_params={"u_max": 1.0, "d_max": 0.05},
        grid=g,
        constraint=constraint,
        start_state=(-0.6, 0.0),
        goal_state=(0.85, 0.0),
        position_dims=(0,),
        goal_dims=(0, 1),
        goal_tolerance=0.08,
        controller={"kind": "proportional_goal",
                    "gains": {"kp": 6.0, "kd": 1.5}},
        events=(gust,),
        duration=14.0,
        refine_mode="safeadapt",
        solver=SolverSettings(fd_order=2, max_iterations=3000),
        filter=FilterSettings(gamma=1.0),
        iteration_cost=0.01,
        disturbance={"kind": "wind", "bias": [0.35], "jitter": 0.04,
                     "start": 1.0},
        start_jitter={0: 0.05},
    )


def desk_slot_scenario(
    obstacle_a=(0.4, 0.3, 0.35),
    obstacle_b=(0.4, -0.3, 0.35),
    v_min=0.3,
    v_max=1.0,
    omega_max=1.5,
    detection_radius=0.9,
    gamma=2.0,
    iteration_cost=0.01,
    duration=10.0,
    start_y_jitter=0.1,
) -> Scenario:
    """Ground robot discovering a two-lobed blockage by range sensing.

    The robot (speed-controlled unicycle with a minimum forward velocity, so
    it can never stop) drives across the room while two overlapping obstacles
    are revealed online. Each circle alone is easy to dodge, so per-obstacle
    barrier combination keeps reporting the seam between them as safe until
    the robot is committed; a full recompute is still grinding on its restart
    when the robot arrives. Only the warm-started joint refiner produces a
    safe detour around the whole pair in time.
    """
    g = Grid(
        lower=(-2.0, -2.0, -np.pi),
        upper=(2.0, 2.0, np.pi),
        counts=(61, 61, 37),
        periodic=(False, False, True),
    )
    constraint = ConstraintFunction.for_grid(
        g, position_dims=(0, 1), margin=0.1, domain_dims=(0, 1)
    )
    ax, ay, ar = obstacle_a
    bx, by, br = obstacle_b
    hidden = (
        Shape(kind="circle", id="obs_a", center=(ax, ay), radius=ar),
        Shape(kind="circle", id="obs_b", center=(bx, by), radius=br),
    )
    return Scenario(
        name="desk_slot",
        model_name="unicycle_3d",
        model_params={"v_min": v_min, "v_max": v_max, "omega_max": omega_max},
        grid=g,
        constraint=constraint,
        start_state=(-1.6, 0.0, 0.0),
        goal_state=(1.7, 0.0, 0.0),
        position_dims=(0, 1),
        goal_dims=(0, 1),
        goal_tolerance=0.2,
        controller={"kind": "proportional_goal",
                    "gains": {"k_heading": 2.0, "k_speed": 1.0}},
        hidden_shapes=hidden,
        sensing={"mode": "range", "radius": detection_radius, "rate_hz": 5.0},
        duration=duration,
        refine_mode="plain",
        solver=SolverSettings(fd_order=2, cfl_factor=0.8,
                              convergence_eps=1e-3, max_iterations=4000),
        filter=FilterSettings(gamma=gamma),
        iteration_cost=iteration_cost,
        start_jitter={1: start_y_jitter},
    )


def quad_occlusion_scenario(
    pillar_top=1.4,
    hidden_center=(0.7, 0.9),
    hidden_radius=0.22,
    detection_radius=0.5,
    phi_max=0.3,
    duration=6.5,
    iteration_cost=0.01,
    start_z_jitter=0.05,
) -> Scenario:
    """Planar quadrotor crossing a room whose far half starts unobserved.

    A floor-to-midheight pillar splits the room; the camera only certifies
    space it has actually seen, so everything beyond the short sensing range
    begins inside the constraint and is released as line of sight sweeps over
    it. A second obstacle hides in the pillar's shadow. Rollout-based fallback
    filtering (brake to hover, check the transient) needs seen headroom that
    grows linearly with speed, so against the nearby unseen frontier it is
    capped to a crawl and times out mid-room, while the refined value function
    only needs the optimal braking distance and crosses at cruise speed.
    """
    g = Grid(
        lower=(-2.0, 0.0, -1.5, -1.0),
        upper=(2.0, 2.0, 1.5, 1.0),
        counts=(41, 21, 13, 11),
    )
    constraint = ConstraintFunction.for_grid(
        g, position_dims=(0, 1), margin=0.12, domain_dims=(0, 1, 2, 3)
    ).with_shape(
        Shape(kind="box", id="pillar", lows=(-0.15, 0.0),
              highs=(0.15, pillar_top))
    )
    hidden = (
        Shape(kind="circle", id="shadow_obs", center=tuple(hidden_center),
              radius=hidden_radius),
    )
    return Scenario(
        name="quad_occlusion",
        model_name="planar_quadrotor",
        model_params={"phi_max": phi_max},
        grid=g,
        constraint=constraint,
        start_state=(-1.4, 1.0, 0.0, 0.0),
        goal_state=(1.4, 1.0, 0.0, 0.0),
        position_dims=(0, 1),
        goal_dims=(0, 1),
        goal_tolerance=0.25,
        controller={
            "kind": "waypoint",
            "waypoints": ((-0.5, 1.72), (0.6, 1.7), (1.4, 1.0)),
            "gains": {"kp": 3.0, "kd": 2.0, "waypoint_tol": 0.3},
        },
        hidden_shapes=hidden,
        sensing={"mode": "range", "radius": detection_radius, "rate_hz": 10.0,
                 "visibility": "conservative"},
        duration=duration,
        refine_mode="plain",
        solver=SolverSettings(fd_order=2, cfl_factor=0.8,
                              convergence_eps=1e-3, max_iterations=4000),
        filter=FilterSettings(gamma=2.0),
        iteration_cost=iteration_cost,
        backup={"horizon": 1.5, "dt": 0.05},
        start_jitter={1: start_z_jitter},
    )


SCENARIO_BUILDERS = {
    "wind_corridor": wind_corridor_scenario,
    "desk_slot": desk_slot_scenario,
    "quad_occlusion": quad_occlusion_scenario,
}


def build_scenario(name: str) -> Scenario:
    try:
        return SCENARIO_BUILDERS[name]()
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; known: {sorted(SCENARIO_BUILDERS)}"
        )
