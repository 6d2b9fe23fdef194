"""Batch entry point: scenario configs, offline convergence runs, closed-loop
experiment batches, benchmarks, and the live service.

One YAML schema drives every subcommand; values resolve as file < --override.
Every artifact embeds the fully resolved config so a run is reproducible from
the artifact directory alone.

Exit codes: 0 success, 2 config error, 3 non-convergence, 4 runtime fault.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np
import yaml

from .dynamics import build_model
from .filter import FilterSettings
from .grid import Grid, ValueField, save_field
from .patch import PatchSettings, init_patch, patch_apply_delta, run_patch
from .refine import EnvironmentDelta, EnvironmentState, init_refiner, refine_iteration
from .sim import (
    Event,
    Scenario,
    _initial_field,
    metrics,
    run_scenario,
)
from .solver import ConstraintFunction, Shape, SolverFault, SolverSettings, run_to_convergence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_FAULT = 4

ALGORITHMS = ("hjr", "refinecbf", "safeadapt", "patch")


class ConfigError(Exception):
    """Config problem with a dotted path to the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NonConvergence(Exception):
    pass


# ---------------------------------------------------------------------------
# Schema validation
#
# Mapping schemas list every allowed key; anything else is rejected with the
# full dotted path. Leaves are (type check, human description) pairs.


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_numlist(v):
    return isinstance(v, list) and all(_is_num(x) for x in v)


_LEAF = {
    "str": (lambda v: isinstance(v, str), "a string"),
    "num": (_is_num, "a number"),
    "int": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "bool": (lambda v: isinstance(v, bool), "a boolean"),
    "numlist": (_is_numlist, "a list of numbers"),
    "intlist": (lambda v: isinstance(v, list)
                and all(isinstance(x, int) for x in v), "a list of integers"),
    "strlist": (lambda v: isinstance(v, list)
                and all(isinstance(x, str) for x in v), "a list of strings"),
    "dict": (lambda v: isinstance(v, dict), "a mapping"),
    "list": (lambda v: isinstance(v, list), "a list"),
    "any": (lambda v: True, "any value"),
}

_SHAPE_SCHEMA = {"kind": "str", "id": "str", "center": "numlist",
                 "radius": "num", "lows": "numlist", "highs": "numlist",
                 "normal": "numlist", "offset": "num"}

_DELTA_SCHEMA = {"kind": "str", "shape": _SHAPE_SCHEMA, "shape_id": "str",
                 "lows": "numlist", "highs": "numlist"}

_EVENT_SCHEMA = {"time": "num", "label": "str", "region_center": "numlist",
                 "region_radius": "num", "region_dims": "intlist",
                 "delta": _DELTA_SCHEMA}

_SLICE_SCHEMA = {"dims": "intlist", "fixed": "dict"}

CONFIG_SCHEMA = {
    "scenario": {
        "builtin": "str",
        "name": "str",
        "model": {"name": "str", "params": "dict"},
        "grid": {"lower": "numlist", "upper": "numlist",
                 "counts": "intlist", "periodic": "list"},
        "constraint": {"shapes": "list", "position_dims": "intlist",
                       "domain_margin": "num", "domain_dims": "intlist"},
        "start_state": "numlist",
        "goal_state": "numlist",
        "position_dims": "intlist",
        "goal_dims": "intlist",
        "goal_tolerance": "num",
        "controller": {"kind": "str", "gains": "dict", "waypoints": "list"},
        "hidden_shapes": "list",
        "events": "list",
        "sensing": {"mode": "str", "radius": "num", "rate_hz": "num",
                    "visibility": "str"},
        "duration": "num",
        "control_rate": "num",
        "refine_mode": "str",
        "iteration_cost": "num",
        "init_field": {"kind": "str", "center": "numlist", "radius": "num",
                       "delta": "num", "path": "str"},
        "disturbance": {"kind": "str", "bias": "numlist", "jitter": "num",
                        "start": "num"},
        "backup": {"horizon": "num", "dt": "num"},
        "start_jitter": "dict",
    },
    "solver": {"time_step_mode": "str", "delta": "num", "cfl_factor": "num",
               "convergence_eps": "num", "max_iterations": "int",
               "fd_order": "int"},
    "patch": {"zeta": "num", "zeta_kappa": "num", "pad_order": "int"},
    "filter": {"gamma": "num", "dt_term": "bool", "dt_delta": "num",
               "infeasible_policy": "str"},
    "run": {"variants": "strlist", "seeds": "intlist", "workers": "int"},
    "converge": {"algorithm": "str"},
    "bench": {"sizes": "intlist", "obstacle": _SHAPE_SCHEMA},
    "slices": "list",
    "serve": {"host": "str", "port": "int", "speed": "num",
              "slice_rate_hz": "num"},
    "output": {"dir": "str"},
}


def _validate_node(node, schema, path):
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(path, "expected a mapping")
        for key, value in node.items():
            child = f"{path}.{key}" if path else str(key)
            if key not in schema:
                raise ConfigError(child, "unknown key")
            _validate_node(value, schema[key], child)
        return
    check, desc = _LEAF[schema]
    if not check(node):
        raise ConfigError(path, f"expected {desc}, got {type(node).__name__}")


def validate_config(raw: dict) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a mapping")
    _validate_node(raw, CONFIG_SCHEMA, "")
    for i, item in enumerate(raw.get("slices", [])):
        _validate_node(item, _SLICE_SCHEMA, f"slices[{i}]")
    sc = raw.get("scenario", {})
    for field, schema in (("hidden_shapes", _SHAPE_SCHEMA),
                          ("events", _EVENT_SCHEMA)):
        for i, item in enumerate(sc.get(field, [])):
            _validate_node(item, schema, f"scenario.{field}[{i}]")
    for i, item in enumerate(sc.get("constraint", {}).get("shapes", [])):
        _validate_node(item, _SHAPE_SCHEMA, f"scenario.constraint.shapes[{i}]")
    return raw


def load_config(path, overrides=()):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(str(path), f"cannot read config: {err}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(str(path), f"invalid yaml: {err}")
    raw = raw or {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, _, value = item.partition("=")
        _apply_override(raw, key.strip(), yaml.safe_load(value))
    return validate_config(raw)


def _apply_override(raw, dotted, value):
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "override path crosses a non-mapping")
    node[parts[-1]] = value


# ---------------------------------------------------------------------------
# Config -> domain objects


def _shape_from_config(spec: dict, path: str) -> Shape:
    kind = spec.get("kind")
    try:
        if kind == "circle":
            return Shape(kind="circle", id=spec.get("id", "circle"),
                         center=tuple(spec["center"]),
                         radius=float(spec["radius"]))
        if kind == "box":
            return Shape(kind="box", id=spec.get("id", "box"),
                         lows=tuple(spec["lows"]), highs=tuple(spec["highs"]))
        if kind == "halfspace":
            return Shape(kind="halfspace", id=spec.get("id", "halfspace"),
                         normal=tuple(spec["normal"]),
                         offset=float(spec["offset"]))
    except KeyError as err:
        raise ConfigError(path, f"missing field {err} for shape kind {kind!r}")
    raise ConfigError(f"{path}.kind", f"unknown shape kind {kind!r}")


def _delta_from_config(spec: dict, path: str) -> EnvironmentDelta:
    from .dynamics import Polytope

    kind = spec.get("kind")
    if kind == "add_obstacle":
        return EnvironmentDelta(
            kind="add_obstacle",
            shape=_shape_from_config(spec["shape"], f"{path}.shape"),
        )
    if kind == "remove_obstacle":
        return EnvironmentDelta(kind="remove_obstacle", shape_id=spec["shape_id"])
    if kind == "set_disturbance_bounds":
        return EnvironmentDelta(
            kind="set_disturbance_bounds",
            disturbance_set=Polytope.box(spec["lows"], spec["highs"]),
        )
    if kind == "set_control_bounds":
        return EnvironmentDelta(
            kind="set_control_bounds",
            control_set=Polytope.box(spec["lows"], spec["highs"]),
        )
    raise ConfigError(f"{path}.kind", f"unknown delta kind {kind!r}")


def _settings_from(cls, spec: dict, path: str):
    try:
        return cls(**spec)
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err))


def scenario_from_config(config: dict) -> Scenario:
    spec = dict(config.get("scenario", {}))
    solver_spec = config.get("solver")
    filter_spec = config.get("filter")

    if "builtin" in spec:
        from .scenarios import SCENARIO_BUILDERS

        name = spec.pop("builtin")
        if name not in SCENARIO_BUILDERS:
            raise ConfigError("scenario.builtin",
                              f"unknown scenario {name!r}; "
                              f"known: {sorted(SCENARIO_BUILDERS)}")
        base = SCENARIO_BUILDERS[name]()
        simple = {k: v for k, v in spec.items()
                  if k in ("duration", "goal_tolerance", "iteration_cost",
                           "refine_mode", "control_rate")}
        patch_fields = dict(simple)
        for key in ("start_state", "goal_state", "goal_dims", "position_dims"):
            if key in spec:
                patch_fields[key] = tuple(spec[key])
        leftovers = set(spec) - set(patch_fields)
        if leftovers:
            raise ConfigError(
                f"scenario.{sorted(leftovers)[0]}",
                "not overridable on a builtin scenario (define the scenario "
                "inline to change it)",
            )
        if solver_spec:
            patch_fields["solver"] = _settings_from(
                SolverSettings, solver_spec, "solver")
        if filter_spec:
            patch_fields["filter"] = _settings_from(
                FilterSettings, filter_spec, "filter")
        try:
            return dataclasses.replace(base, **patch_fields)
        except ValueError as err:
            raise ConfigError("scenario", str(err))

    for required in ("name", "model", "grid", "start_state", "goal_state"):
        if required not in spec:
            raise ConfigError(f"scenario.{required}", "required field missing")
    gspec = spec["grid"]
    try:
        grid = Grid(lower=tuple(gspec["lower"]), upper=tuple(gspec["upper"]),
                    counts=tuple(gspec["counts"]),
                    periodic=tuple(gspec.get("periodic",
                                             [False] * len(gspec["lower"]))))
    except (KeyError, ValueError) as err:
        raise ConfigError("scenario.grid", str(err))

    cspec = dict(spec.get("constraint", {}))
    position_dims = tuple(spec.get("position_dims", (0,)))
    constraint = ConstraintFunction.for_grid(
        grid,
        position_dims=tuple(cspec.get("position_dims", position_dims)),
        margin=float(cspec.get("domain_margin", 0.0)),
        domain_dims=tuple(cspec["domain_dims"]) if "domain_dims" in cspec else None,
    )
    for i, sh in enumerate(cspec.get("shapes", [])):
        constraint = constraint.with_shape(
            _shape_from_config(sh, f"scenario.constraint.shapes[{i}]"))

    events = []
    for i, espec in enumerate(spec.get("events", [])):
        espec = dict(espec)
        delta = _delta_from_config(espec.pop("delta"),
                                   f"scenario.events[{i}].delta")
        kwargs = {k: (tuple(v) if isinstance(v, list) else v)
                  for k, v in espec.items()}
        events.append(Event(delta=delta, **kwargs))

    hidden = tuple(
        _shape_from_config(sh, f"scenario.hidden_shapes[{i}]")
        for i, sh in enumerate(spec.get("hidden_shapes", []))
    )

    fields = dict(
        name=spec["name"],
        model_name=spec["model"]["name"],
        model_params=dict(spec["model"].get("params", {})),
        grid=grid,
        constraint=constraint,
        start_state=tuple(spec["start_state"]),
        goal_state=tuple(spec["goal_state"]),
        position_dims=position_dims,
        hidden_shapes=hidden,
        events=tuple(events),
    )
    for key in ("goal_tolerance", "duration", "control_rate", "refine_mode",
                "iteration_cost"):
        if key in spec:
            fields[key] = spec[key]
    if "goal_dims" in spec:
        fields["goal_dims"] = tuple(spec["goal_dims"])
    for key in ("controller", "sensing", "init_field", "disturbance", "backup"):
        if key in spec:
            fields[key] = dict(spec[key])
    if "start_jitter" in spec:
        fields["start_jitter"] = {int(k): float(v)
                                  for k, v in spec["start_jitter"].items()}
    if solver_spec:
        fields["solver"] = _settings_from(SolverSettings, solver_spec, "solver")
    if filter_spec:
        fields["filter"] = _settings_from(FilterSettings, filter_spec, "filter")
    try:
        return Scenario(**fields)
    except (TypeError, ValueError) as err:
        raise ConfigError("scenario", str(err))


def _patch_settings(config: dict, solver: SolverSettings) -> PatchSettings:
    spec = dict(config.get("patch", {}))
    return _settings_from(PatchSettings, {**spec, "solver": solver}, "patch")


# ---------------------------------------------------------------------------
# Artifact helpers


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, separators=(",", ": "))
            + "\n").encode()


def _write_resolved_config(out_dir: Path, config: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(
        yaml.safe_dump(config, sort_keys=True))


def _default_slices(scenario: Scenario):
    dims = list(scenario.position_dims[:2])
    if len(dims) < 2:
        dims = [0, 1] if scenario.grid.ndim >= 2 else None
    if dims is None:
        return []
    fixed = {d: float(scenario.start_state[d])
             for d in range(scenario.grid.ndim) if d not in dims}
    return [{"dims": dims, "fixed": fixed}]


def _write_slices(out_dir: Path, field: ValueField, config: dict,
                  scenario: Scenario):
    from .live import slice_extract

    specs = config.get("slices") or _default_slices(scenario)
    written = []
    for i, spec in enumerate(specs):
        spec = {"dims": spec["dims"],
                "fixed": {int(k): float(v)
                          for k, v in dict(spec.get("fixed", {})).items()}}
        plane, contours, axes = slice_extract(field, spec)
        name = f"slice_{i}_dims{spec['dims'][0]}{spec['dims'][1]}.csv"
        lines = ["# dims=%s fixed=%s" % (spec["dims"], spec["fixed"])]
        lines.append(",".join(f"{v:.9g}" for v in axes[1]))
        for r in range(plane.shape[0]):
            lines.append(",".join(f"{v:.9g}" for v in plane[r]))
        (out_dir / name).write_text("\n".join(lines) + "\n")
        cname = f"slice_{i}_contour.csv"
        clines = ["contour,dim_a,dim_b"]
        for ci, poly in enumerate(contours):
            for a, b in poly:
                clines.append(f"{ci},{a:.9g},{b:.9g}")
        (out_dir / cname).write_text("\n".join(clines) + "\n")
        written.extend([name, cname])
    return written


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_converge(config: dict, algorithm: str, out_dir: Path) -> int:
    scenario = scenario_from_config(config)
    model = scenario.build_model()
    env = EnvironmentState(
        constraint=scenario.constraint,
        control_set=model.control_set,
        disturbance_set=model.disturbance_set,
    )
    init = _initial_field(scenario, model, env)
    settings = scenario.solver

    if algorithm in ("hjr", "refinecbf"):
        update = "vi" if algorithm == "hjr" else "pde"
        result = run_to_convergence(init, update, model, settings,
                                    constraint=scenario.constraint)
        field, converged = result.field, result.converged
        deltas = result.deltas
        iterations, node_updates = result.iterations, result.node_updates
    elif algorithm == "safeadapt":
        state = init_refiner(init, env, model, settings, mode="safeadapt")
        deltas = []
        for _ in range(settings.max_iterations):
            state = refine_iteration(state)
            deltas.append(state.last_sup_delta)
            if (state.phase == "refining"
                    and state.last_sup_delta <= settings.convergence_eps):
                break
        field = state.current
        converged = (state.phase == "refining"
                     and state.last_sup_delta <= settings.convergence_eps)
        iterations = len(deltas)
        node_updates = iterations * scenario.grid.num_nodes
    else:  # patch
        psettings = _patch_settings(config, settings)
        field, stats = run_patch(init, model, psettings,
                                 constraint=scenario.constraint)
        deltas = stats.sup_deltas
        converged = stats.converged
        iterations = stats.iterations
        node_updates = stats.total_node_updates

    _write_resolved_config(out_dir, config)
    save_field(field, out_dir / "field.npz")
    lines = ["iteration,sup_delta"]
    lines += [f"{i},{d:.6e}" for i, d in enumerate(deltas)]
    (out_dir / "stats.csv").write_text("\n".join(lines) + "\n")
    slice_files = _write_slices(out_dir, field, config, scenario)
    manifest = {
        "command": "converge",
        "algorithm": algorithm,
        "converged": bool(converged),
        "iterations": int(iterations),
        "node_updates": int(node_updates),
        "final_sup_delta": float(deltas[-1]) if deltas else 0.0,
        "artifacts": ["field.npz", "stats.csv"] + slice_files,
        "config": config,
    }
    (out_dir / "manifest.json").write_bytes(_json_bytes(manifest))
    click.echo(f"{algorithm}: converged={converged} iterations={iterations} "
               f"node_updates={node_updates} -> {out_dir}")
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def _one_run(args):
    scenario, variant, seed = args
    record = run_scenario(scenario, variant, seed)
    return variant, seed, record


def cmd_run(config: dict, variants, seeds, workers: int, out_dir: Path) -> int:
    scenario = scenario_from_config(config)
    run_cfg = config.get("run", {})
    variants = list(variants or run_cfg.get("variants") or ["adaptive"])
    seeds = list(seeds if seeds is not None else run_cfg.get("seeds") or [0])
    workers = workers or run_cfg.get("workers") or 1

    jobs = [(scenario, v, s) for v in variants for s in seeds]
    records, failures = {}, []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (_, v, s), outcome in zip(
                jobs, pool.map(_one_run_safe, jobs)
            ):
                if isinstance(outcome, str):
                    failures.append({"variant": v, "seed": s, "error": outcome})
                else:
                    records[(v, s)] = outcome[2]
    else:
        for job in jobs:
            outcome = _one_run_safe(job)
            if isinstance(outcome, str):
                failures.append({"variant": job[1], "seed": job[2],
                                 "error": outcome})
            else:
                records[(job[1], job[2])] = outcome[2]

    _write_resolved_config(out_dir, config)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(exist_ok=True)
    per_run = {}
    for (v, s), rec in sorted(records.items()):
        stem = f"{v}_seed{s}"
        (runs_dir / f"{stem}.csv").write_text(rec.trajectory_csv())
        (runs_dir / f"{stem}.json").write_bytes(_json_bytes(rec.summary()))
        per_run[stem] = rec.summary()

    table = metrics(list(records.values())) if records else {}
    summary = {
        "command": "run",
        "scenario": scenario.name,
        "variants": variants,
        "seeds": seeds,
        "table": {v: table[v] for v in variants if v in table},
        "runs": per_run,
        "failures": sorted(failures, key=lambda f: (f["variant"], f["seed"])),
        "config": config,
    }
    (out_dir / "summary.json").write_bytes(_json_bytes(summary))
    cols = ["variant", "runs", "collisions", "goals_reached", "min_ell_worst",
            "min_ell_median", "goal_time_mean", "solver_iterations",
            "solver_node_updates"]
    lines = [",".join(cols)]
    for v in variants:
        if v not in table:
            continue
        row = table[v]
        lines.append(",".join([v] + [
            "" if row[c] is None else f"{row[c]:.9g}" if isinstance(row[c], float)
            else str(row[c]) for c in cols[1:]
        ]))
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")

    for v in variants:
        if v in table:
            row = table[v]
            click.echo(f"{v}: {row['collisions']}/{row['runs']} collisions, "
                       f"{row['goals_reached']}/{row['runs']} goals")
    if failures:
        click.echo(f"{len(failures)} run(s) failed; see summary.json",
                   err=True)
    if records:
        return EXIT_OK
    return EXIT_FAULT  # every run failed


def _one_run_safe(args):
    try:
        return _one_run(args)
    except Exception as err:  # recorded per run, the batch continues
        return f"{type(err).__name__}: {err}"


def cmd_bench(config: dict, out_dir: Path) -> int:
    sizes = config.get("bench", {}).get("sizes", [41, 61, 81])
    obstacle_spec = config.get("bench", {}).get("obstacle") or {
        "kind": "box", "id": "bench_obstacle",
        "lows": [0.2, -0.4], "highs": [0.5, 0.4],
    }
    # first-order upwinding: monotone updates converge on every grid size,
    # where the higher-order stencil can settle into a small limit cycle
    solver = _settings_from(
        SolverSettings,
        config.get("solver") or {"fd_order": 1, "convergence_eps": 1e-3,
                                 "max_iterations": 3000},
        "solver",
    )
    model = build_model("double_integrator", u_max=1.0)
    rows = []
    for n in sizes:
        grid = Grid(lower=(-2.0, -2.0), upper=(2.0, 2.0), counts=(n, n))
        constraint = ConstraintFunction.for_grid(
            grid, position_dims=(0,), margin=0.1, domain_dims=(0, 1))
        base = run_to_convergence(
            ValueField(grid=grid, values=constraint.on_grid(grid)),
            "vi", model, solver, constraint=constraint)
        if not base.converged:
            raise NonConvergence(f"baseline solve on {n}x{n} grid")
        obstacle = _shape_from_config(obstacle_spec, "bench.obstacle")
        delta = EnvironmentDelta(kind="add_obstacle", shape=obstacle)
        env = EnvironmentState(constraint=constraint,
                               control_set=model.control_set,
                               disturbance_set=model.disturbance_set)

        new_constraint = constraint.with_shape(obstacle)
        global_result = run_to_convergence(
            ValueField(grid=grid, values=new_constraint.on_grid(grid)),
            "vi", model, solver, constraint=new_constraint)

        psettings = _patch_settings(config, solver)
        state = init_patch(base.field, model, psettings)
        state.env = env
        state.active = dataclasses.replace(
            state.active, mask=np.zeros(grid.counts, dtype=bool))
        state = patch_apply_delta(state, delta, psettings)
        import time as _time

        t0 = _time.perf_counter()
        patch_updates = 0
        evaluator = None
        from .patch import patch_iteration
        from .solver import HamiltonianEvaluator, cfl_dt

        evaluator = HamiltonianEvaluator(model, grid, solver.fd_order)
        n_sub = max(1, int(np.ceil(
            solver.delta / cfl_dt(model, grid, solver, alpha=evaluator.alpha)
            - 1e-12)))
        for _ in range(solver.max_iterations):
            if state.active.count == 0:
                break
            patch_updates += state.active.count * n_sub
            state = patch_iteration(state, model, psettings, evaluator)
        patch_wall = _time.perf_counter() - t0
        if state.active.count != 0:
            raise NonConvergence(f"patch on {n}x{n} grid")

        rows.append({
            "size": n,
            "nodes": grid.num_nodes,
            "global_updates": global_result.node_updates,
            "patch_updates": patch_updates,
            "ratio": global_result.node_updates / max(1, patch_updates),
            "global_wall_s": global_result.wall_seconds,
            "patch_wall_s": patch_wall,
        })
        click.echo(f"{n}x{n}: global {global_result.node_updates} vs patch "
                   f"{patch_updates} node updates "
                   f"(ratio {rows[-1]['ratio']:.1f})")

    _write_resolved_config(out_dir, config)
    cols = ["size", "nodes", "global_updates", "patch_updates", "ratio",
            "global_wall_s", "patch_wall_s"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(f"{row[c]:.9g}" if isinstance(row[c], float)
                              else str(row[c]) for c in cols))
    (out_dir / "bench.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_serve(config: dict, host, port) -> int:
    from .live import create_app, serve as live_serve

    serve_cfg = config.get("serve", {})
    scenarios = None
    if config.get("scenario"):
        scenario = scenario_from_config(config)
        scenarios = {scenario.name: scenario}
    app = create_app(
        scenarios=scenarios,
        slice_rate_hz=serve_cfg.get("slice_rate_hz", 10.0),
        speed=serve_cfg.get("speed", 1.0),
    )
    live_serve(app, host=host or serve_cfg.get("host", "127.0.0.1"),
               port=port or serve_cfg.get("port", 8700))
    return EXIT_OK


def cmd_report(out_dir: Path) -> int:
    """Render figures from a previous command's CSV artifacts, next to them."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    made = []
    for stats in out_dir.glob("stats.csv"):
        data = np.genfromtxt(stats, delimiter=",", names=True)
        fig, ax = plt.subplots()
        ax.semilogy(np.atleast_1d(data["iteration"]),
                    np.atleast_1d(data["sup_delta"]))
        ax.set_xlabel("iteration")
        ax.set_ylabel("sup |change|")
        fig.savefig(out_dir / "convergence.png", dpi=120)
        plt.close(fig)
        made.append("convergence.png")
    for sl in sorted(out_dir.glob("slice_*_dims*.csv")):
        with open(sl) as fh:
            fh.readline()  # metadata comment
            plane = np.loadtxt(fh, delimiter=",", skiprows=1)
        fig, ax = plt.subplots()
        im = ax.imshow(plane, origin="lower", cmap="RdBu")
        ax.contour(plane, levels=[0.0], colors="k")
        fig.colorbar(im, ax=ax)
        name = sl.stem + ".png"
        fig.savefig(out_dir / name, dpi=120)
        plt.close(fig)
        made.append(name)
    for traj in sorted((out_dir / "runs").glob("*.csv")) if (out_dir / "runs").is_dir() else []:
        data = np.genfromtxt(traj, delimiter=",", names=True,
                             dtype=None, encoding=None)
        if "x1" not in (data.dtype.names or ()):
            continue
        fig, ax = plt.subplots()
        ax.plot(np.atleast_1d(data["x0"]), np.atleast_1d(data["x1"]))
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        name = traj.stem + ".png"
        fig.savefig(out_dir / name, dpi=120)
        plt.close(fig)
        made.append(name)
    bench = out_dir / "bench.csv"
    if bench.exists():
        data = np.genfromtxt(bench, delimiter=",", names=True)
        fig, ax = plt.subplots()
        ax.bar([str(int(s)) for s in np.atleast_1d(data["size"])],
               np.atleast_1d(data["ratio"]))
        ax.set_xlabel("grid size")
        ax.set_ylabel("global / patch node updates")
        fig.savefig(out_dir / "bench.png", dpi=120)
        plt.close(fig)
        made.append("bench.png")
    if not made:
        click.echo("nothing to render in " + str(out_dir), err=True)
        return EXIT_CONFIG
    click.echo("rendered: " + ", ".join(made))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Click wiring


def _parse_seeds(text):
    if text is None:
        return None
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, _, hi = part.partition("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _run_guarded(fn, *args):
    try:
        code = fn(*args)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    except NonConvergence as err:
        click.echo(f"did not converge: {err}", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)
    except SolverFault as err:
        click.echo(f"solver fault: {err}", err=True)
        sys.exit(EXIT_FAULT)
    sys.exit(code)


_config_opt = click.option("--config", "config_path", required=True,
                           type=click.Path(), help="scenario config file")
_override_opt = click.option("--override", "overrides", multiple=True,
                             help="dotted.key=value config override")
_out_opt = click.option("--out-dir", default="out", type=click.Path(),
                        help="artifact directory")


@click.group()
def main():
    """Safety value function toolkit: offline solves, closed-loop experiment
    batches, benchmarks, and the live dashboard service."""


@main.command()
@_config_opt
@_override_opt
@_out_opt
@click.option("--algorithm", type=click.Choice(ALGORITHMS), default="hjr")
def converge(config_path, overrides, out_dir, algorithm):
    """Solve the scenario's safety value function offline."""
    _run_guarded(lambda: cmd_converge(load_config(config_path, overrides),
                                      algorithm, Path(out_dir)))


@main.command()
@_config_opt
@_override_opt
@_out_opt
@click.option("--variants", default=None,
              help="comma-separated variant list")
@click.option("--seeds", default=None, help="e.g. 0,1,2 or 0-9")
@click.option("--workers", default=0, type=int,
              help="parallel runs (0: from config, default 1)")
def run(config_path, overrides, out_dir, variants, seeds, workers):
    """Run closed-loop experiments across variants and seeds."""
    vlist = [v.strip() for v in variants.split(",")] if variants else None
    _run_guarded(lambda: cmd_run(load_config(config_path, overrides), vlist,
                                 _parse_seeds(seeds), workers, Path(out_dir)))


@main.command()
@_config_opt
@_override_opt
@_out_opt
def bench(config_path, overrides, out_dir):
    """Grid-size sweep: full recompute vs localized patch on an obstacle
    insertion."""
    _run_guarded(lambda: cmd_bench(load_config(config_path, overrides),
                                   Path(out_dir)))


@main.command()
@_config_opt
@_override_opt
@click.option("--host", default=None)
@click.option("--port", default=0, type=int)
def serve(config_path, overrides, host, port):
    """Host the interactive websocket service."""
    _run_guarded(lambda: cmd_serve(load_config(config_path, overrides),
                                   host, port))


@main.command()
@_out_opt
def report(out_dir):
    """Render figures from CSV artifacts produced by other commands."""
    _run_guarded(lambda: cmd_report(Path(out_dir)))


if __name__ == "__main__":
    main()
