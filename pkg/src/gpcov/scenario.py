"""Scenario documents (JSON) and world construction."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .evaluation import EvalGrid
from .filtering import FilterConfig
from .geometry import DEFAULT_CELL_GRID, DEFAULT_SEGMENTS, Environment, SensingGeometry
from .gp import DecayParams, GpModel, HyperparamBounds, Hyperparams
from .robot import ControlConfig, RobotConfig, RobotState, Strategy
from .tradeoff import TradeOffConfig
from .world import (
    FIELD,
    INIT,
    FieldProgram,
    MixtureComponent,
    World,
    derive_rng,
    random_mixture,
    random_point,
    read_grid_csv,
)


class ScenarioError(ValueError):
    """Invalid scenario document; the message names the offending field."""


_TOP_KEYS = {
    "environment", "robots", "sensing_radius", "control", "alpha", "filter", "decay", "gp",
    "field", "sensor_noise", "ticks", "seed", "strategy", "resolution", "dump_ticks", "record_timing",
}


@dataclass(frozen=True)
class GpSettings:
    length_scale: float | None = None  # None: 0.1 * environment diameter
    signal_std: float = 0.5
    noise_std: float = 5e-4
    length_bounds: tuple[float, float] | None = None  # None: (0.02, 1) * diameter
    signal_bounds: tuple[float, float] = (0.02, 1.0)  # targets are normalized to [0, 1]
    noise_bounds: tuple[float, float] = (1e-4, 1e-3)  # keeps sigma_nu under the eviction threshold
    retrain_every: int = 5
    budget: int = 100
    fit_max_points: int | None = 150


@dataclass(frozen=True)
class Resolution:
    cell_grid: int = DEFAULT_CELL_GRID
    eval_grid: int = 60
    disk_segments: int = DEFAULT_SEGMENTS


@dataclass(frozen=True)
class Scenario:
    environment: tuple[tuple[float, float], ...]
    robot_count: int
    initial_positions: tuple[tuple[float, float], ...] | None  # None: random
    sensing_radius: float
    control: ControlConfig
    tradeoff: TradeOffConfig
    filter: FilterConfig
    decay: DecayParams
    gp: GpSettings
    field: dict = field(hash=False)
    ticks: int = 200
    seed: int = 0
    strategy: Strategy = Strategy()
    sensor_noise: float = 0.001
    resolution: Resolution = Resolution()
    dump_ticks: tuple[int, ...] = ()
    record_timing: bool = False

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(extra)}")


def _build(where: str, ctor, **kw):
    try:
        return ctor(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _pairs(v, where: str) -> tuple[tuple[float, float], ...]:
    try:
        out = tuple((float(p[0]), float(p[1])) for p in v)
        if any(len(p) != 2 for p in v):
            raise ValueError
    except (TypeError, ValueError, IndexError):
        raise ScenarioError(f"{where}: expected a list of [x, y] points") from None
    return out


def _environment(v) -> tuple[tuple[float, float], ...]:
    if isinstance(v, dict):
        _check_keys(v, {"width", "height", "origin"}, "environment")
        w, h = _num(v.get("width"), "environment.width"), _num(v.get("height"), "environment.height")
        ox, oy = v.get("origin", (0.0, 0.0))
        pts = ((ox, oy), (ox + w, oy), (ox + w, oy + h), (ox, oy + h))
    else:
        pts = _pairs(v, "environment")
    _build("environment", Environment, vertices=np.array(pts, dtype=float))
    return tuple((float(x), float(y)) for x, y in pts)


def _components(items, where: str) -> list[dict]:
    if not isinstance(items, list) or not items:
        raise ScenarioError(f"{where}: expected a non-empty list of components")
    out = []
    for k, c in enumerate(items):
        w = f"{where}[{k}]"
        _check_keys(c, {"weight", "center", "cov", "std", "velocity", "weight_rate"}, w)
        if ("cov" in c) == ("std" in c):
            raise ScenarioError(f"{w}: give exactly one of 'cov' or 'std'")
        if "std" in c:
            s = _num(c["std"], f"{w}.std")
            cov = ((s * s, 0.0), (0.0, s * s))
        else:
            cov = tuple(tuple(float(x) for x in row) for row in c["cov"])
        comp = dict(
            weight=_num(c.get("weight", 1.0), f"{w}.weight"),
            center=tuple(float(x) for x in c["center"]),
            cov=cov,
            velocity=tuple(float(x) for x in c.get("velocity", (0.0, 0.0))),
            weight_rate=_num(c.get("weight_rate", 0.0), f"{w}.weight_rate"),
        )
        _build(w, MixtureComponent, **comp)
        out.append({"weight": comp["weight"], "center": list(comp["center"]), "cov": [list(r) for r in cov],
                    "velocity": list(comp["velocity"]), "weight_rate": comp["weight_rate"]})
    return out


def _field(v) -> dict:
    if not isinstance(v, dict) or "kind" not in v:
        raise ScenarioError("field: expected an object with a 'kind'")
    kind = v["kind"]
    if kind == "gaussian_mixture":
        _check_keys(v, {"kind", "components", "change_events"}, "field")
        events = []
        last = -math.inf
        for k, ev in enumerate(v.get("change_events", [])):
            w = f"field.change_events[{k}]"
            _check_keys(ev, {"time", "tick", "components"}, w)
            if ("time" in ev) == ("tick" in ev):
                raise ScenarioError(f"{w}: give exactly one of 'time' or 'tick'")
            when = {"tick": int(ev["tick"])} if "tick" in ev else {"time": _num(ev["time"], f"{w}.time")}
            order = when.get("tick", when.get("time"))
            if order < last:
                raise ScenarioError(f"{w}: change events must be sorted by time")
            last = order
            events.append({**when, "components": _components(ev["components"], f"{w}.components")})
        return {"kind": kind, "components": _components(v.get("components"), "field.components"),
                "change_events": events}
    if kind == "random_mixture":
        _check_keys(v, {"kind", "n_components", "std_range", "weight_range", "margin", "change_ticks"}, "field")
        out = {
            "kind": kind,
            "n_components": int(v.get("n_components", 2)),
            "std_range": [float(x) for x in v.get("std_range", (1.0, 1.5))],
            "weight_range": [float(x) for x in v.get("weight_range", (0.8, 1.2))],
            "margin": float(v.get("margin", 1.5)),
            "change_ticks": [int(t) for t in v.get("change_ticks", [])],
        }
        if out["n_components"] < 1:
            raise ScenarioError("field.n_components: must be at least 1")
        if out["change_ticks"] != sorted(out["change_ticks"]):
            raise ScenarioError("field.change_ticks: must be sorted")
        return out
    if kind == "grid_csv":
        _check_keys(v, {"kind", "path"}, "field")
        if not isinstance(v.get("path"), str):
            raise ScenarioError("field.path: expected a file path")
        return {"kind": kind, "path": v["path"]}
    raise ScenarioError(f"field.kind: unknown kind {kind!r}")


def scenario_from_dict(doc: dict) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "scenario")
    for req in ("environment", "robots", "field", "ticks"):
        if req not in doc:
            raise ScenarioError(f"{req}: required field missing")
    env = _environment(doc["environment"])

    robots = doc["robots"]
    _check_keys(robots, {"count", "positions"}, "robots")
    positions = robots.get("positions", "random")
    if positions == "random":
        count = int(robots.get("count", 0))
        init = None
    else:
        init = _pairs(positions, "robots.positions")
        count = int(robots.get("count", len(init)))
        if count != len(init):
            raise ScenarioError("robots.count: does not match the number of positions")
        environment = Environment(np.array(env))
        for k, p in enumerate(init):
            if not environment.contains(np.array(p)):
                raise ScenarioError(f"robots.positions[{k}]: lies outside the environment")
    if count < 1:
        raise ScenarioError("robots.count: at least one robot is required")

    R = _num(doc.get("sensing_radius", 4.0), "sensing_radius")
    _build("sensing_radius", SensingGeometry, sensing_radius=R)

    c = doc.get("control", {})
    _check_keys(c, {"gain", "dt", "v_max"}, "control")
    control = _build("control", ControlConfig, **{k: _num(v, f"control.{k}") for k, v in c.items()})
    tradeoff = _build("alpha", TradeOffConfig, alpha=_num(doc.get("alpha", 0.1), "alpha"))

    f = doc.get("filter", {})
    _check_keys(f, {"enabled", "e_add", "e_remove", "z_score", "mu_max_floor"}, "filter")
    fkw = {k: (bool(v) if k == "enabled" else _num(v, f"filter.{k}")) for k, v in f.items()}
    filt = _build("filter", FilterConfig, **fkw)

    d = doc.get("decay", {})
    _check_keys(d, {"kind", "epsilon", "tau", "steepness", "step_time"}, "decay")
    dkw = {k: (v if k == "kind" else _num(v, f"decay.{k}")) for k, v in d.items()}
    dkw.setdefault("epsilon", 1e-4)
    dkw.setdefault("tau", 1e5)
    decay = _build("decay", DecayParams, **dkw)

    g = doc.get("gp", {})
    _check_keys(g, {"length_scale", "signal_std", "noise_std", "bounds", "retrain_every", "budget",
                    "fit_max_points"}, "gp")
    gkw: dict[str, Any] = {}
    for k in ("length_scale", "signal_std", "noise_std"):
        if g.get(k) is not None:
            gkw[k] = _num(g[k], f"gp.{k}")
            if gkw[k] <= 0:
                raise ScenarioError(f"gp.{k}: must be positive")
    b = g.get("bounds", {})
    _check_keys(b, {"length_scale", "signal_std", "noise_std"}, "gp.bounds")
    for k, name in (("length_scale", "length_bounds"), ("signal_std", "signal_bounds"), ("noise_std", "noise_bounds")):
        if k in b:
            lo, hi = (_num(x, f"gp.bounds.{k}") for x in b[k])
            if not 0 < lo <= hi:
                raise ScenarioError(f"gp.bounds.{k}: need 0 < lower <= upper")
            gkw[name] = (lo, hi)
    for k in ("retrain_every", "budget"):
        if k in g:
            gkw[k] = int(g[k])
            if gkw[k] < (1 if k == "retrain_every" else 0):
                raise ScenarioError(f"gp.{k}: out of range")
    if "fit_max_points" in g:
        gkw["fit_max_points"] = None if g["fit_max_points"] is None else int(g["fit_max_points"])
    gp = GpSettings(**gkw)

    s = doc.get("strategy", "proposed")
    if isinstance(s, str):
        strategy = _build("strategy", Strategy, kind=s)
    else:
        _check_keys(s, {"kind", "waypoint_tolerance", "waypoint_period"}, "strategy")
        strategy = _build("strategy", Strategy, **s)

    r = doc.get("resolution", {})
    _check_keys(r, {"cell_grid", "eval_grid", "disk_segments"}, "resolution")
    res = Resolution(**{k: int(v) for k, v in r.items()})
    if res.cell_grid < 1 or res.eval_grid < 1:
        raise ScenarioError("resolution: grids need at least one cell per axis")
    if res.disk_segments < 8:
        raise ScenarioError("resolution.disk_segments: at least 8 segments are required")

    ticks = int(doc["ticks"])
    if ticks < 1:
        raise ScenarioError("ticks: must be at least 1")
    noise = _num(doc.get("sensor_noise", 0.001), "sensor_noise")
    if noise < 0:
        raise ScenarioError("sensor_noise: must be non-negative")

    return Scenario(
        environment=env,
        robot_count=count,
        initial_positions=init,
        sensing_radius=R,
        control=control,
        tradeoff=tradeoff,
        filter=filt,
        decay=decay,
        gp=gp,
        field=_field(doc["field"]),
        ticks=ticks,
        seed=int(doc.get("seed", 0)),
        strategy=strategy,
        sensor_noise=noise,
        resolution=res,
        dump_ticks=tuple(int(t) for t in doc.get("dump_ticks", [])),
        record_timing=bool(doc.get("record_timing", False)),
    )


def parse_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario: not valid JSON ({exc})") from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        sc = parse_scenario(fh.read())
    if sc.field["kind"] == "grid_csv" and not os.path.isabs(sc.field["path"]):
        base = os.path.dirname(os.path.abspath(path))
        sc = replace(sc, field={**sc.field, "path": os.path.join(base, sc.field["path"])})
    return sc


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully explicit document; parsing it yields an equal scenario."""
    g = sc.gp
    gp: dict[str, Any] = {
        "signal_std": g.signal_std,
        "noise_std": g.noise_std,
        "bounds": {"signal_std": list(g.signal_bounds), "noise_std": list(g.noise_bounds)},
        "retrain_every": g.retrain_every,
        "budget": g.budget,
        "fit_max_points": g.fit_max_points,
    }
    if g.length_scale is not None:
        gp["length_scale"] = g.length_scale
    if g.length_bounds is not None:
        gp["bounds"]["length_scale"] = list(g.length_bounds)
    d = sc.decay
    return {
        "environment": [list(p) for p in sc.environment],
        "robots": {
            "count": sc.robot_count,
            "positions": "random" if sc.initial_positions is None else [list(p) for p in sc.initial_positions],
        },
        "sensing_radius": sc.sensing_radius,
        "control": {"gain": sc.control.gain, "dt": sc.control.dt, "v_max": sc.control.v_max},
        "alpha": sc.tradeoff.alpha,
        "filter": {
            "enabled": sc.filter.enabled,
            "e_add": sc.filter.e_add,
            "e_remove": sc.filter.e_remove,
            "z_score": sc.filter.z_score,
            "mu_max_floor": sc.filter.mu_max_floor,
        },
        "decay": {"kind": d.kind, "epsilon": d.epsilon, "tau": d.tau, "steepness": d.steepness,
                  "step_time": d.step_time},
        "gp": gp,
        "field": sc.field,
        "sensor_noise": sc.sensor_noise,
        "ticks": sc.ticks,
        "seed": sc.seed,
        "strategy": {"kind": sc.strategy.kind, "waypoint_tolerance": sc.strategy.waypoint_tolerance,
                     "waypoint_period": sc.strategy.waypoint_period},
        "resolution": {"cell_grid": sc.resolution.cell_grid, "eval_grid": sc.resolution.eval_grid,
                       "disk_segments": sc.resolution.disk_segments},
        "dump_ticks": list(sc.dump_ticks),
        "record_timing": sc.record_timing,
    }


def dump_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2)


def build_field(sc: Scenario, env: Environment) -> FieldProgram:
    f = sc.field
    dt = sc.control.dt
    if f["kind"] == "grid_csv":
        return FieldProgram(kind="grid_csv", grid=read_grid_csv(f["path"]))
    if f["kind"] == "random_mixture":
        rng = derive_rng(sc.seed, FIELD)
        kw = dict(n_components=f["n_components"], std_range=tuple(f["std_range"]),
                  weight_range=tuple(f["weight_range"]), margin=f["margin"])
        comps = random_mixture(rng, env, **kw)
        events = tuple((t * dt, random_mixture(rng, env, **kw)) for t in f["change_ticks"])
        return FieldProgram(components=comps, change_events=events)

    def comps(items):
        return tuple(MixtureComponent(c["weight"], tuple(c["center"]), tuple(tuple(r) for r in c["cov"]),
                                      tuple(c["velocity"]), c["weight_rate"]) for c in items)

    events = tuple(
        ((ev["tick"] * dt if "tick" in ev else ev["time"]), comps(ev["components"])) for ev in f["change_events"]
    )
    return FieldProgram(components=comps(f["components"]), change_events=events)


def _capped_signal_bounds(sc: Scenario) -> tuple[float, float]:
    """Signal-std bounds, capped so the spatial-decay std floor at a sample,
    about ``signal_std * sqrt(epsilon)``, stays under the admission threshold
    at the smallest mu_max. Above the cap every sample is admitted and then
    evicted in the same round."""
    lo, hi = sc.gp.signal_bounds
    eps = sc.decay.epsilon
    if not sc.filter.enabled or eps <= 0:
        return lo, hi
    f = sc.filter
    cap = f.e_add / f.z_score * f.mu_max_floor / math.sqrt(eps)
    return min(lo, cap), min(hi, cap)


def build_world(sc: Scenario) -> tuple[World, EvalGrid]:
    env = Environment(np.array(sc.environment, dtype=float))
    geom = SensingGeometry(sc.sensing_radius)
    diam = env.diameter
    g = sc.gp
    bounds = HyperparamBounds(
        length_scale=g.length_bounds or (0.02 * diam, diam),
        signal_std=_capped_signal_bounds(sc),
        noise_std=g.noise_bounds,
    )
    start = bounds.clip(Hyperparams(g.length_scale or 0.1 * diam, g.signal_std, g.noise_std))
    model = GpModel(start, sc.decay, bounds, g.budget, g.retrain_every, g.fit_max_points)
    if sc.initial_positions is None:
        rng = derive_rng(sc.seed, INIT)
        positions = [random_point(rng, env) for _ in range(sc.robot_count)]
    else:
        positions = [np.array(p, dtype=float) for p in sc.initial_positions]
    robots = [RobotState(id=i, position=np.asarray(p, dtype=float), model=model) for i, p in enumerate(positions)]
    cfg = RobotConfig(
        control=sc.control,
        tradeoff=sc.tradeoff,
        filter=sc.filter,
        strategy=sc.strategy,
        cell_grid=sc.resolution.cell_grid,
        segments=sc.resolution.disk_segments,
    )
    grid = EvalGrid.over(env, sc.resolution.eval_grid)
    world = World(
        env=env,
        geom=geom,
        robots=robots,
        field=build_field(sc, env),
        robot_config=cfg,
        eval_points=grid.points,
        seed=sc.seed,
        sensor_noise=sc.sensor_noise,
    )
    return world, grid
