"""Per-robot state and the sense -> filter -> estimate -> cover control loop."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .filtering import FilterConfig, NormalizationState, robot_filter_tick
from .geometry import (
    DEFAULT_CELL_GRID,
    DEFAULT_SEGMENTS,
    Environment,
    SensingGeometry,
    cell_mass_centroid,
    limited_voronoi_cell,
)
from .gp import FactorizationError, GpModel, GpPosterior, Sample
from .tradeoff import TradeOffConfig, substitute_density, weight

log = logging.getLogger(__name__)

STRATEGIES = ("proposed", "oracle", "plain", "random")


@dataclass(frozen=True)
class ControlConfig:
    gain: float = 1.0  # 1/s
    dt: float = 0.1  # s
    v_max: float = 1.0  # m/s

    def __post_init__(self) -> None:
        if not (self.gain > 0 and self.dt > 0 and self.v_max > 0):
            raise ValueError("gain, dt and v_max must all be positive")
        if self.gain * self.dt > 1.0:
            raise ValueError(f"gain * dt must not exceed 1 (got {self.gain * self.dt:g}); the step would overshoot")


@dataclass(frozen=True)
class Strategy:
    kind: str = "proposed"
    waypoint_tolerance: float = 0.1  # m
    waypoint_period: int = 50  # ticks

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")

    @property
    def learns(self) -> bool:
        return self.kind == "proposed"


def control_input(position, centroid, cfg: ControlConfig) -> np.ndarray:
    """Proportional pull toward the centroid, saturated at ``v_max``."""
    c = np.asarray(centroid, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("centroid must be finite")
    u = cfg.gain * (c - np.asarray(position, dtype=float))
    speed = float(np.hypot(u[0], u[1]))
    if speed > cfg.v_max:
        u *= cfg.v_max / speed
    return u


def step_dynamics(position, u, dt: float, env: Environment) -> np.ndarray:
    """Explicit Euler step of a single integrator, projected back into ``env``."""
    p = np.asarray(position, dtype=float) + dt * np.asarray(u, dtype=float)
    return env.project(p)


@dataclass(frozen=True)
class RobotSnapshot:
    id: int
    position: tuple[float, float]
    dataset: tuple[Sample, ...]


class NeighborView:
    """Read access to the previous round's snapshots of robots within ``R``.

    Every read is recorded in ``reads``; asking for a robot outside the
    neighborhood raises ``PermissionError``.
    """

    def __init__(self, owner: int, snapshots: Mapping[int, RobotSnapshot], sensing_radius: float):
        self.owner = owner
        self._snapshots = snapshots
        me = np.asarray(snapshots[owner].position)
        self._ids = tuple(
            j
            for j, s in sorted(snapshots.items())
            if j != owner and np.hypot(*(np.asarray(s.position) - me)) <= sensing_radius
        )
        self.reads: set[int] = set()

    def ids(self) -> tuple[int, ...]:
        return self._ids

    def _get(self, j: int) -> RobotSnapshot:
        if j not in self._ids:
            raise PermissionError(f"robot {self.owner} may not read robot {j}")
        self.reads.add(j)
        return self._snapshots[j]

    def position(self, j: int) -> np.ndarray:
        return np.asarray(self._get(j).position, dtype=float)

    def dataset(self, j: int) -> tuple[Sample, ...]:
        return self._get(j).dataset


@dataclass(frozen=True)
class RobotConfig:
    control: ControlConfig = ControlConfig()
    tradeoff: TradeOffConfig = TradeOffConfig()
    filter: FilterConfig = FilterConfig()
    strategy: Strategy = Strategy()
    cell_grid: int = DEFAULT_CELL_GRID
    segments: int = DEFAULT_SEGMENTS


@dataclass
class RobotState:
    id: int
    position: np.ndarray
    model: GpModel
    dataset: tuple[Sample, ...] = ()
    normalizer: NormalizationState = field(default_factory=NormalizationState)
    mu_max: float = 0.0
    last_retrain_tick: int | None = None
    posterior: GpPosterior | None = None
    grid_mean: np.ndarray | None = None  # raw field units on the evaluation grid
    centroid: np.ndarray | None = None
    waypoint: np.ndarray | None = None
    waypoint_tick: int = 0
    failures: int = 0
    tick_time: float = 0.0

    def snapshot(self) -> RobotSnapshot:
        return RobotSnapshot(self.id, (float(self.position[0]), float(self.position[1])), self.dataset)

    def estimate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and std in normalized units (prior when untrained)."""
        if self.posterior is None:
            hp = self.model.hyperparams
            return np.zeros(len(points)), np.full(len(points), hp.signal_std)
        mu, var = self.posterior.predict(points)
        return mu, np.sqrt(var)


@dataclass
class TickContext:
    """World information a robot is allowed to use during one round."""

    tick: int
    time: float
    env: Environment
    geom: SensingGeometry
    eval_points: np.ndarray
    oracle_density: Callable[[np.ndarray], np.ndarray] | None = None
    rng: np.random.Generator | None = None


def _field_max(normalized_mean: np.ndarray) -> float:
    # targets live in [0, 1]; posterior overshoot from conflicting old and
    # new readings must not inflate the filter thresholds
    return float(np.clip(normalized_mean.max(), 0.0, 1.0)) if len(normalized_mean) else 0.0


def _learn(state: RobotState, view: NeighborView, sample: Sample | None, ctx: TickContext, cfg: RobotConfig):
    """Dataset maintenance and posterior rebuild; returns the updated fields."""
    normalizer = state.normalizer.copy()
    if sample is not None:
        normalizer.observe(sample.value)
    neighbor_data = [view.dataset(j) for j in view.ids()]
    due = state.last_retrain_tick is None or ctx.tick - state.last_retrain_tick >= state.model.retrain_every

    def values(ds):
        return np.asarray(normalizer.normalize([s.value for s in ds]), dtype=float).reshape(-1)

    def current_max(ds, model):
        # sample sites are included so a short length scale cannot hide every peak between grid nodes
        pts = np.vstack([ctx.eval_points, [s.location for s in ds]])
        return _field_max(model.posterior(ds, ctx.time, values(ds)).mean(pts))

    dataset, model = robot_filter_tick(
        state.dataset, sample, neighbor_data, cfg.filter, state.model, ctx.time, state.mu_max, normalizer,
        retrain=due, refresh_mu_max=current_max,
    )
    post = model.posterior(dataset, ctx.time, values(dataset)) if dataset else None
    updates = dict(
        dataset=dataset,
        model=model,
        normalizer=normalizer,
        posterior=post,
        last_retrain_tick=ctx.tick if due else state.last_retrain_tick,
    )
    if post is not None:
        mean = post.mean(ctx.eval_points)
        updates["mu_max"] = max(_field_max(mean), _field_max(post.mean([s.location for s in dataset])))
        updates["grid_mean"] = normalizer.denormalize(mean)
    return updates


def _density_for(state: RobotState, ctx: TickContext, cfg: RobotConfig):
    kind = cfg.strategy.kind
    if kind == "oracle":
        if ctx.oracle_density is None:
            raise ValueError("oracle strategy needs the true field")
        return ctx.oracle_density
    if kind == "plain":
        return lambda pts: np.ones(len(pts))
    W = weight(ctx.time, cfg.tradeoff)

    def density(pts):
        mu, sd = state.estimate(pts)
        return substitute_density(mu, sd, W)

    return density


def _random_target(state: RobotState, ctx: TickContext, cfg: RobotConfig) -> tuple[np.ndarray, int]:
    wp, wp_tick = state.waypoint, state.waypoint_tick
    stale = ctx.tick - wp_tick >= cfg.strategy.waypoint_period
    arrived = wp is not None and np.hypot(*(wp - state.position)) <= cfg.strategy.waypoint_tolerance
    if wp is None or stale or arrived:
        x0, y0, x1, y1 = ctx.env.bounds
        while True:
            cand = ctx.rng.uniform([x0, y0], [x1, y1])
            if ctx.env.contains(cand):
                break
        wp, wp_tick = cand, ctx.tick
    return wp, wp_tick


def robot_tick(
    state: RobotState,
    view: NeighborView,
    sample: Sample | None,
    ctx: TickContext,
    cfg: RobotConfig,
) -> RobotState:
    """Advance one robot by one synchronous round.

    Only ``state``, ``view`` (neighbors within ``R``), the robot's own
    ``sample`` and the shared clock/environment in ``ctx`` are used. If
    the GP fails the robot stays put and keeps its previous dataset.
    """
    started = _time.perf_counter()
    cfg_c = cfg.control
    if cfg.strategy.kind == "random":
        wp, wp_tick = _random_target(state, ctx, cfg)
        u = control_input(state.position, wp, cfg_c)
        new_pos = step_dynamics(state.position, u, cfg_c.dt, ctx.env)
        return replace(
            state, position=new_pos, waypoint=wp, waypoint_tick=wp_tick, centroid=wp,
            tick_time=_time.perf_counter() - started,
        )

    updates = {}
    if cfg.strategy.learns:
        try:
            updates = _learn(state, view, sample, ctx, cfg)
        except FactorizationError as exc:
            log.warning("robot %d: GP failure at tick %d (%s); holding position", state.id, ctx.tick, exc)
            return replace(state, failures=state.failures + 1, tick_time=_time.perf_counter() - started)
    state = replace(state, **updates)

    neighbors = [view.position(j) for j in view.ids()]
    cell = limited_voronoi_cell(state.position, neighbors, ctx.env, ctx.geom, cfg.segments, owner_id=state.id)
    if cell.is_empty:
        raise RuntimeError(f"robot {state.id} has an empty cell")
    _, centroid = cell_mass_centroid(cell, _density_for(state, ctx, cfg), grid=cfg.cell_grid)
    u = control_input(state.position, centroid, cfg_c)
    new_pos = step_dynamics(state.position, u, cfg_c.dt, ctx.env)
    return replace(state, position=new_pos, centroid=centroid, tick_time=_time.perf_counter() - started)
