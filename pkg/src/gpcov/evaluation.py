"""Scoring: coverage objective, estimate error and inter-robot consistency.

Everything here is a centralized, read-only observer of world state; no
value computed here is fed back to the robots.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    DEFAULT_SEGMENTS,
    Environment,
    SensingGeometry,
    limited_voronoi_cell,
    performance_value,
    points_in_polygon,
)
from .robot import RobotState, Strategy, TickContext, _density_for, RobotConfig
from .world import GridField, World, field_value


@dataclass(frozen=True)
class EvalGrid:
    """Square-celled midpoint grid over the environment's bounding box."""

    xs: np.ndarray
    ys: np.ndarray
    spacing: float
    inside: np.ndarray  # flat mask over all nodes, row-major with row 0 at min y

    @classmethod
    def over(cls, env: Environment, n: int = 60) -> "EvalGrid":
        x0, y0, x1, y1 = env.bounds
        h = max(x1 - x0, y1 - y0) / n
        nx = max(1, int(np.ceil((x1 - x0) / h - 1e-9)))
        ny = max(1, int(np.ceil((y1 - y0) / h - 1e-9)))
        xs = x0 + (np.arange(nx) + 0.5) * h
        ys = y0 + (np.arange(ny) + 0.5) * h
        gx, gy = np.meshgrid(xs, ys)
        nodes = np.column_stack([gx.ravel(), gy.ravel()])
        return cls(xs, ys, h, env.contains(nodes))

    @property
    def nodes(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def points(self) -> np.ndarray:
        return self.nodes[self.inside]

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    def to_grid(self, flat_values: np.ndarray) -> GridField:
        vals = np.asarray(flat_values, dtype=float).reshape(len(self.ys), len(self.xs))
        return GridField(vals, self.spacing, (float(self.xs[0]), float(self.ys[0])))


@dataclass
class MetricsRecord:
    tick: int
    time: float
    H: float
    rmse: list[float]
    deviation_pct: float
    dataset_sizes: list[int]
    tick_times: list[float]


def coverage_objective(
    positions: Sequence,
    env: Environment,
    geom: SensingGeometry,
    phi: Callable[[np.ndarray], np.ndarray],
    grid: EvalGrid | None = None,
    segments: int = DEFAULT_SEGMENTS,
) -> float:
    """Sum over limited Voronoi cells of the performance-weighted density,
    plus ``-r^2 * phi`` over the part of the environment no cell reaches."""
    grid = grid or EvalGrid.over(env)
    pts = grid.points
    if len(pts) == 0:
        return 0.0
    dens = np.asarray(phi(pts), dtype=float)
    r = geom.cell_radius
    P = [np.asarray(p, dtype=float) for p in positions]
    total = 0.0
    covered = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(P):
        others = [q for j, q in enumerate(P) if j != i]
        cell = limited_voronoi_cell(p, others, env, geom, segments, owner_id=i)
        m = points_in_polygon(pts, cell.vertices)
        if not m.any():
            continue
        s = np.hypot(*(pts[m] - p).T)
        total += float(np.sum(performance_value(s, r) * dens[m]))
        covered |= m
    total += float(np.sum(-r * r * dens[~covered]))
    return total * grid.cell_area


def rmse(estimate, truth) -> float:
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((e - t) ** 2)))


def pairwise_deviation(estimates: Sequence[np.ndarray], field_max: float, floor: float = 0.1) -> float:
    """Largest mean absolute difference between two robots' estimates, as a
    percentage of ``max(field_max, floor)``."""
    if len(estimates) < 2:
        return 0.0
    scale = max(field_max, floor)
    worst = max(float(np.mean(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in combinations(estimates, 2))
    return 100.0 * worst / scale


def baseline_density(strategy: Strategy, state: RobotState, ctx: TickContext, cfg: RobotConfig):
    """Density a robot following ``strategy`` would cover with.

    Returns ``None`` for the random strategy, which tracks waypoints instead.
    """
    if strategy.kind == "random":
        return None
    return _density_for(state, ctx, RobotConfig(cfg.control, cfg.tradeoff, cfg.filter, strategy, cfg.cell_grid, cfg.segments))


def collect_metrics(world: World, grid: EvalGrid, tick: int, time: float) -> MetricsRecord:
    """Score the world after a round that ran at ``time``."""
    truth = field_value(world.field, grid.points, time)
    phi = lambda pts: field_value(world.field, pts, time)  # noqa: E731
    H = coverage_objective([r.position for r in world.robots], world.env, world.geom, phi, grid,
                           world.robot_config.segments)
    learns = world.robot_config.strategy.learns
    ests = []
    errs = []
    for r in world.robots:
        if not learns:
            errs.append(float("nan"))
            continue
        est = r.grid_mean if r.grid_mean is not None else np.zeros(len(truth))
        ests.append(est)
        errs.append(rmse(est, truth))
    dev = pairwise_deviation(ests, float(truth.max()) if len(truth) else 0.0,
                             world.robot_config.filter.mu_max_floor) if learns else float("nan")
    return MetricsRecord(
        tick=tick,
        time=time,
        H=H,
        rmse=errs,
        deviation_pct=dev,
        dataset_sizes=[len(r.dataset) for r in world.robots],
        tick_times=[r.tick_time for r in world.robots],
    )
