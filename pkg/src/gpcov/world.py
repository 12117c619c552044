"""Ground-truth fields, seeded randomness and the synchronous world stepper."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Environment, SensingGeometry
from .gp import Sample
from .robot import NeighborView, RobotConfig, RobotState, TickContext, robot_tick

# stream purposes for seed derivation
SENSE, INIT, WAYPOINT, FIELD = 1, 2, 3, 4


def derive_rng(seed: int, purpose: int, key: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, key)``.

    Adding robots or purposes never shifts another stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, int(key)]))


@dataclass(frozen=True)
class MixtureComponent:
    """Gaussian bump ``weight * exp(-0.5 (x-c)^T S^-1 (x-c))``.

    ``velocity`` moves the center and ``weight_rate`` scales the weight
    linearly in time (clamped at zero); both default to a static bump.
    """

    weight: float
    center: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]
    velocity: tuple[float, float] = (0.0, 0.0)
    weight_rate: float = 0.0

    def __post_init__(self) -> None:
        S = np.asarray(self.cov, dtype=float)
        if S.shape != (2, 2) or not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("component covariance must be symmetric positive definite 2x2")
        if self.weight < 0:
            raise ValueError("component weight must be non-negative")

    def __call__(self, pts: np.ndarray, t: float) -> np.ndarray:
        c = np.asarray(self.center) + t * np.asarray(self.velocity)
        w = max(0.0, self.weight + self.weight_rate * t)
        P = np.linalg.inv(np.asarray(self.cov, dtype=float))
        d = pts - c
        return w * np.exp(-0.5 * np.einsum("ij,jk,ik->i", d, P, d))


@dataclass(frozen=True)
class GridField:
    """Node-valued grid; row 0 is the minimum y."""

    values: np.ndarray  # (nrows, ncols)
    cell_size: float
    origin: tuple[float, float]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        nrows, ncols = self.values.shape
        fx = (pts[:, 0] - self.origin[0]) / self.cell_size
        fy = (pts[:, 1] - self.origin[1]) / self.cell_size
        tol = 1e-9
        if np.any((fx < -tol) | (fx > ncols - 1 + tol) | (fy < -tol) | (fy > nrows - 1 + tol)):
            raise ValueError("query lies outside the grid extent")
        fx = np.clip(fx, 0, ncols - 1)
        fy = np.clip(fy, 0, nrows - 1)
        i0 = np.minimum(np.floor(fx).astype(int), max(ncols - 2, 0))
        j0 = np.minimum(np.floor(fy).astype(int), max(nrows - 2, 0))
        i1 = np.minimum(i0 + 1, ncols - 1)
        j1 = np.minimum(j0 + 1, nrows - 1)
        ax, ay = fx - i0, fy - j0
        v = self.values
        return (
            v[j0, i0] * (1 - ax) * (1 - ay)
            + v[j0, i1] * ax * (1 - ay)
            + v[j1, i0] * (1 - ax) * ay
            + v[j1, i1] * ax * ay
        )


def read_grid_csv(source, nonnegative: bool = True) -> GridField:
    """Parse the grid format: a ``ncols,nrows,cell_size_m,origin_x,origin_y``
    row followed by ``nrows`` rows of ``ncols`` values, row 0 at minimum y.

    ``source`` is a path or the document text.
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
        name = str(source)
    else:
        text, name = str(source), "<grid>"
    lines = [ln.strip() for ln in io.StringIO(text) if ln.strip()]
    if not lines:
        raise ValueError(f"{name}: empty grid file")
    head = lines[0].split(",")
    if len(head) != 5:
        raise ValueError(f"{name}: header must have 5 fields ncols,nrows,cell_size_m,origin_x,origin_y")
    try:
        ncols, nrows = int(head[0]), int(head[1])
        cell, ox, oy = float(head[2]), float(head[3]), float(head[4])
    except ValueError as exc:
        raise ValueError(f"{name}: malformed header: {exc}") from None
    if ncols < 1 or nrows < 1 or not cell > 0:
        raise ValueError(f"{name}: ncols, nrows and cell_size_m must be positive")
    if len(lines) - 1 != nrows:
        raise ValueError(f"{name}: expected {nrows} data rows, found {len(lines) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != ncols:
            raise ValueError(f"{name}: line {k} has {len(parts)} values, expected {ncols}")
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"{name}: line {k}: {exc}") from None
        rows.append(row)
    values = np.array(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name}: grid contains non-finite values")
    if nonnegative and np.any(values < 0):
        raise ValueError(f"{name}: grid contains negative values")
    return GridField(values, cell, (ox, oy))


def format_grid_csv(grid: GridField) -> str:
    nrows, ncols = grid.values.shape
    out = [f"{ncols},{nrows},{grid.cell_size:.9g},{grid.origin[0]:.9g},{grid.origin[1]:.9g}"]
    for row in grid.values:
        out.append(",".join(f"{v:.9g}" for v in row))
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class FieldProgram:
    """Time-varying ground truth: a Gaussian mixture with replacement events,
    or a static grid."""

    kind: str = "gaussian_mixture"
    components: tuple[MixtureComponent, ...] = ()
    change_events: tuple[tuple[float, tuple[MixtureComponent, ...]], ...] = ()
    grid: GridField | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian_mixture", "grid_csv"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "grid_csv" and self.grid is None:
            raise ValueError("grid_csv field needs a grid")
        times = [t for t, _ in self.change_events]
        if times != sorted(times):
            raise ValueError("change events must be sorted by time")

    def active_components(self, t: float) -> tuple[MixtureComponent, ...]:
        comps = self.components
        for when, repl in self.change_events:
            if t >= when:
                comps = repl
        return comps


def field_value(fp: FieldProgram, x, t: float, env: Environment | None = None):
    """True field at point(s) ``x`` and time ``t``."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    if env is not None and not np.all(env.contains(pts)):
        raise ValueError("field queried outside the environment")
    if fp.kind == "grid_csv":
        out = fp.grid(pts)
    else:
        out = np.zeros(len(pts))
        for comp in fp.active_components(t):
            out += comp(pts, t)
    return float(out[0]) if single else out


def random_mixture(
    rng: np.random.Generator,
    env: Environment,
    n_components: int = 2,
    std_range: tuple[float, float] = (1.0, 1.5),
    weight_range: tuple[float, float] = (0.8, 1.2),
    margin: float = 1.5,
) -> tuple[MixtureComponent, ...]:
    """Isotropic bumps with centers uniform in ``env`` shrunk by ``margin``."""
    x0, y0, x1, y1 = env.bounds
    comps = []
    while len(comps) < n_components:
        c = rng.uniform([x0 + margin, y0 + margin], [x1 - margin, y1 - margin])
        if not env.contains(c):
            continue
        s = rng.uniform(*std_range)
        w = rng.uniform(*weight_range)
        comps.append(MixtureComponent(float(w), (float(c[0]), float(c[1])), ((s * s, 0.0), (0.0, s * s))))
    return tuple(comps)


def random_point(rng: np.random.Generator, env: Environment) -> np.ndarray:
    x0, y0, x1, y1 = env.bounds
    while True:
        p = rng.uniform([x0, y0], [x1, y1])
        if env.contains(p):
            return p


@dataclass
class World:
    env: Environment
    geom: SensingGeometry
    robots: list[RobotState]
    field: FieldProgram
    robot_config: RobotConfig
    eval_points: np.ndarray
    seed: int = 0
    sensor_noise: float = 0.0
    tick: int = 0
    _rngs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        ids = [r.id for r in self.robots]
        if len(set(ids)) != len(ids):
            raise ValueError("robot ids must be unique")

    @property
    def dt(self) -> float:
        return self.robot_config.control.dt

    @property
    def time(self) -> float:
        return self.tick * self.dt

    def _rng(self, purpose: int, key: int) -> np.random.Generator:
        k = (purpose, key)
        if k not in self._rngs:
            self._rngs[k] = derive_rng(self.seed, purpose, key)
        return self._rngs[k]

    def robot(self, rid: int) -> RobotState:
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(f"no robot with id {rid}")

    def field_at(self, pts, t: float | None = None):
        return field_value(self.field, pts, self.time if t is None else t)

    def sense(self, rid: int) -> Sample:
        r = self.robot(rid)
        noise = self._rng(SENSE, rid).normal(0.0, self.sensor_noise) if self.sensor_noise > 0 else 0.0
        value = field_value(self.field, r.position, self.time) + noise
        return Sample((float(r.position[0]), float(r.position[1])), float(value), self.time, rid)

    def neighbors(self, rid: int) -> list[int]:
        me = self.robot(rid).position
        R = self.geom.sensing_radius
        return [r.id for r in self.robots if r.id != rid and np.hypot(*(r.position - me)) <= R]

    def snapshots(self):
        return {r.id: r.snapshot() for r in self.robots}

    def views(self) -> dict[int, NeighborView]:
        snaps = self.snapshots()
        return {r.id: NeighborView(r.id, snaps, self.geom.sensing_radius) for r in self.robots}

    def step(self, views: dict[int, NeighborView] | None = None) -> "World":
        """Run one synchronous round in place and return ``self``.

        Every robot reads only the snapshots taken before the round starts.
        """
        views = views if views is not None else self.views()
        t = self.time
        learns = self.robot_config.strategy.learns
        oracle = (lambda pts, _t=t: field_value(self.field, pts, _t)) if self.robot_config.strategy.kind == "oracle" else None
        updated = []
        for r in self.robots:
            sample = self.sense(r.id) if learns else None
            ctx = TickContext(
                tick=self.tick,
                time=t,
                env=self.env,
                geom=self.geom,
                eval_points=self.eval_points,
                oracle_density=oracle,
                rng=self._rng(WAYPOINT, r.id),
            )
            updated.append(robot_tick(r, views[r.id], sample, ctx, self.robot_config))
        self.robots = updated
        self.tick += 1
        return self


def step_world(world: World) -> World:
    return world.step()
