"""Running scenarios, seed sweeps and the 1-D decay demo; writing results."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .evaluation import EvalGrid, MetricsRecord, collect_metrics
from .gp import DecayParams, GpPosterior, Hyperparams, Sample
from .robot import STRATEGIES, Strategy
from .scenario import Scenario, build_world, scenario_to_dict
from .world import GridField, World, field_value, format_grid_csv

log = logging.getLogger(__name__)


@dataclass
class RunArtifacts:
    scenario: Scenario
    robot_ids: list[int]
    metrics: list[MetricsRecord] = field(default_factory=list)
    dumps: dict[int, dict[str, GridField]] = field(default_factory=dict)
    gp_failures: list[int] = field(default_factory=list)


def _dump(world: World, grid: EvalGrid, time: float) -> dict[str, GridField]:
    nodes = grid.nodes
    inside = grid.inside
    out = {"truth": grid.to_grid(np.where(inside, _safe_field(world, nodes, inside, time), 0.0))}
    for r in world.robots:
        if not world.robot_config.strategy.learns:
            continue
        mu, sd = r.estimate(nodes)
        if r.normalizer.seeded:
            span = r.normalizer.running_max - r.normalizer.running_min
            mean, std = r.normalizer.denormalize(mu), sd * span
        else:
            mean, std = np.zeros(len(nodes)), sd
        out[f"robot{r.id}_mean"] = grid.to_grid(mean)
        out[f"robot{r.id}_std"] = grid.to_grid(std)
    return out


def _safe_field(world: World, nodes: np.ndarray, inside: np.ndarray, time: float) -> np.ndarray:
    vals = np.zeros(len(nodes))
    if inside.any():
        vals[inside] = field_value(world.field, nodes[inside], time)
    return vals


def run(scenario: Scenario, world_hook=None) -> RunArtifacts:
    """Simulate ``scenario.ticks`` synchronous rounds.

    ``world_hook(world, views)`` is called before each round with the
    neighbor views the robots will use, which lets callers inspect access.
    """
    world, grid = build_world(scenario)
    art = RunArtifacts(scenario, [r.id for r in world.robots])
    dump_at = set(scenario.dump_ticks)
    for _ in range(scenario.ticks):
        tick, t = world.tick, world.time
        views = world.views()
        if world_hook is not None:
            world_hook(world, views)
        world.step(views)
        art.metrics.append(collect_metrics(world, grid, tick, t))
        if tick in dump_at:
            art.dumps[tick] = _dump(world, grid, t)
    art.gp_failures = [r.failures for r in world.robots]
    return art


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else repr(float(v))


def metrics_csv(art: RunArtifacts) -> str:
    ids = art.robot_ids
    header = (
        ["tick", "time_s", "H"]
        + [f"rmse_{i}" for i in ids]
        + ["deviation_pct"]
        + [f"dsize_{i}" for i in ids]
        + [f"ticktime_{i}" for i in ids]
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    timing = art.scenario.record_timing
    for m in art.metrics:
        w.writerow(
            [m.tick, _fmt(m.time), _fmt(m.H)]
            + [_fmt(v) for v in m.rmse]
            + [_fmt(m.deviation_pct)]
            + [str(n) for n in m.dataset_sizes]
            + [_fmt(v) if timing else "nan" for v in m.tick_times]
        )
    return buf.getvalue()


def _nanmean(xs) -> float | None:
    a = np.asarray(list(xs), dtype=float)
    a = a[np.isfinite(a)]
    return float(a.mean()) if a.size else None


def summarize(art: RunArtifacts) -> dict:
    ms = art.metrics
    last = ms[-1]
    return {
        "strategy": art.scenario.strategy.kind,
        "seed": art.scenario.seed,
        "ticks": len(ms),
        "filter_enabled": art.scenario.filter.enabled,
        "final": {
            "H": last.H,
            "rmse_mean": _nanmean(last.rmse),
            "deviation_pct": _nanmean([last.deviation_pct]),
            "dataset_size_mean": float(np.mean(last.dataset_sizes)),
        },
        "mean": {
            "H": float(np.mean([m.H for m in ms])),
            "rmse_mean": _nanmean(v for m in ms for v in m.rmse),
            "deviation_pct": _nanmean(m.deviation_pct for m in ms),
            "dataset_size_mean": float(np.mean([np.mean(m.dataset_sizes) for m in ms])),
        },
        "gp_failures": list(art.gp_failures),
    }


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit(art: RunArtifacts, out_dir: str) -> list[str]:
    """Write ``metrics.csv``, ``summary.json``, ``scenario.json`` and any grid dumps."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
    written = []
    for name, text in (
        ("metrics.csv", metrics_csv(art)),
        ("summary.json", json.dumps(summarize(art), indent=2) + "\n"),
        ("scenario.json", json.dumps(scenario_to_dict(art.scenario), indent=2) + "\n"),
    ):
        p = os.path.join(out_dir, name)
        _write(p, text)
        written.append(p)
    if art.dumps:
        ddir = os.path.join(out_dir, "dumps")
        os.makedirs(ddir, exist_ok=True)
        for tick, grids in sorted(art.dumps.items()):
            for name, g in grids.items():
                p = os.path.join(ddir, f"tick{tick:05d}_{name}.csv")
                _write(p, format_grid_csv(g))
                written.append(p)
    return written


def sweep(
    scenario: Scenario,
    strategies: Sequence[str] = STRATEGIES,
    seeds: Iterable[int] = range(20),
    out_dir: str | None = None,
) -> dict:
    """Run every (strategy, seed) pair; return and optionally write a summary table."""
    seeds = list(seeds)
    runs = []
    table = {}
    for kind in strategies:
        finals = []
        for seed in seeds:
            sc = replace(scenario, seed=seed, strategy=replace(scenario.strategy, kind=kind))
            art = run(sc)
            s = summarize(art)
            runs.append(s)
            finals.append(s["final"]["H"])
            if out_dir is not None:
                emit(art, os.path.join(out_dir, kind, f"seed{seed}"))
        a = np.asarray(finals)
        table[kind] = {
            "final_H_mean": float(a.mean()),
            "final_H_se": float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0,
            "final_H": [float(x) for x in a],
        }
    summary = {"seeds": seeds, "strategies": table, "runs": runs}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")
    return summary


@dataclass(frozen=True)
class Demo1D:
    """Six readings of a 1-D signal taken left to right, 10 s apart."""

    xs: tuple[float, ...] = (2.0, 3.6, 5.2, 6.8, 8.4, 10.0)
    times: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    now: float = 60.0
    hyperparams: Hyperparams = Hyperparams(1.0, 1.0, 1e-7)
    decay: DecayParams = DecayParams(epsilon=1e-4, tau=1e2)

    @staticmethod
    def signal(x):
        x = np.asarray(x, dtype=float)
        return 0.5 + 0.4 * np.sin(0.7 * x)

    def samples(self) -> tuple[Sample, ...]:
        return tuple(
            Sample((x, 0.0), float(self.signal(x)), t, 0) for x, t in zip(self.xs, self.times)
        )

    def posteriors(self) -> tuple[GpPosterior, GpPosterior]:
        data = self.samples()
        varying = GpPosterior.from_samples(data, self.hyperparams, self.decay, self.now)
        static = GpPosterior.from_samples(data, self.hyperparams, DecayParams.identity(), self.now)
        return varying, static


def demo_1d(demo: Demo1D = Demo1D(), n: int = 241, x_range=(0.0, 12.0)) -> dict[str, np.ndarray]:
    """Posterior mean/std curves with and without time decay."""
    xs = np.linspace(*x_range, n)
    q = np.column_stack([xs, np.zeros(n)])
    varying, static = demo.posteriors()
    mv, vv = varying.predict(q)
    ms, vs = static.predict(q)
    return {
        "x": xs,
        "truth": demo.signal(xs),
        "mean_varying": mv,
        "std_varying": np.sqrt(vv),
        "mean_static": ms,
        "std_static": np.sqrt(vs),
    }


def emit_demo_1d(curves: dict[str, np.ndarray], demo: Demo1D, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    cols = list(curves)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*(curves[c] for c in cols)):
        w.writerow([f"{v:.9g}" for v in row])
    p1 = os.path.join(out_dir, "demo_1d_curves.csv")
    _write(p1, buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "timestamp", "value"])
    for s in demo.samples():
        w.writerow([f"{s.location[0]:.9g}", f"{s.timestamp:.9g}", f"{s.value:.9g}"])
    p2 = os.path.join(out_dir, "demo_1d_samples.csv")
    _write(p2, buf.getvalue())
    return [p1, p2]
