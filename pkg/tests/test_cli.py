import csv
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpcov.cli import main
from gpcov.experiment import emit, metrics_csv, run, summarize, sweep
from gpcov.gp import decay_matrices
from gpcov.scenario import (
    ScenarioError,
    build_world,
    dump_scenario,
    load_scenario,
    parse_scenario,
    scenario_from_dict,
)
from gpcov.world import read_grid_csv

MINIMAL = {
    "environment": {"width": 10, "height": 10},
    "robots": {"count": 2},
    "field": {"kind": "gaussian_mixture", "components": [{"weight": 1.0, "center": [6, 4], "std": 1.2}]},
    "ticks": 5,
}


def doc(**kw):
    d = json.loads(json.dumps(MINIMAL))
    d.update(kw)
    return d


def fast(**kw):
    base = {"resolution": {"eval_grid": 15, "cell_grid": 15}, "gp": {"budget": 10}}
    base.update(kw)
    return scenario_from_dict(doc(**base))


class TestParse:
    def test_defaults(self):
        sc = scenario_from_dict(doc())
        assert sc.tradeoff.alpha == 0.1
        assert (sc.filter.e_add, sc.filter.e_remove, sc.filter.z_score) == (0.04, 0.05, 1.96)
        assert (sc.decay.epsilon, sc.decay.tau) == (1e-4, 1e5)
        assert sc.strategy.kind == "proposed" and sc.filter.enabled
        assert sc.initial_positions is None and sc.robot_count == 2

    def test_inverted_margins(self):
        with pytest.raises(ScenarioError, match=r"^filter: .*no-flap"):
            scenario_from_dict(doc(filter={"e_add": 0.06, "e_remove": 0.05}))

    def test_identity_decay_setting(self):
        sc = scenario_from_dict(doc(decay={"epsilon": 1e-100, "tau": 1e100}))
        D, d, Td, TD = decay_matrices(np.array([0.0, 5.0, 30.0]), 60.0, sc.decay)
        for m in (D, d, Td, TD):
            assert np.allclose(m, 1.0, atol=1e-12, rtol=0)

    @pytest.mark.parametrize(
        "patch,where",
        [
            ({"colour": 1}, "scenario"),
            ({"filter": {"e_ad": 0.04}}, "filter"),
            ({"ticks": 0}, "ticks"),
            ({"robots": {"count": 0}}, "robots.count"),
            ({"robots": {"positions": [[11, 1]]}}, r"robots.positions\[0\]"),
            ({"control": {"gain": 20.0, "dt": 0.1}}, "control"),
            ({"gp": {"noise_std": -1}}, "gp.noise_std"),
            ({"gp": {"bounds": {"signal_std": [1.0, 0.5]}}}, "gp.bounds.signal_std"),
            ({"alpha": "fast"}, "alpha"),
            ({"strategy": "greedy"}, "strategy"),
            ({"decay": {"kind": "cosine"}}, "decay"),
            ({"field": {"kind": "gaussian_mixture", "components": []}}, "field.components"),
            ({"environment": [[0, 0], [1, 0]]}, "environment"),
            ({"sensor_noise": -0.1}, "sensor_noise"),
        ],
    )
    def test_diagnostics_name_the_field(self, patch, where):
        with pytest.raises(ScenarioError, match=f"^{where}"):
            scenario_from_dict(doc(**patch))

    def test_missing_required(self):
        d = doc()
        del d["field"]
        with pytest.raises(ScenarioError, match="^field"):
            scenario_from_dict(d)

    def test_not_json(self):
        with pytest.raises(ScenarioError):
            parse_scenario("{environment: 1")

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(1, 6),
        st.one_of(st.none(), st.floats(0.5, 3)),
        st.floats(1e-6, 1e-2),
        st.floats(1.0, 1e6),
        st.sampled_from(["exponential", "step"]),
        st.booleans(),
        st.integers(0, 2**31),
    )
    def test_round_trip(self, n, length, eps, tau, kind, enabled, seed):
        d = doc(
            robots={"count": n},
            decay={"kind": kind, "epsilon": eps, "tau": tau},
            filter={"enabled": enabled},
            gp={"length_scale": length, "retrain_every": 3},
            seed=seed,
            dump_ticks=[0, 2],
        )
        sc = scenario_from_dict(d)
        assert parse_scenario(dump_scenario(sc)) == sc

    def test_round_trip_events_and_positions(self):
        d = doc(
            robots={"positions": [[1, 2], [3, 4]]},
            field={
                "kind": "gaussian_mixture",
                "components": [{"weight": 1.0, "center": [6, 4], "cov": [[1, 0.2], [0.2, 2]]}],
                "change_events": [{"tick": 3, "components": [{"weight": 0.5, "center": [2, 2], "std": 1}]}],
            },
        )
        sc = scenario_from_dict(d)
        assert parse_scenario(dump_scenario(sc)) == sc

    def test_grid_field_relative_path(self, tmp_path):
        (tmp_path / "f.csv").write_text("3,3,5,0,0\n0,1,2\n1,2,3\n2,3,4\n")
        d = doc(field={"kind": "grid_csv", "path": "f.csv"})
        (tmp_path / "s.json").write_text(json.dumps(d))
        sc = load_scenario(tmp_path / "s.json")
        w, _ = build_world(sc)
        assert w.field_at(np.array([5.0, 5.0])) == 2.0


class TestRun:
    def test_one_robot_one_tick(self):
        art = run(fast(robots={"count": 1}, ticks=1))
        assert len(art.metrics) == 1
        assert art.metrics[0].tick == 0

    def test_hundred_rows_and_schema(self, tmp_path):
        sc = fast(robots={"count": 3}, ticks=100, strategy="plain")
        emit(run(sc), tmp_path)
        with open(tmp_path / "metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["tick", "time_s", "H", "rmse_0", "rmse_1", "rmse_2", "deviation_pct",
                           "dsize_0", "dsize_1", "dsize_2", "ticktime_0", "ticktime_1", "ticktime_2"]
        assert len(rows) == 101
        assert [int(r[0]) for r in rows[1:]] == list(range(100))
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["ticks"] == 100 and summary["final"]["H"] == float(rows[-1][2])

    def test_byte_identical_reruns(self, tmp_path):
        sc = fast(ticks=30, field={"kind": "random_mixture", "change_ticks": [15]})
        for name in ("a", "b"):
            emit(run(sc), tmp_path / name)
        for f in ("metrics.csv", "summary.json", "scenario.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_different_seeds_differ(self):
        a = metrics_csv(run(fast(ticks=5, seed=1)))
        b = metrics_csv(run(fast(ticks=5, seed=2)))
        assert a != b

    def test_timing_recorded_on_request(self):
        art = run(fast(ticks=2, record_timing=True))
        last = metrics_csv(art).splitlines()[-1].split(",")
        assert all(math.isfinite(float(v)) and float(v) > 0 for v in last[-2:])

    def test_dumps_round_trip(self, tmp_path):
        sc = fast(ticks=3, dump_ticks=[2])
        art = run(sc)
        paths = emit(art, tmp_path)
        truth_path = tmp_path / "dumps" / "tick00002_truth.csv"
        assert str(truth_path) in paths
        back = read_grid_csv(str(truth_path))
        assert np.allclose(back.values, art.dumps[2]["truth"].values, rtol=5e-9, atol=1e-300)
        mean = read_grid_csv(str(tmp_path / "dumps" / "tick00002_robot0_mean.csv"), nonnegative=False)
        assert mean.shape == back.shape

    def test_emit_reports_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match=str(blocker)):
            emit(run(fast(ticks=1)), blocker / "out")

    def test_summary_fields(self):
        s = summarize(run(fast(ticks=3, strategy="oracle")))
        assert s["strategy"] == "oracle" and s["ticks"] == 3
        assert s["final"]["rmse_mean"] is None


def test_sweep_table(tmp_path):
    sc = fast(ticks=3)
    summary = sweep(sc, ["plain", "random"], range(3), tmp_path)
    assert len(summary["runs"]) == 6
    for kind in ("plain", "random"):
        row = summary["strategies"][kind]
        assert row["final_H_mean"] == pytest.approx(np.mean(row["final_H"]))
        assert len(row["final_H"]) == 3
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["strategies"]["plain"]["final_H_mean"] == summary["strategies"]["plain"]["final_H_mean"]
    assert (tmp_path / "random" / "seed2" / "metrics.csv").exists()


class TestMain:
    def write(self, tmp_path, **kw):
        p = tmp_path / "sc.json"
        d = doc(resolution={"eval_grid": 15, "cell_grid": 15}, gp={"budget": 10})
        d.update(kw)
        p.write_text(json.dumps(d))
        return str(p)

    def test_run_with_overrides(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["run", "--scenario", self.write(tmp_path), "--out", str(out), "--seed", "4", "--ticks", "3",
                   "--strategy", "plain", "--no-filter"])
        assert rc == 0
        sc = json.loads((out / "scenario.json").read_text())
        assert sc["seed"] == 4 and sc["ticks"] == 3 and sc["strategy"]["kind"] == "plain"
        assert sc["filter"]["enabled"] is False
        assert json.loads(capsys.readouterr().out)["out"] == str(out)

    def test_sweep(self, tmp_path, capsys):
        rc = main(["sweep", "--scenario", self.write(tmp_path, ticks=2), "--out", str(tmp_path / "sw"),
                   "--strategy", "random", "--seeds", "2"])
        assert rc == 0
        assert "random" in capsys.readouterr().out
        assert json.loads((tmp_path / "sw" / "summary.json").read_text())["seeds"] == [0, 1]

    def test_bad_scenario_exit_code(self, tmp_path, capsys):
        rc = main(["run", "--scenario", self.write(tmp_path, filter={"e_add": 0.2}), "--out", str(tmp_path)])
        assert rc == 2
        assert "no-flap" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
        assert rc == 2
        assert "nope.json" in capsys.readouterr().err

    def test_demo(self, tmp_path):
        assert main(["demo-1d", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "demo_1d_curves.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 241
        assert set(rows[0]) == {"x", "truth", "mean_varying", "std_varying", "mean_static", "std_static"}
        assert os.path.exists(tmp_path / "demo_1d_samples.csv")
