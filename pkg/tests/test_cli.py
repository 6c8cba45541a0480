import csv
import json
import subprocess
import sys

import pytest

from fronthaul_sim import cli, experiments
from fronthaul_sim.experiments import CSV_HEADER, PRESETS, SEED_ENV, SpecError, parse_spec, preset, resolve_seed, spec_to_dict
from fronthaul_sim.optimizer import SolverError

SMALL = {
    "name": "small",
    "scenario": {"nt_per_ms": [1], "nr_per_bs": [1], "coherence_len": 10, "power_db": 20.0},
    "strategies": ["cutset", "ecf_sep", "semi_const"],
    "sweep": {"axis": "backhaul", "values": [2.0, 6.0]},
    "mc": {"trials": 300},
    "search": {"grid_points": 8, "refine_iters": 6, "power_grid_points": 4, "power_refine_iters": 4},
}


def _write(tmp_path, doc, name="spec.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    spec = preset(name)
    assert parse_spec(spec_to_dict(spec)) == spec
    assert parse_spec(json.dumps(PRESETS[name])) == spec


def test_preset_contents():
    fig6 = preset("fig6")
    assert (fig6.scenario.coherence_len, fig6.scenario.backhaul, fig6.scenario.power_db) == (20, 6.0, 20.0)
    assert fig6.scenario.intercell_gain == 1.0
    fig3 = preset("fig3")
    assert fig3.values == (1, 2, 5, 10, 20, 50) and fig3.scenario.backhaul == 6.0
    fig2 = preset("fig2")
    assert len(fig2.strategies) == 8 and fig2.values == tuple(float(c) for c in range(1, 11))
    fig4 = preset("fig4")
    assert set(fig4.strategies) == {"cfe", "ecf_sep", "ecf_joint", "ecf_jac"}


def test_presets_command_writes_files(tmp_path, capsys):
    assert _run("presets", "-d", tmp_path) == 0
    for name in PRESETS:
        assert json.loads((tmp_path / f"{name}.json").read_text()) == PRESETS[name]
    assert _run("presets", "-d", tmp_path, "fig9") == 2


@pytest.mark.parametrize(
    "doc, where",
    [
        ({**SMALL, "strategies": []}, "strategies"),
        ({**SMALL, "strategies": ["warp"]}, "strategies[0]"),
        ({**SMALL, "sweep": {"axis": "backhaul", "values": [-1.0]}}, "sweep.values[0]"),
        ({**SMALL, "sweep": {"axis": "tilt", "values": [1]}}, "sweep.axis"),
        ({**SMALL, "colour": 1}, "colour"),
        ({**SMALL, "scenario": {"nt_per_ms": [2]}, "strategies": ["cutset"]}, "scenario"),
        ({**SMALL, "scenario": {"train_len": 3}}, "scenario.train_len"),
        ({**SMALL, "scenario": {"nt_per_ms": [1, 1], "nr_per_bs": [1, 1]}}, "strategies[0]"),
        ({**SMALL, "strategies": ["semi_select"], "sweep": {"axis": "backhaul", "values": [0.05]}}, "sweep.values[0]"),
    ],
)
def test_invalid_specs(doc, where):
    with pytest.raises(SpecError) as info:
        parse_spec(doc)
    assert info.value.where == where


def test_json_syntax_error_reports_line(tmp_path, capsys):
    path = _write(tmp_path, '{\n  "name": "x",\n  oops\n}')
    assert _run("run", path, "-o", tmp_path / "out.csv") == 2
    err = capsys.readouterr().err
    assert "invalid spec" in err and "line 3" in err


def test_empty_strategies_exit_code(tmp_path):
    path = _write(tmp_path, {**SMALL, "strategies": []})
    assert _run("run", path, "-o", tmp_path / "out.csv") == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise SolverError("strategy ecf_sep at backhaul=2: bracket [0, 1] misses target")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert _run("run", _write(tmp_path, SMALL), "-o", tmp_path / "out.csv") == 3
    assert "ecf_sep" in capsys.readouterr().err


def test_run_writes_csv_and_sidecar(tmp_path):
    out = tmp_path / "res" / "small.csv"
    assert _run("run", _write(tmp_path, SMALL), "-o", out, "--seed", 5, "--timing") == 0
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 2 * 3
    assert [r[2] for r in rows[1:4]] == ["cutset", "ecf_sep", "semi_const"]
    assert all(r[12] == "5" and r[11] == "300" and r[13] for r in rows[1:])
    sidecar = json.loads(out.with_suffix(".spec.json").read_text())
    assert sidecar["mc"]["seed"] == 5
    assert parse_spec(sidecar) == parse_spec({**SMALL, "mc": {"trials": 300, "seed": 5}})


def test_seed_priority(monkeypatch):
    spec = parse_spec(SMALL)
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed(None, spec) == 0
    monkeypatch.setenv(SEED_ENV, "17")
    assert resolve_seed(None, spec) == 17
    seeded = parse_spec({**SMALL, "mc": {"seed": 9}})
    assert resolve_seed(None, seeded) == 9
    assert resolve_seed(3, seeded) == 3
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(SpecError):
        resolve_seed(None, spec)


def test_env_seed_reaches_output(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "23")
    out = tmp_path / "o.csv"
    assert _run("run", _write(tmp_path, SMALL), "-o", out) == 0
    assert all(r[12] == "23" for r in list(csv.reader(out.open()))[1:])


def test_output_is_byte_identical_across_workers(tmp_path):
    spec = _write(tmp_path, SMALL)
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert _run("run", spec, "-o", a, "--seed", 1) == 0
    assert _run("run", spec, "-o", b, "--seed", 1, "--jobs", 3) == 0
    assert a.read_bytes() == b.read_bytes()
    assert _run("run", spec, "-o", c, "--seed", 2) == 0
    assert a.read_bytes() != c.read_bytes()


def test_trials_override_and_missing_output(tmp_path):
    spec = _write(tmp_path, SMALL)
    assert _run("run", spec, "--trials", 0, "-o", tmp_path / "x.csv") == 2
    assert _run("run", spec) == 2
    assert _run("run", spec, "--preset", "fig2", "-o", tmp_path / "x.csv") == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "fronthaul_sim", "run", str(_write(tmp_path, SMALL)), "-o", str(out), "--trials", "100"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().startswith(",".join(CSV_HEADER))


def test_rows_keep_sweep_order():
    spec = parse_spec(SMALL)
    rows = experiments.run_experiment(spec, 0)
    assert [(r.value, r.strategy) for r in rows] == [(v, s) for v in spec.values for s in spec.strategies]
