import json

import numpy as np
import pytest

from ratchetchaos import cli, pipeline
from ratchetchaos.io import read_json, read_trajectory_csv, write_trajectory_csv
from ratchetchaos.meanfield import RatchetParams, TimeSeries
from ratchetchaos.pipeline import (
    G_SCAN,
    RECIPE_NAMES,
    ConfigError,
    ExperimentConfig,
    RunSpec,
    manifest_is_complete,
    plan_runs,
    recipe,
    run_experiment,
    summary_tables,
)


def _cfg(tmp_path, **kw):
    base = dict(model="gp3", g_values=(0.0,), duration=10.0, output_dir=str(tmp_path), name="t", n_samples=2000)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize(
    "kw, field",
    [
        (dict(model="bogus"), "model"),
        (dict(model=()), "model"),
        (dict(g_values=()), "g_values"),
        (dict(g_values=(-0.1,)), "g_values"),
        (dict(model="ls3"), "N_values"),
        (dict(model="ls3", N_values=(0,)), "N_values"),
        (dict(duration=0.0), "duration"),
        (dict(observables=()), "observables"),
        (dict(observables=("density3",)), "observables"),
        (dict(model="dnls", observables=("density9",)), "observables"),
        (dict(observables=("depletion",)), "observables"),
        (dict(observables=("spin",)), "observables"),
        (dict(analysis=("fourier",)), "analysis"),
        (dict(n_samples=10), "n_samples"),
        (dict(dt_out=0.0), "dt_out"),
        (dict(pair_budget=10), "pair_budget"),
    ],
)
def test_config_validation_names_field(tmp_path, kw, field):
    with pytest.raises(ConfigError) as info:
        _cfg(tmp_path, **kw).validate()
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_model_list_and_run_plan(tmp_path):
    cfg = _cfg(tmp_path, model="gp3, ls3", g_values=(0.03, 0.14), N_values=(4, 6))
    assert cfg.model == ("gp3", "ls3")
    runs = plan_runs(cfg.validate())
    assert len(runs) == 2 + 4
    assert RunSpec("gp3", 0.03, None).run_id == "gp3_g0.0300_Ninf"
    assert RunSpec("ls3", 0.14, 6).run_id == "ls3_g0.1400_N6"


def test_config_hash_ignores_output_dir(tmp_path):
    a = _cfg(tmp_path / "a")
    b = _cfg(tmp_path / "b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != _cfg(tmp_path, duration=11.0).config_hash()


def test_recipes():
    assert G_SCAN[0] == 0.0 and G_SCAN[-1] == 0.34 and len(G_SCAN) == 69
    f7 = recipe("fig7", full=True)
    assert f7.g_values == (0.03, 0.14, 0.34) and max(f7.N_values) == 40
    f8 = recipe("fig8")
    assert f8.N_values == (6, 12, 18) and f8.duration == 100.0
    t1 = recipe("table1", full=True)
    assert t1.g_values == (0.03, 0.14, 0.34) and t1.duration == 1000.0
    assert recipe("table1").duration == 200.0
    assert set(recipe("fig3").g_values) == set(G_SCAN)
    for name in RECIPE_NAMES:
        assert recipe(name).name == name
    with pytest.raises(ValueError):
        recipe("fig99")


def test_gp3_rabi_run(tmp_path):
    cfg = _cfg(tmp_path)
    m = run_experiment(cfg)
    assert m.ok and len(m.runs) == 1
    series = read_trajectory_csv(m.runs[0]["files"][0])
    cur = series["current"]
    assert list(series) == ["current"]
    # n+ - n- for the linear three-mode model oscillates and returns after one Rabi period
    TR = RatchetParams().rabi_period
    k = int(round(TR / cur.dt))
    assert cur.values[0] == 0.0 and abs(cur.values[k]) < 1e-3
    assert np.ptp(cur.values) > 0.5
    assert manifest_is_complete(m.path)


def test_rerun_is_cached_and_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, model="gp3,dnls", g_values=(0.14,), analysis=("zero_one",))
    m1 = run_experiment(cfg)
    files = [f for r in m1.runs for f in r["files"]] + m1.summaries
    before = {f: open(f, "rb").read() for f in files}
    m2 = run_experiment(cfg)
    assert all(r["cached"] for r in m2.runs)
    assert {f: open(f, "rb").read() for f in files} == before
    # a fresh directory recomputes and still produces the same bytes
    cfg3 = _cfg(tmp_path / "again", model="gp3,dnls", g_values=(0.14,), analysis=("zero_one",))
    m3 = run_experiment(cfg3)
    # config.json records the output directory, everything else must match
    for f in (f for f in files if not f.endswith("config.json")):
        g = f.replace(str(tmp_path), str(tmp_path / "again"), 1)
        assert open(g, "rb").read() == before[f]
    assert not any(r["cached"] for r in m3.runs)


def test_failed_run_is_listed(tmp_path, monkeypatch):
    real = pipeline.simulate

    def flaky(config, run):
        if run.g == 0.1:
            raise RuntimeError("boom")
        return real(config, run)

    monkeypatch.setattr(pipeline, "simulate", flaky)
    m = run_experiment(_cfg(tmp_path, g_values=(0.0, 0.1)))
    assert m.failed == ["gp3_g0.1000_Ninf"]
    data = read_json(m.path)
    assert data["failed"] == m.failed
    assert "boom" in [r for r in data["runs"] if r["status"] == "failed"][0]["error"]
    assert manifest_is_complete(m.path)


def test_manifest_incomplete_when_file_missing(tmp_path):
    m = run_experiment(_cfg(tmp_path))
    (tmp_path / "t" / m.runs[0]["run"] / "trajectory.csv").unlink()
    assert not manifest_is_complete(m.path)


def test_ls3_fits_sweep(tmp_path):
    cfg = _cfg(tmp_path, model="ls3", g_values=(0.03,), N_values=(4, 6, 8, 10), duration=30.0,
               observables=("current", "depletion"), analysis=("fits",), dt_out=0.05)
    m = run_experiment(cfg)
    assert m.ok
    sweep = read_json(tmp_path / "t" / "sweep.json")
    assert "0.0300" in sweep
    a = read_json(m.runs[0]["files"][1])
    assert set(a["fits"]) == {"T_IE", "onset"}
    assert manifest_is_complete(m.path)


def test_summary_tables():
    rows = [
        {"model": "gp3", "g": 0.14, "zero_one": {"current": {"K": 0.99, "degenerate": False}}},
        {"model": "dnls", "g": 0.03, "corrdim": {"current": {"error": "no plateau"}}},
    ]
    t = summary_tables(rows)
    assert t["zero_one.csv"].splitlines() == ["model,g,observable,K,degenerate", "gp3,0.14,current,0.99,0"]
    assert t["corrdim.csv"].splitlines()[1] == "dnls,0.03,current,nan,nan"


def test_worker_count(monkeypatch):
    monkeypatch.setenv("RATCHET_WORKERS", "3")
    assert pipeline.worker_count() == 3
    monkeypatch.setenv("RATCHET_WORKERS", "x")
    with pytest.raises(ConfigError):
        pipeline.worker_count()


def test_parallel_matches_serial(tmp_path):
    a = run_experiment(_cfg(tmp_path / "s", g_values=(0.0, 0.2)), workers=1)
    b = run_experiment(_cfg(tmp_path / "p", g_values=(0.0, 0.2)), workers=2)
    for ra, rb in zip(a.runs, b.runs):
        assert open(ra["files"][0], "rb").read() == open(rb["files"][0], "rb").read()


# ---------------------------------------------------------------- CLI


def test_cli_simulate_exit_zero(tmp_path, capsys):
    code = cli.main(["simulate", "--model", "gp3", "--g", "0", "--duration", "5",
                     "--n-samples", "500", "--output-dir", str(tmp_path)])
    assert code == 0
    assert "manifest:" in capsys.readouterr().out


def test_cli_config_file_and_override(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[experiment]\nmodel = gp3\ng_values = 0.0, 0.05\nduration = 50\nn_samples = 500\n"
        f"output_dir = {tmp_path}\nname = fromfile\n"
        "[params]\ndrive_plus_E = 0.03\n"
        "[analysis]\npair_budget = 1e6\ncorrdim_samples.current = 400\n"
    )
    kw = cli.load_config(str(ini))
    assert kw["g_values"] == [0.0, 0.05] and kw["pair_budget"] == 1_000_000
    assert kw["params"].drive_plus_E == pytest.approx(0.03)
    assert kw["corrdim_samples"] == {"current": 400}
    code = cli.main(["simulate", "--config", str(ini), "--duration", "3"])
    assert code == 0
    cfg = read_json(tmp_path / "fromfile" / "config.json")
    assert cfg["duration"] == 3.0 and cfg["g_values"] == [0.0, 0.05]


def test_cli_config_errors_exit_two(tmp_path, capsys):
    assert cli.main(["simulate", "--model", "gp3", "--g", "-1", "--output-dir", str(tmp_path)]) == 2
    assert "g_values" in capsys.readouterr().err
    ini = tmp_path / "bad.ini"
    ini.write_text("[experiment]\ncolour = blue\n")
    assert cli.main(["simulate", "--config", str(ini)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["simulate"]) == 2


def test_cli_failed_run_exit_one(tmp_path, monkeypatch):
    monkeypatch.setattr(pipeline, "simulate", lambda c, r: (_ for _ in ()).throw(RuntimeError("x")))
    assert cli.main(["simulate", "--model", "gp3", "--output-dir", str(tmp_path)]) == 1


def test_cli_int_ranges():
    assert cli._ints("2:10:4, 12") == [2, 6, 10, 12]


def test_cli_recipe_dry_run(capsys):
    assert cli.main(["recipe", "fig8", "--dry-run"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["N_values"] == [6, 12, 18] and out["name"] == "fig8"
    assert cli.main(["recipe", "table1", "--full", "--dry-run"]) == 0
    assert "expected runtime" in capsys.readouterr().out


def test_cli_analyze_zero_one(tmp_path, capsys):
    from ratchetchaos.benchmarks import logistic_map

    path = tmp_path / "x.csv"
    write_trajectory_csv(path, {"x": TimeSeries(1.0, logistic_map(3000))})
    assert cli.main(["analyze", str(path), "--zero-one"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["x"]["zero_one"]["K_median"] > 0.9
    assert cli.main(["analyze", str(path), "--column", "y", "--zero-one"]) == 2


def test_cli_fit(tmp_path, capsys):
    path = tmp_path / "d.csv"
    N = np.arange(2, 42, 2)
    rows = ["N,T"] + [f"{n},{float(3 * n**0.3 + 1.5)!r}" for n in N]
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "fit.json"
    assert cli.main(["fit", "power_offset", str(path), "--x", "N", "--y", "T", "--out", str(out)]) == 0
    res = read_json(out)
    assert res["converged"] and res["params"]["b"] == pytest.approx(0.3, abs=1e-6)
    capsys.readouterr()
    assert cli.main(["fit", "linear", str(path), "--x", "N", "--y", "Q"]) == 2
    assert cli.main(["fit", "power_offset", str(path), "--x", "N", "--y", "T", "--max-iter", "1"]) == 1
