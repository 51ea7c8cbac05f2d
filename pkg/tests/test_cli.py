import json

import pytest
from click.testing import CliRunner

from levy_rk.cli import RunConfig, main

CP_INI = """[model]
family = cp_exp
sigma = 1
rho = 1
theta = 1
[sim]
dt = 1e-3
seed = 5
n_paths = 3
"""


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.delenv("LEVY_RK_OUT", raising=False)
    runner = CliRunner()

    def go(*args, config=None):
        pre = ["--out", str(tmp_path / "out")]
        if config is not None:
            ini = tmp_path / "run.ini"
            ini.write_text(config)
            pre = ["--config", str(ini)] + pre
        return runner.invoke(main, pre + list(args))

    go.out = tmp_path / "out"
    return go


def test_scale_W_brownian(run):
    r = run("scale", "--which", "W", "--xmax", "2", "--h", "0.01")
    assert r.exit_code == 0, r.output
    lines = (run.out / "scale_W.csv").read_text().splitlines()
    assert any(l.startswith("# config_hash=") for l in lines)
    row = [l for l in lines if l.startswith("1.5")][0].split(",")
    assert float(row[1]) == pytest.approx(3.0)


def test_scale_script_W(run):
    r = run("scale", "--which", "scriptW", "--f", "const:2", "--xmax", "1", "--h", "0.005")
    assert r.exit_code == 0, r.output
    assert "limit vs integral route" in r.output


def test_scale_bad_rate_is_usage_error(run):
    assert run("scale", "--which", "Wf", "--f", "ramp:1").exit_code == 2
    assert run("scale", "--xmax", "1", "--h", "2").exit_code == 2


def test_bad_model_exits_2(run):
    r = run("scale", config="[model]\nfamily = cp_exp\nsigma = 0\nrho = 1\ntheta = 1\n")
    assert r.exit_code == 2 and "hypothesis (A)" in r.output
    assert run("scale", config="[model]\nfamily = gamma\n").exit_code == 2
    assert run("scale", config="[sim]\ndt = -1\n").exit_code == 2


def test_missing_config_exits_2(run, tmp_path):
    r = CliRunner().invoke(main, ["--config", str(tmp_path / "nope.ini"), "scale"])
    assert r.exit_code == 2


def test_simulate_paths_are_reproducible(run):
    r1 = run("simulate", "--stop", "tau_plus:0.3", config=CP_INI)
    assert r1.exit_code == 0, r1.output
    first = [p.read_text() for p in sorted(run.out.glob("path_*.csv"))]
    assert len(first) == 3
    run("simulate", "--stop", "tau_plus:0.3", config=CP_INI)
    assert [p.read_text() for p in sorted(run.out.glob("path_*.csv"))] == first


def test_simulate_field(run):
    r = run("simulate", "--stop", "tau_c:0.5", "--emit", "field", "--levels", "-1:1:0.4", config=CP_INI)
    assert r.exit_code == 0, r.output
    txt = (run.out / "field.csv").read_text()
    assert "# eps=" in txt and "# dt=0.001" in txt and "level,local_time" in txt
    # windows of half-width eps must not overlap
    r = run("simulate", "--stop", "tau_c:0.5", "--emit", "field", "--levels", "-1:1:0.2", config=CP_INI)
    assert r.exit_code == 2


def test_simulate_zero_paths_and_bad_stop(run):
    r = run("simulate", "--n-paths", "0", config=CP_INI)
    assert r.exit_code == 0 and "summary only" in r.output
    assert run("simulate", "--stop", "sometime:1").exit_code == 2


def test_verify_list_and_unknown(run):
    r = run("verify", "--list")
    assert "rk2_brownian" in r.output and "marked_construction" in r.output
    assert run("verify", "--id", "nope").exit_code == 2
    assert run("verify").exit_code == 2
    assert run("verify", "--id", "rk2_brownian", "--set", "bogus=1").exit_code == 2


def test_verify_writes_reports(run):
    r = run("verify", "--id", "exponential_local_time", "--n-paths", "40", "--dt", "1e-3")
    assert r.exit_code in (0, 1), r.output
    rep = json.loads((run.out / "exponential_local_time.json").read_text())
    summ = json.loads((run.out / "summary.json").read_text())
    assert rep["config_hash"] == summ["reports"]["exponential_local_time"]["config_hash"]
    assert rep["n_paths"] == 40 and summ["all_pass"] == (r.exit_code == 0)


def test_verify_identity_section_and_env(run, tmp_path, monkeypatch):
    ini = "[verify]\nids = rk2_brownian\n[identity.rk2_brownian]\nys = 1\n[sim]\nn_paths = 20\ndt = 1e-3\n"
    alt = tmp_path / "alt"
    monkeypatch.setenv("LEVY_RK_OUT", str(alt))
    p = tmp_path / "e.ini"
    p.write_text(ini)
    r = CliRunner().invoke(main, ["--config", str(p), "verify"])
    assert r.exit_code in (0, 1), r.output
    d = json.loads((alt / "rk2_brownian.json").read_text())
    assert d["params"]["ys"] == [1]


def test_hash_ignores_workers():
    a = RunConfig.load(None, {"workers": 1})
    b = RunConfig.load(None, {"workers": 3})
    c = RunConfig.load(None, {"seed": 2})
    assert a.hash() == b.hash() != c.hash()


def test_plot_scripts(run):
    run("verify", "--id", "rk2_brownian", "--n-paths", "20", "--dt", "1e-3")
    r = run("plot", str(run.out))
    assert r.exit_code == 0, r.output
    scripts = list(run.out.glob("*.py"))
    assert scripts and "matplotlib" in scripts[0].read_text()
    assert run("plot", str(run.out / "empty")).exit_code == 2
