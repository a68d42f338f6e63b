import numpy as np
import pytest

from dqme_nqs.cli import compare_columns, main
from dqme_nqs.config import RunConfig, apply_env, from_dict, load_config
from dqme_nqs.errors import ConfigError
from dqme_nqs.io import CsvSchemaError, read_trajectory_csv, write_svg, write_trajectory_csv
from dqme_nqs.observables import CSV_COLUMNS, ObservableRecord

TINY = """
mode = "both"
[model]
kind = "anderson"
[bath]
temperature = 3.0
poles = 1
[truncation]
max_tier = 1
[rbm]
n_hidden = 2
n_aux = 1
init_max_iter = 40
[integrator]
dt = 0.01
t_end = 0.03
[output]
prefix = "tiny"
svg = true
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


# -- config ------------------------------------------------------------------

def test_defaults_validate_and_round_trip():
    cfg = RunConfig().validate()
    from dqme_nqs.config import tomllib

    again = from_dict(tomllib.loads(cfg.to_toml()))
    assert again == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"rbm": {"n_hiden": 3}})
    with pytest.raises(ConfigError, match="top-level"):
        from_dict({"solver": {}})


@pytest.mark.parametrize("data", [{"rbm": {"n_hidden": 2.5}}, {"bath": {"temperature": "hot"}},
                                  {"truncation": {"parity_filter": 1}}, {"bath": {"temperature": -1.0}},
                                  {"mode": "fast"}, {"integrator": {"t0": 5.0}},
                                  {"model": {"kind": "kondo"}}, {"rbm": {"estimator": "vmc"}}])
def test_schema_violations(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_env_overrides():
    data = apply_env({"rbm": {"n_hidden": 2}}, {"DQN_RBM_N_HIDDEN": "6", "DQN_MODE": "dense",
                                                 "DQN_OUTPUT_PREFIX": "x", "HOME": "/"})
    cfg = from_dict(data)
    assert cfg.rbm.n_hidden == 6 and cfg.mode == "dense" and cfg.output.prefix == "x"
    with pytest.raises(ConfigError):
        apply_env({}, {"DQN_SOLVER_X": "1"})


def test_load_config_file(tiny):
    cfg = load_config(tiny, environ={"DQN_BATH_POLES": "2"})
    assert cfg.bath.poles == 2 and cfg.truncation.max_tier == 1
    assert cfg.integrator.n_steps == 3


# -- csv ---------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    recs = [ObservableRecord(t=0.1 * k, trace=1.0, I_L=0.1 / 3 * k, n=(0.25, 0.5)) for k in range(4)]
    path = write_trajectory_csv(tmp_path / "a.csv", recs, "mode = 'both'\n", {"solver": "dense"})
    cols, comments = read_trajectory_csv(path)
    assert comments[0].startswith("git:") and "solver: dense" in comments
    assert list(cols) == list(CSV_COLUMNS)
    np.testing.assert_array_equal(cols["I_L"], [r.I_L for r in recs])
    assert np.all(np.isnan(cols["S12"]))


@pytest.mark.parametrize("body", ["t,I_L\n0,1\n", "# only comments\n",
                                  ",".join(CSV_COLUMNS) + "\n1,,,,,,,,,\n0,,,,,,,,,\n",
                                  ",".join(CSV_COLUMNS) + "\n0,1\n",
                                  ",".join(CSV_COLUMNS) + "\n0,x,,,,,,,,\n"])
def test_csv_schema_errors(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(CsvSchemaError):
        read_trajectory_csv(path)


def test_svg_writer(tmp_path):
    t = np.linspace(0, 1, 11)
    path = write_svg(tmp_path / "p.svg", {"a": (t, t**2), "b": (t, np.full(11, np.nan))}, title="x")
    text = path.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 1


def test_compare_columns():
    t = np.linspace(0, 1, 5)
    a = {"t": t, "I_L": t, "S12": np.full(5, np.nan), "I_R": 0 * t}
    b = {"t": t, "I_L": 2 * t, "S12": np.full(5, np.nan), "I_R": 0 * t}
    out = compare_columns(a, b, ("I_L", "S12", "I_R"))
    assert out == {"I_L": pytest.approx(0.5), "I_R": 0.0}


# -- command line ------------------------------------------------------------

def test_counts_example(capsys):
    code = main(["counts", "--n-sys", "2", "--n-diss", "6", "--max-tier", "2", "--n-hidden", "8",
                 "--n-aux", "8"])
    out = capsys.readouterr().out
    assert code == 0
    assert "N_RDT(unfiltered) = 352" in out and "N_RDT(filtered)   = 176" in out
    assert "N_para(exact)     = 328" in out and "N_para(estimate)  = 192" in out


def test_counts_failure_exit_code(capsys):
    assert main(["counts", "--n-sys", "1", "--n-diss", "2", "--max-tier", "1"]) == 6
    assert "N_para < N_RDT(unfiltered): no" in capsys.readouterr().out


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[rbm]\nn_hiden = 3\n")
    assert main(["bench-dense", "--config", str(bad)]) == 3
    assert "unknown key" in capsys.readouterr().err
    bad.write_text("[rbm\n")
    assert main(["bench-dense", "--config", str(bad)]) == 3


def test_io_error_exit_code(tmp_path):
    assert main(["compare", str(tmp_path / "missing.csv"), str(tmp_path / "missing.csv")]) == 4
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n")
    assert main(["compare", str(junk), str(junk)]) == 4


def test_solver_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "div.toml"
    cfg.write_text('mode = "dense"\n[integrator]\ndt = 5.0\nt_end = 500.0\n[output]\ndir = "%s"\n' % tmp_path)
    assert main(["bench-dense", "--config", str(cfg)]) == 5
    assert "solver error" in capsys.readouterr().err


def test_env_override_reaches_the_run(tiny, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DQN_OUTPUT_PREFIX", "envrun")
    assert main(["steady", "--config", str(tiny), "--output", str(tmp_path)]) == 0
    assert (tmp_path / "envrun_steady.txt").exists()


def test_run_rbm_artifacts_are_reproducible(tiny, tmp_path, capsys):
    names = ("tiny_dense.csv", "tiny_rbm.csv", "tiny_rbm_diagnostics.csv", "tiny_run_I_R.svg")
    first = {}
    for rerun in range(2):
        assert main(["run-rbm", "--config", str(tiny), "--output", str(tmp_path / "a"), "--seed", "4",
                     "--threads", "1"]) == 0
        for name in names:
            data = (tmp_path / "a" / name).read_bytes()
            assert first.setdefault(name, data) == data
    out = capsys.readouterr().out
    assert "integral_error" in out and "N_para" in out
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "tiny_rbm.csv").write_bytes(first["tiny_rbm.csv"])
    cols, comments = read_trajectory_csv(tmp_path / "a" / "tiny_rbm.csv")
    assert any(c.startswith("config: ") for c in comments)
    assert any(c == "config: seed = 4" for c in comments)
    assert len(cols["t"]) == 4 and np.all(np.isfinite(cols["ds2"]))
    np.load(tmp_path / "a" / "tiny_rbm_checkpoint.npz")
    assert main(["compare", str(tmp_path / "a" / "tiny_rbm.csv"), str(tmp_path / "b" / "tiny_rbm.csv")]) == 0
    table = capsys.readouterr().out
    assert all(float(line.split()[1]) == 0.0 for line in table.splitlines()[1:])


def test_bath_check_and_steady(tiny, tmp_path, capsys):
    assert main(["bath-check", "--config", str(tiny), "--t-max", "5"]) == 0
    out = capsys.readouterr().out
    assert out.count("pade") == 2
    assert main(["steady", "--config", str(tiny), "--output", str(tmp_path), "--epoch", "pre"]) == 0
    text = (tmp_path / "tiny_steady.txt").read_text()
    assert "residual" in text and "I_L" in text and text.startswith("# git:")


def test_counts_from_config(tiny, capsys):
    assert main(["counts", "--config", str(tiny)]) in (0, 6)
    assert "N_RDT(filtered)" in capsys.readouterr().out
