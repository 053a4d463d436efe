import json

import numpy as np
import pytest
import yaml

from otoclab import cli, io
from otoclab.analysis import cf_model
from otoclab.correlators import EnsembleResult


def write_cfg(tmp_path, **over):
    cfg = {
        "model": {"n": 2, "j_scale": 1.0, "gamma": 1.0},
        "betas": [0.0],
        "time_grid": {"kind": "linear", "t_min": 0.0, "t_max": 5.0, "points": 10,
                      "include_zero": False},
        "n_realizations": 1,
        "base_seed": 0,
        "observables": ["C"],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(over)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_ensemble_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 3, 7)
    res = EnsembleResult(t, rng.normal(size=7) + 1j * rng.normal(size=7), rng.random(7), 5, "F2",
                         1.5, 12, {"n": 4})
    path = io.write_ensemble(res, tmp_path / io.ensemble_filename("F2", 1.5))
    assert path.name == "F2_beta1.5.csv"
    assert path.read_text().splitlines()[0] == "time,mean_re,mean_im,stderr"
    back = io.read_ensemble(path)
    assert np.array_equal(back.times, res.times)
    assert np.array_equal(back.mean, res.mean)
    assert np.array_equal(back.stderr, res.stderr)
    assert (back.kind, back.beta, back.base_seed, back.n_realizations) == ("F2", 1.5, 12, 5)
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["seeds"] == [12, 16] and meta["params"] == {"n": 4}


def test_read_ensemble_rejects_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_ensemble(p)


def test_minimal_run_writes_csv_and_manifest(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["run", str(cfg), "--quiet", "--threads", "1"]) == 0
    out = tmp_path / "out"
    rows = (out / "C_beta0.csv").read_text().splitlines()
    assert rows[0] == "time,mean_re,mean_im,stderr" and len(rows) == 11
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 0]
    assert manifest["outputs"] == ["C_beta0.csv"]
    assert manifest["config_sha256"] == cli.config_hash(manifest["config"])
    assert {"numpy", "scipy", "python", "otoclab"} <= set(manifest["versions"])
    assert manifest["units"]["time"] == "1/J"


def test_observable_expansion_and_protocol(tmp_path):
    cfg = write_cfg(tmp_path, betas=[1.0], observables=["R", "F", "F2", "C2", "protocol"])
    assert cli.main(["run", str(cfg), "--quiet", "--threads", "1"]) == 0
    out = tmp_path / "out"
    names = {p.name for p in out.glob("*.csv")}
    assert names == {f"{k}_beta1.csv" for k in
                     ("R", "F", "F2", "F2_normalized", "C2", "C2_normalized", "F2_protocol")}
    direct = io.read_ensemble(out / "F2_beta1.csv").mean
    proto = io.read_ensemble(out / "F2_protocol_beta1.csv").mean
    assert np.allclose(direct, proto, atol=1e-10)


@pytest.mark.parametrize("over, field", [
    ({"model": {"n": 1}}, "model.n"),
    ({"model": {"n": 30}}, "model.n"),
    ({"betas": [-1.0]}, "betas[0]"),
    ({"betas": [1.0, 1.0]}, "betas"),
    ({"time_grid": {"kind": "log", "t_min": 0.0}}, "time_grid.t_min"),
    ({"observables": ["Q"]}, "observables[0]"),
    ({"observables": ["protocol"], "model": {"n": 6}}, "observables"),
    ({"probes": {"w_site": 1, "v_site": 1}}, "probes"),
    ({"probes": {"w_site": 3}}, "probes.w_site"),
    ({"fit": {"enabled": True}}, "fit.enabled"),
    ({"n_realizations": 0}, "n_realizations"),
    ({"colour": "blue"}, "colour"),
    ({"model": {"rydberg": {"positions": [0.0, 0.0], "c6_eff": 1.0, "blockade_radius": 1.0}}},
     "model.rydberg.positions"),
])
def test_validate_and_run_reject_the_same_configs(tmp_path, capsys, over, field):
    cfg = write_cfg(tmp_path, **over)
    assert cli.main(["validate", str(cfg)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"config error: {field}" in err
    assert cli.main(["run", str(cfg), "--quiet"]) == cli.EXIT_CONFIG
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_missing_config_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.yaml"), "--quiet"]) == cli.EXIT_CONFIG
    assert cli.main(["validate", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG


def test_manifest_replay_reproduces_outputs(tmp_path):
    cfg = write_cfg(tmp_path, model={"n": 3, "gamma": 1.2}, betas=[0.5, 2.0],
                    n_realizations=3, observables=["R", "C2"])
    assert cli.main(["run", str(cfg), "--quiet", "--threads", "2"]) == 0
    out = tmp_path / "out"
    replay = tmp_path / "replay"
    assert cli.main(["run", str(out / "manifest.json"), "--quiet", "--output-dir", str(replay)]) == 0
    for csv in out.glob("*.csv"):
        assert (replay / csv.name).read_bytes() == csv.read_bytes()
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((replay / "manifest.json").read_text())
    assert a["config"]["base_seed"] == b["config"]["base_seed"]


def test_seed_override_changes_the_ensemble(tmp_path):
    cfg = write_cfg(tmp_path, model={"n": 3}, betas=[1.0], n_realizations=2)
    cli.main(["run", str(cfg), "--quiet", "--output-dir", str(tmp_path / "a")])
    cli.main(["run", str(cfg), "--quiet", "--output-dir", str(tmp_path / "b"), "--seed", "7"])
    assert (tmp_path / "a" / "C_beta1.csv").read_bytes() != (tmp_path / "b" / "C_beta1.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seeds"] == [7, 8]


def test_realization_failure_writes_failure_record(tmp_path, monkeypatch):
    from otoclab import correlators

    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(correlators, "diagonalize", boom)
    cfg = write_cfg(tmp_path, base_seed=5)
    assert cli.main(["run", str(cfg), "--quiet"]) == cli.EXIT_REALIZATION
    failure = json.loads((tmp_path / "out" / "failure.json").read_text())
    assert failure["failed_seed"] == 5


def _synthetic_dir(tmp_path):
    t = np.concatenate([[0.0], np.geomspace(0.05, 100, 120)])
    for b, lam in ((1.0, 1.2), (2.0, 0.9)):
        c = EnsembleResult(t, cf_model(t, lam, 200.0, 0.6).astype(complex), np.zeros_like(t), 10,
                           "C", b, 0, {"n": 8})
        r = EnsembleResult(t, np.exp(-t).astype(complex), np.zeros_like(t), 10, "R", b, 0,
                           {"n": 8})
        io.write_ensemble(c, tmp_path / io.ensemble_filename("C", b))
        io.write_ensemble(r, tmp_path / io.ensemble_filename("R", b))
    return tmp_path


def test_fit_and_report_subcommands(tmp_path, capsys):
    d = _synthetic_dir(tmp_path)
    assert cli.main(["fit", str(d / "C_beta1.csv"), str(d / "C_beta2.csv"), "--quiet"]) == 0
    fit = io.read_fit(d / "fit.json")
    assert fit.lambdas[1.0] == pytest.approx(1.2, rel=1e-6)
    assert (d / "bound.csv").read_text().startswith("T,lambda,bound\n")
    assert cli.main(["report", str(d / "fit.json")]) == 0
    assert "lambda" in capsys.readouterr().err
    assert cli.main(["fit", str(d / "C_beta1.csv"), "--quiet", "--windows", "1=2:8",
                     "--output-dir", str(tmp_path / "w")]) == 0
    assert io.read_fit(tmp_path / "w" / "fit.json").windows[1.0] == (2.0, 8.0)


def test_fit_subcommand_errors(tmp_path):
    d = _synthetic_dir(tmp_path)
    assert cli.main(["fit", str(d / "R_beta1.csv"), "--quiet"]) == cli.EXIT_CONFIG
    assert cli.main(["fit", str(d / "C_beta1.csv"), "--quiet", "--windows", "1=0:0.06"]) == cli.EXIT_FIT


def test_run_with_fit_writes_bound_table(tmp_path):
    cfg = write_cfg(tmp_path, model={"n": 4, "gamma": 1.35}, betas=[1.0, 2.0], n_realizations=3,
                    time_grid={"kind": "log", "t_min": 0.05, "t_max": 60.0, "points": 60},
                    observables=["C"], fit={"enabled": True})
    status = cli.main(["run", str(cfg), "--quiet", "--threads", "1"])
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert "R_beta1.csv" in manifest["outputs"]  # added for the default windows
    if status == 0:
        assert "fit.json" in manifest["outputs"]
    else:
        assert status == cli.EXIT_FIT and manifest["fit_error"]


def test_shipped_configs_validate():
    from pathlib import Path

    for path in sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")):
        assert cli.main(["validate", str(path), "--quiet"]) == 0, path
