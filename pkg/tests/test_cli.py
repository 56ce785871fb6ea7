import json

import pytest

from glfield import cli
from glfield import config as C
from glfield.artifacts import read_manifest
from glfield.errors import ConfigError, IntegrityError

G_CFG = {"sizes": [8, 16, 32], "sampler": {"n_samples": 400}, "stats": {"n_boot": 50}}


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("GLFIELD_OUTPUT_DIR", str(tmp_path / "out"))
    monkeypatch.delenv("GLFIELD_THREADS", raising=False)
    return tmp_path / "out"


def write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def only_run(out, prefix):
    runs = sorted(d for d in out.iterdir() if d.name.startswith(prefix))
    assert len(runs) == 1
    return runs[0]


def test_malformed_json_exit_2_with_position(tmp_path, out, capsys):
    assert cli.main(["sample", "--config", write(tmp_path, '{"N": 8,\n  "seed": }')]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "column" in err


def test_unknown_key_exit_2(tmp_path, out, capsys):
    assert cli.main(["sample", "--config", write(tmp_path, {"N": 8, "nsamples": 3})]) == 2
    assert "nsamples" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path, out):
    assert cli.main(["sample", "--config", str(tmp_path / "absent.json")]) == 2


def test_experiment_mismatch_exit_2(tmp_path, out):
    assert cli.main(["tail", "--config", write(tmp_path, {"experiment": "sample", "N": 8})]) == 2


def test_parameter_error_exit_2(tmp_path, out):
    cfg = {"N": 8, "potential": {"name": "dipole_gas", "params": {"a": 1.5}}}
    assert cli.main(["sample", "--config", write(tmp_path, cfg)]) == 2


def test_same_config_same_hashes(tmp_path, out):
    path = write(tmp_path, G_CFG)
    assert cli.main(["estimate-g", "--config", path]) == 0
    run = only_run(out, "estimate-g-")
    first = read_manifest(run)
    assert cli.main(["estimate-g", "--config", path, "--threads", "2"]) == 0
    second = read_manifest(only_run(out, "estimate-g-"))
    assert first["artifacts"] == second["artifacts"]
    names = {a["path"] for a in first["artifacts"]}
    assert {"config.resolved.json", "report.json", "report.csv"} <= names


def test_resolved_config_is_complete(tmp_path, out):
    assert cli.main(["estimate-g", "--config", write(tmp_path, G_CFG)]) == 0
    resolved = json.loads((only_run(out, "estimate-g-") / "config.resolved.json").read_text())
    assert resolved["g"] == "oracle" and resolved["exact"] is True
    assert resolved["sampler"]["n_samples"] == 400 and resolved["schedule"]["eps"] == 0.1
    # rerunning from the resolved config lands in the same directory
    addr = C.address(C.resolve(resolved, "estimate-g", env={}))
    assert only_run(out, "estimate-g-").name == f"estimate-g-{addr[:16]}"


def test_corrupted_artifact_names_file(tmp_path, out, capsys):
    assert cli.main(["estimate-g", "--config", write(tmp_path, G_CFG)]) == 0
    run = only_run(out, "estimate-g-")
    with open(run / "report.csv", "a") as fh:
        fh.write("tampered\n")
    with pytest.raises(IntegrityError, match="report.csv"):
        read_manifest(run)
    capsys.readouterr()
    assert cli.main(["report", str(run / "manifest.json")]) == 5
    assert "report.csv" in capsys.readouterr().err


def test_report_single_estimate_g_row(tmp_path, out, capsys):
    assert cli.main(["estimate-g", "--config", write(tmp_path, G_CFG)]) == 0
    man = only_run(out, "estimate-g-") / "manifest.json"
    capsys.readouterr()
    assert cli.main(["report", str(man)]) == 0
    rep = only_run(out, "report-")
    lines = (rep / "summary.txt").read_text().strip().splitlines()
    assert len(lines) == 2 and "g_hat" in lines[1]
    data = json.loads((rep / "report.json").read_text())
    assert data["n_rows"] == 1
    assert read_manifest(rep)["inputs"][0]["role"] == "manifest"


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("GLFIELD_OUTPUT_DIR", str(tmp_path / "envout"))
    monkeypatch.setenv("GLFIELD_THREADS", "3")
    cfg = C.resolve({"N": 8, "output_dir": str(tmp_path / "fileout"), "threads": 1}, "sample")
    assert cfg["output_dir"] == str(tmp_path / "envout") and cfg["threads"] == 3
    cfg = C.resolve({"N": 8}, "sample", threads=2)
    assert cfg["threads"] == 2
    monkeypatch.setenv("GLFIELD_THREADS", "many")
    with pytest.raises(ConfigError):
        C.resolve({"N": 8}, "sample")


def test_threads_do_not_change_address():
    a = C.resolve({"N": 8}, "sample", threads=1, env={})
    b = C.resolve({"N": 8}, "sample", threads=4, env={}, check=True)
    assert C.address(a) == C.address(b)
    assert C.address(a) != C.address(C.resolve({"N": 8}, "sample", seed=1, env={}))


def test_check_failure_exit_4(tmp_path, out):
    cfg = {"sizes": [16, 32, 64], "sampler": {"n_samples": 200}, "stats": {"n_boot": 50, "rel_tol": 1e-9}}
    path = write(tmp_path, cfg)
    assert cli.main(["max-scaling", "--config", path]) == 0
    assert cli.main(["max-scaling", "--config", path, "--check"]) == 4


def test_sample_saves_ensemble(tmp_path, out):
    cfg = {"N": 6, "potential": {"name": "dipole_gas", "params": {"a": 0.5}},
           "sampler": {"n_samples": 120, "sweeps_burnin": 20}}
    assert cli.main(["sample", "--config", write(tmp_path, cfg)]) == 0
    run = only_run(out, "sample-")
    names = {a["path"] for a in read_manifest(run)["artifacts"]}
    assert {"ensembles/N6.json", "ensembles/N6.f64"} <= names
    # the saved ensemble feeds a later analysis and is recorded as an input
    cfg2 = {"N": 6, "potential": {"name": "dipole_gas", "params": {"a": 0.5}}, "g": 0.16,
            "ensemble": str(run / "ensembles" / "N6.json"), "stats": {"n_boot": 50}}
    assert cli.main(["tail", "--config", write(tmp_path, cfg2, "t.json")]) == 0
    inputs = read_manifest(only_run(out, "tail-"))["inputs"]
    assert [i["role"] for i in inputs] == ["ensemble header", "ensemble payload"]


def test_exact_with_dipole_rejected():
    with pytest.raises(ConfigError):
        C.resolve({"N": 8, "exact": True, "potential": {"name": "dipole_gas", "params": {"a": 0.5}}}, "sample",
                  env={})


def test_report_requires_manifests(tmp_path, out):
    assert cli.main(["report"]) == 2
