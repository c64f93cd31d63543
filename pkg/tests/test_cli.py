import csv
import json
import subprocess
import sys

import pytest

from certdg.cli import main

SMALL = {
    "seed": 0,
    "task": {"n_per_domain": 60, "source_angles": [0, 15], "unseen_angles": [45]},
    "model": {"hidden": [8], "rep_dim": 2},
    "train": {"method": "wm", "robust": False, "epochs": 6, "batch_size": 32},
    "certify": {"refine_gamma": True},
    "radii": [0, 0.25, 0.5, 1.0, 2.0],
    "evaluate": {"corruptions": ["gauss_noise"], "pgd_eps": [0.25], "pgd_steps": 5},
}


def write_cfg(path, **over):
    cfg = json.loads(json.dumps(SMALL))
    for key, val in over.items():
        if isinstance(val, dict):
            cfg.setdefault(key, {}).update(val)
        else:
            cfg[key] = val
    path.write_text(json.dumps(cfg))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root / "cfg.json")
    out = root / "out"
    for cmd in ("gen-data", "train", "certify", "evaluate", "attack"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_gen_data_two_angles(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", task={"source_angles": [0], "unseen_angles": [30]})
    for sub in ("a", "b"):
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / sub)]) == 0
    files = sorted(p.name for p in (tmp_path / "a" / "data").glob("*.csv"))
    assert files == ["rot0.csv", "rot30.csv"]
    for name in files + ["manifest.json"]:
        assert (tmp_path / "a" / "data" / name).read_bytes() == (tmp_path / "b" / "data" / name).read_bytes()


def test_bad_schema_names_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", task={"bogus": 1})
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
    cfg = write_cfg(tmp_path / "d.json", train={"epochs": "ten"})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "train" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main(["gen-data", "--config", str(tmp_path / "missing.json")]) != 0


def test_train_erm_runs(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", train={"method": "erm"})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 0
    log = rows(tmp_path / "train_log.csv")
    assert len(log) == SMALL["train"]["epochs"]
    assert (tmp_path / "model.json").exists()


def test_drdg_f0_log_equals_vanilla(tmp_path):
    v = write_cfg(tmp_path / "v.json")
    r = write_cfg(tmp_path / "r.json", train={"robust": True, "F": 0.0})
    assert main(["train", "--config", v, "--out", str(tmp_path / "v")]) == 0
    assert main(["train", "--config", r, "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "v" / "train_log.csv").read_bytes() == (tmp_path / "r" / "train_log.csv").read_bytes()


def test_resume_reproduces_continuation(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", train={"robust": True})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    b = tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(b), "--until-epoch", "3"]) == 0
    assert main(["train", "--config", cfg, "--out", str(b), "--resume", str(b / "model.json")]) == 0
    for name in ("model.json", "train_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (b / name).read_bytes()


def test_certify_outputs(run):
    _, out = run
    sweep = rows(out / "sweep.csv")
    fams = {r["family"] for r in sweep}
    assert fams == {"cross_entropy", "modified_hinge", "zero_one"}
    certs = json.loads((out / "certificates.json").read_text())
    for fam in fams:
        col = [r for r in sweep if r["family"] == fam]
        assert float(col[0]["rho_raw"]) == 0.0
        emp = [c for c in certs["certificates"] if c["loss_family"] == fam][0]["empirical_loss"]
        assert float(col[0]["worst_case_loss"]) == pytest.approx(emp, abs=1e-12)
    zo = [float(r["worst_case_loss"]) for r in sweep if r["family"] == "zero_one"]
    assert all(b >= a for a, b in zip(zo[:-1], zo[1:]))


def test_missing_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path / "c.json")
    for cmd in ("certify", "evaluate", "attack"):
        assert main([cmd, "--config", cfg, "--out", str(tmp_path), "--checkpoint",
                     str(tmp_path / "nope.json")]) == 1


def test_evaluate_rows(run):
    _, out = run
    ev = rows(out / "eval.csv")
    by = {r["domain"]: r for r in ev}
    assert float(by["source"]["rho_normalized"]) == 0.0
    assert float(by["source"]["rho_raw"]) == 0.0
    for name in ("rot0", "rot15"):
        assert by[name]["kind"] == "source_domain" and float(by[name]["rho_raw"]) >= 0.0
    adv = by["P_S_adv"]
    assert float(adv["rho_normalized"]) == pytest.approx(1.0, abs=1e-9)
    assert float(adv["accuracy"]) == 0.0
    noise = [float(by[f"gauss_noise@{s}"]["rho_raw"]) for s in range(1, 6)]
    assert all(b >= a for a, b in zip(noise[:-1], noise[1:]))


def test_attack_rows(run):
    _, out = run
    att = rows(out / "attack.csv")
    assert {r["space"] for r in att} == {"representation", "input"}
    for space in ("representation", "input"):
        col = [r for r in att if r["space"] == space]
        assert float(col[0]["mean_distortion"]) == 0.0
        assert float(col[1]["loss"]) >= float(col[0]["loss"])


def test_report(run, tmp_path):
    cfg, out = run
    assert main(["report", "--config", cfg, "--out", str(out)]) == 0
    svg = (out / "report.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert "Points above the certified cross_entropy curve: 0" in (out / "report.md").read_text()
    # no eval table: curve only
    alone = tmp_path / "alone"
    assert main(["report", "--config", cfg, "--out", str(alone), "--sweep", str(out / "sweep.csv"),
                 "--eval", str(tmp_path / "none.csv")]) == 0
    svg2 = (alone / "report.svg").read_text()
    assert "polyline" in svg2 and "<circle cx" not in svg2.split("certified (zero_one)")[0].split("</text>", 1)[0]
    assert "Measured distributions" not in (alone / "report.md").read_text()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "certdg.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "certify" in proc.stdout
