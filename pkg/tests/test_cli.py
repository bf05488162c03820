import csv
import hashlib
import json
import math

import pytest
from hypothesis import given, strategies as st

from ugibbs import cli, exterior
from ugibbs.cli import ConfigError, ExperimentConfig, main

SMALL = {"exp_n": 200, "q": 10, "deltas": [0.1, 0.2], "n": 2, "M": 1, "entropy_n": 6,
         "radii": [0.2]}


def write_config(path, **fields):
    lines = []
    for key, val in fields.items():
        lines.append(f"{key} = {json.dumps(val)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def numeric_outputs(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


# ---------------------------------------------------------------- configuration


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.system == "cat2" and cfg.base_point == (0.3, 0.2)


@given(st.floats(0.001, 0.25), st.integers(1, 10), st.floats(0.0, 0.5), st.integers(0, 2 ** 64 - 1))
def test_json_roundtrip_is_bit_exact(eps, p, chi, seed):
    cfg = ExperimentConfig(eps=eps, p=p, chi=chi, chi_prime=chi + 0.4, seed=seed)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.to_json() == cfg.to_json() and back.digest == cfg.digest


def test_toml_loading(tmp_path):
    path = write_config(tmp_path / "c.toml", system="cat2_perturbed:eps=0.1", eps=0.025, radii=[0.1, 0.3])
    cfg = ExperimentConfig.from_toml(path)
    assert cfg.eps == 0.025 and cfg.radii == (0.1, 0.3)


@pytest.mark.parametrize("field,value", [
    ("eps", 0.5), ("p", 0), ("beta", 1.0), ("k", 2), ("base_point", [0.1]),
    ("system", "bogus"), ("radii", [0.7]), ("entropy_points", 10), ("seed", -1),
])
def test_invalid_field_is_named(field, value):
    with pytest.raises(ConfigError, match=f"'{field}'"):
        ExperimentConfig.from_dict({field: value})


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="'colour'"):
        ExperimentConfig.from_dict({"colour": "red"})


def test_invalid_config_exits_2(tmp_path, capsys):
    path = write_config(tmp_path / "bad.toml", eps=2.0)
    assert main(["tree", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "'eps'" in capsys.readouterr().err
    (tmp_path / "broken.toml").write_text("eps = = 1\n")
    assert main(["tree", "--config", str(tmp_path / "broken.toml")]) == 2


def test_usage_errors_exit_2():
    for argv in (["verify", "bogus"], [], ["frobnicate"], ["report"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    with pytest.raises(ConfigError):
        cli.verify("medium")


# ---------------------------------------------------------------- stages


def test_exponents_stage_on_cat(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **{**SMALL, "exp_n": 2000})
    assert main(["exponents", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "exponents.csv") as fh:
        rows = list(csv.DictReader(fh))
    lam = [r for r in rows if r["quantity"] == "lambda_kpn" and r["index"] == "1"]
    assert lam and all(abs(float(r["value"]) - cli.LOG_GOLDEN) <= 1e-3 for r in lam)
    assert f"{cli.LOG_GOLDEN:.4f}"[:6] == "0.9624"
    assert any(r["quantity"] == "kappa_minus" for r in rows)


def test_tree_stage_on_identity(tmp_path):
    cfg = write_config(tmp_path / "c.toml", system="identity2", p=1, n=3)
    out = tmp_path / "o"
    assert main(["tree", "--config", str(cfg), "--out", str(out)]) == 0
    recs = [json.loads(line) for line in (out / "tree.jsonl").read_text().splitlines()]
    assert all(tuple(r["profile"]) == (0, 0) for r in recs)
    levels = {}
    for r in recs:
        levels[r["level"]] = levels.get(r["level"], 0) + len(r["cells"])
    assert levels == {lv: 2 ** lv for lv in range(4)}
    checks = json.loads((out / "tree_checks.json").read_text())
    assert checks["tiling"] and not checks["truncated"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **SMALL)
    for run in ("a", "b"):
        assert main(["all", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / run)]) == 0
    a, b = numeric_outputs(tmp_path / "a"), numeric_outputs(tmp_path / "b")
    assert a == b and {"exponents.csv", "p_n_M.csv", "mu.csv", "entropy.csv"} <= set(a)


def test_seed_changes_entropy_sample(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **SMALL)
    for seed in ("1", "2"):
        assert main(["entropy", "--config", str(cfg), "--seed", seed, "--out", str(tmp_path / seed)]) == 0
    m1 = json.loads((tmp_path / "1" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "2" / "manifest.json").read_text())
    assert m1["config"]["seed"] == 1 and m1["config_sha256"] != m2["config_sha256"]


def test_manifest_lists_every_file(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", **SMALL)
    out = tmp_path / "o"
    assert main(["measure", "--config", str(cfg), "--out", str(out), "--emit-plots"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(man["files"]) == on_disk
    for name, digest in man["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert {"python", "numpy", "ugibbs"} <= set(man["versions"])
    assert man["config_sha256"] == ExperimentConfig.from_dict(man["config"]).digest
    assert math.isfinite(man["wall_time_s"])
    assert any(name.endswith(".dat") for name in on_disk)
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    (out / "mu.csv").write_text("tampered\n")
    assert main(["report", "--out", str(out)]) == 1
    assert "BAD mu.csv" in capsys.readouterr().out


def test_plots_only_on_request(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **SMALL)
    assert main(["exponents", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert not any(p.suffix == ".dat" for p in (tmp_path / "o").iterdir())


def test_measure_stage_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **SMALL)
    out = tmp_path / "o"
    assert main(["measure", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "selection.json").read_text())
    assert summary["selected"] > 0 and summary["invariance_distance"] <= summary["one_over_n"]
    with open(out / "p_n_M.csv") as fh:
        masses = [float(r["mass"]) for r in csv.DictReader(fh)]
    assert all(b >= a for a, b in zip(masses, masses[1:]))
    family = json.loads((out / "family.json").read_text())
    assert family["n"] == 2 and family["atoms"]


def test_empty_selection_is_reported(tmp_path):
    cfg = write_config(tmp_path / "c.toml", **{**SMALL, "chi_prime": 1.5, "chi": 0.5})
    out = tmp_path / "o"
    assert main(["measure", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "selection.json").read_text())["message"] == "no E_n at these parameters"


def test_stage_failure_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", **{**SMALL, "max_nodes": 3})
    assert main(["measure", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "truncated" in capsys.readouterr().err


def test_report_without_manifest(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------- verify


def test_check_lines_are_formatted():
    res = cli.run_check(4, full=False)
    assert res.passed and res.line().startswith("[PASS] C4 ")
    with pytest.raises(KeyError):
        cli.run_check(11)


def test_corrupted_wedge_norm_fails_the_oracle_check(monkeypatch):
    good = exterior.wedge_norm
    monkeypatch.setattr(exterior, "wedge_norm", lambda A, k: good(A, k) * (1 + 1e-6))
    res = cli.run_check(4, full=False)
    assert not res.passed and res.line().startswith("[FAIL] C4 ")


def test_verify_reports_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "CHECKS", ((4, "exterior-algebra oracles", cli.check_exterior),
                                        (99, "always fails", lambda full: (False, "forced"))))
    assert main(["verify", "fast"]) == 1
    out = capsys.readouterr().out
    assert "[PASS] C4 " in out and "[FAIL] C99" in out and "1/2 passed" in out
