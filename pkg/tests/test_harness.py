import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from taa_onet.errors import ConfigError
from taa_onet.harness import CASES, DEFAULTS, RunConfig, analytic_shapes, get_case, plan_case, render_table, sort_rows
from taa_onet.harness.cases import random_profile_seed, severity_levels
from taa_onet.harness.cli import main
from taa_onet.harness.pipeline import config_digest
from taa_onet.harness.report import collect_rows, read_report, write_report
from taa_onet.insult import InsultKind

TINY = {
    "z_od_mm": [3.0], "z_apex_mm": [7.5], "theta_od_deg": [100.0], "theta_apex_deg": [0.0, 180.0],
    "q": 4, "fnn_depth": 2, "fnn_width": 5, "trunk_depth": 2, "trunk_width": 5, "cnn_filters": [2, 3],
    "adam_iters": 5, "lbfgs_iters": 2, "lr": 0.01, "trials": 2,
}


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


# -- configuration ------------------------------------------------------------


def test_defaults_cover_material_keys():
    cfg = RunConfig()
    assert cfg["mat_phi_e"] == cfg.material().phi_e
    assert cfg.grid().shape == (21, 20)
    assert cfg.backend is None


@pytest.mark.parametrize("key,value", [("no_such_key", 1), ("seed", "zero"), ("lr", True), ("cnn_filters", 8)])
def test_bad_keys_and_types_rejected(key, value):
    with pytest.raises(ConfigError):
        RunConfig({key: value})


def test_int_accepted_for_float():
    cfg = RunConfig({"lr": 1})
    assert cfg["lr"] == 1.0 and isinstance(cfg["lr"], float)


def test_yaml_load_dump_roundtrip(tmp_path, tiny_yaml):
    cfg = RunConfig.load(tiny_yaml, {"seed": 7})
    assert cfg["q"] == 4 and cfg["seed"] == 7
    cfg.dump(tmp_path / "out.yaml")
    again = RunConfig.load(tmp_path / "out.yaml")
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()


@pytest.mark.parametrize("text", ["[1, 2]", "a: [unclosed", "severity_levels: 0", "test_frac: 1.5",
                                  "random_severity_mechano: [0.3, 0.1]", "fnn_depth: 0", "trials: 0"])
def test_invalid_files_rejected(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.yaml")


def test_digest_ignores_placement_keys():
    a = RunConfig({"out_dir": "x", "jobs": 4})
    b = RunConfig({"out_dir": "y"})
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(RunConfig({"seed": 1}))
    assert a.digest() != b.digest()


def test_views_follow_keys():
    cfg = RunConfig({"location_encoding": "distance", "cnn_filters": [4], "adam_iters": 3, "seed": 2})
    assert cfg.arch().location_dim == 1 and cfg.arch().cnn_filters == (4,)
    assert cfg.train_config().adam_iters == 3 and cfg.train_config().seed == 2


# -- case enumeration ---------------------------------------------------------


def test_analytic_sweep_size():
    shapes = analytic_shapes(RunConfig())
    # 2 widths x 3 apexes + restricted width at one apex, times 4 x 4 angles + one full ring
    assert len(shapes) == 7 * 17
    rings = [s for s in shapes if s.angle_od >= 2 * np.pi - 1e-12]
    assert len(rings) == 7 and all(s.angle_apex == 0.0 for s in rings)
    assert sum(1 for s in shapes if s.z_od == 4.0) == 17


@pytest.mark.parametrize("case_id,expected", [(1, 595), (2, 595), (3, 1190), (4, 1190), (5, 2380)])
def test_analytic_case_sizes(case_id, expected):
    plan = plan_case(CASES[case_id], RunConfig())
    assert len(plan) == expected
    assert len({s.id for s in plan}) == expected


def test_random_case_size_and_seeds():
    cfg = RunConfig()
    plan = plan_case(CASES[6], cfg, seed=3)
    assert len(plan) == 100
    kinds = [s.profile.kind for s in plan]
    assert kinds.count(InsultKind.ELASTIC_FIBER) == 50
    sev = sorted({s.profile.severity_max for s in plan if s.profile.kind is InsultKind.MECHANOSENSING})
    np.testing.assert_allclose(sev, np.linspace(0.025, 0.20, 5))
    assert plan[0].profile.seed == random_profile_seed(3, 0)
    again = plan_case(CASES[6], cfg, seed=3)
    assert all(np.array_equal(a.profile.values, b.profile.values) for a, b in zip(plan, again))


def test_severity_levels_evenly_spaced():
    lv = severity_levels(RunConfig(), InsultKind.ELASTIC_FIBER, "normotensive")
    # step (0.595 - 0.0595) / 4 = 0.133875
    np.testing.assert_allclose(lv, [0.0595, 0.193375, 0.32725, 0.461125, 0.595], rtol=1e-12)


def test_case_ids_and_labels():
    plan = plan_case(CASES[5], RunConfig({"z_od_mm": [2.0], "z_apex_mm": [6.0], "theta_od_deg": [20.0],
                                         "theta_apex_deg": [0.0]}))
    assert [s.id for s in plan[:2]] == ["ef-nt-p000-s0", "ef-nt-p000-s1"]
    assert {s.scenario for s in plan} == {"normotensive", "hypertensive"}
    with pytest.raises(ConfigError):
        get_case(7)


# -- report -------------------------------------------------------------------


def row(case, arch, mean, noisy=None):
    return {"case": case, "arch": arch, "N": 535, "N_test": 60, "params": 1000, "err_clean_mean": mean,
            "err_clean_std": 0.001, "err_noisy_mean": noisy, "err_noisy_std": 0.002 if noisy else None}


def test_table_layout_and_order():
    rows = [row(2, "image", 0.05), row(1, "sensor9", 0.1, 0.2), row(1, "sensor25", 0.12345)]
    assert [(r["case"], r["arch"]) for r in sort_rows(rows)] == [(1, "sensor25"), (1, "sensor9"), (2, "image")]
    lines = render_table(rows).splitlines()
    assert lines[0].split() == ["case", "arch", "N", "N_test", "params", "err_clean", "err_noisy"]
    assert set(lines[1]) <= {"-", " "}
    assert "12.345 ± 0.100%" in lines[2] and lines[2].rstrip().endswith("-")
    assert "20.000 ± 0.200%" in lines[3]


def test_empty_table_is_header_only():
    assert len(render_table([]).splitlines()) == 2


def test_report_files_roundtrip(tmp_path):
    rows = [row(1, "image", 0.05)]
    txt, js = write_report(rows, tmp_path)
    assert read_report(js) == rows and txt.read_text() == render_table(rows)


# -- command line -------------------------------------------------------------


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["gen-analytic", "--case", "9", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["gen-analytic", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["gen-analytic", "--case", "6", "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_missing_inputs_exit_4(tmp_path):
    assert main(["train", "--case", "1", "--arch", "image", "--out", str(tmp_path)]) == 4


def test_cli_generate_prints_count(tmp_path, tiny_yaml, capsys):
    assert main(["gen-analytic", "--config", str(tiny_yaml), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "10 profiles" in out and "550" in out
    assert len(list((tmp_path / "case1" / "profiles").glob("*.prof"))) == 10


def test_cli_report_on_empty_root(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("case")
    assert main(["report", "--out", str(tmp_path), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out) == {"rows": []}


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_case_is_bit_reproducible(tmp_path, tiny_yaml, capsys):
    for name in ("a", "b"):
        assert main(["run-case", "--case", "1", "--arch", "image", "--config", str(tiny_yaml),
                     "--seed", "11", "--out", str(tmp_path / name)]) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a.keys() == b.keys()
    assert {k for k in a if k.endswith(".ckpt")} == {"case1/models/image/trial0.ckpt", "case1/models/image/trial1.ckpt"}
    assert [k for k in a if a[k] != b[k]] == []
    out = capsys.readouterr().out
    assert "Case 1" in out and "image" in out


def test_stagewise_cli_matches_run_case(tmp_path, tiny_yaml):
    common = ["--config", str(tiny_yaml), "--seed", "11"]
    one = tmp_path / "one"
    assert main(["run-case", "--case", "1", "--arch", "sensor9", *common, "--out", str(one)]) == 0
    two = tmp_path / "two"
    for cmd in (["gen-analytic"], ["simulate"], ["build-dataset", "--arch", "sensor9"],
                ["evaluate", "--arch", "sensor9"]):
        assert main([*cmd, "--case", "1", *common, "--out", str(two)]) == 0
    for sub in ("data/sensor9", "results", "models/sensor9"):
        cmp = filecmp.dircmp(one / "case1" / sub, two / "case1" / sub)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    # a second simulate reuses every maps file
    assert main(["simulate", "--case", "1", *common, "--out", str(two)]) == 0
    assert main(["report", "--out", str(two)]) == 0
    assert collect_rows(two)[0]["arch"] == "sensor9"


def test_defaults_table_is_complete():
    assert {"adam_iters", "lbfgs_iters", "trials", "noise", "seed"} <= set(DEFAULTS)
