import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from cuspflow.cli import EXIT_COMPUTE, EXIT_CONFIG, EXIT_OK, dumps, main, run
from cuspflow.config import (ConfigError, load_group_file, parse_config, save_group_file,
                             validate_config)
from cuspflow.examples import gamma2, schottky2d
from cuspflow.geometry import maps_close

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.yaml"))
GOLDEN = Path(__file__).parent / "golden"

SMALL_GAMMA2 = """\
name: gamma2-small
seed: 0
system: gamma2
group:
  example: gamma2
coding:
  eta: 0.05
  max_generation: 8
discretization:
  nodes: 600
  explicit: 200
tail:
  epsilon: 0.4
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def result(out, command):
    return json.loads((Path(out) / f"{command}.json").read_text())["result"]


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert validate_config(path) == []


def test_four_configs_shipped():
    assert {p.stem for p in CONFIGS} == {"gauss", "alphabet12", "gamma2", "schottky2d"}


def test_delta_estimate_gauss(tmp_path):
    assert run("delta-estimate", ROOT / "configs" / "gauss.yaml", out=str(tmp_path)) == EXIT_OK
    assert result(tmp_path, "delta-estimate")["delta_estimate"] == pytest.approx(1.0, abs=1e-3)


def test_unknown_key_exit_2(tmp_path):
    cfg = write(tmp_path, "system: gauss\ndiscretisation:\n  nodes: 10\n")
    r = CliRunner().invoke(main, ["delta-estimate", "--config", str(cfg), "--out", str(tmp_path)])
    assert r.exit_code == EXIT_CONFIG
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["error_class"] == "ConfigError"
    assert any("discretisation" in p["path"] and p["line"] == 2 for p in err["problems"])


def test_empty_file_parse_error(tmp_path):
    cfg = write(tmp_path, "")
    problems = validate_config(cfg)
    assert problems and "empty" in problems[0].lower()
    r = CliRunner().invoke(main, ["validate", "--config", str(cfg)])
    assert r.exit_code == EXIT_CONFIG
    bad = write(tmp_path, "coding: [1, 2\n", "bad.yaml")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad.read_text(), bad)
    assert exc.value.problems[0][0] >= 1                       # located


def test_eta_range_names_field(tmp_path):
    cfg = write(tmp_path, "system: gauss\ncoding:\n  eta: 1.5\n")
    problems = validate_config(cfg)
    assert len(problems) == 1 and "coding.eta" in problems[0] and "line 3" in problems[0]


def test_computation_error_exit_3(tmp_path):
    cfg = write(tmp_path, "system: gauss\ndiscretization:\n  nodes: 100\nspectral:\n"
                          "  bracket: [1.5, 2.0]\n")
    assert run("delta-estimate", cfg, out=str(tmp_path)) == EXIT_COMPUTE
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["error_class"] == "BracketError" and err["status"] == EXIT_COMPUTE


def test_determinism_byte_identical(tmp_path):
    cfg = ROOT / "configs" / "alphabet12.yaml"
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("delta-estimate", cfg, out=str(d), seed=3) == EXIT_OK
    assert (a / "delta-estimate.json").read_bytes() == (b / "delta-estimate.json").read_bytes()
    assert not list(a.glob("*.tmp*")) and not list(a.glob(".*"))          # atomic writes


def test_dumps_precision():
    text = dumps({"b": 0.1, "a": [1 / 3, np.float64(2.0), np.int64(4)]})
    assert text.index('"a"') < text.index('"b"')
    assert "0.33333333333333331" in text and json.loads(text)["a"][0] == 1 / 3


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = write(tmp_path, "system: alphabet12\ndiscretization:\n  nodes: 100\n"
                          "spectral:\n  bracket: [0.0, 2.0]\noutput:\n  dir: cfgdir\n")
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CUSPFLOW_OUT_DIR", str(tmp_path / "envdir"))
    assert run("delta-estimate", cfg) == EXIT_OK
    assert (tmp_path / "envdir" / "delta-estimate.json").exists()
    assert run("delta-estimate", cfg, out=str(tmp_path / "flag")) == EXIT_OK
    assert (tmp_path / "flag" / "delta-estimate.json").exists()
    monkeypatch.delenv("CUSPFLOW_OUT_DIR")
    assert run("delta-estimate", cfg) == EXIT_OK
    assert (tmp_path / "cfgdir" / "delta-estimate.json").exists()


def test_code_build_then_tail_report(tmp_path):
    cfg = write(tmp_path, SMALL_GAMMA2)
    out = tmp_path / "out"
    assert run("code-build", cfg, out=str(out)) == EXIT_OK
    build = result(out, "code-build")
    assert build["cell_overlaps"] == 0 and build["slope"] < 0
    before = (out / "coding.json").read_bytes()
    assert run("tail-report", cfg, out=str(out)) == EXIT_OK
    assert (out / "coding.json").read_bytes() == before                  # inputs untouched
    rows = np.loadtxt(out / "tail.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(rows[:, 1]) >= 0)
    golden = np.loadtxt(GOLDEN / "gamma2_small_tail.csv", delimiter=",", skiprows=1)
    assert rows.shape == golden.shape
    assert np.allclose(rows, golden, rtol=1e-12, atol=0)


def test_uni_check_alphabet(tmp_path):
    assert run("uni-check", ROOT / "configs" / "alphabet12.yaml", out=str(tmp_path)) == EXIT_OK
    res = result(tmp_path, "uni-check")
    assert res["certified"] and res["epsilon0"] == pytest.approx(1 / 3, abs=1e-6)


def test_group_file_round_trip(tmp_path):
    for g in (gamma2(), schottky2d()):
        path = tmp_path / f"{g.name}.yaml"
        save_group_file(g, path)
        h = load_group_file(path)
        assert h.dim == g.dim and h.labels == g.labels and len(h.cusps) == len(g.cusps)
        for a, b in zip(g.generators, h.generators):
            assert maps_close(a, b, 0)


def test_help_lists_commands():
    r = CliRunner().invoke(main, ["--help"])
    for name in ("code-build", "delta-estimate", "tail-report", "uni-check", "spectral-scan",
                 "l2-probe", "mix-estimate", "orbit-count", "measure-diag", "validate"):
        assert name in r.output
