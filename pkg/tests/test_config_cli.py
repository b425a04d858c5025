import json

import numpy as np
import pytest

from stochflow import binio
from stochflow.cli import main as cli_main
from stochflow.config import (
    PRESETS,
    build_model,
    parse_config,
    preset_config,
    serialize_config,
)
from stochflow.errors import ConfigError, StageError
from stochflow.pipeline import run_pipeline, verify_suite

MINI = """
[model]
operator.kind = explicit
operator.eigenvalues = 1.0, 4.0
nonlinearity.kind = zero
noise.coupling = additive
noise.sigma = 0.3, 0.15
stepper.h = 0.01

[run]
seed = 5
path.t_back = 36.0
path.t_fwd = 36.0
simulate.duration = 1.0
stationary.method = contraction
stationary.window = 2.0
stationary.tol = 1e-09
stationary.tail_tol = 1e-07
stationary.residual_horizon = 2.0
spectrum.horizon = 6.0
spectrum.reorth_every = 0.1
spectrum.split_back = 4.0
spectrum.split_fwd = 4.0

[pipeline]
stages = simulate, stationary, spectrum

[output]
directory = artifacts
"""


def test_config_round_trip():
    cfg = parse_config(MINI)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    # and serialization is stable
    assert serialize_config(again) == serialize_config(cfg)


def test_config_rejects_unknowns_and_bad_values():
    with pytest.raises(ConfigError):
        parse_config("[nosuch]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[model]\noperator.bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[run]\nstationary.tol = -1e-3\n")
    with pytest.raises(ConfigError):
        parse_config("[model]\nstepper.h = abc\n")
    with pytest.raises(ConfigError):
        parse_config("[model]\nnonlinearity.kind = woozle\n")


def test_config_stage_dependencies():
    with pytest.raises(ConfigError):
        parse_config("[pipeline]\nstages = spectrum\n")
    with pytest.raises(ConfigError):
        parse_config("[pipeline]\nstages = manifolds, stationary\n")
    with pytest.raises(ConfigError):
        parse_config("[pipeline]\nstages = stationary, manifolds\n")


def test_config_path_grid_mismatch_rejected_before_compute():
    text = MINI + "\n"
    cfg_text = text.replace("path.t_back = 36.0",
                            "path.t_back = 36.0\npath.h = 0.02")
    with pytest.raises(ConfigError):
        parse_config(cfg_text)


def test_presets_parse_and_build():
    for name in PRESETS:
        cfg = preset_config(name)
        model = build_model(cfg)
        assert model.dim >= 2
    with pytest.raises(ConfigError):
        preset_config("nope")


def test_csv_floats_roundtrip_exactly(tmp_path):
    xs = np.array([1.0 / 3.0, np.pi, 1e-17, -2.5e300])
    f = tmp_path / "x.csv"
    binio.write_csv(f, ["a", "b", "c", "d"], [xs])
    line = f.read_text().splitlines()[1]
    back = np.array([float(v) for v in line.split(",")])
    np.testing.assert_array_equal(back, xs)


def test_snapshot_roundtrip(tmp_path):
    arr = np.random.default_rng(0).standard_normal((7, 3))
    f = tmp_path / "snap.bin"
    binio.save_snapshot(f, arr)
    np.testing.assert_array_equal(binio.load_snapshot(f), arr)


def test_pipeline_artifacts_and_manifest(tmp_path):
    cfg = parse_config(MINI)
    out = run_pipeline(cfg, out_dir=tmp_path / "a")
    manifest = json.loads((out / "manifest.json").read_text())
    paths = [a["path"] for a in manifest["artifacts"]]
    assert "config.txt" in paths
    assert "simulate/trajectory.csv" in paths
    assert "stationary/stationary.bin" in paths
    assert "spectrum/report.json" in paths
    assert paths == sorted(paths)
    # deterministic rerun
    out2 = run_pipeline(cfg, out_dir=tmp_path / "b")
    manifest2 = json.loads((out2 / "manifest.json").read_text())
    assert manifest["artifacts"] == manifest2["artifacts"]
    # seed override changes content hashes but not the artifact list
    out3 = run_pipeline(cfg, out_dir=tmp_path / "c", seed=6)
    manifest3 = json.loads((out3 / "manifest.json").read_text())
    assert [a["path"] for a in manifest3["artifacts"]] == paths
    assert manifest3["artifacts"] != manifest["artifacts"]


def test_pipeline_lock_file(tmp_path):
    cfg = parse_config(MINI)
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").touch()
    with pytest.raises(StageError):
        run_pipeline(cfg, out_dir=out)
    (out / ".lock").unlink()


def test_pipeline_partial_failure_keeps_prior_artifacts(tmp_path):
    bad = MINI.replace("spectrum.horizon = 6.0", "spectrum.horizon = 6.05")
    cfg = parse_config(bad)
    with pytest.raises(StageError):
        run_pipeline(cfg, out_dir=tmp_path / "p")
    assert (tmp_path / "p" / "simulate" / "trajectory.csv").exists()
    assert (tmp_path / "p" / "stationary" / "report.json").exists()
    assert not (tmp_path / "p" / "manifest.json").exists()
    assert not (tmp_path / "p" / ".lock").exists()


def test_verify_suite_passes_and_breaks(tmp_path):
    cfg = parse_config(MINI)
    ok, rows = verify_suite(cfg)
    assert ok
    names = [r[0] for r in rows]
    assert {"shift-group-law", "cocycle-state", "cocycle-jacobian",
            "jacobian-vs-fd", "contraction-ratio", "qr-sum-rule"} <= set(names)
    broken = cfg.with_overrides(**{"verify:sumrule.tol": 1e-30})
    ok2, rows2 = verify_suite(broken)
    assert not ok2
    bad = [r for r in rows2 if r[0] == "qr-sum-rule"][0]
    assert bad[1] > bad[2] > 0  # measured value reported against threshold


def test_cli_run_verify_inspect(tmp_path, capsys):
    cfgfile = tmp_path / "mini.cfg"
    cfgfile.write_text(MINI)
    out = tmp_path / "art"
    assert cli_main(["run", "--config", str(cfgfile), "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli_main(["inspect", str(out / "spectrum" / "report.json")]) == 0
    assert "exponents" in capsys.readouterr().out
    assert cli_main(["inspect", str(out / "simulate" / "trajectory.csv"),
                     "--rows", "2"]) == 0
    capsys.readouterr()
    assert cli_main(["inspect", str(out / "stationary" / "stationary.bin")]) == 0
    assert "window points" in capsys.readouterr().out
    assert cli_main(["presets"]) == 0
    assert "ou-linear" in capsys.readouterr().out
    assert cli_main(["presets", "--show", "saddle-oracle"]) == 0
    assert "saddle-quadratic" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nstepper.h = -1\n")
    assert cli_main(["run", "--config", str(bad)]) == 2
    capsys.readouterr()
    assert cli_main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()
    # not-hyperbolic abort
    nh = tmp_path / "nh.cfg"
    nh.write_text("""
[model]
operator.kind = explicit
operator.eigenvalues = 0.0005, 1.0
nonlinearity.kind = zero
noise.coupling = none
stepper.h = 0.001

[run]
seed = 3
stationary.method = origin
stationary.window = 10.0
spectrum.horizon = 4.0
spectrum.reorth_every = 0.1

[pipeline]
stages = stationary, spectrum, manifolds
""")
    assert cli_main(["run", "--config", str(nh), "--out",
                     str(tmp_path / "nh_out")]) == 4
    capsys.readouterr()
    # verify failure propagates a nonzero code
    brk = tmp_path / "brk.cfg"
    brk.write_text(MINI + "\n[verify]\nsumrule.tol = 1e-30\n")
    assert cli_main(["verify", "--config", str(brk)]) == 3
    outp = capsys.readouterr().out
    assert "FAIL" in outp


def test_cli_threads_flag(tmp_path):
    cfgfile = tmp_path / "mini.cfg"
    cfgfile.write_text(MINI)
    assert cli_main(["verify", "--config", str(cfgfile), "--threads", "2"]) == 0
