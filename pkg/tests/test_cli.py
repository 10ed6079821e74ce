import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from dyntomo import cli
from dyntomo.container import load_image_stack, load_sinogram
from dyntomo.errors import ConfigError
from dyntomo.geometry import Continuous


SMALL_CFG = {
    "scene": {"kind": "stempo", "grid_n": 70,
              "mu_pipe": 0.08, "mu_hdpe": 0.10},
    "motion": {"kind": "constant_step", "direction": [1.0, 0.0],
               "step_mm": 0.3},
    "geometry": {"binning": 32},
    "schedule": {"kind": "continuous", "n_proj": 60, "step_deg": 6.0},
    "noise": {"photons_i0": None, "seed": 0},
    "output": {"previews": False},
}


def write_cfg(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    # one tiny dynamic measurement shared by the reconstruct/subsample tests
    root = tmp_path_factory.mktemp("small")
    cfg = write_cfg(root / "cfg.yaml", SMALL_CFG)
    out = root / "sim"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


# -- configuration resolution -------------------------------------------------


def test_resolve_config_fills_defaults():
    cfg = cli.resolve_config({})
    assert cfg["scene"]["kind"] == "stempo"
    assert cfg["scene"]["grid_n"] == 256
    assert cfg["motion"]["kind"] == "static"
    assert cfg["geometry"]["binning"] == 8
    assert cfg["schedule"] == {"kind": "continuous", "n_proj": 360,
                               "step_deg": 1.0}
    assert cfg["noise"] == {"photons_i0": 1e5, "seed": 0}
    assert cfg["solver"]["fbp"] == {"filter": "ramlak", "fov_mask": True}
    assert cfg["solver"]["pdfp"]["max_iters"] == 500
    assert cfg["solver"]["lps"]["max_iters"] == 120
    assert cfg["output"] == {"save_intensities": False, "previews": True}


def test_resolve_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        cli.resolve_config({"scene": {"bogus": 1}})
    with pytest.raises(ConfigError, match="extra"):
        cli.resolve_config({"extra": {}})
    with pytest.raises(ConfigError, match="typo"):
        cli.resolve_config({"solver": {"pdfp": {"typo": 2}}})


def test_resolve_config_validates_values():
    with pytest.raises(ConfigError, match="scene kind"):
        cli.resolve_config({"scene": {"kind": "cube"}})
    with pytest.raises(ConfigError, match="motion kind"):
        cli.resolve_config({"motion": {"kind": "orbit"}})
    with pytest.raises(ConfigError, match="schedule kind"):
        cli.resolve_config({"schedule": {"kind": "random"}})
    with pytest.raises(ConfigError, match="angles_deg"):
        cli.resolve_config({"schedule": {"kind": "custom"}})
    with pytest.raises(ConfigError, match="grid_n"):
        cli.resolve_config({"scene": {"grid_n": 4}})
    with pytest.raises(ConfigError, match="photons_i0"):
        cli.resolve_config({"noise": {"photons_i0": -1.0}})
    with pytest.raises(ConfigError, match="mapping"):
        cli.resolve_config({"scene": [1, 2]})


def test_noise_none_means_noiseless():
    cfg = cli.resolve_config({"noise": {"photons_i0": "none"}})
    assert cfg["noise"]["photons_i0"] is None
    cfg = cli.resolve_config({"noise": {"photons_i0": None}})
    assert cfg["noise"]["photons_i0"] is None


def test_presets_resolve():
    for name in cli.PRESETS:
        cfg = cli.load_preset(name)
        assert cfg["geometry"]["binning"] == 8
        assert cfg["solver"]["n"] == 256
    assert cli.load_preset("stempo-static")["motion"]["kind"] == "static"
    seq = cli.load_preset("stempo-seq8x45")
    assert seq["schedule"] == {"kind": "sequential", "n_proj": 360,
                               "step_deg": 8.0, "rotations": 8}
    with pytest.raises(ConfigError, match="nope"):
        cli.load_preset("nope")


# -- angle grammar ------------------------------------------------------------


def test_angle_spec_list_and_range():
    sched = Continuous(360, 1.0)
    mode, angles = cli.parse_angle_spec("0,45.5,90", sched)
    assert mode == "angles" and angles == [0.0, 45.5, 90.0]
    mode, angles = cli.parse_angle_spec("0:90:270", sched)
    assert mode == "angles" and angles == [0.0, 90.0, 180.0, 270.0]
    mode, rows = cli.parse_angle_spec("every:8", sched)
    assert mode == "rows" and len(rows) == 45 and rows[1] == 8


def test_angle_spec_rejects_malformed():
    sched = Continuous(360, 1.0)
    for bad in ("", "a,b", "0:90", "0:-5:90", "90:5:0", "every:0"):
        with pytest.raises(ConfigError):
            cli.parse_angle_spec(bad, sched)


# -- exit codes ---------------------------------------------------------------


def test_yaml_parse_error_reports_line_and_column(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scene:\n  grid_n: [unclosed\n")
    code = cli.main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_unknown_key_exits_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"scene": {"wheels": 4}})
    assert cli.main(["simulate", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "wheels" in capsys.readouterr().err


def test_missing_config_exits_io(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_IO


def test_missing_sinogram_exits_io(tmp_path):
    assert cli.main(["reconstruct", "fbp",
                     "--sinogram", str(tmp_path / "nope.dtomo1"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_IO


def test_divergence_exits_solver_with_partial_results(small_run, tmp_path,
                                                      capsys):
    out = tmp_path / "div"
    code = cli.main(["reconstruct", "pdfp",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(out), "--n", "64", "--gamma", "1e3",
                     "--max-iters", "20"])
    assert code == cli.EXIT_SOLVER
    assert "diverged" in capsys.readouterr().err
    # partial results are still on disk
    assert (out / "recon.dtomo1").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["stop_reason"] == "diverged"
    assert report["iterations"] < 20


# -- simulate -----------------------------------------------------------------


def test_simulate_outputs(small_run):
    sino = load_sinogram(str(small_run / "sinogram.dtomo1"))
    assert sino.data.shape == (60, 70)
    gt = load_image_stack(str(small_run / "ground_truth.dtomo1"))
    assert gt.frames.shape == (60, 70, 70)
    assert gt.block is not None
    assert gt.block_centers_mm.shape == (60, 2)
    lines = (small_run / "trajectory.csv").read_text().strip().split("\n")
    assert lines[0] == "frame,x_mm,y_mm"
    assert len(lines) == 61
    manifest = json.loads((small_run / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    for name, size in manifest["files"].items():
        assert (small_run / name).stat().st_size == size
    resolved = yaml.safe_load((small_run / "config.resolved.yaml").read_text())
    assert resolved["noise"]["photons_i0"] is None
    assert resolved["scene"]["pixel_size_mm"] is not None


def test_simulate_reruns_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", SMALL_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["simulate", "--config", cfg, "--out", str(out),
                         "--noise", "none"]) == 0
    for name in ("sinogram.dtomo1", "sinogram.dtomo1.bin",
                 "ground_truth.dtomo1.bin", "config.resolved.yaml",
                 "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_noise_flag_overrides(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", SMALL_CFG)
    noisy = tmp_path / "noisy"
    assert cli.main(["simulate", "--config", cfg, "--out", str(noisy),
                     "--noise", "1e4", "--seed", "7"]) == 0
    resolved = yaml.safe_load((noisy / "config.resolved.yaml").read_text())
    assert resolved["noise"] == {"photons_i0": 1e4, "seed": 7}
    clean = load_sinogram(str(tmp_path / "a" / "sinogram.dtomo1")) \
        if (tmp_path / "a").exists() else None
    sino = load_sinogram(str(noisy / "sinogram.dtomo1"))
    assert np.isfinite(sino.data).all()


# -- reconstruct --------------------------------------------------------------


def test_reconstruct_fbp_defaults(small_run, tmp_path):
    out = tmp_path / "fbp"
    assert cli.main(["reconstruct", "fbp",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(out)]) == 0
    rec = load_image_stack(str(out / "recon.dtomo1"))
    assert rec.frames.shape == (1, 70, 70)  # n defaults to detector count
    resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert resolved["solver"]["n"] == 70
    # previews: one 8-bit PGM per frame
    pgm = (out / "previews" / "frame_0000.pgm").read_bytes()
    assert pgm.startswith(b"P5\n70 70\n255\n")
    assert len(pgm) == len(b"P5\n70 70\n255\n") + 70 * 70


def test_reconstruct_pdfp_partition(small_run, tmp_path):
    out = tmp_path / "pdfp"
    assert cli.main(["reconstruct", "pdfp",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(out), "--n", "64", "--frames", "4",
                     "--per-frame", "15", "--max-iters", "3",
                     "--alpha", "1e-4"]) == 0
    rec = load_image_stack(str(out / "recon.dtomo1"))
    assert rec.frames.shape == (4, 64, 64)
    report = json.loads((out / "report.json").read_text())
    # stride derived so the 4 windows span all 60 projections
    assert report["partition"] == {"n_frames": 4, "per_frame": 15,
                                   "stride": 15}
    assert report["algorithm"] == "pdfp"
    assert len(report["objectives"]) == 3


def test_reconstruct_lps_writes_three_stacks(small_run, tmp_path):
    out = tmp_path / "lps"
    assert cli.main(["reconstruct", "lps",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(out), "--n", "64", "--frames", "4",
                     "--per-frame", "15", "--stride", "15",
                     "--max-iters", "3", "--mu-l", "0.01",
                     "--mu-s", "0.005"]) == 0
    low = load_image_stack(str(out / "low.dtomo1"))
    sparse = load_image_stack(str(out / "sparse.dtomo1"))
    total = load_image_stack(str(out / "recon.dtomo1"))
    assert low.frames.shape == sparse.frames.shape == (4, 64, 64)
    assert np.allclose(total.frames, low.frames + sparse.frames)


def test_reconstruct_partition_needs_both_counts(small_run, tmp_path, capsys):
    code = cli.main(["reconstruct", "fbp",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(tmp_path / "o"), "--frames", "4"])
    assert code == cli.EXIT_CONFIG
    assert "per_frame" in capsys.readouterr().err


# -- subsample ----------------------------------------------------------------


def test_subsample_angle_list(small_run, tmp_path):
    out = tmp_path / "sub"
    assert cli.main(["subsample",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--angles", "0,90,180,270", "--out", str(out)]) == 0
    sub = load_sinogram(str(out) + ".dtomo1")
    assert sub.data.shape[0] == 4
    assert list(sub.angles_deg()) == [0.0, 90.0, 180.0, 270.0]


def test_subsample_range_and_every(small_run, tmp_path):
    out = tmp_path / "rng"
    assert cli.main(["subsample",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--angles", "0:90:270", "--out", str(out)]) == 0
    assert load_sinogram(str(out) + ".dtomo1").data.shape[0] == 4
    out = tmp_path / "every"
    assert cli.main(["subsample",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--angles", "every:5", "--out", str(out)]) == 0
    sub = load_sinogram(str(out) + ".dtomo1")
    assert sub.data.shape[0] == 12
    # row selection keeps the matching dynamic frames
    assert list(sub.frame_of_projection) == list(range(0, 60, 5))
    src = load_sinogram(str(small_run / "sinogram.dtomo1"))
    assert np.array_equal(sub.data, src.data[::5])


def test_subsample_unknown_angle_exits_config(small_run, tmp_path, capsys):
    code = cli.main(["subsample",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--angles", "0,33.5", "--out", str(tmp_path / "x")])
    assert code == cli.EXIT_CONFIG
    assert "33.5" in capsys.readouterr().err


# -- metrics ------------------------------------------------------------------


def test_metrics_exact_match_reports_inf(small_run, tmp_path, capsys):
    truth = str(small_run / "ground_truth.dtomo1")
    assert cli.main(["metrics", "--recon", truth, "--truth", truth,
                     "--out", str(tmp_path / "m.json")]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert len(doc["frames"]) == 60
    assert doc["frames"][0]["psnr_db"] == "inf"
    assert doc["frames"][0]["rel_l2"] == 0.0
    # rasterised block centroid sits within half a pixel of the true centre
    assert doc["frames"][0]["centroid_err_mm"] < 0.6


def test_metrics_resamples_finer_truth(tmp_path, capsys):
    cfg = dict(SMALL_CFG, scene={"kind": "stempo", "grid_n": 140,
                                 "mu_pipe": 0.08, "mu_hdpe": 0.10},
               motion={"kind": "static"})
    path = write_cfg(tmp_path / "c.yaml", cfg)
    sim = tmp_path / "sim"
    assert cli.main(["simulate", "--config", path, "--out", str(sim)]) == 0
    rec = tmp_path / "rec"
    assert cli.main(["reconstruct", "fbp",
                     "--sinogram", str(sim / "sinogram.dtomo1"),
                     "--out", str(rec)]) == 0
    capsys.readouterr()
    assert cli.main(["metrics", "--recon", str(rec / "recon.dtomo1"),
                     "--truth", str(sim / "ground_truth.dtomo1")]) == 0
    captured = capsys.readouterr()
    doc = json.loads(captured.out)
    # truth on a 2x finer grid: crop, downsample, pad back to the recon grid
    assert doc["resample"] == "140 -> 100 -> 50 -> 70"
    assert "140 -> 100 -> 50 -> 70" in captured.err


def test_metrics_rejects_incompatible_grids(small_run, tmp_path, capsys):
    rec = tmp_path / "odd"
    assert cli.main(["reconstruct", "fbp",
                     "--sinogram", str(small_run / "sinogram.dtomo1"),
                     "--out", str(rec), "--n", "64",
                     "--frames", "60", "--per-frame", "1"]) == 0
    code = cli.main(["metrics", "--recon", str(rec / "recon.dtomo1"),
                     "--truth", str(small_run / "ground_truth.dtomo1")])
    assert code == cli.EXIT_CONFIG
    # 70/64 pixel ratio is not an integer, so no resample path exists
    assert "reconcile" in capsys.readouterr().err


# -- full round trip ----------------------------------------------------------


def test_preset_round_trip_reaches_30db(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert cli.main(["simulate", "--preset", "stempo-static",
                     "--out", str(sim)]) == 0
    rec = tmp_path / "rec"
    assert cli.main(["reconstruct", "fbp", "--preset", "stempo-static",
                     "--sinogram", str(sim / "sinogram.dtomo1"),
                     "--out", str(rec)]) == 0
    capsys.readouterr()
    assert cli.main(["metrics", "--recon", str(rec / "recon.dtomo1"),
                     "--truth", str(sim / "ground_truth.dtomo1")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["frames"][0]["psnr_db"] >= 30.0


def test_console_module_help():
    proc = subprocess.run([sys.executable, "-m", "dyntomo.cli", "--help"],
                          capture_output=True)
    assert proc.returncode == 0
    assert b"simulate" in proc.stdout
