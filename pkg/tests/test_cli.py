import numpy as np
import pytest

from occalib import io
from occalib.cli import EXIT_CALIBRATION, EXIT_FORMAT, EXIT_INVALID, EXIT_MISSING, EXIT_USAGE, main
from occalib.experiment import make_frame
from occalib.geom import log_map
from occalib.optim import accumulate_frames, calibrate


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["synth", "--out", str(d), "--seed", "1", "--sigma-r", "0.02"]) == 0
    assert main(["extract2d", "--depth", str(d / "depth.txt"), "--out", str(d / "e2.txt")]) == 0
    assert main(["extract3d", "--scan", str(d / "scan.txt"), "--out", str(d / "e3.txt")]) == 0
    args = ["calibrate", "--edges2d", str(d / "e2.txt"), "--edges3d", str(d / "e3.txt"),
            "--init", str(d / "extrinsic_init.txt"), "--camera", str(d / "camera.txt")]
    assert main(args + ["--out", str(d / "r1.txt"), "--trace", str(d / "t1.txt"), "--matches", str(d / "m.txt")]) == 0
    assert main(args + ["--out", str(d / "r2.txt"), "--trace", str(d / "t2.txt")]) == 0
    return d


def test_synth_writes_all_files(pipeline):
    for name in ("camera.txt", "extrinsic_gt.txt", "extrinsic_init.txt", "scene.txt", "depth.txt", "scan.txt"):
        assert (pipeline / name).stat().st_size > 0


def test_repeated_calibration_is_byte_identical(pipeline):
    assert (pipeline / "r1.txt").read_bytes() == (pipeline / "r2.txt").read_bytes()
    assert (pipeline / "t1.txt").read_bytes() == (pipeline / "t2.txt").read_bytes()


def test_file_pipeline_equals_in_memory(pipeline, cam):
    f = make_frame(1, sigma_r=0.02)
    assert io.read_edges2d(pipeline / "e2.txt") == f.edges2d
    init = io.read_extrinsic(pipeline / "extrinsic_init.txt")
    res = calibrate(accumulate_frames([(f.edges2d, f.features3d)]), None, cam, log_map(init))
    T, status = io.read_result(pipeline / "r1.txt")
    assert status == res.status
    assert np.array_equal(T.matrix(), res.final_transform.matrix())


def test_trace_and_match_files(pipeline):
    trace = io.read_trace(pipeline / "t1.txt")
    assert len(trace) == 10 and trace[0].mean_abs_residual > trace[-1].mean_abs_residual
    lines = (pipeline / "m.txt").read_text().splitlines()
    assert lines[0] == io.MATCH_HEADER and len(lines) > 100


def test_evaluate_prints_axes(pipeline, capsys):
    assert main(["evaluate", "--result", str(pipeline / "r1.txt"), "--gt", str(pipeline / "extrinsic_gt.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "status=converged"
    keys = [line.split("=")[0] for line in out[1:]]
    assert keys == ["roll", "pitch", "yaw", "x", "y", "z", "rotation", "translation"]
    rot = float(out[7].split("=")[1].split()[0])
    assert rot < 0.5


def test_missing_file(tmp_path, capsys):
    code = main(["extract2d", "--depth", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "e.txt")])
    assert code == EXIT_MISSING
    assert capsys.readouterr().err.startswith("error:missing_file:")


def test_format_error_names_line(tmp_path, capsys):
    bad = tmp_path / "e3.txt"
    bad.write_text("1,2,3,L\n1,2,3,X\n")
    (tmp_path / "e2.txt").write_text("1,1,L\n")
    (tmp_path / "T.txt").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n")
    code = main(["calibrate", "--edges2d", str(tmp_path / "e2.txt"), "--edges3d", str(bad),
                 "--init", str(tmp_path / "T.txt"), "--out", str(tmp_path / "r.txt")])
    assert code == EXIT_FORMAT
    err = capsys.readouterr().err
    assert err.startswith("error:format:") and f"{bad}:2:" in err


def test_usage_errors(tmp_path, capsys):
    assert main(["ablate", "--trials", "1"]) == EXIT_USAGE
    assert "error:usage:" in capsys.readouterr().err
    assert main(["frobnicate"]) == EXIT_USAGE
    e = tmp_path / "e.txt"
    e.write_text("1,1,L\n")
    assert main(["calibrate", "--edges2d", str(e), str(e), "--edges3d", str(e), "--init", str(e),
                 "--out", str(tmp_path / "r.txt")]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore:frame 0 has no")
def test_featureless_scene_is_invalid_input(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--preset", "single-box", "--seed", "2"]) == 0
    assert main(["extract2d", "--depth", str(tmp_path / "depth.txt"), "--out", str(tmp_path / "e2.txt")]) == 0
    assert main(["extract3d", "--scan", str(tmp_path / "scan.txt"), "--out", str(tmp_path / "e3.txt")]) == 0
    code = main(["calibrate", "--edges2d", str(tmp_path / "e2.txt"), "--edges3d", str(tmp_path / "e3.txt"),
                 "--init", str(tmp_path / "extrinsic_init.txt"), "--out", str(tmp_path / "r.txt")])
    assert code == EXIT_INVALID
    assert capsys.readouterr().err.startswith("error:input:")


def test_insufficient_features_exit_code(pipeline, tmp_path, capsys):
    cfg = tmp_path / "calib.txt"
    cfg.write_text("min_pairs=100000\n")
    code = main(["calibrate", "--edges2d", str(pipeline / "e2.txt"), "--edges3d", str(pipeline / "e3.txt"),
                 "--init", str(pipeline / "extrinsic_init.txt"), "--calib-config", str(cfg),
                 "--out", str(tmp_path / "r.txt"), "--trace", str(tmp_path / "t.txt")])
    assert code == EXIT_CALIBRATION
    assert "error:calibration:insufficient_features" in capsys.readouterr().err
    T, status = io.read_result(tmp_path / "r.txt")
    assert status == "insufficient_features"
    # the start is returned after an exp(log(.)) round trip
    assert np.allclose(T.matrix(), io.read_extrinsic(pipeline / "extrinsic_init.txt").matrix(), atol=1e-12)
    assert len(io.read_trace(tmp_path / "t.txt")) == 1


def test_small_ablation(tmp_path, capsys):
    code = main(["ablate", "--scenario", "test1", "--no-ub", "--trials", "1", "--quiet", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "x the full pipeline" in out
    mae = (tmp_path / "mae.csv").read_text().splitlines()
    assert mae[0] == "scenario,axis,mae" and len(mae) == 1 + 2 * 6
    assert len(list((tmp_path / "traces").iterdir())) == 2


def test_sweep_config(tmp_path, capsys):
    cfg = tmp_path / "sweep.txt"
    cfg.write_text("trials=1\nscenario=mine,hdl64,0.0,0.02,0.0\n")
    assert main(["sweep", "--config", str(cfg), "--quiet", "--out", str(tmp_path / "o")]) == 0
    assert "mine" in capsys.readouterr().out
    rows = (tmp_path / "o" / "trials.csv").read_text().splitlines()
    assert rows[0] == "scenario,trial,seed,status,rotation_deg,translation_m" and len(rows) == 2
