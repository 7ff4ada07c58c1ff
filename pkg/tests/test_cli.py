import json

import numpy as np
import pytest

from geolift import io
from geolift.cli import DEFAULTS, load_config, main
from geolift.evaluation import to_paper_units
from geolift.geometry import PointCloud, sample_unit_ball

SMALL_FIT = ["--steps", "30", "--sample-batch", "128", "--n-embed", "200"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen", "--kind", "sphere", "--n", 300, "--output", root / "gen") == 0
    cloud = root / "gen" / "cloud.ply"
    assert run("geodesics", "--cloud", cloud, "--output", root / "geo") == 0
    dm = root / "geo" / "distances.ghofdm"
    assert run("fit", "--cloud", cloud, "--distances", dm, "--output", root / "fit", *SMALL_FIT) == 0
    return root, cloud, dm


# --- gen -------------------------------------------------------------------------


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--kind", "torus", "--n", 100, "--seed", 4, "--output", tmp_path / name) == 0
    assert (tmp_path / "a" / "cloud.ply").read_bytes() == (tmp_path / "b" / "cloud.ply").read_bytes()


def test_gen_xyz_and_params(tmp_path):
    assert run("gen", "--kind", "sphere", "--n", 50, "--param", "radius=2", "--format", "xyz",
               "--output", tmp_path) == 0
    cloud = io.read_xyz(tmp_path / "cloud.xyz")
    assert np.allclose(np.linalg.norm(cloud.points, axis=1), 2)


def test_bad_kind_exits_with_message(tmp_path, capsys):
    assert run("gen", "--kind", "teapot", "--output", tmp_path) == 1
    assert "unknown shape" in capsys.readouterr().err


def test_usage_errors_exit_with_validation_code(capsys):
    with pytest.raises(SystemExit) as exc:
        run("gen", "--n", "many")
    assert exc.value.code == 1


def test_bad_param_exits_with_validation_code(tmp_path, capsys):
    assert run("gen", "--kind", "sphere", "--param", "edge=1", "--output", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GEOLIFT_OUTPUT_ROOT", str(tmp_path))
    assert run("gen", "--n", 20) == 0
    assert (tmp_path / "gen" / "cloud.ply").exists()
    echoed = json.loads((tmp_path / "gen" / "config.json").read_text())
    assert echoed["shape"]["n"] == 20 and echoed["output_dir"] == str(tmp_path / "gen")


# --- geodesics ------------------------------------------------------------------


def test_geodesics_summary(sphere_run):
    root, _, dm = sphere_run
    summary = json.loads((root / "geo" / "geodesics.json").read_text())
    assert summary["n"] == 300 and summary["k"] == 8 and summary["bridges"] == 0
    # unit sphere: the longest graph path is a bit above pi
    assert 0.95 * np.pi <= summary["max_distance"] <= 1.10 * np.pi
    assert io.read_distance_matrix(dm).n == 300


def test_geodesics_missing_input(tmp_path, capsys):
    assert run("geodesics", "--output", tmp_path) == 1
    assert run("geodesics", "--cloud", tmp_path / "nope.ply", "--output", tmp_path) == 1


# --- fit --------------------------------------------------------------------------


def test_fit_outputs(sphere_run):
    root = sphere_run[0] / "fit"
    trace = json.loads((root / "trace.json").read_text())
    assert len(trace) == 30 and trace[-1]["total"] < trace[0]["total"]
    meta = json.loads((root / "model.ghofnn.json").read_text())
    assert meta["seed"] == 0 and meta["training"]["steps"] == 30
    assert meta["training"]["weights"] == {"lambda_c": 1.0, "lambda_g": 0.1}


def test_checkpoint_reload_reproduces_embedding(sphere_run):
    root = sphere_run[0] / "fit"
    net = io.read_checkpoint(root / "model.ghofnn")
    rows = net.forward(sample_unit_ball(200, 0).samples)
    assert np.abs(rows - io.read_embedding(root / "embedding.txt")).max() < 1e-6


def test_fit_without_geodesic_term_still_reports_it(tmp_path, sphere_run):
    _, cloud, dm = sphere_run
    assert run("fit", "--cloud", cloud, "--distances", dm, "--lambda-g", 0, "--output", tmp_path, *SMALL_FIT) == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert all(r["total"] == r["chamfer"] for r in trace)
    assert trace[0]["geodesic"] > 0


def test_fit_rejects_mismatched_distances(tmp_path, sphere_run):
    root, _, dm = sphere_run
    assert run("gen", "--n", 50, "--output", tmp_path / "g") == 0
    assert run("fit", "--cloud", tmp_path / "g" / "cloud.ply", "--distances", dm,
               "--output", tmp_path / "f", *SMALL_FIT) == 1


def test_fit_zero_steps_is_a_validation_error(tmp_path, sphere_run):
    _, cloud, dm = sphere_run
    assert run("fit", "--cloud", cloud, "--distances", dm, "--steps", 0, "--output", tmp_path) == 1


# --- analyze and mesh -------------------------------------------------------------


def test_analyze_report(sphere_run, tmp_path):
    root, cloud, dm = sphere_run
    ckpt = root / "fit" / "model.ghofnn"
    assert run("analyze", "--checkpoint", ckpt, "--cloud", cloud, "--distances", dm,
               "--n-eval", 500, "--output", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["chamfer_paper_units"] == pytest.approx(report["chamfer_raw"] / 0.01)
    assert 0 <= report["normal_consistency"] <= 1
    assert report["geodesic_mre"] > 0
    assert report["metadata"]["seed"] == 0 and "timestamp" in report["metadata"]
    assert len(io.read_ply(tmp_path / "analysis.ply")) == 500


def test_scaled_chamfer_arithmetic():
    pts = np.array([[0, 0, 0], [2, 1, 1.0]])
    assert to_paper_units(4e-4, pts) == pytest.approx(4e-4 / 0.2 ** 2)
    unit = np.array([[0, 0, 0], [1, 0.5, 0.5]])
    assert to_paper_units(4e-4, unit) == pytest.approx(0.04)


def test_mesh_command(sphere_run, tmp_path):
    root, cloud, _ = sphere_run
    assert run("mesh", "--checkpoint", root / "fit" / "model.ghofnn", "--cloud", cloud,
               "--n-charts", 3, "--res", 4, "--chart-steps", 3, "--n-embed", 300, "--n-eval", 1000,
               "--output", tmp_path) == 0
    mesh = io.read_obj(tmp_path / "mesh.obj")
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["extra"]["charts"] == len(mesh.charts()) <= 3
    assert len(mesh.faces) == 18 * report["extra"]["charts"]


# --- repro and config -------------------------------------------------------------


def test_repro_lists_and_rejects_suites(tmp_path, capsys):
    assert run("repro") == 0
    assert "geodesic-oracle" in capsys.readouterr().out
    assert run("repro", "no_such_suite", "--output", tmp_path) == 1


def test_repro_quick_suite_passes(tmp_path, capsys):
    assert run("repro", "soft-geodesic", "--output", tmp_path) == 0
    assert (tmp_path / "summary.txt").read_text().startswith("PASS")


def test_flags_override_config_file(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("seed: 3\nshape:\n  kind: torus\n  n: 40\n")
    assert run("gen", "--config", cfg_file, "--n", 25, "--output", tmp_path / "o") == 0
    echoed = json.loads((tmp_path / "o" / "config.json").read_text())
    assert echoed["seed"] == 3 and echoed["shape"]["kind"] == "torus" and echoed["shape"]["n"] == 25


def test_config_rejects_unknown_keys(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"shape": {"colour": "red"}}))
    with pytest.raises(ValueError):
        load_config(cfg_file)
    assert run("gen", "--config", cfg_file, "--output", tmp_path) == 1


def test_defaults_are_not_mutated():
    cfg = load_config(overrides={"training.steps": 7})
    assert cfg["training"]["steps"] == 7 and DEFAULTS["training"]["steps"] == 5000


def test_gen_cube_has_six_labels(tmp_path):
    assert run("gen", "--kind", "cube", "--n", 6000, "--output", tmp_path) == 0
    cloud = io.read_ply(tmp_path / "cloud.ply")
    assert len(cloud) == 6000 and sorted(np.unique(cloud.labels)) == list(range(6))


def test_geodesics_bridges_disconnected_input(tmp_path, caplog):
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(size=(30, 3)) * 0.01, rng.normal(size=(30, 3)) * 0.01 + 10])
    io.write_xyz(tmp_path / "two.xyz", PointCloud(pts))
    assert run("geodesics", "--cloud", tmp_path / "two.xyz", "--k", 4, "--output", tmp_path / "g") == 0
    summary = json.loads((tmp_path / "g" / "geodesics.json").read_text())
    assert summary["bridges"] > 0
    assert "bridge" in caplog.text
