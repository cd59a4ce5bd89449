import csv
import json
import math

import numpy as np
import pytest

from nr4d.cli import main
from nr4d.cloud_io import read_csv, read_ply, write_ply
from nr4d.config import load_config
from nr4d.fusion import PointCloud4D
from nr4d.pipeline import (
    METRIC_COLUMNS,
    SUMMARY_COLUMNS,
    PipelineError,
    derive_seed,
    emit_outputs,
    run_scenario,
)

NOISELESS = {"processing": {"cfar": {"dynamic_range_db": 10.0}}, "evaluation": {"snr_db": [math.inf]}}


def desk(**over):
    """Desk profile, noiseless, no random block; keyword sections are merged on top."""
    ov = {k: dict(v) for k, v in NOISELESS.items()}
    ov["scene"] = {"random": None}
    for k, v in over.items():
        ov[k] = {**ov.get(k, {}), **v} if isinstance(v, dict) else v
    return load_config(profile="desk", overrides=ov)


def single_station():
    return [{"id": 0, "position": [0.0, 0.0, 10.0], "ypr_deg": [0.0, 0.0, 0.0]}]


def tiny(**eval_over):
    """Small grid and array for cardinality / I/O tests."""
    return load_config(
        profile="desk",
        overrides={
            "grid": {"n_rb": 4},
            "array": {"P": 2, "Q": 2},
            "scene": {"random": {"count": 3, "radius": 10.0}},
            "processing": {"n_r": 64, "n_d": 128, "cfar": {"pfa": 1e-6}},
            "evaluation": {"trials": 1, **eval_over},
        },
    )


def test_derive_seed_is_counter_based():
    a = derive_seed(0, 1, 2, 3, 4)
    assert a == derive_seed(0, 1, 2, 3, 4)
    assert len({a, derive_seed(0, 1, 2, 3, 5), derive_seed(1, 1, 2, 3, 4), derive_seed(0, 0, 2)}) == 4


def test_noiseless_single_scatterer_one_station():
    truth = np.array([18.0, 5.0, 3.0])  # below the station so the elevation is negative
    cfg = desk(
        stations=single_station(),
        scene={"scatterers": [{"position": truth.tolist(), "velocity": [-4.0, 0.0, 0.0], "gain": 1.0}]},
    )
    art = run_scenario(cfg)
    r = float(np.linalg.norm(truth - [0, 0, 10]))
    range_bin = cfg.match_radius()
    steps = {"zoom": cfg.processing.angles.fine_step_deg, "full": cfg.processing.angles.coarse_step_deg}
    for res in art.results:
        assert len(res.fused) == 1
        err = np.linalg.norm(res.fused.positions[0] - truth)
        assert err <= range_bin + r * math.radians(steps[res.solver])
    zoom = art.rows("zoom")[0]
    assert zoom.fused.bs_id.tolist() == [0]
    assert zoom.report.f_score == 1.0


def occlusion_cfg():
    scats = [
        {"position": [5.0, 3.0, 0.5], "velocity": [6.0, 0.0, 0.0], "gain": 1.0},
        {"position": [-8.0, 6.0, 1.0], "velocity": [0.0, -12.0, 0.0], "gain": 1.0, "hidden_from": [1]},
        {"position": [2.0, -9.0, 1.5], "velocity": [-9.0, 9.0, 0.0], "gain": 1.0},
    ]
    return desk(scene={"scatterers": scats})


def matched(points, truth, tol):
    if len(points) == 0:
        return set()
    d = np.linalg.norm(truth[:, None, :] - points[None, :, :], axis=-1)
    return set(np.flatnonzero(d.min(axis=1) <= tol).tolist())


def test_occluded_scatterer_survives_fusion():
    cfg = occlusion_cfg()
    art = run_scenario(cfg)
    truth = art.ground_truth.positions
    res = art.rows("zoom")[0]
    tol = cfg.match_radius()
    assert matched(res.fused.positions, truth, tol) == {0, 1, 2}
    own = res.local_clouds[1]
    assert len(own) == 2
    assert matched(res.fused.positions[res.fused.bs_id == 1], truth, tol) == {0, 2}
    # nothing the occluded station reports lies anywhere near the hidden scatterer
    assert np.min(np.linalg.norm(res.fused.positions[res.fused.bs_id == 1] - truth[1], axis=1)) > 5.0


def test_sweep_cardinality(tmp_path):
    cfg = tiny(snr_db=[0, 5, 10, 15, 20], trials=10)
    art = run_scenario(cfg, tmp_path)
    for solver in ("zoom", "full"):
        assert len(art.rows(solver)) == 50
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert len(rows) == 100 and tuple(rows[0]) == METRIC_COLUMNS
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert len(rows) == 5 * 2 and tuple(rows[0]) == SUMMARY_COLUMNS
    assert all(int(r["trials"]) == 10 for r in rows)


def test_summary_rows_single_solver(tmp_path):
    art = run_scenario(tiny(snr_db=[0, 10, 20], solvers=["zoom"]), tmp_path)
    assert len(art.summary()) == 3


def test_outputs_carry_config_hash(tmp_path):
    cfg = tiny()
    art = run_scenario(cfg, tmp_path)
    h = cfg.config_hash()
    assert art.config_hash == h
    files = sorted(tmp_path.iterdir())
    assert any(f.name.startswith("fused_zoom") for f in files)
    for f in files:
        assert h in f.read_text(), f.name
    doc = json.loads((tmp_path / "config.json").read_text())
    assert doc["config_hash"] == h
    assert load_config(profile="desk", overrides=None).config_hash() != h
    cloud, fh = read_ply(tmp_path / "fused_zoom_snr10_t0.ply")
    assert fh == h
    again, _ = read_csv(tmp_path / "fused_zoom_snr10_t0.csv")
    np.testing.assert_array_equal(cloud.positions, again.positions)


def test_csv_outputs_byte_identical(tmp_path):
    cfg = tiny(snr_db=[5, 15], trials=2)
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_seed_changes_noise(tmp_path):
    a = run_scenario(tiny(snr_db=[0], seed=1))
    b = run_scenario(tiny(snr_db=[0], seed=2))
    assert not np.array_equal(a.results[0].fused.positions, b.results[0].fused.positions)


def test_three_point_ply(tmp_path):
    pts = np.array([[0.0, 1.0, 2.0], [3.5, -1.0, 0.0], [1e-3, 2e5, -7.25]])
    cloud = PointCloud4D(pts, np.array([1.0, -2.0, 0.0]), np.array([1.0, 2.0, 3.0]), np.array([0, 1, 2]))
    p = tmp_path / "c.ply"
    write_ply(cloud, p, "abc")
    lines = p.read_text().splitlines()
    assert "element vertex 3" in lines
    body = lines[lines.index("end_header") + 1 :]
    assert len(body) == 3
    back, h = read_ply(p)
    assert h == "abc"
    np.testing.assert_array_equal(back.positions, pts)
    np.testing.assert_array_equal(back.bs_id, [0, 1, 2])


def test_empty_detection_set(tmp_path):
    # the only scatterer is hidden from the only station
    cfg = desk(
        stations=single_station(),
        scene={"scatterers": [{"position": [10.0, 0.0, 5.0], "gain": 1.0, "hidden_from": [0]}]},
    )
    art = run_scenario(cfg, tmp_path)
    for res in art.results:
        assert len(res.fused) == 0 and res.report is None and res.warning
    cloud, _ = read_ply(tmp_path / "fused_zoom_snrinf_t0.ply")
    assert len(cloud) == 0
    assert "element vertex 0" in (tmp_path / "fused_zoom_snrinf_t0.ply").read_text()
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["warnings"] and doc["records"][0]["chamfer_m"] is None


def test_output_failure_is_stage_tagged(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(PipelineError) as exc:
        run_scenario(tiny(), blocker / "sub")
    assert exc.value.stage == "output"


def test_emit_outputs_returns_paths(tmp_path):
    art = run_scenario(tiny())
    paths = emit_outputs(art, tmp_path)
    assert all(p.exists() for p in paths)


def test_dump_rdm(tmp_path):
    art = run_scenario(tiny(snr_db=[0, 10]), tmp_path, dump_rdms=True)
    assert len(art.rdm_files) == 2 * 4
    assert all(p.exists() for p in art.rdm_files)


# --- CLI -------------------------------------------------------------------


def write_cfg(tmp_path, text):
    p = tmp_path / "s.cfg"
    p.write_text(text)
    return p


TINY_YAML = """
profile: desk
grid: {n_rb: 4}
array: {P: 2, Q: 2}
scene: {random: {count: 3, radius: 10.0}}
processing: {n_r: 64, n_d: 128, cfar: {pfa: 1.0e-6}}
"""


def test_cli_run_and_eval(tmp_path, capsys):
    cfgp = write_cfg(tmp_path, TINY_YAML)
    out = tmp_path / "out"
    rc = main(["run", str(cfgp), "--out", str(out), "--snr-list", "0", "20", "--solver", "zoom", "--seed", "3", "--trials", "2"])
    assert rc == 0
    rows = (out / "summary.csv").read_text().splitlines()[2:]
    assert len(rows) == 2 and all(r.startswith("zoom,") for r in rows)
    assert len(list(out.glob("fused_*.ply"))) == 4
    capsys.readouterr()
    rc = main(["eval", str(out / "fused_zoom_snr20_t0.ply"), str(out / "ground_truth.ply"), "--radius", "2.5"])
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["match_radius_m"] == 2.5 and rep["n_gt"] == 3
    assert 0 <= rep["f_score"] <= 1


def test_cli_profile_flag(tmp_path):
    cfgp = write_cfg(tmp_path, "grid: {n_rb: 4}\narray: {P: 2, Q: 2}\nscene: {random: {count: 2}}\nprocessing: {n_r: 64, n_d: 128}\n")
    rc = main(["run", str(cfgp), "--out", str(tmp_path / "o"), "--profile", "desk", "--solver", "full"])
    assert rc == 0
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())["config"]
    assert cfg["profile"] == "desk" and cfg["grid"]["n_subframes"] == 1


def test_cli_config_error(tmp_path, capsys):
    cfgp = write_cfg(tmp_path, "profile: desk\ngrid: {n_rb: 0}\n")
    assert main(["run", str(cfgp), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: [config]") and "grid.n_rb" in err


def test_cli_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 1
    assert "[config]" in capsys.readouterr().err
    assert main(["eval", str(tmp_path / "a.ply"), str(tmp_path / "b.ply")]) == 1
    assert "[eval]" in capsys.readouterr().err


def test_cli_eval_empty_cloud(tmp_path, capsys):
    write_ply(PointCloud4D.empty(), tmp_path / "e.ply")
    write_ply(PointCloud4D(np.zeros((1, 3)), np.zeros(1), np.zeros(1), np.zeros(1, int)), tmp_path / "g.ply")
    assert main(["eval", str(tmp_path / "e.ply"), str(tmp_path / "g.ply")]) == 1
    assert "[metrics]" in capsys.readouterr().err


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2
