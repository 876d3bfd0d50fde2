import json

import numpy as np
import pytest

from gslift import cli, deform, fileio, tracklift as tl
from gslift.metrics import DEFAULT_K_EVAL


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One small synth fixture shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "seed": 0,
        "frames": 8,
        "output": "out",
        "synth": {"n_points": 60, "n_static": 30},
    }
    (root / "config.json").write_text(json.dumps(config))
    assert cli.main(["synth", str(root / "config.json")]) == 0
    return root / "out"


def test_synth_outputs_exist(pipeline_dir):
    for name in ("scene.ply", "selection.txt", "bbox.json", "script.json",
                 "cameras.json", "pipeline_config.json", "synth_manifest.json",
                 "view0/tracks.jsonl", "view0/gt_depth.pfm",
                 "view1/camera.json", "view0_to_view1_t0.flo"):
        assert (pipeline_dir / name).exists(), name
    assert (pipeline_dir / "view0" / "depth" / "frame_000.pfm").exists()
    assert (pipeline_dir / "view0" / "flow" / "to_t0_000.flo").exists()


def test_lift_deform_metrics_pipeline(pipeline_dir):
    cfg = str(pipeline_dir / "pipeline_config.json")
    assert cli.main(["lift", cfg]) == 0
    assert cli.main(["deform", cfg]) == 0
    assert cli.main(["metrics", cfg, str(pipeline_dir / "dynamic_scene.gsdyn")]) == 0

    manifest = json.loads((pipeline_dir / "lift_manifest.json").read_text())
    # every tracked moving point survives the pipeline: kept-count equals
    # the number of in-box tracks at t0
    expected = 0
    for view in (0, 1):
        tracks = tl.read_tracks(pipeline_dir / f"view{view}" / "tracks.jsonl")
        expected += sum(1 for tr in tracks if tr.id < 30)  # moving ids come first
    assert manifest["totals"]["kept"] == expected
    assert manifest["totals"]["discarded"] == 0

    deform_manifest = json.loads((pipeline_dir / "deform_manifest.json").read_text())
    assert deform_manifest["mode"] == "rigid"
    # schedule for 2 lifted videos is 75, clamped to the 60 available anchors
    assert deform_manifest["K"] == 60

    report = json.loads((pipeline_dir / "report_dynamic_scene.json").read_text())
    assert report["rigidity"] < 1e-9
    assert report["k_eval"] == DEFAULT_K_EVAL


def test_dynamic_scene_t0_frame_is_identity(pipeline_dir):
    dyn = deform.load_dynamic_scene(pipeline_dir / "dynamic_scene.gsdyn")
    k = dyn.t0_index
    assert np.all(dyn.translations[k] == 0.0)
    assert np.all(dyn.rot_deltas[k] == np.array([1.0, 0, 0, 0]))
    assert np.all(dyn.scale_factors[k] == 1.0)


def test_rerun_reproduces_outputs_bit_identically(pipeline_dir):
    cfg = str(pipeline_dir / "pipeline_config.json")
    bank = (pipeline_dir / "bank.jsonl").read_bytes()
    manifest = (pipeline_dir / "lift_manifest.json").read_bytes()
    dyn = (pipeline_dir / "dynamic_scene.gsdyn").read_bytes()
    assert cli.main(["lift", cfg]) == 0
    assert cli.main(["deform", cfg]) == 0
    assert (pipeline_dir / "bank.jsonl").read_bytes() == bank
    assert (pipeline_dir / "lift_manifest.json").read_bytes() == manifest
    assert (pipeline_dir / "dynamic_scene.gsdyn").read_bytes() == dyn


def test_metrics_ranks_two_variants(pipeline_dir, tmp_path):
    cfg_path = pipeline_dir / "pipeline_config.json"
    out2 = tmp_path / "linear"
    assert cli.main(["deform", str(cfg_path), "--mode", "linear",
                     "--bank", str(pipeline_dir / "bank.jsonl"),
                     "--output", str(out2)]) == 0
    assert cli.main(["metrics", str(cfg_path),
                     str(pipeline_dir / "dynamic_scene.gsdyn"),
                     str(out2 / "dynamic_scene.gsdyn"),
                     "--output", str(tmp_path / "m")]) == 0
    ranks = json.loads((tmp_path / "m" / "ranks.json").read_text())
    assert set(ranks["per_metric"]) >= {"displacement", "rigidity", "momentum",
                                        "isometry", "rotation_similarity"}
    assert len(ranks["overall_rank"]) == 2


def test_metrics_single_file_omits_ranks(pipeline_dir, tmp_path):
    cfg = str(pipeline_dir / "pipeline_config.json")
    out = tmp_path / "single"
    assert cli.main(["metrics", cfg, str(pipeline_dir / "dynamic_scene.gsdyn"),
                     "--output", str(out)]) == 0
    assert not (out / "ranks.json").exists()


def test_metrics_with_embeddings(pipeline_dir, tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(2, 8, 16))
    frames /= np.linalg.norm(frames, axis=-1, keepdims=True)
    text = rng.normal(size=16)
    text /= np.linalg.norm(text)
    fileio.write_f32(tmp_path / "frames.f32", frames)
    fileio.write_f32(tmp_path / "text.f32", text)

    config = json.loads((pipeline_dir / "pipeline_config.json").read_text())
    config["embeddings"] = {"frames": str(tmp_path / "frames.f32"),
                            "text": str(tmp_path / "text.f32")}
    cfg = tmp_path / "emb_config.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / "m"
    assert cli.main(["metrics", str(cfg), str(pipeline_dir / "dynamic_scene.gsdyn"),
                     "--output", str(out)]) == 0
    report = json.loads((out / "report_dynamic_scene.json").read_text())
    assert "clip_text" in report and "clip_temporal" in report
    assert -1.0 <= report["clip_text"] <= 1.0


def test_empty_tracks_exit_code_2(pipeline_dir, tmp_path):
    config = json.loads((pipeline_dir / "pipeline_config.json").read_text())
    (pipeline_dir / "empty.jsonl").write_text("")
    config["views"] = [dict(config["views"][0], tracks="empty.jsonl")]
    config["output"] = str(tmp_path / "o")
    bad = pipeline_dir / "empty_config.json"
    bad.write_text(json.dumps(config))
    assert cli.main(["lift", str(bad)]) == 2


def test_unrescuable_spike_increments_discarded(pipeline_dir, tmp_path):
    # append a track that jumps from a tracked point's pixel onto the far
    # background: ratio ~2 with no rescue pixel anywhere near
    view_dir = pipeline_dir / "view0"
    tracks = tl.read_tracks(view_dir / "tracks.jsonl")
    donor = tracks[0]
    n = donor.n_frames
    uv = np.tile([10.0, 10.0], (n, 1))      # empty background corner
    uv[0] = donor.uv[0]                      # a real point pixel at t0
    spike = tl.Track2D(id=7777, uv=uv, visible=np.ones(n, dtype=bool), t0_index=0)
    out_tracks = tmp_path / "spiked.jsonl"
    tl.write_tracks(out_tracks, tracks + [spike])

    config = json.loads((pipeline_dir / "pipeline_config.json").read_text())
    config["views"] = [dict(config["views"][0], tracks=str(out_tracks))]
    config["output"] = str(tmp_path / "o")
    cfg = pipeline_dir / "spike_config.json"
    cfg.write_text(json.dumps(config))
    assert cli.main(["lift", str(cfg)]) == 0
    manifest = json.loads((tmp_path / "o" / "lift_manifest.json").read_text())
    assert manifest["views"][0]["discarded"] == 1


def test_deform_empty_selection_exit_2(pipeline_dir, tmp_path):
    config = json.loads((pipeline_dir / "pipeline_config.json").read_text())
    config.pop("selection")
    config["bbox"] = {"center": [50.0, 50.0, 50.0], "half_extents": [0.01, 0.01, 0.01]}
    cfg = pipeline_dir / "empty_sel.json"
    cfg.write_text(json.dumps(config))
    assert cli.main(["deform", str(cfg), "--bank", str(pipeline_dir / "bank.jsonl"),
                     "--output", str(tmp_path / "o")]) == 2


def test_warp_flow_zero_flow_identity(tmp_path, rng):
    frames = []
    for i in range(2):
        img = (rng.integers(0, 256, size=(16, 20, 3)) / 255.0)
        path = tmp_path / f"frame{i}.png"
        fileio.write_image(path, img)
        frames.append(path)
    flow_path = tmp_path / "zero.flo"
    fileio.write_flo(flow_path, np.zeros((16, 20, 2)))
    out_dir = tmp_path / "warped"
    assert cli.main(["warp-flow", "--view-flow", str(flow_path),
                     "--frames", *map(str, frames),
                     "--out-dir", str(out_dir)]) == 0
    for path in frames:
        warped = fileio.read_image(out_dir / f"warped_{path.stem}.png")
        assert np.array_equal(warped, fileio.read_image(path))


def test_warp_flow_composes_time_flows(tmp_path, rng):
    img = rng.integers(0, 256, size=(8, 8, 3)) / 255.0
    frame = tmp_path / "f.png"
    fileio.write_image(frame, img)
    view = tmp_path / "view.flo"
    fileio.write_flo(view, np.zeros((8, 8, 2)))
    tflow = tmp_path / "t.flo"
    fileio.write_flo(tflow, np.zeros((8, 8, 2)))
    assert cli.main(["warp-flow", "--view-flow", str(view),
                     "--frames", str(frame), "--time-flows", str(tflow),
                     "--out-dir", str(tmp_path / "o")]) == 0


def test_sample_views_degenerate_margins(tmp_path):
    config = {
        "seed": 3,
        "output": "o",
        "view_sampling": {"anchor_azimuth_deg": 30.0, "anchor_elevation_deg": 10.0,
                          "anchor_distance": 4.0, "views_per_side": 3},
    }
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(config))
    assert cli.main(["sample-views", str(cfg)]) == 0
    poses = json.loads((tmp_path / "o" / "poses.json").read_text())
    assert len(poses) == 7
    assert all(p["T"] == poses[0]["T"] and p["R"] == poses[0]["R"] for p in poses)


def test_schedule_command(capsys):
    assert cli.main(["schedule", "--steps", "4"]) == 0
    out = capsys.readouterr().out
    assert "0.75" in out and "0.6" in out and "50" in out and "150" in out


def test_missing_config_exit_2(tmp_path):
    assert cli.main(["lift", str(tmp_path / "nope.json")]) == 2
