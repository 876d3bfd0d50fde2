"""Command-line pipeline driver.

Subcommands wire the library modules into file-to-file stages:

    synth         generate a synthetic scene + observations (fixtures)
    lift          tracks + depths -> world-space anchor trajectory bank
    deform        anchor bank + scene -> dynamic scene file
    metrics       dynamic scene file(s) -> metric report(s) and ranks
    warp-flow     warp video frames through composed flow fields
    sample-views  spherical viewpoint sampling -> camera pose list
    schedule      print the hyperparameter schedule tables

Configuration is a single JSON file; a few common flags override config
fields. Paths inside the config resolve relative to the config file.
Exit codes: 0 success, 1 internal error, 2 invalid input (including
empty guidance). Every stage writes a manifest recording the package
version, the config hash and its counts, so re-running a command with
the same inputs reproduces its outputs bit-identically. The env var
G2L_THREADS caps kernel parallelism.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, camera, deform, fileio, guidance, metrics, scene, synth, tracklift
from .errors import DegenerateDataError, GsliftError, InputError


def _load_config(path: str) -> tuple[dict, Path, str]:
    cfg_path = Path(path)
    raw = cfg_path.read_bytes()
    config = json.loads(raw.decode("utf-8"))
    return config, cfg_path.parent, hashlib.sha256(raw).hexdigest()


def _resolve(base: Path, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest_base(config_hash: str) -> dict:
    return {"gslift_version": __version__, "config_sha256": config_hash}


def _bbox_from_config(config: dict) -> scene.BoundingBox3:
    if "bbox" not in config:
        raise InputError("config is missing 'bbox'")
    return scene.BoundingBox3.from_dict(config["bbox"])


def _view_depth_paths(base: Path, view: dict) -> list[Path]:
    if "depths" in view:
        return [_resolve(base, p) for p in view["depths"]]
    if "depth_dir" in view:
        d = _resolve(base, view["depth_dir"])
        paths = sorted(d.glob(view.get("depth_glob", "*.pfm")))
        if not paths:
            raise InputError(f"no depth maps found in {d}")
        return paths
    raise InputError("view needs 'depths' or 'depth_dir'")


def cmd_lift(args) -> int:
    config, base, config_hash = _load_config(args.config)
    out_dir = Path(args.output or _resolve(base, config.get("output", ".")))
    out_dir.mkdir(parents=True, exist_ok=True)

    box = _bbox_from_config(config)
    corr = config.get("correction", {})
    threshold = args.threshold if args.threshold is not None else corr.get("threshold", 1.2)
    radius = args.radius if args.radius is not None else corr.get("radius", 2)

    views = config.get("views")
    if not views:
        raise InputError("lift: config has no views")

    banks = []
    view_stats = []
    n_frames_ref = None
    for vi, view in enumerate(views):
        stage = f"lift: view {vi}"
        cam = camera.load_camera(_resolve(base, view["camera"]))
        tracks = tracklift.read_tracks(_resolve(base, view["tracks"]))
        depth_paths = _view_depth_paths(base, view)
        maps = [tracklift.DepthMap(values=fileio.read_pfm(p), frame_index=k)
                for k, p in enumerate(depth_paths)]
        gt_map = tracklift.DepthMap(values=fileio.read_pfm(_resolve(base, view["gt_depth"])))
        t0 = int(view.get("t0", 0))
        n = len(maps)
        if n_frames_ref is None:
            n_frames_ref = n
        elif n != n_frames_ref:
            raise InputError(f"{stage}: {n} depth maps but other views have {n_frames_ref}")

        lifted = []
        discarded = corrected = 0
        for tr in tracks:
            if tr.n_frames != n:
                raise InputError(f"{stage}: track {tr.id} has {tr.n_frames} frames, expected {n}")
            if tr.t0_index != t0:
                raise InputError(f"{stage}: track {tr.id} t0 {tr.t0_index} != view t0 {t0}")
            seq = tracklift.sample_depth(tr, maps)
            result = tracklift.correct_track(tr, seq, maps, threshold=threshold, radius=radius)
            if result is None:
                discarded += 1
                continue
            tr2, seq = result
            if tr2 is not tr:
                corrected += 1
            try:
                gt = tracklift.gt_depth_lookup(tr2, gt_map)
                seq = tracklift.fill_occluded_depth(seq, tr2.visible)
                seq = tracklift.align_depth(seq, t0, gt)
            except DegenerateDataError:
                discarded += 1
                continue
            positions = tracklift.lift_track(cam, tr2, seq)
            lifted.append(tracklift.LiftedTrack(id=tr2.id, positions=positions,
                                                visible=tr2.visible.copy(), t0_index=t0))

        kept = tracklift.filter_by_bbox(lifted, box)
        banks.append((kept, t0, n))
        view_stats.append({
            "input_tracks": len(tracks),
            "corrected": corrected,
            "discarded": discarded,
            "outside_bbox": len(lifted) - len(kept),
            "kept": len(kept),
        })

    total_kept = sum(s["kept"] for s in view_stats)
    if total_kept == 0:
        raise InputError("lift: empty guidance: no trajectory survived")

    timeline, window_start, trajectories = tracklift.align_temporal(banks)
    bank_path = out_dir / "bank.jsonl"
    tracklift.write_bank(bank_path, trajectories)

    manifest = _manifest_base(config_hash)
    manifest.update({
        "command": "lift",
        "views": view_stats,
        "totals": {
            "input_tracks": sum(s["input_tracks"] for s in view_stats),
            "corrected": sum(s["corrected"] for s in view_stats),
            "discarded": sum(s["discarded"] for s in view_stats),
            "outside_bbox": sum(s["outside_bbox"] for s in view_stats),
            "kept": total_kept,
        },
        "window_start": int(window_start),
        "timeline": [int(t) for t in timeline],
        "bank": bank_path.name,
    })
    _write_json(out_dir / "lift_manifest.json", manifest)
    print(f"lift: kept {total_kept} trajectories "
          f"(window start {window_start}) -> {bank_path}")
    return 0


def _selection_for(config: dict, base: Path, gscene: scene.GaussianScene) -> np.ndarray:
    if "selection" in config:
        mask = scene.load_selection_mask(_resolve(base, config["selection"]))
        if mask.shape[0] != gscene.count:
            raise InputError("selection mask length does not match scene")
        return mask
    return scene.select_by_bbox(gscene, _bbox_from_config(config))


def cmd_deform(args) -> int:
    config, base, config_hash = _load_config(args.config)
    out_dir = Path(args.output or _resolve(base, config.get("output", ".")))
    out_dir.mkdir(parents=True, exist_ok=True)

    gscene = scene.load_scene(_resolve(base, config["scene"]))
    selection = _selection_for(config, base, gscene)
    if not selection.any():
        raise InputError("deform: empty selection")

    bank_path = Path(args.bank) if args.bank else out_dir / "bank.jsonl"
    anchors = tracklift.read_bank(bank_path)
    if not anchors:
        raise InputError("deform: empty guidance bank")

    tcfg_d = config.get("transfer", {})
    tcfg = deform.TransferConfig(
        mode=args.mode or tcfg_d.get("mode", "rigid"),
        K=args.K if args.K is not None else tcfg_d.get("K"),
        tau=args.tau if args.tau is not None else tcfg_d.get("tau"),
        estimate_rotation_scale=bool(tcfg_d.get("estimate_rotation_scale", False)),
    )
    dyn = deform.build_dynamic_scene(gscene, selection, anchors, tcfg)
    dyn_path = out_dir / "dynamic_scene.gsdyn"
    deform.save_dynamic_scene(dyn_path, dyn)
    scene.save_selection_mask(out_dir / "selection_used.txt", selection)

    manifest = _manifest_base(config_hash)
    manifest.update({
        "command": "deform",
        "mode": dyn.mode,
        "K": int(dyn.K),
        "tau": float(dyn.tau),
        "anchors": len(anchors),
        "source_views": len({int(a.source_view) for a in anchors}),
        "selected_gaussians": int(selection.sum()),
        "timesteps": int(dyn.n_steps),
        "dynamic_scene": dyn_path.name,
    })
    _write_json(out_dir / "deform_manifest.json", manifest)
    print(f"deform: mode={dyn.mode} K={dyn.K} tau={dyn.tau:.4g} "
          f"-> {dyn_path}")
    return 0


def _load_embeddings(config: dict, base: Path) -> metrics.EmbeddingSet | None:
    emb = config.get("embeddings")
    if not emb:
        return None
    frames = fileio.read_f32(_resolve(base, emb["frames"]))
    text = fileio.read_f32(_resolve(base, emb["text"])) if "text" in emb else None
    return metrics.EmbeddingSet(frame_embeddings=frames, text_embedding=text)


def cmd_metrics(args) -> int:
    config, base, config_hash = _load_config(args.config)
    out_dir = Path(args.output or _resolve(base, config.get("output", ".")))
    out_dir.mkdir(parents=True, exist_ok=True)

    gscene = scene.load_scene(_resolve(base, config["scene"]))
    embeddings = _load_embeddings(config, base)
    k_eval = int(config.get("k_eval", metrics.DEFAULT_K_EVAL))

    reports = []
    names = []
    for dyn_file in args.dyn_files:
        dyn = deform.load_dynamic_scene(dyn_file)
        if dyn.selection.shape[0] != gscene.count:
            raise InputError(f"metrics: {dyn_file} does not match the scene "
                             f"({dyn.selection.shape[0]} vs {gscene.count} Gaussians)")
        report = metrics.compute_report(dyn, gscene, k_eval=k_eval, embeddings=embeddings)
        name = Path(dyn_file).stem
        names.append(name)
        reports.append(report)
        metrics.write_report(out_dir / f"report_{name}.json", report)

    for name, report in zip(names, reports):
        print(f"[{name}]")
        for key, value in sorted(report.to_dict().items()):
            print(f"  {key}: {value}")

    manifest = _manifest_base(config_hash)
    manifest.update({"command": "metrics", "reports": names, "k_eval": k_eval})

    if len(reports) > 1:
        ranking = metrics.rank_reports(reports)
        _write_json(out_dir / "ranks.json", {"names": names, **{
            k: v for k, v in ranking.items()
        }})
        print("ranks (1 = best):")
        header = " ".join(f"{n:>18}" for n in names)
        print(f"{'metric':<22}{header}")
        for metric_name, ranks in ranking["per_metric"].items():
            row = " ".join(f"{r:>18}" for r in ranks)
            print(f"{metric_name:<22}{row}")
        for cat, avgs in ranking["category_average"].items():
            row = " ".join(f"{a:>18.2f}" for a in avgs)
            print(f"{'avg ' + cat:<22}{row}")
        row = " ".join(f"{r:>18}" for r in ranking["overall_rank"])
        print(f"{'overall rank':<22}{row}")
        manifest["overall_rank"] = ranking["overall_rank"]

    _write_json(out_dir / "metrics_manifest.json", manifest)
    return 0


def cmd_warp_flow(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    view_flow = fileio.read_flo(args.view_flow)
    time_flows = [fileio.read_flo(p) for p in args.time_flows] if args.time_flows else None
    if time_flows is not None and len(time_flows) != len(args.frames):
        raise InputError("warp-flow: need one time flow per frame")
    fills = [fileio.read_image(p) for p in args.fill] if args.fill else None
    if fills is not None and len(fills) not in (1, len(args.frames)):
        raise InputError("warp-flow: need one fill image, or one per frame")

    for i, frame_path in enumerate(args.frames):
        frame = fileio.read_image(frame_path)
        flow = view_flow
        if time_flows is not None:
            flow = guidance.compose_flow(view_flow, time_flows[i])
        fill = frame if fills is None else fills[i if len(fills) > 1 else 0]
        warped = guidance.warp_frame(frame, flow, fill)
        out_path = out_dir / f"warped_{Path(frame_path).stem}.png"
        fileio.write_image(out_path, warped)
        print(f"warp-flow: {frame_path} -> {out_path}")
    return 0


def cmd_sample_views(args) -> int:
    config, base, config_hash = _load_config(args.config)
    out_dir = Path(args.output or _resolve(base, config.get("output", ".")))
    out_dir.mkdir(parents=True, exist_ok=True)

    vs = config.get("view_sampling")
    if vs is None:
        raise InputError("sample-views: config is missing 'view_sampling'")
    cfg = camera.ViewSampleConfig(
        anchor_azimuth=np.deg2rad(vs.get("anchor_azimuth_deg", 0.0)),
        anchor_elevation=np.deg2rad(vs.get("anchor_elevation_deg", 0.0)),
        anchor_distance=vs.get("anchor_distance", 4.0),
        max_azimuth=np.deg2rad(vs.get("max_azimuth_deg", 0.0)),
        max_elevation=np.deg2rad(vs.get("max_elevation_deg", 0.0)),
        max_distance_fraction=vs.get("max_distance_fraction", 0.0),
        views_per_side=int(vs.get("views_per_side", 1)),
        sigma_azimuth=np.deg2rad(vs.get("sigma_azimuth_deg", 0.0)),
        sigma_elevation=np.deg2rad(vs.get("sigma_elevation_deg", 0.0)),
        sigma_distance=vs.get("sigma_distance", 0.0),
        center=vs.get("center", [0.0, 0.0, 0.0]),
        seed=int(args.seed if args.seed is not None else config.get("seed", 0)),
        K=np.asarray(vs["K"], dtype=np.float64).reshape(3, 3) if "K" in vs
        else camera.ViewSampleConfig.__dataclass_fields__["K"].default_factory(),
        width=int(vs.get("width", 512)),
        height=int(vs.get("height", 512)),
    )
    poses = camera.sample_viewpoints(cfg)
    poses_path = out_dir / "poses.json"
    camera.save_camera_list(poses_path, poses)

    manifest = _manifest_base(config_hash)
    manifest.update({"command": "sample-views", "poses": len(poses),
                     "seed": cfg.seed, "file": poses_path.name})
    _write_json(out_dir / "sample_views_manifest.json", manifest)
    print(f"sample-views: wrote {len(poses)} poses -> {poses_path}")
    return 0


def cmd_synth(args) -> int:
    config, base, config_hash = _load_config(args.config)
    out_dir = Path(args.output or _resolve(base, config.get("output", ".")))
    out_dir.mkdir(parents=True, exist_ok=True)

    sy = config.get("synth", {})
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    n_frames = int(config.get("frames", guidance.DEFAULT_FRAME_COUNT))
    if n_frames < 2:
        raise InputError("synth: frame count must be at least 2")
    gscene, selection, script = synth.make_scene(
        seed=seed,
        n_points=int(sy.get("n_points", 200)),
        n_static=int(sy.get("n_static", 100)),
        n_frames=n_frames,
        t0_index=int(sy.get("t0", 0)),
        max_rot_deg=float(sy.get("max_rot_deg", 6.0)),
        max_trans=float(sy.get("max_trans", 0.03)),
        scale_jitter=float(sy.get("scale_jitter", 0.0)),
    )

    width = int(sy.get("width", 512))
    height = int(sy.get("height", 512))
    focal = float(sy.get("focal", 600.0))
    K = np.array([[focal, 0.0, (width - 1) / 2.0],
                  [0.0, focal, (height - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    cam_specs = sy.get("cameras", [
        {"azimuth_deg": 0.0, "elevation_deg": 15.0, "distance": 4.0},
        {"azimuth_deg": 25.0, "elevation_deg": 10.0, "distance": 4.0},
    ])
    cams = []
    for spec in cam_specs:
        azm = np.deg2rad(spec.get("azimuth_deg", 0.0))
        elv = np.deg2rad(spec.get("elevation_deg", 0.0))
        dist = spec.get("distance", 4.0)
        eye = np.array([np.cos(elv) * np.cos(azm), np.cos(elv) * np.sin(azm),
                        np.sin(elv)]) * dist
        cams.append(camera.look_at(eye, np.zeros(3), K, width, height))

    scene.save_scene(gscene, out_dir / "scene.ply")
    scene.save_selection_mask(out_dir / "selection.txt", selection)
    _write_json(out_dir / "bbox.json", synth.default_bbox().to_dict())
    _write_json(out_dir / "script.json", script.to_dict())
    camera.save_camera_list(out_dir / "cameras.json", cams)

    views_cfg = []
    track_counts = []
    for vi, cam in enumerate(cams):
        vdir = out_dir / f"view{vi}"
        (vdir / "depth").mkdir(parents=True, exist_ok=True)
        (vdir / "flow").mkdir(parents=True, exist_ok=True)
        tracks, maps, gt_map, flows = synth.render_observations(gscene, script, cam)
        camera.save_camera(vdir / "camera.json", cam)
        tracklift.write_tracks(vdir / "tracks.jsonl", tracks)
        for k, dm in enumerate(maps):
            fileio.write_pfm(vdir / "depth" / f"frame_{k:03d}.pfm", dm.values)
        fileio.write_pfm(vdir / "gt_depth.pfm", gt_map.values)
        for k, flow in enumerate(flows):
            fileio.write_flo(vdir / "flow" / f"to_t0_{k:03d}.flo", flow)
        track_counts.append(len(tracks))
        views_cfg.append({
            "camera": f"view{vi}/camera.json",
            "tracks": f"view{vi}/tracks.jsonl",
            "depth_dir": f"view{vi}/depth",
            "gt_depth": f"view{vi}/gt_depth.pfm",
            "t0": int(script.t0_index),
        })
    for vi in range(len(cams) - 1):
        flow = synth.view_flow_t0(gscene, script, cams[vi], cams[vi + 1])
        fileio.write_flo(out_dir / f"view{vi}_to_view{vi + 1}_t0.flo", flow)

    pipeline_config = {
        "seed": seed,
        "frames": n_frames,
        "scene": "scene.ply",
        "selection": "selection.txt",
        "bbox": synth.default_bbox().to_dict(),
        "correction": {"threshold": 1.2, "radius": 2},
        # uniform weights: fixture anchors are exact, so tau adds nothing
        "transfer": config.get("transfer", {"mode": "rigid", "tau": 0.0}),
        # generation hyperparameters, recorded for provenance only
        "schedules": {"noise": list(guidance.NOISE_SCHEDULE),
                      "lambda_prev": list(guidance.LAMBDA_SCHEDULE),
                      "denoise_steps": guidance.DEFAULT_DENOISE_STEPS},
        "views": views_cfg,
        "output": ".",
    }
    _write_json(out_dir / "pipeline_config.json", pipeline_config)

    manifest = _manifest_base(config_hash)
    manifest.update({
        "command": "synth",
        "seed": seed,
        "points": gscene.count,
        "moving": int(selection.sum()),
        "frames": n_frames,
        "views": len(cams),
        "tracks_per_view": track_counts,
    })
    _write_json(out_dir / "synth_manifest.json", manifest)
    print(f"synth: {gscene.count} points, {len(cams)} views -> {out_dir}")
    return 0


def cmd_schedule(args) -> int:
    config, _, _ = _load_config(args.config) if args.config else ({}, Path("."), "")
    total = int(config.get("schedules", {}).get("total_steps", args.steps))
    noise = guidance.noise_schedule(total)
    lam = guidance.lambda_schedule(total)
    print(f"step  noise   lambda_prev   (over {total} steps; "
          f"{guidance.DEFAULT_DENOISE_STEPS} denoise steps per generation)")
    for step in range(total):
        print(f"{step:>4}  {guidance.schedule_value(noise, step):<6.4g}"
              f"  {guidance.schedule_value(lam, step):<6.4g}")
    print("videos  K")
    for v in range(1, 9):
        print(f"{v:>6}  {deform.schedule_K(v)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gslift",
        description="Lift 2D video motion into 3D and animate Gaussian-splat scenes.")
    parser.add_argument("--version", action="version", version=f"gslift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", help="tracks + depths -> anchor trajectory bank")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--threshold", type=float, default=None,
                   help="depth-ratio threshold for track correction")
    p.add_argument("--radius", type=int, default=None,
                   help="pixel search radius for track rescue")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("deform", help="anchor bank + scene -> dynamic scene")
    p.add_argument("config")
    p.add_argument("--bank", help="trajectory bank (default: <output>/bank.jsonl)")
    p.add_argument("--output")
    p.add_argument("--mode", choices=["linear", "rigid"])
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("metrics", help="score dynamic scene file(s)")
    p.add_argument("config")
    p.add_argument("dyn_files", nargs="+")
    p.add_argument("--output")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("warp-flow", help="warp frames through composed flows")
    p.add_argument("--view-flow", required=True, help=".flo cross-view flow at t0")
    p.add_argument("--frames", nargs="+", required=True)
    p.add_argument("--time-flows", nargs="*", default=None,
                   help=".flo flows from each frame to t0")
    p.add_argument("--fill", nargs="*", default=None,
                   help="fill image(s) for uncovered pixels (default: source frame)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_warp_flow)

    p = sub.add_parser("sample-views", help="sample camera poses on a sphere")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample_views)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth fixture")
    p.add_argument("config")
    p.add_argument("--output")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("schedule", help="print schedule tables")
    p.add_argument("config", nargs="?")
    p.add_argument("--steps", type=int, default=5)
    p.set_defaults(func=cmd_schedule)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GsliftError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
