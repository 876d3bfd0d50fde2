import numpy as np
import pytest

from gslift import camera, deform, synth, tracklift as tl


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fixture_camera(azimuth_deg=0.0, elevation_deg=15.0, distance=4.0,
                   focal=600.0, size=512):
    azm = np.deg2rad(azimuth_deg)
    elv = np.deg2rad(elevation_deg)
    eye = np.array([np.cos(elv) * np.cos(azm), np.cos(elv) * np.sin(azm),
                    np.sin(elv)]) * distance
    K = np.array([[focal, 0.0, (size - 1) / 2.0],
                  [0.0, focal, (size - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    return camera.look_at(eye, np.zeros(3), K, size, size)


def lift_view(scene, script, cam, threshold=1.2, radius=2):
    """In-memory lift of one rendered view; returns (kept tracks, stats)."""
    tracks, maps, gt_map, _flows = synth.render_observations(scene, script, cam)
    lifted = []
    discarded = corrected = 0
    for tr in tracks:
        seq = tl.sample_depth(tr, maps)
        res = tl.correct_track(tr, seq, maps, threshold=threshold, radius=radius)
        if res is None:
            discarded += 1
            continue
        tr2, seq = res
        if tr2 is not tr:
            corrected += 1
        gt = tl.gt_depth_lookup(tr2, gt_map)
        seq = tl.fill_occluded_depth(seq, tr2.visible)
        seq = tl.align_depth(seq, script.t0_index, gt)
        pos = tl.lift_track(cam, tr2, seq)
        lifted.append(tl.LiftedTrack(id=tr2.id, positions=pos,
                                     visible=tr2.visible.copy(), t0_index=tr2.t0_index))
    kept = tl.filter_by_bbox(lifted, synth.default_bbox())
    return kept, {"input": len(tracks), "discarded": discarded,
                  "corrected": corrected, "kept": len(kept)}


def run_synthetic_pipeline(seed=0, n_points=200, n_static=100, n_frames=8,
                           mode="rigid", tau=0.0, view_specs=((0.0, 15.0), (25.0, 10.0))):
    """Full in-memory pipeline on a synthetic fixture.

    Returns (scene, selection, script, cams, anchors, dyn).
    """
    scene, selection, script = synth.make_scene(
        seed=seed, n_points=n_points, n_static=n_static, n_frames=n_frames)
    cams = [fixture_camera(azm, elv) for azm, elv in view_specs]
    banks = [(lift_view(scene, script, cam)[0], script.t0_index, script.n_frames)
             for cam in cams]
    _timeline, _w, anchors = tl.align_temporal(banks)
    dyn = deform.build_dynamic_scene(
        scene, selection, anchors, deform.TransferConfig(mode=mode, tau=tau))
    return scene, selection, script, cams, anchors, dyn
