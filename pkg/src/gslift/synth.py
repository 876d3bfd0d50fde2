"""Synthetic scenes with known motion, rendered to pipeline input files.

The generator builds a random point scene whose moving subset follows a
scripted similarity motion, then renders exactly what the real pipeline
consumes: 2D tracks (exact projections), per-frame depth maps, the
ground-truth depth at the t0 frame, and dense flow fields. Every depth
sample a track can take lands inside its own footprint, so tracks sample
their exact depth and the full lift can be verified against the script.

Points are rasterized into the up-to-4 pixels of their bilinear
footprint over a constant-depth background plane, with nearer points
winning contested pixels. A point is visible in a frame only while it
owns its whole footprint; anything else is flagged occluded, which
exercises the spline-fill path downstream.
"""

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel, project
from .errors import InputError
from .rotation import quat_from_axis_angle, quat_multiply, quat_normalize, quat_rotate, random_quat
from .scene import BoundingBox3, GaussianScene, SelectionMask
from .tracklift import DepthMap, Track2D

_MOVING_X = (0.05, 0.45)
_STATIC_X = (-0.45, -0.05)


def default_bbox() -> BoundingBox3:
    """Box around the moving half of a generated scene."""
    return BoundingBox3(center=(0.25, 0.0, 0.0), half_extents=(0.22, 0.6, 0.6))


@dataclass
class MotionScript:
    """Absolute per-timestep similarity applied to the selected subset."""

    scales: np.ndarray        # (T,)
    rotations: np.ndarray     # (T, 4) unit quaternions wxyz
    translations: np.ndarray  # (T, 3)
    selection: SelectionMask  # (N,) moving subset
    t0_index: int

    @property
    def n_frames(self) -> int:
        return int(self.scales.shape[0])

    def apply(self, points: np.ndarray, k: int) -> np.ndarray:
        return self.scales[k] * quat_rotate(self.rotations[k], points) + self.translations[k]

    def validate(self) -> None:
        k = self.t0_index
        if (self.scales[k] != 1.0 or np.any(self.translations[k] != 0.0)
                or np.any(self.rotations[k] != np.array([1.0, 0.0, 0.0, 0.0]))):
            raise InputError("motion script must be the identity at its t0 frame")

    def to_dict(self) -> dict:
        return {
            "t0": int(self.t0_index),
            "selection": "".join("1" if v else "0" for v in self.selection),
            "frames": [
                {
                    "s": float(self.scales[k]),
                    "q": [float(v) for v in self.rotations[k]],
                    "t": [float(v) for v in self.translations[k]],
                }
                for k in range(self.n_frames)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionScript":
        frames = d["frames"]
        return cls(
            scales=np.array([f["s"] for f in frames]),
            rotations=np.array([f["q"] for f in frames]),
            translations=np.array([f["t"] for f in frames]),
            selection=np.array([c == "1" for c in d["selection"]], dtype=bool),
            t0_index=int(d["t0"]),
        )


def _compose(sa, qa, ta, sb, qb, tb):
    """Similarity a applied after similarity b."""
    return sa * sb, quat_normalize(quat_multiply(qa, qb)), sa * quat_rotate(qa, tb) + ta


def _invert(s, q, t):
    qi = q * np.array([1.0, -1.0, -1.0, -1.0])
    return 1.0 / s, qi, -quat_rotate(qi, t) / s


def _jittered_slab(rng: np.random.Generator, n: int, x_range, yz_half=0.45) -> np.ndarray:
    """n stratified points in a slab: jittered 2-D grid over (y, z),
    uniform random depth (x).

    The fixture cameras look roughly along -x, so separating points on
    the (y, z) plane keeps their bilinear footprints disjoint in image
    space, which the exactness oracles rely on.
    """
    per_axis = int(np.ceil(np.sqrt(n)))
    cell = 2.0 * yz_half / per_axis
    centers = -yz_half + (np.arange(per_axis) + 0.5) * cell
    grid = np.stack(np.meshgrid(centers, centers, indexing="ij"), axis=-1).reshape(-1, 2)
    chosen = grid[rng.permutation(grid.shape[0])[:n]]
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(x_range[0], x_range[1], size=n)
    pts[:, 1:] = chosen + rng.uniform(-0.2, 0.2, size=(n, 2)) * cell
    return pts


def make_scene(seed: int, n_points: int, n_static: int, n_frames: int = 8,
               t0_index: int = 0, max_rot_deg: float = 10.0,
               max_trans: float = 0.05, scale_jitter: float = 0.0):
    """Deterministic random scene plus a smooth similarity script.

    The moving subset lives in the +x half of the unit box (covered by
    default_bbox()), static points in the -x half; both are stratified
    samples so that no two points share an image footprint under the
    cameras used by the fixtures. Per-step rotation is bounded by
    max_rot_deg about the moving centroid, translation by max_trans, and
    the per-step scale factor by 1 +/- scale_jitter (zero keeps the
    script rigid). The script is the identity at t0.
    """
    if n_points < 4:
        raise InputError("need at least 4 points")
    if not 0 <= n_static <= n_points:
        raise InputError("n_static out of range")
    if not 0 <= t0_index < n_frames:
        raise InputError("t0_index out of range")

    rng = np.random.default_rng(seed)
    n_moving = n_points - n_static
    positions = np.empty((n_points, 3))
    if n_moving:
        positions[:n_moving] = _jittered_slab(rng, n_moving, _MOVING_X)
    if n_static:
        positions[n_moving:] = _jittered_slab(rng, n_static, _STATIC_X)

    log_scales = rng.uniform(-6.0, -3.0, size=(n_points, 3))
    scene = GaussianScene(
        positions=positions,
        scales=np.exp(log_scales),
        rotations=random_quat(rng, n_points),
        opacities=rng.uniform(0.1, 0.9, size=n_points),
        colors=rng.normal(0.0, 0.5, size=(n_points, 3)),
    )
    selection = np.zeros(n_points, dtype=bool)
    selection[:n_moving] = True

    center = positions[:n_moving].mean(axis=0) if n_moving else np.zeros(3)
    max_rot = np.deg2rad(max_rot_deg)

    # per-step deltas, composed into absolute transforms, then re-based at t0
    scales = np.ones(n_frames)
    rotations = np.zeros((n_frames, 4))
    rotations[:, 0] = 1.0
    translations = np.zeros((n_frames, 3))
    for k in range(1, n_frames):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = quat_from_axis_angle(axis, rng.uniform(0.0, max_rot))
        ds = 1.0 + rng.uniform(-scale_jitter, scale_jitter)
        # rotate/scale about the moving centroid plus a small drift
        dt = center - ds * quat_rotate(dq, center) + rng.uniform(-max_trans, max_trans, size=3)
        scales[k], rotations[k], translations[k] = _compose(
            ds, dq, dt, scales[k - 1], rotations[k - 1], translations[k - 1])

    s0_inv, q0_inv, t0_inv = _invert(scales[t0_index], rotations[t0_index],
                                     translations[t0_index])
    for k in range(n_frames):
        scales[k], rotations[k], translations[k] = _compose(
            scales[k], rotations[k], translations[k], s0_inv, q0_inv, t0_inv)
    scales[t0_index] = 1.0
    rotations[t0_index] = np.array([1.0, 0.0, 0.0, 0.0])
    translations[t0_index] = np.zeros(3)

    script = MotionScript(scales=scales, rotations=rotations,
                          translations=translations, selection=selection,
                          t0_index=t0_index)
    script.validate()
    return scene, selection, script


def script_positions(scene: GaussianScene, script: MotionScript) -> np.ndarray:
    """Ground-truth point positions per frame, shape (T, N, 3)."""
    out = np.repeat(scene.positions[None, :, :], script.n_frames, axis=0)
    sel = script.selection
    for k in range(script.n_frames):
        out[k, sel] = script.apply(scene.positions[sel], k)
    return out


def _footprint(u: float, v: float):
    u0 = int(np.floor(u))
    v0 = int(np.floor(v))
    return [(v0, u0), (v0, u0 + 1), (v0 + 1, u0), (v0 + 1, u0 + 1)]


def render_observations(scene: GaussianScene, script: MotionScript, cam: CameraModel,
                        bg_depth: float | None = None):
    """Exact tracks, depth maps, GT depth and flows for one viewpoint.

    Returns (tracks, depth_maps, gt_map, flows_to_t0). Tracks exist for
    every point visible at the t0 frame; flows_to_t0[k] maps frame-k
    pixels of moving content to their t0 positions (zero on background).
    Raises InputError when a point leaves the camera frustum or the safe
    interior of the image at any frame.
    """
    pts = script_positions(scene, script)
    n_frames, n_points = pts.shape[:2]
    h, w = cam.height, cam.width

    uvs = np.empty((n_frames, n_points, 2))
    depths = np.empty((n_frames, n_points))
    for k in range(n_frames):
        try:
            u, v, d = project(cam, pts[k])
        except InputError as exc:
            raise InputError(f"fixture: frame {k}: {exc}") from exc
        if np.any(u < 1) or np.any(u > w - 2) or np.any(v < 1) or np.any(v > h - 2):
            raise InputError(f"fixture: frame {k}: point projects outside the safe image area")
        uvs[k, :, 0] = u
        uvs[k, :, 1] = v
        depths[k] = d

    if bg_depth is None:
        bg_depth = 2.0 * float(depths.max())
    if bg_depth <= depths.max():
        raise InputError("fixture: background depth must exceed every point depth")

    maps = []
    owns = np.zeros((n_frames, n_points), dtype=bool)
    for k in range(n_frames):
        values = np.full((h, w), bg_depth)
        order = np.argsort(-depths[k], kind="stable")  # far to near
        for i in order:
            for row, col in _footprint(uvs[k, i, 0], uvs[k, i, 1]):
                if depths[k, i] < values[row, col]:
                    values[row, col] = depths[k, i]
        for i in range(n_points):
            owns[k, i] = all(values[row, col] == depths[k, i]
                             for row, col in _footprint(uvs[k, i, 0], uvs[k, i, 1]))
        maps.append(DepthMap(values=values, frame_index=k))

    t0 = script.t0_index
    tracks = [
        Track2D(id=i, uv=uvs[:, i, :], visible=owns[:, i], t0_index=t0)
        for i in range(n_points) if owns[t0, i]
    ]

    flows = []
    for k in range(n_frames):
        flow = np.zeros((h, w, 2))
        for i in range(n_points):
            if not owns[k, i]:
                continue
            delta = uvs[t0, i] - uvs[k, i]
            for row, col in _footprint(uvs[k, i, 0], uvs[k, i, 1]):
                flow[row, col] = delta
        flows.append(flow)

    gt_map = DepthMap(values=maps[t0].values.copy(), frame_index=t0)
    return tracks, maps, gt_map, flows


def view_flow_t0(scene: GaussianScene, script: MotionScript,
                 cam_a: CameraModel, cam_b: CameraModel) -> np.ndarray:
    """Cross-view flow at the t0 frame: pixels of cam_a content move to
    their cam_b positions; background stays zero."""
    pts = scene.positions  # canonical == t0 (script is identity there)
    ua, va, da = project(cam_a, pts)
    ub, vb, _ = project(cam_b, pts)

    h, w = cam_a.height, cam_a.width
    values = np.full((h, w), np.inf)
    n_points = pts.shape[0]
    order = np.argsort(-da, kind="stable")
    inside = (ua >= 1) & (ua <= w - 2) & (va >= 1) & (va <= h - 2)
    for i in order:
        if not inside[i]:
            continue
        for row, col in _footprint(ua[i], va[i]):
            if da[i] < values[row, col]:
                values[row, col] = da[i]

    flow = np.zeros((h, w, 2))
    for i in range(n_points):
        if not inside[i]:
            continue
        if all(values[row, col] == da[i] for row, col in _footprint(ua[i], va[i])):
            delta = np.array([ub[i] - ua[i], vb[i] - va[i]])
            for row, col in _footprint(ua[i], va[i]):
                flow[row, col] = delta
    return flow
