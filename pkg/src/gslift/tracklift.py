"""Turn 2D point tracks plus depth maps into world-space anchor trajectories.

Stage order (per track): sample per-frame depth under the track, repair
or discard tracks with inconsistent consecutive depths, fill occluded
frames with a natural cubic spline, rescale so the depth at the t0 frame
matches the scene's ground-truth depth, unproject to 3D, keep only
trajectories inside the animated bounding box at t0, and finally place
all per-video trajectory banks on one global timeline.

Depth values of NaN mark absent samples (occluded frames or samples that
touched invalid depth pixels).
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .camera import CameraModel, unproject
from .errors import DegenerateDataError, FormatError, InputError
from .scene import BoundingBox3


@dataclass
class Track2D:
    id: int
    uv: np.ndarray        # (n, 2) pixel coordinates per frame
    visible: np.ndarray   # (n,) bool
    t0_index: int

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if self.uv.shape[0] != self.visible.shape[0]:
            raise InputError(f"track {self.id}: uv/visible length mismatch")
        if not 0 <= self.t0_index < self.uv.shape[0]:
            raise InputError(f"track {self.id}: t0_index out of range")
        if not self.visible[self.t0_index]:
            raise InputError(f"track {self.id}: must be visible at its t0 frame")

    @property
    def n_frames(self) -> int:
        return self.uv.shape[0]


@dataclass
class DepthSequence:
    """Per-frame depths of one track at the successive processing stages."""

    raw: np.ndarray                     # (n,) NaN where absent
    filled: np.ndarray | None = None    # (n,) after spline fill
    aligned: np.ndarray | None = None   # (n,) after ground-truth alignment
    gt_depth_t0: float | None = None


@dataclass
class DepthMap:
    values: np.ndarray   # (H, W), nonpositive = invalid pixel
    frame_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError("depth map must be a 2-D array")
        if not np.all(np.isfinite(self.values)):
            raise InputError(f"depth map frame {self.frame_index} contains non-finite values")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass
class AnchorTrajectory:
    """World-space point path on the global timeline."""

    id: int
    positions: np.ndarray   # (T, 3), NaN rows where unobserved
    observed: np.ndarray    # (T,) bool
    source_view: int
    t0_global: int          # timeline index of the t0 frame

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.observed = np.asarray(self.observed, dtype=bool).reshape(-1)
        if self.positions.shape[0] != self.observed.shape[0]:
            raise InputError(f"trajectory {self.id}: positions/observed length mismatch")
        if not self.observed.any():
            raise InputError(f"trajectory {self.id}: no observed timestep")
        if not np.all(np.isfinite(self.positions[self.observed])):
            raise InputError(f"trajectory {self.id}: non-finite observed position")


@dataclass
class LiftedTrack:
    """Per-video intermediate: a track lifted to 3D on its own frame axis."""

    id: int
    positions: np.ndarray   # (n, 3)
    visible: np.ndarray     # (n,) bool
    t0_index: int


def _bilinear(values: np.ndarray, u: float, v: float):
    """Bilinear sample with invalid-pixel gating.

    Returns (value, valid); valid is False when any pixel with nonzero
    interpolation weight is invalid (nonpositive). Coordinates must lie in
    [0, W-1] x [0, H-1]; the caller checks bounds.
    """
    h, w = values.shape
    u0 = min(int(math.floor(u)), w - 2) if w > 1 else 0
    v0 = min(int(math.floor(v)), h - 2) if h > 1 else 0
    a = u - u0
    b = v - v0
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    corners = ((v0, u0, (1 - a) * (1 - b)), (v0, u1, a * (1 - b)),
               (v1, u0, (1 - a) * b), (v1, u1, a * b))
    total = 0.0
    for row, col, weight in corners:
        if weight <= 0.0:
            continue
        val = values[row, col]
        if val <= 0.0:
            return 0.0, False
        total += weight * val
    return total, True


def _in_bounds(dm: DepthMap, u: float, v: float) -> bool:
    return 0.0 <= u <= dm.width - 1 and 0.0 <= v <= dm.height - 1


def sample_depth(track: Track2D, maps: list[DepthMap]) -> DepthSequence:
    """Per-frame bilinear depth under the track; absent where occluded or
    where the sample footprint touches an invalid pixel."""
    if len(maps) != track.n_frames:
        raise InputError(f"track {track.id}: {track.n_frames} frames but {len(maps)} depth maps")
    raw = np.full(track.n_frames, np.nan)
    for t in range(track.n_frames):
        if not track.visible[t]:
            continue
        u, v = track.uv[t]
        if not _in_bounds(maps[t], u, v):
            raise InputError(
                f"track {track.id}: uv ({u:.2f}, {v:.2f}) out of bounds on visible frame {t}")
        val, valid = _bilinear(maps[t].values, u, v)
        if valid:
            raw[t] = val
    return DepthSequence(raw=raw)


def correct_track(track: Track2D, seq: DepthSequence, maps: list[DepthMap],
                  threshold: float = 1.2, radius: int = 2):
    """Repair tracking jumps by re-anchoring to a nearby pixel, or discard.

    Scans consecutive frames with present depth in time order. When the
    depth ratio max/min reaches `threshold`, the (2*radius+1)^2 pixel
    neighborhood of the later frame's position is searched for the pixel
    minimizing the ratio; if even the best pixel fails the threshold the
    whole track is discarded (returns None).
    """
    raw = seq.raw.copy()
    uv = track.uv.copy()
    present = np.flatnonzero(np.isfinite(raw))
    changed = False
    for i, j in zip(present[:-1], present[1:]):
        d_prev, d_next = raw[i], raw[j]
        ratio = max(d_prev, d_next) / min(d_prev, d_next)
        if ratio < threshold:
            continue
        dm = maps[j]
        cx = int(round(uv[j, 0]))
        cy = int(round(uv[j, 1]))
        best = (ratio, None, None)
        for py in range(cy - radius, cy + radius + 1):
            if not 0 <= py < dm.height:
                continue
            for px in range(cx - radius, cx + radius + 1):
                if not 0 <= px < dm.width:
                    continue
                val = dm.values[py, px]
                if val <= 0:
                    continue
                cand = max(d_prev, val) / min(d_prev, val)
                if cand < best[0]:
                    best = (cand, px, py)
        if best[0] >= threshold or best[1] is None:
            return None
        uv[j] = (float(best[1]), float(best[2]))
        raw[j] = dm.values[best[2], best[1]]
        changed = True

    new_track = Track2D(id=track.id, uv=uv, visible=track.visible.copy(),
                        t0_index=track.t0_index) if changed else track
    return new_track, DepthSequence(raw=raw, gt_depth_t0=seq.gt_depth_t0)


def fill_occluded_depth(seq: DepthSequence, visible: np.ndarray) -> DepthSequence:
    """Fill absent depths with a natural cubic spline through the known
    frames; beyond the first/last knot extend linearly with the spline's
    endpoint slope."""
    raw = seq.raw
    visible = np.asarray(visible, dtype=bool)
    knots = np.flatnonzero(visible & np.isfinite(raw))
    if knots.size < 2:
        raise DegenerateDataError(
            f"cannot fill occlusions from {knots.size} known depth value(s)")

    filled = raw.copy()
    frames = np.arange(raw.shape[0], dtype=np.float64)
    spline = CubicSpline(knots.astype(np.float64), raw[knots], bc_type="natural")

    lo, hi = knots[0], knots[-1]
    interior = (frames >= lo) & (frames <= hi)
    fill_mask = ~np.isfinite(filled) | ~visible
    fill_mask[knots] = False
    inner = fill_mask & interior
    filled[inner] = spline(frames[inner])

    before = fill_mask & (frames < lo)
    if before.any():
        slope = float(spline(float(lo), 1))
        filled[before] = raw[lo] + slope * (frames[before] - lo)
    after = fill_mask & (frames > hi)
    if after.any():
        slope = float(spline(float(hi), 1))
        filled[after] = raw[hi] + slope * (frames[after] - hi)

    return DepthSequence(raw=raw.copy(), filled=filled, gt_depth_t0=seq.gt_depth_t0)


def align_depth(seq: DepthSequence, t0: int, gt: float) -> DepthSequence:
    """Rescale filled depths so the t0 frame meets the ground truth exactly."""
    if seq.filled is None:
        raise InputError("align_depth requires filled depths")
    if gt <= 0:
        raise InputError(f"ground-truth depth must be positive, got {gt}")
    ref = seq.filled[t0]
    if not np.isfinite(ref) or ref <= 0:
        raise DegenerateDataError(f"degenerate depth {ref} at the t0 frame")
    aligned = seq.filled * (gt / ref)
    aligned[t0] = gt  # exact by construction, not just up to rounding
    return DepthSequence(raw=seq.raw.copy(), filled=seq.filled.copy(),
                         aligned=aligned, gt_depth_t0=gt)


def gt_depth_lookup(track: Track2D, gt_map: DepthMap) -> float:
    """Ground-truth depth under the track's t0 position (bilinear)."""
    u, v = track.uv[track.t0_index]
    if not _in_bounds(gt_map, u, v):
        raise InputError(
            f"track {track.id}: t0 position ({u:.2f}, {v:.2f}) outside the GT depth map")
    val, valid = _bilinear(gt_map.values, u, v)
    if not valid:
        raise DegenerateDataError(f"track {track.id}: no valid ground-truth depth at t0")
    return float(val)


def lift_track(cam: CameraModel, track: Track2D, seq: DepthSequence) -> np.ndarray:
    """Unproject every frame of the track with its aligned depth."""
    if seq.aligned is None:
        raise InputError("lift_track requires aligned depths")
    return unproject(cam, track.uv[:, 0], track.uv[:, 1], seq.aligned)


def filter_by_bbox(tracks: list[LiftedTrack], box: BoundingBox3,
                   t0: int | None = None) -> list[LiftedTrack]:
    """Keep trajectories whose position at the t0 frame lies inside the box."""
    kept = []
    for tr in tracks:
        idx = tr.t0_index if t0 is None else t0
        if box.contains(tr.positions[idx]):
            kept.append(tr)
    return kept


def align_temporal(banks: list[tuple[list[LiftedTrack], int, int]]):
    """Place per-video trajectory banks on one global timeline.

    Every bank's t0 frame is pinned to global timestep 0. Among all
    length-n windows the one covering the most (trajectory, timestep)
    observations wins, where an observation is a frame the trajectory was
    actually visible in; ties go to the window with the largest start, so
    t0 sits as early as possible inside it. Occluded frames carry
    spline-filled estimates rather than measurements, so they are also
    marked unobserved in the output and skipped by downstream estimation.

    Returns (timeline, window_start, trajectories) where timeline is the
    array of global timesteps and trajectories are re-indexed
    AnchorTrajectory objects with observed flags.
    """
    if not banks:
        raise InputError("align_temporal requires at least one bank")
    n = banks[0][2]
    for _, t0_index, bank_n in banks:
        if bank_n != n:
            raise InputError("all banks must share the same frame count")
        if not 0 <= t0_index < n:
            raise InputError(f"bank t0_index {t0_index} outside [0, {n})")

    starts = [-t0 for _, t0, _ in banks]
    # visible observations per bank frame
    frame_counts = []
    for tracks, _, _ in banks:
        counts = np.zeros(n, dtype=np.int64)
        for tr in tracks:
            counts += np.asarray(tr.visible, dtype=np.int64)
        frame_counts.append(counts)
    # every candidate window must contain global timestep 0, where the
    # t0 frames are pinned
    w_lo, w_hi = 1 - n, 0

    best_w, best_support = None, -1
    for w in range(w_lo, w_hi + 1):
        support = 0
        for start, counts in zip(starts, frame_counts):
            f_lo = max(0, w - start)
            f_hi = min(n, w + n - start)
            if f_hi > f_lo:
                support += int(counts[f_lo:f_hi].sum())
        if support >= best_support:  # >= keeps the latest window on ties
            best_w, best_support = w, support

    timeline = np.arange(best_w, best_w + n, dtype=np.int64)
    trajectories = []
    for view, ((tracks, t0_index, _), start) in enumerate(zip(banks, starts)):
        for tr in tracks:
            positions = np.full((n, 3), np.nan)
            observed = np.zeros(n, dtype=bool)
            for k in range(n):
                g = best_w + k          # global timestep of window slot k
                f = g - start           # frame index within this bank
                if 0 <= f < n and tr.visible[f]:
                    positions[k] = tr.positions[f]
                    observed[k] = True
            trajectories.append(AnchorTrajectory(
                id=tr.id, positions=positions, observed=observed,
                source_view=view, t0_global=-best_w))
    return timeline, best_w, trajectories


def read_tracks(path) -> list[Track2D]:
    """Tracks come as JSON lines: {"id", "t0", "uv": [[u, v], ...], "visible": [...]}."""
    tracks = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                tracks.append(Track2D(id=int(obj["id"]), uv=obj["uv"],
                                      visible=obj["visible"], t0_index=int(obj["t0"])))
            except (KeyError, ValueError, TypeError, InputError) as exc:
                raise FormatError(f"{path}:{lineno}: bad track record: {exc}") from exc
    return tracks


def write_tracks(path, tracks: list[Track2D]) -> None:
    with open(path, "w") as fh:
        for tr in tracks:
            fh.write(json.dumps({
                "id": int(tr.id),
                "t0": int(tr.t0_index),
                "uv": [[float(u), float(v)] for u, v in tr.uv],
                "visible": [bool(v) for v in tr.visible],
            }) + "\n")


def write_bank(path, trajectories: list[AnchorTrajectory]) -> None:
    with open(path, "w") as fh:
        for tr in trajectories:
            positions = [
                [float(p[0]), float(p[1]), float(p[2])] if obs else None
                for p, obs in zip(tr.positions, tr.observed)
            ]
            fh.write(json.dumps({
                "id": int(tr.id),
                "source_view": int(tr.source_view),
                "t0_global": int(tr.t0_global),
                "positions": positions,
            }) + "\n")


def read_bank(path) -> list[AnchorTrajectory]:
    trajectories = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                raw = obj["positions"]
                positions = np.full((len(raw), 3), np.nan)
                observed = np.zeros(len(raw), dtype=bool)
                for k, p in enumerate(raw):
                    if p is not None:
                        positions[k] = p
                        observed[k] = True
                trajectories.append(AnchorTrajectory(
                    id=int(obj["id"]), positions=positions, observed=observed,
                    source_view=int(obj["source_view"]), t0_global=int(obj["t0_global"])))
            except (KeyError, ValueError, TypeError, InputError) as exc:
                raise FormatError(f"{path}:{lineno}: bad trajectory record: {exc}") from exc
    return trajectories
