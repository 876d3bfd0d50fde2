"""Anchor-driven motion transfer onto individual Gaussians.

Each selected Gaussian is tied to the K nearest anchor trajectories at
the shared t0 frame. Per consecutive timestep pair the neighbor motion is
turned into a per-Gaussian update, either as a distance-weighted average
of anchor displacements (linear blending) or as the weighted
least-squares similarity transform aligning the neighbor cloud across the
two steps (weighted Kabsch/Umeyama). Updates compose cumulatively into a
DynamicScene: per-timestep translation, rotation delta and scale factor
relative to the canonical scene.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import DegenerateDataError, InputError
from .rotation import matrix_to_quat, quat_multiply, quat_normalize
from .scene import GaussianScene, SelectionMask

K_MIN = 50
K_MAX = 150
_RANK_RTOL = 1e-9
_TINY = 1e-30

_DYN_MAGIC = b"GSDYN"
_DYN_VERSION = 1


@dataclass
class TransferConfig:
    mode: str = "rigid"                     # "linear" or "rigid"
    K: int | None = None                    # None: schedule_K from video count
    tau: float | None = None                # None: default_tau from anchor spacing
    estimate_rotation_scale: bool = False   # linear mode only

    def __post_init__(self):
        if self.mode not in ("linear", "rigid"):
            raise InputError(f"transfer mode must be 'linear' or 'rigid', got {self.mode!r}")


class KnnIndex:
    """k-nearest-neighbor index over anchor positions at t0."""

    def __init__(self, positions: np.ndarray):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InputError("KnnIndex expects (A, 3) positions")
        self._tree = cKDTree(self.positions)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def query(self, points: np.ndarray, k: int):
        """Distances and indices of the min(k, count) nearest anchors,
        sorted by nondecreasing distance. Shapes (N, k_eff)."""
        k_eff = min(k, self.count)
        if k_eff < 1:
            raise InputError("KnnIndex.query on an empty index")
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dist, idx = self._tree.query(pts, k=k_eff)
        if k_eff == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        return dist, idx.astype(np.int64)


def knn_weights(distances: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of -tau * distance along the last axis (max-subtracted)."""
    d = np.asarray(distances, dtype=np.float64)
    logits = -tau * d
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def linear_transfer(displacements: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted average of anchor displacements."""
    w = np.asarray(weights, dtype=np.float64)
    return np.einsum("k,ki->i", w, np.asarray(displacements, dtype=np.float64))


def weighted_umeyama(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted similarity fit: minimizes sum_j w_j ||s R x_j + t - y_j||^2.

    Returns (s, R, t) with det(R) = +1 and s > 0. Raises
    DegenerateDataError for fewer than 3 points, coincident sources or a
    rank-deficient weighted covariance; callers fall back to
    translation-only transfer.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[0] < 3:
        raise DegenerateDataError(f"similarity fit needs >= 3 points, got {x.shape[0]}")
    w = w / w.sum()

    xbar = w @ x
    ybar = w @ y
    xc = x - xbar
    yc = y - ybar
    cov = (w[:, None] * yc).T @ xc
    varx = float(np.sum(w * np.sum(xc * xc, axis=1)))

    U, D, Vt = np.linalg.svd(cov)
    sign = float(np.sign(np.linalg.det(U) * np.linalg.det(Vt))) or 1.0
    if varx <= _TINY or D[0] <= _TINY or D[1] <= _RANK_RTOL * D[0]:
        raise DegenerateDataError("rank-deficient neighbor configuration")
    R = (U * np.array([1.0, 1.0, sign])) @ Vt
    s = (D[0] + D[1] + sign * D[2]) / varx
    if s <= 0:
        raise DegenerateDataError("similarity fit collapsed to nonpositive scale")
    t = ybar - s * R @ xbar
    return float(s), R, t


def rotation_with_fixed_translation(x: np.ndarray, y: np.ndarray, w: np.ndarray,
                                    t_fixed: np.ndarray):
    """Best rotation and scale with the translation held fixed.

    Minimizes sum_j w_j ||s R x_j + t_fixed - y_j||^2 over R and s only
    (targets centered by t_fixed). Returns (R, s); degenerate
    configurations return (I, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[0] < 3:
        return np.eye(3), 1.0
    w = w / w.sum()

    yprime = y - np.asarray(t_fixed, dtype=np.float64)
    B = (w[:, None] * yprime).T @ x
    sx2 = float(np.sum(w * np.sum(x * x, axis=1)))

    U, D, Vt = np.linalg.svd(B)
    sign = float(np.sign(np.linalg.det(U) * np.linalg.det(Vt))) or 1.0
    if sx2 <= _TINY or D[0] <= _TINY or D[1] <= _RANK_RTOL * D[0]:
        return np.eye(3), 1.0
    R = (U * np.array([1.0, 1.0, sign])) @ Vt
    s = (D[0] + D[1] + sign * D[2]) / sx2
    if s <= 0:
        return np.eye(3), 1.0
    return R, float(s)


def rigid_transfer(mu: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Move one Gaussian with the similarity fitted to its anchor neighbors.

    Returns (translation of mu, rotation delta quaternion, scale factor).
    Degenerate neighbor sets fall back to translation-only.
    """
    mu = np.asarray(mu, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    w = w / w.sum()
    try:
        s, R, t = weighted_umeyama(x, y, w)
    except DegenerateDataError:
        disp = w @ (np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64))
        return disp, np.array([1.0, 0.0, 0.0, 0.0]), 1.0
    disp = s * R @ mu + t - mu
    return disp, matrix_to_quat(R), s


def schedule_K(videos_lifted: int, available: int | None = None) -> int:
    """Neighbor count for a given number of lifted guidance videos.

    Linear ramp of 25 per video from K_MIN, clamped to [K_MIN, K_MAX] and
    to the available anchor count.
    """
    if videos_lifted < 1:
        raise InputError("videos_lifted must be >= 1")
    k = min(K_MAX, K_MIN + 25 * (videos_lifted - 1))
    if available is not None:
        k = max(1, min(k, available))
    return k


def default_tau(anchor_positions: np.ndarray) -> float:
    """High temperature tied to the anchor density: 10 / median spacing,
    where spacing is each anchor's distance to its nearest neighbor.

    Near-zero spacings are ignored: the same physical point lifted from
    several viewpoints lands on (almost) the same t0 position, and such
    duplicates say nothing about the cloud's scale.
    """
    pts = np.asarray(anchor_positions, dtype=np.float64)
    if pts.shape[0] < 2:
        return 0.0
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=min(8, pts.shape[0]))
    nearest = np.where(dist[:, 1:] > 1e-9, dist[:, 1:], np.inf).min(axis=1)
    nearest = nearest[np.isfinite(nearest)]
    if nearest.size == 0:
        return 0.0
    return 10.0 / float(np.median(nearest))


@dataclass
class DynamicScene:
    """Per-timestep similarity updates for the selected Gaussians.

    All updates are relative to the canonical scene: positions move by
    `translations`, orientations are pre-rotated by `rot_deltas`, extents
    scale by `scale_factors`. The frame at global timestep 0 (the t0
    frame) is the identity update.
    """

    timeline: np.ndarray        # (T,) global integer timesteps
    selection: SelectionMask    # (N,) bool over the full scene
    translations: np.ndarray    # (T, M, 3)
    rot_deltas: np.ndarray      # (T, M, 4) unit quaternions wxyz
    scale_factors: np.ndarray   # (T, M)
    mode: str = "rigid"
    K: int = K_MIN
    tau: float = 0.0

    @property
    def n_steps(self) -> int:
        return int(self.timeline.shape[0])

    @property
    def n_selected(self) -> int:
        return int(self.translations.shape[1])

    @property
    def t0_index(self) -> int:
        hits = np.flatnonzero(self.timeline == 0)
        if hits.size != 1:
            raise InputError("dynamic scene timeline must contain global timestep 0 once")
        return int(hits[0])

    def times(self) -> np.ndarray:
        """Normalized timestep positions in [0, 1]."""
        if self.n_steps == 1:
            return np.zeros(1)
        return np.linspace(0.0, 1.0, self.n_steps)

    def validate(self) -> None:
        t, m = self.n_steps, self.n_selected
        if self.translations.shape != (t, m, 3) or self.rot_deltas.shape != (t, m, 4) \
                or self.scale_factors.shape != (t, m):
            raise InputError("dynamic scene arrays have inconsistent shapes")
        if int(self.selection.sum()) != m:
            raise InputError("selection count does not match update arrays")
        norms = np.linalg.norm(self.rot_deltas, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InputError("rotation deltas must be unit quaternions")
        if np.any(self.scale_factors <= 0):
            raise InputError("scale factors must be positive")
        k = self.t0_index
        if (np.any(self.translations[k] != 0)
                or np.any(self.rot_deltas[k] != np.array([1.0, 0.0, 0.0, 0.0]))
                or np.any(self.scale_factors[k] != 1.0)):
            raise InputError("frame at the t0 timestep must be the identity update")


def identity_dynamic_scene(selection: SelectionMask, timeline) -> DynamicScene:
    timeline = np.asarray(timeline, dtype=np.int64)
    m = int(np.asarray(selection, dtype=bool).sum())
    t = timeline.shape[0]
    rot = np.zeros((t, m, 4))
    rot[:, :, 0] = 1.0
    return DynamicScene(
        timeline=timeline,
        selection=np.asarray(selection, dtype=bool),
        translations=np.zeros((t, m, 3)),
        rot_deltas=rot,
        scale_factors=np.ones((t, m)),
    )


def save_dynamic_scene(path, dyn: DynamicScene) -> None:
    """Header JSON + packed little-endian float32 body.

    Layout: b"GSDYN", version byte, uint32 header length, UTF-8 header
    JSON, then per timestep and selected Gaussian 8 float32: translation
    xyz, rotation delta wxyz, scale factor.
    """
    header = {
        "timeline": [int(v) for v in dyn.timeline],
        "gaussian_count": int(dyn.selection.shape[0]),
        "selected": int(dyn.n_selected),
        "selection": "".join("1" if v else "0" for v in dyn.selection),
        "mode": dyn.mode,
        "K": int(dyn.K),
        "tau": float(dyn.tau),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.concatenate(
        [dyn.translations, dyn.rot_deltas, dyn.scale_factors[:, :, None]], axis=2
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_DYN_MAGIC)
        fh.write(struct.pack("<BI", _DYN_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(body.tobytes())


def load_dynamic_scene(path) -> DynamicScene:
    from .errors import FormatError

    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_DYN_MAGIC):
        raise FormatError(f"{path}: not a dynamic-scene file")
    version, header_len = struct.unpack_from("<BI", data, len(_DYN_MAGIC))
    if version != _DYN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = len(_DYN_MAGIC) + 5
    header = json.loads(data[off:off + header_len].decode("utf-8"))
    off += header_len

    timeline = np.asarray(header["timeline"], dtype=np.int64)
    t = timeline.shape[0]
    m = int(header["selected"])
    expected = t * m * 8 * 4
    if len(data) - off != expected:
        raise FormatError(f"{path}: body is {len(data) - off} bytes, expected {expected}")
    body = np.frombuffer(data[off:], dtype="<f4").reshape(t, m, 8).astype(np.float64)
    selection = np.array([c == "1" for c in header["selection"]], dtype=bool)
    if selection.shape[0] != int(header["gaussian_count"]) or int(selection.sum()) != m:
        raise FormatError(f"{path}: selection mask inconsistent with counts")
    return DynamicScene(
        timeline=timeline,
        selection=selection,
        translations=body[:, :, 0:3],
        rot_deltas=quat_normalize(body[:, :, 3:7]),
        scale_factors=body[:, :, 7],
        mode=header.get("mode", "rigid"),
        K=int(header.get("K", K_MIN)),
        tau=float(header.get("tau", 0.0)),
    )


def _transfer_mode(cfg: TransferConfig) -> int:
    if cfg.mode == "rigid":
        return kernels.MODE_RIGID
    return kernels.MODE_LINEAR_RS if cfg.estimate_rotation_scale else kernels.MODE_LINEAR


def build_dynamic_scene(scene: GaussianScene, selection: SelectionMask,
                        anchors: list, cfg: TransferConfig) -> DynamicScene:
    """Transfer anchor motion onto every selected Gaussian.

    Anchors must live on a common timeline (equal length, equal t0
    index). Neighborhoods and weights are frozen at t0; per timestep pair
    only anchors observed at both steps take part, with weights
    renormalized. Updates are composed cumulatively walking forward and
    backward from the t0 frame, which stays the identity.
    """
    selection = np.asarray(selection, dtype=bool)
    if selection.shape[0] != scene.count:
        raise InputError("selection length does not match scene count")
    if not selection.any():
        raise InputError("empty selection: nothing to animate")
    if not anchors:
        raise InputError("empty guidance: no anchor trajectories")

    n_steps = anchors[0].positions.shape[0]
    t0i = int(anchors[0].t0_global)
    for a in anchors:
        if a.positions.shape[0] != n_steps or int(a.t0_global) != t0i:
            raise InputError("anchor trajectories are not on a common timeline")

    anchor_pos = np.stack([a.positions for a in anchors])      # (A, T, 3)
    observed = np.stack([a.observed for a in anchors])         # (A, T)
    if not observed[:, t0i].all():
        raise InputError("every anchor must be observed at the t0 frame")
    anchor_pos = np.where(observed[:, :, None], anchor_pos, 0.0)  # scrub NaNs

    p0 = anchor_pos[:, t0i]
    n_videos = len({int(a.source_view) for a in anchors})
    k = cfg.K if cfg.K is not None else schedule_K(n_videos)
    k = max(1, min(k, len(anchors)))
    tau = cfg.tau if cfg.tau is not None else default_tau(p0)

    index = KnnIndex(p0)
    mu0 = scene.positions[selection]
    dists, nbr_idx = index.query(mu0, k)
    base_w = knn_weights(dists, tau)

    m = mu0.shape[0]
    translations = np.zeros((n_steps, m, 3))
    rot_deltas = np.zeros((n_steps, m, 4))
    rot_deltas[:, :, 0] = 1.0
    scale_factors = np.ones((n_steps, m))
    mode = _transfer_mode(cfg)

    def walk(step_range, src_of, dst_of):
        cur = mu0.copy()
        cum_q = np.zeros((m, 4))
        cum_q[:, 0] = 1.0
        cum_s = np.ones(m)
        for kstep in step_range:
            src, dst = src_of(kstep), dst_of(kstep)
            eligible = observed[:, src] & observed[:, dst]
            disp, q, s, _ok = kernels.transfer_step(
                cur, anchor_pos[:, src], anchor_pos[:, dst],
                nbr_idx, base_w, eligible, mode)
            cur = cur + disp
            cum_q = quat_normalize(quat_multiply(q, cum_q))
            cum_s = cum_s * s
            translations[dst] = cur - mu0
            rot_deltas[dst] = cum_q
            scale_factors[dst] = cum_s

    walk(range(t0i, n_steps - 1), lambda k_: k_, lambda k_: k_ + 1)
    walk(range(t0i, 0, -1), lambda k_: k_, lambda k_: k_ - 1)

    timeline = np.arange(n_steps, dtype=np.int64) - t0i
    return DynamicScene(
        timeline=timeline,
        selection=selection,
        translations=translations,
        rot_deltas=rot_deltas,
        scale_factors=scale_factors,
        mode=cfg.mode,
        K=k,
        tau=float(tau),
    )
