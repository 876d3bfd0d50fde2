"""Pinhole camera math and spherical viewpoint sampling.

Conventions:
* World-to-camera transform: x_cam = R @ X + T with z > 0 in front.
* Pixel coordinates address pixel centers directly, so integer (u, v)
  map through K without a half-pixel offset.
* Unprojection scales the homogeneous pixel by depth before applying
  K^-1, i.e. X_cam = K^-1 @ (u*d, v*d, d) = d * K^-1 @ (u, v, 1).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera. Immutable; safe to share between threads."""

    K: np.ndarray          # (3, 3) intrinsics
    R: np.ndarray          # (3, 3) world-to-camera rotation
    T: np.ndarray          # (3,) world-to-camera translation, meters
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=np.float64).reshape(3))
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"camera size must be positive, got {self.width}x{self.height}")
        K, R = self.K, self.R
        if np.any(np.diag(K) <= 0) or np.any(K[np.tril_indices(3, -1)] != 0):
            raise InputError("K must be upper-triangular with a positive diagonal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise InputError("R must be a rotation matrix (orthonormal, det +1)")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.T

    def to_dict(self) -> dict:
        return {
            "K": [float(v) for v in self.K.reshape(-1)],
            "R": [float(v) for v in self.R.reshape(-1)],
            "T": [float(v) for v in self.T],
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(
                K=np.asarray(d["K"], dtype=np.float64).reshape(3, 3),
                R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
                T=np.asarray(d["T"], dtype=np.float64),
                width=int(d["width"]),
                height=int(d["height"]),
            )
        except KeyError as exc:
            raise InputError(f"camera JSON missing field {exc}") from exc


def load_camera(path) -> CameraModel:
    with open(path) as fh:
        return CameraModel.from_dict(json.load(fh))


def save_camera(path, cam: CameraModel) -> None:
    with open(path, "w") as fh:
        json.dump(cam.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_camera_list(path) -> list[CameraModel]:
    with open(path) as fh:
        return [CameraModel.from_dict(d) for d in json.load(fh)]


def save_camera_list(path, cams: list[CameraModel]) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cams], fh, indent=1, sort_keys=True)
        fh.write("\n")


def project(cam: CameraModel, X: np.ndarray):
    """World point(s) to (u, v, depth). X is (3,) or (N, 3).

    Raises InputError if any point has nonpositive camera-frame depth.
    """
    X = np.asarray(X, dtype=np.float64)
    x_cam = X @ cam.R.T + cam.T
    d = x_cam[..., 2]
    if np.any(d <= 0):
        raise InputError("point behind camera: nonpositive depth")
    uvw = x_cam @ cam.K.T
    u = uvw[..., 0] / uvw[..., 2]
    v = uvw[..., 1] / uvw[..., 2]
    return u, v, d


def unproject(cam: CameraModel, u, v, d) -> np.ndarray:
    """Pixel coordinate(s) plus depth to world point(s)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InputError("unproject requires positive depth")
    ones = np.ones_like(u)
    pix = np.stack([u, v, ones], axis=-1)
    x_cam = (pix @ np.linalg.inv(cam.K).T) * d[..., None]
    return (x_cam - cam.T) @ cam.R


def look_at(eye: np.ndarray, target: np.ndarray, K: np.ndarray,
            width: int, height: int, up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Camera at `eye` looking at `target`, image y pointing world-down."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InputError("look_at: eye coincides with target")
    forward = forward / norm
    right = np.cross(forward, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        # looking along the up axis; pick an arbitrary horizontal right
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        rnorm = np.linalg.norm(right)
    right = right / rnorm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return CameraModel(K=K, R=R, T=-R @ eye, width=width, height=height)


@dataclass
class ViewSampleConfig:
    """Spherical sampling envelope around a scene center.

    Angles are radians; distances meters. Margins bound how far endpoints
    may deviate from the anchor viewpoint (the distance margin is a
    fraction of the anchor distance). Noise sigmas perturb each sampled
    path pose; azimuth/elevation noise is absolute radians and distance
    noise absolute meters. Intrinsics for the emitted cameras ride along
    in the config since every pose shares them.
    """

    anchor_azimuth: float
    anchor_elevation: float
    anchor_distance: float
    max_azimuth: float = 0.0
    max_elevation: float = 0.0
    max_distance_fraction: float = 0.0
    views_per_side: int = 1
    sigma_azimuth: float = 0.0
    sigma_elevation: float = 0.0
    sigma_distance: float = 0.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    seed: int = 0
    K: np.ndarray = field(default_factory=lambda: np.array(
        [[500.0, 0.0, 256.0], [0.0, 500.0, 256.0], [0.0, 0.0, 1.0]]))
    width: int = 512
    height: int = 512

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        if self.views_per_side < 1:
            raise InputError("views_per_side must be >= 1")
        if self.anchor_distance <= 0:
            raise InputError("anchor_distance must be positive")
        if min(self.max_azimuth, self.max_elevation, self.max_distance_fraction) < 0:
            raise InputError("margins must be nonnegative")


def _spherical_eye(center, azimuth, elevation, distance):
    direction = np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    return center + distance * direction


def sample_viewpoints(cfg: ViewSampleConfig) -> list[CameraModel]:
    """Sample 2*views_per_side + 1 poses on the sphere around cfg.center.

    The anchor pose comes first, unperturbed. For each side an endpoint is
    drawn at azimuth anchor +/- max_azimuth with uniformly drawn elevation
    and distance offsets, then views_per_side poses are spread uniformly
    along the spherical path from the anchor to that endpoint (the last
    pose lands on the endpoint) and perturbed with Gaussian noise.
    Deterministic for a fixed seed; every camera looks at cfg.center.
    """
    rng = np.random.default_rng(cfg.seed)
    anchor = np.array([cfg.anchor_azimuth, cfg.anchor_elevation, cfg.anchor_distance])

    def make_cam(azm, elv, dist):
        eye = _spherical_eye(cfg.center, azm, elv, dist)
        return look_at(eye, cfg.center, cfg.K, cfg.width, cfg.height)

    poses = [make_cam(*anchor)]
    for sign in (+1.0, -1.0):
        endpoint = np.array([
            cfg.anchor_azimuth + sign * cfg.max_azimuth,
            cfg.anchor_elevation + rng.uniform(-cfg.max_elevation, cfg.max_elevation),
            cfg.anchor_distance + rng.uniform(-1.0, 1.0) * cfg.max_distance_fraction * cfg.anchor_distance,
        ])
        for i in range(1, cfg.views_per_side + 1):
            frac = i / cfg.views_per_side
            pose = anchor + frac * (endpoint - anchor)
            pose = pose + rng.normal(size=3) * np.array(
                [cfg.sigma_azimuth, cfg.sigma_elevation, cfg.sigma_distance])
            poses.append(make_cam(*pose))
    return poses
