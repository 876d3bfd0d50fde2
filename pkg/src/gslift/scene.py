"""Gaussian-splat scenes: PLY I/O, bounding-box selection, deformation.

The on-disk format is the de-facto splatting PLY: binary little-endian
with float32 vertex properties

    x y z nx ny nz f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3

Scales are stored as logs and opacities as logits; loading applies
exp/sigmoid and saving inverts them. Higher-order color coefficients
(f_rest_*) and normals are carried through verbatim and never
interpreted. Scenes are immutable in spirit: every operation here
returns fresh arrays and never mutates its input.
"""

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import FormatError, InputError
from .rotation import quat_conjugate, quat_multiply, quat_normalize, quat_rotate, quat_slerp

if TYPE_CHECKING:  # pragma: no cover
    from .deform import DynamicScene

# SelectionMask: a per-Gaussian boolean array, length == scene.count.
SelectionMask = np.ndarray


@dataclass
class GaussianScene:
    positions: np.ndarray               # (N, 3) world meters
    scales: np.ndarray                  # (N, 3) linear extents, > 0
    rotations: np.ndarray               # (N, 4) unit quaternions, wxyz
    opacities: np.ndarray               # (N,) in [0, 1]
    colors: np.ndarray                  # (N, 3) degree-0 SH coefficients
    normals: np.ndarray | None = None   # (N, 3) passthrough payload
    f_rest: np.ndarray | None = None    # (N, M) passthrough payload

    def __post_init__(self):
        n = self.count
        if self.normals is None:
            self.normals = np.zeros((n, 3), dtype=np.float64)
        if self.f_rest is None:
            self.f_rest = np.zeros((n, 0), dtype=np.float64)

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def validate(self) -> None:
        n = self.count
        shapes = {
            "positions": (self.positions, (n, 3)),
            "scales": (self.scales, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "opacities": (self.opacities, (n,)),
            "colors": (self.colors, (n, 3)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise InputError(f"scene.{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"scene.{name} contains non-finite values")
        if np.any(self.scales <= 0):
            raise InputError("scene scales must be strictly positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise InputError("scene opacities must lie in [0, 1]")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InputError("scene rotations must be unit quaternions")

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            positions=self.positions.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            colors=self.colors.copy(),
            normals=self.normals.copy(),
            f_rest=self.f_rest.copy(),
        )


@dataclass
class BoundingBox3:
    """Oriented 3D box; identity rotation makes it axis-aligned."""

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        if np.any(self.half_extents <= 0):
            raise InputError("bounding-box half extents must be strictly positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inclusive containment test; points (3,) or (N, 3) -> bool or (N,) bools."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        local = quat_rotate(quat_conjugate(self.rotation), pts - self.center)
        inside = np.all(np.abs(local) <= self.half_extents, axis=-1)
        return inside if np.asarray(points).ndim > 1 else bool(inside[0])

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
            "rotation": [float(v) for v in self.rotation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox3":
        return cls(center=d["center"], half_extents=d["half_extents"],
                   rotation=d.get("rotation", [1.0, 0.0, 0.0, 0.0]))


_REQUIRED_HEAD = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
_REQUIRED_TAIL = ["opacity", "scale_0", "scale_1", "scale_2",
                  "rot_0", "rot_1", "rot_2", "rot_3"]


def _property_order(n_rest: int) -> list[str]:
    return _REQUIRED_HEAD + [f"f_rest_{i}" for i in range(n_rest)] + _REQUIRED_TAIL


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def load_scene(path) -> GaussianScene:
    """Load a splatting PLY; applies exp to scales, sigmoid to opacities,
    and normalizes quaternions."""
    with open(path, "rb") as fh:
        data = fh.read()

    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file (missing ply/end_header)")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    payload = data[end + len(b"end_header\n"):]

    count = None
    names: list[str] = []
    fmt_ok = False
    for line in header_lines[1:]:
        line = line.strip()
        if line.startswith("format"):
            fmt_ok = line == "format binary_little_endian 1.0"
        elif line.startswith("comment") or line.startswith("obj_info"):
            continue
        elif line.startswith("element"):
            m = re.fullmatch(r"element vertex (\d+)", line)
            if m is None:
                raise FormatError(f"{path}: unsupported element: {line!r}")
            count = int(m.group(1))
        elif line.startswith("property"):
            m = re.fullmatch(r"property float (\S+)", line)
            if m is None:
                raise FormatError(f"{path}: only float properties supported: {line!r}")
            names.append(m.group(1))
    if not fmt_ok:
        raise FormatError(f"{path}: format must be binary_little_endian 1.0")
    if count is None:
        raise FormatError(f"{path}: missing vertex element")

    for required in _REQUIRED_HEAD + _REQUIRED_TAIL:
        if required not in names:
            raise FormatError(f"{path}: missing vertex property '{required}'")
    rest_names = sorted(
        (n for n in names if n.startswith("f_rest_")),
        key=lambda n: int(n.split("_")[-1]),
    )

    dtype = np.dtype([(n, "<f4") for n in names])
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {count * dtype.itemsize}")
    rows = np.frombuffer(payload, dtype=dtype, count=count)

    def column(name: str) -> np.ndarray:
        col = rows[name].astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise FormatError(f"{path}: non-finite value in property '{name}' row {bad[0]}")
        return col

    def stack(prefix_names: list[str]) -> np.ndarray:
        if not prefix_names:
            return np.zeros((count, 0), dtype=np.float64)
        return np.stack([column(n) for n in prefix_names], axis=1)

    quats = stack(["rot_0", "rot_1", "rot_2", "rot_3"])
    norms = np.linalg.norm(quats, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise FormatError(f"{path}: zero-norm quaternion in row {bad[0]}")
    # normalize only rows that need it; already-unit rows pass through
    # verbatim so that saving a loaded scene reproduces the file bytes
    off = np.abs(norms - 1.0) > 1e-6
    quats[off] /= norms[off, None]

    return GaussianScene(
        positions=stack(["x", "y", "z"]),
        scales=np.exp(stack(["scale_0", "scale_1", "scale_2"])),
        rotations=quats,
        opacities=_sigmoid(column("opacity")),
        colors=stack(["f_dc_0", "f_dc_1", "f_dc_2"]),
        normals=stack(["nx", "ny", "nz"]),
        f_rest=stack(rest_names),
    )


def save_scene(scene: GaussianScene, path) -> None:
    """Write the inverse encoding of load_scene (log scales, logit opacities)."""
    scene.validate()
    n_rest = scene.f_rest.shape[1]
    names = _property_order(n_rest)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {scene.count}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")

    table = np.concatenate(
        [
            scene.positions,
            scene.normals,
            scene.colors,
            scene.f_rest,
            _logit(scene.opacities)[:, None],
            np.log(scene.scales),
            scene.rotations,
        ],
        axis=1,
    ).astype("<f4")
    rows = np.empty(scene.count, dtype=np.dtype([(n, "<f4") for n in names]))
    for i, name in enumerate(names):
        rows[name] = table[:, i]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())


def select_by_bbox(scene: GaussianScene, box: BoundingBox3) -> SelectionMask:
    """Flag every Gaussian whose center lies inside the box (boundary inclusive)."""
    return box.contains(scene.positions)


def save_selection_mask(path, mask: SelectionMask) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join("1" if v else "0" for v in np.asarray(mask, dtype=bool)))
        fh.write("\n")


def load_selection_mask(path) -> SelectionMask:
    lines = [ln.strip() for ln in open(path) if ln.strip()]
    if any(ln not in ("0", "1") for ln in lines):
        raise FormatError(f"{path}: selection mask must contain only 0/1 lines")
    return np.array([ln == "1" for ln in lines], dtype=bool)


def apply_deformation(scene: GaussianScene, dyn: "DynamicScene", t: float) -> GaussianScene:
    """Snapshot of the scene at normalized time t in [0, 1].

    Exact at the discrete timesteps; between them translation and scale
    factor are interpolated linearly and the rotation delta by
    shortest-arc slerp. Unselected Gaussians pass through unchanged and
    opacity is never touched.
    """
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    if dyn.selection.shape[0] != scene.count:
        raise InputError("dynamic scene selection does not match scene count")

    n_steps = len(dyn.timeline)
    pos = t * (n_steps - 1)
    k0 = int(np.floor(pos))
    k0 = min(max(k0, 0), n_steps - 1)
    alpha = pos - k0
    if alpha < 1e-9 or k0 == n_steps - 1:
        tr = dyn.translations[k0]
        rot = dyn.rot_deltas[k0]
        sf = dyn.scale_factors[k0]
    elif alpha > 1.0 - 1e-9:
        tr = dyn.translations[k0 + 1]
        rot = dyn.rot_deltas[k0 + 1]
        sf = dyn.scale_factors[k0 + 1]
    else:
        tr = (1.0 - alpha) * dyn.translations[k0] + alpha * dyn.translations[k0 + 1]
        rot = quat_slerp(dyn.rot_deltas[k0], dyn.rot_deltas[k0 + 1], alpha)
        sf = (1.0 - alpha) * dyn.scale_factors[k0] + alpha * dyn.scale_factors[k0 + 1]

    out = scene.copy()
    sel = dyn.selection
    out.positions[sel] = out.positions[sel] + tr
    # both factors are unit quaternions; the product stays unit to within
    # float rounding, and skipping renormalization keeps identity frames exact
    out.rotations[sel] = quat_multiply(rot, out.rotations[sel])
    out.scales[sel] = out.scales[sel] * sf[:, None]
    return out
