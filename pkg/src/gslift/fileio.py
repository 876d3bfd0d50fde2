"""Readers and writers for the on-disk exchange formats.

Formats handled here are shared by several pipeline stages:

* PFM depth maps: single-channel "Pf", little-endian (scale -1.0). Rows are
  stored bottom-to-top as is conventional for PFM; in memory row 0 is the
  top image row. Nonpositive values mark invalid pixels.
* Middlebury .flo flow fields: magic 202021.25, int32 width/height,
  interleaved float32 (u, v) per pixel, top-down row order.
* 8-bit images (PNG or PPM) converted to float arrays in [0, 1].
* Flat little-endian float32 tensors with a JSON shape sidecar at
  "<path>.json" (used for latents and embedding sets).
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

FLO_MAGIC = 202021.25


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM file into a float64 (H, W) array."""
    path = Path(path)
    data = path.read_bytes()
    try:
        header_end = 0
        fields = []
        while len(fields) < 3:
            nl = data.index(b"\n", header_end)
            line = data[header_end:nl].decode("ascii").strip()
            header_end = nl + 1
            if line:
                fields.extend(line.split())
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or non-ASCII PFM header") from exc

    if fields[0] != "Pf":
        raise FormatError(f"{path}: expected single-channel PFM magic 'Pf', got {fields[0]!r}")
    try:
        width, height = int(fields[1]), int(fields[2])
        scale = float(fields[3]) if len(fields) > 3 else None
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed PFM dimensions/scale") from exc
    if scale is None:
        nl = data.index(b"\n", header_end)
        scale = float(data[header_end:nl])
        header_end = nl + 1
    if scale >= 0:
        raise FormatError(f"{path}: big-endian PFM (scale {scale}) not supported")

    expected = width * height * 4
    payload = data[header_end:]
    if len(payload) != expected:
        raise FormatError(f"{path}: PFM payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return values[::-1].astype(np.float64)  # bottom-up file order to top-down


def write_pfm(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise FormatError(f"PFM writer expects a 2-D array, got shape {values.shape}")
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        fh.write(values[::-1].astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Read a .flo flow field into a float64 (H, W, 2) array."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: .flo file too short")
    magic = struct.unpack("<f", data[0:4])[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    width, height = struct.unpack("<ii", data[4:12])
    expected = width * height * 2 * 4
    payload = data[12:]
    if len(payload) != expected:
        raise FormatError(f"{path}: .flo payload is {len(payload)} bytes, expected {expected}")
    flow = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return flow.astype(np.float64)


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise FormatError(f".flo writer expects an (H, W, 2) array, got shape {flow.shape}")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, width, height))
        fh.write(flow.astype("<f4").tobytes())


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM image into a float64 (H, W, 3) array in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except (Image.UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"{path}: not a readable image: {exc}") from exc
    return arr / 255.0


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"image writer expects an (H, W, 3) array, got shape {image.shape}")
    quantized = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def read_f32(path) -> np.ndarray:
    """Read a flat little-endian float32 tensor described by its JSON sidecar."""
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise FormatError(f"{path}: missing shape sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    shape = tuple(int(s) for s in meta["shape"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise FormatError(f"{path}: {raw.size} values do not fill shape {shape}")
    return raw.reshape(shape).astype(np.float64)


def write_f32(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    with open(path, "wb") as fh:
        fh.write(values.astype("<f4").tobytes())
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps({"shape": list(values.shape), "dtype": "float32"}) + "\n")
