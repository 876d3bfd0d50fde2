"""Numerics surrounding the external video generator.

The generator itself (denoising, encoding/decoding) runs out of process;
this module prepares its inputs: latent blending between the previous
guidance video and the current render, the linear hyperparameter
schedules, and optical-flow composition/warping used to move video
frames to a new viewpoint. Flow fields are (H, W, 2) arrays of pixel
displacements (target = pixel + flow); frames are (H, W, 3) arrays in
[0, 1].
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# Generation defaults recorded for provenance: guidance videos are 8
# frames and are denoised externally in 40 steps.
DEFAULT_FRAME_COUNT = 8
DEFAULT_DENOISE_STEPS = 40
NOISE_SCHEDULE = (0.75, 0.2)
LAMBDA_SCHEDULE = (0.6, 0.0)


def blend_latents(z_prev: np.ndarray, z_render: np.ndarray, lambda_prev: float) -> np.ndarray:
    """Elementwise lambda * z_prev + (1 - lambda) * z_render."""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    z_render = np.asarray(z_render, dtype=np.float64)
    if z_prev.shape != z_render.shape:
        raise InputError(f"latent shapes differ: {z_prev.shape} vs {z_render.shape}")
    return lambda_prev * z_prev + (1.0 - lambda_prev) * z_render


@dataclass
class LinearSchedule:
    start: float
    end: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise InputError("schedule needs at least one step")


def schedule_value(schedule: LinearSchedule, step: int) -> float:
    """Linear ramp from start (step 0) to end (last step), clamped."""
    if schedule.total_steps == 1:
        return schedule.start
    frac = step / (schedule.total_steps - 1)
    value = schedule.start + (schedule.end - schedule.start) * frac
    lo = min(schedule.start, schedule.end)
    hi = max(schedule.start, schedule.end)
    return float(min(max(value, lo), hi))


def noise_schedule(total_steps: int) -> LinearSchedule:
    return LinearSchedule(NOISE_SCHEDULE[0], NOISE_SCHEDULE[1], total_steps)


def lambda_schedule(total_steps: int) -> LinearSchedule:
    return LinearSchedule(LAMBDA_SCHEDULE[0], LAMBDA_SCHEDULE[1], total_steps)


def _sample_bilinear_clamped(field: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H, W, C) field with clamp-to-border coordinates."""
    h, w = field.shape[:2]
    x = np.clip(x, 0.0, float(w - 1))
    y = np.clip(y, 0.0, float(h - 1))
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.clip(x0, 0, max(w - 2, 0))
    y0 = np.clip(y0, 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    a = (x - x0)[..., None]
    b = (y - y0)[..., None]
    return ((1 - a) * (1 - b) * field[y0, x0]
            + a * (1 - b) * field[y0, x1]
            + (1 - a) * b * field[y1, x0]
            + a * b * field[y1, x1])


def compose_flow(view_flow_t0: np.ndarray, time_flow_to_t0: np.ndarray) -> np.ndarray:
    """Remap a cross-view flow through a within-video flow.

    out(p) = view_flow_t0 sampled at p + time_flow_to_t0(p), with samples
    outside the grid clamped to the border.
    """
    view_flow_t0 = np.asarray(view_flow_t0, dtype=np.float64)
    time_flow_to_t0 = np.asarray(time_flow_to_t0, dtype=np.float64)
    if view_flow_t0.shape != time_flow_to_t0.shape:
        raise InputError(
            f"flow shapes differ: {view_flow_t0.shape} vs {time_flow_to_t0.shape}")
    h, w = view_flow_t0.shape[:2]
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    if np.all(time_flow_to_t0 == 0.0):
        return view_flow_t0.copy()  # identity remap stays bit-exact
    return _sample_bilinear_clamped(view_flow_t0,
                                    gx + time_flow_to_t0[..., 0],
                                    gy + time_flow_to_t0[..., 1])


def warp_frame(frame: np.ndarray, flow: np.ndarray, fill: np.ndarray) -> np.ndarray:
    """Forward-warp a frame along a flow field.

    Every source pixel is splatted with bilinear weights onto its target
    position p + flow(p); accumulation runs in fixed row-major order so
    the result is deterministic. Targets that receive no mass take the
    fill image (typically the static render from the new viewpoint).
    """
    frame = np.asarray(frame, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    fill = np.asarray(fill, dtype=np.float64)
    if frame.ndim != 3 or flow.shape[:2] != frame.shape[:2] or flow.shape[2] != 2:
        raise InputError(f"frame {frame.shape} and flow {flow.shape} do not match")
    if fill.shape != frame.shape:
        raise InputError(f"fill shape {fill.shape} does not match frame {frame.shape}")

    h, w, channels = frame.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    tx = (gx + flow[..., 0]).ravel()
    ty = (gy + flow[..., 1]).ravel()
    values = frame.reshape(-1, channels)

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    accum = np.zeros((h * w, channels), dtype=np.float64)
    wsum = np.zeros(h * w, dtype=np.float64)
    for dx, dy, weight in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                           (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xc = x0 + dx
        yc = y0 + dy
        ok = (weight > 0) & (xc >= 0) & (xc < w) & (yc >= 0) & (yc < h)
        if not ok.any():
            continue
        flat = yc[ok] * w + xc[ok]
        np.add.at(accum, flat, values[ok] * weight[ok, None])
        np.add.at(wsum, flat, weight[ok])

    covered = wsum > 1e-8
    out = fill.reshape(-1, channels).copy()
    out[covered] = accum[covered] / wsum[covered, None]
    return out.reshape(h, w, channels)


def _color_wheel() -> np.ndarray:
    """55-color wheel used for flow visualization (RY/YG/GC/CB/BM/MR arcs)."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col:col + ry, 0] = 1.0
    wheel[col:col + ry, 1] = np.arange(ry) / ry
    col += ry
    wheel[col:col + yg, 0] = 1.0 - np.arange(yg) / yg
    wheel[col:col + yg, 1] = 1.0
    col += yg
    wheel[col:col + gc, 1] = 1.0
    wheel[col:col + gc, 2] = np.arange(gc) / gc
    col += gc
    wheel[col:col + cb, 1] = 1.0 - np.arange(cb) / cb
    wheel[col:col + cb, 2] = 1.0
    col += cb
    wheel[col:col + bm, 2] = 1.0
    wheel[col:col + bm, 0] = np.arange(bm) / bm
    col += bm
    wheel[col:col + mr, 2] = 1.0 - np.arange(mr) / mr
    wheel[col:col + mr, 0] = 1.0
    return wheel


def flow_to_color(flow: np.ndarray, max_flow: float | None = None) -> np.ndarray:
    """Debug visualization of a flow field using the standard color wheel.

    Hue encodes direction, saturation encodes magnitude relative to
    max_flow (defaults to the field's maximum magnitude).
    """
    flow = np.asarray(flow, dtype=np.float64)
    u = flow[..., 0]
    v = flow[..., 1]
    rad = np.sqrt(u * u + v * v)
    if max_flow is None:
        max_flow = float(rad.max())
    if max_flow <= 0:
        max_flow = 1.0
    u = u / max_flow
    v = v / max_flow
    rad = np.minimum(rad / max_flow, 1.0)

    wheel = _color_wheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi          # [-1, 1]
    fk = (angle + 1.0) / 2.0 * (ncols - 1)      # wheel position
    k0 = np.floor(fk).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    f = (fk - np.floor(fk))[..., None]
    col = (1.0 - f) * wheel[k0] + f * wheel[k1]
    return 1.0 - rad[..., None] * (1.0 - col)
