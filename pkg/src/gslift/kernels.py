"""Backend selection for the motion-transfer inner loop.

The per-Gaussian transfer (one weighted similarity fit per Gaussian per
timestep pair, over 50-150 neighbors each) dominates pipeline runtime,
so it exists twice: a Cython extension (gslift._kernels) and a
pure-numpy fallback (gslift._kernels_np). The compiled backend is
preferred when importable; set G2L_KERNEL=numpy to force the fallback.
G2L_THREADS caps the compiled backend's OpenMP parallelism (0 = auto);
results are identical for any thread count.
"""

import os

MODE_LINEAR = 0
MODE_RIGID = 1
MODE_LINEAR_RS = 2

_FORCE_NUMPY = os.environ.get("G2L_KERNEL", "").lower() in ("numpy", "python", "fallback")

if not _FORCE_NUMPY:
    try:
        from . import _kernels as _impl
    except ImportError:
        from . import _kernels_np as _impl
else:
    from . import _kernels_np as _impl

BACKEND = _impl.BACKEND_NAME


def thread_count() -> int:
    """Parallelism cap from G2L_THREADS; 0 means 'let the backend decide'."""
    raw = os.environ.get("G2L_THREADS", "").strip()
    if not raw:
        return 0
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


def transfer_step(mu, x_anchors, y_anchors, nbr_idx, base_weights, eligible, mode):
    """Per-Gaussian motion update for one pair of consecutive timesteps.

    Args:
        mu: (M, 3) current Gaussian centers.
        x_anchors / y_anchors: (A, 3) anchor positions at the source and
            target timestep.
        nbr_idx: (M, K) anchor indices frozen from the t0 k-NN query.
        base_weights: (M, K) neighbor weights (nonnegative, rows sum to 1).
        eligible: (A,) bool, anchor observed at both timesteps. Ineligible
            neighbors are dropped and the remaining weights renormalized.
        mode: MODE_LINEAR, MODE_RIGID or MODE_LINEAR_RS.

    Returns:
        (disp (M, 3), quat (M, 4) wxyz, scale (M,), ok (M,) uint8).
        `disp` is the center displacement for this step; `quat`/`scale`
        the orientation/extent updates. ok == 0 marks rows where the fit
        was degenerate and a translation-only (or identity) fallback was
        recorded instead.
    """
    return _impl.transfer_step(mu, x_anchors, y_anchors, nbr_idx, base_weights,
                               eligible, mode, thread_count())


def available_backends() -> dict:
    """All importable backend modules, keyed by name (for tests/benchmarks)."""
    from . import _kernels_np

    backends = {_kernels_np.BACKEND_NAME: _kernels_np}
    try:
        from . import _kernels

        backends[_kernels.BACKEND_NAME] = _kernels
    except ImportError:
        pass
    return backends
