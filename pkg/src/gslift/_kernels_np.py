"""Pure-numpy implementation of the motion-transfer inner loop.

Used as the fallback when the compiled extension (gslift._kernels) is
unavailable. Both backends implement the same contract, see
`gslift.kernels.transfer_step`. Work is chunked over Gaussians to bound
the size of the gathered neighbor arrays.
"""

import numpy as np

from .rotation import matrix_to_quat

BACKEND_NAME = "numpy"

MODE_LINEAR = 0
MODE_RIGID = 1
MODE_LINEAR_RS = 2

_CHUNK = 8192
_RANK_RTOL = 1e-9
_TINY = 1e-30


def _svd_rotation(mats: np.ndarray):
    """Batched proper-rotation SVD: returns R with det +1, the signed
    singular-value sum trace(D S), and singular values (m, 3)."""
    U, D, Vt = np.linalg.svd(mats)
    sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    sign[sign == 0] = 1.0
    U = U.copy()
    U[:, :, 2] *= sign[:, None]
    R = U @ Vt
    trace_ds = D[:, 0] + D[:, 1] + sign * D[:, 2]
    return R, trace_ds, D


def transfer_step(mu, x_anchors, y_anchors, nbr_idx, base_weights, eligible,
                  mode, n_threads=0):
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    xa = np.ascontiguousarray(x_anchors, dtype=np.float64)
    ya = np.ascontiguousarray(y_anchors, dtype=np.float64)
    nbr_idx = np.ascontiguousarray(nbr_idx, dtype=np.int64)
    base_weights = np.ascontiguousarray(base_weights, dtype=np.float64)
    eligible = np.ascontiguousarray(eligible, dtype=bool)

    m_total = mu.shape[0]
    disp = np.zeros((m_total, 3), dtype=np.float64)
    quat = np.zeros((m_total, 4), dtype=np.float64)
    quat[:, 0] = 1.0
    scale = np.ones(m_total, dtype=np.float64)
    ok = np.zeros(m_total, dtype=np.uint8)

    for lo in range(0, m_total, _CHUNK):
        hi = min(lo + _CHUNK, m_total)
        idx = nbr_idx[lo:hi]
        el = eligible[idx] & (base_weights[lo:hi] > 0)
        w = np.where(el, base_weights[lo:hi], 0.0)
        wsum = w.sum(axis=1)
        has = wsum > 0
        wn = np.divide(w, wsum[:, None], out=np.zeros_like(w), where=wsum[:, None] > 0)
        neff = el.sum(axis=1)

        xg = xa[idx]
        yg = ya[idx]

        if mode in (MODE_LINEAR, MODE_LINEAR_RS):
            d = np.einsum("nk,nki->ni", wn, yg - xg)
            disp[lo:hi] = np.where(has[:, None], d, 0.0)
            ok[lo:hi] = has.astype(np.uint8)
            if mode == MODE_LINEAR_RS:
                yprime = yg - d[:, None, :]
                B = np.einsum("nk,nki,nkj->nij", wn, yprime, xg)
                sx2 = np.einsum("nk,nki,nki->n", wn, xg, xg)
                R, trace_ds, D = _svd_rotation(B)
                s = np.divide(trace_ds, sx2, out=np.ones_like(sx2), where=sx2 > _TINY)
                good = (
                    has
                    & (neff >= 3)
                    & (sx2 > _TINY)
                    & (D[:, 0] > _TINY)
                    & (D[:, 1] > _RANK_RTOL * D[:, 0])
                    & (s > 0)
                )
                q = matrix_to_quat(R)
                quat[lo:hi] = np.where(good[:, None], q, quat[lo:hi])
                scale[lo:hi] = np.where(good, s, 1.0)
                ok[lo:hi] = (has & good).astype(np.uint8)
        elif mode == MODE_RIGID:
            xbar = np.einsum("nk,nki->ni", wn, xg)
            ybar = np.einsum("nk,nki->ni", wn, yg)
            xc = xg - xbar[:, None, :]
            yc = yg - ybar[:, None, :]
            cov = np.einsum("nk,nki,nkj->nij", wn, yc, xc)
            varx = np.einsum("nk,nki,nki->n", wn, xc, xc)
            R, trace_ds, D = _svd_rotation(cov)
            s = np.divide(trace_ds, varx, out=np.ones_like(varx), where=varx > _TINY)
            good = (
                has
                & (neff >= 3)
                & (varx > _TINY)
                & (D[:, 0] > _TINY)
                & (D[:, 1] > _RANK_RTOL * D[:, 0])
                & (s > 0)
            )

            mu_c = mu[lo:hi]
            t_sim = ybar - s[:, None] * np.einsum("nij,nj->ni", R, xbar)
            d_full = s[:, None] * np.einsum("nij,nj->ni", R, mu_c) + t_sim - mu_c
            d_fallback = ybar - xbar
            disp[lo:hi] = np.where(good[:, None], d_full,
                                   np.where(has[:, None], d_fallback, 0.0))
            q = matrix_to_quat(R)
            quat[lo:hi] = np.where(good[:, None], q, quat[lo:hi])
            scale[lo:hi] = np.where(good, s, 1.0)
            ok[lo:hi] = good.astype(np.uint8)
        else:
            raise ValueError(f"unknown transfer mode {mode}")

    return disp, quat, scale, ok
