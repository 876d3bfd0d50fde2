# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled motion-transfer inner loop.

Same contract as gslift._kernels_np.transfer_step. Each Gaussian row is
independent, so the loop runs under OpenMP with rows written disjointly;
output is identical for any thread count. The 3x3 SVD is computed from a
cyclic Jacobi eigendecomposition of M^T M with a signed smallest singular
value, which keeps the rotation factor proper (det +1) without branching
on reflections.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport fabs, sqrt

cimport openmp

cnp.import_array()

BACKEND_NAME = "compiled"

MODE_LINEAR = 0
MODE_RIGID = 1
MODE_LINEAR_RS = 2

cdef int C_LINEAR = 0
cdef int C_RIGID = 1
cdef int C_LINEAR_RS = 2

cdef double RANK_RTOL = 1e-9
cdef double TINY = 1e-30


cdef void _eigh3(double* a, double* vecs, double* vals) noexcept nogil:
    """Cyclic Jacobi eigendecomposition of a symmetric 3x3 (row-major `a`,
    destroyed). Eigenvalues descend; eigenvectors are the columns of `vecs`."""
    cdef int i, j, r, p, q, sweep, pairs
    cdef double apq, tau, t, c, s, arp, arq, vrp, vrq, off, diag
    cdef int pq[3][2]
    pq[0][0] = 0; pq[0][1] = 1
    pq[1][0] = 0; pq[1][1] = 2
    pq[2][0] = 1; pq[2][1] = 2

    for i in range(3):
        for j in range(3):
            vecs[3 * i + j] = 1.0 if i == j else 0.0

    for sweep in range(64):
        off = a[1] * a[1] + a[2] * a[2] + a[5] * a[5]
        diag = a[0] * a[0] + a[4] * a[4] + a[8] * a[8]
        if off <= 1e-28 * (diag + TINY):
            break
        for pairs in range(3):
            p = pq[pairs][0]
            q = pq[pairs][1]
            apq = a[3 * p + q]
            if fabs(apq) <= 0.0:
                continue
            tau = (a[3 * q + q] - a[3 * p + p]) / (2.0 * apq)
            if tau >= 0:
                t = 1.0 / (tau + sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
            c = 1.0 / sqrt(1.0 + t * t)
            s = t * c
            a[3 * p + p] -= t * apq
            a[3 * q + q] += t * apq
            a[3 * p + q] = 0.0
            a[3 * q + p] = 0.0
            r = 3 - p - q
            arp = a[3 * r + p]
            arq = a[3 * r + q]
            a[3 * r + p] = c * arp - s * arq
            a[3 * p + r] = a[3 * r + p]
            a[3 * r + q] = s * arp + c * arq
            a[3 * q + r] = a[3 * r + q]
            for r in range(3):
                vrp = vecs[3 * r + p]
                vrq = vecs[3 * r + q]
                vecs[3 * r + p] = c * vrp - s * vrq
                vecs[3 * r + q] = s * vrp + c * vrq

    # sort eigenpairs descending (insertion sort on 3 elements)
    cdef double diag3[3]
    diag3[0] = a[0]; diag3[1] = a[4]; diag3[2] = a[8]
    cdef int order[3]
    order[0] = 0; order[1] = 1; order[2] = 2
    cdef int tmp
    for i in range(1, 3):
        j = i
        while j > 0 and diag3[order[j - 1]] < diag3[order[j]]:
            tmp = order[j - 1]; order[j - 1] = order[j]; order[j] = tmp
            j -= 1
    cdef double sorted_vecs[9]
    for j in range(3):
        vals[j] = diag3[order[j]]
        for i in range(3):
            sorted_vecs[3 * i + j] = vecs[3 * i + order[j]]
    for i in range(9):
        vecs[i] = sorted_vecs[i]


cdef void _svd3_signed(double* m, double* u, double* sig, double* v) noexcept nogil:
    """Rotation-variant SVD of a 3x3: m = u @ diag(sig) @ v^T with u, v
    proper rotations and sig[0] >= sig[1] >= |sig[2]| (sig[2] may be
    negative when det(m) < 0)."""
    cdef double s[9]
    cdef double b[9]
    cdef double vals[3]
    cdef int i, j, k, axis
    cdef double n1, n2, d, best

    # s = m^T m
    for i in range(3):
        for j in range(3):
            d = 0.0
            for k in range(3):
                d += m[3 * k + i] * m[3 * k + j]
            s[3 * i + j] = d
    _eigh3(s, v, vals)

    # right-handed V
    d = (v[0] * (v[4] * v[8] - v[5] * v[7])
         - v[1] * (v[3] * v[8] - v[5] * v[6])
         + v[2] * (v[3] * v[7] - v[4] * v[6]))
    if d < 0:
        for i in range(3):
            v[3 * i + 2] = -v[3 * i + 2]

    # b = m @ v; its columns are u_i * sigma_i
    for i in range(3):
        for j in range(3):
            d = 0.0
            for k in range(3):
                d += m[3 * i + k] * v[3 * k + j]
            b[3 * i + j] = d

    n1 = sqrt(b[0] * b[0] + b[3] * b[3] + b[6] * b[6])
    sig[0] = n1
    if n1 <= TINY:
        for i in range(3):
            for j in range(3):
                u[3 * i + j] = 1.0 if i == j else 0.0
        sig[0] = 0.0; sig[1] = 0.0; sig[2] = 0.0
        return
    for i in range(3):
        u[3 * i] = b[3 * i] / n1

    # orthogonalize the second column against the first
    d = u[0] * b[1] + u[3] * b[4] + u[6] * b[7]
    cdef double c2[3]
    c2[0] = b[1] - d * u[0]
    c2[1] = b[4] - d * u[3]
    c2[2] = b[7] - d * u[6]
    n2 = sqrt(c2[0] * c2[0] + c2[1] * c2[1] + c2[2] * c2[2])
    if n2 > 1e-14 * n1:
        for i in range(3):
            u[3 * i + 1] = c2[i] / n2
        sig[1] = n2
    else:
        # rank 1: complete with the axis least aligned with u_0
        axis = 0
        best = fabs(u[0])
        if fabs(u[3]) < best:
            best = fabs(u[3]); axis = 1
        if fabs(u[6]) < best:
            axis = 2
        c2[0] = -u[0] * u[3 * axis]
        c2[1] = -u[3] * u[3 * axis]
        c2[2] = -u[6] * u[3 * axis]
        c2[axis] += 1.0
        n2 = sqrt(c2[0] * c2[0] + c2[1] * c2[1] + c2[2] * c2[2])
        for i in range(3):
            u[3 * i + 1] = c2[i] / n2
        sig[1] = 0.0

    # right-handed completion; signed smallest singular value
    u[2] = u[3] * u[7] - u[6] * u[4]
    u[5] = u[6] * u[1] - u[0] * u[7]
    u[8] = u[0] * u[4] - u[3] * u[1]
    sig[2] = u[2] * b[2] + u[5] * b[5] + u[8] * b[8]


cdef void _mat_to_quat(double* r, double* q) noexcept nogil:
    """Rotation matrix (row-major) to unit quaternion wxyz with w >= 0."""
    cdef double tr = r[0] + r[4] + r[8]
    cdef double m = tr
    cdef int choice = 0
    cdef double s, inv
    if r[0] > m:
        m = r[0]; choice = 1
    if r[4] > m:
        m = r[4]; choice = 2
    if r[8] > m:
        choice = 3
    if choice == 0:
        s = sqrt(tr + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (r[7] - r[5]) / s
        q[2] = (r[2] - r[6]) / s
        q[3] = (r[3] - r[1]) / s
    elif choice == 1:
        s = sqrt(1.0 + r[0] - r[4] - r[8]) * 2.0
        q[0] = (r[7] - r[5]) / s
        q[1] = 0.25 * s
        q[2] = (r[1] + r[3]) / s
        q[3] = (r[2] + r[6]) / s
    elif choice == 2:
        s = sqrt(1.0 - r[0] + r[4] - r[8]) * 2.0
        q[0] = (r[2] - r[6]) / s
        q[1] = (r[1] + r[3]) / s
        q[2] = 0.25 * s
        q[3] = (r[5] + r[7]) / s
    else:
        s = sqrt(1.0 - r[0] - r[4] + r[8]) * 2.0
        q[0] = (r[3] - r[1]) / s
        q[1] = (r[2] + r[6]) / s
        q[2] = (r[5] + r[7]) / s
        q[3] = 0.25 * s
    inv = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    inv = 1.0 / inv
    if q[0] < 0:
        inv = -inv
    q[0] *= inv; q[1] *= inv; q[2] *= inv; q[3] *= inv


cdef void _row_transfer(int mode,
                        const double* mu,
                        const double[:, ::1] xa,
                        const double[:, ::1] ya,
                        const long long* idx,
                        const double* w_base,
                        const cnp.uint8_t* eligible,
                        Py_ssize_t n_nbr,
                        double* disp,
                        double* quat,
                        double* scale,
                        cnp.uint8_t* ok) noexcept nogil:
    cdef Py_ssize_t k
    cdef long long a
    cdef int i, j, neff = 0
    cdef double wsum = 0.0, wk
    cdef double dx, dy, dz
    cdef double xbar[3]
    cdef double ybar[3]
    cdef double cov[9]
    cdef double u[9]
    cdef double v[9]
    cdef double r[9]
    cdef double sig[3]
    cdef double varx, trace_ds, s_fit, good
    cdef double tx, ty, tz

    quat[0] = 1.0; quat[1] = 0.0; quat[2] = 0.0; quat[3] = 0.0
    disp[0] = 0.0; disp[1] = 0.0; disp[2] = 0.0
    scale[0] = 1.0
    ok[0] = 0

    for k in range(n_nbr):
        if eligible[idx[k]] and w_base[k] > 0.0:
            wsum += w_base[k]
            neff += 1
    if wsum <= 0.0:
        return

    if mode == C_LINEAR or mode == C_LINEAR_RS:
        dx = 0.0; dy = 0.0; dz = 0.0
        for k in range(n_nbr):
            a = idx[k]
            if eligible[a] and w_base[k] > 0.0:
                wk = w_base[k] / wsum
                dx += wk * (ya[a, 0] - xa[a, 0])
                dy += wk * (ya[a, 1] - xa[a, 1])
                dz += wk * (ya[a, 2] - xa[a, 2])
        disp[0] = dx; disp[1] = dy; disp[2] = dz
        ok[0] = 1
        if mode == C_LINEAR:
            return

        # rotation/scale about the origin with the translation held fixed
        for i in range(9):
            cov[i] = 0.0
        varx = 0.0
        for k in range(n_nbr):
            a = idx[k]
            if eligible[a] and w_base[k] > 0.0:
                wk = w_base[k] / wsum
                for i in range(3):
                    for j in range(3):
                        cov[3 * i + j] += wk * (ya[a, i] - disp[i]) * xa[a, j]
                varx += wk * (xa[a, 0] * xa[a, 0] + xa[a, 1] * xa[a, 1] + xa[a, 2] * xa[a, 2])
        _svd3_signed(cov, u, sig, v)
        trace_ds = sig[0] + sig[1] + sig[2]
        if neff < 3 or varx <= TINY or sig[0] <= TINY or sig[1] <= RANK_RTOL * sig[0]:
            ok[0] = 0
            return
        s_fit = trace_ds / varx
        if s_fit <= 0.0:
            ok[0] = 0
            return
        for i in range(3):
            for j in range(3):
                r[3 * i + j] = (u[3 * i] * v[3 * j]
                                + u[3 * i + 1] * v[3 * j + 1]
                                + u[3 * i + 2] * v[3 * j + 2])
        _mat_to_quat(r, quat)
        scale[0] = s_fit
        ok[0] = 1
        return

    # rigid: weighted similarity fit of neighbor motion
    xbar[0] = 0.0; xbar[1] = 0.0; xbar[2] = 0.0
    ybar[0] = 0.0; ybar[1] = 0.0; ybar[2] = 0.0
    for k in range(n_nbr):
        a = idx[k]
        if eligible[a] and w_base[k] > 0.0:
            wk = w_base[k] / wsum
            for i in range(3):
                xbar[i] += wk * xa[a, i]
                ybar[i] += wk * ya[a, i]
    for i in range(9):
        cov[i] = 0.0
    varx = 0.0
    for k in range(n_nbr):
        a = idx[k]
        if eligible[a] and w_base[k] > 0.0:
            wk = w_base[k] / wsum
            for i in range(3):
                for j in range(3):
                    cov[3 * i + j] += wk * (ya[a, i] - ybar[i]) * (xa[a, j] - xbar[j])
            dx = xa[a, 0] - xbar[0]
            dy = xa[a, 1] - xbar[1]
            dz = xa[a, 2] - xbar[2]
            varx += wk * (dx * dx + dy * dy + dz * dz)

    # translation-only fallback stays valid whatever happens below
    disp[0] = ybar[0] - xbar[0]
    disp[1] = ybar[1] - xbar[1]
    disp[2] = ybar[2] - xbar[2]

    if neff < 3 or varx <= TINY:
        return
    _svd3_signed(cov, u, sig, v)
    if sig[0] <= TINY or sig[1] <= RANK_RTOL * sig[0]:
        return
    trace_ds = sig[0] + sig[1] + sig[2]
    s_fit = trace_ds / varx
    if s_fit <= 0.0:
        return
    for i in range(3):
        for j in range(3):
            r[3 * i + j] = (u[3 * i] * v[3 * j]
                            + u[3 * i + 1] * v[3 * j + 1]
                            + u[3 * i + 2] * v[3 * j + 2])
    # displacement of this Gaussian under the fitted similarity
    tx = ybar[0] - s_fit * (r[0] * xbar[0] + r[1] * xbar[1] + r[2] * xbar[2])
    ty = ybar[1] - s_fit * (r[3] * xbar[0] + r[4] * xbar[1] + r[5] * xbar[2])
    tz = ybar[2] - s_fit * (r[6] * xbar[0] + r[7] * xbar[1] + r[8] * xbar[2])
    disp[0] = s_fit * (r[0] * mu[0] + r[1] * mu[1] + r[2] * mu[2]) + tx - mu[0]
    disp[1] = s_fit * (r[3] * mu[0] + r[4] * mu[1] + r[5] * mu[2]) + ty - mu[1]
    disp[2] = s_fit * (r[6] * mu[0] + r[7] * mu[1] + r[8] * mu[2]) + tz - mu[2]
    _mat_to_quat(r, quat)
    scale[0] = s_fit
    ok[0] = 1


def transfer_step(mu, x_anchors, y_anchors, nbr_idx, base_weights, eligible,
                  int mode, int n_threads=0):
    cdef double[:, ::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] xa = np.ascontiguousarray(x_anchors, dtype=np.float64)
    cdef double[:, ::1] ya = np.ascontiguousarray(y_anchors, dtype=np.float64)
    cdef long long[:, ::1] idx = np.ascontiguousarray(nbr_idx, dtype=np.int64)
    cdef double[:, ::1] w = np.ascontiguousarray(base_weights, dtype=np.float64)
    cdef cnp.uint8_t[::1] el = np.ascontiguousarray(
        np.asarray(eligible, dtype=bool).view(np.uint8))

    cdef Py_ssize_t m_total = mu_v.shape[0]
    cdef Py_ssize_t n_nbr = idx.shape[1]
    if w.shape[0] != m_total or w.shape[1] != n_nbr or idx.shape[0] != m_total:
        raise ValueError("neighbor index/weight shapes do not match")

    disp_arr = np.zeros((m_total, 3), dtype=np.float64)
    quat_arr = np.zeros((m_total, 4), dtype=np.float64)
    scale_arr = np.ones(m_total, dtype=np.float64)
    ok_arr = np.zeros(m_total, dtype=np.uint8)
    cdef double[:, ::1] disp = disp_arr
    cdef double[:, ::1] quat = quat_arr
    cdef double[::1] scale = scale_arr
    cdef cnp.uint8_t[::1] ok = ok_arr

    if n_threads > 0:
        openmp.omp_set_num_threads(n_threads)

    cdef Py_ssize_t row
    with nogil:
        for row in prange(m_total, schedule="static"):
            _row_transfer(mode, &mu_v[row, 0], xa, ya, &idx[row, 0],
                          &w[row, 0], &el[0], n_nbr,
                          &disp[row, 0], &quat[row, 0], &scale[row], &ok[row])

    return disp_arr, quat_arr, scale_arr, ok_arr
