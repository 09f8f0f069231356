# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled coupling kernels; same contract as _numpy_impl (see its docstring).

Per-element C loops instead of vectorized array math. Bin counts are capped
at 32 so knot scratch fits in fixed stack buffers.
"""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, tanh

MIN_BIN = 1e-3

cdef double _MB = 1e-3
cdef double _C0 = 0.5413248546129181  # softplus(x + C0) == 1 at x == 0
cdef int _KMAX = 32


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------


def affine_forward(x_in, raw_in, t_in, double s_cap):
    cdef double[:, :] x = x_in
    cdef double[:, :] raw = raw_in
    cdef double[:, :] t = t_in
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    y_out = np.empty((n, k))
    ld_out = np.empty(n)
    cdef double[:, ::1] y = y_out
    cdef double[::1] ld = ld_out
    cdef double s, acc
    for i in range(n):
        acc = 0.0
        for j in range(k):
            s = s_cap * tanh(raw[i, j])
            y[i, j] = x[i, j] * exp(s) + t[i, j]
            acc += s
        ld[i] = acc
    return y_out, ld_out


def affine_inverse(u_in, raw_in, t_in, double s_cap):
    cdef double[:, :] u = u_in
    cdef double[:, :] raw = raw_in
    cdef double[:, :] t = t_in
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, j
    x_out = np.empty((n, k))
    ld_out = np.empty(n)
    cdef double[:, ::1] x = x_out
    cdef double[::1] ld = ld_out
    cdef double s, acc
    for i in range(n):
        acc = 0.0
        for j in range(k):
            s = s_cap * tanh(raw[i, j])
            x[i, j] = (u[i, j] - t[i, j]) * exp(-s)
            acc += s
        ld[i] = -acc
    return x_out, ld_out


def affine_partials(inp_in, raw_in, t_in, double s_cap, bint inverse):
    cdef double[:, :] inp = inp_in
    cdef double[:, :] raw = raw_in
    cdef double[:, :] t = t_in
    cdef Py_ssize_t n = inp.shape[0], k = inp.shape[1], i, j
    d_in_out = np.empty((n, k))
    d_raw_out = np.empty((n, k))
    d_t_out = np.empty((n, k))
    l_raw_out = np.empty((n, k))
    cdef double[:, ::1] d_in = d_in_out
    cdef double[:, ::1] d_raw = d_raw_out
    cdef double[:, ::1] d_t = d_t_out
    cdef double[:, ::1] l_raw = l_raw_out
    cdef double th, c, e
    for i in range(n):
        for j in range(k):
            th = tanh(raw[i, j])
            c = s_cap * (1.0 - th * th)
            if not inverse:
                e = exp(s_cap * th)
                d_in[i, j] = e
                d_raw[i, j] = inp[i, j] * e * c
                d_t[i, j] = 1.0
                l_raw[i, j] = c
            else:
                e = exp(-s_cap * th)
                d_in[i, j] = e
                d_raw[i, j] = -(inp[i, j] - t[i, j]) * e * c
                d_t[i, j] = -e
                l_raw[i, j] = -c
    return d_in_out, d_raw_out, d_t_out, l_raw_out


# ---------------------------------------------------------------------------
# rational-quadratic spline
# ---------------------------------------------------------------------------


cdef void _knots_el(const double* th, int K, double B, double* sm_w, double* S_w,
                    double* sm_h, double* S_h, double* xk, double* yk,
                    double* dlt, double* spsig) noexcept nogil:
    cdef int i
    cdef double mx, tot, kappa, z, cum
    kappa = 1.0 - K * _MB

    mx = th[0]
    for i in range(1, K):
        if th[i] > mx:
            mx = th[i]
    tot = 0.0
    for i in range(K):
        sm_w[i] = exp(th[i] - mx)
        tot += sm_w[i]
    cum = 0.0
    xk[0] = -B
    for i in range(K):
        sm_w[i] /= tot
        cum += sm_w[i]
        S_w[i] = cum
        xk[i + 1] = -B + 2.0 * B * (kappa * cum + _MB * (i + 1))
    xk[K] = B

    mx = th[K]
    for i in range(1, K):
        if th[K + i] > mx:
            mx = th[K + i]
    tot = 0.0
    for i in range(K):
        sm_h[i] = exp(th[K + i] - mx)
        tot += sm_h[i]
    cum = 0.0
    yk[0] = -B
    for i in range(K):
        sm_h[i] /= tot
        cum += sm_h[i]
        S_h[i] = cum
        yk[i + 1] = -B + 2.0 * B * (kappa * cum + _MB * (i + 1))
    yk[K] = B

    dlt[0] = 1.0
    dlt[K] = 1.0
    for i in range(1, K):
        z = th[2 * K + i - 1] + _C0
        if z > 30.0:
            dlt[i] = z
        else:
            dlt[i] = log1p(exp(z))
        spsig[i - 1] = 1.0 / (1.0 + exp(-z))


cdef inline int _find_bin(double v, const double* knots, int K) noexcept nogil:
    cdef int idx = 0, l
    for l in range(1, K):
        if v >= knots[l]:
            idx = l
    return idx


def rqs_forward(x_in, theta_in, int n_bins, double bound):
    cdef double[:, :] x = x_in
    cdef double[:, :, ::1] theta = np.ascontiguousarray(theta_in)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    y_out = np.empty((n, k))
    ld_out = np.empty(n)
    cdef double[:, ::1] y = y_out
    cdef double[::1] ld = ld_out
    cdef double sm_w[32]
    cdef double S_w[32]
    cdef double sm_h[32]
    cdef double S_h[32]
    cdef double xk[33]
    cdef double yk[33]
    cdef double dlt[33]
    cdef double spsig[32]
    cdef int idx
    cdef double v, acc, xa, w, ya, h, da, db, s, xi, q, dd, Q, N, R
    for i in range(n):
        acc = 0.0
        for j in range(k):
            v = x[i, j]
            if v < -bound or v > bound:
                y[i, j] = v
                continue
            _knots_el(&theta[i, j, 0], n_bins, bound, sm_w, S_w, sm_h, S_h,
                      xk, yk, dlt, spsig)
            idx = _find_bin(v, xk, n_bins)
            xa = xk[idx]
            w = xk[idx + 1] - xa
            ya = yk[idx]
            h = yk[idx + 1] - ya
            da = dlt[idx]
            db = dlt[idx + 1]
            s = h / w
            xi = (v - xa) / w
            q = xi * (1.0 - xi)
            dd = da + db - 2.0 * s
            Q = s + dd * q
            N = s * xi * xi + da * q
            R = db * xi * xi + 2.0 * s * q + da * (1.0 - xi) * (1.0 - xi)
            y[i, j] = ya + h * N / Q
            acc += 2.0 * log(s) + log(R) - 2.0 * log(Q)
        ld[i] = acc
    return y_out, ld_out


def rqs_inverse(u_in, theta_in, int n_bins, double bound):
    cdef double[:, :] u = u_in
    cdef double[:, :, ::1] theta = np.ascontiguousarray(theta_in)
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, j
    x_out = np.empty((n, k))
    ld_out = np.empty(n)
    cdef double[:, ::1] x = x_out
    cdef double[::1] ld = ld_out
    cdef double sm_w[32]
    cdef double S_w[32]
    cdef double sm_h[32]
    cdef double S_h[32]
    cdef double xk[33]
    cdef double yk[33]
    cdef double dlt[33]
    cdef double spsig[32]
    cdef int idx
    cdef double v, acc, xa, w, ya, h, da, db, s, xi, q, dd, Q, R
    cdef double dy, a_c, b_c, c_c, disc
    for i in range(n):
        acc = 0.0
        for j in range(k):
            v = u[i, j]
            if v < -bound or v > bound:
                x[i, j] = v
                continue
            _knots_el(&theta[i, j, 0], n_bins, bound, sm_w, S_w, sm_h, S_h,
                      xk, yk, dlt, spsig)
            idx = _find_bin(v, yk, n_bins)
            xa = xk[idx]
            w = xk[idx + 1] - xa
            ya = yk[idx]
            h = yk[idx + 1] - ya
            da = dlt[idx]
            db = dlt[idx + 1]
            s = h / w
            dy = v - ya
            dd = da + db - 2.0 * s
            a_c = h * (s - da) + dy * dd
            b_c = h * da - dy * dd
            c_c = -s * dy
            disc = b_c * b_c - 4.0 * a_c * c_c
            if disc < 0.0:
                disc = 0.0
            xi = 2.0 * c_c / (-b_c - sqrt(disc))
            x[i, j] = xa + w * xi
            q = xi * (1.0 - xi)
            Q = s + dd * q
            R = db * xi * xi + 2.0 * s * q + da * (1.0 - xi) * (1.0 - xi)
            acc -= 2.0 * log(s) + log(R) - 2.0 * log(Q)
        ld[i] = acc
    return x_out, ld_out


cdef void _partials_el(double v, const double* th, int K, double B,
                       double* d_in, double* d_th, double* l_in, double* l_th,
                       bint inverse) noexcept nogil:
    """Fill one element's partial rows (d_th, l_th have 3K-1 slots)."""
    cdef double sm_w[32]
    cdef double S_w[32]
    cdef double sm_h[32]
    cdef double S_h[32]
    cdef double xk[33]
    cdef double yk[33]
    cdef double dlt[33]
    cdef double spsig[32]
    cdef int idx, jj, l, P
    cdef double xa, w, ya, h, da, db, s, xi, q, dd, Q, N, R, Q2
    cdef double dy, a_c, b_c, c_c, disc
    cdef double one_m_xi, N_xi, N_h, N_w, N_a, Q_xi, Q_h, Q_w, Q_ab
    cdef double R_xi, R_h, R_w, R_a, R_b
    cdef double F_xi, y_h, y_w, y_a, y_b
    cdef double lam_xi, lam_h, lam_w, lam_a, lam_b
    cdef double din, lin, y_w_tot, y_xa_tot, lam_w_tot, lam_xa_tot
    cdef double gy_xa, gy_xb, gy_ya, gy_yb, gy_da, gy_db
    cdef double gl_xa, gl_xb, gl_ya, gl_yb, gl_da, gl_db
    cdef double scale, Sl, c1, c2, ind, inv_d

    P = 3 * K - 1
    _knots_el(th, K, B, sm_w, S_w, sm_h, S_h, xk, yk, dlt, spsig)

    if inverse:
        idx = _find_bin(v, yk, K)
    else:
        idx = _find_bin(v, xk, K)
    xa = xk[idx]
    w = xk[idx + 1] - xa
    ya = yk[idx]
    h = yk[idx + 1] - ya
    da = dlt[idx]
    db = dlt[idx + 1]
    s = h / w

    if inverse:
        dy = v - ya
        dd = da + db - 2.0 * s
        a_c = h * (s - da) + dy * dd
        b_c = h * da - dy * dd
        c_c = -s * dy
        disc = b_c * b_c - 4.0 * a_c * c_c
        if disc < 0.0:
            disc = 0.0
        xi = 2.0 * c_c / (-b_c - sqrt(disc))
    else:
        xi = (v - xa) / w

    q = xi * (1.0 - xi)
    dd = da + db - 2.0 * s
    Q = s + dd * q
    N = s * xi * xi + da * q
    R = db * xi * xi + 2.0 * s * q + da * (1.0 - xi) * (1.0 - xi)

    one_m_xi = 1.0 - xi
    N_xi = 2.0 * s * xi + da * (1.0 - 2.0 * xi)
    N_h = xi * xi / w
    N_w = -s * xi * xi / w
    N_a = q
    Q_xi = dd * (1.0 - 2.0 * xi)
    Q_h = (1.0 - 2.0 * q) / w
    Q_w = -s * (1.0 - 2.0 * q) / w
    Q_ab = q
    R_xi = 2.0 * (db * xi + s * (1.0 - 2.0 * xi) - da * one_m_xi)
    R_h = 2.0 * q / w
    R_w = -2.0 * s * q / w
    R_a = one_m_xi * one_m_xi
    R_b = xi * xi

    Q2 = Q * Q
    F_xi = h * (N_xi * Q - N * Q_xi) / Q2
    y_h = N / Q + h * (N_h * Q - N * Q_h) / Q2
    y_w = h * (N_w * Q - N * Q_w) / Q2
    y_a = h * (N_a * Q - N * Q_ab) / Q2
    y_b = -h * N * Q_ab / Q2

    lam_xi = R_xi / R - 2.0 * Q_xi / Q
    lam_h = 2.0 / h + R_h / R - 2.0 * Q_h / Q
    lam_w = -2.0 / w + R_w / R - 2.0 * Q_w / Q
    lam_a = R_a / R - 2.0 * Q_ab / Q
    lam_b = R_b / R - 2.0 * Q_ab / Q

    din = F_xi / w
    lin = lam_xi / w
    y_w_tot = y_w - F_xi * xi / w
    y_xa_tot = -F_xi / w
    lam_w_tot = lam_w - lam_xi * xi / w
    lam_xa_tot = -lam_xi / w

    gy_xa = y_xa_tot - y_w_tot
    gy_xb = y_w_tot
    gy_ya = 1.0 - y_h
    gy_yb = y_h
    gy_da = y_a
    gy_db = y_b
    gl_xa = lam_xa_tot - lam_w_tot
    gl_xb = lam_w_tot
    gl_ya = -lam_h
    gl_yb = lam_h
    gl_da = lam_a
    gl_db = lam_b

    for jj in range(P):
        d_th[jj] = 0.0
        l_th[jj] = 0.0

    scale = 2.0 * B * (1.0 - K * _MB)
    # width block: knots idx and idx+1 depend on the width softmax
    l = idx
    if 1 <= l <= K - 1:
        Sl = S_w[l - 1]
        for jj in range(K):
            ind = 1.0 if jj < l else 0.0
            d_th[jj] += gy_xa * scale * sm_w[jj] * (ind - Sl)
            l_th[jj] += gl_xa * scale * sm_w[jj] * (ind - Sl)
    l = idx + 1
    if 1 <= l <= K - 1:
        Sl = S_w[l - 1]
        for jj in range(K):
            ind = 1.0 if jj < l else 0.0
            d_th[jj] += gy_xb * scale * sm_w[jj] * (ind - Sl)
            l_th[jj] += gl_xb * scale * sm_w[jj] * (ind - Sl)
    # height block
    l = idx
    if 1 <= l <= K - 1:
        Sl = S_h[l - 1]
        for jj in range(K):
            ind = 1.0 if jj < l else 0.0
            d_th[K + jj] += gy_ya * scale * sm_h[jj] * (ind - Sl)
            l_th[K + jj] += gl_ya * scale * sm_h[jj] * (ind - Sl)
    l = idx + 1
    if 1 <= l <= K - 1:
        Sl = S_h[l - 1]
        for jj in range(K):
            ind = 1.0 if jj < l else 0.0
            d_th[K + jj] += gy_yb * scale * sm_h[jj] * (ind - Sl)
            l_th[K + jj] += gl_yb * scale * sm_h[jj] * (ind - Sl)
    # interior derivative block
    if idx >= 1:
        d_th[2 * K + idx - 1] += gy_da * spsig[idx - 1]
        l_th[2 * K + idx - 1] += gl_da * spsig[idx - 1]
    if idx + 1 <= K - 1:
        d_th[2 * K + idx] += gy_db * spsig[idx]
        l_th[2 * K + idx] += gl_db * spsig[idx]

    if not inverse:
        d_in[0] = din
        l_in[0] = lin
        return

    # inverse-function-theorem transform of the forward partials
    inv_d = 1.0 / din
    d_in[0] = inv_d
    l_in[0] = -lin * inv_d
    for jj in range(P):
        l_th[jj] = lin * d_th[jj] * inv_d - l_th[jj]
        d_th[jj] = -d_th[jj] * inv_d


def rqs_forward_partials(x_in, theta_in, int n_bins, double bound):
    cdef double[:, :] x = x_in
    cdef double[:, :, ::1] theta = np.ascontiguousarray(theta_in)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    cdef int P = 3 * n_bins - 1
    D_in_out = np.ones((n, k))
    L_in_out = np.zeros((n, k))
    D_th_out = np.zeros((n, k, P))
    L_th_out = np.zeros((n, k, P))
    cdef double[:, ::1] D_in = D_in_out
    cdef double[:, ::1] L_in = L_in_out
    cdef double[:, :, ::1] D_th = D_th_out
    cdef double[:, :, ::1] L_th = L_th_out
    cdef double v
    for i in range(n):
        for j in range(k):
            v = x[i, j]
            if v < -bound or v > bound:
                continue
            _partials_el(v, &theta[i, j, 0], n_bins, bound,
                         &D_in[i, j], &D_th[i, j, 0], &L_in[i, j],
                         &L_th[i, j, 0], 0)
    return D_in_out, D_th_out, L_in_out, L_th_out


def rqs_inverse_partials(u_in, theta_in, int n_bins, double bound):
    cdef double[:, :] u = u_in
    cdef double[:, :, ::1] theta = np.ascontiguousarray(theta_in)
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, j
    cdef int P = 3 * n_bins - 1
    D_in_out = np.ones((n, k))
    L_in_out = np.zeros((n, k))
    D_th_out = np.zeros((n, k, P))
    L_th_out = np.zeros((n, k, P))
    cdef double[:, ::1] D_in = D_in_out
    cdef double[:, ::1] L_in = L_in_out
    cdef double[:, :, ::1] D_th = D_th_out
    cdef double[:, :, ::1] L_th = L_th_out
    cdef double v
    for i in range(n):
        for j in range(k):
            v = u[i, j]
            if v < -bound or v > bound:
                continue
            _partials_el(v, &theta[i, j, 0], n_bins, bound,
                         &D_in[i, j], &D_th[i, j, 0], &L_in[i, j],
                         &L_th[i, j, 0], 1)
    return D_in_out, D_th_out, L_in_out, L_th_out
