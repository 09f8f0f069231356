"""Pure-numpy coupling kernels.

Each transform comes in three flavours: forward value, inverse value, and a
partials routine returning the full local derivatives needed by the tape.
Shapes: inputs are (n, k) slices of the transformed coordinates, spline
parameters are (n, k, 3*K-1) raw conditioner outputs laid out as
[K width logits | K height logits | K-1 interior derivative raws].

The rational-quadratic spline follows the usual monotone construction:
softmax bin widths/heights with a 1e-3 floor rescale, softplus knot
derivatives with the boundary derivatives pinned to 1, linear (identity)
tails outside [-B, B], and the analytic quadratic-root inverse.
"""

import numpy as np

MIN_BIN = 1e-3
# softplus(x + C0) equals 1 at x = 0, so zero raw parameters give unit slopes
C0 = 0.5413248546129181


# ---------------------------------------------------------------------------
# affine coupling: y = x * exp(s) + t with s = s_cap * tanh(raw_s)
# ---------------------------------------------------------------------------


def affine_forward(x, raw_s, t, s_cap):
    s = s_cap * np.tanh(raw_s)
    y = x * np.exp(s) + t
    return y, s.sum(axis=1)


def affine_inverse(u, raw_s, t, s_cap):
    s = s_cap * np.tanh(raw_s)
    x = (u - t) * np.exp(-s)
    return x, -s.sum(axis=1)


def affine_partials(inp, raw_s, t, s_cap, inverse):
    """Derivatives of (out, ld) wrt (inp, raw_s, t).

    Returns (D_in, D_raw, D_t, L_raw), all (n, k); ld depends on raw_s only.
    """
    th = np.tanh(raw_s)
    c = s_cap * (1.0 - th * th)
    if not inverse:
        es = np.exp(s_cap * th)
        return es, inp * es * c, np.ones_like(inp), c
    esi = np.exp(-s_cap * th)
    return esi, -(inp - t) * esi * c, -esi, -c


# ---------------------------------------------------------------------------
# rational-quadratic spline coupling
# ---------------------------------------------------------------------------


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _knots(theta, n_bins, bound):
    """Raw parameters -> (sm_w, S_w, sm_h, S_h, xk, yk, dlt, sp_sig).

    xk/yk are the (m, K+1) knot abscissas/ordinates with endpoints pinned to
    +-bound; dlt the (m, K+1) derivatives with boundaries pinned to 1;
    sp_sig the softplus slope sigmoid(raw_d + C0) kept for the backward.
    """
    K = n_bins
    m = theta.shape[0]
    raw_w = theta[:, :K]
    raw_h = theta[:, K : 2 * K]
    raw_d = theta[:, 2 * K :]
    sm_w = _softmax(raw_w)
    sm_h = _softmax(raw_h)
    S_w = np.cumsum(sm_w, axis=-1)
    S_h = np.cumsum(sm_h, axis=-1)
    kappa = 1.0 - K * MIN_BIN
    steps = MIN_BIN * np.arange(1, K + 1)
    xk = np.empty((m, K + 1))
    yk = np.empty((m, K + 1))
    xk[:, 0] = -bound
    yk[:, 0] = -bound
    xk[:, 1:] = -bound + 2.0 * bound * (kappa * S_w + steps)
    yk[:, 1:] = -bound + 2.0 * bound * (kappa * S_h + steps)
    xk[:, K] = bound
    yk[:, K] = bound
    z = raw_d + C0
    sp_sig = 1.0 / (1.0 + np.exp(-z))
    soft = np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))
    dlt = np.empty((m, K + 1))
    dlt[:, 0] = 1.0
    dlt[:, K] = 1.0
    dlt[:, 1:K] = soft
    return sm_w, S_w, sm_h, S_h, xk, yk, dlt, sp_sig


def _bin_index(v, knots, n_bins):
    idx = (v[:, None] >= knots[:, :-1]).sum(axis=-1) - 1
    return np.clip(idx, 0, n_bins - 1)


def _take(arr, idx):
    return np.take_along_axis(arr, idx[:, None], axis=-1)[:, 0]


def _bin_quantities(v, theta, n_bins, bound, from_y):
    ctx = _knots(theta, n_bins, bound)
    sm_w, S_w, sm_h, S_h, xk, yk, dlt, sp_sig = ctx
    idx = _bin_index(v, yk if from_y else xk, n_bins)
    xa = _take(xk, idx)
    w = _take(xk, idx + 1) - xa
    ya = _take(yk, idx)
    h = _take(yk, idx + 1) - ya
    da = _take(dlt, idx)
    db = _take(dlt, idx + 1)
    return ctx, idx, xa, w, ya, h, da, db


def _fwd_core(xi, w, h, da, db):
    """Common rational-quadratic pieces at local coordinate xi in [0, 1]."""
    s = h / w
    q = xi * (1.0 - xi)
    dd = da + db - 2.0 * s
    Q = s + dd * q
    N = s * xi * xi + da * q
    R = db * xi * xi + 2.0 * s * q + da * (1.0 - xi) * (1.0 - xi)
    deriv = s * s * R / (Q * Q)
    return s, q, dd, Q, N, R, deriv


def rqs_forward(x, theta, n_bins, bound):
    n, k = x.shape
    inside = np.abs(x) <= bound
    y = x.copy()
    lam_full = np.zeros((n, k))
    if inside.any():
        xf = x[inside]
        _, idx, xa, w, ya, h, da, db = _bin_quantities(
            xf, theta[inside], n_bins, bound, from_y=False
        )
        xi = (xf - xa) / w
        s, q, dd, Q, N, R, deriv = _fwd_core(xi, w, h, da, db)
        y[inside] = ya + h * N / Q
        lam_full[inside] = 2.0 * np.log(s) + np.log(R) - 2.0 * np.log(Q)
    return y, lam_full.sum(axis=1)


def rqs_inverse(u, theta, n_bins, bound):
    n, k = u.shape
    inside = np.abs(u) <= bound
    x = u.copy()
    lam_full = np.zeros((n, k))
    if inside.any():
        uf = u[inside]
        _, idx, xa, w, ya, h, da, db = _bin_quantities(
            uf, theta[inside], n_bins, bound, from_y=True
        )
        dy = uf - ya
        s = h / w
        dd = da + db - 2.0 * s
        a_c = h * (s - da) + dy * dd
        b_c = h * da - dy * dd
        c_c = -s * dy
        disc = np.maximum(b_c * b_c - 4.0 * a_c * c_c, 0.0)
        xi = 2.0 * c_c / (-b_c - np.sqrt(disc))
        x[inside] = xa + w * xi
        _, q, _, Q, _, R, deriv = _fwd_core(xi, w, h, da, db)
        lam_full[inside] = -(2.0 * np.log(s) + np.log(R) - 2.0 * np.log(Q))
    return x, lam_full.sum(axis=1)


def _fwd_partials_local(xf, theta_f, n_bins, bound):
    """Forward partials for inside elements, flattened to (m,).

    Returns per-element dicts of derivatives of y and lam = log dy/dx with
    respect to the input and the raw parameter vector (m, P).
    """
    K = n_bins
    ctx, idx, xa, w, ya, h, da, db = _bin_quantities(
        xf, theta_f, K, bound, from_y=False
    )
    xi = (xf - xa) / w
    sm_w, S_w, sm_h, S_h, xk, yk, dlt, sp_sig = ctx
    s, q, dd, Q, N, R, deriv = _fwd_core(xi, w, h, da, db)

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

    # totals treating (x, knots, deltas) as the independents
    D_in = F_xi / w
    L_in = lam_xi / w
    y_w_tot = y_w - F_xi * xi / w
    y_xa_tot = -F_xi / w
    lam_w_tot = lam_w - lam_xi * xi / w
    lam_xa_tot = -lam_xi / w

    # knot-level gradients: xk[idx], xk[idx+1], yk[idx], yk[idx+1]
    g = {
        "y": {
            "xa": y_xa_tot - y_w_tot,
            "xb": y_w_tot,
            "ya": 1.0 - y_h,
            "yb": y_h,
            "da": y_a,
            "db": y_b,
        },
        "lam": {
            "xa": lam_xa_tot - lam_w_tot,
            "xb": lam_w_tot,
            "ya": -lam_h,
            "yb": lam_h,
            "da": lam_a,
            "db": lam_b,
        },
    }
    return idx, sm_w, S_w, sm_h, S_h, sp_sig, D_in, L_in, deriv, g


def _chain_to_raw(idx, sm, S, coeff_a, coeff_b, n_bins, bound):
    """Map gradients on cumulative knots idx and idx+1 back to softmax raws."""
    K = n_bins
    kappa = 1.0 - K * MIN_BIN
    scale = 2.0 * bound * kappa
    j = np.arange(K)

    def contrib(l, coeff):
        valid = (l >= 1) & (l <= K - 1)
        c = np.where(valid, coeff, 0.0)
        lc = np.clip(l, 1, K - 1)
        S_l = np.take_along_axis(S, (lc - 1)[:, None], axis=-1)
        ind = (j[None, :] < lc[:, None]).astype(np.float64)
        return c[:, None] * scale * sm * (ind - S_l)

    return contrib(idx, coeff_a) + contrib(idx + 1, coeff_b)


def _scatter_deriv_block(idx, vals_a, vals_b, sp_sig, n_bins):
    """Gradients on (da, db) back to the K-1 interior derivative raws."""
    K = n_bins
    m = idx.shape[0]
    out = np.zeros((m, K - 1))
    rows = np.arange(m)
    # da sits at interior slot idx-1 (when idx >= 1), db at slot idx
    out[rows, np.clip(idx - 1, 0, K - 2)] = np.where(idx >= 1, vals_a, 0.0)
    out[rows, np.clip(idx, 0, K - 2)] += np.where(idx + 1 <= K - 1, vals_b, 0.0)
    return out * sp_sig


def _assemble_raw_partials(idx, sm_w, S_w, sm_h, S_h, sp_sig, g, n_bins, bound):
    K = n_bins
    blocks = []
    for part in ("y", "lam"):
        gp = g[part]
        bw = _chain_to_raw(idx, sm_w, S_w, gp["xa"], gp["xb"], K, bound)
        bh = _chain_to_raw(idx, sm_h, S_h, gp["ya"], gp["yb"], K, bound)
        bd = _scatter_deriv_block(idx, gp["da"], gp["db"], sp_sig, K)
        blocks.append(np.concatenate([bw, bh, bd], axis=-1))
    return blocks  # [y_raw (m, P), lam_raw (m, P)]


def rqs_forward_partials(x, theta, n_bins, bound):
    """Derivatives of (y, ld) wrt (x, theta).

    Returns (D_in, D_th, L_in, L_th) with shapes (n,k), (n,k,P), (n,k), (n,k,P).
    """
    n, k = x.shape
    P = 3 * n_bins - 1
    D_in = np.ones((n, k))
    L_in = np.zeros((n, k))
    D_th = np.zeros((n, k, P))
    L_th = np.zeros((n, k, P))
    inside = np.abs(x) <= bound
    if inside.any():
        idx, sm_w, S_w, sm_h, S_h, sp_sig, d_in, l_in, deriv, g = _fwd_partials_local(
            x[inside], theta[inside], n_bins, bound
        )
        y_raw, lam_raw = _assemble_raw_partials(
            idx, sm_w, S_w, sm_h, S_h, sp_sig, g, n_bins, bound
        )
        D_in[inside] = d_in
        L_in[inside] = l_in
        D_th[inside] = y_raw
        L_th[inside] = lam_raw
    return D_in, D_th, L_in, L_th


def rqs_inverse_partials(u, theta, n_bins, bound):
    """Derivatives of (x, ld_inv) wrt (u, theta), via the inverse function
    theorem applied to the forward partials at the recovered preimage."""
    n, k = u.shape
    P = 3 * n_bins - 1
    D_in = np.ones((n, k))
    L_in = np.zeros((n, k))
    D_th = np.zeros((n, k, P))
    L_th = np.zeros((n, k, P))
    inside = np.abs(u) <= bound
    if not inside.any():
        return D_in, D_th, L_in, L_th

    uf = u[inside]
    theta_f = theta[inside]
    x_rec, _ = rqs_inverse(uf[:, None], theta_f[:, None, :], n_bins, bound)
    x_rec = x_rec[:, 0]
    idx, sm_w, S_w, sm_h, S_h, sp_sig, d_in, l_in, deriv, g = _fwd_partials_local(
        x_rec, theta_f, n_bins, bound
    )
    y_raw, lam_raw = _assemble_raw_partials(
        idx, sm_w, S_w, sm_h, S_h, sp_sig, g, n_bins, bound
    )
    inv_d = 1.0 / d_in
    D_in[inside] = inv_d
    L_in[inside] = -l_in * inv_d
    D_th[inside] = -y_raw * inv_d[:, None]
    L_th[inside] = l_in[:, None] * y_raw * inv_d[:, None] - lam_raw
    return D_in, D_th, L_in, L_th
