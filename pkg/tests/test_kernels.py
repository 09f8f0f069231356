"""Elementwise transform kernels: values, inverses, and analytic partials
checked against central finite differences on every available backend."""

import numpy as np
import pytest

from flowtopo import _kernels as K
from flowtopo.rng import RngStream


def _available_backends():
    names = ["python"]
    try:
        K.get_backend("cython")
        names.append("cython")
    except Exception:
        pass
    return names


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def impl(request):
    return K.get_backend(request.param)


def _rand_affine(seed, n=7, k=3):
    rng = RngStream(seed, 42)
    x = rng.standard_normal((n, k)) * 2.0
    raw = rng.standard_normal((n, k)) * 0.8
    t = rng.standard_normal((n, k)) * 0.5
    return x, raw, t


def _rand_spline(seed, n=6, k=2, n_bins=5, bound=4.0, spread=0.9):
    rng = RngStream(seed, 43)
    x = rng.uniform(-bound + 0.2, bound - 0.2, (n, k))
    theta = rng.standard_normal((n, k, 3 * n_bins - 1)) * spread
    return x, theta


def _assert_close(a, n, rel=1e-6, floor=1e-8, label=""):
    a = np.asarray(a)
    n = np.asarray(n)
    tol = np.maximum(rel * np.maximum(np.abs(a), np.abs(n)), floor)
    bad = np.abs(a - n) > tol
    assert not bad.any(), (
        f"{label}: analytic {a[bad][:4]} vs numeric {n[bad][:4]} "
        f"at {np.argwhere(bad)[:4]}"
    )


# ---- affine ---------------------------------------------------------------


def test_affine_forward_matches_formula(impl, request):
    x, raw, t = _rand_affine(0)
    y, ld = impl.affine_forward(x, raw, t, 3.0)
    s = 3.0 * np.tanh(raw)
    if request.node.callspec.params["impl"] == "python":
        # vectorized numpy path is bitwise-identical to the reference formula
        assert np.array_equal(y, x * np.exp(s) + t)
        assert np.array_equal(ld, s.sum(axis=1))
    else:
        # libm vs numpy SIMD transcendentals differ by about one ulp
        assert np.allclose(y, x * np.exp(s) + t, rtol=1e-14, atol=0)
        assert np.allclose(ld, s.sum(axis=1), rtol=1e-13, atol=0)


def test_affine_identity_at_zero_params(impl):
    x, _, _ = _rand_affine(1)
    zeros = np.zeros_like(x)
    y, ld = impl.affine_forward(x, zeros, zeros, 3.0)
    assert np.array_equal(y, x)
    assert np.array_equal(ld, np.zeros(x.shape[0]))


def test_affine_roundtrip_and_ld_antisymmetry(impl):
    x, raw, t = _rand_affine(2)
    y, ld_f = impl.affine_forward(x, raw, t, 3.0)
    x2, ld_i = impl.affine_inverse(y, raw, t, 3.0)
    assert np.allclose(x2, x, rtol=1e-13, atol=1e-13)
    assert np.allclose(ld_i, -ld_f, rtol=1e-13, atol=1e-14)


def test_affine_scale_saturates(impl):
    x = np.full((1, 2), 1.5)
    raw = np.full((1, 2), 1e4)
    y, ld = impl.affine_forward(x, raw, np.zeros((1, 2)), 3.0)
    assert np.all(np.isfinite(y))
    assert ld[0] == pytest.approx(6.0, abs=1e-12)


@pytest.mark.parametrize("inverse", [False, True])
def test_affine_partials_match_fd(impl, inverse):
    inp, raw, t = _rand_affine(3, n=5, k=2)
    s_cap = 3.0
    fn = impl.affine_inverse if inverse else impl.affine_forward
    D_in, D_raw, D_t, L_raw = impl.affine_partials(inp, raw, t, s_cap, inverse)
    h = 1e-5

    def fd(arr, i, j):
        p = arr.copy()
        m = arr.copy()
        p[i, j] += h
        m[i, j] -= h
        return p, m

    n, k = inp.shape
    for i in range(n):
        for j in range(k):
            p, m = fd(inp, i, j)
            yp, _ = fn(p, raw, t, s_cap)
            ym, _ = fn(m, raw, t, s_cap)
            _assert_close(D_in[i, j], (yp[i, j] - ym[i, j]) / (2 * h), label="D_in")

            p, m = fd(raw, i, j)
            yp, lp = fn(inp, p, t, s_cap)
            ym, lm = fn(inp, m, t, s_cap)
            _assert_close(D_raw[i, j], (yp[i, j] - ym[i, j]) / (2 * h), label="D_raw")
            _assert_close(L_raw[i, j], (lp[i] - lm[i]) / (2 * h), label="L_raw")

            p, m = fd(t, i, j)
            yp, _ = fn(inp, raw, p, s_cap)
            ym, _ = fn(inp, raw, m, s_cap)
            _assert_close(D_t[i, j], (yp[i, j] - ym[i, j]) / (2 * h), label="D_t")


# ---- rational-quadratic spline --------------------------------------------


def test_rqs_identity_at_zero_params(impl):
    x, theta = _rand_spline(4)
    theta[:] = 0.0
    y, ld = impl.rqs_forward(x, theta, 5, 4.0)
    # uniform bins with unit slopes: identity up to the 1e-3 bin floor rescale
    assert np.allclose(y, x, atol=5e-13)
    assert np.allclose(ld, 0.0, atol=5e-12)


def test_rqs_identity_outside_bound(impl):
    x = np.array([[5.0, -4.5], [7.25, 4.0001]])
    theta = RngStream(5, 43).standard_normal((2, 2, 14))
    y, ld = impl.rqs_forward(x, theta, 5, 4.0)
    assert np.array_equal(y, x)
    assert np.array_equal(ld, np.zeros(2))
    x2, ld_i = impl.rqs_inverse(x, theta, 5, 4.0)
    assert np.array_equal(x2, x)
    assert np.array_equal(ld_i, np.zeros(2))


def test_rqs_roundtrip_both_directions(impl):
    x, theta = _rand_spline(6, n=40, k=2, spread=1.5)
    y, ld_f = impl.rqs_forward(x, theta, 5, 4.0)
    x2, ld_i = impl.rqs_inverse(y, theta, 5, 4.0)
    assert np.allclose(x2, x, atol=1e-10)
    assert np.allclose(ld_i, -ld_f, atol=1e-10)

    u = np.clip(x, -3.9, 3.9)
    z, ld1 = impl.rqs_inverse(u, theta, 5, 4.0)
    u2, ld2 = impl.rqs_forward(z, theta, 5, 4.0)
    assert np.allclose(u2, u, atol=1e-10)
    assert np.allclose(ld2, -ld1, atol=1e-10)


def test_rqs_forward_stays_inside_bound(impl):
    x, theta = _rand_spline(7, n=50, k=2, n_bins=8, spread=2.0)
    y, _ = impl.rqs_forward(x, theta, 8, 4.0)
    assert np.all(np.abs(y) <= 4.0 + 1e-12)


def test_rqs_monotone_in_input(impl):
    rng = RngStream(8, 43)
    xs = np.linspace(-3.95, 3.95, 300)[:, None]
    theta = np.broadcast_to(
        rng.standard_normal((1, 1, 23)) * 2.0, (300, 1, 23)
    ).copy()
    y, _ = impl.rqs_forward(xs, theta, 8, 4.0)
    assert np.all(np.diff(y[:, 0]) > 0)


def test_rqs_bin_widths_respect_floor(impl):
    # extreme logits cannot shrink a bin below the floor fraction
    theta = np.zeros((1, 1, 14))
    theta[0, 0, :5] = np.array([50.0, -50.0, -50.0, -50.0, -50.0])
    xs = np.linspace(-4.0, 4.0, 2001)[:, None]
    th = np.broadcast_to(theta, (2001, 1, 14)).copy()
    y, _ = impl.rqs_forward(xs, th, 5, 4.0)
    assert np.all(np.diff(y[:, 0]) >= 0)
    assert np.all(np.isfinite(y))


def _fd_rqs(impl, fn_name, v, theta, n_bins, bound, h=1e-5):
    fn = getattr(impl, fn_name)
    n, k = v.shape
    P = theta.shape[-1]
    D_in = np.zeros((n, k))
    L_in = np.zeros((n, k))
    D_th = np.zeros((n, k, P))
    L_th = np.zeros((n, k, P))
    for i in range(n):
        for j in range(k):
            vp = v.copy()
            vm = v.copy()
            vp[i, j] += h
            vm[i, j] -= h
            yp, lp = fn(vp, theta, n_bins, bound)
            ym, lm = fn(vm, theta, n_bins, bound)
            D_in[i, j] = (yp[i, j] - ym[i, j]) / (2 * h)
            L_in[i, j] = (lp[i] - lm[i]) / (2 * h)
            for p in range(P):
                tp = theta.copy()
                tm = theta.copy()
                tp[i, j, p] += h
                tm[i, j, p] -= h
                yp, lp = fn(v, tp, n_bins, bound)
                ym, lm = fn(v, tm, n_bins, bound)
                D_th[i, j, p] = (yp[i, j] - ym[i, j]) / (2 * h)
                L_th[i, j, p] = (lp[i] - lm[i]) / (2 * h)
    return D_in, D_th, L_in, L_th


@pytest.mark.parametrize("seed", [10, 11])
def test_rqs_forward_partials_match_fd(impl, seed):
    x, theta = _rand_spline(seed, n=4, k=2, n_bins=5)
    D_in, D_th, L_in, L_th = impl.rqs_forward_partials(x, theta, 5, 4.0)
    nD_in, nD_th, nL_in, nL_th = _fd_rqs(impl, "rqs_forward", x, theta, 5, 4.0)
    _assert_close(D_in, nD_in, rel=1e-5, label="D_in")
    _assert_close(L_in, nL_in, rel=1e-5, label="L_in")
    _assert_close(D_th, nD_th, rel=1e-5, label="D_th")
    _assert_close(L_th, nL_th, rel=1e-5, label="L_th")


@pytest.mark.parametrize("seed", [12, 13])
def test_rqs_inverse_partials_match_fd(impl, seed):
    u, theta = _rand_spline(seed, n=4, k=2, n_bins=5)
    D_in, D_th, L_in, L_th = impl.rqs_inverse_partials(u, theta, 5, 4.0)
    nD_in, nD_th, nL_in, nL_th = _fd_rqs(impl, "rqs_inverse", u, theta, 5, 4.0)
    _assert_close(D_in, nD_in, rel=1e-5, label="D_in")
    _assert_close(L_in, nL_in, rel=1e-5, label="L_in")
    _assert_close(D_th, nD_th, rel=1e-5, label="D_th")
    _assert_close(L_th, nL_th, rel=1e-5, label="L_th")


def test_rqs_partials_outside_bound_are_identity(impl):
    u = np.array([[6.0, -5.0]])
    theta = RngStream(14, 43).standard_normal((1, 2, 14))
    for fn in (impl.rqs_forward_partials, impl.rqs_inverse_partials):
        D_in, D_th, L_in, L_th = fn(u, theta, 5, 4.0)
        assert np.array_equal(D_in, np.ones((1, 2)))
        assert np.array_equal(D_th, np.zeros((1, 2, 14)))
        assert np.array_equal(L_in, np.zeros((1, 2)))
        assert np.array_equal(L_th, np.zeros((1, 2, 14)))


def test_rqs_mixed_inside_outside_rows(impl):
    u = np.array([[0.5, 9.0], [-9.0, 1.5]])
    theta = RngStream(15, 43).standard_normal((2, 2, 14)) * 0.7
    y, ld = impl.rqs_forward(u, theta, 5, 4.0)
    assert y[0, 1] == u[0, 1] and y[1, 0] == u[1, 0]
    D_in, D_th, L_in, L_th = impl.rqs_forward_partials(u, theta, 5, 4.0)
    assert D_in[0, 1] == 1.0 and D_th[0, 1].max() == 0.0
    nD_in, nD_th, nL_in, nL_th = _fd_rqs(impl, "rqs_forward", u, theta, 5, 4.0)
    _assert_close(D_in, nD_in, rel=1e-5, label="D_in")
    _assert_close(L_th, nL_th, rel=1e-5, label="L_th")


# ---- backend agreement ----------------------------------------------------


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
def test_backends_agree():
    py = K.get_backend("python")
    cy = K.get_backend("cython")
    x, raw, t = _rand_affine(20, n=30, k=3)
    for fn in ("affine_forward", "affine_inverse"):
        for a, b in zip(getattr(py, fn)(x, raw, t, 3.0), getattr(cy, fn)(x, raw, t, 3.0)):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    pa = py.affine_partials(x, raw, t, 3.0, False)
    ca = cy.affine_partials(x, raw, t, 3.0, False)
    for a, b in zip(pa, ca):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-13)

    xs, theta = _rand_spline(21, n=50, k=2, n_bins=8, spread=1.3)
    xs[0, 0] = 7.0  # tail element exercised too
    for fn in ("rqs_forward", "rqs_inverse"):
        for a, b in zip(
            getattr(py, fn)(xs, theta, 8, 4.0), getattr(cy, fn)(xs, theta, 8, 4.0)
        ):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)
    for fn in ("rqs_forward_partials", "rqs_inverse_partials"):
        for a, b in zip(
            getattr(py, fn)(xs, theta, 8, 4.0), getattr(cy, fn)(xs, theta, 8, 4.0)
        ):
            assert np.allclose(a, b, rtol=1e-9, atol=1e-11)


def test_backend_env_override_selects_python():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import flowtopo._kernels as k; print(k.BACKEND)"],
        capture_output=True,
        text=True,
        env={"FLOWTOPO_KERNELS": "python", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "python"


def test_backend_env_rejects_unknown():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import flowtopo._kernels"],
        capture_output=True,
        text=True,
        env={"FLOWTOPO_KERNELS": "js", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode != 0
