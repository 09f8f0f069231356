"""Invertible coupling transforms with exact log-determinants.

A coupling layer copies the masked coordinates, feeds them to a conditioner
net, and transforms the remaining coordinates elementwise; masks alternate
even/odd across the stack. The elementwise math lives in the kernel backend;
this module wires kernel values and partial derivatives into the tape.
"""

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .errors import InvalidInputError, NumericError
from .nets import DenseNet

S_CAP = 3.0


def _check_finite(arr, layer_index, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} in coupling layer {layer_index}")


class _CouplingBase:
    kind = None

    def __init__(self, d, mask, conditioner):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (d,):
            raise InvalidInputError(f"mask must have shape ({d},)")
        if mask.all() or not mask.any():
            raise InvalidInputError("mask must keep some and transform some dims")
        self.d = d
        self.mask = mask
        self.cols_masked = np.where(mask)[0]
        self.cols_free = np.where(~mask)[0]
        self.conditioner = conditioner
        self.layer_index = 0  # set by FlowStack, used in error messages

    def parameters(self):
        return self.conditioner.parameters()

    def _split(self, v):
        v = ad.as_tensor(v)
        if v.data.ndim != 2 or v.data.shape[1] != self.d:
            raise InvalidInputError(f"expected (n, {self.d}) input, got {v.data.shape}")
        return ad.select_cols(v, self.cols_masked), ad.select_cols(v, self.cols_free)

    def _merge(self, kept, transformed):
        return ad.merge_cols(self.d, self.cols_masked, kept, self.cols_free, transformed)


class AffineCoupling(_CouplingBase):
    """u_j = z_j * exp(s_j) + t_j with s capped by s_cap * tanh."""

    kind = "affine"

    def __init__(self, d, mask, conditioner, s_cap=S_CAP):
        super().__init__(d, mask, conditioner)
        k = len(self.cols_free)
        if conditioner.d_out != 2 * k:
            raise InvalidInputError(
                f"conditioner must output {2 * k} values, got {conditioner.d_out}"
            )
        self.s_cap = float(s_cap)

    def _params(self, kept):
        h = self.conditioner(kept)
        _check_finite(h.data, self.layer_index, "conditioner output")
        k = len(self.cols_free)
        return ad.select_cols(h, range(k)), ad.select_cols(h, range(k, 2 * k))

    def _apply(self, v, inverse):
        kept, free = self._split(v)
        raw, t = self._params(kept)
        fn = K.affine_inverse if inverse else K.affine_forward
        out_data, ld_data = fn(free.data, raw.data, t.data, self.s_cap)
        cache = {}

        def partials():
            if "p" not in cache:
                cache["p"] = K.affine_partials(
                    free.data, raw.data, t.data, self.s_cap, inverse
                )
            return cache["p"]

        def bwd_out(g):
            D_in, D_raw, D_t, _ = partials()
            if free.requires_grad:
                free._accum(g * D_in)
            if raw.requires_grad:
                raw._accum(g * D_raw)
            if t.requires_grad:
                t._accum(g * D_t)

        def bwd_ld(g):
            _, _, _, L_raw = partials()
            if raw.requires_grad:
                raw._accum(g[:, None] * L_raw)

        out, ld = ad.kernel_op((out_data, ld_data), (free, raw, t), (bwd_out, bwd_ld))
        return self._merge(kept, out), ld

    def forward(self, z):
        return self._apply(z, inverse=False)

    def inverse(self, u):
        return self._apply(u, inverse=True)


class SplineCoupling(_CouplingBase):
    """Monotone rational-quadratic spline on [-B, B], identity outside."""

    kind = "spline"

    def __init__(self, d, mask, conditioner, n_bins=8, bound=4.0):
        super().__init__(d, mask, conditioner)
        if not 2 <= n_bins <= 32:
            raise InvalidInputError(f"n_bins must be in [2, 32], got {n_bins}")
        k = len(self.cols_free)
        self.n_bins = int(n_bins)
        self.bound = float(bound)
        self.n_params = 3 * self.n_bins - 1
        if conditioner.d_out != k * self.n_params:
            raise InvalidInputError(
                f"conditioner must output {k * self.n_params} values, "
                f"got {conditioner.d_out}"
            )

    def _apply(self, v, inverse):
        kept, free = self._split(v)
        h = self.conditioner(kept)
        _check_finite(h.data, self.layer_index, "conditioner output")
        k = len(self.cols_free)
        theta = ad.reshape(h, (h.data.shape[0], k, self.n_params))
        fn = K.rqs_inverse if inverse else K.rqs_forward
        out_data, ld_data = fn(free.data, theta.data, self.n_bins, self.bound)
        p_fn = K.rqs_inverse_partials if inverse else K.rqs_forward_partials
        cache = {}

        def partials():
            if "p" not in cache:
                cache["p"] = p_fn(free.data, theta.data, self.n_bins, self.bound)
            return cache["p"]

        def bwd_out(g):
            D_in, D_th, _, _ = partials()
            if free.requires_grad:
                free._accum(g * D_in)
            if theta.requires_grad:
                theta._accum(g[:, :, None] * D_th)

        def bwd_ld(g):
            _, _, L_in, L_th = partials()
            if free.requires_grad:
                free._accum(g[:, None] * L_in)
            if theta.requires_grad:
                theta._accum(g[:, None, None] * L_th)

        out, ld = ad.kernel_op((out_data, ld_data), (free, theta), (bwd_out, bwd_ld))
        return self._merge(kept, out), ld

    def forward(self, z):
        return self._apply(z, inverse=False)

    def inverse(self, u):
        return self._apply(u, inverse=True)


class FlowStack:
    """Composition of coupling layers: z --forward--> u, u --inverse--> z."""

    def __init__(self, layers, d):
        if not layers:
            raise InvalidInputError("flow needs at least one layer")
        for layer in layers:
            if layer.d != d:
                raise InvalidInputError("all layers must share the dimension d")
        self.layers = list(layers)
        self.d = d
        for i, layer in enumerate(self.layers):
            layer.layer_index = i

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def forward(self, z):
        """Base-to-data map; returns (u, sum of forward log-dets)."""
        v = ad.as_tensor(z)
        total = None
        for layer in self.layers:
            v, ld = layer.forward(v)
            total = ld if total is None else ad.add(total, ld)
        return v, total

    def inverse(self, u):
        """Data-to-base map; returns (z, sum of inverse log-dets)."""
        v = ad.as_tensor(u)
        total = None
        for layer in reversed(self.layers):
            v, ld = layer.inverse(v)
            total = ld if total is None else ad.add(total, ld)
        return v, total

    def state_arrays(self):
        return {"layers": [layer.conditioner.state_arrays() for layer in self.layers]}

    def load_state_arrays(self, state):
        layers = state["layers"]
        if len(layers) != len(self.layers):
            raise InvalidInputError("layer count mismatch in flow state")
        for layer, net_state in zip(self.layers, layers):
            layer.conditioner.load_state_arrays(net_state)


def make_flow(kind, d, n_layers, hidden, rng, n_bins=8, bound=4.0, s_cap=S_CAP):
    """Build an alternating-mask coupling stack of the given kind.

    Layer i keeps dimensions with index parity i % 2 and transforms the rest;
    conditioners start at zero output so the stack begins as the identity.
    """
    if kind not in ("realnvp", "nsf"):
        raise InvalidInputError(f"unknown flow kind {kind!r}")
    layers = []
    for i in range(n_layers):
        mask = (np.arange(d) % 2) == (i % 2)
        k = int((~mask).sum())
        if kind == "realnvp":
            net = DenseNet(
                [int(mask.sum())] + list(hidden) + [2 * k], rng=rng, zero_last=True
            )
            layers.append(AffineCoupling(d, mask, net, s_cap=s_cap))
        else:
            net = DenseNet(
                [int(mask.sum())] + list(hidden) + [k * (3 * n_bins - 1)],
                rng=rng,
                zero_last=True,
            )
            layers.append(SplineCoupling(d, mask, net, n_bins=n_bins, bound=bound))
    return FlowStack(layers, d)


def flow_logprob(flow, base, u, y=None, prior=None):
    """Change-of-variables log-density log p(T^-1(u) [, y]) + log|det J_inv|.

    With y=None the base density is marginalized over classes under `prior`.
    Returns a tape tensor of shape (n,).
    """
    from .bases import marginal_logprob

    u = ad.as_tensor(u)
    if not np.all(np.isfinite(u.data)):
        raise InvalidInputError("non-finite input to flow_logprob")
    z, ld = flow.inverse(u)
    if y is None:
        lp = marginal_logprob(base, prior, z)
    else:
        lp = base.logprob(z, y)
    return ad.add(lp, ld)


def numeric_jacobian_logdet(flow, u, step=1e-5):
    """Finite-difference log|det J of T^-1| at a single point (test oracle).

    Central differences column by column, then a log-determinant through LU
    factorization. Only intended for small d.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    d = u.shape[0]
    if d > 8:
        raise InvalidInputError("numeric jacobian oracle is limited to d <= 8")
    jac = np.empty((d, d))
    with ad.no_grad():
        for j in range(d):
            up = u.copy()
            um = u.copy()
            up[j] += step
            um[j] -= step
            zp, _ = flow.inverse(up[None, :])
            zm, _ = flow.inverse(um[None, :])
            jac[:, j] = (zp.data[0] - zm.data[0]) / (2.0 * step)
    sign, logdet = np.linalg.slogdet(jac)
    if sign == 0 or not np.isfinite(logdet):
        raise NumericError("singular numeric Jacobian")
    return logdet
