"""Small dense feed-forward networks used as coupling conditioners and as the
acceptance function of the resampled bases."""

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError

_HIDDEN_ACTS = {"tanh": ad.ttanh, "relu": None}
_OUTPUT_ACTS = ("linear", "sigmoid")


def _relu(x):
    data = np.maximum(x.data, 0.0)
    mask = (x.data > 0).astype(np.float64)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * mask)

    return ad._make(data, (x,), bwd)


class DenseNet:
    """Fully connected net: y = act_L(...act_1(x W_1 + b_1)... W_L + b_L).

    Hidden weights use Glorot-uniform init from `rng`; with zero_last the
    final layer starts at zero so the net is constant at initialization.
    """

    def __init__(
        self,
        sizes,
        hidden_activation="tanh",
        output_activation="linear",
        rng=None,
        zero_last=False,
    ):
        if len(sizes) < 2:
            raise InvalidInputError("sizes needs at least input and output width")
        if hidden_activation not in _HIDDEN_ACTS:
            raise InvalidInputError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in _OUTPUT_ACTS:
            raise InvalidInputError(f"unknown output activation {output_activation!r}")
        self.sizes = list(int(s) for s in sizes)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.weights = []
        self.biases = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            d_in, d_out = self.sizes[i], self.sizes[i + 1]
            last = i == n_layers - 1
            if rng is None or (last and zero_last):
                w = np.zeros((d_in, d_out))
            else:
                limit = np.sqrt(6.0 / (d_in + d_out))
                w = rng.uniform(-limit, limit, (d_in, d_out))
            self.weights.append(ad.parameter(w))
            self.biases.append(ad.parameter(np.zeros(d_out)))

    @property
    def d_in(self):
        return self.sizes[0]

    @property
    def d_out(self):
        return self.sizes[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.d_in:
            raise InvalidInputError(
                f"expected input of shape (n, {self.d_in}), got {x.data.shape}"
            )
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < n_layers - 1:
                h = ad.ttanh(h) if self.hidden_activation == "tanh" else _relu(h)
        if self.output_activation == "sigmoid":
            h = ad.tsigmoid(h)
        return h

    __call__ = forward

    def state_arrays(self):
        """Parameter arrays as nested lists, for serialization."""
        return {
            "weights": [w.data.tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
        }

    def load_state_arrays(self, state):
        ws, bs = state["weights"], state["biases"]
        if len(ws) != len(self.weights):
            raise InvalidInputError("layer count mismatch in net state")
        for w, new in zip(self.weights, ws):
            arr = np.asarray(new, dtype=np.float64)
            if arr.shape != w.data.shape:
                raise InvalidInputError(
                    f"weight shape mismatch: {arr.shape} vs {w.data.shape}"
                )
            w.data = arr
        for b, new in zip(self.biases, bs):
            arr = np.asarray(new, dtype=np.float64)
            if arr.shape != b.data.shape:
                raise InvalidInputError(
                    f"bias shape mismatch: {arr.shape} vs {b.data.shape}"
                )
            b.data = arr
