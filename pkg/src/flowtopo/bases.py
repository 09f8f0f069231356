"""Base distributions over the latent space.

Three families: the fixed standard normal, a per-class diagonal Gaussian
("mixture" across classes), and the learned accept/reject resampled base,
whose density reweights a standard-normal proposal by an acceptance network

    p(z|y) = (1 - alpha_T) * a(z|y) * pi(z) / Z_y + alpha_T * pi(z),

with alpha_T = (1 - Z_y)^(T-1) and Z_y = E_pi[a(z|y)]. All log-density
methods return tape tensors so losses can differentiate through them (and,
for the resampled base, through a Monte Carlo estimate of Z_y).
"""

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, StateError
from .nets import DenseNet
from .rng import RngStream, sample_std_normal

LOG_2PI = 1.8378770664093453
# acceptance floor: keeps Z_y and the density's log argument away from zero
ACCEPT_FLOOR = 1e-3


class ClassPrior:
    """Probabilities p(y) over the class labels."""

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise InvalidInputError("prior must be a nonempty 1-D probability vector")
        if np.any(p < 0):
            raise InvalidInputError("prior probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"prior must sum to 1, got {p.sum()!r}")
        self.probs = p
        with np.errstate(divide="ignore"):
            self.log_probs = np.log(p)

    @property
    def n_classes(self):
        return self.probs.size

    @classmethod
    def uniform(cls, n_classes):
        return cls(np.full(n_classes, 1.0 / n_classes))

    @classmethod
    def from_labels(cls, labels, n_classes):
        labels = np.asarray(labels)
        if labels.size == 0:
            raise InvalidInputError("cannot build a prior from an empty label set")
        counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
        if counts.size > n_classes:
            raise InvalidInputError("label outside the configured class range")
        return cls(counts / counts.sum())


def _std_normal_logpdf(z):
    """log N(z; 0, I) as a tape tensor of shape (n,)."""
    z = ad.as_tensor(z)
    d = z.data.shape[1]
    return ad.tsum(z * z, axis=1) * (-0.5) + (-0.5 * d * LOG_2PI)


def _as_labels(y, n, n_classes):
    if np.isscalar(y) or (isinstance(y, np.ndarray) and y.ndim == 0):
        y = np.full(n, int(y), dtype=np.intp)
    else:
        y = np.asarray(y, dtype=np.intp)
        if y.shape != (n,):
            raise InvalidInputError(f"labels must be scalar or shape ({n},)")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidInputError(
            f"class label out of range [0, {n_classes}): {int(y.min())}..{int(y.max())}"
        )
    return y


class GaussianBase:
    """Standard normal base; identical for every class."""

    kind = "gaussian"

    def __init__(self, d, n_classes=1):
        if d < 1 or n_classes < 1:
            raise InvalidInputError("need d >= 1 and n_classes >= 1")
        self.d = int(d)
        self.n_classes = int(n_classes)

    def parameters(self):
        return []

    def logprob(self, z, y, z_estimate=None):
        z = ad.as_tensor(z)
        _as_labels(y, z.data.shape[0], self.n_classes)
        return _std_normal_logpdf(z)

    def logprob_all(self, z, z_estimate=None):
        z = ad.as_tensor(z)
        lp = _std_normal_logpdf(z)
        return ad.stack_cols([lp] * self.n_classes)

    def state_arrays(self):
        return {"d": self.d, "n_classes": self.n_classes}

    def load_state_arrays(self, state):
        if int(state["d"]) != self.d or int(state["n_classes"]) != self.n_classes:
            raise InvalidInputError("gaussian base shape mismatch in state")


class MoGBase:
    """One trainable diagonal Gaussian per class (a mixture across classes)."""

    kind = "mog"

    def __init__(self, d, n_classes, rng=None, init_spread=0.1):
        if d < 1 or n_classes < 1:
            raise InvalidInputError("need d >= 1 and n_classes >= 1")
        self.d = int(d)
        self.n_classes = int(n_classes)
        if rng is None:
            means = np.zeros((n_classes, d))
        else:
            means = init_spread * rng.standard_normal((n_classes, d))
        self.means = ad.parameter(means)
        self.log_scales = ad.parameter(np.zeros((n_classes, d)))

    def parameters(self):
        return [self.means, self.log_scales]

    def _class_logpdf(self, z, c):
        mu = ad.take_rows(self.means, np.array([c]))
        ls = ad.take_rows(self.log_scales, np.array([c]))
        inv_var = ad.texp(ls * (-2.0))
        diff = z - mu
        quad = ad.tsum(diff * diff * inv_var, axis=1)
        return quad * (-0.5) - ad.tsum(ls) + (-0.5 * self.d * LOG_2PI)

    def logprob_all(self, z, z_estimate=None):
        z = ad.as_tensor(z)
        return ad.stack_cols(
            [self._class_logpdf(z, c) for c in range(self.n_classes)]
        )

    def logprob(self, z, y, z_estimate=None):
        z = ad.as_tensor(z)
        y = _as_labels(y, z.data.shape[0], self.n_classes)
        return ad.gather_index(self.logprob_all(z), y)

    def state_arrays(self):
        return {
            "means": self.means.data.tolist(),
            "log_scales": self.log_scales.data.tolist(),
        }

    def load_state_arrays(self, state):
        means = np.asarray(state["means"], dtype=np.float64)
        ls = np.asarray(state["log_scales"], dtype=np.float64)
        if means.shape != (self.n_classes, self.d) or ls.shape != means.shape:
            raise InvalidInputError("mog base shape mismatch in state")
        self.means.data = means
        self.log_scales.data = ls


class ResampledBase:
    """Accept/reject base with a standard-normal proposal and truncation T.

    The acceptance net maps z to values in [ACCEPT_FLOOR, 1]: one per class
    when `conditional`, a single shared head otherwise (the unconditional
    variant still answers class-conditional queries, identically per class).
    Z estimates are Monte Carlo means of the acceptance under the proposal:
    `estimate_z_tensor` produces the differentiable training-time estimate
    (EMA value, fresh-sample gradient), `freeze_z` the offline high-precision
    one used for evaluation and serialization.
    """

    def __init__(self, d, n_classes, conditional=True, hidden=(128, 128),
                 truncation=100, rng=None, ema_decay=0.99,
                 accept_floor=ACCEPT_FLOOR):
        if d < 1 or n_classes < 1:
            raise InvalidInputError("need d >= 1 and n_classes >= 1")
        if truncation < 1:
            raise InvalidInputError(f"truncation must be >= 1, got {truncation}")
        if not 0.0 <= ema_decay < 1.0:
            raise InvalidInputError("ema_decay must be in [0, 1)")
        if not 0.0 < accept_floor < 1.0:
            raise InvalidInputError("accept_floor must be in (0, 1)")
        self.d = int(d)
        self.n_classes = int(n_classes)
        self.conditional = bool(conditional)
        self.n_heads = self.n_classes if self.conditional else 1
        self.truncation = int(truncation)
        self.ema_decay = float(ema_decay)
        self.accept_floor = float(accept_floor)
        self.net = DenseNet(
            [d] + list(hidden) + [self.n_heads],
            output_activation="sigmoid",
            rng=rng,
            zero_last=True,
        )
        self.z_value = None  # frozen per-head estimates, shape (n_heads,)
        self.z_samples = 0  # sample count behind z_value
        self.z_ema = None  # training-time EMA, shape (n_heads,)

    @property
    def kind(self):
        return "crsb" if self.conditional else "rsb"

    def parameters(self):
        return self.net.parameters()

    def acceptance(self, z):
        """Acceptance heads, tape tensor of shape (n, n_heads) in [floor, 1]."""
        raw = self.net(z)
        return raw * (1.0 - self.accept_floor) + self.accept_floor

    def _head(self, y):
        return int(y) if self.conditional else 0

    def estimate_z(self, n_samples, rng, y=None):
        """Plain MC estimate of Z (all heads, or one class's); no tape."""
        if n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")
        with ad.no_grad():
            zs = sample_std_normal(rng, n_samples, self.d)
            acc = self.acceptance(zs).data
        est = acc.mean(axis=0)
        return est if y is None else float(est[self._head(y)])

    def fresh_z_tensor(self, n_samples, rng):
        """Fresh differentiable MC estimate of Z per head, shape (n_heads,)."""
        if n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")
        zs = sample_std_normal(rng, n_samples, self.d)
        return ad.tmean(self.acceptance(zs), axis=0)

    def blend_z_ema(self, fresh):
        """Straight-through blend: EMA value (when one exists), fresh gradient.

        Pure function of the current EMA; the EMA itself is updated separately
        by `update_z_ema` (training-loop side effect, kept out of loss
        evaluation so repeated loss calls are reproducible).
        """
        if self.z_ema is None:
            return fresh
        return fresh + ad.Tensor(self.z_ema - fresh.data)

    def estimate_z_tensor(self, n_samples, rng):
        """Differentiable per-step Z estimate, shape (n_heads,).

        Gradients always flow through the fresh proposal batch; the value is
        the running EMA when one exists so the density sees the smoothed
        normalizer.
        """
        return self.blend_z_ema(self.fresh_z_tensor(n_samples, rng))

    def update_z_ema(self, fresh_values):
        fresh = np.asarray(fresh_values, dtype=np.float64)
        if fresh.shape != (self.n_heads,):
            raise InvalidInputError("z estimate must have one entry per head")
        if self.z_ema is None:
            self.z_ema = fresh.copy()
        else:
            self.z_ema = self.ema_decay * self.z_ema + (1.0 - self.ema_decay) * fresh
        return self.z_ema

    def freeze_z(self, n_samples, rng):
        """High-precision offline Z estimate stored for evaluation."""
        self.z_value = self.estimate_z(n_samples, rng)
        self.z_samples = int(n_samples)
        return self.z_value

    def _z_tensor(self, z_estimate):
        if z_estimate is not None:
            z = ad.as_tensor(z_estimate)
            if z.data.shape != (self.n_heads,):
                raise InvalidInputError("z estimate must have one entry per head")
            return z
        if self.z_value is None:
            raise StateError(
                "resampled base has no Z estimate; train or call freeze_z first"
            )
        return ad.Tensor(self.z_value)

    def _head_logprob(self, z, z_estimate):
        """log p(z) per acceptance head, shape (n, n_heads)."""
        logpi = _std_normal_logpdf(z)
        if self.truncation == 1:
            # the first proposal draw is always accepted: exactly the proposal
            return ad.stack_cols([logpi] * self.n_heads)
        zt = self._z_tensor(z_estimate)
        acc = self.acceptance(z)
        alpha = ad.pow_const(1.0 - zt, self.truncation - 1)
        inner = acc * ((1.0 - alpha) / zt) + alpha
        return ad.tlog(inner) + ad.stack_cols([logpi] * self.n_heads)

    def logprob_all(self, z, z_estimate=None):
        z = ad.as_tensor(z)
        lp = self._head_logprob(z, z_estimate)
        if self.conditional:
            return lp
        col = ad.reshape(lp, (-1,))
        return ad.stack_cols([col] * self.n_classes)

    def logprob(self, z, y, z_estimate=None):
        z = ad.as_tensor(z)
        y = _as_labels(y, z.data.shape[0], self.n_classes)
        if not self.conditional:
            return ad.reshape(self._head_logprob(z, z_estimate), (-1,))
        return ad.gather_index(self.logprob_all(z, z_estimate=z_estimate), y)

    def sample(self, y, n, rng):
        """Truncated rejection sampling: n draws from class y's base.

        Each item consumes at most `truncation` proposals; the final round
        accepts unconditionally. Vectorized over still-pending items, drawing
        from `rng` in rounds, so results are deterministic per (rng, n).
        """
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        y = int(y)
        if not 0 <= y < self.n_classes:
            raise InvalidInputError(f"class label out of range: {y}")
        head = self._head(y)
        out = np.empty((n, self.d))
        pending = np.arange(n)
        with ad.no_grad():
            for t in range(self.truncation):
                m = pending.size
                if m == 0:
                    break
                zs = sample_std_normal(rng, m, self.d)
                if t == self.truncation - 1:
                    out[pending] = zs
                    break
                acc = self.acceptance(zs).data[:, head]
                u = rng.uniform(0.0, 1.0, m)
                taken = u < acc
                out[pending[taken]] = zs[taken]
                pending = pending[~taken]
        return out

    def state_arrays(self):
        return {
            "net": self.net.state_arrays(),
            "truncation": self.truncation,
            "ema_decay": self.ema_decay,
            "accept_floor": self.accept_floor,
            "z_value": None if self.z_value is None else self.z_value.tolist(),
            "z_samples": self.z_samples,
        }

    def load_state_arrays(self, state):
        self.net.load_state_arrays(state["net"])
        self.truncation = int(state["truncation"])
        self.ema_decay = float(state["ema_decay"])
        self.accept_floor = float(state.get("accept_floor", ACCEPT_FLOOR))
        zv = state.get("z_value")
        if zv is None:
            self.z_value = None
        else:
            zv = np.asarray(zv, dtype=np.float64)
            if zv.shape != (self.n_heads,):
                raise InvalidInputError("z_value shape mismatch in state")
            self.z_value = zv
        self.z_samples = int(state.get("z_samples", 0))


def marginal_logprob(base, prior, z, z_estimate=None):
    """log sum_y p(z|y) p(y), max-shifted; tape tensor of shape (n,)."""
    if prior is None:
        raise InvalidInputError("marginal log-density needs a class prior")
    if prior.n_classes != base.n_classes:
        raise InvalidInputError(
            f"prior has {prior.n_classes} classes, base has {base.n_classes}"
        )
    all_lp = base.logprob_all(z, z_estimate=z_estimate)
    return ad.logsumexp(all_lp + ad.Tensor(prior.log_probs))


def make_base(kind, d, n_classes, rng=None, hidden=(128, 128), truncation=100,
              ema_decay=0.99, accept_floor=ACCEPT_FLOOR):
    """Base factory: gaussian | mog | rsb (one shared head) | crsb (per class)."""
    if kind == "gaussian":
        return GaussianBase(d, n_classes)
    if kind == "mog":
        return MoGBase(d, n_classes, rng=rng)
    if kind in ("rsb", "crsb"):
        return ResampledBase(
            d,
            n_classes,
            conditional=(kind == "crsb"),
            hidden=hidden,
            truncation=truncation,
            rng=rng,
            ema_decay=ema_decay,
            accept_floor=accept_floor,
        )
    raise InvalidInputError(f"unknown base kind {kind!r}")
