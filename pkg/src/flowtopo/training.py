"""Learning objectives, Adam optimizer, and the training loop.

Two objectives are provided: maximum likelihood (class-conditional or
prior-marginal) and the information-bottleneck objective

    loss = CI(U, Z_eps) - beta * CI(Z_eps, Y)

where Z_eps is the latent image of a noised input u + eps, eps ~ N(0, s^2 I).
Both terms are plain Monte-Carlo means over the batch, so the recorded loss
always equals term1 - beta * term2 exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bases import ClassPrior, ResampledBase, marginal_logprob
from .errors import InvalidInputError, NumericError, TrainingAborted
from .rng import RngStream, STREAM_TRAIN, STREAM_ZFREEZE

OBJECTIVES = ("mle_marginal", "mle_cls", "ib")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# losses


def _check_finite_rows(values, what):
    """Per-sample guard; reports the first offending batch index."""
    bad = ~np.isfinite(values)
    if bad.any():
        idx = int(np.argmax(bad))
        raise NumericError(f"non-finite {what} at sample index {idx}")


def _step_z_estimate(base, rng, z_mc, parts):
    """Fresh per-step Z tensor blended with the EMA (straight-through).

    Returns None for bases that carry no acceptance net. The fresh MC values
    are reported via `parts` so the caller can feed the EMA after the step.
    """
    if not isinstance(base, ResampledBase) or base.truncation == 1:
        return None
    fresh = base.fresh_z_tensor(z_mc, rng)
    if parts is not None:
        parts["z_fresh"] = fresh.data.copy()
    return base.blend_z_ema(fresh)


def loss_mle(flow, base, prior, u, y, conditional, rng=None, z_mc=1024,
             z_estimate=None, parts=None):
    """Negative mean log-likelihood of the batch under the flow + base.

    conditional=True scores log p(z|y); otherwise the prior-weighted marginal.
    For resampled bases a per-step Z estimate is drawn from `rng` (z_mc
    proposals) unless an explicit `z_estimate` tensor is supplied or a frozen
    offline value is already stored.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise InvalidInputError("batch must be a nonempty (n, d) array")
    z, ld = flow.inverse(u)
    if z_estimate is None and rng is not None:
        z_estimate = _step_z_estimate(base, rng, z_mc, parts)
    if conditional:
        lp = base.logprob(z, y, z_estimate=z_estimate)
    else:
        lp = marginal_logprob(base, prior, z, z_estimate=z_estimate)
    per = lp + ld
    _check_finite_rows(per.data, "log-likelihood")
    return ad.tmean(per) * (-1.0)


def loss_ib(flow, base, prior, u, y, beta, sigma, rng, z_mc=1024, eps=None,
            z_estimate=None, parts=None):
    """Information-bottleneck objective on a noised batch.

    term1 (compression) = mean of -[log sum_y' p(z_eps|y') p(y') + logdet]
    term2 (class info)  = mean of  log[ p(z_eps|y) p(y) / sum_y' ... ]
    loss = term1 - beta * term2.

    eps defaults to one N(0, sigma^2 I) draw per sample; pass it explicitly to
    pin the noise (finite-difference checks, closed-form oracles). Consumption
    order from `rng` is eps first, then Z proposals, so fixing `eps` leaves the
    proposal draw unchanged only when `z_estimate` is also supplied or the rng
    is re-seeded by the caller.
    """
    if sigma <= 0.0:
        raise InvalidInputError("sigma must be > 0 for the IB objective")
    if beta < 0.0:
        raise InvalidInputError("beta must be >= 0")
    if prior is None:
        raise InvalidInputError("the IB objective needs a class prior")
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise InvalidInputError("batch must be a nonempty (n, d) array")
    if eps is None:
        eps = rng.normal(0.0, sigma, u.shape)
    else:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != u.shape:
            raise InvalidInputError("eps must match the batch shape")
    y = np.asarray(y)
    if y.shape != (u.shape[0],):
        raise InvalidInputError("labels must be one integer per sample")
    if y.size and (y.min() < 0 or y.max() >= base.n_classes):
        raise InvalidInputError(f"labels must lie in [0, {base.n_classes})")

    z, ld = flow.inverse(u + eps)
    if z_estimate is None and rng is not None:
        z_estimate = _step_z_estimate(base, rng, z_mc, parts)
    all_lp = base.logprob_all(z, z_estimate=z_estimate) + ad.Tensor(prior.log_probs)
    lse = ad.logsumexp(all_lp)
    cond = ad.gather_index(all_lp, y)
    _check_finite_rows(lse.data + ld.data, "marginal log-likelihood")
    _check_finite_rows(cond.data, "conditional log-likelihood")

    term1 = ad.tmean(lse + ld) * (-1.0)
    term2 = ad.tmean(cond - lse)
    loss = term1 + term2 * (-beta)
    if parts is not None:
        parts["term1"] = float(term1.data)
        parts["term2"] = float(term2.data)
    return loss


# ---------------------------------------------------------------------------
# optimizer


def adam_init(values):
    """Zeroed first/second moments for a list of arrays."""
    return {
        "m": [np.zeros_like(v) for v in values],
        "v": [np.zeros_like(v) for v in values],
        "t": 0,
    }


def adam_step(values, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
              eps=ADAM_EPS):
    """One bias-corrected Adam update. Returns new values; state is advanced."""
    if len(values) != len(grads):
        raise InvalidInputError("values and grads must pair up")
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    out = []
    for i, (val, g) in enumerate(zip(values, grads)):
        if g is None:
            g = np.zeros_like(val)
        if g.shape != val.shape:
            raise InvalidInputError(f"grad {i} shape {g.shape} != {val.shape}")
        m = state["m"][i] = beta1 * state["m"][i] + (1.0 - beta1) * g
        v = state["v"][i] = beta2 * state["v"][i] + (1.0 - beta2) * (g * g)
        out.append(val - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
    return out


class Adam:
    """Adam over tape parameters; reads `.grad`, updates `.data` in place."""

    def __init__(self, params, lr=1e-3):
        if lr <= 0.0:
            raise InvalidInputError("lr must be > 0")
        self.params = list(params)
        self.lr = float(lr)
        self.state = adam_init([p.data for p in self.params])

    def step(self):
        new = adam_step([p.data for p in self.params],
                        [p.grad for p in self.params], self.state, self.lr)
        for p, val in zip(self.params, new):
            p.data = val


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "ib"
    beta: float = 1.0
    sigma: float = 0.05
    lr: float = 1e-3
    batch_size: int = 128
    steps: int = 1000
    seed: int = 0
    z_mc: int = 1024        # proposals per per-step Z estimate
    z_freeze: int = 100000  # offline Z sample count after training
    ema_decay: float = 0.99

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise InvalidInputError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if self.beta < 0.0:
            raise InvalidInputError("beta must be >= 0")
        if self.objective == "ib" and self.sigma <= 0.0:
            raise InvalidInputError("sigma must be > 0 for the IB objective")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2")
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if self.lr <= 0.0:
            raise InvalidInputError("lr must be > 0")
        if self.z_mc < 1 or self.z_freeze < 1:
            raise InvalidInputError("Z sample counts must be >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise InvalidInputError("ema_decay must be in [0, 1)")


@dataclass
class TrainHistory:
    """Per-step trace; ci_* and z_* entries are None where not applicable."""

    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    ci_uz: list = field(default_factory=list)
    ci_zy: list = field(default_factory=list)
    z_min: list = field(default_factory=list)
    z_max: list = field(default_factory=list)

    def append(self, step, loss, ci_uz=None, ci_zy=None, z_min=None, z_max=None):
        self.step.append(int(step))
        self.loss.append(float(loss))
        self.ci_uz.append(ci_uz)
        self.ci_zy.append(ci_zy)
        self.z_min.append(z_min)
        self.z_max.append(z_max)

    def __len__(self):
        return len(self.step)

    def to_csv(self):
        def cell(v):
            return "" if v is None else format(v, ".9g")

        lines = ["step,loss,ci_uz,ci_zy,z_min,z_max"]
        for i in range(len(self.step)):
            lines.append(",".join([
                str(self.step[i]), cell(self.loss[i]), cell(self.ci_uz[i]),
                cell(self.ci_zy[i]), cell(self.z_min[i]), cell(self.z_max[i]),
            ]))
        return "\n".join(lines) + "\n"


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()
        p.grad = None


def _batch_loss(model, bu, by, cfg, rng, parts):
    flow, base, prior = model.flow, model.base, model.prior
    if cfg.objective == "ib":
        return loss_ib(flow, base, prior, bu, by, cfg.beta, cfg.sigma, rng,
                       z_mc=cfg.z_mc, parts=parts)
    conditional = cfg.objective == "mle_cls"
    return loss_mle(flow, base, prior, bu, by, conditional, rng=rng,
                    z_mc=cfg.z_mc, parts=parts)


def train(model, u, labels, cfg):
    """Run the configured objective; returns (model, TrainHistory).

    The model's prior is set to the empirical class frequency of `labels`.
    For resampled bases, each step draws a fresh Z estimate (z_mc proposals)
    whose value is smoothed by an EMA, and a high-precision offline Z is
    frozen once the loop ends. A step that produces non-finite values rolls
    the parameters back to the last good state and raises TrainingAborted
    (carrying the history recorded so far); the rolled-back model still gets
    its offline Z so it remains usable as a checkpoint.
    """
    cfg.validate()
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] == 0:
        raise InvalidInputError("training data must be a nonempty (n, d) array")
    if u.shape[1] != model.d:
        raise InvalidInputError(f"data is {u.shape[1]}-D but model is {model.d}-D")
    labels = np.asarray(labels)
    if labels.shape != (u.shape[0],):
        raise InvalidInputError("labels must be one integer per sample")

    model.prior = ClassPrior.from_labels(labels, model.n_classes)
    base = model.base
    resampled = isinstance(base, ResampledBase)
    if resampled:
        base.ema_decay = cfg.ema_decay

    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    hist = TrainHistory()
    train_rng = RngStream(cfg.seed, STREAM_TRAIN)
    n = u.shape[0]
    snap = _snapshot(params)

    def freeze():
        if resampled:
            base.freeze_z(cfg.z_freeze, RngStream(cfg.seed, STREAM_ZFREEZE))

    def abort(step, reason):
        _restore(params, snap)
        freeze()
        raise TrainingAborted(
            f"aborted at step {step}: {reason}; parameters rolled back",
            history=hist, step=step,
        )

    for step in range(cfg.steps):
        srng = train_rng.child(step)
        idx = srng.integers(0, n, cfg.batch_size)
        parts = {}
        try:
            loss = _batch_loss(model, u[idx], labels[idx], cfg, srng, parts)
        except TrainingAborted:
            raise
        except NumericError as e:
            abort(step, str(e))
        for p in params:
            p.grad = None
        ad.backward(loss)
        for p in params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                abort(step, "non-finite gradient")
        opt.step()
        for p in params:
            if not np.isfinite(p.data).all():
                abort(step, "non-finite parameter update")
        z_lo = z_hi = None
        if resampled and "z_fresh" in parts:
            ema = base.update_z_ema(parts["z_fresh"])
            z_lo, z_hi = float(ema.min()), float(ema.max())
        elif resampled:
            # T = 1: density never consults Z, but track it for the log
            with ad.no_grad():
                fresh = base.fresh_z_tensor(cfg.z_mc, srng).data
            ema = base.update_z_ema(fresh)
            z_lo, z_hi = float(ema.min()), float(ema.max())
        hist.append(step, loss.data,
                    ci_uz=parts.get("term1"), ci_zy=parts.get("term2"),
                    z_min=z_lo, z_max=z_hi)
        snap = _snapshot(params)

    freeze()
    return model, hist
