"""Bundle of a coupling flow, a base distribution, and a class prior."""

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError
from .flows import flow_logprob


class FlowModel:
    """Everything needed to score densities: u -> T^-1(u) -> base."""

    def __init__(self, flow, base, prior, meta=None):
        if prior is not None and prior.n_classes != base.n_classes:
            raise InvalidInputError(
                f"prior has {prior.n_classes} classes, base has {base.n_classes}"
            )
        if flow.d != base.d:
            raise InvalidInputError(f"flow is {flow.d}-D but base is {base.d}-D")
        self.flow = flow
        self.base = base
        self.prior = prior
        self.meta = dict(meta or {})

    @property
    def d(self):
        return self.flow.d

    @property
    def n_classes(self):
        return self.base.n_classes

    def parameters(self):
        return self.flow.parameters() + self.base.parameters()

    def logprob(self, u, y=None):
        """Class-conditional (y given) or prior-marginal log-density at u."""
        return flow_logprob(self.flow, self.base, u, y=y, prior=self.prior)

    def score(self, u, chunk=4096):
        """Marginal log-likelihood per row, evaluated off-tape in chunks."""
        u = np.asarray(u, dtype=np.float64)
        out = np.empty(u.shape[0])
        with ad.no_grad():
            for lo in range(0, u.shape[0], chunk):
                part = u[lo : lo + chunk]
                out[lo : lo + part.shape[0]] = self.logprob(part).data
        return out

    def latent(self, u):
        """T^-1(u) and the inverse log-determinant, off-tape."""
        with ad.no_grad():
            z, ld = self.flow.inverse(np.asarray(u, dtype=np.float64))
        return z.data, ld.data
