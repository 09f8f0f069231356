"""Synthetic 2-D tasks with analytic ground-truth densities, plus OOD samplers.

Every task is a 2-class labeled distribution over R^2:

  two_moons           unit-radius semicircle arcs (one per class) + isotropic
                      Gaussian noise; ground truth is the arc-convolved
                      Gaussian evaluated by a 512-point midpoint rule.
  two_rings           class-y points at radius r_y, uniform angle, Gaussian
                      noise applied radially; ground truth is the radial
                      Gaussian with its 2-D normalizer computed once by
                      2001-point quadrature.
  circle_of_gaussians 8 equal-weight components on a radius-2 circle, class =
                      component index mod 2; ground truth is the exact mixture.
"""

import numpy as np

from .errors import InvalidInputError

TASK_NAMES = ("two_moons", "two_rings", "circle_of_gaussians")
OOD_KINDS = ("uniform_box", "outer_ring")

_LOG_2PI = 1.8378770664093453
_MOON_ARC_POINTS = 512
_RING_QUAD_POINTS = 2001


def _moon_arcs(t):
    """Arc points for both classes at parameters t in [0, pi]; (2, len(t), 2)."""
    a0 = np.stack([np.cos(t), np.sin(t)], axis=1)
    a1 = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return np.stack([a0, a1])


class SyntheticTask:
    """Labeled 2-D distribution with exact sampling and log-density."""

    def __init__(self, name, noise=None, radii=(1.0, 2.0), n_components=8,
                 radius=2.0):
        if name not in TASK_NAMES:
            raise InvalidInputError(f"unknown task {name!r}; pick from {TASK_NAMES}")
        self.name = name
        self.noise = float(noise) if noise is not None else (
            0.2 if name == "circle_of_gaussians" else 0.1)
        if self.noise < 0.0:
            raise InvalidInputError("noise must be >= 0")
        self.d = 2
        self.n_classes = 2
        if name == "two_rings":
            self.radii = tuple(float(r) for r in radii)
            if len(self.radii) != 2 or min(self.radii) <= 0.0:
                raise InvalidInputError("two_rings needs two positive radii")
            self._ring_norms = None
        elif name == "circle_of_gaussians":
            self.n_components = int(n_components)
            self.radius = float(radius)
            if self.n_components < 2:
                raise InvalidInputError("need at least 2 mixture components")
            angles = 2.0 * np.pi * np.arange(self.n_components) / self.n_components
            self.centers = self.radius * np.stack(
                [np.cos(angles), np.sin(angles)], axis=1)
            self.component_class = np.arange(self.n_components) % 2
        else:
            mids = (np.arange(_MOON_ARC_POINTS) + 0.5) * np.pi / _MOON_ARC_POINTS
            self._arc_nodes = _moon_arcs(mids)

    # -- class marginal ----------------------------------------------------

    def class_logprob(self, y):
        """log p(y) of the generative process."""
        y = np.asarray(y)
        if np.any((y < 0) | (y >= 2)):
            raise InvalidInputError("class labels must be 0 or 1")
        if self.name == "circle_of_gaussians":
            counts = np.bincount(self.component_class, minlength=2)
            return np.log(counts / self.n_components)[y]
        return np.broadcast_to(np.log(0.5), y.shape).copy()

    # -- sampling ------------------------------------------------------------

    def sample(self, n, rng):
        """n labeled draws; returns (u of shape (n, 2), y of shape (n,))."""
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        if self.name == "two_moons":
            y = rng.integers(0, 2, n)
            t = rng.uniform(0.0, np.pi, (n,))
            arcs = _moon_arcs(t)
            u = arcs[y, np.arange(n)] + self.noise * rng.standard_normal((n, 2))
            return u, y
        if self.name == "two_rings":
            y = rng.integers(0, 2, n)
            theta = rng.uniform(0.0, 2.0 * np.pi, (n,))
            g = rng.standard_normal((n,))
            r = np.asarray(self.radii)[y] + self.noise * g
            u = r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return u, y
        k = rng.integers(0, self.n_components, n)
        u = self.centers[k] + self.noise * rng.standard_normal((n, 2))
        return u, self.component_class[k]

    # -- ground-truth density ------------------------------------------------

    def logpdf(self, u, y):
        """log p(u | y), vectorized over rows of u; y is a scalar or (n,)."""
        if self.noise <= 0.0:
            raise InvalidInputError("log-density needs noise > 0")
        u = np.asarray(u, dtype=np.float64)
        if u.ndim != 2 or u.shape[1] != 2:
            raise InvalidInputError("points must form an (n, 2) array")
        y = np.broadcast_to(np.asarray(y), (u.shape[0],))
        if np.any((y < 0) | (y >= 2)):
            raise InvalidInputError("class labels must be 0 or 1")
        if self.name == "two_moons":
            return self._moons_logpdf(u, y)
        if self.name == "two_rings":
            return self._rings_logpdf(u, y)
        return self._cog_logpdf(u, y)

    def logpdf_joint(self, u, y):
        """log p(u, y) = log p(u|y) + log p(y)."""
        y = np.broadcast_to(np.asarray(y), (np.asarray(u).shape[0],))
        return self.logpdf(u, y) + self.class_logprob(y)

    def _mixture_logpdf(self, u, centers, chunk=8192):
        """Equal-weight isotropic mixture over the given centers."""
        inv2s2 = 0.5 / (self.noise * self.noise)
        const = -np.log(centers.shape[0]) - _LOG_2PI - 2.0 * np.log(self.noise)
        out = np.empty(u.shape[0])
        for lo in range(0, u.shape[0], chunk):
            block = u[lo : lo + chunk]
            d2 = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            shifted = -d2 * inv2s2
            m = shifted.max(axis=1)
            lse = m + np.log(np.exp(shifted - m[:, None]).sum(axis=1))
            out[lo : lo + block.shape[0]] = lse + const
        return out

    def _moons_logpdf(self, u, y):
        out = np.empty(u.shape[0])
        for c in (0, 1):
            sel = y == c
            if sel.any():
                out[sel] = self._mixture_logpdf(u[sel], self._arc_nodes[c])
        return out

    def _ring_normalizers(self):
        # 2-D normalizer C_y = 2 pi * integral of rho exp(-(rho-r)^2 / 2s^2)
        if self._ring_norms is None:
            norms = []
            for r in self.radii:
                rho = np.linspace(0.0, r + 8.0 * self.noise, _RING_QUAD_POINTS)
                f = rho * np.exp(-0.5 * ((rho - r) / self.noise) ** 2)
                norms.append(2.0 * np.pi * np.trapezoid(f, rho))
            self._ring_norms = np.array(norms)
        return self._ring_norms

    def _rings_logpdf(self, u, y):
        rho = np.sqrt((u * u).sum(axis=1))
        r = np.asarray(self.radii)[y]
        return -0.5 * ((rho - r) / self.noise) ** 2 - np.log(
            self._ring_normalizers()[y])

    def _cog_logpdf(self, u, y):
        out = np.empty(u.shape[0])
        for c in (0, 1):
            sel = y == c
            if sel.any():
                out[sel] = self._mixture_logpdf(
                    u[sel], self.centers[self.component_class == c])
        return out


def make_task(name, **overrides):
    return SyntheticTask(name, **overrides)


def ood_sample(kind, n, rng, box=4.0, ring_radius=3.2, ring_noise=0.05):
    """Out-of-distribution draws: uniform over a box, or a noisy outer ring."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if kind == "uniform_box":
        return rng.uniform(-box, box, (n, 2))
    if kind == "outer_ring":
        theta = rng.uniform(0.0, 2.0 * np.pi, (n,))
        ring = ring_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return ring + ring_noise * rng.standard_normal((n, 2))
    raise InvalidInputError(f"unknown OOD kind {kind!r}; pick from {OOD_KINDS}")
