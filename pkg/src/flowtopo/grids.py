"""Density and acceptance maps on rectangular grids, with PGM/CSV export."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bases import ResampledBase
from .errors import InvalidInputError, NumericError

DEFAULT_BOUNDS = (-3.0, 3.0, -3.0, 3.0)


def _check_bounds(bounds):
    x0, x1, y0, y1 = (float(v) for v in bounds)
    if not (x0 < x1 and y0 < y1):
        raise InvalidInputError("bounds must satisfy x0 < x1 and y0 < y1")
    return x0, x1, y0, y1


def _resolution(resolution):
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(v) for v in resolution)
    if nx < 2 or ny < 2:
        raise InvalidInputError("grid resolution must be >= 2 per axis")
    return nx, ny


@dataclass
class DensityGrid:
    """Raster of values over [x0,x1] x [y0,y1]; row 0 is the top (largest y)."""

    bounds: tuple
    values: np.ndarray  # (ny, nx)

    def __post_init__(self):
        self.bounds = _check_bounds(self.bounds)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise InvalidInputError("grid values must be (ny, nx) with ny,nx >= 2")
        if not np.isfinite(self.values).all():
            raise NumericError("grid contains non-finite values")

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def xs(self):
        return np.linspace(self.bounds[0], self.bounds[1], self.nx)

    @property
    def ys(self):
        """Row-aligned y coordinates: descending, top row first."""
        return np.linspace(self.bounds[3], self.bounds[2], self.ny)

    def to_pgm_bytes(self):
        """8-bit binary PGM; gray maps the 5th..95th percentile range."""
        p5, p95 = np.percentile(self.values, [5.0, 95.0])
        if p95 > p5:
            scaled = (self.values - p5) / (p95 - p5)
        else:
            scaled = np.zeros_like(self.values)
        gray = np.clip(np.rint(255.0 * np.clip(scaled, 0.0, 1.0)), 0, 255)
        header = f"P5\n{self.nx} {self.ny}\n255\n".encode("ascii")
        return header + gray.astype(np.uint8).tobytes()

    def to_csv(self):
        """`x,y,logp` rows in raster order (top row first, x ascending)."""
        lines = ["x,y,logp"]
        xs, ys = self.xs, self.ys
        for i in range(self.ny):
            for j in range(self.nx):
                lines.append(f"{xs[j]:.9g},{ys[i]:.9g},{self.values[i, j]:.9g}")
        return "\n".join(lines) + "\n"


def _grid_points(bounds, nx, ny):
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y1, y0, ny)  # descending: raster top row first
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def render_density_grid(model, bounds=DEFAULT_BOUNDS, resolution=201, y=None,
                        chunk=8192):
    """Model log-density raster: marginal, or conditional on class y."""
    bounds = _check_bounds(bounds)
    nx, ny = _resolution(resolution)
    if y is not None and not 0 <= int(y) < model.n_classes:
        raise InvalidInputError(f"class {y} out of range [0, {model.n_classes})")
    pts = _grid_points(bounds, nx, ny)
    vals = np.empty(pts.shape[0])
    with ad.no_grad():
        for lo in range(0, pts.shape[0], chunk):
            block = pts[lo : lo + chunk]
            if y is None:
                vals[lo : lo + block.shape[0]] = model.logprob(block).data
            else:
                labels = np.full(block.shape[0], int(y))
                vals[lo : lo + block.shape[0]] = model.logprob(block, labels).data
    return DensityGrid(bounds, vals.reshape(ny, nx))


def render_acceptance_grid(base, y, bounds=DEFAULT_BOUNDS, resolution=201,
                           chunk=8192):
    """Acceptance-head raster a(z|y) for a resampled base."""
    if not isinstance(base, ResampledBase):
        raise InvalidInputError("acceptance rendering needs a resampled base")
    if not 0 <= int(y) < base.n_classes:
        raise InvalidInputError(f"class {y} out of range [0, {base.n_classes})")
    bounds = _check_bounds(bounds)
    nx, ny = _resolution(resolution)
    head = int(y) if base.conditional else 0
    pts = _grid_points(bounds, nx, ny)
    vals = np.empty(pts.shape[0])
    with ad.no_grad():
        for lo in range(0, pts.shape[0], chunk):
            block = pts[lo : lo + chunk]
            vals[lo : lo + block.shape[0]] = base.acceptance(block).data[:, head]
    return DensityGrid(bounds, vals.reshape(ny, nx))
