"""Synthetic task samplers, ground-truth densities, and OOD generators."""

import numpy as np
import pytest

from flowtopo.datasets import SyntheticTask, make_task, ood_sample
from flowtopo.errors import InvalidInputError
from flowtopo.rng import RngStream


def test_task_construction_validation():
    with pytest.raises(InvalidInputError):
        SyntheticTask("spiral")
    with pytest.raises(InvalidInputError):
        SyntheticTask("two_moons", noise=-0.1)
    with pytest.raises(InvalidInputError):
        SyntheticTask("two_rings", radii=(1.0,))
    with pytest.raises(InvalidInputError):
        SyntheticTask("two_rings", radii=(0.0, 2.0))
    with pytest.raises(InvalidInputError):
        SyntheticTask("circle_of_gaussians", n_components=1)


def test_task_defaults():
    assert make_task("two_moons").noise == 0.1
    assert make_task("two_rings").radii == (1.0, 2.0)
    cog = make_task("circle_of_gaussians")
    assert cog.noise == 0.2
    assert cog.n_components == 8
    assert cog.centers.shape == (8, 2)
    assert np.allclose(np.linalg.norm(cog.centers, axis=1), 2.0)


def test_two_rings_mean_radius():
    task = make_task("two_rings")
    u, y = task.sample(10_000, RngStream(0, 1))
    radii = np.linalg.norm(u, axis=1)
    for c, r in enumerate(task.radii):
        assert abs(radii[y == c].mean() - r) < 0.01


def test_two_moons_zero_noise_lies_on_arcs():
    task = make_task("two_moons", noise=0.0)
    u, y = task.sample(2000, RngStream(1, 1))
    p0 = u[y == 0]
    assert np.all(np.abs(np.linalg.norm(p0, axis=1) - 1.0) < 1e-12)
    assert np.all(p0[:, 1] >= -1e-12)
    p1 = u[y == 1]
    assert np.all(np.abs(np.linalg.norm(p1 - [1.0, 0.5], axis=1) - 1.0) < 1e-12)
    assert np.all(p1[:, 1] <= 0.5 + 1e-12)


@pytest.mark.parametrize("name", ["two_moons", "two_rings", "circle_of_gaussians"])
def test_sampling_is_seed_reproducible(name):
    task = make_task(name)
    u1, y1 = task.sample(500, RngStream(7, 1))
    u2, y2 = task.sample(500, RngStream(7, 1))
    assert np.array_equal(u1, u2)
    assert np.array_equal(y1, y2)
    u3, _ = task.sample(500, RngStream(8, 1))
    assert not np.array_equal(u1, u3)


def test_sample_rejects_empty():
    with pytest.raises(InvalidInputError):
        make_task("two_moons").sample(0, RngStream(0, 1))


def test_cog_logpdf_matches_brute_force():
    task = make_task("circle_of_gaussians")
    rng = RngStream(2, 1)
    pts = np.vstack([task.centers[:2], 1.5 * rng.standard_normal((6, 2))])
    for y in (0, 1):
        got = task.logpdf(pts, y)
        comps = task.centers[task.component_class == y]
        # direct summation of the mixture, one component at a time
        expect = []
        for p in pts:
            total = 0.0
            for mu in comps:
                d2 = float(((p - mu) ** 2).sum())
                total += np.exp(-0.5 * d2 / task.noise**2) / (
                    2.0 * np.pi * task.noise**2)
            expect.append(np.log(total / len(comps)))
        assert np.allclose(got, expect, rtol=1e-12, atol=1e-300)


def test_cog_class_prior_counts_components():
    assert np.allclose(make_task("circle_of_gaussians").class_logprob([0, 1]),
                       np.log([0.5, 0.5]))
    odd = make_task("circle_of_gaussians", n_components=5)
    assert np.allclose(odd.class_logprob([0, 1]), np.log([3 / 5, 2 / 5]))
    assert np.allclose(make_task("two_moons").class_logprob([0, 1]),
                       np.log([0.5, 0.5]))


def _quadrature(task, y, xlim, ylim, nx, ny):
    xs = np.linspace(*xlim, nx)
    ys = np.linspace(*ylim, ny)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    vals = np.exp(task.logpdf(pts, y)).reshape(ny, nx)
    return np.trapezoid(np.trapezoid(vals, xs, axis=1), ys)


def test_two_rings_normalized():
    task = make_task("two_rings")
    for y in (0, 1):
        assert abs(_quadrature(task, y, (-4, 4), (-4, 4), 801, 801) - 1.0) < 5e-3


def test_two_moons_normalized():
    task = make_task("two_moons")
    for y in (0, 1):
        assert abs(_quadrature(task, y, (-2, 3), (-1.5, 2), 501, 351) - 1.0) < 5e-3


def test_cog_normalized():
    task = make_task("circle_of_gaussians")
    for y in (0, 1):
        assert abs(_quadrature(task, y, (-4, 4), (-4, 4), 401, 401) - 1.0) < 5e-3


def test_two_rings_rotation_invariant():
    task = make_task("two_rings")
    for r in (0.5, 1.0, 1.7, 2.0):
        a = task.logpdf(np.array([[r, 0.0]]), 1)[0]
        b = task.logpdf(np.array([[0.0, r]]), 1)[0]
        c = task.logpdf(np.array([[r / np.sqrt(2), r / np.sqrt(2)]]), 1)[0]
        assert abs(a - b) < 1e-9
        assert abs(a - c) < 1e-9


def test_two_moons_mirror_symmetry():
    # the class-1 arc is the class-0 arc reflected through (0.5, 0.25)
    task = make_task("two_moons")
    rng = RngStream(3, 1)
    u = rng.standard_normal((32, 2))
    direct = task.logpdf(u, 1)
    mirrored = task.logpdf(np.array([1.0, 0.5]) - u, 0)
    assert np.allclose(direct, mirrored, rtol=1e-12, atol=1e-12)


def test_logpdf_joint_adds_class_prior():
    task = make_task("two_rings")
    u = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.array([0, 1])
    assert np.allclose(task.logpdf_joint(u, y),
                       task.logpdf(u, y) + np.log(0.5), atol=0.0)


def test_logpdf_validation():
    task = make_task("two_moons", noise=0.0)
    with pytest.raises(InvalidInputError):
        task.logpdf(np.zeros((2, 2)), 0)  # degenerate noise
    task = make_task("two_moons")
    with pytest.raises(InvalidInputError):
        task.logpdf(np.zeros(2), 0)
    with pytest.raises(InvalidInputError):
        task.logpdf(np.zeros((2, 2)), 3)


def test_logpdf_peaks_near_support():
    task = make_task("two_moons")
    on_arc = task.logpdf(np.array([[0.0, 1.0]]), 0)[0]
    far = task.logpdf(np.array([[0.0, -2.0]]), 0)[0]
    assert on_arc > far + 10.0


def test_ood_uniform_box():
    u = ood_sample("uniform_box", 5000, RngStream(4, 1))
    assert u.shape == (5000, 2)
    assert u.min() >= -4.0 and u.max() <= 4.0
    # spread should fill the box, not cluster
    assert u.std() > 1.5


def test_ood_outer_ring():
    u = ood_sample("outer_ring", 5000, RngStream(5, 1))
    radii = np.linalg.norm(u, axis=1)
    assert abs(radii.mean() - 3.2) < 0.01
    assert radii.std() < 0.2


def test_ood_validation_and_determinism():
    with pytest.raises(InvalidInputError):
        ood_sample("blobs", 10, RngStream(0, 1))
    with pytest.raises(InvalidInputError):
        ood_sample("uniform_box", 0, RngStream(0, 1))
    a = ood_sample("outer_ring", 64, RngStream(6, 1))
    b = ood_sample("outer_ring", 64, RngStream(6, 1))
    assert np.array_equal(a, b)
