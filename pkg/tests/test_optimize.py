import numpy as np
import pytest

from brakedist.optimize import initial_simplex, nelder_mead


def sphere(x):
    return float(x @ x)


def rosenbrock(x):
    return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)


class TestNelderMead:
    def test_quadratic_bowl(self):
        res = nelder_mead(sphere, np.array([2.0, -1.5, 0.7]), step=0.5, tol=1e-12, max_iter=2000)
        assert res.converged
        assert np.allclose(res.x, 0.0, atol=1e-5)
        assert res.fx < 1e-10

    def test_rosenbrock(self):
        res = nelder_mead(rosenbrock, np.array([-1.2, 1.0]), step=0.5, tol=1e-12, max_iter=5000)
        assert res.converged
        assert np.allclose(res.x, [1.0, 1.0], atol=1e-4)

    def test_shifted_quadratic_high_dim(self):
        target = np.linspace(-1.0, 1.0, 20)
        scales = np.linspace(1.0, 5.0, 20)

        def fn(x):
            return float(np.sum(scales * (x - target) ** 2))

        res = nelder_mead(fn, np.zeros(20), step=0.3, tol=1e-10, max_iter=20000)
        assert res.converged
        assert np.allclose(res.x, target, atol=1e-3)

    def test_handles_infinite_regions(self):
        def fn(x):
            if x[0] < 0:
                return np.inf
            return float((x[0] - 1.0) ** 2 + x[1] ** 2)

        res = nelder_mead(fn, np.array([2.0, 2.0]), step=0.5, tol=1e-10, max_iter=2000)
        assert res.converged
        assert np.allclose(res.x, [1.0, 0.0], atol=1e-4)

    def test_iteration_cap_flags_no_convergence(self):
        res = nelder_mead(sphere, np.array([5.0, 5.0]), step=0.1, tol=1e-15, max_iter=3)
        assert not res.converged
        assert res.iterations == 3

    def test_deterministic(self):
        a = nelder_mead(rosenbrock, np.array([0.5, 0.5]), step=0.2, tol=1e-9, max_iter=500)
        b = nelder_mead(rosenbrock, np.array([0.5, 0.5]), step=0.2, tol=1e-9, max_iter=500)
        assert np.array_equal(a.x, b.x)
        assert a.fx == b.fx
        assert a.nfev == b.nfev

    def test_result_never_worse_than_start(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            x0 = rng.uniform(-3, 3, size=4)
            res = nelder_mead(sphere, x0, step=0.5, tol=1e-8, max_iter=50)
            assert res.fx <= sphere(x0)


class TestInitialSimplex:
    def test_shape_and_offsets(self):
        sim = initial_simplex(np.zeros(3), 0.5)
        assert sim.shape == (4, 3)
        assert np.array_equal(sim[0], np.zeros(3))
        assert np.array_equal(sim[1:], 0.5 * np.eye(3))

    def test_signed_steps(self):
        sim = initial_simplex(np.ones(2), np.array([0.5, -0.25]))
        assert np.array_equal(sim[1], [1.5, 1.0])
        assert np.array_equal(sim[2], [1.0, 0.75])

    def test_zero_step_rejected(self):
        with pytest.raises(ValueError):
            initial_simplex(np.zeros(2), np.array([0.1, 0.0]))
