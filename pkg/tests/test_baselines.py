import numpy as np
import pytest

from toxicflow.baselines import (MleState, fit_logreg, logreg_objective, mle_predict,
                                 mle_update)


def test_matches_grid_search(rng):
    x = rng.normal(size=(400, 1))
    y = (rng.random(400) < 1 / (1 + np.exp(-(1.5 * x[:, 0] - 0.5)))).astype(float)
    model = fit_logreg(x, y, l2=0.0)
    assert model.converged
    grid = np.linspace(-3, 3, 601)
    W, B = np.meshgrid(grid, grid, indexing="ij")
    F = W[..., None] * x[:, 0] + B[..., None]
    obj = np.mean(np.logaddexp(0, F) - y * F, axis=-1)
    k = np.unravel_index(np.argmin(obj), obj.shape)
    assert model.w[0] == pytest.approx(grid[k[0]], abs=0.011)
    assert model.w[1] == pytest.approx(grid[k[1]], abs=0.011)


def test_objective_is_convex_along_random_lines(rng):
    X = rng.normal(size=(50, 3))
    y = rng.integers(0, 2, 50).astype(float)
    for _ in range(20):
        a, b = rng.normal(size=4) * 3, rng.normal(size=4) * 3
        t = rng.random()
        mix = logreg_objective(t * a + (1 - t) * b, X, y, 1e-3)[0]
        assert mix <= t * logreg_objective(a, X, y, 1e-3)[0] + \
            (1 - t) * logreg_objective(b, X, y, 1e-3)[0] + 1e-12


def test_gradient(rng):
    X = rng.normal(size=(30, 2))
    y = rng.integers(0, 2, 30).astype(float)
    w = rng.normal(size=3)
    _, g = logreg_objective(w, X, y, 0.1)
    eps = 1e-6
    fd = [(logreg_objective(w + eps * e, X, y, 0.1)[0] - logreg_objective(w - eps * e, X, y, 0.1)[0])
          / (2 * eps) for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_separable_data_is_reported_not_raised():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    model = fit_logreg(X, np.array([0, 0, 1, 1.0]), l2=0.0, max_iter=15)
    assert not model.converged
    assert np.all(model.predict(X)[2:] > 0.9)


def test_mle_counts():
    st = MleState()
    assert mle_predict(st) == 0.5
    for y in (1, 0, 1, 1):
        st = mle_update(st, y)
    assert (st.success, st.total) == (3, 4) and mle_predict(st) == 0.75
    with pytest.raises(ValueError):
        mle_update(st, 2)
    with pytest.raises(ValueError):
        MleState(3, 2)
