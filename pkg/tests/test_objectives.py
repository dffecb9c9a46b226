import math

import numpy as np
import pytest

from partavg.data_gen import make_blobs, one_hot, split_iid
from partavg.errors import InvalidObjectiveError
from partavg.objectives import (
    MLPObjective,
    ObjectiveSpec,
    load_csv_dataset,
    logistic_objective,
    mlp_objective,
    quadratic_objective,
    stochastic_gradient,
)
from partavg.param_space import make_contiguous_partition, make_strided_partition


def fd_grad(f, x, h=1e-5):
    """Central finite differences, one coordinate at a time."""
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# ---------------------------------------------------------------- quadratic


def test_quadratic_examples():
    q = quadratic_objective(2, [1.0, 1.0], [0.0, 0.0], m=3)
    assert q.loss(np.array([1.0, 2.0])) == pytest.approx(2.5)
    assert np.array_equal(q.grad(np.zeros(2)), np.zeros(2))
    q = quadratic_objective(2, [2.0, 3.0], [0.0, 0.0])
    assert q.grad(np.array([1.0, 1.0])).tolist() == [2.0, 3.0]


def test_quadratic_iid_constants():
    q = quadratic_objective(4, [1.0, 2.0], [0.5, 1.0], shifts=np.ones((3, 4)))
    spec = q.spec(make_contiguous_partition(4, 2))
    assert spec.beta_sq == (1.0, 1.0)
    assert spec.kappa_sq == (0.0, 0.0)
    assert spec.lipschitz == (1.0, 2.0)
    assert spec.noise_var == pytest.approx((0.25, 1.0))
    assert spec.L_max == 2.0


def test_quadratic_rejects_bad_constants():
    with pytest.raises(InvalidObjectiveError):
        quadratic_objective(2, [1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        quadratic_objective(2, [1.0, 1.0, 1.0], [0.0])
    with pytest.raises(InvalidObjectiveError):
        ObjectiveSpec("quadratic", 2, (1.0,), beta_sq=(0.5,))


def test_quadratic_zero_noise_is_exact():
    q = quadratic_objective(3, 1.5, 0.0, shifts=np.arange(6.0).reshape(2, 3))
    x = np.array([0.3, -1.0, 2.0])
    rng = np.random.default_rng(0)
    assert np.array_equal(q.stochastic_gradient(1, x, rng), q.local_grad(1, x))


def test_quadratic_minimum_and_f_inf():
    shifts = np.array([[0.0, 2.0], [2.0, 0.0]])
    q = quadratic_objective(2, [1.0, 3.0], 0.0, shifts=shifts)
    assert q.minimizer().tolist() == [1.0, 1.0]
    # F at the minimizer: mean over workers of 1/2 (1*1 + 3*1) = 2
    assert q.f_inf() == pytest.approx(2.0)
    assert q.loss(q.minimizer()) == pytest.approx(2.0)


def test_quadratic_monte_carlo_mean_and_variance():
    scheme = make_contiguous_partition(6, 3)
    sigma = np.array([0.5, 1.0, 2.0])
    q = quadratic_objective(6, [1.0, 2.0, 3.0], sigma, shifts=np.full((2, 6), 0.5), scheme=scheme)
    x = np.linspace(-1, 1, 6)
    rng = np.random.default_rng(7)
    n = 100_000
    G = np.array([q.stochastic_gradient(1, x, rng) for _ in range(n)])
    exact = q.local_grad(1, x)
    se = G.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(G.mean(axis=0) - exact) <= 4 * se)
    dev = G - exact
    for j, b in enumerate(scheme.blocks):
        var_j = np.mean(np.sum(dev[:, b] ** 2, axis=1))
        assert var_j == pytest.approx(sigma[j] ** 2, rel=0.05)


def test_quadratic_dissimilarity_holds_at_random_points():
    rng = np.random.default_rng(3)
    scheme = make_strided_partition(8, 3)
    m = 5
    q = quadratic_objective(8, [0.5, 1.0, 4.0], 0.1, shifts=rng.standard_normal((m, 8)), scheme=scheme)
    spec = q.spec(scheme)
    assert all(k > 0 for k in spec.kappa_sq)
    for _ in range(100):
        x = 3 * rng.standard_normal(8)
        grads = np.array([q.local_grad(i, x) for i in range(m)])
        for j, b in enumerate(scheme.blocks):
            lhs = np.mean(np.sum(grads[:, b] ** 2, axis=1))
            mean = grads[:, b].mean(axis=0)
            rhs = spec.beta_sq[j] * mean @ mean + spec.kappa_sq[j]
            assert lhs <= rhs * (1 + 1e-12) + 1e-12


# ---------------------------------------------------------------- logistic


def test_logistic_examples():
    obj = logistic_objective(np.array([[0.7, -1.2]]), np.array([1]))
    assert obj.loss(np.zeros(2)) == pytest.approx(math.log(2))
    assert obj.grad(np.zeros(2)) == pytest.approx([-0.35, 0.6])
    twin = logistic_objective(np.array([[1.0, 2.0], [1.0, 2.0]]), np.array([0, 1]))
    assert np.allclose(twin.grad(np.zeros(2)), 0.0)


def test_logistic_rejects_bad_data():
    with pytest.raises(InvalidObjectiveError):
        logistic_objective(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(InvalidObjectiveError):
        logistic_objective(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(InvalidObjectiveError):
        logistic_objective(np.zeros((2, 2)), np.array([0, 1]), l2_strength=-1)


def test_logistic_smoothness_bound_dominates_hessian():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 6))
    y = (rng.random(40) < 0.5).astype(float)
    obj = logistic_objective(X, y, l2_strength=0.1)
    scheme = make_contiguous_partition(6, 2)
    spec = obj.spec(scheme)
    for _ in range(5):
        w = rng.standard_normal(6)
        H = np.column_stack([fd_grad(lambda v, c=c: obj.grad(v)[c], w) for c in range(6)])
        for j, b in enumerate(scheme.blocks):
            top = np.linalg.eigvalsh(0.5 * (H[np.ix_(b, b)] + H[np.ix_(b, b)].T))[-1]
            assert top <= spec.lipschitz[j] + 1e-6


# ---------------------------------------------------------------- mlp


def small_mlp(bias=True, seed=0):
    rng = np.random.default_rng(seed)
    X, labels = make_blobs(30, 3, 2, rng)
    return mlp_objective([3, 4, 2], (X, one_hot(labels, 2)), bias=bias)


def test_mlp_zero_weights_forward():
    obj = small_mlp()
    assert np.allclose(obj.forward(np.zeros(obj.d), obj.features), 0.0)
    assert obj.loss(np.zeros(obj.d)) == pytest.approx(np.mean(np.sum(obj.targets**2, axis=1)) / 2)


def test_mlp_linear_layer_is_least_squares():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((25, 4))
    y = rng.standard_normal(25)
    obj = MLPObjective([4, 1], X, y, bias=False)
    w = rng.standard_normal(4)
    assert obj.grad(w) == pytest.approx(X.T @ (X @ w - y) / 25, rel=1e-12, abs=1e-14)
    # the Hessian is X^T X / n, so the power-iteration estimate is exact up to FD error
    spec = obj.spec(make_contiguous_partition(4, 2), at=w)
    for j, b in enumerate(make_contiguous_partition(4, 2).blocks):
        top = np.linalg.eigvalsh(X[:, b].T @ X[:, b] / 25)[-1]
        assert spec.lipschitz[j] == pytest.approx(top, rel=1e-5)
    assert spec.estimated


def test_mlp_size_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidObjectiveError):
        mlp_objective([3, 4, 2], (rng.standard_normal((5, 2)), np.zeros((5, 2))))
    with pytest.raises(InvalidObjectiveError):
        mlp_objective([3, 1], (rng.standard_normal((5, 3)), np.zeros(5)))
    with pytest.raises(InvalidObjectiveError):
        mlp_objective([3, 1], (rng.standard_normal((5, 3)), np.zeros(5)), activation="relu")


# ---------------------------------------------------------------- all kinds


def objectives_under_test():
    rng = np.random.default_rng(11)
    X, labels = make_blobs(60, 4, 2, rng)
    split = split_iid(60, 3, rng)
    return {
        "quadratic": quadratic_objective(5, [0.5, 2.0], 0.3, shifts=rng.standard_normal((3, 5))),
        "logistic": logistic_objective(X, labels, 0.05, split),
        "mlp": mlp_objective([4, 5, 3, 2], (X, one_hot(labels)), split=split),
    }


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_gradient_matches_finite_differences(kind):
    obj = objectives_under_test()[kind]
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = 0.5 * rng.standard_normal(obj.d)
        assert rel_err(obj.grad(x), fd_grad(obj.loss, x)) < 1e-5
        i = int(rng.integers(obj.m))
        assert rel_err(obj.local_grad(i, x), fd_grad(lambda v: obj.local_loss(i, v), x)) < 1e-5


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
def test_minibatch_gradient_is_unbiased(kind):
    obj = objectives_under_test()[kind]
    x = 0.3 * np.random.default_rng(1).standard_normal(obj.d)
    wo = obj.worker(1, np.random.default_rng(2))
    n = 20_000
    G = np.array([stochastic_gradient(wo, x, batch_size=2) for _ in range(n)])
    se = G.std(axis=0, ddof=1) / math.sqrt(n)
    exact = wo.grad(x)
    assert np.all(np.abs(G.mean(axis=0) - exact) <= 4 * se + 1e-12)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_stochastic_gradient_is_reproducible(kind):
    obj = objectives_under_test()[kind]
    x = np.full(obj.d, 0.1)
    a = obj.stochastic_gradient(0, x, np.random.default_rng(9), 3)
    b = obj.stochastic_gradient(0, x, np.random.default_rng(9), 3)
    assert np.array_equal(a, b)


def test_global_is_weighted_sum_of_locals():
    for obj in objectives_under_test().values():
        x = np.linspace(-0.5, 0.5, obj.d)
        assert obj.loss(x) == pytest.approx(sum(p * obj.local_loss(i, x) for i, p in enumerate(obj.weights)))
        assert np.allclose(obj.grad(x), sum(p * obj.local_grad(i, x) for i, p in enumerate(obj.weights)))


def test_load_csv_dataset(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("0.5,1.0,1\n-0.5,2.0,0\n")
    X, y = load_csv_dataset(path)
    assert X.tolist() == [[0.5, 1.0], [-0.5, 2.0]]
    assert y.tolist() == [1, 0]
    (tmp_path / "bad.csv").write_text("1\n2\n")
    with pytest.raises(InvalidObjectiveError):
        load_csv_dataset(tmp_path / "bad.csv")
