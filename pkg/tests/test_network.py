import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference, loop_forward
from ntk_lab.data import l2_error, make_dataset, sample_sphere
from ntk_lab.errors import DimensionMismatch, NonFinite
from ntk_lab.network import (
    NetworkState,
    RMSPropState,
    TrainConfig,
    feature_map,
    forward,
    gd_step,
    init_network,
    linearized_predict,
    linearized_predict_batch,
    loss_gradient,
    network_gram,
    penalized_loss,
    predict_batch,
    regularized_gd_step,
    rmsprop_step,
    rmsprop_update,
    squared_loss,
    train,
)
from ntk_lab.ntk import gram_matrix, ntk_eval


def make_state(weights, signs, tau=1.0):
    w = np.array(weights, dtype=np.float64)
    return NetworkState(w, np.array(signs, dtype=np.float64), tau, w.copy())


X1 = np.array([[1.0, 0.0]])


def test_init_is_deterministic():
    a = init_network(50, 3, 0.5, 7)
    b = init_network(50, 3, 0.5, 7)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.signs, b.signs)
    assert not np.array_equal(a.weights, init_network(50, 3, 0.5, 8).weights)


def test_init_statistics():
    s = init_network(10_000, 2, 1.0, 0)
    assert abs(s.weights.mean()) <= 0.03
    assert 0.97 <= s.weights.std() <= 1.03
    assert set(np.unique(s.signs)) == {-1.0, 1.0}
    assert abs(np.sum(s.signs == 1) - 5000) <= 300
    assert init_network(4, 2, 3.0, 0).tau == 3.0


def test_init_weights_frozen():
    s = init_network(4, 2, 1.0, 0)
    with pytest.raises(ValueError):
        s.init_weights[0, 0] = 1.0
    with pytest.raises(ValueError):
        s.signs[0] = 1.0


def test_forward_examples():
    assert forward(make_state([[1.0, 0.0]], [1.0]), [1.0, 0.0]) == 1.0
    assert forward(make_state([[-1.0, 0.0]], [1.0]), [1.0, 0.0]) == 0.0
    assert forward(make_state([[1.0, 0.0]] * 4, [1, 1, -1, -1]), [1.0, 0.0]) == 0.0
    with pytest.raises(DimensionMismatch):
        forward(make_state([[1.0, 0.0]], [1.0]), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("angular", [False, True])
def test_batch_prediction_matches_loop(angular):
    s = init_network(40, 2, 1.0, 3)
    x = sample_sphere(7, 2, 4) * np.array([[1.0], [2.0], [0.5], [1.0], [3.0], [1.0], [0.1]])
    expected = [loop_forward(s.weights, s.signs, xi) for xi in x]
    np.testing.assert_allclose(predict_batch(s, x, angular=angular), expected, atol=1e-13)


def test_feature_map_examples():
    s = make_state([[1.0, 0.0]], [1.0])
    np.testing.assert_array_equal(feature_map(s, [0.6, 0.8]), [0.6, 0.8])
    dead = make_state([[-1.0, 0.0], [-2.0, 0.0]], [1.0, -1.0])
    assert not np.any(feature_map(dead, [1.0, 0.0]))
    r = init_network(30, 3, 1.0, 2)
    for x in sample_sphere(5, 3, 1):
        assert abs(feature_map(r, x) @ r.weights.ravel() - forward(r, x)) <= 1e-12


def test_linearized_examples():
    s = init_network(30, 2, 1.0, 0)
    x = sample_sphere(5, 2, 0)
    for xi in x:
        assert linearized_predict(s, xi) == pytest.approx(forward(s, xi), abs=1e-14)
    np.testing.assert_allclose(linearized_predict_batch(s, x), predict_batch(s, x), atol=1e-14)
    zero = s.with_weights(np.zeros_like(s.weights))
    assert linearized_predict(zero, x[0]) == 0.0


def test_gd_step_examples():
    s = make_state([[1.0, 0.0]], [1.0])
    assert np.array_equal(gd_step(s, X1, [1.0], 0.3).weights, s.weights)
    assert np.array_equal(gd_step(s, X1, [2.0], 0.0).weights, s.weights)
    eta = 0.3
    np.testing.assert_allclose(gd_step(s, X1, [2.0], eta).weights, [[1.0 + eta, 0.0]], atol=1e-15)


def test_gd_step_per_neuron_formula():
    s = init_network(6, 3, 1.0, 1)
    x = sample_sphere(4, 3, 2)
    y = np.array([0.5, -1.0, 2.0, 0.0])
    eta = 0.2
    u = predict_batch(s, x)
    expected = s.weights.copy()
    for r in range(6):
        for i in range(4):
            if s.weights[r] @ x[i] >= 0:
                expected[r] -= eta / math.sqrt(6) * s.signs[r] * (u[i] - y[i]) * x[i]
    np.testing.assert_allclose(gd_step(s, x, y, eta).weights, expected, atol=1e-14)


def test_regularized_step_examples():
    s = init_network(5, 2, 1.0, 0)
    x = sample_sphere(3, 2, 0)
    u = predict_batch(s, x)
    np.testing.assert_allclose(regularized_gd_step(s, x, u, 0.1, 0.2, 0.5).weights, 0.9 * s.weights, atol=1e-15)
    y = np.array([1.0, -1.0, 0.5])
    assert np.array_equal(regularized_gd_step(s, x, y, 0.1, 0.7, 0.0).weights, gd_step(s, x, y, 0.1).weights)
    one = make_state([[1.0, 0.0]], [1.0])
    eta1 = 0.3
    np.testing.assert_allclose(
        regularized_gd_step(one, X1, [2.0], eta1, 0.1, 1.0).weights, [[0.9 + eta1, 0.0]], atol=1e-15
    )
    with pytest.raises(ValueError):
        regularized_gd_step(s, x, y, 0.1, 1.0, 1.0)


def test_rmsprop_examples():
    dead = make_state([[-1.0, 0.0]], [1.0])
    acc = RMSPropState(np.full((1, 2), 4.0))
    new, new_acc = rmsprop_step(dead, acc, X1, [0.0])
    assert np.array_equal(new.weights, dead.weights)
    np.testing.assert_allclose(new_acc.accumulator, 0.9 * 4.0)
    w, v = rmsprop_update(np.zeros(1), np.zeros(1), np.ones(1), 0.001, 0.9, 1e-7)
    assert w[0] == pytest.approx(-0.001 / math.sqrt(0.1 + 1e-7), rel=1e-15)
    assert w[0] == pytest.approx(-0.003162, abs=5e-7)
    assert v[0] == pytest.approx(0.1)


def test_rmsprop_defaults_and_validation():
    s = init_network(4, 2, 1.0, 0)
    x = sample_sphere(3, 2, 0)
    rmsprop_step(s, RMSPropState.zeros_like(s), x, np.ones(3))
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.rho, cfg.epsilon) == (0.001, 0.9, 1e-7)
    with pytest.raises(ValueError):
        rmsprop_step(s, RMSPropState.zeros_like(s), x, np.ones(3), decay_rho=1.0)
    with pytest.raises(ValueError):
        rmsprop_step(s, RMSPropState.zeros_like(s), x, np.ones(3), epsilon=0.0)


def test_train_zero_iterations():
    s = init_network(10, 2, 1.0, 0)
    x = sample_sphere(4, 2, 0)
    final, log = train(s, x, np.ones(4), TrainConfig(max_iter=0))
    assert np.array_equal(final.weights, s.weights)
    assert log.iterations == [0]


def test_plain_gd_drives_loss_to_zero():
    x = sample_sphere(5, 2, 1)
    y = make_dataset(x, "quadratic_norm", 0.3, 1).noisy_labels
    s = init_network(200, 2, 1.0, 1)
    lam = np.linalg.eigvalsh(network_gram(s, x, at_init=True))
    eta = 1.0 / lam[-1]
    final, log = train(s, x, y, TrainConfig(eta1=eta, max_iter=4000, record_every=50))
    losses = np.array(log.losses)
    above = losses[losses > 1e-20]  # past that the loss sits at round-off level
    assert above.size > 2 and np.all(np.diff(above) < 0)
    assert losses[-1] < 1e-6 * losses[0]
    assert log.iterations == sorted(log.iterations)


def test_l2_gd_pure_decay():
    # every neuron inactive on every input: outputs are 0 so labels 0 leave only the decay
    s = make_state([[-1.0, -0.5], [-2.0, -1.0], [-0.3, -3.0]], [1, -1, 1])
    x = np.array([[1.0, 0.5], [0.2, 0.9]])
    cfg = TrainConfig(eta1=0.5, eta2=0.5, mu=0.2, max_iter=37, record_every=1)
    final, log = train(s, x, np.zeros(2), cfg, rule="l2_gd")
    w0 = np.linalg.norm(s.weights)
    for k, dist in zip(log.iterations, log.decayed_distance):
        assert dist <= 1e-10 * w0
    assert np.linalg.norm(final.weights) == pytest.approx(0.9**37 * w0, rel=1e-10)


def test_train_leaves_input_state_untouched():
    s = init_network(10, 2, 1.0, 0)
    before = s.weights.copy()
    train(s, sample_sphere(4, 2, 0), np.ones(4), TrainConfig(eta1=0.1, max_iter=5))
    assert np.array_equal(s.weights, before)


def test_train_stop_rules():
    x = sample_sphere(5, 2, 0)
    s = init_network(50, 2, 1.0, 0)
    _, log = train(s, x, np.zeros(5), TrainConfig(eta1=0.5, max_iter=10**6, target_rmse=10.0))
    assert log.stop_reason == "target_rmse" and log.iterations == [0]
    _, log = train(s, x, np.zeros(5), TrainConfig(eta1=0.5, max_iter=10**7, time_limit=0.05, record_every=10**6))
    assert log.stop_reason == "time_limit"
    with pytest.raises(NonFinite), np.errstate(over="ignore", invalid="ignore"):
        train(s, x, np.ones(5) * 1e200, TrainConfig(eta1=1e200, max_iter=50))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(eta1=0.1, eta2=1.0, mu=1.0).validate("l2_gd")
    with pytest.raises(ValueError):
        TrainConfig(eta1=0.0).validate("plain_gd")
    with pytest.raises(ValueError):
        TrainConfig().validate("adam")
    assert TrainConfig(eta2=0.3, mu=0.0).decay("l2_gd") == 0.0


def test_network_gram_examples():
    pair = sample_sphere(2, 3, 5)
    s = init_network(100_000, 3, 1.0, 0)
    np.testing.assert_allclose(network_gram(s, pair, at_init=True), gram_matrix(pair), atol=0.01)
    dead = make_state([[-1.0, -1.0]] * 3, [1, 1, -1])
    assert not np.any(network_gram(dead, np.array([[1.0, 0.5], [0.3, 2.0]])))
    r = init_network(64, 2, 1.0, 1)
    x = sample_sphere(4, 2, 2) * 1.7
    g = network_gram(r, x)
    for i in range(4):
        active = np.sum(r.weights @ x[i] >= 0)
        assert g[i, i] == pytest.approx(active / 64 * (x[i] @ x[i]), rel=1e-14)
        assert g[i, i] == pytest.approx(np.sum(feature_map(r, x[i]) ** 2), rel=1e-14)


def test_duplicated_neurons_scale_by_sqrt_two():
    s = init_network(25, 3, 1.0, 4)
    twice = make_state(np.vstack([s.weights, s.weights]), np.concatenate([s.signs, s.signs]))
    for x in sample_sphere(6, 3, 1):
        assert forward(twice, x) == pytest.approx(math.sqrt(2) * forward(s, x), rel=1e-12, abs=1e-15)


def _away_from_kinks(weights, x, margin=1e-3):
    return np.all(np.abs(x @ weights.T) > margin)


@settings(max_examples=100)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    d=st.integers(min_value=1, max_value=4),
    mu=st.sampled_from([0.0, 0.3, 2.0]),
)
def test_gradient_matches_finite_differences(seed, d, mu):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(2, 12)), int(rng.integers(1, 8))
    s = init_network(m, d, 1.0, seed)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    if not _away_from_kinks(s.weights, x):
        return
    grad = loss_gradient(s, x, y, mu=mu)

    def objective(w):
        return penalized_loss(s.with_weights(w), x, y, mu)

    picks = rng.choice(m * d, size=min(5, m * d), replace=False)
    for flat in picks:
        idx = np.unravel_index(flat, (m, d))
        fd = central_difference(objective, s.weights, idx)
        assert abs(fd - grad[idx]) <= 1e-4 * max(1.0, abs(fd))


@settings(max_examples=60)
@given(seed=st.integers(min_value=0, max_value=2**31), m=st.integers(min_value=1, max_value=300))
def test_angular_path_matches_dense(seed, m):
    rng = np.random.default_rng(seed)
    s = init_network(m, 2, 1.0, seed)
    w = s.weights.copy()
    w[rng.random(m) < 0.1] = 0.0  # zero neurons are active everywhere
    s = s.with_weights(w)
    n = int(rng.integers(1, 40))
    x = rng.standard_normal((n, 2)) * rng.uniform(0.1, 3.0, size=(n, 1))
    x[rng.random(n) < 0.1] = 0.0
    y = rng.standard_normal(n)
    np.testing.assert_allclose(predict_batch(s, x, angular=True), predict_batch(s, x, angular=False), atol=1e-12)
    np.testing.assert_allclose(
        loss_gradient(s, x, y, angular=True), loss_gradient(s, x, y, angular=False), atol=1e-11
    )


def test_angular_boundary_ties():
    # w . x == 0 exactly: both paths must count the neuron as active
    s = make_state([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]], [1, -1, 1])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -2.0]])
    y = np.array([0.3, -0.2, 0.1])
    np.testing.assert_array_equal(predict_batch(s, x, angular=True), predict_batch(s, x, angular=False))
    np.testing.assert_allclose(loss_gradient(s, x, y, angular=True), loss_gradient(s, x, y, angular=False))


def test_squared_and_penalized_loss():
    s = make_state([[1.0, 0.0]], [1.0])
    assert squared_loss(s, X1, [3.0]) == 2.0
    assert penalized_loss(s, X1, [3.0], 0.5) == 2.25


# Point sets whose closest pair is not nearly coincident, so the smallest
# Gram eigenvalue (and with it the time to interpolate) stays moderate.
@pytest.mark.parametrize("seed", [1, 2])
def test_plain_gd_interpolates_noise(seed):
    n, m, sigma = 10, 2000, 0.3
    ds = make_dataset(sample_sphere(n, 2, seed), "quadratic_norm", sigma, seed)
    s = init_network(m, 2, 1.0, seed)
    eta = 1.0 / np.linalg.eigvalsh(network_gram(s, ds.inputs, at_init=True))[-1]
    cfg = TrainConfig(eta1=eta, max_iter=60_000, record_every=60_000, target_rmse=1e-3)
    final, log = train(s, ds.inputs, ds.noisy_labels, cfg)
    assert log.stop_reason == "target_rmse"
    test = sample_sphere(1000, 2, 100 + seed)
    assert l2_error(lambda p: predict_batch(final, p), "quadratic_norm", test) > 0.5 * sigma


def test_linearization_error_shrinks_with_width():
    n, k = 10, 500
    ds = make_dataset(sample_sphere(n, 2, 0), "quadratic_norm", 0.3, 0)
    x, y = ds.inputs, ds.noisy_labels
    h = gram_matrix(x)
    eta = 1.0 / np.linalg.eigvalsh(h)[-1]
    step = np.linalg.matrix_power(np.eye(n) - eta * h, k)
    devs = []
    for j in range(5):
        s = init_network(512 * 2**j, 2, 1.0, 0)
        u0 = predict_batch(s, x)
        final, _ = train(s, x, y, TrainConfig(eta1=eta, max_iter=k, record_every=k))
        devs.append(np.linalg.norm(predict_batch(final, x) - (y + step @ (u0 - y))))
    inversions = sum(b > a for a, b in zip(devs, devs[1:]))
    assert inversions <= 1, devs
