"""One-hidden-layer ReLU network with a fixed output layer.

    f(x) = (1/sqrt(m)) * sum_r a_r * relu(w_r . x)

Only the hidden weights ``W`` (shape ``(m, d)``, row r is ``w_r``) are trained;
the signs ``a`` are drawn once and frozen. ``vec(W)`` is the row-major
flattening, so the feature map is neuron-major as well.

Training is full batch. The ReLU indicator is ``1{w_r . x >= 0}``.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, NonFinite

RULES = ("plain_gd", "l2_gd", "rmsprop")

# Below this many (neuron, sample) pairs the direct dense path is used even
# for two-dimensional inputs.
ANGULAR_MIN_PAIRS = 20_000

_PI = np.pi
_TWO_PI = 2.0 * np.pi
_HALF_PI = 0.5 * np.pi


@dataclass
class NetworkState:
    weights: np.ndarray
    signs: np.ndarray
    tau: float
    init_weights: np.ndarray

    @property
    def width(self):
        return self.weights.shape[0]

    @property
    def input_dim(self):
        return self.weights.shape[1]

    def copy(self):
        return replace(self, weights=self.weights.copy())

    def with_weights(self, weights):
        return replace(self, weights=weights)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def init_network(m, d, tau, seed):
    """Draw ``w_r ~ N(0, tau^2 I)`` and ``a_r ~ unif{-1, +1}``.

    Stream order from ``numpy.random.default_rng(seed)``: the m*d Gaussians
    neuron-major (row r, then coordinate), then m sign bits.
    """
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    if tau <= 0:
        raise ValueError("tau must be positive")
    rng = np.random.default_rng(seed)
    weights = tau * rng.standard_normal((m, d))
    signs = np.where(rng.integers(0, 2, size=m) == 1, 1.0, -1.0)
    return NetworkState(weights.copy(), _frozen(signs), float(tau), _frozen(weights))


def _check_inputs(state, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or inputs.shape[1] != state.input_dim:
        raise DimensionMismatch(f"inputs of shape {inputs.shape} for input_dim {state.input_dim}")
    return inputs


def _use_angular(weights, inputs, angular):
    if angular is None:
        return weights.shape[1] == 2 and weights.shape[0] * inputs.shape[0] >= ANGULAR_MIN_PAIRS
    return angular and weights.shape[1] == 2


def _arc_ranges(centers, sorted_twice):
    """Index ranges of ``sorted_twice`` inside the closed arcs ``center +- pi/2``."""
    lo = centers - _HALF_PI
    lo = np.where(lo < -_PI, lo + _TWO_PI, lo)
    left = np.searchsorted(sorted_twice, lo, side="left")
    right = np.searchsorted(sorted_twice, lo + _PI, side="right")
    return left, right


def _doubled_prefix(angles, vectors):
    order = np.argsort(angles, kind="stable")
    ang = angles[order]
    vec = vectors[order]
    ang2 = np.concatenate([ang, ang + _TWO_PI])
    prefix = np.zeros((2 * len(ang) + 1, vectors.shape[1]))
    np.cumsum(np.concatenate([vec, vec]), axis=0, out=prefix[1:])
    return ang2, prefix


def _angular_outputs(weights, signs, inputs):
    # For d = 2, w.x >= 0 iff the angle of w lies within pi/2 of the angle of x,
    # so the active set of each input is an arc of sorted neuron angles.
    scale = 1.0 / np.sqrt(weights.shape[0])
    phi = np.arctan2(weights[:, 1], weights[:, 0])
    theta = np.arctan2(inputs[:, 1], inputs[:, 0])
    ang2, prefix = _doubled_prefix(phi, signs[:, None] * weights)
    left, right = _arc_ranges(theta, ang2)
    summed = prefix[right] - prefix[left]
    return scale * np.einsum("ij,ij->i", inputs, summed), phi, theta


def _angular_grad(weights, signs, inputs, residual, phi, theta):
    scale = 1.0 / np.sqrt(weights.shape[0])
    ang2, prefix = _doubled_prefix(theta, residual[:, None] * inputs)
    left, right = _arc_ranges(phi, ang2)
    summed = prefix[right] - prefix[left]
    zero = ~np.any(weights, axis=1)
    if zero.any():
        # w = 0 is active for every input
        summed[zero] = residual @ inputs
    return (scale * signs)[:, None] * summed


def _dense_outputs(weights, signs, inputs):
    pre = inputs @ weights.T
    active = pre >= 0
    out = np.where(active, pre, 0.0) @ signs / np.sqrt(weights.shape[0])
    return out, active


def _dense_grad(weights, signs, inputs, residual, active):
    g = (active * residual[:, None]).T @ inputs
    return (signs / np.sqrt(weights.shape[0]))[:, None] * g


def _outputs_and_grad(weights, signs, inputs, labels, angular=None):
    """Predictions ``u`` and the gradient of ``0.5 * ||u - y||^2`` in ``W``."""
    if _use_angular(weights, inputs, angular):
        u, phi, theta = _angular_outputs(weights, signs, inputs)
        residual = u - labels
        return u, _angular_grad(weights, signs, inputs, residual, phi, theta)
    u, active = _dense_outputs(weights, signs, inputs)
    residual = u - labels
    return u, _dense_grad(weights, signs, inputs, residual, active)


def predict_batch(state, inputs, angular=None):
    inputs = _check_inputs(state, inputs)
    if _use_angular(state.weights, inputs, angular):
        return _angular_outputs(state.weights, state.signs, inputs)[0]
    return _dense_outputs(state.weights, state.signs, inputs)[0]


def forward(state, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != state.input_dim:
        raise DimensionMismatch(f"input of shape {x.shape} for input_dim {state.input_dim}")
    pre = state.weights @ x
    return float(np.maximum(pre, 0.0) @ state.signs / np.sqrt(state.width))


def feature_map(state, x, at_init=False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != state.input_dim:
        raise DimensionMismatch(f"input of shape {x.shape} for input_dim {state.input_dim}")
    w = state.init_weights if at_init else state.weights
    gate = (w @ x >= 0) * state.signs / np.sqrt(state.width)
    return (gate[:, None] * x[None, :]).ravel()


def linearized_predict(state, x):
    """``vec(W)^T z_0(x)``: current weights with the activation pattern frozen at init."""
    return float(state.weights.ravel() @ feature_map(state, x, at_init=True))


def linearized_predict_batch(state, inputs):
    inputs = _check_inputs(state, inputs)
    gate = (inputs @ state.init_weights.T >= 0) * state.signs
    return np.einsum("ir,ir->i", gate, inputs @ state.weights.T) / np.sqrt(state.width)


def network_gram(state, inputs, at_init=False):
    """``H = Z^T Z`` with ``H[i, j] = (x_i . x_j) * #{r active on both} / m``."""
    inputs = _check_inputs(state, inputs)
    w = state.init_weights if at_init else state.weights
    active = (inputs @ w.T >= 0).astype(np.float64)
    gram = (inputs @ inputs.T) * (active @ active.T) / state.width
    return (gram + gram.T) / 2.0


def squared_loss(state, inputs, labels):
    r = predict_batch(state, inputs) - np.asarray(labels, dtype=np.float64)
    return 0.5 * float(r @ r)


def penalized_loss(state, inputs, labels, mu):
    w = state.weights.ravel()
    return squared_loss(state, inputs, labels) + 0.5 * mu * float(w @ w)


def loss_gradient(state, inputs, labels, mu=0.0, angular=None):
    """Gradient of ``0.5 ||y - u||^2 + (mu / 2) ||vec(W)||^2`` with respect to ``W``."""
    inputs = _check_inputs(state, inputs)
    labels = np.asarray(labels, dtype=np.float64)
    _, grad = _outputs_and_grad(state.weights, state.signs, inputs, labels, angular)
    if mu:
        grad = grad + mu * state.weights
    return grad


def _finite_or_raise(weights, iteration=None):
    if not np.isfinite(weights).all():
        where = "" if iteration is None else f" at iteration {iteration}"
        raise NonFinite(f"non-finite weights{where}", iteration=iteration)


def _check_labels(inputs, labels):
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (inputs.shape[0],):
        raise DimensionMismatch(f"{labels.shape} labels for {inputs.shape[0]} inputs")
    return labels


def gd_step(state, inputs, labels, eta):
    inputs = _check_inputs(state, inputs)
    labels = _check_labels(inputs, labels)
    _, grad = _outputs_and_grad(state.weights, state.signs, inputs, labels)
    new = state.weights - eta * grad
    _finite_or_raise(new)
    return state.with_weights(new)


def regularized_gd_step(state, inputs, labels, eta1, eta2, mu):
    decay = eta2 * mu
    if not 0.0 <= decay < 1.0:
        raise ValueError("eta2 * mu must lie in [0, 1)")
    inputs = _check_inputs(state, inputs)
    labels = _check_labels(inputs, labels)
    _, grad = _outputs_and_grad(state.weights, state.signs, inputs, labels)
    new = state.weights - eta1 * grad - decay * state.weights
    _finite_or_raise(new)
    return state.with_weights(new)


@dataclass
class RMSPropState:
    accumulator: np.ndarray

    @classmethod
    def zeros_like(cls, state):
        return cls(np.zeros_like(state.weights))


def rmsprop_update(weights, accumulator, grad, learning_rate, rho, epsilon):
    acc = rho * accumulator + (1.0 - rho) * grad * grad
    return weights - learning_rate * grad / np.sqrt(acc + epsilon), acc


def rmsprop_step(state, optimizer_state, inputs, labels, learning_rate=0.001, decay_rho=0.9, epsilon=1e-7, mu=0.0):
    if not 0.0 < decay_rho < 1.0:
        raise ValueError("decay_rho must lie in (0, 1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grad = loss_gradient(state, inputs, labels, mu=mu)
    new, acc = rmsprop_update(state.weights, optimizer_state.accumulator, grad, learning_rate, decay_rho, epsilon)
    _finite_or_raise(new)
    return state.with_weights(new), RMSPropState(acc)


@dataclass
class TrainConfig:
    eta1: float = 0.1
    eta2: float = 0.0
    mu: float = 0.0
    max_iter: int = 1000
    seed: int = 0
    record_every: int = 1
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    # optional early exits: training RMSE below target_rmse, or wall-clock seconds
    target_rmse: float | None = None
    time_limit: float | None = None

    def validate(self, rule):
        if rule not in RULES:
            raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
        if self.max_iter < 0 or self.record_every < 1:
            raise ValueError("max_iter must be >= 0 and record_every >= 1")
        if rule == "rmsprop":
            if self.learning_rate <= 0 or not 0 < self.rho < 1 or self.epsilon <= 0:
                raise ValueError("invalid RMSProp settings")
            if self.mu < 0:
                raise ValueError("mu must be non-negative")
            return
        if self.eta1 <= 0:
            raise ValueError("eta1 must be positive")
        if rule == "l2_gd":
            if self.eta2 < 0 or self.mu < 0:
                raise ValueError("eta2 and mu must be non-negative")
            if self.eta2 * self.mu >= 1:
                raise ValueError("eta2 * mu must be < 1")

    def decay(self, rule):
        return self.eta2 * self.mu if rule == "l2_gd" else 0.0


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)  # 0.5 ||y - u||^2
    penalized_losses: list = field(default_factory=list)  # plus (mu / 2) ||vec W||^2
    movement: list = field(default_factory=list)  # max_r ||w_r - w_r(0)||
    decayed_distance: list = field(default_factory=list)  # ||vec W - (1 - eta2 mu)^k vec W0||
    train_rmse: list = field(default_factory=list)
    stop_reason: str = "max_iter"
    seconds: float = 0.0

    @property
    def final_loss(self):
        return self.losses[-1]


def train(state, inputs, labels, config, rule="plain_gd", angular=None):
    """Run ``rule`` for up to ``config.max_iter`` full-batch steps.

    The log holds the state after every ``record_every``-th step, after the
    final step, and at an early exit. The input state is left untouched.
    """
    config.validate(rule)
    inputs = _check_inputs(state, inputs)
    labels = _check_labels(inputs, labels)
    weights = state.weights.copy()
    w0 = state.init_weights
    signs = state.signs
    decay = config.decay(rule)
    penalty = config.mu if rule != "plain_gd" else 0.0
    acc = np.zeros_like(weights) if rule == "rmsprop" else None
    use_angular = _use_angular(weights, inputs, angular)
    n = inputs.shape[0]
    log = TrainLog()
    start = time.perf_counter()

    def record(k, residual):
        sq = 0.5 * float(residual @ residual)
        flat = weights.ravel()
        log.iterations.append(k)
        log.losses.append(sq)
        log.penalized_losses.append(sq + 0.5 * penalty * float(flat @ flat))
        log.movement.append(float(np.sqrt(np.max(np.sum((weights - w0) ** 2, axis=1)))))
        log.decayed_distance.append(float(np.linalg.norm(flat - (1.0 - decay) ** k * w0.ravel())))
        log.train_rmse.append(float(np.sqrt(2.0 * sq / n)))

    k = 0
    while True:
        u, grad = _outputs_and_grad(weights, signs, inputs, labels, use_angular)
        residual = u - labels
        stop = None
        if k == config.max_iter:
            stop = "max_iter"
        elif config.target_rmse is not None and np.sqrt(residual @ residual / n) < config.target_rmse:
            stop = "target_rmse"
        elif config.time_limit is not None and time.perf_counter() - start > config.time_limit:
            stop = "time_limit"
        if stop or k % config.record_every == 0:
            record(k, residual)
        if stop:
            log.stop_reason = stop
            break
        if rule == "plain_gd":
            weights = weights - config.eta1 * grad
        elif rule == "l2_gd":
            weights = weights - config.eta1 * grad - decay * weights
        else:
            if penalty:
                grad = grad + penalty * weights
            weights, acc = rmsprop_update(weights, acc, grad, config.learning_rate, config.rho, config.epsilon)
        k += 1
        _finite_or_raise(weights, k)
    log.seconds = time.perf_counter() - start
    return state.with_weights(weights), log
