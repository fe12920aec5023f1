"""Closed-form NTK of the one-hidden-layer ReLU network, KRR and kernel GD.

The kernel is

    h(s, t) = s.t * (pi - arccos(s.t)) / (2 pi)

for unit vectors. For inputs off the sphere (the cube experiments) the same
expectation ``E_w[s.t 1{w.s >= 0, w.t >= 0}]`` gives ``s.t (pi - angle) / 2pi``
with the angle between s and t; ``unit=False`` selects that form.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, Divergence, NotUnitNorm
from .linalg import as_sym, cholesky_solve

UNIT_TOL = 1e-6
DIVERGENCE_NORM = 1e12
# |cos| above this: arccos loses about half the digits, use the atan2 form
NEAR_PARALLEL = 1.0 - 1e-6


def _check_unit(points):
    norms = np.linalg.norm(points, axis=-1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if bad.size:
        i = int(bad[0])
        raise NotUnitNorm(f"point {i} has norm {norms.flat[i]:.12g}, expected 1", index=i)


def _as_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if points.ndim != 2:
        raise DimensionMismatch(f"points must be an (n, d) array, got shape {points.shape}")
    return points


def _direction_angle(u, v):
    """Angle between unit directions, accurate for nearly (anti)parallel pairs."""
    return 2.0 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))


def ntk_eval(s, t):
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise DimensionMismatch(f"incompatible vectors {s.shape} and {t.shape}")
    _check_unit(np.stack([s, t]))
    # clamp once so h(s, t) and h(t, s) agree bit for bit
    c = min(1.0, max(-1.0, float(np.dot(s, t))))
    if abs(c) > NEAR_PARALLEL:
        theta = float(_direction_angle(s / np.linalg.norm(s), t / np.linalg.norm(t)))
    else:
        theta = np.arccos(c)
    return c * (np.pi - theta) / (2.0 * np.pi)


def _pair_angles(left, right, cos):
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    i, j = np.nonzero(np.abs(cos) > NEAR_PARALLEL)
    if i.size:
        ln = np.linalg.norm(left[i], axis=1, keepdims=True)
        rn = np.linalg.norm(right[j], axis=1, keepdims=True)
        ok = (ln[:, 0] > 0) & (rn[:, 0] > 0)
        theta[i[ok], j[ok]] = _direction_angle(left[i[ok]] / ln[ok], right[j[ok]] / rn[ok])
    return theta


def kernel_matrix(left, right, unit=True):
    """Cross-kernel matrix ``K[i, j] = h(left[i], right[j])``."""
    left = _as_points(left)
    right = _as_points(right)
    if left.shape[1] != right.shape[1]:
        raise DimensionMismatch(f"dimension {left.shape[1]} vs {right.shape[1]}")
    dots = left @ right.T
    if unit:
        _check_unit(left)
        _check_unit(right)
        cos = np.clip(dots, -1.0, 1.0)
        return cos * (np.pi - _pair_angles(left, right, cos)) / (2.0 * np.pi)
    norms = np.outer(np.linalg.norm(left, axis=1), np.linalg.norm(right, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
    return dots * (np.pi - _pair_angles(left, right, cos)) / (2.0 * np.pi)


def gram_matrix(points, unit=True):
    points = _as_points(points)
    gram = kernel_matrix(points, points, unit=unit)
    return as_sym(gram)


@dataclass(frozen=True)
class KernelModel:
    train_inputs: np.ndarray
    gram: np.ndarray
    ridge: float
    coeffs: np.ndarray
    mode: str  # "ridge", "interpolate" or "gd"
    unit: bool = True
    scale: float = 1.0  # kernel multiplier; gram is stored already scaled

    def predict(self, x):
        return predict(self, x)

    def predict_many(self, points):
        k = kernel_matrix(points, self.train_inputs, unit=self.unit)
        return self.scale * (k @ self.coeffs)

    def train_predictions(self):
        return self.gram @ self.coeffs


def fit_krr(points, labels, ridge, unit=True, gram=None, scale=1.0):
    """Kernel ridge regression: coefficients ``(H + ridge I)^{-1} y``.

    ``ridge == 0`` gives the minimum-norm interpolant through the same
    Cholesky path, so it fails with NotPositiveDefinite on degenerate data.
    ``scale`` multiplies the kernel (and a supplied ``gram`` must already
    include it).
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    points = _as_points(points)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (points.shape[0],):
        raise DimensionMismatch(f"{labels.shape[0]} labels for {points.shape[0]} points")
    if gram is None:
        gram = scale * gram_matrix(points, unit=unit)
    n = gram.shape[0]
    if not np.any(labels):
        coeffs = np.zeros(n)
        if ridge == 0:
            # still certify positive definiteness of the interpolation system
            cholesky_solve(gram, coeffs)
    else:
        coeffs = cholesky_solve(gram + ridge * np.eye(n), labels)
    mode = "ridge" if ridge > 0 else "interpolate"
    return KernelModel(points, gram, float(ridge), coeffs, mode, unit, scale)


def predict(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single d-vector; use predict_many")
    return float(model.predict_many(x[None, :])[0])


@dataclass
class KernelGdTrajectory:
    step_size: float
    iterations: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    recorded_losses: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterates[-1]


def step_size_cap(top_eigenvalue):
    """Default safe kernel-GD step ``1 / lambda_1^2``."""
    return 1.0 / top_eigenvalue**2


def kernel_gd_run(points, labels, step_size, max_iter, record_every=1, unit=True, gram=None):
    """Gradient descent on the kernel coefficients from ``omega_0 = 0``:

        omega <- omega - eta * (H^2 omega - H y)

    Iterates at multiples of ``record_every`` and the final iterate are kept.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if max_iter < 0 or record_every < 1:
        raise ValueError("max_iter must be >= 0 and record_every >= 1")
    labels = np.asarray(labels, dtype=np.float64)
    if gram is None:
        gram = gram_matrix(points, unit=unit)
    gram_sq = gram @ gram
    target = gram @ labels
    omega = np.zeros(gram.shape[0])
    traj = KernelGdTrajectory(step_size=step_size)

    def record(k):
        resid = gram @ omega - labels
        traj.iterations.append(k)
        traj.iterates.append(omega.copy())
        traj.recorded_losses.append(0.5 * float(resid @ resid))

    record(0)
    for k in range(1, max_iter + 1):
        omega = omega - step_size * (gram_sq @ omega - target)
        if k % record_every == 0 or k == max_iter:
            if not np.linalg.norm(omega) <= DIVERGENCE_NORM:
                raise Divergence(f"coefficient norm exceeded {DIVERGENCE_NORM:g}", iteration=k)
            record(k)
        elif k % 1024 == 0 and not np.linalg.norm(omega) <= DIVERGENCE_NORM:
            raise Divergence(f"coefficient norm exceeded {DIVERGENCE_NORM:g}", iteration=k)
    return traj


def gd_model(points, coeffs, gram, unit=True, scale=1.0):
    return KernelModel(np.asarray(points, dtype=np.float64), gram, 0.0, np.asarray(coeffs), "gd", unit, scale)
