"""Data-dependent stopping time for kernel gradient descent.

The local empirical Rademacher complexity of the Gram matrix is

    R(eps) = sqrt( (1/n) * sum_i min(lambda_i / n, eps^2) )

and the stopping time is one less than the first k for which
``R(1 / sqrt(eta k)) > 1 / (2 e sigma eta k)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeEigenvalue, NtkLabError
from .linalg import sym_eigen
from .ntk import gd_model, gram_matrix, kernel_gd_run, step_size_cap

NEG_EIG_TOL = 1e-10
DEFAULT_K_CAP = 10_000_000
_CHUNK = 1 << 18


class StoppingTimeNotFound(NtkLabError):
    def __init__(self, diagnostics):
        super().__init__(f"no stopping time up to k_cap={diagnostics.k_cap}")
        self.diagnostics = diagnostics


def clean_eigenvalues(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if np.any(lam < -NEG_EIG_TOL):
        raise NegativeEigenvalue(f"eigenvalue {lam.min():.3e} below -{NEG_EIG_TOL:g}")
    return np.maximum(lam, 0.0)


def rademacher(eigenvalues, n, eps):
    if eps < 0:
        raise ValueError("eps must be non-negative")
    lam = clean_eigenvalues(eigenvalues)
    if lam.shape[0] != n:
        raise ValueError(f"expected {n} eigenvalues, got {lam.shape[0]}")
    return math.sqrt(float(np.sum(np.minimum(lam / n, eps * eps))) / n)


def stopping_predicate(eigenvalues, n, sigma, eta, k):
    """True when ``R(1/sqrt(eta k))`` exceeds ``1/(2 e sigma eta k)``."""
    t = eta * k
    return rademacher(eigenvalues, n, 1.0 / math.sqrt(t)) > 1.0 / (2.0 * math.e * sigma * t)


class _ComplexityCurve:
    """Vectorized R(1/sqrt(t)) over many t via sorted prefix sums."""

    def __init__(self, lam, n):
        self.n = n
        self.scaled = np.sort(lam / n)
        self.prefix = np.concatenate([[0.0], np.cumsum(self.scaled)])

    def __call__(self, t):
        eps2 = 1.0 / np.asarray(t, dtype=np.float64)
        below = np.searchsorted(self.scaled, eps2, side="left")
        total = self.prefix[below] + eps2 * (self.n - below)
        return np.sqrt(total / self.n)


@dataclass
class StoppingDiagnostics:
    eigenvalues: np.ndarray
    noise_level: float
    step_size: float
    k_cap: int
    k_star: int | None  # None when no k <= k_cap satisfies the rule
    complexity_curve: list = field(default_factory=list)  # (k, R, threshold)

    @property
    def found(self):
        return self.k_star is not None


def stopping_time(eigenvalues, n, sigma, eta, k_cap=DEFAULT_K_CAP, record_curve=False, curve_points=200):
    if sigma <= 0 or eta <= 0:
        raise ValueError("sigma and eta must be positive")
    if k_cap < 1:
        raise ValueError("k_cap must be >= 1")
    lam = clean_eigenvalues(eigenvalues)
    if lam.shape[0] != n:
        raise ValueError(f"expected {n} eigenvalues, got {lam.shape[0]}")
    curve = _ComplexityCurve(lam, n)
    k_first = None
    start = 1
    while start <= k_cap:
        ks = np.arange(start, min(start + _CHUNK, k_cap + 1), dtype=np.float64)
        t = eta * ks
        hits = np.flatnonzero(curve(t) > 1.0 / (2.0 * math.e * sigma * t))
        if hits.size:
            k_first = int(ks[hits[0]])
            break
        start += _CHUNK
    k_star = None if k_first is None else k_first - 1
    diag = StoppingDiagnostics(np.sort(lam)[::-1], float(sigma), float(eta), int(k_cap), k_star)
    if record_curve:
        last = k_cap if k_first is None else max(k_first + 1, 2)
        ks = np.unique(np.geomspace(1, last, curve_points).round().astype(np.int64))
        t = eta * ks.astype(np.float64)
        values = curve(t)
        thresholds = 1.0 / (2.0 * math.e * sigma * t)
        diag.complexity_curve = [(int(k), float(r), float(h)) for k, r, h in zip(ks, values, thresholds)]
    return diag


def run_early_stopped_kernel_gd(
    points, labels, sigma, eta=None, k_cap=DEFAULT_K_CAP, unit=True, on_not_found="raise", gram=None, scale=1.0
):
    """Kernel GD from zero, run for exactly k* iterations.

    ``eta`` is capped at ``1 / lambda_1^2``; ``None`` uses the cap itself.
    ``on_not_found="cap"`` runs k_cap iterations instead of raising.
    """
    if gram is None:
        gram = scale * gram_matrix(points, unit=unit)
    n = gram.shape[0]
    lam = sym_eigen(gram).eigenvalues
    cap = step_size_cap(lam[0]) if lam[0] > 0 else np.inf
    eta = cap if eta is None else min(eta, cap)
    diag = stopping_time(lam, n, sigma, eta, k_cap)
    if diag.k_star is None:
        if on_not_found != "cap":
            raise StoppingTimeNotFound(diag)
        iters = k_cap
    else:
        iters = diag.k_star
    traj = kernel_gd_run(points, labels, eta, iters, record_every=max(iters, 1), unit=unit, gram=gram)
    return gd_model(points, traj.final, gram, unit=unit, scale=scale), diag
