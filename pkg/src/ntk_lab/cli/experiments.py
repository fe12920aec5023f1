"""Estimator arms, cross-validation and the task runners behind ``ntk-lab``.

Seeds. Every random draw is keyed by :func:`derive_seed`, a blake2b hash of
the master seed and a tuple of labels. The training data of replication r at
noise index i comes from ``derive_seed(master, "data", i, r)`` and is shared
by all arms, so arms are compared on identical samples. The per-cell seed
reported in the CSV (and used for network initialization) is
``derive_seed(master, arm, i, r)``.
"""

import csv
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import data as data_mod
from ..earlystop import run_early_stopped_kernel_gd, stopping_time
from ..errors import DegenerateFit, NtkLabError
from ..linalg import sym_eigen
from ..network import TrainConfig, init_network, network_gram, predict_batch, train
from ..ntk import fit_krr, gram_matrix, step_size_cap

log = logging.getLogger(__name__)

SIMULATE_COLUMNS = (
    "arm", "sigma", "replication", "seed", "chosen_mu", "k_star",
    "train_loss_final", "l2_error", "wall_time_ms", "error",
)
MNIST_COLUMNS = SIMULATE_COLUMNS[:7] + ("misclassification_rate",) + SIMULATE_COLUMNS[8:]
RATE_COLUMNS = ("n", "replication", "seed", "mu", "l2_error", "wall_time_ms", "error")
EIGEN_COLUMNS = ("rank", "eigenvalue")
CURVE_COLUMNS = ("sigma", "k", "rademacher", "threshold", "k_star")
EIGEN_SLOPE_RANKS = (10, 200)


class OutputUnwritable(NtkLabError):
    pass


def derive_seed(master, *parts):
    """Stable 63-bit seed: blake2b over ``master/part1/part2/...``."""
    text = "/".join(str(p) for p in (master,) + parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass
class Report:
    columns: tuple
    rows: list = field(default_factory=list)  # dicts keyed by column
    footer: list = field(default_factory=list)  # comment lines, without '#'


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class _CsvSink:
    """Single writer; opened before any compute so bad paths fail early."""

    def __init__(self, path, columns):
        self.fh = None
        if path is None:
            return
        try:
            self.fh = open(path, "w", newline="")
        except OSError as exc:
            raise OutputUnwritable(f"cannot write {path}: {exc}") from exc
        self.writer = csv.writer(self.fh)
        self.writer.writerow(columns)
        self.columns = columns

    def row(self, row):
        if self.fh:
            self.writer.writerow([_fmt(row.get(c)) for c in self.columns])
            self.fh.flush()

    def close(self, footer=()):
        if self.fh:
            for line in footer:
                self.fh.write(f"# {line}\n")
            self.fh.close()


def write_report(report, path):
    sink = _CsvSink(path, report.columns)
    for row in report.rows:
        sink.row(row)
    sink.close(report.footer)


# ---------------------------------------------------------------- arms


@dataclass
class ArmFit:
    predict: object  # (N, d) array -> N predictions
    chosen_mu: float | None = None
    k_star: int | None = None
    train_loss_final: float | None = None


def _on_sphere(inputs):
    return bool(np.allclose(np.linalg.norm(inputs, axis=1), 1.0, atol=1e-9))


def _kernel_scale(train_set, config):
    return 1.0 / train_set.dim if config is not None and config.gram_divide_by_d else 1.0


def _kernel_view(train_set):
    """Inputs for the kernel arms plus a map applied to query points.

    Sphere data passes through. External data (MNIST pixels) is projected
    onto the sphere, since the closed-form kernel needs unit vectors; cube
    data keeps its norms and uses the homogeneous kernel instead.
    """
    x = train_set.inputs
    if _on_sphere(x):
        return x, True, lambda p: p
    if train_set.domain_tag == "external":
        log.info("kernel arms: normalizing external inputs to unit norm")
        return _unit_rows(x), True, _unit_rows
    return x, False, lambda p: p


def _unit_rows(points):
    points = np.asarray(points, dtype=np.float64)
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero input vector")
    return points / norms


def _kernel_gram(train_set, config):
    x, unit, _ = _kernel_view(train_set)
    return _kernel_scale(train_set, config) * gram_matrix(x, unit=unit)


def _kernel_fit(train_set, mu, config, gram=None):
    x, unit, view = _kernel_view(train_set)
    model = fit_krr(x, train_set.noisy_labels, mu, unit=unit, gram=gram, scale=_kernel_scale(train_set, config))
    resid = model.train_predictions() - train_set.noisy_labels
    return ArmFit(lambda p: model.predict_many(view(p)), mu if mu > 0 else None, None, 0.5 * float(resid @ resid))


def _early_stopped_fit(train_set, config):
    if train_set.noise_sigma <= 0:
        raise ValueError("the early-stopping arm needs sigma > 0")
    x, unit, view = _kernel_view(train_set)
    model, diag = run_early_stopped_kernel_gd(
        x, train_set.noisy_labels, train_set.noise_sigma,
        eta=config.kernel_eta, k_cap=config.k_cap, unit=unit, on_not_found="cap",
        scale=_kernel_scale(train_set, config),
    )
    if not diag.found:
        log.warning("no stopping time up to k_cap=%d; ran k_cap iterations", config.k_cap)
    resid = model.train_predictions() - train_set.noisy_labels
    k = diag.k_star if diag.found else config.k_cap
    return ArmFit(lambda p: model.predict_many(view(p)), None, k, 0.5 * float(resid @ resid))


def network_step_size(state, inputs, mu=0.0):
    """``1 / (lambda_max(H(0)) + mu)``, the step used when ``onn_eta = auto``."""
    top = sym_eigen(network_gram(state, inputs, at_init=True), method="lapack").eigenvalues[0]
    return 1.0 / (top + mu)


def decay_iterations(eta2, mu, tol, limit):
    """Smallest k with ``(1 - eta2 mu)^k < tol``, capped at ``limit``."""
    rate = eta2 * mu
    if rate <= 0:
        return limit
    return min(limit, int(math.floor(math.log(tol) / math.log1p(-rate))) + 1)


def _network_fit(train_set, mu, config, seed):
    state = init_network(config.width, train_set.dim, config.tau, seed)
    x, y = train_set.inputs, train_set.noisy_labels
    if config.optimizer == "rmsprop":
        cfg = TrainConfig(mu=mu, max_iter=config.onn_iters, record_every=config.onn_iters,
                          learning_rate=config.rmsprop_lr, rho=config.rmsprop_rho, epsilon=config.rmsprop_eps)
        rule = "rmsprop"
    else:
        eta = config.onn_eta if config.onn_eta is not None else network_step_size(state, x, mu)
        if mu > 0:
            iters = decay_iterations(eta, mu, config.l2_decay_tol, config.onn_iters)
            cfg = TrainConfig(eta1=eta, eta2=eta, mu=mu, max_iter=iters, record_every=iters)
            rule = "l2_gd"
        else:
            cfg = TrainConfig(eta1=eta, max_iter=config.onn_iters, record_every=config.onn_iters)
            rule = "plain_gd"
    final, train_log = train(state, x, y, cfg, rule=rule)
    return ArmFit(lambda p: predict_batch(final, p), mu if mu > 0 else None, None, train_log.final_loss)


@dataclass
class CvPoint:
    mu: float
    val_mse: float | None
    error: str | None = None


def _cv_search(train_set, val_set, grid, arm, config, seed):
    if len(grid) == 0:
        raise ValueError("the mu grid is empty")
    if arm not in ("ntk_l2", "onn_l2"):
        raise ValueError(f"cross-validation is defined for the l2 arms, not {arm!r}")
    gram = _kernel_gram(train_set, config) if arm == "ntk_l2" else None
    curve, fits = [], {}
    for mu in grid:
        try:
            fit = _kernel_fit(train_set, mu, config, gram) if arm == "ntk_l2" else _network_fit(
                train_set, mu, config, seed)
            diff = fit.predict(val_set.inputs) - val_set.noisy_labels
            mse = float(np.mean(diff * diff))
            if not np.isfinite(mse):
                raise FloatingPointError("non-finite validation error")
        except (NtkLabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            curve.append(CvPoint(float(mu), None, f"{type(exc).__name__}: {exc}"))
            continue
        curve.append(CvPoint(float(mu), mse))
        fits[float(mu)] = fit
    scored = [p for p in curve if p.val_mse is not None]
    if not scored:
        raise NtkLabError(f"every grid point failed; first error: {curve[0].error}")
    best = min(p.val_mse for p in scored)
    best_mu = max(p.mu for p in scored if p.val_mse == best)  # ties go to the larger mu
    return best_mu, curve, fits[best_mu]


def cross_validate_mu(train_set, val_set, grid, arm, config=None, seed=0):
    """Pick mu from ``grid`` by validation MSE against ``val_set``'s labels.

    Returns ``(best_mu, curve)`` where ``curve`` lists a :class:`CvPoint`
    per grid value; failed fits carry their error and are skipped.
    """
    if config is None:
        from .config import ExperimentConfig

        config = ExperimentConfig(task="simulate")
    best_mu, curve, _ = _cv_search(train_set, val_set, grid, arm, config, seed)
    return best_mu, curve


def fit_arm(arm, train_set, config, seed, val_set=None):
    if arm == "ntk":
        return _kernel_fit(train_set, 0.0, config)
    if arm == "ntk_es":
        return _early_stopped_fit(train_set, config)
    if arm == "onn":
        return _network_fit(train_set, 0.0, config, seed)
    if arm in ("ntk_l2", "onn_l2"):
        if val_set is None:
            raise ValueError(f"arm {arm} needs a validation set")
        grid = config.ntk_mu_grid if arm == "ntk_l2" else config.onn_mu_grid
        best_mu, _, fit = _cv_search(train_set, val_set, grid, arm, config, seed)
        fit.chosen_mu = best_mu
        return fit
    raise ValueError(f"unknown arm {arm!r}")


# ---------------------------------------------------------------- simulate


def simulation_data(config, sigma_index, replication):
    """Training, noiseless validation and test sets for one replication."""
    sigma = config.sigma[sigma_index]
    master = config.seed
    data_seed = derive_seed(master, "data", sigma_index, replication)
    target = data_mod.get_target(config.target)
    train_pts = data_mod.sample_domain(config.domain, config.n, config.d, data_seed)
    train_set = data_mod.make_dataset(train_pts, target, sigma, data_seed, config.domain)
    val_seed = derive_seed(master, "val", sigma_index, replication)
    val_pts = data_mod.sample_domain(config.domain, config.val_size, config.d, val_seed)
    val_set = data_mod.make_dataset(val_pts, target, 0.0, val_seed, config.domain)
    test_seed = derive_seed(master, "test", sigma_index, replication)
    test_pts = data_mod.sample_domain(config.domain, config.test_size, config.d, test_seed)
    return train_set, val_set, test_pts


def _error_text(exc):
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _simulate_cell(config, cell):
    sigma_index, replication, arm = cell
    seed = derive_seed(config.seed, arm, sigma_index, replication)
    row = {"arm": arm, "sigma": float(config.sigma[sigma_index]), "replication": replication, "seed": seed}
    start = time.perf_counter()
    try:
        train_set, val_set, test_pts = simulation_data(config, sigma_index, replication)
        fit = fit_arm(arm, train_set, config, seed, val_set)
        row.update(chosen_mu=fit.chosen_mu, k_star=fit.k_star, train_loss_final=fit.train_loss_final,
                   l2_error=data_mod.l2_error(fit.predict, config.target, test_pts))
    except (NtkLabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        row["error"] = _error_text(exc)
    row["wall_time_ms"] = round(1000.0 * (time.perf_counter() - start), 3)
    return row


def _run_cells(config, cells, work, sink):
    rows = []
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            for row in pool.map(lambda c: work(config, c), cells):
                sink.row(row)
                rows.append(row)
    else:
        for c in cells:
            row = work(config, c)
            sink.row(row)
            rows.append(row)
    return rows


def _sweep_cells(config):
    return [(i, r, arm) for i in range(len(config.sigma)) for r in range(config.replications) for arm in config.arms]


L2_NOTE = "l2_error is the root mean squared error against f* over noiseless test points"


def run_simulation(config):
    sink = _CsvSink(config.out, SIMULATE_COLUMNS)
    rows = _run_cells(config, _sweep_cells(config), _simulate_cell, sink)
    footer = [L2_NOTE]
    sink.close(footer)
    return Report(SIMULATE_COLUMNS, rows, footer)


# ---------------------------------------------------------------- mnist


def _mnist_data(config, sigma_index, replication, full_train, test_set):
    sigma = config.sigma[sigma_index]
    seed = derive_seed(config.seed, "data", sigma_index, replication)
    rng = data_mod.rng_for(seed, data_mod.STREAM_POINTS)
    n = min(config.mnist_n, len(full_train))
    sample = full_train.subset(rng.permutation(len(full_train))[:n])
    noisy = data_mod.with_noise(sample, sigma, seed)
    cut = int(round(0.8 * n))
    order = rng.permutation(n)
    return noisy.subset(order[:cut]), noisy.subset(order[cut:]), test_set


def run_mnist(config):
    sink = _CsvSink(config.out, MNIST_COLUMNS)
    full_train = data_mod.load_mnist_5v8(config.mnist_dir, "train", normalize=config.normalize_inputs)
    test_set = data_mod.load_mnist_5v8(config.mnist_dir, "test", normalize=config.normalize_inputs)
    if config.mnist_test_n and config.mnist_test_n < len(test_set):
        rng = data_mod.rng_for(derive_seed(config.seed, "mnist-test"), data_mod.STREAM_POINTS)
        test_set = test_set.subset(np.sort(rng.permutation(len(test_set))[: config.mnist_test_n]))

    def work(cfg, cell):
        sigma_index, replication, arm = cell
        seed = derive_seed(cfg.seed, arm, sigma_index, replication)
        row = {"arm": arm, "sigma": float(cfg.sigma[sigma_index]), "replication": replication, "seed": seed}
        start = time.perf_counter()
        try:
            fit_set, val_set, test = _mnist_data(cfg, sigma_index, replication, full_train, test_set)
            fit = fit_arm(arm, fit_set, cfg, seed, val_set)
            row.update(chosen_mu=fit.chosen_mu, k_star=fit.k_star, train_loss_final=fit.train_loss_final,
                       misclassification_rate=data_mod.misclassification_rate(fit.predict, test))
        except (NtkLabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row["error"] = _error_text(exc)
        row["wall_time_ms"] = round(1000.0 * (time.perf_counter() - start), 3)
        return row

    rows = _run_cells(config, _sweep_cells(config), work, sink)
    sink.close()
    return Report(MNIST_COLUMNS, rows)


# ---------------------------------------------------------------- rate study


def fit_rate_slope(ns, errors):
    """OLS of ``log(error^2)`` on ``log(n)``: returns (slope, intercept, r_squared)."""
    ns = np.asarray(ns, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if ns.shape != errors.shape:
        raise ValueError("ns and errors must have the same length")
    if ns.size < 2 or np.unique(ns).size < 2:
        raise DegenerateFit("need at least two distinct sample sizes")
    if np.any(ns < 2) or np.any(errors <= 0):
        raise ValueError("need every n >= 2 and every error > 0")
    x = np.log(ns)
    y = np.log(errors**2)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    spread = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(resid @ resid) / spread if spread > 0 else 1.0
    return float(slope), float(intercept), r2


def ridge_exponent(d):
    """mu grows like n^((d-1)/(2d-1)) for the minimax ridge."""
    return (d - 1) / (2 * d - 1)


def calibrate_ridge_constant(config):
    """Cross-validate mu once at ``n = cv_n`` and return ``c = mu / n^exponent``."""
    seed = derive_seed(config.seed, "rate-cv")
    target = data_mod.get_target(config.target)
    pts = data_mod.sample_domain(config.domain, config.cv_n, config.d, seed)
    train_set = data_mod.make_dataset(pts, target, config.sigma[0], seed, config.domain)
    val_seed = derive_seed(config.seed, "rate-val")
    val_pts = data_mod.sample_domain(config.domain, config.val_size, config.d, val_seed)
    val_set = data_mod.make_dataset(val_pts, target, 0.0, val_seed, config.domain)
    mu, _ = cross_validate_mu(train_set, val_set, config.ntk_mu_grid, "ntk_l2", config)
    return mu / config.cv_n ** ridge_exponent(config.d), mu


def run_rate_study(config):
    sink = _CsvSink(config.out, RATE_COLUMNS)
    c, mu_cv = calibrate_ridge_constant(config)
    sigma = config.sigma[0]
    target = data_mod.get_target(config.target)

    def work(cfg, cell):
        n, replication = cell
        seed = derive_seed(cfg.seed, "rate", n, replication)
        mu = c * n ** ridge_exponent(cfg.d)
        row = {"n": n, "replication": replication, "seed": seed, "mu": mu}
        start = time.perf_counter()
        try:
            pts = data_mod.sample_domain(cfg.domain, n, cfg.d, seed)
            train_set = data_mod.make_dataset(pts, target, sigma, seed, cfg.domain)
            test_pts = data_mod.sample_domain(cfg.domain, cfg.test_size, cfg.d, derive_seed(cfg.seed, "rate-test", n, replication))
            fit = _kernel_fit(train_set, mu, cfg)
            row["l2_error"] = data_mod.l2_error(fit.predict, target, test_pts)
        except (NtkLabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row["error"] = _error_text(exc)
        row["wall_time_ms"] = round(1000.0 * (time.perf_counter() - start), 3)
        return row

    cells = [(n, r) for n in config.ns for r in range(config.replications)]
    rows = _run_cells(config, cells, work, sink)
    footer = [f"cv_n={config.cv_n} cv_mu={mu_cv!r} c={c!r} exponent={ridge_exponent(config.d)!r}"]
    ns, rms = [], []
    for n in config.ns:
        errs = [r["l2_error"] for r in rows if r["n"] == n and r.get("l2_error") is not None]
        if errs:
            ns.append(n)
            rms.append(math.sqrt(float(np.mean(np.square(errs)))))
    try:
        slope, intercept, r2 = fit_rate_slope(ns, rms)
        footer.append(f"slope={slope!r} intercept={intercept!r} r_squared={r2!r}")
    except (DegenerateFit, ValueError) as exc:
        footer.append(f"slope unavailable: {exc}")
    sink.close(footer)
    return Report(RATE_COLUMNS, rows, footer)


# ---------------------------------------------------------------- spectra


def log_log_slope(eigenvalues, lo, hi):
    """Slope of log(eigenvalue) on log(rank) over ranks lo..hi (1-based, inclusive)."""
    hi = min(hi, len(eigenvalues))
    ranks = np.arange(lo, hi + 1)
    values = np.asarray(eigenvalues)[lo - 1 : hi]
    if ranks.size < 2 or np.any(values <= 0):
        raise DegenerateFit("need two or more positive eigenvalues in the rank window")
    return float(np.polyfit(np.log(ranks), np.log(values), 1)[0])


def eigendecay_report(n, d, seed, method="auto"):
    """Eigenvalues of ``H / n`` for n uniform sphere points, descending, with ranks."""
    if n < 100:
        raise ValueError("eigendecay needs n >= 100")
    pts = data_mod.sample_sphere(n, d, seed)
    values = sym_eigen(gram_matrix(pts) / n, method=method).eigenvalues
    rows = [{"rank": i + 1, "eigenvalue": float(v)} for i, v in enumerate(values)]
    lo, hi = EIGEN_SLOPE_RANKS
    slope = log_log_slope(np.maximum(values, 0.0), lo, hi)
    footer = [f"n={n} d={d} seed={seed} slope_ranks_{lo}_{min(hi, n)}={slope!r}"]
    return Report(EIGEN_COLUMNS, rows, footer)


def stopping_curves(config):
    """R(1/sqrt(eta k)) against the threshold, one block per sigma."""
    seed = derive_seed(config.seed, "curve")
    pts = data_mod.sample_domain(config.domain, config.n, config.d, seed)
    gram = gram_matrix(pts, unit=config.domain == "sphere")
    lam = sym_eigen(gram).eigenvalues
    eta = step_size_cap(lam[0]) if config.kernel_eta is None else min(config.kernel_eta, step_size_cap(lam[0]))
    rows, footer = [], [f"n={config.n} d={config.d} eta={eta!r}"]
    for sigma in config.sigma:
        if sigma <= 0:
            footer.append(f"sigma={sigma!r} skipped: the rule needs sigma > 0")
            continue
        diag = stopping_time(lam, config.n, sigma, eta, config.k_cap, record_curve=True)
        for k, r, h in diag.complexity_curve:
            rows.append({"sigma": float(sigma), "k": k, "rademacher": r, "threshold": h, "k_star": diag.k_star})
        footer.append(f"sigma={sigma!r} k_star={diag.k_star}")
    return Report(CURVE_COLUMNS, rows, footer)


def run_experiment(config):
    """Run ``config.task``; writes CSV to ``config.out`` when set and returns the :class:`Report`."""
    if config.task == "simulate":
        return run_simulation(config)
    if config.task == "mnist":
        return run_mnist(config)
    if config.task == "rate-study":
        return run_rate_study(config)
    if config.task in ("eigendecay", "stopping-curve"):
        if config.out:
            # fail on a bad destination before the eigensolve
            _CsvSink(config.out, ()).close()
        if config.task == "eigendecay":
            report = eigendecay_report(config.n, config.d, config.seed)
        else:
            report = stopping_curves(config)
        if config.out:
            write_report(report, config.out)
        return report
    raise ValueError(f"unknown task {config.task!r}")
