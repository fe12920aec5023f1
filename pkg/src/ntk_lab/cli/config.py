"""Line-oriented experiment configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, lists are
comma separated. A list entry may also be a range ``start:stop:step``
(inclusive of ``stop``), which is how the regularization grids are written.
All problems in a file are collected and raised together.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..data import get_target
from ..errors import NtkLabError

TASKS = ("simulate", "rate-study", "mnist", "eigendecay", "stopping-curve")
ARMS = ("ntk", "ntk_es", "ntk_l2", "onn", "onn_l2")
OPTIMIZERS = ("rmsprop", "gd")
DOMAINS = ("sphere", "cube")


class ConfigIssue(NtkLabError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class UnknownKey(ConfigIssue):
    pass


class BadValue(ConfigIssue):
    pass


class MissingRequired(ConfigIssue):
    pass


class ConfigError(NtkLabError):
    """Every problem found in a config file."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(e) for e in self.issues))


def _range_grid(text):
    start, stop, step = (float(v) for v in text.split(":"))
    if step <= 0 or stop < start:
        raise ValueError(f"bad range {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def _floats(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            out.extend(_range_grid(part))
        else:
            out.append(float(part))
    if not out:
        raise ValueError("empty list")
    return out


def _ints(text):
    return [int(p.strip()) for p in text.split(",")]


def _words(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _eta(text):
    return None if text.lower() == "auto" else float(text)


@dataclass
class ExperimentConfig:
    task: str
    arms: list = field(default_factory=lambda: list(ARMS))
    n: int = 100
    d: int = 2
    domain: str = "cube"
    target: str = "quadratic_norm"
    sigma: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    replications: int = 100
    seed: int = 0
    test_size: int = 1000
    val_size: int = 100
    # network arms
    width: int = 1024
    tau: float = 1.0
    onn_eta: float | None = None  # None: 1 / (lambda_max(H(0)) + mu)
    onn_iters: int = 5000
    optimizer: str = "rmsprop"
    rmsprop_lr: float = 0.001
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-7
    l2_decay_tol: float = 1e-4
    onn_mu_grid: list = field(default_factory=lambda: _range_grid("0.1:10:0.1"))
    # kernel arms
    ntk_mu_grid: list = field(default_factory=lambda: _range_grid("0.01:1:0.01"))
    kernel_eta: float | None = 0.01  # capped at 1 / lambda_1^2
    k_cap: int = 10_000_000
    # rate study
    ns: list = field(default_factory=lambda: [50, 100, 200, 400, 800])
    cv_n: int = 100
    # mnist
    mnist_dir: str | None = None
    mnist_n: int = 2000
    mnist_test_n: int = 0  # 0 keeps the whole test split
    gram_divide_by_d: bool = False
    normalize_inputs: bool = False
    threads: int = 1
    out: str | None = None


# per-task defaults that differ from the dataclass defaults
TASK_DEFAULTS = {
    "simulate": {},
    "rate-study": {"domain": "sphere", "sigma": [0.3], "replications": 20},
    "eigendecay": {"domain": "sphere", "n": 2000, "d": 3},
    "stopping-curve": {"domain": "sphere"},
    "mnist": {
        "arms": ["ntk_l2", "onn", "onn_l2"],
        "sigma": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
        "replications": 5,
        "ntk_mu_grid": _range_grid("1:100:1"),
        "onn_mu_grid": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0],
        "gram_divide_by_d": True,
    },
}

_PARSERS = {
    "task": str,
    "arms": _words,
    "n": int,
    "d": int,
    "domain": str,
    "target": str,
    "sigma": _floats,
    "replications": int,
    "seed": int,
    "test_size": int,
    "val_size": int,
    "width": int,
    "tau": float,
    "onn_eta": _eta,
    "onn_iters": int,
    "optimizer": str,
    "rmsprop_lr": float,
    "rmsprop_rho": float,
    "rmsprop_eps": float,
    "l2_decay_tol": float,
    "onn_mu_grid": _floats,
    "ntk_mu_grid": _floats,
    "kernel_eta": _eta,
    "k_cap": int,
    "ns": _ints,
    "cv_n": int,
    "mnist_dir": str,
    "mnist_n": int,
    "mnist_test_n": int,
    "gram_divide_by_d": _bool,
    "normalize_inputs": _bool,
    "threads": int,
    "out": str,
}
assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def _check_value(key, value):
    """Semantic checks; returns an error message or None."""
    positive = {"n", "d", "replications", "test_size", "val_size", "width", "onn_iters", "k_cap", "cv_n",
                "mnist_n", "threads"}
    if key in positive and value < 1:
        return f"{key} must be >= 1, got {value}"
    if key == "task" and value not in TASKS:
        return f"unknown task {value!r}; expected one of {', '.join(TASKS)}"
    if key == "arms":
        bad = [a for a in value if a not in ARMS]
        if bad or not value:
            return f"unknown arms {bad}; expected a subset of {', '.join(ARMS)}"
    if key == "domain" and value not in DOMAINS:
        return f"domain must be one of {', '.join(DOMAINS)}"
    if key == "optimizer" and value not in OPTIMIZERS:
        return f"optimizer must be one of {', '.join(OPTIMIZERS)}"
    if key == "sigma" and any(s < 0 for s in value):
        return "every sigma must be >= 0"
    if key in ("ntk_mu_grid", "onn_mu_grid") and any(m < 0 for m in value):
        return "grid values must be >= 0"
    if key == "ns" and any(v < 2 for v in value):
        return "every n in ns must be >= 2"
    if key in ("tau", "rmsprop_lr", "rmsprop_eps") and value <= 0:
        return f"{key} must be positive"
    if key in ("onn_eta", "kernel_eta") and value is not None and value <= 0:
        return f"{key} must be positive or auto"
    if key in ("rmsprop_rho", "l2_decay_tol") and not 0 < value < 1:
        return f"{key} must lie in (0, 1)"
    if key == "mnist_test_n" and value < 0:
        return "mnist_test_n must be >= 0"
    if key == "target":
        try:
            get_target(value)
        except ValueError as exc:
            return str(exc)
    return None


def parse_config(text, task=None, overrides=None):
    """Parse config text into an :class:`ExperimentConfig`.

    ``task`` (from the command line) fills in or must agree with the file's
    ``task`` key. ``overrides`` are already-typed values applied last.
    Raises :class:`ConfigError` carrying every issue found.
    """
    issues = []
    values = {}
    lines = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            issues.append(BadValue(f"expected 'key = value', got {line!r}", lineno))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            issues.append(UnknownKey(f"unknown key {key!r}", lineno))
            continue
        seen.add(key)
        if key in values:
            issues.append(BadValue(f"duplicate key {key!r} (first set on line {lines[key]})", lineno))
            continue
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            issues.append(BadValue(f"{key}: cannot parse {value!r} ({exc})", lineno))
            continue
        problem = _check_value(key, parsed)
        if problem:
            issues.append(BadValue(problem, lineno))
            continue
        values[key] = parsed
        lines[key] = lineno

    if task is not None:
        if task not in TASKS:
            issues.append(BadValue(f"unknown task {task!r}; expected one of {', '.join(TASKS)}"))
        elif "task" in values and values["task"] != task:
            issues.append(BadValue(f"config says task = {values['task']} but {task} was requested", lines["task"]))
        else:
            values["task"] = task
    if "task" not in values and "task" not in seen:
        issues.append(MissingRequired("missing required key 'task'"))
    if values.get("task") == "mnist" and "mnist_dir" not in values:
        issues.append(MissingRequired("task mnist requires 'mnist_dir'"))
    if issues:
        raise ConfigError(issues)

    merged = dict(TASK_DEFAULTS[values["task"]])
    merged.update(values)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        problem = _check_value(key, value)
        if problem:
            raise ConfigError([BadValue(problem)])
        merged[key] = value
    return ExperimentConfig(**merged)


def load_config(path, task=None, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), task=task, overrides=overrides)


def with_changes(config, **changes):
    return replace(config, **changes)
