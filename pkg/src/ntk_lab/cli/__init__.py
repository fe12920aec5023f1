from .config import ConfigError, ExperimentConfig, parse_config
from .experiments import cross_validate_mu, eigendecay_report, fit_rate_slope, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "cross_validate_mu", "eigendecay_report",
           "fit_rate_slope", "run_experiment"]
