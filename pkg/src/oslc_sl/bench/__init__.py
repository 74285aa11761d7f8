"""Benchmark problems, experiment configuration, runner and CLI."""

from .config import ExperimentConfig
from .problems import builtin_problem, test1_exact_cdf, test1_exact_f, test1_exact_u
from .runner import run_experiment
