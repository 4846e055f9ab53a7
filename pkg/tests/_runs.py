"""Experiment runs shared by several test modules (computed once per session)."""
from functools import lru_cache

from mslab.experiments import (
    ExperimentConfig,
    run_equivalence,
    run_limit_theorem,
    run_rates,
    run_recovery_rates,
)
from mslab.metrics import INF

DYADIC = tuple(64 * 2**k for k in range(8))


@lru_cache(maxsize=None)
def limit_theorem(manifold):
    return run_limit_theorem(ExperimentConfig("limit-theorem", manifold=manifold, n_list=(256, 1024, 4096),
                                              gamma=2.0, trials=200, seed=1))


@lru_cache(maxsize=None)
def random_rates(gamma):
    return run_rates(ExperimentConfig("rates", manifold="S2", n_list=DYADIC, gamma=gamma, alpha=1.0,
                                      trials=50, seed=1, log_correction=gamma == INF))


@lru_cache(maxsize=None)
def grid_rates(gamma):
    return run_rates(ExperimentConfig("rates", manifold="T2", family="grid", n_list=(16, 64, 256, 1024, 4096),
                                      gamma=gamma, alpha=1.0, trials=1, seed=1))


@lru_cache(maxsize=None)
def equivalence():
    return run_equivalence(ExperimentConfig("equivalence", manifold="S2", n_list=(64, 256, 1024), seed=1))


@lru_cache(maxsize=None)
def recovery(q):
    return run_recovery_rates(ExperimentConfig("recovery", manifold="S2", n_list=(4000, 8000, 16000, 32000, 64000),
                                               families=("random", "fibonacci"), q=q, s=2.0, p=2.0, seed=1))
