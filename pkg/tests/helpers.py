"""Cached expensive objects shared across test modules."""
from functools import lru_cache

from sclc_margin.harness import build, run_example, shipped_config
from sclc_margin.sclc import Perturbation, simulate_closed_loop


@lru_cache(maxsize=None)
def built(example: int):
    return build(shipped_config(example))


@lru_cache(maxsize=None)
def example_run(example: int):
    return run_example(example)


@lru_cache(maxsize=None)
def nominal_run(example: int):
    b = built(example)
    cfg = b.config
    return simulate_closed_loop(b.plant, b.ctrl, Perturbation.none(), cfg.x0, cfg.T, cfg.dt)


def rel(a, b):
    return abs(a - b) / abs(b)
