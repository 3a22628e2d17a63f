"""Benchmark objectives for derivative-free global optimization.

All five benchmarks are minimization problems with value 0 at the origin
and nonnegative values everywhere. Each function accepts a single point of
shape ``(d,)`` or a stack of points of shape ``(..., d)`` and reduces over
the trailing axis, so ensembles can be evaluated in one vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("objective input needs at least one coordinate")
    return x


def ackley(x):
    """Ackley function: exponential well at the origin under cosine ripples."""
    x = _as_points(x)
    rms = np.sqrt(np.mean(x * x, axis=-1))
    cos_mean = np.mean(np.cos(2.0 * np.pi * x), axis=-1)
    return -20.0 * np.exp(-0.2 * rms) - np.exp(cos_mean) + 20.0 + np.e


def rastrigin(x):
    """Rastrigin function: quadratic bowl with a cosine lattice of minima."""
    x = _as_points(x)
    return np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x) + 10.0, axis=-1)


def griewank(x):
    """Griewank function: shallow quadratic with a product-of-cosines ripple."""
    x = _as_points(x)
    idx = np.arange(1, x.shape[-1] + 1, dtype=float)
    quad = np.sum(x * x, axis=-1) / 4000.0
    ripple = np.prod(np.cos(x / np.sqrt(idx)), axis=-1)
    return 1.0 + quad - ripple


def zakharov(x):
    """Zakharov function: sphere plus even powers of a weighted coordinate sum."""
    x = _as_points(x)
    idx = np.arange(1, x.shape[-1] + 1, dtype=float)
    lin = np.sum(0.5 * idx * x, axis=-1)
    return np.sum(x * x, axis=-1) + lin**2 + lin**4


def wavy(x):
    # Canonical form with frequency k = 10; the mean of cos(kx)*exp(-x^2/2)
    # is damped away from the origin, giving many shallow local minima.
    x = _as_points(x)
    return 1.0 - np.mean(np.cos(10.0 * x) * np.exp(-0.5 * x * x), axis=-1)


@dataclass(frozen=True)
class ObjectiveFunction:
    """Deterministic map R^d -> R with optional known-minimizer metadata.

    Objectives hold no mutable state, so one instance may be evaluated from
    any number of workers concurrently.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    dimension: int
    minimizer: Optional[np.ndarray] = None
    minimum: Optional[float] = None
    search_box: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")

    def __call__(self, x):
        """Evaluate at one point ``(d,)`` or a stack of points ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dimension:
            raise ValueError(
                f"expected points of dimension {self.dimension}, got shape {x.shape}"
            )
        return self.fn(x)


_BENCHMARKS: dict = {
    "ackley": (ackley, (-32.768, 32.768)),
    "rastrigin": (rastrigin, (-5.12, 5.12)),
    "griewank": (griewank, (-600.0, 600.0)),
    "zakharov": (zakharov, (-5.0, 10.0)),
    "wavy": (wavy, (-np.pi, np.pi)),
}


def benchmark_names() -> list:
    return sorted(_BENCHMARKS)


def make_objective(name: str, dimension: int) -> ObjectiveFunction:
    """Look up a benchmark by name; every benchmark has its minimum 0 at 0."""
    try:
        fn, box = _BENCHMARKS[name]
    except KeyError:
        raise ValueError(
            f"unknown objective {name!r}; choose from {benchmark_names()}"
        ) from None
    return ObjectiveFunction(
        name=name,
        fn=fn,
        dimension=dimension,
        minimizer=np.zeros(dimension),
        minimum=0.0,
        search_box=box,
    )
