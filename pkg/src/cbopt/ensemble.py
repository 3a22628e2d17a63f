"""Particle ensemble state, counter-based random streams, empirical moments.

Randomness is organized so that every draw is a pure function of
``(master_seed, stream, step)``: a Philox counter block is addressed by the
stream and step indices and laid out row-major over particles and
coordinates. Draws for distinct (particle, coordinate, step) triples are
therefore independent by construction, and a fixed master seed reproduces
the identical sequence no matter how many workers evaluate it or in which
order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Union

import numpy as np

# Stream ids: each (stream, step) pair addresses a disjoint counter block.
STREAM_INIT = 0
STREAM_DIFFUSION = 1
STREAM_PERMUTATION = 2

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngPlan:
    """Reproducible random streams derived from one 64-bit master seed."""

    master_seed: int

    def __post_init__(self):
        seed = int(self.master_seed)
        if not 0 <= seed <= _MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def generator(self, stream: int, step: int) -> np.random.Generator:
        """Fresh generator for one (stream, step) block of the Philox counter."""
        bitgen = np.random.Philox(
            key=int(self.master_seed), counter=[0, 0, int(step), int(stream)]
        )
        return np.random.Generator(bitgen)

    def normal_block(self, stream: int, step: int, shape) -> np.ndarray:
        return self.generator(stream, step).standard_normal(shape)

    def run_seed(self, run_index: int) -> int:
        """Independent 64-bit master seed for run ``run_index`` of a campaign."""
        ss = np.random.SeedSequence((int(self.master_seed), int(run_index)))
        return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class Ensemble:
    """Positions of N particles in R^d plus the simulation clock."""

    positions: np.ndarray
    time: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or min(self.positions.shape) < 1:
            raise ValueError("positions must be a nonempty (N, d) matrix")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")
        if self.time < 0.0 or self.step_count < 0:
            raise ValueError("time and step_count must be nonnegative")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class InitSpec:
    """Initial particle distribution.

    kind 'box' draws uniformly from [low, high]^d (low == high collapses all
    particles onto one point), 'gaussian' draws isotropically around `mean`
    with the given variance, and 'sphere' draws uniformly on the unit sphere.
    """

    kind: str
    low: float = -1.0
    high: float = 1.0
    mean: Union[float, tuple] = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in ("box", "gaussian", "sphere"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "box" and not self.low <= self.high:
            raise ValueError("box init needs low <= high")
        if self.kind == "gaussian" and not self.variance > 0:
            raise ValueError("gaussian init needs positive variance")


def init_ensemble(dist: InitSpec, n: int, d: int, rng: RngPlan) -> Ensemble:
    """Draw N i.i.d. initial positions; sphere rows come out unit-norm."""
    if n < 1 or d < 1:
        raise ValueError("need at least one particle and one dimension")
    gen = rng.generator(STREAM_INIT, 0)
    if dist.kind == "box":
        positions = gen.uniform(dist.low, dist.high, size=(n, d))
    elif dist.kind == "gaussian":
        mean = np.broadcast_to(np.asarray(dist.mean, dtype=float), (d,))
        positions = mean + np.sqrt(dist.variance) * gen.standard_normal((n, d))
    else:
        raw = gen.standard_normal((n, d))
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("degenerate sphere draw")
        positions = raw / norms[:, None]
    return Ensemble(positions=positions, time=0.0, step_count=0)


def moments(e: Ensemble):
    """Empirical mean and half mean squared spread, ``(1/(2N)) sum |X - E|^2``."""
    mean = e.positions.mean(axis=0)
    centered = e.positions - mean
    variance = 0.5 * float(np.mean(np.sum(centered * centered, axis=1)))
    return mean, variance


def mean_pairwise_sq_dist(e: Ensemble) -> float:
    """Average of |X^i - X^j|^2 over all unordered pairs i != j."""
    n = e.n_particles
    if n < 2:
        raise ValueError("pairwise distance needs at least two particles")
    centered = e.positions - e.positions.mean(axis=0)
    # sum over pairs i<j equals N * sum_i |X^i - mean|^2
    return float(2.0 * np.sum(centered * centered) / (n - 1))


def positions_to_csv(e: Ensemble) -> str:
    """Snapshot as CSV, one row per particle, shortest round-trip floats."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([f"x{k}" for k in range(e.dimension)])
    for row in e.positions:
        writer.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def positions_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
