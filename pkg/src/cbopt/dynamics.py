"""One-step transition kernels for the five consensus-dynamics variants.

Every stepper computes the consensus point once from the pre-step positions
(synchronous update), draws its noise from the ensemble's step counter, and
returns a new ensemble advanced by dt. Per-particle work is independent
within a step; the consensus reduction is the only synchronization point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .consensus import ConsensusPoint, weighted_mean
from .ensemble import Ensemble, RngPlan, STREAM_DIFFUSION

VARIANTS = ("original", "anisotropic", "common_noise", "personal_best", "sphere")
HEAVISIDE_MODES = ("off", "exact", "regularized")


class DivergenceError(RuntimeError):
    """A step produced non-finite coordinates; carries the failing step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite particle coordinates after step {step}")
        self.step = step


class SingularityError(RuntimeError):
    """The sphere projection was evaluated at (or renormalization hit) the origin."""


@dataclass(frozen=True)
class VariantParams:
    """Coefficients of the particle dynamics.

    ``sigma`` multiplies the noise exactly as written in each variant's
    update rule; the original and personal-best dynamics carry their own
    extra sqrt(2) factor, the others use sigma directly.
    """

    lam: float = 1.0
    sigma: float = 1.0
    alpha: float = 30.0
    dt: float = 0.01
    epsilon: float = 1e-3
    beta: float = 1.0
    heaviside_mode: str = "off"
    variant: str = "anisotropic"

    def __post_init__(self):
        for name in ("lam", "sigma", "alpha", "beta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and nonnegative")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be positive")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")
        if self.heaviside_mode not in HEAVISIDE_MODES:
            raise ValueError(f"unknown heaviside_mode {self.heaviside_mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class PersonalBestMemory:
    """Exponentially weighted time-averages approximating each particle's
    best visited point.

    The running integrals are stored scaled by exp(-log_scale), where
    log_scale is the per-particle running max of -beta*f, so the weights
    never underflow no matter how large beta*f gets.
    """

    scaled_num: np.ndarray  # (N, d)
    scaled_den: np.ndarray  # (N,)
    log_scale: np.ndarray  # (N,)
    p: np.ndarray  # (N, d) current personal-best estimates

    @classmethod
    def initial(cls, e: Ensemble) -> "PersonalBestMemory":
        n, d = e.positions.shape
        return cls(
            scaled_num=np.zeros((n, d)),
            scaled_den=np.zeros(n),
            log_scale=np.full(n, -np.inf),
            p=e.positions.copy(),
        )

    def accumulate(self, positions, fvals, beta, dt) -> "PersonalBestMemory":
        """Add one left-endpoint rectangle of the weighted time integrals."""
        g = -beta * np.asarray(fvals, dtype=float)
        scale = np.maximum(self.log_scale, g)
        carry = np.exp(self.log_scale - scale)  # 0 on the very first call
        w = np.exp(g - scale) * dt
        num = self.scaled_num * carry[:, None] + positions * w[:, None]
        den = self.scaled_den * carry + w
        return PersonalBestMemory(num, den, scale, num / den[:, None])


def heaviside(x, mode: str, epsilon: Optional[float] = None):
    """Gate multiplier in [0, 1]: step at 0, tanh regularization, or constant 1."""
    x = np.asarray(x, dtype=float)
    if mode == "off":
        out = np.ones_like(x)
    elif mode == "exact":
        out = np.where(x >= 0.0, 1.0, 0.0)
    elif mode == "regularized":
        if epsilon is None or not epsilon > 0.0:
            raise ValueError("regularized heaviside needs positive epsilon")
        out = 0.5 + 0.5 * np.tanh(x / epsilon)
    else:
        raise ValueError(f"unknown heaviside mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def consensus_condition(p: VariantParams, d: int) -> bool:
    """Concentration check: 2 lam > sigma^2 d for the isotropic original
    dynamic; dimension-independent 2 lam > sigma^2 for the component-wise ones."""
    if p.variant == "original":
        return 2.0 * p.lam > p.sigma**2 * d
    return 2.0 * p.lam > p.sigma**2


def _require_finite(positions: np.ndarray, step: int) -> None:
    if not np.isfinite(positions).all():
        raise DivergenceError(step)


def _consensus(e, f, p, cp):
    return cp if cp is not None else weighted_mean(e, f, p.alpha)


def anisotropic_kick(positions, v, lam, sigma, dt, z) -> np.ndarray:
    """Shared component-wise Euler-Maruyama update used by the anisotropic,
    common-noise, and batch dynamics (the noise shape decides which)."""
    diff = positions - v
    return positions - lam * dt * diff + sigma * np.sqrt(dt) * diff * z


def step_original(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint] = None) -> Ensemble:
    """Isotropic dynamic: drift toward the consensus point gated by the
    configured Heaviside mode, diffusion sqrt(2)*sigma*|X - v| per particle."""
    cp = _consensus(e, f, p, cp)
    diff = e.positions - cp.v
    dist = np.linalg.norm(diff, axis=1)
    if p.heaviside_mode == "off":
        gate = 1.0
    else:
        fx = np.asarray(f(e.positions), dtype=float)
        gate = heaviside(fx - cp.f_at_v, p.heaviside_mode, p.epsilon)[:, None]
    z = rng.normal_block(STREAM_DIFFUSION, e.step_count, e.positions.shape)
    new = (
        e.positions
        - p.lam * p.dt * diff * gate
        + np.sqrt(2.0) * p.sigma * np.sqrt(p.dt) * dist[:, None] * z
    )
    _require_finite(new, e.step_count)
    return Ensemble(new, e.time + p.dt, e.step_count + 1)


def step_anisotropic(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint] = None) -> Ensemble:
    """Component-wise dynamic: noise scales each coordinate of X - v
    independently, so a coordinate that matches the consensus stays put."""
    cp = _consensus(e, f, p, cp)
    z = rng.normal_block(STREAM_DIFFUSION, e.step_count, e.positions.shape)
    new = anisotropic_kick(e.positions, cp.v, p.lam, p.sigma, p.dt, z)
    _require_finite(new, e.step_count)
    return Ensemble(new, e.time + p.dt, e.step_count + 1)


def step_common_noise(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint] = None) -> Ensemble:
    """Component-wise dynamic with one shared normal draw per coordinate per
    step, so coincident particles stay coincident forever."""
    cp = _consensus(e, f, p, cp)
    z = rng.generator(STREAM_DIFFUSION, e.step_count).standard_normal(e.dimension)
    new = anisotropic_kick(e.positions, cp.v, p.lam, p.sigma, p.dt, z)
    _require_finite(new, e.step_count)
    return Ensemble(new, e.time + p.dt, e.step_count + 1)


def step_personal_best(
    e, f, p, mem: PersonalBestMemory, rng: RngPlan, cp: Optional[ConsensusPoint] = None
) -> Tuple[Ensemble, PersonalBestMemory]:
    """Dual-drift dynamic: each particle moves toward the consensus point or
    toward its personal best, whichever has the smaller objective value.

    The drift prefactors are pure Heaviside gates (mode 'off' falls back to
    exact gating, since ungated dual drift would pin particles in between).
    Diffusion is component-wise with the sqrt(2)*sigma prefactor. After the
    position update the memory accumulates one left-endpoint rectangle of
    the weighted time integrals and refreshes p.
    """
    cp = _consensus(e, f, p, cp)
    mode = "exact" if p.heaviside_mode == "off" else p.heaviside_mode
    fx = np.asarray(f(e.positions), dtype=float)
    fp = np.asarray(f(mem.p), dtype=float)
    lam_gate = heaviside(fx - cp.f_at_v, mode, p.epsilon) * heaviside(
        fp - cp.f_at_v, mode, p.epsilon
    )
    mu_gate = heaviside(fx - fp, mode, p.epsilon) * heaviside(
        cp.f_at_v - fp, mode, p.epsilon
    )
    diff_v = e.positions - cp.v
    diff_p = e.positions - mem.p
    z = rng.normal_block(STREAM_DIFFUSION, e.step_count, e.positions.shape)
    new = (
        e.positions
        - p.dt * (lam_gate[:, None] * diff_v + mu_gate[:, None] * diff_p)
        + np.sqrt(2.0) * p.sigma * np.sqrt(p.dt) * diff_v * z
    )
    _require_finite(new, e.step_count)
    new_mem = mem.accumulate(e.positions, fx, p.beta, p.dt)
    return Ensemble(new, e.time + p.dt, e.step_count + 1), new_mem


def _sphere_raw_update(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint]) -> np.ndarray:
    """Unconstrained Euler-Maruyama update of the sphere dynamic, before
    the rows are projected back to unit norm."""
    cp = _consensus(e, f, p, cp)
    x = e.positions
    d = e.dimension
    norms_sq = np.sum(x * x, axis=1)
    if np.any(norms_sq < 1e-24):
        raise SingularityError("particle at the origin: projection undefined")
    diff = x - cp.v
    dist_sq = np.sum(diff * diff, axis=1)
    dist = np.sqrt(dist_sq)
    z = rng.normal_block(STREAM_DIFFUSION, e.step_count, x.shape)
    # tangential projection P(x) y = y - x (x.y)/|x|^2
    proj_diff = diff - x * (np.sum(x * diff, axis=1) / norms_sq)[:, None]
    proj_z = z - x * (np.sum(x * z, axis=1) / norms_sq)[:, None]
    # Ito correction along the outward normal: grad|x|=x/|x|, lap|x|=(d-1)/|x|
    correction = 0.5 * p.sigma**2 * p.dt * (dist_sq * (d - 1.0) / norms_sq)[:, None] * x
    return (
        x
        - p.lam * p.dt * proj_diff
        + p.sigma * np.sqrt(p.dt) * dist[:, None] * proj_z
        - correction
    )


def step_sphere(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint] = None) -> Ensemble:
    """Sphere-constrained dynamic: tangential drift and diffusion plus the
    curvature correction, then exact renormalization of every row.

    Requires unit-norm rows on entry; the step returns unit-norm rows.
    """
    raw = _sphere_raw_update(e, f, p, rng, cp)
    _require_finite(raw, e.step_count)
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms < 1e-12):
        raise SingularityError("renormalization hit the origin")
    return Ensemble(raw / norms[:, None], e.time + p.dt, e.step_count + 1)


def sphere_norm_drift(e, f, p, rng: RngPlan, cp: Optional[ConsensusPoint] = None) -> float:
    """Max | |row| - 1 | of the raw sphere update before renormalization;
    first-order consistency makes this O(dt)."""
    raw = _sphere_raw_update(e, f, p, rng, cp)
    return float(np.max(np.abs(np.linalg.norm(raw, axis=1) - 1.0)))


_PLAIN_STEPPERS = {
    "original": step_original,
    "anisotropic": step_anisotropic,
    "common_noise": step_common_noise,
    "sphere": step_sphere,
}


def step(
    e,
    f,
    p: VariantParams,
    rng: RngPlan,
    mem: Optional[PersonalBestMemory] = None,
    cp: Optional[ConsensusPoint] = None,
):
    """Advance one step of the selected variant; returns (ensemble, memory)."""
    if p.variant == "personal_best":
        if mem is None:
            raise ValueError("personal_best variant needs a PersonalBestMemory")
        return step_personal_best(e, f, p, mem, rng, cp)
    return _PLAIN_STEPPERS[p.variant](e, f, p, rng, cp), mem
