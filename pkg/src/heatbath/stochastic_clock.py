"""Second-order Gamma collision clock and correlated step shocks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .params import DomainError


def make_rng(seed: int | None = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by ``(seed, stream)``.

    Disjoint stream ids give independent sequences for parallel ensembles.
    """
    if seed is None:
        return np.random.Generator(np.random.Philox())
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(rng)


class GammaMoments(NamedTuple):
    mean: float
    variance: float
    inv_mean: float
    inv_sqrt_mean: float


def _check_rate(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta) or beta <= 0.0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    return beta


def gamma_moments(beta: float) -> GammaMoments:
    """Closed-form moments of the density β²τe^{−βτ}.

    E[1/√τ] = β^{1/2} Γ(3/2) = √(πβ)/2.
    """
    beta = _check_rate(beta)
    return GammaMoments(2.0 / beta, 2.0 / beta**2, beta, 0.5 * math.sqrt(math.pi * beta))


def gamma_pdf(tau: np.ndarray, beta: float) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    return np.where(tau > 0, beta**2 * tau * np.exp(-beta * tau), 0.0)


def gamma_cdf(tau: np.ndarray, beta: float) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    bt = beta * np.clip(tau, 0.0, None)
    return 1.0 - np.exp(-bt) * (1.0 + bt)


def sample_intercollision(beta: float, rng: np.random.Generator | int | None = None,
                          size: int | tuple[int, ...] | None = None) -> float | np.ndarray:
    """Draw inter-collision times as the sum of two Exp(β) variables."""
    beta = _check_rate(beta)
    gen = as_rng(rng)
    scale = 1.0 / beta
    return gen.exponential(scale, size) + gen.exponential(scale, size)


@dataclass(frozen=True)
class IncrementModel:
    """Split of the step noise into aligned, opposed and residual parts.

    The forward shock is σ_aΔ_a + σ_oΔ_o + σ_r Δz⁺/τ₂ and the backward
    shock σ_aΔ_a − σ_oΔ_o + σ_r Δz⁻/τ₁, so the aligned part is shared and
    the opposed part enters with a sign flip.
    """

    sigma_a: float
    sigma_o: float
    sigma_r: float
    tau_bar: float

    def __post_init__(self) -> None:
        for name in ("sigma_a", "sigma_o", "sigma_r"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise DomainError(f"{name} must be non-negative, got {v!r}")
        if not self.tau_bar > 0.0:
            raise DomainError(f"tau_bar must be positive, got {self.tau_bar!r}")
        if self.sigma_sq <= 0.0:
            raise DomainError("at least one shock amplitude must be positive")

    @property
    def sigma_sq(self) -> float:
        return self.sigma_a**2 + self.sigma_o**2 + self.sigma_r**2

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_sq)

    @classmethod
    def from_correlation(cls, sigma: float, rho: float, tau_bar: float,
                         residual_frac: float = 0.0) -> "IncrementModel":
        """Model with total amplitude σ and correlation ρ.

        ``residual_frac`` is the share of σ² given to the independent part.
        """
        if not -1.0 <= rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {rho!r}")
        if not 0.0 <= residual_frac <= 1.0 - abs(rho):
            raise DomainError("residual_frac must lie in [0, 1 - |rho|]")
        s2 = sigma**2
        shared = (1.0 - residual_frac) * s2
        a2 = 0.5 * (shared + rho * s2)
        o2 = 0.5 * (shared - rho * s2)
        return cls(math.sqrt(max(a2, 0.0)), math.sqrt(max(o2, 0.0)),
                   math.sqrt(residual_frac * s2), tau_bar)


def increment_correlation(model: IncrementModel) -> float:
    """ρ = (σ_a² − σ_o²) / (σ_a² + σ_o² + σ_r²)."""
    return (model.sigma_a**2 - model.sigma_o**2) / model.sigma_sq


def sample_correlated_increments(model: IncrementModel, tau1: float | np.ndarray,
                                 tau2: float | np.ndarray, n: int = 1,
                                 rng: np.random.Generator | int | None = None
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Draw the (forward, backward) velocity shocks of one collision.

    ``tau1`` and ``tau2`` may be arrays of matching shape; the returned
    shocks then have shape ``tau.shape + (n,)``. The shared parts Δ_a and
    Δ_o are Gaussian with covariance (2/τ̄)I, so both shocks have
    per-component variance 2σ²/τ̄ once the residual is averaged over the
    Gamma clock.
    """
    if not isinstance(model, IncrementModel):
        raise DomainError("model must be an IncrementModel")
    tau1 = np.asarray(tau1, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    if np.any(tau1 <= 0) or np.any(tau2 <= 0):
        raise DomainError("collision intervals must be positive")
    shape = np.broadcast_shapes(tau1.shape, tau2.shape) + (int(n),)
    gen = as_rng(rng)
    scale = math.sqrt(2.0 / model.tau_bar)
    d_a = gen.standard_normal(shape) * scale
    d_o = gen.standard_normal(shape) * scale
    z_fwd = gen.standard_normal(shape) / np.sqrt(tau2)[..., None]
    z_bwd = gen.standard_normal(shape) / np.sqrt(tau1)[..., None]
    shared = model.sigma_a * d_a
    opposed = model.sigma_o * d_o
    forward = shared + opposed + model.sigma_r * z_fwd
    backward = shared - opposed + model.sigma_r * z_bwd
    return forward, backward
