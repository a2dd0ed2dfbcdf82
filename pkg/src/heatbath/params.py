"""Scalar constants of the collision model.

Everything downstream reads its constants from a :class:`HeatbathParams`
instance, so the relations between masses, collision angle and diffusion
scales live in exactly one place.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


@dataclass(frozen=True)
class HeatbathParams:
    """Immutable bundle of model constants.

    Build instances with :func:`derive_params`; the constructor does not
    check that the derived fields agree with the primary ones.
    """

    M: float
    m: float
    n: int
    sigma: float
    tau_bar: float
    gamma: float
    theta: float
    alpha_sq: float
    epsilon: float
    beta: float
    M_T: float
    chi: float
    eta: float
    omega_sq: float
    cos_theta: float = field(repr=False)
    sin_theta: float = field(repr=False)

    @property
    def diffusion_const_main(self) -> float:
        """Diffusion energy floor of one main-particle step, ε/τ̄."""
        return self.epsilon / self.tau_bar

    @property
    def diffusion_const_total(self) -> float:
        """Constant part of the expected kinetic energy, 2nε/(sin²θ τ̄)."""
        return 2.0 * self.n * self.epsilon / (self.sin_theta**2 * self.tau_bar)

    @property
    def diffusion_const_bath(self) -> float:
        """Diffusion energy floor of one heatbath step, mω²/τ̄."""
        return self.m * self.omega_sq / self.tau_bar

    def primary(self) -> dict[str, float | int]:
        """The inputs that determine every other field."""
        return {"M": self.M, "m": self.m, "sigma": self.sigma,
                "tau_bar": self.tau_bar, "n": self.n}

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def replace(self, **changes: float | int) -> "HeatbathParams":
        """Re-derive with some primary inputs changed."""
        base = self.primary()
        unknown = set(changes) - set(base)
        if unknown:
            raise DomainError(f"cannot override derived field(s): {sorted(unknown)}")
        base.update(changes)
        return derive_params(**base)


def _check_positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def derive_params(M: float, m: float, sigma: float, tau_bar: float,
                  n: int = 1) -> HeatbathParams:
    """Derive all model constants from the masses, σ and τ̄.

    The mass ratio enters through γ = √(m/M), which is the only choice
    that makes M + m = M(1 + γ²).
    """
    M = _check_positive("M", M)
    m = _check_positive("m", m)
    sigma = _check_positive("sigma", sigma)
    tau_bar = _check_positive("tau_bar", tau_bar)
    if isinstance(n, bool) or int(n) != n or int(n) not in (1, 2, 3):
        raise DomainError(f"n must be 1, 2 or 3, got {n!r}")
    n = int(n)

    g2 = m / M
    gamma = math.sqrt(g2)
    cos_t = (1.0 - g2) / (1.0 + g2)
    sin_t = 2.0 * gamma / (1.0 + g2)
    theta = math.atan2(sin_t, cos_t)
    alpha_sq = g2 * g2 / (1.0 + g2 * g2)
    epsilon = M * sigma**2
    M_T = M * (1.0 + g2)
    return HeatbathParams(
        M=M, m=m, n=n, sigma=sigma, tau_bar=tau_bar,
        gamma=gamma, theta=theta, alpha_sq=alpha_sq, epsilon=epsilon,
        beta=2.0 / tau_bar, M_T=M_T, chi=M_T * sigma**2 / gamma,
        eta=sigma**2 / gamma, omega_sq=sigma**2 / (2.0 * alpha_sq),
        cos_theta=cos_t, sin_theta=sin_t,
    )


def params_from_gamma(gamma: float, M: float = 1.0, sigma: float = 1.0,
                      tau_bar: float = 1.0, n: int = 1) -> HeatbathParams:
    """Convenience constructor taking γ instead of the heatbath mass."""
    gamma = _check_positive("gamma", gamma)
    return derive_params(M=M, m=M * gamma**2, sigma=sigma, tau_bar=tau_bar, n=n)


def params_from_mapping(block: Mapping[str, Any]) -> HeatbathParams:
    """Build params from a config block holding either ``m`` or ``gamma``."""
    keys = set(block)
    allowed = {"M", "m", "gamma", "sigma", "tau_bar", "n"}
    extra = keys - allowed
    if extra:
        raise DomainError(f"unknown params field(s): {sorted(extra)}")
    if "m" in block and "gamma" in block:
        raise DomainError("give either m or gamma, not both")
    M = block.get("M", 1.0)
    kwargs = dict(sigma=block.get("sigma", 1.0), tau_bar=block.get("tau_bar", 1.0),
                  n=block.get("n", 1))
    if "gamma" in block:
        return params_from_gamma(block["gamma"], M=M, **kwargs)
    return derive_params(M=M, m=block.get("m", M), **kwargs)


def check_invariants(p: HeatbathParams) -> dict[str, float]:
    """Residuals of the identities tying the derived fields together."""
    return {
        "trig": abs(p.cos_theta**2 + p.sin_theta**2 - 1.0),
        "total_mass": abs(p.M_T - (p.M + p.m)) / p.M_T,
        "chi_gamma": abs(p.chi - (p.gamma + 1.0 / p.gamma) * p.epsilon) / p.chi,
        "chi_sin": abs(p.chi - 2.0 * p.epsilon / p.sin_theta) / p.chi,
        "beta_tau": abs(p.beta * p.tau_bar - 2.0),
    }
