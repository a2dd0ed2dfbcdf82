"""Collision-time bookkeeping that mirrors special relativity.

A main particle in energetic equilibrium with a heatbath of RMS speed c
satisfies c²τ̄² = |Δx̄|² + nετ̄/(2α²M) per collision. Correlating the
forward and backward shocks stretches the collision time to
τ_v = τ̄/√(1 − ρ_v²) while leaving that balance intact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .params import DomainError, HeatbathParams
from .stochastic_clock import (IncrementModel, as_rng, increment_correlation,
                               sample_correlated_increments, sample_intercollision)


def _rest_constant(params: HeatbathParams) -> float:
    """nε/(2α²M), the per-unit-time share of the invariant."""
    return params.n * params.epsilon / (2.0 * params.alpha_sq * params.M)


def rest_frame_tau(params: HeatbathParams, c: float) -> float:
    """τ̄₀ = nε/(2c²α²M)."""
    if not (c > 0 and math.isfinite(c)):
        raise DomainError(f"c must be positive, got {c!r}")
    return _rest_constant(params) / c**2


def rest_energy(params: HeatbathParams, tau_0: float) -> float:
    """Mc² written through the rest-frame time, nε/(2α²τ̄₀)."""
    return params.n * params.epsilon / (2.0 * params.alpha_sq * tau_0)


@dataclass(frozen=True)
class MinkowskiFrame:
    """One collision frame of the main particle.

    ``dx_bar`` is |Δx̄_τ̄|, ``v`` the mean drift velocity and ``c`` the
    heatbath RMS speed the frame is in balance with.
    """

    tau_bar: float
    dx_bar: float
    v: np.ndarray
    rho_v: float
    tau_v: float
    tau_0: float
    c: float

    def __post_init__(self) -> None:
        if not abs(self.rho_v) < 1:
            raise DomainError(f"|rho_v| must be below 1, got {self.rho_v!r}")
        if not (self.tau_bar > 0 and self.c > 0 and self.dx_bar >= 0):
            raise DomainError("tau_bar and c must be positive and dx_bar non-negative")
        if self.tau_v < self.tau_bar * (1 - 1e-12):
            raise DomainError("tau_v cannot be shorter than tau_bar")
        object.__setattr__(self, "v", np.atleast_1d(np.asarray(self.v, dtype=float)))

    @property
    def dx_v(self) -> float:
        """|Δx̄_v| = |Δx̄_τ̄|·τ_v/τ̄."""
        return self.dx_bar * self.tau_v / self.tau_bar

    def interval(self) -> float:
        """c²τ_v² − |Δx̄_v|²."""
        return self.c**2 * self.tau_v**2 - self.dx_v**2

    def residual(self, params: HeatbathParams) -> float:
        """Departure of the interval from nετ̄/(2α²M)."""
        return self.interval() - _rest_constant(params) * self.tau_bar


def displacement_sq(params: HeatbathParams, mean_sq_current: float,
                    mean_sq_osmotic: float) -> float:
    """|Δx̄_τ̄|² = ½(E|v̄|² + E|(b⁺−b⁻)/2|²/γ⁴)τ̄²."""
    if mean_sq_current < 0 or mean_sq_osmotic < 0:
        raise DomainError("mean squares must be non-negative")
    return 0.5 * (mean_sq_current + mean_sq_osmotic / params.gamma**4) * params.tau_bar**2


def equilibrium_frame(params: HeatbathParams, mean_sq_current: float = 0.0,
                      mean_sq_osmotic: float = 0.0, rho_v: float = 0.0,
                      v: Sequence[float] | None = None,
                      c_offset_sq: float = 0.0) -> MinkowskiFrame:
    """Frame whose heatbath speed balances the drift and correlated noise.

    c² = |Δx̄|²/τ̄² + nε(1 − ρ_v²)/(2α²Mτ̄) + ``c_offset_sq``. A nonzero
    offset models a frame out of equilibrium; its interval then misses
    the invariant by c_offset_sq·τ_v².
    """
    if not abs(rho_v) < 1:
        raise DomainError(f"|rho_v| must be below 1, got {rho_v!r}")
    tb = params.tau_bar
    dx2 = displacement_sq(params, mean_sq_current, mean_sq_osmotic)
    c2 = dx2 / tb**2 + _rest_constant(params) * (1 - rho_v**2) / tb + c_offset_sq
    if c2 <= 0:
        raise DomainError("frame has non-positive c²")
    c = math.sqrt(c2)
    v = np.zeros(params.n) if v is None else np.asarray(v, dtype=float)
    return MinkowskiFrame(tau_bar=tb, dx_bar=math.sqrt(dx2), v=v, rho_v=rho_v,
                          tau_v=tb / math.sqrt(1 - rho_v**2),
                          tau_0=rest_frame_tau(params, c), c=c)


def minkowski_invariant(frames: Sequence[MinkowskiFrame], params: HeatbathParams,
                        T: float, rtol: float = 1e-9) -> tuple[float, float]:
    """Σ(c²τ_v² − |Δx̄_v|²) over the frames against nεT/(2α²M).

    The frames must tile the horizon, Σ τ̄ = T.
    """
    if not frames:
        raise DomainError("no frames given")
    total = sum(f.tau_bar for f in frames)
    if abs(total - T) > rtol * max(T, 1.0):
        raise DomainError(f"frame times sum to {total!r}, expected T={T!r}")
    lhs = math.fsum(f.interval() for f in frames)
    return lhs, _rest_constant(params) * T


def relative_velocity(v: np.ndarray, v_prime: np.ndarray, c: float) -> np.ndarray:
    """(v − v′)/(1 − v·v′/c²), the velocity of v seen from v′."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    vp = np.atleast_1d(np.asarray(v_prime, dtype=float))
    denom = 1.0 - float(v @ vp) / c**2
    if denom <= 0:
        raise DomainError("velocities are not both below c")
    return (v - vp) / denom


def lorentz_boost(v: np.ndarray | float, v_prime: np.ndarray | float, c: float) -> np.ndarray:
    """Block boost acting on (Δx; τ).

    With u the relative velocity of v seen from v′ this is
    (1/√(1 − |u|²/c²))·[[I, u], [uᵀ/c², 1]]. The velocity coupling is rank
    one, so for n > 1 the quadratic form c²τ² − |Δx|² is preserved only
    for displacements parallel to u.
    """
    if not (c > 0 and math.isfinite(c)):
        raise DomainError(f"c must be positive, got {c!r}")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    vp = np.atleast_1d(np.asarray(v_prime, dtype=float))
    if v.shape != vp.shape:
        raise DomainError("v and v_prime must have the same dimension")
    if max(np.linalg.norm(v), np.linalg.norm(vp)) >= c:
        raise DomainError("velocities must be below c")
    u = relative_velocity(v, vp, c)
    u2 = float(u @ u)
    if u2 >= c**2:
        raise DomainError("relative velocity must be below c")
    n = u.size
    B = np.eye(n + 1)
    B[:n, n] = u
    B[n, :n] = u / c**2
    return B / math.sqrt(1.0 - u2 / c**2)


class Dilation(NamedTuple):
    ratio: float
    v_over_c: float


def time_dilation(rho_v: float) -> Dilation:
    """τ_v/τ̄ = 1/√(1 − ρ_v²) and the implied speed |ρ_v| in units of c."""
    if not abs(rho_v) < 1:
        raise DomainError(f"|rho_v| must be below 1, got {rho_v!r}")
    return Dilation(1.0 / math.sqrt(1.0 - rho_v**2), abs(rho_v))


def compound_correlation_sq(params: HeatbathParams, rho_increments: float) -> float:
    """ρ_v² = (1 − 2α²)ρ_{Δ⁺zΔ⁻z}."""
    return (1.0 - 2.0 * params.alpha_sq) * rho_increments


def increment_target(params: HeatbathParams, rho_v_sq: float) -> float:
    """Shock correlation that produces a given ρ_v²."""
    gain = 1.0 - 2.0 * params.alpha_sq
    if not 0 <= rho_v_sq < 1:
        raise DomainError(f"rho_v^2 must lie in [0, 1), got {rho_v_sq!r}")
    if rho_v_sq == 0:
        return 0.0
    if gain <= 0 or rho_v_sq > gain:
        raise DomainError(f"rho_v^2={rho_v_sq!r} exceeds the reachable maximum 1 - 2α² = {gain:.4g}")
    return rho_v_sq / gain


class RelativisticEnergy(NamedTuple):
    E_r: float
    M_r: float
    rest_energy: float
    kinetic: float
    identity_residual: float


def relativistic_energy(params: HeatbathParams, v: float, c: float) -> RelativisticEnergy:
    """E_r = Mc²/√(1 − v²/c²), M_r = M/√(1 − v²/c²) and the rest energy Mc².

    ``kinetic`` is the approximation E[H_k] ≈ Mc²(1 − √(1 − v²/c²)) and
    ``identity_residual`` the miss of E_r − Mc² = E[H_k]/√(1 − v²/c²).
    """
    if not (c > 0 and 0 <= abs(v) < c):
        raise DomainError("need 0 <= |v| < c")
    root = math.sqrt(1.0 - (v / c) ** 2)
    rest = params.M * c**2
    E_r = rest / root
    kin = rest * (1.0 - root)
    return RelativisticEnergy(E_r, params.M / root, rest, kin, (E_r - rest) - kin / root)


# -- end-to-end experiment -------------------------------------------------------

class CorrelatedRun(NamedTuple):
    rho_v_sq_target: float
    rho_increments: float
    rho_increments_se: float
    rho_v_sq: float
    ratio: float
    ratio_se: float
    ratio_target: float
    c_sq: float
    interval: float
    interval_se: float
    interval_target: float


def correlated_experiment(params: HeatbathParams, rho_v_sq: float, n_collisions: int,
                          rng: np.random.Generator | int | None = None, k: float = 1.0,
                          batches: int = 20) -> CorrelatedRun:
    """Measure time dilation from correlated shocks on an OU collision path.

    The main particle follows b⁺ = −kx from its stationary law, with
    b⁻ = kx. At every collision the forward and backward shocks are drawn
    from an :class:`IncrementModel` whose correlation yields the target
    ρ_v². The measured shock correlation gives ρ_v² and τ_v/τ̄₀ with
    τ̄₀ = τ̄ for the frame at rest. The heatbath speed c² is assembled from
    the measured drift and shock averages, and the interval
    c²τ_v² − |Δx̄_v|² is compared with nετ̄/(2α²M). Standard errors come
    from batch means.
    """
    if n_collisions < batches * 10:
        raise DomainError("need at least ten collisions per batch")
    gen = as_rng(rng)
    rho_inc = increment_target(params, rho_v_sq)
    model = IncrementModel.from_correlation(params.sigma, rho_inc, params.tau_bar)
    if abs(increment_correlation(model) - rho_inc) > 1e-12:
        raise DomainError("increment model does not reproduce the target correlation")
    n, s2, g4 = params.n, params.sigma**2, params.gamma**4
    tau1 = sample_intercollision(params.beta, gen, n_collisions)
    tau2 = sample_intercollision(params.beta, gen, n_collisions)
    fwd, bwd = sample_correlated_increments(model, tau1, tau2, n, gen)
    # positions along the collision path driven by the forward legs
    x = np.empty((n_collisions, n))
    x[0] = gen.standard_normal(n) * math.sqrt(s2 / (2 * k))
    step = np.exp(-k * tau2)[:, None]
    noise = gen.standard_normal((n_collisions, n)) * np.sqrt(s2 * (1 - step**2) / (2 * k))
    for j in range(n_collisions - 1):
        x[j + 1] = step[j] * x[j] + noise[j]
    b_plus, b_minus = -k * x, k * x
    vbar2 = np.sum((0.5 * (b_plus + b_minus)) ** 2, axis=1)
    osm2 = np.sum((0.5 * (b_plus - b_minus)) ** 2, axis=1)
    noise_sq = (np.sum((fwd + bwd) ** 2, axis=1) / 8.0
                + np.sum((fwd - bwd) ** 2, axis=1) / (8.0 * g4))
    tb = params.tau_bar

    def summary(sl):
        f, b = fwd[sl].ravel(), bwd[sl].ravel()
        r = float(np.corrcoef(f, b)[0, 1])
        rv2 = compound_correlation_sq(params, r)
        dx2 = 0.5 * (vbar2[sl].mean() + osm2[sl].mean() / g4) * tb**2
        c2 = dx2 / tb**2 + noise_sq[sl].mean()
        tv2 = tb**2 / (1 - rv2)
        return r, rv2, 1 / math.sqrt(1 - rv2), c2, c2 * tv2 - dx2 * tv2 / tb**2

    full = summary(slice(None))
    edges = np.linspace(0, n_collisions, batches + 1).astype(int)
    parts = np.array([summary(slice(a, b)) for a, b in zip(edges[:-1], edges[1:])])
    se = parts.std(axis=0, ddof=1) / math.sqrt(batches)
    return CorrelatedRun(rho_v_sq, full[0], se[0], full[1], full[2], se[2],
                         time_dilation(math.sqrt(rho_v_sq)).ratio, full[3], full[4], se[4],
                         _rest_constant(params) * tb)
