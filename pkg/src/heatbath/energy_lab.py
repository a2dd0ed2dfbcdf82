"""Energy bookkeeping for drift fields, wave fields and collision paths."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .collision_algebra import ScatteringStats
from .params import DomainError, HeatbathParams
from .path_engine import DriftRegressor, simulate_ensemble, zero_drift
from .stochastic_clock import make_rng
from .wavefunction import WaveField, WavePacketSpec, gaussian_packet

NORM_TOL = 1e-8


@dataclass(frozen=True)
class EnergyReport:
    H_plus_M: float
    H_minus_M: float
    H_plus_m: float
    H_minus_m: float
    E_Hk: float
    E_HT: float
    diffusion_const_main: float
    diffusion_const_total: float
    t: float

    @property
    def H_M_avg(self) -> float:
        return 0.5 * (self.H_plus_M + self.H_minus_M)

    @property
    def H_m_avg(self) -> float:
        return 0.5 * (self.H_plus_m + self.H_minus_m)

    def to_dict(self) -> dict[str, float]:
        out = asdict(self)
        out["H_M_avg"] = self.H_M_avg
        out["H_m_avg"] = self.H_m_avg
        return out


def _quadrature(rho: np.ndarray, cell: float) -> float:
    # nodal sum; densities vanish at the domain edges
    return float(np.sum(rho) * cell)


def _sq(v: np.ndarray, rho_ndim: int) -> np.ndarray:
    v = np.ma.filled(np.ma.asarray(v, dtype=float), 0.0)
    if v.ndim == rho_ndim + 1:
        return np.sum(v * v, axis=-1)
    return v * v


def _check_density(rho: np.ndarray, cell: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("density has negative values")
    mass = _quadrature(rho, cell)
    if abs(mass - 1.0) > NORM_TOL:
        raise DomainError(f"density integrates to {mass:.12g}, expected 1")
    return rho


def _heatbath_drifts(b_plus, b_minus, params: HeatbathParams):
    # inverse of (b⁺; b⁻) = (γ/sinθ)[[c, 1], [1, c]](g⁺; g⁻)
    c, gs = params.cos_theta, params.gamma * params.sin_theta
    bp = np.ma.filled(np.ma.asarray(b_plus, dtype=float), 0.0)
    bm = np.ma.filled(np.ma.asarray(b_minus, dtype=float), 0.0)
    return (bm - c * bp) / gs, (bp - c * bm) / gs


def forward_backward_energy(b_plus: np.ndarray, b_minus: np.ndarray, rho: np.ndarray,
                            params: HeatbathParams, cell: float
                            ) -> tuple[float, float, float, float]:
    """(H⁺_M, H⁻_M, H⁺_m, H⁻_m) by quadrature over ρ.

    H±_M = (M/2)E|b±|² + nε/τ̄ and H±_m = (m/2)E|g±|² + n mω²/τ̄, where
    the heatbath drifts g± follow from b± through the collision map.
    ``cell`` is the grid cell volume.
    """
    rho = _check_density(rho, cell)
    g_plus, g_minus = _heatbath_drifts(b_plus, b_minus, params)
    n = params.n
    e_main = n * params.diffusion_const_main
    e_bath = n * params.diffusion_const_bath
    def expect(v):
        return _quadrature(rho * _sq(v, rho.ndim), cell)
    return (0.5 * params.M * expect(b_plus) + e_main,
            0.5 * params.M * expect(b_minus) + e_main,
            0.5 * params.m * expect(g_plus) + e_bath,
            0.5 * params.m * expect(g_minus) + e_bath)


def energy_constant(params: HeatbathParams, stats: ScatteringStats | None = None) -> float:
    """M_T(nσ²/(2τ̄) + σ²Tr Γ^z/(2τ̄γ²)); equals 2nε/(sin²θτ̄) when Z ≡ 0."""
    n = params.n
    tr = float(n) if stats is None else float(np.trace(stats.Gamma_z))
    s2, tb = params.sigma**2, params.tau_bar
    return params.M_T * (n * s2 / (2 * tb) + s2 * tr / (2 * tb * params.gamma**2))


def _gamma_z(params: HeatbathParams, stats: ScatteringStats | None) -> tuple[np.ndarray, np.ndarray]:
    n = params.n
    if stats is None:
        return np.eye(n), np.zeros((n, n))
    G = np.asarray(stats.Gamma_z, dtype=float)
    Zb = np.asarray(stats.Z_mean, dtype=float)
    if G.shape != (n, n):
        raise DomainError(f"scattering statistics are {G.shape[0]}-dimensional, params n={n}")
    return G, Zb


def total_energy(rho: np.ndarray, b_plus: np.ndarray, b_minus: np.ndarray, Phi_p: float,
                 params: HeatbathParams, cell: float,
                 stats: ScatteringStats | None = None) -> float:
    """Expected total energy from the drifts.

    With v = (b⁺+b⁻)/2 and u = (b⁺−b⁻)/2 this is

        (M_T/2)E[|v|² − 2vᵀZ̄u + uᵀΓ^z u/γ²] + E[Φ_p] + constant,

    which reduces to (M_T/2)E|v|² + (M_Tσ⁴/8γ²)E|∇ρ/ρ|² + E[Φ_p]
    + 2nε/(sin²θτ̄) without scattering.
    """
    rho = _check_density(rho, cell)
    G, Zb = _gamma_z(params, stats)
    bp = np.ma.filled(np.ma.asarray(b_plus, dtype=float), 0.0)
    bm = np.ma.filled(np.ma.asarray(b_minus, dtype=float), 0.0)
    if bp.ndim == rho.ndim:
        bp, bm = bp[..., None], bm[..., None]
    v = 0.5 * (bp + bm)
    u = 0.5 * (bp - bm)
    dens = (np.sum(v * v, axis=-1) - 2.0 * np.einsum("...i,ij,...j->...", v, Zb, u)
            + np.einsum("...i,ij,...j->...", u, G, u) / params.gamma**2)
    return 0.5 * params.M_T * _quadrature(rho * dens, cell) + Phi_p + energy_constant(params, stats)


def kinetic_from_psi(psi: np.ndarray, grad_psi: np.ndarray, params: HeatbathParams,
                     cell: float, Phi_p: float = 0.0) -> float:
    """χ²/(2M_T)E[|∇ψ|²]/E[|ψ|²] + E[Φ_p] + 2nε/(sin²θτ̄)."""
    g = np.asarray(grad_psi)
    if g.ndim == np.ndim(psi):
        g = g[..., None]
    kin = np.sum(np.abs(g) ** 2) * cell / (np.sum(np.abs(psi) ** 2) * cell)
    return params.chi**2 / (2 * params.M_T) * kin + Phi_p + energy_constant(params)


# -- wave fields -----------------------------------------------------------------

class FieldEnergy(NamedTuple):
    t: float
    current: float
    osmotic: float
    cross: float
    potential: float
    constant: float

    @property
    def dynamic(self) -> float:
        return self.current + self.osmotic + self.cross + self.potential

    @property
    def E_HT(self) -> float:
        return self.dynamic + self.constant


def _edge_terms(psi: np.ndarray, h: float, axis: int, chi: float,
                A: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """ρ(χ Im q/ρ)² and ρ(χ Re q/ρ)² on the cell edges of one axis.

    q = conj(ψ_e)Dψ_e with ψ_e the edge average and Dψ_e the edge
    difference, zero ghost nodes at both ends. With a vector potential the
    difference carries the same Peierls phase as the solver, so the edge
    sums reproduce the energy the time stepper conserves.
    """
    p = np.moveaxis(psi, axis, 0)
    pad = np.zeros((1,) + p.shape[1:], dtype=complex)
    ext = np.concatenate([pad, p, pad], axis=0)
    left, right = ext[:-1], ext[1:]
    if A is not None:
        a_edge = np.concatenate([[A[0]], 0.5 * (A[1:] + A[:-1]), [A[-1]]])
        right = right * np.exp(-1j * a_edge * h / chi).reshape((-1,) + (1,) * (p.ndim - 1))
    mid = 0.5 * (left + right)
    d = (right - left) / h
    q = np.conj(mid) * d
    r = np.abs(mid) ** 2
    safe = np.where(r > 0, r, 1.0)
    cur = np.where(r > 0, (chi * q.imag) ** 2 / safe, 0.0)
    osm = np.where(r > 0, (chi * q.real) ** 2 / safe, 0.0)
    return cur, osm


def _node_gradients(field: WaveField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    psi = field.psi
    rho = field.rho
    safe = np.where(rho > 0, rho, 1.0)
    gR, gS = [], []
    for ax, h in enumerate(field.spacing):
        q = np.conj(psi) * np.gradient(psi, h, axis=ax) / safe
        gR.append(field.chi * q.real)
        gS.append(field.chi * q.imag)
    return np.stack(gR, -1), np.stack(gS, -1), rho


def field_energy(field: WaveField, params: HeatbathParams,
                 stats: ScatteringStats | None = None) -> FieldEnergy:
    """Total-energy functional of a wave field in the field's own convention.

    The current velocity is ξ(∇S − A) and the osmotic velocity γδ∇R with
    R, S read through the field's χ. Diagonal terms are evaluated on cell
    edges, off-diagonal Γ^z terms and the Z̄ cross term on nodes.
    E[Φ_p] is ∫ρφ.
    """
    if field.ndim != params.n:
        raise DomainError(f"field is {field.ndim}D but params.n={params.n}")
    G, Zb = _gamma_z(params, stats)
    cell = field.cell
    norm = np.sum(field.rho) * cell
    xi, dl = field.xi, field.delta
    current = osmotic = 0.0
    for ax, h in enumerate(field.spacing):
        cur, osm = _edge_terms(field.psi, h, ax, field.chi, field.A)
        current += 0.5 * params.M_T * xi**2 * np.sum(cur) * cell / norm
        osmotic += 0.5 * params.M_T * G[ax, ax] * dl**2 * np.sum(osm) * cell / norm
    cross = 0.0
    off = G - np.diag(np.diag(G))
    if np.any(off) or np.any(Zb):
        gR, gS, rho = _node_gradients(field)
        cur_v = xi * gS
        osm_v = dl * gR
        dens = (np.einsum("...i,ij,...j->...", osm_v, off, osm_v)
                - 2.0 * params.gamma * np.einsum("...i,ij,...j->...", cur_v, Zb, osm_v))
        cross = 0.5 * params.M_T * float(np.sum(rho * dens)) * cell / norm
    pot = float(np.sum(field.rho * field.phi)) * cell / norm
    return FieldEnergy(field.t, float(current), float(osmotic), cross, pot,
                       energy_constant(params, stats))


class AuditResult(NamedTuple):
    t: np.ndarray
    E_HT: np.ndarray
    max_relative_drift: float
    max_dynamic_drift: float


def conservation_audit(fields: Sequence[WaveField], params: HeatbathParams,
                       stats: ScatteringStats | None = None) -> AuditResult:
    """E[H_T] per snapshot and its largest relative change from the start.

    ``max_dynamic_drift`` measures the change relative to the part of the
    energy that excludes the additive constant.
    """
    if not fields:
        raise DomainError("no snapshots to audit")
    series = [field_energy(f, params, stats) for f in fields]
    E = np.array([s.E_HT for s in series])
    dyn = np.array([s.dynamic for s in series])
    rel = float(np.max(np.abs(E - E[0])) / abs(E[0]))
    scale = abs(dyn[0]) if dyn[0] != 0 else 1.0
    return AuditResult(np.array([s.t for s in series]), E, rel,
                       float(np.max(np.abs(dyn - dyn[0])) / scale))


# -- heat-equation counterexample -------------------------------------------------

def heat_energy_closed_form(params: HeatbathParams, t: float | np.ndarray) -> float | np.ndarray:
    """E[H_k](t) = 2nε/(sin²θτ̄)(1 + τ̄/(4t)) for Brownian spreading from a point."""
    return params.diffusion_const_total * (1.0 + params.tau_bar / (4.0 * np.asarray(t)))


def heat_energy_alternative(params: HeatbathParams, t: float | np.ndarray) -> float | np.ndarray:
    """The alternative closed form ε(1 + 4τ̄/(nt))/(4γ sinθ τ̄), kept for comparison."""
    t = np.asarray(t)
    return (params.epsilon * (1.0 + 4.0 * params.tau_bar / (params.n * t))
            / (4.0 * params.gamma * params.sin_theta * params.tau_bar))


class HeatAudit(NamedTuple):
    t: np.ndarray
    E_HT: np.ndarray
    closed_form: np.ndarray


def heat_equation_audit(params: HeatbathParams, x: np.ndarray, t0: float, t1: float,
                        steps: int, snapshots: int = 5) -> HeatAudit:
    """Evolve ρ_t = (σ²/2)ρ_xx from N(0, σ²t0) and track the energy.

    The density is stepped with Crank–Nicolson; b⁺ = 0 and
    b⁻ = −σ²∂_x log ρ come from the evolved density.
    """
    if params.n != 1:
        raise DomainError("the heat-equation audit is one-dimensional")
    if not 0 < t0 < t1:
        raise DomainError("need 0 < t0 < t1")
    x = np.asarray(x, dtype=float)
    h = float(x[1] - x[0])
    s2 = params.sigma**2
    rho = np.exp(-0.5 * x * x / (s2 * t0)) / math.sqrt(2 * math.pi * s2 * t0)
    dt = (t1 - t0) / steps
    r = 0.25 * s2 * dt / (h * h)
    N = x.size
    ab = np.zeros((3, N))
    ab[0, 1:] = -r
    ab[1, :] = 1 + 2 * r
    ab[2, :-1] = -r
    every = max(int(steps // (snapshots - 1)), 1)
    ts, Es = [], []

    def record(t, rho):
        rho = rho / (rho.sum() * h)
        with np.errstate(divide="ignore"):
            logr = np.log(np.where(rho > 0, rho, np.nan))
        bm = -s2 * np.gradient(logr, h)
        keep = rho > 1e-14 * rho.max()
        bm = np.where(keep, bm, 0.0)
        ts.append(t)
        Es.append(total_energy(rho, np.zeros_like(rho), bm, 0.0, params, h))

    record(t0, rho)
    for k in range(1, steps + 1):
        rhs = (1 - 2 * r) * rho
        rhs[1:] += r * rho[:-1]
        rhs[:-1] += r * rho[1:]
        rho = solve_banded((1, 1), ab, rhs)
        if k % every == 0 or k == steps:
            if not ts or abs(ts[-1] - (t0 + k * dt)) > 1e-12:
                record(t0 + k * dt, rho)
    t = np.array(ts)
    return HeatAudit(t, np.array(Es), heat_energy_closed_form(params, t))


# -- wave packet -----------------------------------------------------------------

def packet_energy_report(spec: WavePacketSpec, params: HeatbathParams, t: float) -> EnergyReport:
    """Closed-form energies of the free Gaussian packet at time t.

    H±_M = Mσ_e²(α_w t ∓ γ/(2σ_e²))²/(2M_T²Z_Γ) + Mp₀²/(2M_T²) + ε/τ̄ and
    H±_m = mσ_e²(α_w t ± 1/(2γσ_e²))²/(2M_T²Z_Γ) + mp₀²/(2M_T²) + mω²/τ̄.
    Pass ``t=math.inf`` for the long-time limit.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    M, m, MT, g = params.M, params.m, spec.M_T, params.gamma
    se2, p0 = spec.sigma_e**2, spec.p0
    aw = spec.alpha_w
    if math.isinf(t):
        main_pm = bath_pm = (se2 / (2 * MT**2),) * 2
    else:
        Z = spec.Z_gamma(t)
        main_pm = tuple(se2 * (aw * t + s * g / (2 * se2)) ** 2 / (2 * MT**2 * Z) for s in (-1, 1))
        bath_pm = tuple(se2 * (aw * t + s / (2 * g * se2)) ** 2 / (2 * MT**2 * Z) for s in (1, -1))
    drift = p0**2 / (2 * MT**2)
    e_main, e_bath = params.diffusion_const_main, params.diffusion_const_bath
    Hp_M, Hm_M = (M * (v + drift) + e_main for v in main_pm)
    Hp_m, Hm_m = (m * (v + drift) + e_bath for v in bath_pm)
    E_Hk = 0.5 * (Hp_M + Hm_M + Hp_m + Hm_m)
    return EnergyReport(Hp_M, Hm_M, Hp_m, Hm_m, E_Hk, E_Hk, e_main,
                        params.diffusion_const_total, float(t))


def packet_total_energy(spec: WavePacketSpec, params: HeatbathParams) -> float:
    """σ_e²/(2M_T) + p₀²/(2M_T) + 2ε/(sin²θτ̄), independent of t."""
    return (spec.sigma_e**2 + spec.p0**2) / (2 * spec.M_T) + params.diffusion_const_total


def packet_quadrature_report(spec: WavePacketSpec, params: HeatbathParams, t: float,
                             x: np.ndarray) -> EnergyReport:
    """Packet energies by quadrature of the closed-form drifts on grid ``x``."""
    if params.n != 1:
        raise DomainError("the packet report is one-dimensional")
    v = gaussian_packet(spec, x, t)
    h = float(x[1] - x[0])
    rho = v.rho / (v.rho.sum() * h)
    b_plus = (v.dS + params.gamma * v.dR) / spec.M_T
    b_minus = (v.dS - params.gamma * v.dR) / spec.M_T
    Hp_M, Hm_M, Hp_m, Hm_m = forward_backward_energy(b_plus, b_minus, rho, params, h)
    E_Hk = 0.5 * (Hp_M + Hm_M + Hp_m + Hm_m)
    E_HT = total_energy(rho, b_plus, b_minus, 0.0, params, h)
    return EnergyReport(Hp_M, Hm_M, Hp_m, Hm_m, E_Hk, E_HT, params.diffusion_const_main,
                        params.diffusion_const_total, float(t))


# -- Brownian radiation ----------------------------------------------------------

class RadiationResult(NamedTuple):
    """Estimates of 2(H⁺_M − H⁻_M) at each requested time."""

    t: np.ndarray
    mc_estimate: np.ndarray
    std_error: np.ndarray
    closed_form: np.ndarray


def radiation_closed_form(params: HeatbathParams, t: float | np.ndarray) -> float | np.ndarray:
    """2(H⁺_M − H⁻_M) = −nMσ²/t for Brownian paths from the origin."""
    return -params.n * params.M * params.sigma**2 / np.asarray(t, dtype=float)


def _radiation_chunk(params: HeatbathParams, ts: np.ndarray, size: int, seed: int,
                     stream: int, window: float, time_degree: int):
    n = params.n
    T = float(ts.max() * (1 + window))
    ens = simulate_ensemble(zero_drift(), params, np.zeros(n), T, size, make_rng(seed, stream))
    times, pos = ens.times, ens.positions
    regs, positions, est = [], [], np.zeros(len(ts))
    for k, tt in enumerate(ts):
        ok = np.zeros_like(times, dtype=bool)
        ok[:, 1:-1] = (np.abs(times[:, 1:-1] - tt) <= window * tt) & np.isfinite(times[:, 2:])
        r, j = np.nonzero(ok)
        s = times[r, j]
        xj = pos[r, j]
        tau2 = times[r, j + 1] - s
        tau1 = s - times[r, j - 1]
        fwd = (pos[r, j + 1] - xj) / tau2[:, None]
        bwd = (xj - pos[r, j - 1]) / tau1[:, None]
        X = ens.at(tt)
        positions.append(X)
        per_dim = []
        for d in range(n):
            pair = (DriftRegressor(tt, time_degree=time_degree).fit(xj[:, d], s, fwd[:, d], tau2),
                    DriftRegressor(tt, time_degree=time_degree).fit(xj[:, d], s, bwd[:, d], tau1))
            bp, bm = (reg.predict(X[:, d]) for reg in pair)
            est[k] += params.M * np.mean(bp * bp - bm * bm)
            per_dim.append(pair)
        regs.append(per_dim)
    return regs, positions, est


def brownian_radiation(params: HeatbathParams, t: float | Sequence[float], N_paths: int,
                       seed: int = 0, chunks: int = 10, window: float = 0.4,
                       time_degree: int = 3, workers: int = 1) -> RadiationResult:
    """Monte Carlo estimate of 2(H⁺_M − H⁻_M) along zero-drift collision paths.

    Forward and backward collision velocities Δ±x/τ are regressed on the
    collision position within ``window``·t of each evaluation time, with
    a polynomial of order ``time_degree`` in the collision time. A
    velocity sample has noise variance σ²/τ, so it is weighted by its
    interval τ. The fitted conditional means are the drifts b±, and
    2(H⁺ − H⁻) is M·E[|b̂⁺|² − |b̂⁻|²] over the positions at t. Standard
    errors come from the spread of per-chunk estimates.

    Chunks use their own random streams and run on ``workers`` threads;
    they are pooled in chunk order, so the result does not depend on
    ``workers``.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 10 * params.tau_bar):
        raise DomainError("radiation estimates need t >= 10 tau_bar")
    if N_paths < chunks or chunks < 2:
        raise DomainError("need at least two chunks with one path each")
    if workers < 1:
        raise DomainError("workers must be at least 1")
    sizes = np.full(chunks, N_paths // chunks)
    sizes[: N_paths % chunks] += 1
    jobs = [(params, ts, int(size), seed, c, window, time_degree) for c, size in enumerate(sizes)]
    if workers == 1:
        results = [_radiation_chunk(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _radiation_chunk(*job), jobs))
    per_chunk = np.array([r[2] for r in results])
    mc = np.zeros(len(ts))
    for k, tt in enumerate(ts):
        X = np.concatenate([r[1][k] for r in results])
        for d in range(params.n):
            pooled = [DriftRegressor(tt, time_degree=time_degree) for _ in range(2)]
            for r in results:
                for p, reg in zip(pooled, r[0][k][d]):
                    p.merge(reg)
            bp, bm = (reg.predict(X[:, d]) for reg in pooled)
            mc[k] += params.M * np.mean(bp * bp - bm * bm)
    se = per_chunk.std(axis=0, ddof=1) / math.sqrt(chunks)
    return RadiationResult(ts, mc, se, radiation_closed_form(params, ts))
