"""Schrödinger fields that generate equilibrium drifts.

A :class:`WaveField` stores ψ on a uniform grid together with the drift
weights ξ, δ and the scattering scale σ_ν. The real fields R and S are
read off through ψ = e^{(R+iS)/χ}, where χ is the field's own scale, so a
field produced by :func:`evolve_scaled` carries χ_ν and all derived
quantities use it.

Time stepping is Crank–Nicolson on the three-point Laplacian. The 2D
solver handles separable potentials only and applies the two axis
propagators in turn; they commute, so the product is still unitary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal, lapack
from scipy.special import eval_hermite

from .params import DomainError, HeatbathParams

RHO_FLOOR = 1e-12
NORM_TOL = 1e-10
MAX_PHASE_PER_STEP = 1e4


class SolverError(RuntimeError):
    """The time stepper lost norm beyond tolerance."""


def _uniform_spacing(grid: np.ndarray, name: str) -> float:
    if grid.ndim != 1 or grid.size < 5:
        raise DomainError(f"{name} must be a 1D grid with at least 5 nodes")
    steps = np.diff(grid)
    h = float(steps.mean())
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise DomainError(f"{name} must be uniform and increasing")
    return h


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WaveField:
    """Immutable snapshot of ψ on a 1D or 2D tensor grid.

    Parameters
    ----------
    x, y : ndarray
        Uniform axis grids. ``y`` is None for 1D fields.
    psi : ndarray
        Complex amplitudes, shape ``(len(x),)`` or ``(len(x), len(y))``.
    phi : ndarray
        Potential values with the shape of ``psi``.
    chi, M_T : float
        Field scale and total mass.
    xi, delta : float
        Weights of the current and osmotic parts of the drift.
    sigma_nu : float
        Scattering scale, 1 without scattering.
    A : ndarray, optional
        Static vector potential on the nodes (1D only).
    """

    x: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    chi: float
    M_T: float
    xi: float
    delta: float
    sigma_nu: float = 1.0
    t: float = 0.0
    y: np.ndarray | None = None
    A: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        _uniform_spacing(x, "x")
        shape = (x.size,)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            _uniform_spacing(y, "y")
            shape = (x.size, y.size)
            object.__setattr__(self, "y", _frozen(y))
        psi = np.asarray(self.psi, dtype=complex)
        phi = np.asarray(self.phi, dtype=float)
        if psi.shape != shape or phi.shape != shape:
            raise DomainError(f"psi and phi must have shape {shape}")
        if not np.all(np.isfinite(psi)):
            raise DomainError("psi contains non-finite values")
        for name in ("chi", "M_T", "xi", "delta", "sigma_nu"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive, got {v!r}")
        if self.A is not None:
            if self.y is not None:
                raise DomainError("a vector potential is supported on 1D fields only")
            A = np.asarray(self.A, dtype=float)
            if A.shape != shape:
                raise DomainError(f"A must have shape {shape}")
            object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "psi", _frozen(psi))
        object.__setattr__(self, "phi", _frozen(phi))

    @property
    def ndim(self) -> int:
        return 1 if self.y is None else 2

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.x,) if self.y is None else (self.x, self.y)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoid quadrature over the grid."""
        out = np.asarray(f)
        for h in self.spacing:
            out = np.trapezoid(out, dx=h, axis=0)
        return float(out)

    def norm(self) -> float:
        return self.integrate(self.rho)

    def mask(self, floor: float = RHO_FLOOR) -> np.ndarray:
        """True where ρ is too small for drifts to be trusted."""
        rho = self.rho
        return rho < floor * rho.max()

    def R(self) -> np.ma.MaskedArray:
        m = self.mask()
        with np.errstate(divide="ignore"):
            r = 0.5 * self.chi * np.log(self.rho)
        return np.ma.masked_array(r, m)

    def with_psi(self, psi: np.ndarray, t: float) -> "WaveField":
        return replace(self, psi=psi, t=float(t))


def make_field(x: np.ndarray, psi: np.ndarray, params: HeatbathParams,
               phi: np.ndarray | None = None, y: np.ndarray | None = None,
               A: np.ndarray | None = None, t: float = 0.0,
               normalize: bool = True) -> WaveField:
    """Field with the unscaled weights χ, ξ = δ = 1/M_T."""
    psi = np.asarray(psi, dtype=complex)
    if phi is None:
        phi = np.zeros(psi.shape)
    f = WaveField(x=x, psi=psi, phi=phi, chi=params.chi, M_T=params.M_T,
                  xi=1.0 / params.M_T, delta=1.0 / params.M_T, t=t, y=y, A=A)
    if normalize:
        nrm = f.norm()
        if not nrm > 0:
            raise DomainError("psi has zero norm")
        f = f.with_psi(f.psi / math.sqrt(nrm), t)
    return f


# -- potentials ---------------------------------------------------------------

def potential(name: str, x: np.ndarray, **kw: float) -> np.ndarray:
    """Catalog potential on a 1D grid: ``zero``, ``linear`` or ``harmonic``.

    ``linear`` is g·x and ``harmonic`` is ½k(x − x0)².
    """
    x = np.asarray(x, dtype=float)
    if name == "zero":
        return np.zeros_like(x)
    if name == "linear":
        return float(kw.get("g", 1.0)) * x
    if name == "harmonic":
        k = float(kw.get("k", 1.0))
        if k <= 0:
            raise DomainError("harmonic stiffness k must be positive")
        return 0.5 * k * (x - float(kw.get("x0", 0.0))) ** 2
    raise DomainError(f"unknown potential {name!r}; choose zero, linear or harmonic")


def harmonic_eigenstate(x: np.ndarray, level: int, chi: float, M_T: float,
                        k: float) -> np.ndarray:
    """Continuum oscillator eigenfunction with scale χ and mass M_T."""
    omega = math.sqrt(k / M_T)
    a = math.sqrt(chi / (M_T * omega))
    u = np.asarray(x, dtype=float) / a
    norm = 1.0 / math.sqrt(2.0**level * math.factorial(level) * math.sqrt(math.pi) * a)
    return norm * eval_hermite(level, u) * np.exp(-0.5 * u * u)


def _hamiltonian_bands(h: float, phi: np.ndarray, chi: float, M_T: float,
                       A: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kin = chi**2 / (2.0 * M_T * h * h)
    diag = 2.0 * kin + phi.astype(complex)
    off = np.full(phi.size - 1, -kin, dtype=complex)
    upper, lower = off.copy(), off.copy()
    if A is not None:
        # Peierls phases keep the minimal-coupling operator Hermitian
        a_mid = 0.5 * (A[1:] + A[:-1])
        upper = off * np.exp(-1j * a_mid * h / chi)
        lower = np.conj(upper)
    return lower, diag, upper


def lattice_eigenstates(x: np.ndarray, phi: np.ndarray, chi: float, M_T: float,
                        levels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the discrete Hamiltonian the solver propagates.

    Returns energies and states normalized so that Σ|ψ|²dx = 1.
    """
    h = _uniform_spacing(np.asarray(x, dtype=float), "x")
    _, diag, upper = _hamiltonian_bands(h, np.asarray(phi, dtype=float), chi, M_T)
    lo, hi = min(levels), max(levels)
    w, v = eigh_tridiagonal(diag.real, upper.real, select="i", select_range=(lo, hi))
    idx = [lv - lo for lv in levels]
    states = v[:, idx].T / math.sqrt(h)
    return w[idx], states


def harmonic_superposition(params: HeatbathParams, x: np.ndarray, levels: Sequence[int] = (0, 1),
                           k: float = 1.0, y: np.ndarray | None = None) -> WaveField:
    """Equal-weight superposition of lattice oscillator eigenstates in φ = ½k|x|².

    With ``y`` the state is the product of the same superposition along
    both axes and φ is the separable sum.
    """
    if len(levels) < 1 or len(set(levels)) != len(levels) or min(levels) < 0:
        raise DomainError("levels must be distinct non-negative integers")
    axes = (x,) if y is None else (x, y)
    parts, pots = [], []
    for a in axes:
        a = np.asarray(a, dtype=float)
        phi = potential("harmonic", a, k=k)
        _, states = lattice_eigenstates(a, phi, params.chi, params.M_T, levels)
        parts.append(states.sum(axis=0))
        pots.append(phi)
    if y is None:
        return make_field(x, parts[0], params, phi=pots[0])
    return make_field(x, np.outer(*parts), params, phi=pots[0][:, None] + pots[1][None, :], y=y)


# -- Gaussian packet ---------------------------------------------------------

@dataclass(frozen=True)
class WavePacketSpec:
    """Free Gaussian packet with momentum mean p0 and momentum spread σ_e."""

    p0: float
    sigma_e: float
    M_T: float
    chi: float

    def __post_init__(self) -> None:
        for name in ("sigma_e", "M_T", "chi"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive, got {v!r}")

    @classmethod
    def from_params(cls, params: HeatbathParams, p0: float, sigma_e: float) -> "WavePacketSpec":
        return cls(p0=p0, sigma_e=sigma_e, M_T=params.M_T, chi=params.chi)

    @property
    def alpha_w(self) -> float:
        return 1.0 / (self.chi * self.M_T)

    def Z_gamma(self, t: float | np.ndarray) -> float | np.ndarray:
        """Z_Γ(t) = 1/(4σ_e⁴) + α_w²t²."""
        return 0.25 / self.sigma_e**4 + (self.alpha_w * np.asarray(t)) ** 2

    def mean(self, t: float) -> float:
        return self.p0 * t / self.M_T

    def variance(self, t: float | np.ndarray) -> float | np.ndarray:
        return self.chi**2 * self.sigma_e**2 * self.Z_gamma(t)


class PacketValues(NamedTuple):
    R: np.ndarray
    S: np.ndarray
    dR: np.ndarray
    dS: np.ndarray
    rho: np.ndarray
    lapR: np.ndarray


def gaussian_packet(spec: WavePacketSpec, x: np.ndarray, t: float) -> PacketValues:
    """Closed-form R, S, their derivatives and ρ of the free packet.

    The phase carries the Gouy term −(χ/2)arctan(τ) with
    τ = 2σ_e²t/(M_Tχ), so S is continuous in x and t.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    x = np.asarray(x, dtype=float)
    chi, M = spec.chi, spec.M_T
    var = spec.variance(t)
    y = x - spec.mean(t)
    log_rho = -0.5 * y * y / var - 0.5 * math.log(2.0 * math.pi * var)
    rho = np.exp(log_rho)
    R = 0.5 * chi * log_rho
    dR = -0.5 * chi * y / var
    tau = 2.0 * spec.sigma_e**2 * t / (M * chi)
    S = (spec.p0 * x - spec.p0**2 * t / (2.0 * M) + chi * tau * y * y / (4.0 * var)
         - 0.5 * chi * math.atan(tau))
    dS = spec.p0 + chi * tau * y / (2.0 * var)
    lapR = np.full_like(x, -0.5 * chi / var)
    return PacketValues(R, S, dR, dS, rho, lapR)


def packet_psi(spec: WavePacketSpec, x: np.ndarray, t: float) -> np.ndarray:
    v = gaussian_packet(spec, x, t)
    return np.sqrt(v.rho) * np.exp(1j * v.S / spec.chi)


# -- derivatives ---------------------------------------------------------------

def _diff1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order central first derivative; second order next to edges."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    out[1] = (f[2] - f[0]) / (2.0 * h)
    out[-2] = (f[-1] - f[-3]) / (2.0 * h)
    out[0] = (f[1] - f[0]) / h
    out[-1] = (f[-1] - f[-2]) / h
    return np.moveaxis(out, 0, axis)


def _diff2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(np.asarray(f), axis, 0)
    out = np.full_like(f, np.nan)
    out[2:-2] = (-f[:-4] + 16.0 * f[1:-3] - 30.0 * f[2:-2] + 16.0 * f[3:-1] - f[4:]) / (12.0 * h * h)
    out[1] = (f[2] - 2.0 * f[1] + f[0]) / (h * h)
    out[-2] = (f[-1] - 2.0 * f[-2] + f[-3]) / (h * h)
    return np.moveaxis(out, 0, axis)


class FieldGradients(NamedTuple):
    grad_R: np.ndarray
    grad_S: np.ndarray
    lap_R: np.ndarray
    mask: np.ndarray


def field_gradients(field: WaveField, floor: float = RHO_FLOOR) -> FieldGradients:
    """∇R and ∇S from ψ*∇ψ/ρ, and ΔR from log ρ.

    Vector outputs have a trailing axis of length ``field.ndim``. Masked
    nodes hold NaN.
    """
    psi = field.psi
    rho = field.rho
    mask = field.mask(floor)
    safe = np.where(mask, 1.0, rho)
    gR, gS = [], []
    for ax, h in enumerate(field.spacing):
        q = np.conj(psi) * _diff1(psi, h, ax) / safe
        gR.append(field.chi * q.real)
        gS.append(field.chi * q.imag)
    with np.errstate(divide="ignore"):
        logr = np.log(np.where(mask, 1.0, rho))
    lap = sum(_diff2(logr, h, ax) for ax, h in enumerate(field.spacing))
    lap = 0.5 * field.chi * lap
    # the stencils reach two nodes, so grow the mask to keep tails out
    wide = mask.copy()
    for ax in range(field.ndim):
        for s in (1, 2):
            wide |= np.roll(mask, s, axis=ax) | np.roll(mask, -s, axis=ax)
    for ax in range(field.ndim):
        idx = [slice(None)] * field.ndim
        for edge in (0, 1, -2, -1):
            idx[ax] = edge
            wide[tuple(idx)] = True
    grad_R = np.stack(gR, axis=-1)
    grad_S = np.stack(gS, axis=-1)
    grad_R[wide] = np.nan
    grad_S[wide] = np.nan
    lap = np.where(wide, np.nan, lap)
    return FieldGradients(grad_R, grad_S, lap, wide)


class WaveDrifts(NamedTuple):
    """Forward/backward drifts of the main particle and the heatbath."""

    b_plus: np.ma.MaskedArray
    b_minus: np.ma.MaskedArray
    g_plus: np.ma.MaskedArray
    g_minus: np.ma.MaskedArray

    @property
    def masked_fraction(self) -> float:
        return float(np.ma.getmaskarray(self.b_plus).mean())


def _vector_potential(field: WaveField) -> np.ndarray:
    if field.A is None:
        return np.zeros(field.psi.shape + (field.ndim,))
    return field.A[..., None]


def drifts_from_wave(field: WaveField, params: HeatbathParams) -> WaveDrifts:
    """b± = ξ(∇S − A) ± γδ∇R and g± = ξ(∇S − A) ∓ δ∇R/γ.

    With ξ = δ = 1/M_T these are (∇S ± γ∇R)/M_T and (∇S ∓ ∇R/γ)/M_T.
    1D fields return 1D arrays; 2D fields keep a trailing vector axis.
    """
    g = field_gradients(field)
    cur = field.xi * (g.grad_S - _vector_potential(field))
    osm = field.delta * g.grad_R
    gam = params.gamma
    parts = [cur + gam * osm, cur - gam * osm, cur - osm / gam, cur + osm / gam]
    mask = np.broadcast_to(g.mask[..., None], cur.shape)
    out = []
    for p in parts:
        if field.ndim == 1:
            out.append(np.ma.masked_array(p[..., 0], g.mask))
        else:
            out.append(np.ma.masked_array(p, mask))
    return WaveDrifts(*out)


# -- Crank–Nicolson ------------------------------------------------------------

class _AxisStepper:
    """Pre-factored CN step along one axis."""

    def __init__(self, h: float, phi: np.ndarray, chi: float, M_T: float, dt: float,
                 A: np.ndarray | None = None) -> None:
        lower, diag, upper = _hamiltonian_bands(h, phi, chi, M_T, A)
        c = 0.5j * dt / chi
        self.r_lo, self.r_d, self.r_up = -c * lower, 1.0 - c * diag, -c * upper
        dl, d, du, du2, ipiv, info = lapack.zgttrf(c * lower, 1.0 + c * diag, c * upper)
        if info != 0:
            raise SolverError(f"tridiagonal factorization failed (info={info})")
        self.lu = (dl, d, du, du2, ipiv)

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        # psi has the stepped axis first; remaining axes are batched
        flat = psi.reshape(psi.shape[0], -1)
        rhs = self.r_d[:, None] * flat
        rhs[:-1] += self.r_up[:, None] * flat[1:]
        rhs[1:] += self.r_lo[:, None] * flat[:-1]
        out, info = lapack.zgttrs(*self.lu, rhs)
        if info != 0:
            raise SolverError(f"tridiagonal solve failed (info={info})")
        return out.reshape(psi.shape)


def _split_potential(field: WaveField) -> tuple[np.ndarray, ...]:
    phi = field.phi
    if field.ndim == 1:
        return (phi,)
    px = phi[:, 0] - phi[0, 0]
    py = phi[0, :].copy()
    if np.max(np.abs(phi - (px[:, None] + py[None, :]))) > 1e-12 * max(1.0, np.abs(phi).max()):
        raise DomainError("2D evolution needs a separable potential φ(x) + φ(y)")
    return (px, py)


def stability_number(field: WaveField, dt: float, chi: float | None = None) -> float:
    """Largest phase advance per step, dt·(max|φ|/χ + 2χ/(M_T dx²))."""
    chi = field.chi if chi is None else chi
    h = min(field.spacing)
    return dt * (np.abs(field.phi).max() / chi + 2.0 * chi / (field.M_T * h * h))


def _propagate(field: WaveField, chi: float, dt: float, steps: int,
               every: int | None) -> list[WaveField]:
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError("dt must be positive")
    if int(steps) != steps or steps < 0:
        raise DomainError("steps must be a non-negative integer")
    steps = int(steps)
    phase = stability_number(field, dt, chi)
    if phase > MAX_PHASE_PER_STEP:
        raise DomainError(f"dt too large: phase advance {phase:.3g} per step exceeds "
                          f"{MAX_PHASE_PER_STEP:g}")
    parts = _split_potential(field)
    steppers = [_AxisStepper(h, p, chi, field.M_T, dt, field.A if field.ndim == 1 else None)
                for h, p in zip(field.spacing, parts)]
    psi = np.array(field.psi, dtype=complex)
    norm0 = field.norm()
    snaps = []
    for k in range(1, steps + 1):
        for ax, stepper in enumerate(steppers):
            psi = np.moveaxis(stepper(np.moveaxis(psi, ax, 0)), 0, ax)
        if every and k % every == 0:
            snaps.append(field.with_psi(psi, field.t + k * dt))
    final = field.with_psi(psi, field.t + steps * dt)
    drift = abs(final.norm() - norm0)
    tol = NORM_TOL * max(1.0, steps * dt)
    if drift > tol:
        raise SolverError(f"norm drifted by {drift:.3e} over t={steps * dt:g} "
                          f"(tolerance {tol:.1e}); refine dt or widen the domain")
    if not every or steps % every:
        snaps.append(final)
    return snaps


def evolve_schrodinger(field: WaveField, dt: float, steps: int) -> WaveField:
    """Advance iχψ_t = −(1/2M_T)(χ∇ − iA)²ψ + φψ by ``steps`` CN steps.

    Boundaries are zero Dirichlet. Raises :class:`SolverError` when the
    norm drifts by more than 1e−10 per unit time.
    """
    return _propagate(field, field.chi, dt, steps, None)[-1]


def evolve_series(field: WaveField, dt: float, steps: int, every: int = 1,
                  nu: float = 0.0, gamma: float | None = None) -> list[WaveField]:
    """Snapshots every ``every`` steps, starting with ``field`` itself.

    With ``nu > 0`` the scaled evolution of :func:`evolve_scaled` is used
    and ``gamma`` is required.
    """
    start = field
    chi = field.chi
    if nu:
        if gamma is None:
            raise DomainError("gamma is required for scaled evolution")
        start = scaled_field(field, nu, gamma)
        chi = start.chi
    return [start] + _propagate(start, chi, dt, steps, every)


def scattering_scale(gamma: float, nu: float) -> float:
    """σ_ν = √(1 + (1+γ²)ν²) for the two-step matrices ±ν."""
    if not (gamma > 0 and math.isfinite(nu)):
        raise DomainError("need gamma > 0 and finite nu")
    return math.sqrt(1.0 + (1.0 + gamma * gamma) * nu * nu)


def scaled_field(field: WaveField, nu: float, gamma: float) -> WaveField:
    """Relabel ``field`` with χ_ν = χ/σ_ν, ξ = 1/M_T, δ = 1/(σ_ν M_T).

    ψ is kept as given, so the initial density is unchanged.
    """
    s = scattering_scale(gamma, nu)
    base_chi = field.chi * field.sigma_nu
    return replace(field, chi=base_chi / s, xi=1.0 / field.M_T,
                   delta=1.0 / (s * field.M_T), sigma_nu=s)


def evolve_scaled(field: WaveField, nu: float, dt: float, steps: int,
                  gamma: float) -> WaveField:
    """Evolve with the scale χ_ν of the two-step scattering ensemble.

    At ν = 0 this runs the exact same arithmetic as
    :func:`evolve_schrodinger`.
    """
    start = scaled_field(field, nu, gamma)
    return _propagate(start, start.chi, dt, steps, None)[-1]


# -- residual checks -------------------------------------------------------------

def hjb_terms(S_t: np.ndarray, dR: np.ndarray, dS: np.ndarray, lapR: np.ndarray,
              phi: np.ndarray, *, xi: float, delta: float, chi: float, M_T: float,
              sigma_nu: float = 1.0, A: np.ndarray | float = 0.0,
              A_t: np.ndarray | float = 0.0, form: str = "standard") -> np.ndarray:
    """Pointwise Hamilton–Jacobi residual in the (R, S) variables.

    ``form="standard"`` evaluates

        ξ(S_t − A_t) + (ξ²/2)|∇S − A|² − (σ_ν²δ²/2)|∇R|² − (χσ_ν²δ²/2)ΔR + ξφ,

    which vanishes for solutions of the field's own Schrödinger equation.
    ``form="alternative"`` evaluates

        ξ²(S_t − A_t) + (ξ²/2)|∇S − A|² − (δ²/2)|∇R|² − (ηδ/2)ΔR + φ/(ξM_T)

    with η = χ/M_T; the two agree only when M_T = 1.
    """
    dR = np.asarray(dR)
    dS = np.asarray(dS)
    if dR.ndim == np.ndim(phi):
        dR = dR[..., None]
        dS = dS[..., None]
    A = np.asarray(A)
    if A.ndim == np.ndim(phi) and A.ndim > 0:
        A = A[..., None]
    cur2 = np.sum((dS - A) ** 2, axis=-1)
    osm2 = np.sum(dR**2, axis=-1)
    if form == "standard":
        s2d2 = sigma_nu**2 * delta**2
        return (xi * (S_t - A_t) + 0.5 * xi**2 * cur2 - 0.5 * s2d2 * osm2
                - 0.5 * chi * s2d2 * lapR + xi * phi)
    if form == "alternative":
        eta = chi / M_T
        return (xi**2 * (S_t - A_t) + 0.5 * xi**2 * cur2 - 0.5 * delta**2 * osm2
                - 0.5 * eta * delta * lapR + phi / (xi * M_T))
    raise DomainError(f"form must be 'standard' or 'alternative', got {form!r}")


def phase_rate(before: WaveField, after: WaveField) -> np.ndarray:
    """S_t by a central difference of the phase, free of branch cuts."""
    dt = after.t - before.t
    if not dt > 0:
        raise DomainError("snapshots must be ordered in time")
    return after.chi * np.angle(after.psi * np.conj(before.psi)) / dt


def hjb_residual(field: WaveField, before: WaveField, after: WaveField,
                 form: str = "standard") -> np.ma.MaskedArray:
    """HJB residual of ``field`` using its two neighbouring snapshots."""
    g = field_gradients(field)
    S_t = phase_rate(before, after)
    A = 0.0 if field.A is None else field.A
    res = hjb_terms(S_t, g.grad_R, g.grad_S, g.lap_R, field.phi, xi=field.xi,
                    delta=field.delta, chi=field.chi, M_T=field.M_T,
                    sigma_nu=field.sigma_nu, A=A, form=form)
    return np.ma.masked_invalid(np.ma.masked_array(res, g.mask))


def mean_position(field: WaveField) -> np.ndarray:
    rho = field.rho
    w = field.integrate(rho)
    return np.array([field.integrate(c * rho) / w for c in field.mesh()])


class Ehrenfest(NamedTuple):
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def ehrenfest_check(fields: Sequence[WaveField],
                    grad_phi: Callable[..., np.ndarray] | None = None) -> Ehrenfest:
    """Acceleration of ⟨x⟩ against −(1/M_T)∫ρ∇φ at interior snapshots.

    ``grad_phi`` may give ∇φ analytically on the mesh; otherwise it is
    taken from ``phi`` by finite differences.
    """
    if len(fields) < 3:
        raise DomainError("need at least three snapshots")
    ts = np.array([f.t for f in fields])
    h = np.diff(ts)
    if np.max(np.abs(h - h[0])) > 1e-9 * h[0]:
        raise DomainError("snapshots must be equally spaced in time")
    means = np.array([mean_position(f) for f in fields])
    lhs = (means[2:] - 2.0 * means[1:-1] + means[:-2]) / h[0] ** 2
    rhs = []
    for f in fields[1:-1]:
        if grad_phi is not None:
            gp = np.atleast_1d(grad_phi(*f.mesh()))
            comps = [gp] if f.ndim == 1 else list(gp)
        else:
            comps = [_diff1(f.phi, sp, ax) for ax, sp in enumerate(f.spacing)]
        rho = f.rho / f.norm()
        rhs.append([-f.integrate(rho * c) / f.M_T for c in comps])
    return Ehrenfest(ts[1:-1], lhs, np.array(rhs))
