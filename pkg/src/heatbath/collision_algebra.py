"""Elastic collision kernels between a main and a heatbath particle.

A collision maps pre-collision velocities (v1, w1) to (v2, w2) through a
2n×2n matrix Γ = [[P, Q], [V, G]] that conserves momentum and kinetic
energy. With scalar masses every such Γ is fixed by an orthogonal U, and
the antisymmetric scattering matrix Z = I − 2(I+U)⁻¹ measures how far the
collision is from the simple one (U = I, Z = 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .params import DomainError, HeatbathParams
from .stochastic_clock import as_rng

SINGULAR_TOL = 1e-8
MAX_REJECTIONS = 100


def _T(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", A, x)


@dataclass(frozen=True)
class CollisionKernel:
    """Blocks of Γ = [[P, Q], [V, G]].

    The blocks may carry leading batch axes, one kernel per collision.
    """

    n: int
    U: np.ndarray
    Z: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    G: np.ndarray
    M_mat: np.ndarray = field(repr=False)
    m_mat: np.ndarray = field(repr=False)

    @property
    def Gamma(self) -> np.ndarray:
        top = np.concatenate([self.P, self.Q], axis=-1)
        bottom = np.concatenate([self.V, self.G], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    @property
    def mass_matrix(self) -> np.ndarray:
        zero = np.zeros((self.n, self.n))
        return np.block([[self.M_mat, zero], [zero, self.m_mat]])

    def residuals(self) -> dict[str, float]:
        """Max-abs residuals of the conservation constraints."""
        D = self.mass_matrix
        Gm = self.Gamma
        n = self.n
        scale = max(1.0, float(np.abs(D).max()))
        out = {
            "energy": float(np.abs(_T(Gm) @ D @ Gm - D).max()) / scale,
            "momentum_main": float(np.abs(self.M_mat @ self.P + self.m_mat @ self.V
                                          - self.M_mat).max()) / scale,
            "momentum_bath": float(np.abs(self.M_mat @ self.Q + self.m_mat @ self.G
                                          - self.m_mat).max()) / scale,
            "orthogonal": float(np.abs(_T(self.U) @ self.U - np.eye(n)).max()),
            "antisymmetric": float(np.abs(self.Z + _T(self.Z)).max())
            / max(1.0, float(np.abs(self.Z).max())),
        }
        return out

    def to_dict(self) -> dict[str, list]:
        return {k: getattr(self, k).tolist() for k in ("U", "Z", "P", "Q", "V", "G")}


@dataclass(frozen=True)
class CollisionEvent:
    """One collision; velocity arrays may carry leading batch axes."""

    v1: np.ndarray
    v2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    Z: np.ndarray

    def residuals(self, M: float, m: float) -> dict[str, float]:
        p1 = M * self.v1 + m * self.w1
        p2 = M * self.v2 + m * self.w2
        e1 = M * np.sum(self.v1**2, -1) + m * np.sum(self.w1**2, -1)
        e2 = M * np.sum(self.v2**2, -1) + m * np.sum(self.w2**2, -1)
        pscale = np.maximum(1.0, M * np.abs(self.v1).max(-1) + m * np.abs(self.w1).max(-1))
        return {
            "momentum": float((np.abs(p2 - p1).max(-1) / pscale).max()),
            "energy": float((np.abs(e2 - e1) / np.maximum(1.0, e1)).max()),
        }


@dataclass(frozen=True)
class ScatteringStats:
    Z_mean: np.ndarray
    ZZt_mean: np.ndarray
    gamma: float

    @property
    def Gamma_z(self) -> np.ndarray:
        return np.eye(self.Z_mean.shape[0]) + (1.0 + self.gamma**2) * self.ZZt_mean

    @classmethod
    def none(cls, n: int, gamma: float) -> "ScatteringStats":
        return cls(np.zeros((n, n)), np.zeros((n, n)), gamma)

    @classmethod
    def from_samples(cls, Z: np.ndarray, gamma: float) -> "ScatteringStats":
        Z = np.asarray(Z, dtype=float)
        return cls(Z.mean(0), np.einsum("kij,klj->il", Z, Z) / len(Z), gamma)


# -- scattering ensembles ---------------------------------------------------

class ScatteringEnsemble(Protocol):
    n: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray: ...


@dataclass(frozen=True)
class HaarEnsemble:
    """Z built from Haar-random orthogonal U."""

    n: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.stack([scattering_from_unitary(sample_orthogonal(self.n, rng))
                         for _ in range(size)])


@dataclass(frozen=True)
class FiniteEnsemble:
    """Finitely many scattering matrices with given probabilities."""

    matrices: tuple[np.ndarray, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.matrices) != len(self.probs) or not self.matrices:
            raise DomainError("need one probability per scattering matrix")
        if any(p < 0 for p in self.probs) or not np.isclose(sum(self.probs), 1.0):
            raise DomainError("probabilities must be non-negative and sum to 1")
        for Zk in self.matrices:
            if np.abs(Zk + Zk.T).max() > 1e-12:
                raise DomainError("scattering matrices must be antisymmetric")

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.matrices), size=size, p=np.asarray(self.probs))
        return np.stack(self.matrices)[idx]

    def stats(self, gamma: float) -> ScatteringStats:
        Zs = np.stack(self.matrices)
        w = np.asarray(self.probs)
        return ScatteringStats(np.einsum("k,kij->ij", w, Zs),
                               np.einsum("k,kij,klj->il", w, Zs, Zs), gamma)


def two_step_ensemble(nu: float, p_plus: float = 0.5) -> FiniteEnsemble:
    """Z = ±[[0, ν], [−ν, 0]] with P(+) = ``p_plus`` (n = 2).

    E[ZZᵀ] = ν²I for every ``p_plus``; Z̄ vanishes only at 1/2.
    """
    Zp = np.array([[0.0, nu], [-nu, 0.0]])
    return FiniteEnsemble((Zp, -Zp), (p_plus, 1.0 - p_plus))


# -- kernels ----------------------------------------------------------------

def _trig(params: HeatbathParams) -> tuple[float, float, float]:
    return params.gamma, params.cos_theta, params.sin_theta


def simple_kernel(params: HeatbathParams) -> CollisionKernel:
    """Head-on kernel Ω = [[cI, γsI], [(s/γ)I, −cI]] with U = I, Z = 0."""
    g, c, s = _trig(params)
    n = params.n
    eye = np.eye(n)
    return CollisionKernel(
        n=n, U=eye.copy(), Z=np.zeros((n, n)),
        P=c * eye, Q=g * s * eye, V=(s / g) * eye, G=-c * eye,
        M_mat=params.M * eye, m_mat=params.m * eye,
    )


def _haar(gen: np.random.Generator, shape: tuple[int, ...], n: int) -> np.ndarray:
    q, r = np.linalg.qr(gen.standard_normal(shape + (n, n)))
    # fix the column signs so the law is exactly Haar
    return q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]


def sample_orthogonal(n: int, rng: np.random.Generator | int | None = None,
                      size: int | None = None) -> np.ndarray:
    """Haar orthogonal matrix, resampled while I + U is near singular.

    With ``size`` a stack of shape (size, n, n) is returned; rejected
    members are redrawn independently.
    """
    if n < 1:
        raise DomainError(f"dimension must be at least 1, got {n}")
    gen = as_rng(rng)
    eye = np.eye(n)
    if size is None:
        for _ in range(MAX_REJECTIONS):
            U = _haar(gen, (), n)
            if abs(np.linalg.det(eye + U)) >= SINGULAR_TOL:
                return U
        raise DomainError(f"no admissible orthogonal matrix after {MAX_REJECTIONS} draws")
    U = _haar(gen, (int(size),), n)
    for _ in range(MAX_REJECTIONS):
        bad = np.abs(np.linalg.det(eye + U)) < SINGULAR_TOL
        if not bad.any():
            return U
        U[bad] = _haar(gen, (int(bad.sum()),), n)
    raise DomainError(f"no admissible orthogonal matrices after {MAX_REJECTIONS} rounds")


def scattering_from_unitary(U: np.ndarray) -> np.ndarray:
    """Z = I − 2(I + U)⁻¹, for one U or a stack."""
    U = np.asarray(U, dtype=float)
    eye = np.eye(U.shape[-1])
    if np.any(np.abs(np.linalg.det(eye + U)) < SINGULAR_TOL):
        raise DomainError("I + U is singular; no finite scattering matrix")
    return _T(np.linalg.solve(_T(eye + U), _T(U - eye)))


def unitary_from_scattering(Z: np.ndarray) -> np.ndarray:
    """Inverse Cayley map U = (I + Z)(I − Z)⁻¹ for antisymmetric Z."""
    Z = np.asarray(Z, dtype=float)
    eye = np.eye(Z.shape[-1])
    return _T(np.linalg.solve(_T(eye - Z), _T(eye + Z)))


def kernel_from_unitary(params: HeatbathParams, U: np.ndarray) -> CollisionKernel:
    """Kernel with P = (s/2γ)(I − γ²U), Q = (γs/2)(I + U), V = (s/2γ)(I + U),
    G = (γs/2)(I − U/γ²). A stack of U gives a stacked kernel."""
    U = np.asarray(U, dtype=float)
    n = U.shape[-1]
    if U.ndim < 2 or U.shape[-2:] != (n, n) or n != params.n:
        raise DomainError(f"U must be {params.n}x{params.n}, got shape {U.shape}")
    g, c, s = _trig(params)
    eye = np.eye(n)
    Z = scattering_from_unitary(U)
    return CollisionKernel(
        n=n, U=U, Z=Z,
        P=(s / (2 * g)) * (eye - g**2 * U), Q=(g * s / 2) * (eye + U),
        V=(s / (2 * g)) * (eye + U), G=(g * s / 2) * (eye - U / g**2),
        M_mat=params.M * eye, m_mat=params.m * eye,
    )


def kernel_from_scattering(params: HeatbathParams, Z: np.ndarray) -> CollisionKernel:
    return kernel_from_unitary(params, unitary_from_scattering(Z))


def scattering_from_kernel(kernel: CollisionKernel, params: HeatbathParams) -> np.ndarray:
    """Z recovered from the Q block, Z = I − γ sinθ Q⁻¹."""
    return np.eye(kernel.n) - params.gamma * params.sin_theta * np.linalg.inv(kernel.Q)


def _spd_power(A: np.ndarray, p: float, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or np.abs(A - A.T).max() > 1e-12 * max(1.0, np.abs(A).max()):
        raise DomainError(f"{name} must be a symmetric square matrix")
    lam, vec = np.linalg.eigh(A)
    if lam.min() <= 0:
        raise DomainError(f"{name} must be positive definite")
    return (vec * lam**p) @ vec.T


def _xy(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """X(a, b), Y(a, b) and K = b + b a⁻¹ b for masses a (partner) and b (own)."""
    B = b @ np.linalg.solve(a, b)
    K = b + B
    X = np.linalg.solve(a + b, b)
    Y = b - B + X.T @ K @ X
    return X, 0.5 * (Y + Y.T), K


def general_mass_kernel(M_mat: np.ndarray, m_mat: np.ndarray, U: np.ndarray) -> CollisionKernel:
    """Collision kernel for symmetric positive definite mass matrices.

    P = X(m, M) − K^{−1/2} U Y(m, M)^{1/2} with K = M + M m⁻¹ M, and
    V = m⁻¹M(I − P). The sign in front of U is chosen so that scalar masses
    give back :func:`kernel_from_unitary` for the same U. G follows from the
    cross constraint PᵀMQ + VᵀmG = 0 together with Q = M⁻¹m(I − G).
    """
    M_mat = np.asarray(M_mat, dtype=float)
    m_mat = np.asarray(m_mat, dtype=float)
    n = M_mat.shape[0]
    _spd_power(M_mat, 1.0, "M_mat")
    _spd_power(m_mat, 1.0, "m_mat")
    U = np.asarray(U, dtype=float)
    if U.shape != (n, n) or np.abs(U.T @ U - np.eye(n)).max() > 1e-10:
        raise DomainError("U must be an orthogonal matrix matching the masses")
    eye = np.eye(n)
    X, Y, K = _xy(m_mat, M_mat)
    P = X - _spd_power(K, -0.5, "K") @ U @ _spd_power(Y, 0.5, "Y")
    V = np.linalg.solve(m_mat, M_mat @ (eye - P))
    G = np.linalg.solve(m_mat, np.linalg.solve(P.T - V.T, P.T @ m_mat))
    Q = np.linalg.solve(M_mat, m_mat @ (eye - G))
    Z = scattering_from_unitary(U) if abs(np.linalg.det(eye + U)) >= SINGULAR_TOL \
        else np.full((n, n), np.nan)
    return CollisionKernel(n=n, U=U, Z=Z, P=P, Q=Q, V=V, G=G, M_mat=M_mat, m_mat=m_mat)


def general_mass_bath_unitary(kernel: CollisionKernel) -> np.ndarray:
    """U_⊤ with G = X(M, m) − (m + mM⁻¹m)^{−1/2} U_⊤ Y(M, m)^{1/2}."""
    X, Y, K = _xy(kernel.M_mat, kernel.m_mat)
    return -_spd_power(K, 0.5, "K") @ (kernel.G - X) @ _spd_power(Y, -0.5, "Y")


def collide(kernel: CollisionKernel, v1: np.ndarray, w1: np.ndarray) -> CollisionEvent:
    """Apply Γ to (v1; w1). Leading batch axes of the velocities and of a
    stacked kernel are broadcast together."""
    v1 = np.asarray(v1, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    if v1.shape[-1:] != (kernel.n,) or w1.shape[-1:] != (kernel.n,):
        raise DomainError(f"velocities must have trailing dimension {kernel.n}")
    v2 = _mv(kernel.P, v1) + _mv(kernel.Q, w1)
    w2 = _mv(kernel.V, v1) + _mv(kernel.G, w1)
    return CollisionEvent(v1=v1, v2=v2, w1=w1, w2=w2, Z=kernel.Z)


# -- energy forms -----------------------------------------------------------

class EnergyForms(NamedTuple):
    hk: np.ndarray
    hk_main_form: np.ndarray
    hk_heatbath_form: np.ndarray
    momentum_lhs: np.ndarray
    momentum_rhs: np.ndarray
    scattering_form: np.ndarray
    scattering_form_w: np.ndarray


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def energy_forms(event: CollisionEvent, params: HeatbathParams) -> EnergyForms:
    """Kinetic energy of a collision written through half-sums and half-differences.

    The main and heatbath forms and the momentum relation hold for simple
    collisions only; the two scattering forms hold for any Z and reduce to
    the simple ones at Z = 0.
    """
    g2 = params.gamma**2
    MT = params.M_T
    Z = event.Z
    dpv, dmv = event.v2 + event.v1, event.v2 - event.v1
    dpw, dmw = event.w2 + event.w1, event.w2 - event.w1
    hk = 0.5 * params.M * _dot(event.v1, event.v1) + 0.5 * params.m * _dot(event.w1, event.w1)
    main = 0.5 * MT * (_dot(dpv, dpv) / 4 + _dot(dmv, dmv) / (4 * g2))
    bath = 0.5 * MT * (_dot(dpw, dpw) / 4 + g2 * _dot(dmw, dmw) / 4)
    lhs = _dot(dpv, dpv) / 4 + _dot(dmv, dmv) / (4 * g2**2)
    rhs = 0.5 * (_dot(event.w1, event.w1) + _dot(event.w2, event.w2))
    Zv = _mv(Z, dmv)
    Zw = _mv(Z, dmw)
    scat_v = (_dot(dpv, dpv) - 2 * _dot(dpv, Zv) + _dot(dmv, dmv) / g2
              + (1 + g2) / g2 * _dot(Zv, Zv))
    scat_w = (_dot(dpw, dpw) - 2 * _dot(dpw, Zw) + g2 * _dot(dmw, dmw)
              + (1 + g2) * _dot(Zw, Zw))
    return EnergyForms(hk, main, bath, lhs, rhs, MT * scat_v / 8, MT * scat_w / 8)


# -- main/heatbath velocity maps --------------------------------------------

def main_from_heatbath(params: HeatbathParams, Z: np.ndarray | None = None) -> np.ndarray:
    """Matrix taking (w2; w1) to (v2; v1)."""
    g, c, s = _trig(params)
    n = params.n
    Z = np.zeros((n, n)) if Z is None else np.asarray(Z, dtype=float)
    eye = np.eye(n)
    return (g / s) * np.block([[c * eye - Z, eye + Z], [eye - Z, c * eye + Z]])


def heatbath_from_main(params: HeatbathParams, Z: np.ndarray | None = None) -> np.ndarray:
    """Matrix taking (v2; v1) to (w2; w1), the inverse of :func:`main_from_heatbath`."""
    g, c, s = _trig(params)
    n = params.n
    Z = np.zeros((n, n)) if Z is None else np.asarray(Z, dtype=float)
    eye = np.eye(n)
    return (1.0 / (g * s)) * np.block([[-c * eye - Z, eye + Z], [eye - Z, -c * eye + Z]])


# -- heatbath shock covariances ---------------------------------------------

class HeatbathCovariance(NamedTuple):
    """Per-component covariance of heatbath shocks (ω Δ⁺_w/τ₂, ω Δ⁻_w/τ₁).

    ``cross_cov`` pairs them with the main shocks (σΔ⁺z/τ₂, σΔ⁻z/τ₁) and
    ``cross_corr`` is the same matrix normalised by both standard
    deviations.
    """

    cov: np.ndarray
    correlation: float
    cross_cov: np.ndarray
    cross_corr: np.ndarray


def heatbath_cov_simple(params: HeatbathParams) -> HeatbathCovariance:
    g, c, s = _trig(params)
    a2 = params.alpha_sq
    sig2_tau = params.sigma**2 / params.tau_bar
    rho = -(1.0 - 2.0 * a2)
    cov = (sig2_tau / a2) * np.array([[1.0, rho], [rho, 1.0]])
    L = np.array([[-c, 1.0], [1.0, -c]])
    cross_cov = (2.0 * sig2_tau / (g * s)) * L
    cross_corr = (np.sqrt(2.0 * a2) / (g * s)) * L
    return HeatbathCovariance(cov, rho, cross_cov, cross_corr)


def heatbath_cov_scattering(params: HeatbathParams, stats: ScatteringStats) -> np.ndarray:
    """2n×2n covariance of the heatbath shocks when Z is random.

    Obtained by averaging the heatbath map over Z with independent main
    shocks of covariance (2σ²/τ̄)I. Equals the simple covariance plus
        Γ_Z = (4σ²/(τ̄γ²sin²θ)) [[E ZZᵀ, Ω̂], [Ω̂ᵀ, E ZZᵀ]],
    Ω̂ = E ZZᵀ − (1 + cosθ) Z̄.
    """
    base = heatbath_cov_simple(params).cov
    n = params.n
    g, c, s = _trig(params)
    ZZt, Zbar = stats.ZZt_mean, stats.Z_mean
    omega = ZZt - (1.0 + c) * Zbar
    pref = 4.0 * params.sigma**2 / (params.tau_bar * g**2 * s**2)
    gamma_z = pref * np.block([[ZZt, omega], [omega.T, ZZt]])
    return np.kron(base, np.eye(n)) + gamma_z


def heatbath_cov_scattering_alternative(params: HeatbathParams, stats: ScatteringStats) -> np.ndarray:
    """Alternative closed form with prefactor 2σ²/(τ̄γ sin²θ) and
    Ω̂ = (1 − cosθ)Z̄ + E ZZᵀ; kept for comparison, it does not match the
    averaged map."""
    base = heatbath_cov_simple(params).cov
    n = params.n
    g, c, s = _trig(params)
    ZZt, Zbar = stats.ZZt_mean, stats.Z_mean
    omega = (1.0 - c) * Zbar + ZZt
    pref = 2.0 * params.sigma**2 / (params.tau_bar * g * s**2)
    return np.kron(base, np.eye(n)) + pref * np.block([[ZZt, omega], [omega.T, ZZt]])


def map_main_shocks(params: HeatbathParams, shocks_fwd: np.ndarray, shocks_bwd: np.ndarray,
                    Z: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Push main shocks through the heatbath map; Z may be a stack matching the batch."""
    g, c, s = _trig(params)
    f = np.asarray(shocks_fwd, dtype=float)
    b = np.asarray(shocks_bwd, dtype=float)
    hf = (-c * f + b) / (g * s)
    hb = (f - c * b) / (g * s)
    if Z is not None:
        Zd = np.einsum("...ij,...j->...i", Z, b - f) / (g * s)
        hf = hf + Zd
        hb = hb + Zd
    return hf, hb


# -- transformed heatbath ---------------------------------------------------

class TransformedHeatbath(NamedTuple):
    w_top1: np.ndarray
    w_top2: np.ndarray
    W: np.ndarray
    residuals: dict


def transform_heatbath(event: CollisionEvent, params: HeatbathParams) -> TransformedHeatbath:
    """Shift the heatbath velocities by W = −((1+γ²)/2) Z Δ⁻w.

    After the shift the collision acts on (v, w + W) as the simple kernel.
    """
    g2 = params.gamma**2
    dmw = event.w2 - event.w1
    W = -0.5 * (1.0 + g2) * _mv(event.Z, dmw)
    wt1, wt2 = event.w1 + W, event.w2 + W
    dpv, dmv = event.v2 + event.v1, event.v2 - event.v1
    h_top1 = 0.5 * params.M * _dot(event.v1, event.v1) + 0.5 * params.m * _dot(wt1, wt1)
    h_top2 = 0.5 * params.M * _dot(event.v2, event.v2) + 0.5 * params.m * _dot(wt2, wt2)
    h_form = params.M_T / 8 * (_dot(dpv, dpv) + _dot(dmv, dmv) / g2)
    simple = simple_kernel(params)
    v2s = event.v1 @ simple.P.T + wt1 @ simple.Q.T
    wt2s = event.v1 @ simple.V.T + wt1 @ simple.G.T
    scale = max(1.0, float(np.abs(h_top1).max()))
    res = {
        "perpendicular": float(np.abs(_dot(W, dmw)).max()),
        "plus": float(np.abs(dpv - (wt2 + wt1)).max()),
        "minus": float(np.abs(dmv + g2 * (wt2 - wt1)).max()),
        "energy_form": float(np.abs(h_top1 - h_form).max()) / scale,
        "energy_conserved": float(np.abs(h_top2 - h_top1).max()) / scale,
        "simple_kernel": float(max(np.abs(v2s - event.v2).max(), np.abs(wt2s - wt2).max())),
    }
    return TransformedHeatbath(wt1, wt2, W, res)
