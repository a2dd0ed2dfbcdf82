"""Discrete collision paths, their interpolants and coupled reference diffusions.

Between collisions the main particle moves with the forward drift frozen at
the last collision point plus σ times the Wiener increment over the
interval. Sharing one fine-grid Wiener path between this process and an
Euler–Maruyama solution lets the two be compared path by path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .params import DomainError, HeatbathParams
from .stochastic_clock import as_rng, sample_intercollision

DriftFn = Callable[[np.ndarray, float | np.ndarray], np.ndarray]
FINE_RATIO = 50


@dataclass(frozen=True)
class DriftField:
    """Forward drift b⁺(x, t) with its claimed Lipschitz constants.

    ``b_plus`` must accept positions of shape ``(..., n)`` and a time that
    broadcasts against the leading axes. ``log_density_grad`` is optional;
    when set it returns ∇log ρ for paths started at ``x0`` with amplitude σ.
    """

    b_plus: DriftFn
    lipschitz_K: float = 0.0
    time_constant_Mf: float = 0.0
    drift_id: str = "custom"
    log_density_grad: Callable[..., np.ndarray] | None = field(default=None, repr=False)
    density_moments: Callable[..., tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False)

    def __call__(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        return self.b_plus(x, t)


def _gaussian_law(mean_fn, var_fn):
    """Moments and ∇log ρ of a Gaussian law; t may be scalar or shape (N,)."""
    def moments(t, x0, sigma):
        t = np.asarray(t, dtype=float)
        return mean_fn(t[..., None], np.asarray(x0, dtype=float)), var_fn(t, sigma)

    def grad(x, t, x0, sigma):
        mu, var = moments(t, x0, sigma)
        return -(x - mu) / var[..., None]
    return moments, grad


def zero_drift() -> DriftField:
    moments, grad = _gaussian_law(lambda t, x0: x0 + 0.0 * t, lambda t, s: s**2 * t)
    return DriftField(lambda x, t: np.zeros_like(x), 0.0, 0.0, "zero", grad, moments)


def constant_drift(a: float | np.ndarray = 1.0) -> DriftField:
    a = np.asarray(a, dtype=float)
    moments, grad = _gaussian_law(lambda t, x0: x0 + a * t, lambda t, s: s**2 * t)
    return DriftField(lambda x, t: np.broadcast_to(a, np.shape(x)).copy(), 0.0, 0.0,
                      "constant", grad, moments)


def ou_drift(k: float = 1.0) -> DriftField:
    """b⁺(x) = −k x; started at x0 the density stays Gaussian."""
    moments, grad = _gaussian_law(
        lambda t, x0: x0 * np.exp(-k * t),
        lambda t, s: s**2 * (1.0 - np.exp(-2.0 * k * t)) / (2.0 * k))
    return DriftField(lambda x, t: -k * x, float(k), 0.0, f"ou:{k:g}", grad, moments)


DRIFT_CATALOG: dict[str, Callable[..., DriftField]] = {
    "zero": zero_drift, "constant": constant_drift, "ou": ou_drift,
}


def drift_from_name(name: str, **kwargs) -> DriftField:
    try:
        factory = DRIFT_CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown drift {name!r}; choose from {sorted(DRIFT_CATALOG)}") from None
    return factory(**kwargs)


# -- single coupled path ----------------------------------------------------

@dataclass(frozen=True)
class PathRecord:
    collision_times: np.ndarray
    positions: np.ndarray
    collision_index: np.ndarray
    noise_grid: np.ndarray
    dt_fine: float
    sigma: float
    drift_id: str

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def wiener(self) -> np.ndarray:
        return _cumulative(self.noise_grid)

    @property
    def T(self) -> float:
        return len(self.noise_grid) * self.dt_fine


def _cumulative(noise: np.ndarray) -> np.ndarray:
    W = np.zeros((len(noise) + 1,) + noise.shape[1:])
    np.cumsum(noise, axis=0, out=W[1:])
    return W


def _snap_steps(tau: np.ndarray, dt: float) -> np.ndarray:
    return np.maximum(1, np.rint(tau / dt)).astype(np.int64)


def _fine_steps(T: float, dt_fine: float) -> int:
    return int(math.ceil(T / dt_fine - 1e-9))


def _step(drift: DriftFn, sigma: float, x: np.ndarray, t: np.ndarray | float,
          tau: np.ndarray | float, dW: np.ndarray) -> np.ndarray:
    tau_arr = np.asarray(tau, dtype=float)
    if tau_arr.ndim:
        tau_arr = tau_arr[..., None]
    return x + drift(x, t) * tau_arr + sigma * dW


def simulate_collision_path(drift: DriftField, params: HeatbathParams, x0: np.ndarray,
                            T: float, dt_fine: float,
                            rng: np.random.Generator | int | None = None) -> PathRecord:
    """One collision path driven by a fine-grid Wiener path.

    Collision times come from the Gamma clock and are rounded to the fine
    grid, with at least one fine step between collisions.
    """
    if T <= 0:
        raise DomainError("T must be positive")
    if dt_fine <= 0 or dt_fine > params.tau_bar / FINE_RATIO * (1 + 1e-12):
        raise DomainError(f"dt_fine must satisfy 0 < dt_fine <= tau_bar/{FINE_RATIO}")
    gen = as_rng(rng)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    K = _fine_steps(T, dt_fine)
    noise = gen.standard_normal((K, n)) * math.sqrt(dt_fine)
    W = _cumulative(noise)
    idx = [0]
    while True:
        step = int(_snap_steps(np.asarray(sample_intercollision(params.beta, gen)), dt_fine))
        if idx[-1] + step > K:
            break
        idx.append(idx[-1] + step)
    idx_arr = np.asarray(idx, dtype=np.int64)
    times = idx_arr * dt_fine
    pos = np.empty((len(idx_arr), n))
    pos[0] = x0
    for j in range(len(idx_arr) - 1):
        pos[j + 1] = _step(drift, params.sigma, pos[j], times[j], times[j + 1] - times[j],
                           W[idx_arr[j + 1]] - W[idx_arr[j]])
    return PathRecord(times, pos, idx_arr, noise, dt_fine, params.sigma, drift.drift_id)


def coupling_residual(path: PathRecord, drift: DriftField) -> float:
    """Max deviation between stored increments and re-aggregated noise (0 when exact)."""
    W = path.wiener
    t, x, k = path.collision_times, path.positions, path.collision_index
    worst = 0.0
    for j in range(len(t) - 1):
        again = _step(drift, path.sigma, x[j], t[j], t[j + 1] - t[j], W[k[j + 1]] - W[k[j]])
        worst = max(worst, float(np.abs(again - x[j + 1]).max()))
    return worst


def interpolate(path: PathRecord, t: float) -> np.ndarray:
    """Linear interpolation between the collision positions."""
    times = path.collision_times
    if not times[0] <= t <= times[-1]:
        raise DomainError(f"t={t} outside [{times[0]}, {times[-1]}]")
    j = int(np.searchsorted(times, t, side="right")) - 1
    if j >= len(times) - 1:
        return path.positions[-1].copy()
    t_mn, t_mx = times[j], times[j + 1]
    a = (t_mx - t) / (t_mx - t_mn)
    return a * path.positions[j] + (1.0 - a) * path.positions[j + 1]


def interpolate_martingale(path: PathRecord, drift: DriftField, t: float) -> np.ndarray:
    """x_N + b⁺(x_N, t_N)(t − t_N) + σ(W(t) − W(t_N)) at a fine-grid time t."""
    k = int(round(t / path.dt_fine))
    if not 0 <= k <= len(path.noise_grid) or abs(k * path.dt_fine - t) > 1e-9 * max(1.0, t):
        raise DomainError("t must be a fine-grid time inside the path")
    j = int(np.searchsorted(path.collision_index, k, side="right")) - 1
    W = path.wiener
    tn = path.collision_times[j]
    xn = path.positions[j]
    return xn + drift(xn, tn) * (k * path.dt_fine - tn) + path.sigma * (W[k] - W[path.collision_index[j]])


def reference_sde(drift: DriftField, sigma: float, x0: np.ndarray, noise_grid: np.ndarray,
                  dt: float, t0: float = 0.0) -> np.ndarray:
    """Euler–Maruyama path on the grid of ``noise_grid`` (Wiener increments).

    ``noise_grid`` has shape ``(K, n)`` or ``(K, N, n)`` for an ensemble.
    """
    noise = np.asarray(noise_grid, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), noise.shape[1:]).copy()
    out = np.empty((noise.shape[0] + 1,) + noise.shape[1:])
    out[0] = x
    for k in range(noise.shape[0]):
        x = x + drift(x, t0 + k * dt) * dt + sigma * noise[k]
        out[k + 1] = x
    return out


# -- ensembles --------------------------------------------------------------

@dataclass(frozen=True)
class Ensemble:
    """Collision paths padded with NaN after each path's last collision.

    ``times`` has shape (N, J) and ``positions`` (N, J, n).
    """

    times: np.ndarray
    positions: np.ndarray
    sigma: float
    drift_id: str
    x0: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolant of every path at time t (shape (N, n))."""
        times = np.where(np.isnan(self.times), np.inf, self.times)
        j = (times <= t).sum(axis=1) - 1
        if np.any(j < 0) or np.any(j >= times.shape[1] - 1) or np.any(~np.isfinite(
                times[np.arange(len(j)), j + 1])):
            raise DomainError("t outside the simulated range of some path")
        rows = np.arange(len(j))
        t0, t1 = times[rows, j], times[rows, j + 1]
        a = ((t1 - t) / (t1 - t0))[:, None]
        return a * self.positions[rows, j] + (1 - a) * self.positions[rows, j + 1]


def simulate_ensemble(drift: DriftField, params: HeatbathParams, x0: np.ndarray, T: float,
                      n_paths: int, rng: np.random.Generator | int | None = None,
                      dt_fine: float | None = None) -> Ensemble:
    """Vectorised collision paths up to the first collision after T.

    Without ``dt_fine`` each step uses an exact Gaussian increment
    σ√τ ξ, which has the same law as the aggregated fine-grid noise. With
    ``dt_fine`` the times are rounded to that grid first.
    """
    gen = as_rng(rng)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    sigma = params.sigma
    cap = int(T / params.tau_bar + 8 * math.sqrt(T / params.tau_bar) + 16)
    taus = sample_intercollision(params.beta, gen, size=(n_paths, cap))
    if dt_fine is not None:
        taus = _snap_steps(taus, dt_fine) * dt_fine
    times = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(taus, axis=1)], axis=1)
    while np.any(times[:, -1] <= T):
        extra = sample_intercollision(params.beta, gen, size=(n_paths, cap))
        if dt_fine is not None:
            extra = _snap_steps(extra, dt_fine) * dt_fine
        times = np.concatenate([times, times[:, -1:] + np.cumsum(extra, axis=1)], axis=1)
    # keep one collision past T so interpolation covers [0, T]
    last = (times <= T).sum(axis=1)
    J = int(last.max()) + 1
    times = times[:, :J]
    valid = np.arange(J)[None, :] <= last[:, None]
    pos = np.empty((n_paths, J, n))
    pos[:, 0] = x0
    xi = gen.standard_normal((n_paths, J - 1, n))
    for j in range(J - 1):
        tau = times[:, j + 1] - times[:, j]
        pos[:, j + 1] = _step(drift, sigma, pos[:, j], times[:, j][:, None],
                              tau, np.sqrt(tau)[:, None] * xi[:, j])
    times = np.where(valid, times, np.nan)
    pos = np.where(valid[..., None], pos, np.nan)
    return Ensemble(times, pos, sigma, drift.drift_id, x0)


# -- convergence study ------------------------------------------------------

class ConvergenceResult(NamedTuple):
    betas: np.ndarray
    sup_error: np.ndarray
    std_error: np.ndarray
    slope: float
    dt_fine: float


def _coupled_sup_errors(drift: DriftField, sigma: float, x0: np.ndarray, beta: float,
                        W: np.ndarray, x_ref: np.ndarray, dt: float, K: int,
                        gen: np.random.Generator, interpolant: str) -> np.ndarray:
    Nc, Kext1, n = W.shape
    rows = np.arange(Nc)
    cap = int(K * dt * beta / 2 * 1.5 + 64)
    steps = _snap_steps(sample_intercollision(beta, gen, size=(Nc, cap)), dt)
    idx = np.concatenate([np.zeros((Nc, 1), np.int64), np.cumsum(steps, axis=1)], axis=1)
    while np.any(idx[:, -1] <= K):
        more = _snap_steps(sample_intercollision(beta, gen, size=(Nc, cap)), dt)
        idx = np.concatenate([idx, idx[:, -1:] + np.cumsum(more, axis=1)], axis=1)
    J = int((idx <= K).sum(axis=1).max()) + 1
    idx = np.minimum(idx[:, :J], Kext1 - 1)
    tc = idx * dt
    xc = np.empty((Nc, J, n))
    bc = np.empty((Nc, J, n))
    xc[:, 0] = x0
    for j in range(J):
        bc[:, j] = drift(xc[:, j], tc[:, j][:, None])
        if j + 1 < J:
            dW = W[rows, idx[:, j + 1]] - W[rows, idx[:, j]]
            xc[:, j + 1] = xc[:, j] + bc[:, j] * (tc[:, j + 1] - tc[:, j])[:, None] + sigma * dW
    mark = np.zeros((Nc, K + 1), np.int64)
    for j in range(1, J):
        ok = idx[:, j] <= K
        mark[rows[ok], idx[ok, j]] += 1
    anchor = np.cumsum(mark, axis=1)
    tk = np.arange(K + 1) * dt
    xa = xc[rows[:, None], anchor]
    ta = tc[rows[:, None], anchor]
    if interpolant == "martingale":
        ka = idx[rows[:, None], anchor]
        Wk = W[:, :K + 1]
        Wa = W[rows[:, None], ka]
        path = xa + bc[rows[:, None], anchor] * (tk[None, :] - ta)[..., None] + sigma * (Wk - Wa)
    elif interpolant == "linear":
        nxt = np.minimum(anchor + 1, J - 1)
        tb = tc[rows[:, None], nxt]
        xb = xc[rows[:, None], nxt]
        span = np.where(tb > ta, tb - ta, 1.0)
        a = ((tb - tk[None, :]) / span)[..., None]
        path = a * xa + (1 - a) * xb
    else:
        raise DomainError(f"unknown interpolant {interpolant!r}")
    err = np.linalg.norm(path - np.moveaxis(x_ref, 0, 1), axis=-1)
    return err.max(axis=1)


def convergence_study(drift: DriftField, params: HeatbathParams, betas, n_paths: int, T: float,
                      rng: np.random.Generator | int | None = None, dt_fine: float | None = None,
                      x0: np.ndarray | float = 0.0, interpolant: str = "martingale",
                      chunk: int = 500) -> ConvergenceResult:
    """Estimate E[sup_t |x(t, β) − x(t)|] for each β on one shared Wiener grid."""
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 1 or len(betas) < 2 or np.any(np.diff(betas) <= 0):
        raise DomainError("betas must be an increasing list of at least two rates")
    gen = as_rng(rng)
    tau_min = 2.0 / betas.max()
    dt = tau_min / FINE_RATIO if dt_fine is None else float(dt_fine)
    if dt > tau_min / FINE_RATIO * (1 + 1e-12):
        raise DomainError(f"dt_fine must be <= tau_bar_min/{FINE_RATIO}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    K = _fine_steps(T, dt)
    margin = int(40 * (2.0 / betas.min()) / dt)
    sums = np.zeros(len(betas))
    sq = np.zeros(len(betas))
    done = 0
    while done < n_paths:
        Nc = min(chunk, n_paths - done)
        noise = gen.standard_normal((K + margin, Nc, n)) * math.sqrt(dt)
        x_ref = reference_sde(drift, params.sigma, x0, noise[:K], dt)
        W = np.moveaxis(_cumulative(noise), 0, 1)
        for i, b in enumerate(betas):
            e = _coupled_sup_errors(drift, params.sigma, x0, b, W, x_ref, dt, K, gen, interpolant)
            sums[i] += e.sum()
            sq[i] += (e**2).sum()
        done += Nc
    mean = sums / n_paths
    se = np.sqrt(np.maximum(sq / n_paths - mean**2, 0.0) / n_paths)
    slope = float(np.polyfit(np.log(betas), np.log(np.maximum(mean, 1e-300)), 1)[0])
    return ConvergenceResult(betas, mean, se, slope, dt)


# -- backward drift statistics ----------------------------------------------

def kde_log_grad(samples: np.ndarray, x: np.ndarray, bandwidth: float | None = None) -> np.ndarray:
    """∇log of a Gaussian kernel density estimate (Silverman bandwidth by default)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, n = samples.shape
    if bandwidth is None:
        sd = samples.std(axis=0, ddof=1).mean()
        bandwidth = sd * (4.0 / ((n + 2) * N)) ** (1.0 / (n + 4))
    h2 = bandwidth**2
    out = np.empty_like(x)
    for start in range(0, len(x), 256):
        xs = x[start:start + 256]
        d = samples[None, :, :] - xs[:, None, :]
        logk = -0.5 * np.sum(d**2, axis=-1) / h2
        logk -= logk.max(axis=1, keepdims=True)
        k = np.exp(logk)
        out[start:start + 256] = np.einsum("ij,ijk->ik", k, d) / (h2 * k.sum(axis=1, keepdims=True))
    return out


def _window_samples(ens: Ensemble, t: float, window: float):
    times = ens.times
    ok = np.zeros_like(times, dtype=bool)
    ok[:, 1:-1] = (np.abs(times[:, 1:-1] - t) <= window) & np.isfinite(times[:, 2:])
    r, j = np.nonzero(ok)
    return r, j


class BackwardStats(NamedTuple):
    centers: np.ndarray
    empirical: np.ndarray
    predicted: np.ndarray
    std_error: np.ndarray
    counts: np.ndarray
    dropped: list


def backward_stats(ens: Ensemble, t: float, bins, drift: DriftField, params: HeatbathParams,
                   window: float | None = None, min_count: int = 200,
                   use_kde: bool | None = None) -> BackwardStats:
    """Binned E[Δ⁻x/τ₁ | x] around time t against b⁺ − σ²∇log ρ.

    Collisions within ``window`` of t are pooled; the prediction is
    averaged over the same samples so the time spread in the window does
    not bias the comparison. Only the first coordinate is binned.
    """
    if t < 10 * params.tau_bar:
        raise DomainError("backward statistics need t >= 10 tau_bar")
    window = 0.1 * t if window is None else window
    r, j = _window_samples(ens, t, window)
    x = ens.positions[r, j]
    tj = ens.times[r, j]
    tau1 = tj - ens.times[r, j - 1]
    bwd = (x - ens.positions[r, j - 1]) / tau1[:, None]
    if use_kde is None:
        use_kde = drift.log_density_grad is None
    if use_kde:
        grad = kde_log_grad(ens.at(t), x)
    else:
        grad = drift.log_density_grad(x, tj, ens.x0, params.sigma)
    pred = drift(x, tj[:, None]) - params.sigma**2 * grad
    edges = np.asarray(bins, dtype=float)
    which = np.digitize(x[:, 0], edges) - 1
    centers, emp, prd, se, counts, dropped = [], [], [], [], [], []
    for b in range(len(edges) - 1):
        sel = which == b
        c = int(sel.sum())
        mid = 0.5 * (edges[b] + edges[b + 1])
        if c < min_count:
            dropped.append((mid, c))
            continue
        centers.append(mid)
        emp.append(bwd[sel, 0].mean())
        prd.append(pred[sel, 0].mean())
        se.append(bwd[sel, 0].std(ddof=1) / math.sqrt(c))
        counts.append(c)
    return BackwardStats(np.array(centers), np.array(emp), np.array(prd), np.array(se),
                         np.array(counts), dropped)


class ItoResidual(NamedTuple):
    mean_forward: float
    se_forward: float
    rms_forward: float
    mean_backward: float
    se_backward: float
    rms_backward: float
    count: int


def ito_expansion_check(ens: Ensemble, f: Callable, f_t: Callable, grad_f: Callable,
                        lap_f: Callable, t_min: float = 0.0) -> ItoResidual:
    """Residuals of the first-order forward and backward expansions of f.

    Forward: Δ⁺f − (f_t + ½σ²Δf)τ₂ − ∇f·Δ⁺x, backward: Δ⁻f − (f_t − ½σ²Δf)τ₁
    − ∇f·Δ⁻x, both with derivatives taken at the collision point.
    """
    s2 = ens.sigma**2
    times, pos = ens.times, ens.positions
    ok = np.isfinite(times[:, 2:]) & (times[:, 1:-1] >= t_min)
    r, jj = np.nonzero(ok)
    j = jj + 1
    x, t = pos[r, j], times[r, j]
    xp, tp = pos[r, j + 1], times[r, j + 1]
    xm, tm = pos[r, j - 1], times[r, j - 1]
    f0 = f(x, t)
    g = grad_f(x, t)
    ft = f_t(x, t)
    lap = lap_f(x, t)
    fwd = f(xp, tp) - f0 - (ft + 0.5 * s2 * lap) * (tp - t) - np.sum(g * (xp - x), -1)
    bwd = f0 - f(xm, tm) - (ft - 0.5 * s2 * lap) * (t - tm) - np.sum(g * (x - xm), -1)
    c = len(fwd)

    def stats(v):
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(c)), float(np.sqrt(np.mean(v**2)))
    return ItoResidual(*stats(fwd), *stats(bwd), c)


def continuity_residual(ens: Ensemble, drift: DriftField, params: HeatbathParams, t: float,
                        h: float, centers: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weak continuity check with Gaussian bump test functions φ_c.

    Returns (d/dt E φ_c by central difference, E[φ_c'·(b⁺+b⁻)/2], standard
    error of the difference) for each centre c, first coordinate only.
    """
    x_m, x_0, x_p = ens.at(t - h)[:, 0], ens.at(t), ens.at(t + h)[:, 0]
    grad = drift.log_density_grad(x_0, t, ens.x0, params.sigma)
    v = drift(x_0, t) - 0.5 * params.sigma**2 * grad
    lhs, rhs, se = [], [], []
    for c in np.atleast_1d(centers):
        phi = lambda y: np.exp(-0.5 * ((y - c) / width) ** 2)
        dphi = -(x_0[:, 0] - c) / width**2 * phi(x_0[:, 0])
        a = (phi(x_p) - phi(x_m)) / (2 * h)
        b = dphi * v[:, 0]
        lhs.append(a.mean())
        rhs.append(b.mean())
        se.append((a - b).std(ddof=1) / math.sqrt(len(a)))
    return np.array(lhs), np.array(rhs), np.array(se)


class DriftRegressor:
    """Local polynomial regression of collision velocities on position.

    ``fit`` takes positions, times and velocity samples from a window
    around ``t_eval``. The design holds an intercept and the terms
    x^d·(s − t_eval)^k for d ≤ ``degree`` and k ≤ ``time_degree``, so the
    drift may change across the window; ``predict`` returns the fitted
    conditional mean at ``t_eval``.
    """

    def __init__(self, t_eval: float, degree: int = 1, time_degree: int = 2):
        self.t_eval = t_eval
        self.degree = degree
        self.time_degree = time_degree

    def get_params(self, deep: bool = True) -> dict:
        return {"t_eval": self.t_eval, "degree": self.degree,
                "time_degree": self.time_degree}

    def set_params(self, **params) -> "DriftRegressor":
        for k, v in params.items():
            if k not in self.get_params():
                raise DomainError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def _design(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        ds = np.asarray(s, dtype=float).reshape(-1) - self.t_eval
        cols = [np.ones_like(x)]
        for d in range(1, self.degree + 1):
            for k in range(self.time_degree + 1):
                cols.append(x**d * ds**k)
        return np.stack(cols, axis=1)

    def partial_fit(self, x: np.ndarray, s: np.ndarray, y: np.ndarray,
                    sample_weight: np.ndarray | None = None) -> "DriftRegressor":
        A = self._design(x, s)
        y = np.asarray(y, dtype=float).reshape(-1)
        w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, float).reshape(-1)
        if not hasattr(self, "gram_"):
            self.gram_ = np.zeros((A.shape[1],) * 2)
            self.moment_ = np.zeros(A.shape[1])
            self.yy_ = 0.0
            self.count_ = 0
        Aw = A * w[:, None]
        self.gram_ += Aw.T @ A
        self.moment_ += Aw.T @ y
        self.yy_ += float(y @ (w * y))
        self.count_ += len(y)
        self.coef_ = np.linalg.solve(self.gram_, self.moment_)
        return self

    def fit(self, x: np.ndarray, s: np.ndarray, y: np.ndarray,
            sample_weight: np.ndarray | None = None) -> "DriftRegressor":
        for attr in ("gram_", "moment_", "yy_", "count_", "coef_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(x, s, y, sample_weight)

    def merge(self, other: "DriftRegressor") -> "DriftRegressor":
        """Add the sufficient statistics of ``other`` fitted on the same design."""
        if other.get_params() != self.get_params():
            raise DomainError("can only merge regressors with equal parameters")
        if not hasattr(other, "gram_"):
            return self
        if not hasattr(self, "gram_"):
            self.gram_ = np.zeros_like(other.gram_)
            self.moment_ = np.zeros_like(other.moment_)
            self.yy_ = 0.0
            self.count_ = 0
        self.gram_ += other.gram_
        self.moment_ += other.moment_
        self.yy_ += other.yy_
        self.count_ += other.count_
        self.coef_ = np.linalg.solve(self.gram_, self.moment_)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise DomainError("DriftRegressor is not fitted")
        A = self._design(x, np.full(np.size(x), self.t_eval))
        return A @ self.coef_

    def coef_cov(self) -> np.ndarray:
        resid = self.yy_ - self.coef_ @ self.moment_
        dof = max(self.count_ - len(self.coef_), 1)
        return np.linalg.inv(self.gram_) * resid / dof
