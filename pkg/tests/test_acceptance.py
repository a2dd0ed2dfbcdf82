"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (collected again in the terminal
summary) and asserts the same condition, runtime budget included. The
strict-xfail tests at the bottom evaluate alternative closed forms that
do not survive the numerical checks; they are kept to show that.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from heatbath import collision_algebra as ca
from heatbath import energy_lab as el
from heatbath import path_engine as pe
from heatbath import relativity as rel
from heatbath import wavefunction as wf
from heatbath.params import params_from_gamma
from heatbath.stochastic_clock import gamma_moments, make_rng, sample_intercollision


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# -- 1 ---------------------------------------------------------------------------

def test_01_collision_conservation(verdict):
    worst = 0.0
    with Timer() as clock:
        for n in (1, 2, 3):
            for gamma in (0.2, 0.5, 1.0):
                p = params_from_gamma(gamma, n=n)
                rng = make_rng(1, 10 * n + int(10 * gamma))
                kernel = ca.kernel_from_unitary(p, ca.sample_orthogonal(n, rng, 1000))
                ev = ca.collide(kernel, rng.standard_normal((1000, n)),
                                rng.standard_normal((1000, n)))
                r = ev.residuals(p.M, p.m)
                worst = max(worst, r["momentum"], r["energy"])
    ok = worst < 1e-12 and clock.elapsed < 1.0
    assert verdict("1  collision conservation", ok,
                   f"max residual {worst:.2e} (< 1e-12), {clock.elapsed:.2f}s (< 1s)")


# -- 2 ---------------------------------------------------------------------------

def _random_antisymmetric(rng, size, n):
    A = rng.standard_normal((size, n, n))
    return A - np.swapaxes(A, -1, -2)


def test_02_energy_quadratic_forms(verdict):
    worst = {"main_form": 0.0, "momentum_form": 0.0, "scattering_form": 0.0,
             "scattering_form_w": 0.0, "transformed": 0.0}
    with Timer() as clock:
        for n in (1, 2, 3):
            for gamma in (0.2, 0.5, 1.0):
                p = params_from_gamma(gamma, n=n)
                rng = make_rng(2, 10 * n + int(10 * gamma))
                v1, w1 = rng.standard_normal((2, 1000, n))
                simple = ca.energy_forms(ca.collide(ca.simple_kernel(p), v1, w1), p)
                scale = np.maximum(1.0, np.abs(simple.hk))
                worst["main_form"] = max(worst["main_form"], float(np.max(
                    np.abs(simple.hk_main_form - simple.hk) / scale)))
                worst["momentum_form"] = max(worst["momentum_form"], float(np.max(
                    np.abs(simple.momentum_lhs - simple.momentum_rhs)
                    / np.maximum(1.0, simple.momentum_rhs))))
                Z = _random_antisymmetric(rng, 1000, n)
                ev = ca.collide(ca.kernel_from_scattering(p, Z), v1, w1)
                f = ca.energy_forms(ev, p)
                scale = np.maximum(1.0, np.abs(f.hk))
                for key, val in (("scattering_form", f.scattering_form),
                                 ("scattering_form_w", f.scattering_form_w)):
                    worst[key] = max(worst[key], float(np.max(np.abs(val - f.hk) / scale)))
                th = ca.transform_heatbath(ev, p)
                worst["transformed"] = max(worst["transformed"], max(th.residuals.values()))
    ok = max(worst.values()) < 1e-12 and clock.elapsed < 1.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict("2  energy quadratic forms", ok, f"{detail}; {clock.elapsed:.2f}s (< 1s)")


# -- 3 ---------------------------------------------------------------------------

def _clock_stats(beta, N, seed):
    tau = sample_intercollision(beta, make_rng(seed), N)
    d = tau - tau.mean()
    out = {"mean": (tau.mean(), tau.std(ddof=1) / math.sqrt(N)),
           "variance": (d @ d / (N - 1), np.std(d * d, ddof=1) / math.sqrt(N))}
    for name, v in (("inv_mean", 1.0 / tau), ("inv_sqrt_mean", 1.0 / np.sqrt(tau))):
        out[name] = (v.mean(), v.std(ddof=1) / math.sqrt(N))
    return out


def test_03_gamma_clock(verdict):
    tau_bar = 1.0
    beta = 2.0 / tau_bar
    with Timer() as clock:
        stats = _clock_stats(beta, 1_000_000, seed=3)
    exact = gamma_moments(beta)._asdict()
    assert math.isclose(exact["inv_sqrt_mean"], math.sqrt(math.pi * beta) / 2)
    z = {k: (stats[k][0] - exact[k]) / stats[k][1] for k in stats}
    ok = max(abs(v) for v in z.values()) < 3 and clock.elapsed < 5.0
    detail = ", ".join(f"{k} z={v:+.2f}" for k, v in z.items())
    assert verdict("3  gamma clock moments", ok, f"{detail}; {clock.elapsed:.2f}s (< 5s)")


# -- 4 ---------------------------------------------------------------------------

def _main_shocks(p, rng, N):
    scale = math.sqrt(2.0 * p.sigma**2 / p.tau_bar)
    return rng.standard_normal((N, p.n)) * scale, rng.standard_normal((N, p.n)) * scale


def _cov_z(samples, exact):
    """Max |sample − exact|/se over the entries of a second-moment matrix."""
    N = len(samples)
    prods = samples[:, :, None] * samples[:, None, :]
    cov = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(N)
    return float(np.max(np.abs(cov - exact) / se)), cov


def test_04_heatbath_covariance(verdict):
    N = 1_000_000
    with Timer() as clock:
        p = params_from_gamma(0.5)
        rng = make_rng(4)
        f, b = _main_shocks(p, rng, N)
        hf, hb = ca.map_main_shocks(p, f, b)
        corr = float(np.corrcoef(hf[:, 0], hb[:, 0])[0, 1])
        ref = ca.heatbath_cov_simple(p)
        cross = np.stack([hf[:, 0], hb[:, 0]], 1)[:, :, None] * np.stack([f[:, 0], b[:, 0]], 1)[:, None, :]
        cross_z = float(np.max(np.abs(cross.mean(0) - ref.cross_cov)
                               / (cross.std(0, ddof=1) / math.sqrt(N))))
        p2 = params_from_gamma(0.5, n=2)
        ens = ca.two_step_ensemble(0.5)
        f2, b2 = _main_shocks(p2, rng, N)
        hf2, hb2 = ca.map_main_shocks(p2, f2, b2, ens.sample(rng, N))
        scat_z, _ = _cov_z(np.concatenate([hf2, hb2], 1),
                           ca.heatbath_cov_scattering(p2, ens.stats(p2.gamma)))
    target = -(1 - 2 * p.alpha_sq)
    ok = (abs(corr - target) <= 0.01 and cross_z < 3 and scat_z < 3 and clock.elapsed < 10)
    assert verdict("4  heatbath covariance", ok,
                   f"corr {corr:.4f} vs {target:.4f} (±0.01), cross-cov max z {cross_z:.2f}, "
                   f"two-step max z {scat_z:.2f} (< 3); {clock.elapsed:.2f}s (< 10s)")


# -- 5 ---------------------------------------------------------------------------

def test_05_convergence_rate(verdict):
    p = params_from_gamma(1.0)
    with Timer() as clock:
        res = pe.convergence_study(pe.ou_drift(1.0), p, [10, 20, 40, 80, 160], 2000, 2.0,
                                   make_rng(5), x0=1.0)
    ok = abs(res.slope + 1.0) <= 0.15 and clock.elapsed < 120
    assert verdict("5  collision-path convergence", ok,
                   f"log-log slope {res.slope:.3f} (-1 ± 0.15); {clock.elapsed:.1f}s (< 120s)")


# -- 6 ---------------------------------------------------------------------------

def test_06_brownian_radiation(verdict):
    p = params_from_gamma(1.0, M=1.0, sigma=1.0, tau_bar=0.01)
    with Timer() as clock:
        res = el.brownian_radiation(p, [0.5, 1.0, 2.0], 100_000, seed=6)
    err = np.abs(res.mc_estimate / res.closed_form - 1.0)
    assert np.allclose(res.closed_form, -p.M * p.sigma**2 / res.t)
    ok = bool(np.all(err < 0.05)) and clock.elapsed < 60
    detail = ", ".join(f"t={t:g}: {m:.4f} vs {c:.4f}" for t, m, c in
                       zip(res.t, res.mc_estimate, res.closed_form))
    assert verdict("6  Brownian radiation", ok,
                   f"{detail}; max rel err {err.max():.3f} (< 0.05); {clock.elapsed:.1f}s (< 60s)")


# -- 7 ---------------------------------------------------------------------------

PACKET_TIMES = (0.0, 0.5, 1.0, 2.0, 5.0)
PACKET_KEYS = ("H_plus_M", "H_minus_M", "H_plus_m", "H_minus_m", "E_Hk")


def _packet_setup():
    p = params_from_gamma(0.5)
    spec = wf.WavePacketSpec.from_params(p, p0=0.8, sigma_e=1.2)
    x = np.arange(-60.0, 60.0, 0.01)
    return p, spec, x


def test_07_wave_packet_energies(verdict):
    p, spec, x = _packet_setup()
    M, m, MT, se2, p0 = p.M, p.m, p.M_T, spec.sigma_e**2, spec.p0
    with Timer() as clock:
        worst = 0.0
        total = el.packet_total_energy(spec, p)
        for t in PACKET_TIMES:
            quad = el.packet_quadrature_report(spec, p, t, x)
            exact = el.packet_energy_report(spec, p, t)
            worst = max(worst, abs(quad.E_HT / total - 1))
            for k in PACKET_KEYS:
                worst = max(worst, abs(getattr(quad, k) / getattr(exact, k) - 1))
        drift = p0**2 / (2 * MT**2)
        limits = {
            "main t=0": (el.packet_energy_report(spec, p, 0.0).H_M_avg,
                         M * p.gamma**2 * se2 / (2 * MT**2) + M * drift + p.epsilon / p.tau_bar),
            "main t=inf": (el.packet_energy_report(spec, p, math.inf).H_M_avg,
                           M * se2 / (2 * MT**2) + M * drift + p.epsilon / p.tau_bar),
            "bath t=0": (el.packet_energy_report(spec, p, 0.0).H_m_avg,
                         M * se2 / (2 * MT**2) + m * drift + m * p.omega_sq / p.tau_bar),
            "bath t=inf": (el.packet_energy_report(spec, p, math.inf).H_m_avg,
                           m * se2 / (2 * MT**2) + m * drift + m * p.omega_sq / p.tau_bar),
        }
        lim_err = max(abs(a / b - 1) for a, b in limits.values())
        late = el.packet_energy_report(spec, p, 1e8)
        inf = el.packet_energy_report(spec, p, math.inf)
        lim_err = max(lim_err, abs(late.H_M_avg / inf.H_M_avg - 1),
                      abs(late.H_m_avg / inf.H_m_avg - 1))
    ok = worst < 1e-3 and lim_err < 1e-3 and clock.elapsed < 10
    assert verdict("7  wave-packet energies", ok,
                   f"max rel err {worst:.1e} at 5 times, limits {lim_err:.1e} (< 1e-3); "
                   f"{clock.elapsed:.2f}s (< 10s)")


# -- 8 ---------------------------------------------------------------------------

def _heat_audit():
    p = params_from_gamma(1.0, tau_bar=0.05)
    x = np.arange(-30.0, 30.0, 0.01)
    return p, el.heat_equation_audit(p, x, t0=0.5, t1=5.0, steps=4500, snapshots=10)


def test_08_schrodinger_conservation(verdict):
    with Timer() as clock:
        p = params_from_gamma(1.0)
        x = np.arange(-12.0, 12.0, 0.02)
        fields = wf.evolve_series(wf.harmonic_superposition(p, x, (0, 1)), 0.01, 1000, every=50)
        audit = el.conservation_audit(fields, p)
        ph, heat = _heat_audit()
    change = heat.E_HT - heat.E_HT[0]
    rel_match = float(np.max(np.abs(heat.E_HT / heat.closed_form - 1)))
    leaks = bool(np.all(np.diff(heat.E_HT) < 0))
    ok = audit.max_relative_drift < 1e-6 and rel_match < 0.01 and leaks and clock.elapsed < 60
    assert verdict("8  Schrödinger conservation", ok,
                   f"E[H_T] drift {audit.max_relative_drift:.1e} (< 1e-6) over T=10; "
                   f"heat-equation E[H_k] falls by {-change[-1]:.3f}, matches closed form to "
                   f"{rel_match:.1e} (< 0.01); {clock.elapsed:.1f}s (< 60s)")


# -- 9 ---------------------------------------------------------------------------

def test_09_two_step_scaled_evolution(verdict):
    with Timer() as clock:
        p = params_from_gamma(1.0, n=2)
        x = np.arange(-8.0, 8.0, 0.1)
        start = wf.harmonic_superposition(p, x, (0, 1), y=x)
        sigma_nu = wf.scattering_scale(1.0, 1.0)
        fields = wf.evolve_series(start, 0.01, 500, every=50, nu=1.0, gamma=1.0)
        audit = el.conservation_audit(fields, p, ca.two_step_ensemble(1.0).stats(1.0))
        plain = wf.evolve_schrodinger(start, 0.01, 500)
        scaled0 = wf.evolve_scaled(start, 0.0, 0.01, 500, gamma=1.0)
    exact = np.array_equal(plain.psi, scaled0.psi)
    ok = (math.isclose(sigma_nu**2, 3.0) and audit.max_relative_drift < 1e-5 and exact
          and clock.elapsed < 60)
    assert verdict("9  two-step scaled evolution", ok,
                   f"sigma_nu^2={sigma_nu**2:.12g}, functional drift "
                   f"{audit.max_relative_drift:.1e} (< 1e-5) over T=5, nu=0 bit-exact={exact}; "
                   f"{clock.elapsed:.1f}s (< 60s)")


# -- 10 --------------------------------------------------------------------------

def test_10_minkowski_lorentz(verdict):
    with Timer() as clock:
        p = params_from_gamma(0.2, tau_bar=0.1)
        const = p.n * p.epsilon * p.tau_bar / (2 * p.alpha_sq * p.M)
        rng = make_rng(10)
        frame_res = 0.0
        for cur, osm, r in rng.uniform(0, [4.0, 0.05, 0.95], size=(100, 3)):
            frame = rel.equilibrium_frame(p, cur, osm, r)
            frame_res = max(frame_res, abs(frame.residual(p)) / const)
        comp = 0.0
        for v, u in rng.uniform(-0.95, 0.95, size=(100, 2)):
            v12 = (v + u) / (1 + v * u)
            B = rel.lorentz_boost(v, 0.0, 1.0) @ rel.lorentz_boost(0.0, -u, 1.0)
            comp = max(comp, float(np.abs(B - rel.lorentz_boost(v12, 0.0, 1.0)).max()))
        runs = [rel.correlated_experiment(p, r2, 200_000, make_rng(10, i + 1))
                for i, r2 in enumerate((0.0, 0.36, 0.64))]
    z = [(r.ratio - r.ratio_target) / r.ratio_se for r in runs]
    ok = frame_res < 1e-12 and comp < 1e-12 and max(map(abs, z)) < 3 and clock.elapsed < 120
    detail = ", ".join(f"rho_v^2={r.rho_v_sq_target:g}: {r.ratio:.4f}±{r.ratio_se:.4f} vs "
                       f"{r.ratio_target:.4f}" for r in runs)
    assert verdict("10 Minkowski/Lorentz", ok,
                   f"frame residual {frame_res:.1e}, composition {comp:.1e} (< 1e-12); {detail} "
                   f"(|z| < 3); {clock.elapsed:.1f}s (< 120s)")


# -- alternative closed forms that fail ------------------------------------------

@pytest.mark.xfail(strict=True, reason="alternative value sqrt(2 pi / tau_bar) is off by a factor 2")
def test_03b_alternative_inverse_sqrt_value(verdict):
    tau_bar = 1.0
    stats = _clock_stats(2.0 / tau_bar, 1_000_000, seed=3)
    alt = math.sqrt(2 * math.pi / tau_bar)
    z = (stats["inv_sqrt_mean"][0] - alt) / stats["inv_sqrt_mean"][1]
    assert verdict("3b E[1/sqrt(tau)] = sqrt(2 pi/tau_bar)", abs(z) < 3,
                   f"sample {stats['inv_sqrt_mean'][0]:.4f} vs {alt:.4f}, z={z:.0f}")


@pytest.mark.xfail(strict=True, reason="prefactor 2σ²/(τ̄γ sin²θ) and (1−cosθ)Z̄ do not match the map")
def test_04b_alternative_scattering_covariance(verdict):
    p = params_from_gamma(0.5, n=2)
    ens = ca.two_step_ensemble(0.5, p_plus=0.7)
    rng = make_rng(41)
    f, b = _main_shocks(p, rng, 1_000_000)
    hf, hb = ca.map_main_shocks(p, f, b, ens.sample(rng, 1_000_000))
    z, _ = _cov_z(np.concatenate([hf, hb], 1),
                  ca.heatbath_cov_scattering_alternative(p, ens.stats(p.gamma)))
    assert verdict("4b alternative Gamma_Z covariance", z < 3, f"max z {z:.0f}")


@pytest.mark.xfail(strict=True, reason="the closed form −Mσ²/(2t) is half the measured leak")
def test_06b_alternative_radiation_value(verdict):
    p = params_from_gamma(1.0, tau_bar=0.01)
    res = el.brownian_radiation(p, [1.0], 100_000, seed=6)
    alt = -p.M * p.sigma**2 / 2.0
    err = abs(res.mc_estimate[0] / alt - 1)
    assert verdict("6b 2(H+ - H-) = -M sigma^2/(2t) at t=1", err < 0.05,
                   f"MC {res.mc_estimate[0]:.4f} vs {alt:.4f}")


def _alternative_packet(spec, p, t):
    """H± with (αt ± γ/σ_e²)², (αt ∓ 1/(γσ_e²))²/4 and Z_Γ = 1/σ_e⁴ + α²t²."""
    se2, MT, a = spec.sigma_e**2, spec.M_T, spec.alpha_w
    Z = 1.0 / se2**2 + (a * t) ** 2
    drift = spec.p0**2 / (2 * MT**2)
    main = [p.M * se2 * (a * t + s * p.gamma / se2) ** 2 / (2 * MT**2 * Z)
            + p.M * drift + p.epsilon / p.tau_bar for s in (1, -1)]
    bath = [p.m * se2 * (a * t - s / (p.gamma * se2)) ** 2 / (4 * MT**2 * Z)
            + p.m * drift + p.m * p.omega_sq / p.tau_bar for s in (1, -1)]
    return main + bath


@pytest.mark.xfail(strict=True, reason="the alternative packet forms miss the quadrature")
def test_07b_alternative_packet_forms(verdict):
    p, spec, x = _packet_setup()
    worst = 0.0
    for t in PACKET_TIMES:
        quad = el.packet_quadrature_report(spec, p, t, x)
        got = [quad.H_plus_M, quad.H_minus_M, quad.H_plus_m, quad.H_minus_m]
        worst = max(worst, max(abs(g / v - 1) for g, v in zip(got, _alternative_packet(spec, p, t))))
    assert verdict("7b alternative H± packet forms", worst < 1e-3, f"max rel err {worst:.2e}")


@pytest.mark.xfail(strict=True, reason="ε(1+4τ̄/nt)/(4γ sinθ τ̄) is not the heat-equation energy")
def test_08b_alternative_heat_closed_form(verdict):
    p, heat = _heat_audit()
    alt = el.heat_energy_alternative(p, heat.t)
    err = float(np.max(np.abs(heat.E_HT / alt - 1)))
    assert verdict("8b heat-equation E[H_k] = eps(1+4 tau/nt)/(4 gamma sin tau)", err < 0.01,
                   f"max rel err {err:.2f}")
