"""Collision-driven stochastic mechanics: a main particle kicked by a heatbath.

Modules
-------
params
    Model constants derived from the masses, σ and τ̄.
stochastic_clock
    Gamma inter-collision times and correlated shock increments.
collision_algebra
    Elastic collision kernels, scattering ensembles and shock covariances.
path_engine
    Collision paths, coupled reference diffusions and drift estimators.
wavefunction
    Crank–Nicolson Schrödinger evolution and wave-derived drifts.
energy_lab
    Energy functionals, conservation audits and the Brownian leak.
relativity
    Frame intervals, boosts and time dilation from correlated shocks.
cli
    Experiment runner writing CSV and JSON artifacts.
"""
from .params import DomainError, HeatbathParams, derive_params, params_from_gamma
from .wavefunction import SolverError, WaveField

__all__ = ["DomainError", "HeatbathParams", "SolverError", "WaveField", "derive_params",
           "params_from_gamma"]
__version__ = "0.1.0"
