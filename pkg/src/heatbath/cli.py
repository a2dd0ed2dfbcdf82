"""Command-line experiment runner.

Every subcommand reads an :class:`ExperimentConfig`, writes a CSV series
and a JSON summary into the output directory, and records the run in
``manifest.json``. Precedence is built-in defaults, then ``--config``,
then explicit flags.

Exit codes: 0 ok, 2 configuration error, 3 failed acceptance check,
4 numerical solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np

from . import collision_algebra as ca
from . import energy_lab as el
from . import path_engine as pe
from . import relativity as rel
from . import stochastic_clock as sc
from . import wavefunction as wf
from .params import DomainError, HeatbathParams, params_from_mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_NUMERIC = 0, 2, 3, 4
PARAM_KEYS = ("M", "m", "gamma", "sigma", "tau_bar", "n")
TOP_KEYS = ("command", "seed", "out_dir", "threads", "params", "options", "tolerances")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class Option(NamedTuple):
    kind: str  # float, int, str, floats or ints
    default: Any
    help: str


class Check(NamedTuple):
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "passed": bool(self.passed)}


class Outcome(NamedTuple):
    header: list[str]
    rows: list[list[Any]]
    summary: dict[str, Any]
    checks: list[Check]


@dataclass
class Command:
    name: str
    help: str
    runner: Callable[["ExperimentConfig", HeatbathParams], Outcome]
    options: dict[str, Option]
    tolerances: dict[str, float]
    params: dict[str, Any] = field(default_factory=dict)


# -- configuration ---------------------------------------------------------------

def _coerce(kind: str, value: Any, where: str) -> Any:
    try:
        if kind in ("floats", "ints"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)) or not value:
                raise ValueError("expected a non-empty list")
            return [_coerce(kind[:-1], v, where) for v in value]
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError("expected a number")
            out = float(value)
            if not math.isfinite(out):
                raise ValueError("must be finite")
            return out
        if kind == "int":
            try:
                num = float(value)
            except (TypeError, ValueError):
                num = math.nan
            if isinstance(value, bool) or not math.isfinite(num) or num != int(num):
                raise ValueError("expected an integer")
            return int(num)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError("expected a string")
            return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, f"{exc} (got {value!r})") from None
    raise ConfigError(where, f"unsupported option type {kind!r}")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``params`` holds the primary model constants (``m`` or ``gamma``),
    ``options`` the subcommand settings and ``tolerances`` overrides for
    the acceptance checks.
    """

    command: str
    seed: int = 0
    out_dir: str = "."
    threads: int = 1
    params: dict[str, Any] = field(default_factory=dict)
    options: dict[str, Any] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"command": self.command, "seed": self.seed, "out_dir": self.out_dir,
                "threads": self.threads, "params": dict(self.params),
                "options": dict(self.options), "tolerances": dict(self.tolerances)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config", "expected a table")
        extra = set(data) - set(TOP_KEYS)
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown key")
        if "command" not in data:
            raise ConfigError("command", "missing")
        for key in ("params", "options", "tolerances"):
            if not isinstance(data.get(key, {}), Mapping):
                raise ConfigError(key, "expected a table")
        cfg = cls(command=data["command"], seed=data.get("seed", 0),
                  out_dir=data.get("out_dir", "."), threads=data.get("threads", 1),
                  params=dict(data.get("params", {})), options=dict(data.get("options", {})),
                  tolerances=dict(data.get("tolerances", {})))
        return cfg.validated()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def validated(self) -> "ExperimentConfig":
        """Normalized copy with defaults filled in; raises :class:`ConfigError`."""
        if self.command not in COMMANDS:
            raise ConfigError("command", f"unknown subcommand {self.command!r}; "
                              f"choose from {sorted(COMMANDS)}")
        spec = COMMANDS[self.command]
        seed = _coerce("int", self.seed, "seed")
        if seed < 0:
            raise ConfigError("seed", "must be non-negative")
        threads = _coerce("int", self.threads, "threads")
        if threads < 1:
            raise ConfigError("threads", "must be at least 1")
        out_dir = _coerce("str", self.out_dir, "out_dir")
        params = dict(spec.params)
        for k, v in self.params.items():
            if k not in PARAM_KEYS:
                raise ConfigError(f"params.{k}", "unknown parameter")
            if k in ("m", "gamma"):
                params.pop("gamma" if k == "m" else "m", None)
            params[k] = _coerce("int" if k == "n" else "float", v, f"params.{k}")
        if "m" in self.params and "gamma" in self.params:
            raise ConfigError("params.gamma", "give either m or gamma, not both")
        try:
            params_from_mapping(params)
        except DomainError as exc:
            raise ConfigError("params", str(exc)) from None
        options = {}
        for k, opt in spec.options.items():
            options[k] = _coerce(opt.kind, self.options.get(k, opt.default), f"options.{k}")
        for k in self.options:
            if k not in spec.options:
                raise ConfigError(f"options.{k}", f"not an option of {self.command}")
        tolerances = dict(spec.tolerances)
        for k, v in self.tolerances.items():
            if k not in spec.tolerances:
                raise ConfigError(f"tolerances.{k}", f"not a check of {self.command}")
            tol = _coerce("float", v, f"tolerances.{k}")
            if tol <= 0:
                raise ConfigError(f"tolerances.{k}", "must be positive")
            tolerances[k] = tol
        return ExperimentConfig(self.command, seed, out_dir, threads, params, options, tolerances)

    def model(self) -> HeatbathParams:
        return params_from_mapping(self.params)


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a TOML or JSON config; a run manifest is accepted as well."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if isinstance(data, dict) and "config" in data and "checks" in data:
        data = data["config"]
    return data


# -- artifacts --------------------------------------------------------------------

def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.write_text(buf.getvalue(), newline="\n")


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def package_version() -> str:
    """Installed version, with ``git describe`` appended when available."""
    try:
        version = metadata.version("heatbath")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).resolve().parent, capture_output=True,
                              text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return version
    if desc.returncode == 0 and desc.stdout.strip():
        return f"{version}+g{desc.stdout.strip()}"
    return version


# -- subcommands ------------------------------------------------------------------

def _pool_map(cfg: ExperimentConfig, fn: Callable, jobs: Sequence) -> list:
    """Run independent jobs on ``cfg.threads`` threads, keeping job order."""
    if cfg.threads == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, jobs))


def _check(name: str, value: float, tol: float, ok: bool | None = None) -> Check:
    passed = bool(value <= tol) if ok is None else bool(ok)
    return Check(name, float(value), float(tol), passed)


def run_collide(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    samples = cfg.options["samples"]
    if samples < 1:
        raise ConfigError("options.samples", "must be at least 1")
    chunks = np.array_split(np.arange(samples), min(samples, 8))

    def job(item):
        k, idx = item
        rng = sc.make_rng(cfg.seed, k)
        U = ca.sample_orthogonal(p.n, rng, len(idx))
        v1 = rng.standard_normal((len(idx), p.n))
        w1 = rng.standard_normal((len(idx), p.n))
        out = []
        for i, Ui, a, b in zip(idx, U, v1, w1):
            kernel = ca.kernel_from_unitary(p, Ui)
            er, kr = ca.collide(kernel, a, b).residuals(p.M, p.m), kernel.residuals()
            out.append([int(i), er["momentum"], er["energy"], kr["energy"],
                        kr["momentum_main"], kr["momentum_bath"], kr["orthogonal"]])
        return out

    rows = [r for part in _pool_map(cfg, job, list(enumerate(chunks))) for r in part]
    header = ["event", "momentum", "energy", "kernel_energy", "kernel_momentum_main",
              "kernel_momentum_bath", "orthogonal"]
    worst = {h: max(r[j] for r in rows) for j, h in enumerate(header) if j}
    tol = cfg.tolerances["residual"]
    checks = [_check(f"max_{h}", v, tol) for h, v in worst.items()]
    return Outcome(header, rows, {"max_residuals": worst}, checks)


def run_converge(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    kw = {"ou": {"k": o["k"]}, "constant": {"a": o["a"]}}.get(o["drift"], {})
    drift = pe.drift_from_name(o["drift"], **kw)
    res = pe.convergence_study(drift, p, o["betas"], o["paths"], o["T"],
                               sc.make_rng(cfg.seed), x0=np.full(p.n, o["x0"]))
    rows = [[b, e, s] for b, e, s in zip(res.betas, res.sup_error, res.std_error)]
    dev = abs(res.slope + 1.0)
    return Outcome(["beta", "sup_error", "std_error"], rows,
                   {"slope": res.slope, "dt_fine": res.dt_fine, "drift_id": drift.drift_id},
                   [_check("slope_minus_one", dev, cfg.tolerances["slope"])])


def run_conserve(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    if o["potential"] != "harmonic":
        raise ConfigError("options.potential", "conserve runs the harmonic superposition; "
                          "only 'harmonic' is available")
    if p.n not in (1, 2):
        raise ConfigError("params.n", "wave evolution supports n = 1 or 2")
    if o["nu"] and p.n != 2:
        raise ConfigError("options.nu", "two-step scattering needs params.n = 2")
    x = np.arange(-o["L"], o["L"], o["dx"])
    start = wf.harmonic_superposition(p, x, tuple(o["levels"]), o["k"],
                                      y=x if p.n == 2 else None)
    steps = int(round(o["T"] / o["dt"]))
    every = max(1, min(o["every"], steps))
    fields = wf.evolve_series(start, o["dt"], steps, every, nu=o["nu"], gamma=p.gamma)
    stats = ca.two_step_ensemble(o["nu"]).stats(p.gamma) if p.n == 2 else None
    audit = el.conservation_audit(fields, p, stats)
    E0 = audit.E_HT[0]
    rows = [[t, E, (E - E0) / abs(E0), f.norm()] for t, E, f in zip(audit.t, audit.E_HT, fields)]
    return Outcome(["t", "E_HT", "drift", "norm"], rows,
                   {"E_HT_0": E0, "max_relative_drift": audit.max_relative_drift,
                    "max_dynamic_drift": audit.max_dynamic_drift, "chi": fields[0].chi,
                    "sigma_nu": fields[0].sigma_nu},
                   [_check("energy_drift", audit.max_relative_drift, cfg.tolerances["drift"])])


def run_clock(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    N = cfg.options["samples"]
    if N < 2:
        raise ConfigError("options.samples", "must be at least 2")
    tau = sc.sample_intercollision(p.beta, sc.make_rng(cfg.seed), N)
    exact = sc.gamma_moments(p.beta)
    d = tau - tau.mean()
    series = {"mean": (tau, exact.mean),
              "variance": (None, exact.variance),
              "inv_mean": (1.0 / tau, exact.inv_mean),
              "inv_sqrt_mean": (1.0 / np.sqrt(tau), exact.inv_sqrt_mean)}
    rows, checks = [], []
    tol = cfg.tolerances["z"]
    for name, (vals, target) in series.items():
        if vals is None:
            est = float(d @ d / (N - 1))
            se = float(np.std(d * d, ddof=1) / math.sqrt(N))
        else:
            est = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(N))
        z = (est - target) / se
        rows.append([name, est, se, target, z])
        checks.append(_check(f"{name}_z", abs(z), tol))
    return Outcome(["statistic", "sample", "std_error", "closed_form", "z"], rows,
                   {"beta": p.beta, "samples": N}, checks)


def run_radiate(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    res = el.brownian_radiation(p, o["times"], o["paths"], seed=cfg.seed, chunks=o["chunks"],
                                window=o["window"], time_degree=o["time_degree"],
                                workers=cfg.threads)
    rel_err = np.abs(res.mc_estimate / res.closed_form - 1.0)
    rows = [list(r) for r in zip(res.t, res.mc_estimate, res.std_error, res.closed_form, rel_err)]
    tol = cfg.tolerances["relative"]
    checks = [_check(f"relative_error_t={t:g}", e, tol) for t, e in zip(res.t, rel_err)]
    return Outcome(["t", "mc_estimate", "std_error", "closed_form", "relative_error"], rows,
                   {"paths": o["paths"]}, checks)


def run_packet(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    if p.n != 1:
        raise ConfigError("params.n", "the packet table is one-dimensional")
    spec = wf.WavePacketSpec.from_params(p, o["p0"], o["sigma_e"])
    x = np.arange(-o["L"], o["L"], o["dx"])
    keys = ["H_plus_M", "H_minus_M", "H_plus_m", "H_minus_m", "E_Hk", "E_HT"]
    rows, worst = [], 0.0
    for t in o["times"]:
        exact = el.packet_energy_report(spec, p, t).to_dict()
        quad = el.packet_quadrature_report(spec, p, t, x).to_dict()
        for k in keys:
            err = abs(quad[k] / exact[k] - 1.0)
            worst = max(worst, err)
            rows.append([t, k, quad[k], exact[k], err])
    limit = el.packet_energy_report(spec, p, math.inf).to_dict()
    return Outcome(["t", "quantity", "quadrature", "closed_form", "relative_error"], rows,
                   {"E_HT": el.packet_total_energy(spec, p),
                    "limit": {k: limit[k] for k in keys}},
                   [_check("max_relative_error", worst, cfg.tolerances["relative"])])


def run_minkowski(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    for r in o["rho_v_sq"]:
        if not 0 <= r < 1:
            raise ConfigError("options.rho_v_sq", f"values must lie in [0, 1), got {r!r}")

    def job(item):
        i, r2 = item
        frame = rel.equilibrium_frame(p, o["current_sq"], o["osmotic_sq"], math.sqrt(r2))
        run = rel.correlated_experiment(p, r2, o["collisions"], sc.make_rng(cfg.seed, i),
                                        k=o["k"])
        return frame, run

    results = _pool_map(cfg, job, list(enumerate(o["rho_v_sq"])))
    rows, checks = [], []
    z_tol, frame_tol = cfg.tolerances["z"], cfg.tolerances["frame"]
    for r2, (frame, run) in zip(o["rho_v_sq"], results):
        z = (run.ratio - run.ratio_target) / run.ratio_se if run.ratio_se > 0 else 0.0
        res = abs(frame.residual(p))
        rows.append([r2, frame.tau_bar, frame.tau_v, frame.c, frame.dx_bar, frame.dx_v,
                     frame.interval(), res, run.ratio, run.ratio_se, run.ratio_target,
                     run.interval, run.interval_se, run.interval_target])
        checks.append(_check(f"frame_residual_rho2={r2:g}", res, frame_tol))
        checks.append(_check(f"dilation_z_rho2={r2:g}", abs(z), z_tol))
    B1 = rel.lorentz_boost(o["v"], 0.0, o["c"])
    B2 = rel.lorentz_boost(0.0, -o["u"], o["c"])
    v12 = (o["v"] + o["u"]) / (1 + o["v"] * o["u"] / o["c"] ** 2)
    comp = float(np.abs(B1 @ B2 - rel.lorentz_boost(v12, 0.0, o["c"])).max())
    checks.append(_check("boost_composition", comp, frame_tol))
    header = ["rho_v_sq", "tau_bar", "tau_v", "c", "dx_bar", "dx_v", "interval",
              "frame_residual", "ratio_mc", "ratio_se", "ratio_target", "interval_mc",
              "interval_se", "interval_target"]
    return Outcome(header, rows, {"boost_composition_residual": comp}, checks)


def run_scatter(cfg: ExperimentConfig, p: HeatbathParams) -> Outcome:
    o = cfg.options
    if p.n != 2:
        raise ConfigError("params.n", "the two-step ensemble lives in n = 2")
    ens = ca.two_step_ensemble(o["nu"], o["p_plus"])
    rng = sc.make_rng(cfg.seed)
    N = o["samples"]
    scale = math.sqrt(2.0 * p.sigma**2 / p.tau_bar)
    f = rng.standard_normal((N, p.n)) * scale
    b = rng.standard_normal((N, p.n)) * scale
    Z = ens.sample(rng, N)
    hf, hb = ca.map_main_shocks(p, f, b, Z)
    s = np.concatenate([hf, hb], axis=1)
    cov = s.T @ s / N
    exact = ca.heatbath_cov_scattering(p, ens.stats(p.gamma))
    prods = s[:, :, None] * s[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(N)
    z = np.abs(cov - exact) / np.where(se > 0, se, 1.0)
    rows = [[i, j, cov[i, j], exact[i, j], se[i, j], z[i, j]]
            for i in range(2 * p.n) for j in range(2 * p.n)]
    return Outcome(["row", "col", "sample", "closed_form", "std_error", "z"], rows,
                   {"max_z": float(z.max())}, [_check("max_z", float(z.max()), cfg.tolerances["z"])])


COMMANDS: dict[str, Command] = {
    "collide": Command("collide", "conservation residuals of random Haar collisions", run_collide,
                       {"samples": Option("int", 1000, "number of random events")},
                       {"residual": 1e-12}, {"gamma": 1.0, "n": 2}),
    "converge": Command("converge", "sup-error of collision paths against the diffusion",
                        run_converge,
                        {"drift": Option("str", "ou", "drift name: zero, constant or ou"),
                         "k": Option("float", 1.0, "OU stiffness"),
                         "a": Option("float", 1.0, "constant drift value"),
                         "betas": Option("floats", [10.0, 20.0, 40.0, 80.0, 160.0],
                                         "collision rates"),
                         "paths": Option("int", 2000, "number of coupled paths"),
                         "T": Option("float", 2.0, "horizon"),
                         "x0": Option("float", 1.0, "start position (every component)")},
                        {"slope": 0.15}),
    "conserve": Command("conserve", "E[H_T] along a Schrödinger evolution", run_conserve,
                        {"potential": Option("str", "harmonic", "potential name"),
                         "k": Option("float", 1.0, "oscillator stiffness"),
                         "levels": Option("ints", [0, 1], "superposed eigenstates"),
                         "T": Option("float", 10.0, "horizon"),
                         "dt": Option("float", 0.01, "time step"),
                         "dx": Option("float", 0.02, "grid spacing"),
                         "L": Option("float", 12.0, "half-width of the grid"),
                         "every": Option("int", 50, "steps between snapshots"),
                         "nu": Option("float", 0.0, "two-step scattering strength (n = 2)")},
                        {"drift": 1e-6}, {"gamma": 1.0}),
    "clock": Command("clock", "moments of the inter-collision times", run_clock,
                     {"samples": Option("int", 1_000_000, "number of draws")}, {"z": 3.0}),
    "radiate": Command("radiate", "energy leak 2(H+ - H-) of Brownian collision paths",
                       run_radiate,
                       {"times": Option("floats", [0.5, 1.0, 2.0], "evaluation times"),
                        "paths": Option("int", 100_000, "number of paths"),
                        "chunks": Option("int", 10, "independent chunks for error bars"),
                        "window": Option("float", 0.4, "relative regression window"),
                        "time_degree": Option("int", 3, "time order of the regression")},
                       {"relative": 0.05}, {"tau_bar": 0.01}),
    "packet": Command("packet", "energy table of the free Gaussian packet", run_packet,
                      {"p0": Option("float", 1.0, "mean momentum"),
                       "sigma_e": Option("float", 1.0, "momentum spread"),
                       "times": Option("floats", [0.0, 0.5, 1.0, 2.0, 5.0], "table times"),
                       "dx": Option("float", 0.01, "quadrature spacing"),
                       "L": Option("float", 60.0, "half-width of the quadrature grid")},
                      {"relative": 1e-3}, {"gamma": 0.5}),
    "minkowski": Command("minkowski", "frame table, interval residuals and time dilation",
                         run_minkowski,
                         {"rho_v_sq": Option("floats", [0.0, 0.36, 0.64],
                                             "squared compound correlations"),
                          "collisions": Option("int", 200_000, "collisions per run"),
                          "k": Option("float", 1.0, "OU stiffness of the path"),
                          "current_sq": Option("float", 0.25, "E|v̄|² of the table frames"),
                          "osmotic_sq": Option("float", 0.01, "osmotic mean square of the frames"),
                          "v": Option("float", 0.3, "first boost velocity"),
                          "u": Option("float", 0.5, "second boost velocity"),
                          "c": Option("float", 1.0, "speed for the boost check")},
                         {"z": 3.0, "frame": 1e-12}, {"gamma": 0.2, "tau_bar": 0.1}),
    "scatter": Command("scatter", "heatbath shock covariance under two-step scattering",
                       run_scatter,
                       {"nu": Option("float", 1.0, "scattering strength"),
                        "p_plus": Option("float", 0.5, "probability of +Z"),
                        "samples": Option("int", 1_000_000, "number of shock pairs")},
                       {"z": 4.0}, {"gamma": 0.5, "n": 2}),
}


# -- running --------------------------------------------------------------------

class RunResult(NamedTuple):
    status: int
    manifest: dict[str, Any]
    out_dir: Path


def run(config: ExperimentConfig) -> RunResult:
    """Execute one validated config and write its artifacts.

    Raises :class:`ConfigError` for bad settings and
    :class:`~heatbath.wavefunction.SolverError` when a solver fails.
    """
    cfg = config.validated()
    spec = COMMANDS[cfg.command]
    try:
        p = cfg.model()
        start = time.perf_counter()
        outcome = spec.runner(cfg, p)
    except DomainError as exc:
        raise ConfigError(cfg.command, str(exc)) from None
    elapsed = time.perf_counter() - start
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_name, json_name = f"{cfg.command}.csv", f"{cfg.command}.json"
    write_csv(out / csv_name, outcome.header, outcome.rows)
    checks = [c.to_dict() for c in outcome.checks]
    summary = {"command": cfg.command, "summary": outcome.summary, "checks": checks}
    (out / json_name).write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    status = EXIT_OK if all(c.passed for c in outcome.checks) else EXIT_CHECK
    manifest = {"config": cfg.to_dict(), "derived_params": p.to_dict(),
                "version": package_version(), "checks": checks,
                "artifacts": [csv_name, json_name], "elapsed_s": round(elapsed, 3),
                "status": status}
    manifest = _jsonable(manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(status, manifest, out)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_globals(parser: argparse.ArgumentParser, default: Any) -> None:
    parser.add_argument("--seed", type=int, default=default, help="base random seed (default 0)")
    parser.add_argument("--out-dir", default=default, help="artifact directory (default .)")
    parser.add_argument("--threads", type=int, default=default,
                        help="worker threads for independent ensembles (default 1)")
    parser.add_argument("--config", default=default,
                        help="TOML or JSON config, or a manifest.json to replay")
    parser.add_argument("-q", "--quiet", action="store_true",
                        default=False if default is None else default,
                        help="suppress the check table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatbath", description=__doc__.splitlines()[0])
    _add_globals(parser, None)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, spec in COMMANDS.items():
        sp = sub.add_parser(name, help=spec.help, description=spec.help)
        # globals may also follow the subcommand
        _add_globals(sp, argparse.SUPPRESS)
        g = sp.add_argument_group("model parameters")
        for key in PARAM_KEYS:
            g.add_argument(_flag(key), dest=f"p_{key}", default=None,
                           help=f"params.{key} (default {spec.params.get(key, 'see docs')})")
        g = sp.add_argument_group("options")
        for key, opt in spec.options.items():
            shown = ",".join(map(str, opt.default)) if isinstance(opt.default, list) else opt.default
            g.add_argument(_flag(key), dest=f"o_{key}", default=None,
                           help=f"{opt.help} (default {shown})")
        g = sp.add_argument_group("tolerances")
        for key, tol in spec.tolerances.items():
            g.add_argument(f"--tol-{key}", dest=f"t_{key}", default=None,
                           help=f"tolerance of the {key} check (default {tol:g})")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict[str, Any] = load_config(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise ConfigError("config", "expected a table at the top level")
    if args.command:
        if data.get("command", args.command) != args.command:
            # flags belong to the named subcommand; drop options of another one
            data = {k: v for k, v in data.items() if k not in ("options", "tolerances")}
        data["command"] = args.command
    for key in ("seed", "out_dir", "threads"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    for prefix, section in (("p_", "params"), ("o_", "options"), ("t_", "tolerances")):
        for k, v in vars(args).items():
            if k.startswith(prefix) and v is not None:
                data.setdefault(section, {})
                name = k[len(prefix):]
                if section == "params" and name in ("m", "gamma"):
                    data[section].pop("gamma" if name == "m" else "m", None)
                data[section][name] = v
    return ExperimentConfig.from_dict(data)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command and not args.config:
        parser.print_help()
        return EXIT_CONFIG
    try:
        result = run(config_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (wf.SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        for c in result.manifest["checks"]:
            mark = "PASS" if c["passed"] else "FAIL"
            print(f"{mark}  {c['name']}: {c['value']:.3e} (tolerance {c['tolerance']:g})")
        print(f"artifacts in {result.out_dir}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
