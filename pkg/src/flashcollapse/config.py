"""Strict TOML run configuration.

A run file has a top-level ``seed`` and the sections ``[model]``,
``[initial]``, ``[schedule]``, ``[ensemble]`` and ``[output]``. Every key is
checked against a fixed allow-list, so a misspelt parameter is an error
rather than a silently ignored default. Example::

    seed = 20240601

    [model]
    kind = "grw"            # grw | csl_discrete | relativistic_lattice
    n_sites = 41
    x_min = -5.0
    x_max = 5.0
    alpha = 10.0
    lambda_rate = 1.0

    [initial]
    kind = "gaussian"       # gaussian (grw) | occupations (lattice models)
    center = 0.0
    width = 1.0

    [schedule]
    kind = "model"          # model | poisson | periodic | explicit | none
    horizon = 10.0

    [ensemble]
    n_trajectories = 100

    [output]
    flashes = "flashes.csv"
    summary = "summary.json"
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .engine import CollapseModel, EventSchedule, GaussianJumpFamily
from .errors import CollapseError, ConfigError, TruncationLeakageError
from .models import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_LAMBDA,
    DEFAULT_MU,
    CslDiscreteModel,
    GrwModel,
    PositionGrid,
    RelativisticFieldSite,
    SmearingKernel,
    gaussian_packet,
    hopping_hamiltonian,
)
from .qalg import QuantumState, embed

MODEL_KEYS = {
    "grw": {
        "kind": None, "n_sites": 41, "x_min": -5.0, "x_max": 5.0, "n_particles": 1,
        "alpha": DEFAULT_ALPHA, "lambda_rate": DEFAULT_LAMBDA, "mass": 1.0,
        "boundary": "periodic",
    },
    "csl_discrete": {
        "kind": None, "n_sites": 2, "max_occupation": 8, "beta": DEFAULT_BETA,
        "mu_density": DEFAULT_MU, "kernel": "gaussian", "kernel_width": 2.0,
        "kernel_cutoff": 4, "lattice_spacing": 1.0, "hopping": 1.0, "boundary": "periodic",
        "noise_covariance": None,
    },
    "relativistic_lattice": {
        "kind": None, "n_sites": 2, "fock_dim": 6, "beta": DEFAULT_BETA,
        "mu_density": DEFAULT_MU, "lattice_spacing": 1.0, "hopping": 1.0,
        "boundary": "open",
    },
}
INITIAL_KEYS = {
    "gaussian": {"kind": None, "center": 0.0, "width": 1.0, "momentum": 0.0},
    "occupations": {"kind": None, "occupations": None},
}
SCHEDULE_KEYS = {
    "kind": "model", "horizon": 10.0, "rate": None, "period": None, "events": None,
}
ENSEMBLE_KEYS = {"n_trajectories": 100, "threads": None}
OUTPUT_KEYS = {"flashes": "flashes.csv", "summary": "summary.json"}
TOP_KEYS = {"seed", "model", "initial", "schedule", "ensemble", "output"}

POSITIVE = {
    "n_sites", "alpha", "mass", "beta", "lattice_spacing", "fock_dim", "max_occupation",
    "width", "horizon", "period", "n_particles", "kernel_width",
}
NON_NEGATIVE = {"lambda_rate", "mu_density", "rate", "n_trajectories", "kernel_cutoff"}


def _section(raw: Mapping, name: str, allowed: Mapping[str, Any]) -> dict:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    out = dict(allowed)
    out.update(raw)
    for k, v in out.items():
        if v is None or isinstance(v, (str, list, dict, bool)):
            continue
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"[{name}] {k} must be a finite number, got {v!r}")
        if k in POSITIVE and not v > 0:
            raise ConfigError(f"[{name}] {k} must be positive, got {v!r}")
        if k in NON_NEGATIVE and v < 0:
            raise ConfigError(f"[{name}] {k} must be non-negative, got {v!r}")
    return out


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: dict
    initial: dict
    schedule: dict
    ensemble: dict
    output: dict = field(default_factory=lambda: dict(OUTPUT_KEYS))

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RunConfig":
        unknown = sorted(set(raw) - TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        seed = raw.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        model_raw = raw.get("model")
        if not isinstance(model_raw, Mapping) or model_raw.get("kind") not in MODEL_KEYS:
            raise ConfigError(f"[model] kind must be one of {sorted(MODEL_KEYS)}")
        model = _section(model_raw, "model", MODEL_KEYS[model_raw["kind"]])
        default_init = "gaussian" if model["kind"] == "grw" else "occupations"
        init_raw = dict(raw.get("initial", {"kind": default_init}))
        init_raw.setdefault("kind", default_init)
        if init_raw["kind"] not in INITIAL_KEYS:
            raise ConfigError(f"[initial] kind must be one of {sorted(INITIAL_KEYS)}")
        if (init_raw["kind"] == "gaussian") != (model["kind"] == "grw"):
            raise ConfigError(f"initial kind {init_raw['kind']!r} does not fit model {model['kind']!r}")
        initial = _section(init_raw, "initial", INITIAL_KEYS[init_raw["kind"]])
        schedule = _section(raw.get("schedule", {}), "schedule", SCHEDULE_KEYS)
        if schedule["kind"] not in ("model", "poisson", "periodic", "explicit", "none"):
            raise ConfigError(f"unknown schedule kind {schedule['kind']!r}")
        ensemble = _section(raw.get("ensemble", {}), "ensemble", ENSEMBLE_KEYS)
        if not isinstance(ensemble["n_trajectories"], int):
            raise ConfigError("[ensemble] n_trajectories must be an integer")
        output = _section(raw.get("output", {}), "output", OUTPUT_KEYS)
        cfg = cls(seed, model, initial, schedule, ensemble, output)
        cfg.build()  # surface model-level contract violations as config errors
        return cfg

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error: {exc}") from exc
        return cls.from_dict(raw)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "model": self.model, "initial": self.initial,
                "schedule": self.schedule, "ensemble": self.ensemble, "output": self.output}

    def build(self):
        """Return ``(collapse_model, initial_state, schedule)``."""
        try:
            return _build(self)
        except ConfigError:
            raise
        except (CollapseError, ValueError, IndexError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc


def _kernel(m):
    if m["kernel"] == "gaussian":
        return SmearingKernel.gaussian(m["kernel_width"], int(m["kernel_cutoff"]))
    if m["kernel"] == "delta":
        return SmearingKernel.delta()
    raise ConfigError(f"kernel must be 'gaussian' or 'delta', got {m['kernel']!r}")


def _build(cfg: RunConfig):
    m, init, sch = cfg.model, cfg.initial, cfg.schedule
    kind = m["kind"]
    if kind == "grw":
        grid = PositionGrid(m["x_min"], m["x_max"], int(m["n_sites"]))
        model = GrwModel(grid, int(m["n_particles"]), m["alpha"], m["lambda_rate"], m["mass"],
                         m["boundary"])
        cm = model.collapse_model()
        one = gaussian_packet(grid, init["center"], init["width"], init["momentum"]).amplitudes
        vec = one
        for _ in range(model.n_particles - 1):
            vec = np.kron(vec, one)
        state = QuantumState(vec, model.dims)
        default_schedule = model.schedule
    elif kind == "csl_discrete":
        noise = m["noise_covariance"]
        model = CslDiscreteModel(int(m["n_sites"]), int(m["max_occupation"]), m["beta"],
                                 m["mu_density"], _kernel(m), m["lattice_spacing"], m["hopping"],
                                 m["boundary"],
                                 None if noise is None else {int(k): float(v) for k, v in noise.items()})
        cm = model.collapse_model()
        state = model.occupation_state(_occupations(init, model.n_sites))
        default_schedule = model.schedule
    else:
        site = RelativisticFieldSite(int(m["fock_dim"]), m["beta"], m["lattice_spacing"])
        n = int(m["n_sites"])
        h = hopping_hamiltonian(site.fock_dim, n, m["hopping"], m["boundary"])
        gen = site.modulus_squared()
        fams = {s: GaussianJumpFamily(embed(gen, s, h.dims), site.sigma, label=s)
                for s in range(n)}
        cm = CollapseModel(h, fams, name="relativistic_lattice",
                           leakage_check=_fock_leakage(h.dims))
        occ = _occupations(init, n)
        if any(not 0 <= k < site.fock_dim for k in occ):
            raise ConfigError(f"occupations {occ} exceed fock_dim {site.fock_dim}")
        state = QuantumState.basis(int(np.ravel_multi_index(occ, h.dims)), h.dims)
        csl_like = CslDiscreteModel(n, max_occupation=1, beta=site.beta,
                                    mu_density=m["mu_density"],
                                    lattice_spacing=site.lattice_spacing)
        default_schedule = csl_like.schedule
    horizon = sch["horizon"]
    if sch["kind"] == "model":
        schedule = default_schedule(horizon)
    elif sch["kind"] == "poisson":
        if sch["rate"] is None:
            raise ConfigError("[schedule] poisson needs a rate")
        schedule = EventSchedule("poisson", horizon, rate=sch["rate"])
    elif sch["kind"] == "periodic":
        schedule = EventSchedule("periodic", horizon, period=sch["period"])
    elif sch["kind"] == "explicit":
        evs = sch["events"] or []
        schedule = EventSchedule("explicit", horizon, events=tuple((float(t), int(lab)) for t, lab in evs))
    else:
        schedule = EventSchedule("explicit", horizon, events=())
    return cm, state, schedule


def _occupations(init, n_sites):
    occ = init["occupations"]
    if occ is None:
        occ = [1] + [0] * (n_sites - 1)
    if len(occ) != n_sites:
        raise ConfigError(f"[initial] occupations needs {n_sites} entries")
    return tuple(int(k) for k in occ)


def _fock_leakage(dims, tol=1e-6):
    top = np.zeros(int(np.prod(dims)), dtype=bool)
    idx = np.indices(dims).reshape(len(dims), -1)
    for axis, d in enumerate(dims):
        top |= idx[axis] == d - 1

    def check(state: QuantumState):
        p = np.abs(state.amplitudes) ** 2
        frac = p[top].sum() / p.sum()
        if frac > tol:
            raise TruncationLeakageError(f"top Fock level population {frac:.3e} exceeds {tol:g}")

    return check

