"""Concrete collapse models.

* GRW: distinguishable particles on 1-D position lattices. The physical
  model localises in three dimensions with prefactor ``(alpha/pi)^(3/4)``;
  here each particle has one axis and the prefactor is ``(alpha/pi)^(1/4)``
  (one factor per axis).
* Discrete CSL: jumps sharpen a smeared occupation-number density on a
  truncated lattice Fock space, at Poisson-sprinkled spacetime points.
* Relativistic lattice field: a single site of a truncated bosonic field
  with ``phi = b / sqrt(a)``, so ``phi^dag phi = n / a``.

All jump operators here are diagonal, real and symmetric in their collapse
basis (position or occupation number).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .engine import (
    CollapseModel,
    EventSchedule,
    GaussianJumpFamily,
    ScheduledEvent,
    poisson_event_times,
)
from .errors import ContractViolation, SizeError, TruncationLeakageError
from .qalg import MAX_DIM, LinearOp, QuantumState, embed, hermitian_function

__all__ = [
    "PositionGrid",
    "GrwModel",
    "SmearingKernel",
    "CslDiscreteModel",
    "RelativisticFieldSite",
    "grw_jump",
    "csl_smeared_density",
    "csl_jump",
    "relativistic_jump",
    "poisson_event_times",
    "gaussian_packet",
    "ladder",
    "hopping_hamiltonian",
]

DEFAULT_ALPHA = 10.0
DEFAULT_LAMBDA = 1.0
DEFAULT_BETA = 1.0
DEFAULT_MU = 4.0
LEAKAGE_TOL = 1e-6


def _check_boundary(boundary):
    if boundary not in ("periodic", "open"):
        raise ContractViolation(f"boundary must be 'periodic' or 'open', got {boundary!r}")


def ladder(dim: int) -> np.ndarray:
    """Truncated annihilation operator on ``dim`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1)


def _bonds(n_sites, boundary):
    bonds = {(x, x + 1) for x in range(n_sites - 1)}
    if boundary == "periodic" and n_sites > 2:
        bonds.add((n_sites - 1, 0))
    return sorted(bonds)


# -- GRW ---------------------------------------------------------------------

@dataclass(frozen=True)
class PositionGrid:
    x_min: float
    x_max: float
    n_sites: int

    def __post_init__(self):
        if self.n_sites < 2 or not self.x_max > self.x_min:
            raise ContractViolation("position grid needs n_sites >= 2 and x_max > x_min")

    @property
    def positions(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_sites)

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_sites - 1)


@dataclass(frozen=True)
class GrwModel:
    grid: PositionGrid
    n_particles: int = 1
    alpha: float = DEFAULT_ALPHA
    lambda_rate: float = DEFAULT_LAMBDA
    mass: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ContractViolation("alpha must be positive")
        if self.lambda_rate < 0:
            raise ContractViolation("lambda_rate must be non-negative")
        if not self.mass > 0 or self.n_particles < 1:
            raise ContractViolation("need mass > 0 and at least one particle")
        _check_boundary(self.boundary)
        if self.grid.n_sites ** self.n_particles > MAX_DIM:
            raise SizeError(
                f"{self.n_particles} particles x {self.grid.n_sites} sites exceeds {MAX_DIM}"
            )

    @property
    def dims(self) -> tuple:
        return (self.grid.n_sites,) * self.n_particles

    @property
    def sigma(self) -> float:
        """Outcome noise width: ``|J(z)|^2`` is a Normal of this std around x."""
        return (2.0 * self.alpha) ** -0.5

    def kinetic_1p(self) -> np.ndarray:
        """Discrete Laplacian kinetic term ``-(1/2m) d^2/dx^2`` for one particle."""
        n, dx = self.grid.n_sites, self.grid.spacing
        lap = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        if self.boundary == "periodic":
            lap[0, -1] -= 1.0
            lap[-1, 0] -= 1.0
        return lap / (2.0 * self.mass * dx * dx)

    @cached_property
    def hamiltonian(self) -> LinearOp:
        k = self.kinetic_1p()
        h = sum(embed(k, i, self.dims).entries for i in range(self.n_particles))
        return LinearOp(h, self.dims)

    def position_operator(self, particle: int) -> LinearOp:
        self._check_particle(particle)
        return embed(np.diag(self.grid.positions), particle, self.dims)

    def jump_family(self, particle: int, n_points: int = 161) -> GaussianJumpFamily:
        return GaussianJumpFamily(self.position_operator(particle), self.sigma,
                                  label=particle, n_points=n_points)

    def collapse_model(self) -> CollapseModel:
        fams = {i: self.jump_family(i) for i in range(self.n_particles)}
        return CollapseModel(self.hamiltonian, fams, name="grw")

    def schedule(self, horizon: float) -> EventSchedule:
        return EventSchedule("poisson", horizon, rate=self.lambda_rate)

    def _check_particle(self, particle):
        if not 0 <= particle < self.n_particles:
            raise IndexError(f"particle {particle} out of range (n={self.n_particles})")


def grw_jump(model: GrwModel, particle: int, z: float) -> LinearOp:
    """``(alpha/pi)^(1/4) exp(-(alpha/2)(x - z)^2)`` on one particle's factor."""
    model._check_particle(particle)
    x = model.grid.positions
    g = (model.alpha / np.pi) ** 0.25 * np.exp(-0.5 * model.alpha * (x - z) ** 2)
    return embed(np.diag(g), particle, model.dims)


def gaussian_packet(grid: PositionGrid, center: float, width: float,
                    momentum: float = 0.0) -> QuantumState:
    """Amplitude ``exp(-(x - c)^2 / (2 w^2) + i k x)`` sampled on the grid."""
    x = grid.positions
    psi = np.exp(-((x - center) ** 2) / (2.0 * width ** 2) + 1j * momentum * x)
    return QuantumState(psi, (grid.n_sites,))


# -- discrete CSL ------------------------------------------------------------

@dataclass(frozen=True)
class SmearingKernel:
    """Non-negative weights indexed by site offset ``x - y``."""

    weights: Mapping[int, float]
    width: float | None = None

    def __post_init__(self):
        w = {int(k): float(v) for k, v in dict(self.weights).items()}
        if not w or any(v < 0 or not np.isfinite(v) for v in w.values()):
            raise ContractViolation("kernel weights must be finite and non-negative")
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(sum(self.weights.values()))

    @classmethod
    def delta(cls) -> "SmearingKernel":
        return cls({0: 1.0}, 0.0)

    @classmethod
    def gaussian(cls, width: float = 2.0, cutoff: int = 4) -> "SmearingKernel":
        """Discrete Gaussian ``exp(-k^2 / 2 width^2)``, |k| <= cutoff, summing to 1."""
        ks = np.arange(-cutoff, cutoff + 1)
        w = np.exp(-(ks ** 2) / (2.0 * width ** 2))
        w /= w.sum()
        return cls({int(k): float(v) for k, v in zip(ks, w)}, width)


@dataclass(frozen=True)
class CslDiscreteModel:
    n_sites: int
    max_occupation: int = 8
    beta: float = DEFAULT_BETA
    mu_density: float = DEFAULT_MU
    kernel: SmearingKernel = field(default_factory=SmearingKernel.gaussian)
    lattice_spacing: float = 1.0
    hopping: float = 1.0
    boundary: str = "periodic"
    # noise-field covariance is kept separate from the smearing kernel on purpose
    noise_covariance: Mapping[int, float] | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ContractViolation("beta must be positive")
        if self.mu_density < 0 or not self.lattice_spacing > 0:
            raise ContractViolation("need mu_density >= 0 and lattice_spacing > 0")
        if self.n_sites < 1 or self.max_occupation < 1:
            raise ContractViolation("need at least one site and max_occupation >= 1")
        _check_boundary(self.boundary)
        if (self.max_occupation + 1) ** self.n_sites > MAX_DIM:
            raise SizeError(
                f"Fock space ({self.max_occupation + 1})^{self.n_sites} exceeds {MAX_DIM}"
            )

    @property
    def dims(self) -> tuple:
        return (self.max_occupation + 1,) * self.n_sites

    @property
    def gamma_derived(self) -> float:
        """Continuum CSL rate parameter, from ``mu * beta = 2 gamma``."""
        return self.mu_density * self.beta / 2.0

    @property
    def sigma(self) -> float:
        return (2.0 * self.beta) ** -0.5

    def occupation_operator(self, site: int) -> LinearOp:
        self._check_site(site)
        return embed(np.diag(np.arange(self.max_occupation + 1, dtype=float)), site, self.dims)

    def occupation_basis(self) -> np.ndarray:
        """Rows are occupation tuples in basis order."""
        levels = range(self.max_occupation + 1)
        return np.array(list(itertools.product(levels, repeat=self.n_sites)), dtype=float)

    def occupation_state(self, occupations) -> QuantumState:
        occ = tuple(int(n) for n in occupations)
        if len(occ) != self.n_sites or any(not 0 <= n <= self.max_occupation for n in occ):
            raise ContractViolation(f"occupations {occ} invalid for this lattice")
        idx = int(np.ravel_multi_index(occ, self.dims))
        return QuantumState.basis(idx, self.dims)

    @cached_property
    def hamiltonian(self) -> LinearOp:
        """Truncated boson hopping ``-J sum (b_x^dag b_y + h.c.)`` over bonds."""
        return hopping_hamiltonian(self.max_occupation + 1, self.n_sites, self.hopping,
                                   self.boundary)

    def jump_family(self, site: int, n_points: int = 161) -> GaussianJumpFamily:
        return GaussianJumpFamily(csl_smeared_density(self, site), self.sigma,
                                  label=site, n_points=n_points)

    def check_leakage(self, state: QuantumState):
        occ = self.occupation_basis()
        p = np.abs(state.amplitudes) ** 2
        top = p[np.any(occ == self.max_occupation, axis=1)].sum() / p.sum()
        if top > LEAKAGE_TOL:
            raise TruncationLeakageError(
                f"top Fock level population {top:.3e} exceeds {LEAKAGE_TOL:g}"
            )

    def collapse_model(self) -> CollapseModel:
        fams = {x: self.jump_family(x) for x in range(self.n_sites)}
        return CollapseModel(self.hamiltonian, fams, name="csl_discrete",
                             leakage_check=self.check_leakage)

    def schedule(self, horizon: float) -> EventSchedule:
        """Events sprinkled uniformly in the lattice spacetime volume at density mu."""
        from .spacetime import LatticeRegion, sprinkle

        n_steps = max(1, int(np.ceil(horizon / self.lattice_spacing)))
        region = LatticeRegion(self.n_sites, n_steps, self.lattice_spacing,
                               horizon / n_steps)

        def sprinkler(rng):
            s = sprinkle(region, self.mu_density, rng)
            return [ScheduledEvent(e.t, e.site, e.x) for e in s.events]

        return EventSchedule("sprinkling", horizon, sprinkler=sprinkler)

    def _check_site(self, site):
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site {site} out of range (L={self.n_sites})")


def csl_smeared_density(model: CslDiscreteModel, site: int) -> LinearOp:
    """``N(x) = sum_y kernel(x - y) n_y``; offsets falling off the lattice are dropped."""
    model._check_site(site)
    occ = model.occupation_basis()
    diag = np.zeros(len(occ))
    for offset, w in model.kernel.weights.items():
        y = site - offset
        if 0 <= y < model.n_sites:
            diag += w * occ[:, y]
    return LinearOp(np.diag(diag), model.dims)


def csl_jump(model: CslDiscreteModel, site: int, z: float) -> LinearOp:
    """``(beta/pi)^(1/4) exp(-(beta/2)(N(x) - z)^2)``, diagonal in occupation basis."""
    nu = np.diagonal(csl_smeared_density(model, site).entries).real
    g = (model.beta / np.pi) ** 0.25 * np.exp(-0.5 * model.beta * (nu - z) ** 2)
    return LinearOp(np.diag(g), model.dims)


# -- relativistic lattice field ----------------------------------------------

@dataclass(frozen=True)
class RelativisticFieldSite:
    fock_dim: int = 6
    beta: float = DEFAULT_BETA
    lattice_spacing: float = 1.0

    def __post_init__(self):
        if self.fock_dim < 2:
            raise ContractViolation("fock_dim must be at least 2")
        if not self.lattice_spacing > 0 or not self.beta > 0:
            raise ContractViolation("need lattice_spacing > 0 and beta > 0")

    @property
    def sigma(self) -> float:
        return (2.0 * self.beta) ** -0.5

    def field_operator(self) -> np.ndarray:
        """``phi = b / sqrt(a)``: lattice normalisation of a point-like field."""
        return ladder(self.fock_dim) / np.sqrt(self.lattice_spacing)

    def modulus_squared(self) -> LinearOp:
        """``phi^dag phi`` built from the truncated ladder operator."""
        phi = self.field_operator()
        return LinearOp(phi.conj().T @ phi)

    def spectrum(self) -> np.ndarray:
        return np.diagonal(self.modulus_squared().entries).real.copy()


def relativistic_jump(site_model: RelativisticFieldSite, z: float) -> LinearOp:
    """``(beta/pi)^(1/4) exp(-(beta/2)(phi^dag phi - z)^2)`` on one field site."""
    b = site_model.beta
    return hermitian_function(
        site_model.modulus_squared(),
        lambda lam: (b / np.pi) ** 0.25 * np.exp(-0.5 * b * (lam - z) ** 2),
    )


def hopping_hamiltonian(fock_dim: int, n_sites: int, hopping: float = 1.0,
                        boundary: str = "open") -> LinearOp:
    """``-J sum_<xy> (b_x^dag b_y + h.c.)`` on ``n_sites`` truncated boson sites."""
    _check_boundary(boundary)
    dims = (fock_dim,) * n_sites
    b = ladder(fock_dim)
    d = fock_dim ** n_sites
    if d > MAX_DIM:
        raise SizeError(f"lattice dimension {d} exceeds {MAX_DIM}")
    h = np.zeros((d, d))
    for x, y in _bonds(n_sites, boundary):
        term = embed(b, x, dims).entries.real.T @ embed(b, y, dims).entries.real
        h -= hopping * (term + term.T)
    return LinearOp(h, dims)
