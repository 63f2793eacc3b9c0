"""Generic collapse dynamics: unitary drift punctuated by jump events.

Between events a state evolves as ``U(dt)|psi>``. At an event with outcome
``z`` it jumps to ``J(z)|psi>`` (left unnormalized), and ``z`` is drawn from
the density ``<psi|J(z)^dag J(z)|psi> / <psi|psi>``.

Random streams: a trajectory owns ``numpy.random.default_rng(seed)``. Inside
an ensemble, trajectory ``i`` of master seed ``m`` uses the 64-bit seed
produced by :func:`trajectory_seed` (``SeedSequence(m, spawn_key=(i,))``),
so results never depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    BasisMismatch,
    ContractViolation,
    DegenerateOutcomeError,
    DegenerateStateError,
)
from .qalg import LinearOp, QuantumState, rescale_if_needed, unitary_from_hamiltonian

DEFAULT_GRID_POINTS = 161
DEFAULT_GRID_SIGMAS = 8.0
DEFAULT_COMPLETENESS_TOL = 1e-6


@dataclass(frozen=True)
class OutcomeGrid:
    """Trapezoid quadrature grid on a scalar outcome interval."""

    lo: float
    hi: float
    n_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if not (self.hi > self.lo) or self.n_points < 2:
            raise ContractViolation(f"bad outcome grid [{self.lo}, {self.hi}] x {self.n_points}")

    @cached_property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    @cached_property
    def weights(self) -> np.ndarray:
        h = (self.hi - self.lo) / (self.n_points - 1)
        w = np.full(self.n_points, h)
        w[0] = w[-1] = 0.5 * h
        return w

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    def contains(self, z) -> bool:
        return bool(np.all((np.asarray(z) >= self.lo) & (np.asarray(z) <= self.hi)))

    @classmethod
    def covering(cls, centers, sigma, n_points=DEFAULT_GRID_POINTS, n_sigma=DEFAULT_GRID_SIGMAS):
        """Grid spanning every centre ± ``n_sigma``·sigma.

        ``n_points`` is raised when needed so that the step never exceeds
        ``sigma``; the trapezoid rule on a Gaussian then errs by < 1e-8.
        """
        centers = np.atleast_1d(np.asarray(centers, dtype=float))
        lo = float(centers.min() - n_sigma * sigma)
        hi = float(centers.max() + n_sigma * sigma)
        n = max(int(n_points), int(math.ceil((hi - lo) / sigma)) + 1)
        return cls(lo, hi, n)


class JumpFamily:
    """A parametric family of jump operators ``z -> J(z)`` with an outcome grid.

    ``jump_at`` must return a :class:`LinearOp` on ``dims``. Subclasses may
    override :meth:`apply` and :meth:`quadrature_gram` with faster
    equivalents.
    """

    def __init__(self, jump_at: Callable[[float], LinearOp], grid: OutcomeGrid, dims,
                 label: Any = None, tolerance: float = DEFAULT_COMPLETENESS_TOL):
        self._jump_at = jump_at
        self.grid = grid
        self.dims = tuple(dims)
        self.label = label
        self.tolerance = tolerance

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def jump_at(self, z: float) -> LinearOp:
        return self._jump_at(z)

    def apply(self, z: float, vec: np.ndarray) -> np.ndarray:
        return self.jump_at(z).entries @ vec

    def quadrature_gram(self) -> np.ndarray:
        acc = np.zeros((self.dim, self.dim), dtype=complex)
        for z, w in zip(self.grid.points, self.grid.weights):
            j = self.jump_at(z).entries
            acc += w * (j.conj().T @ j)
        return acc


class GaussianJumpFamily(JumpFamily):
    """``J(z) = (2 pi sigma^2)^(-1/4) exp(-(A - z)^2 / (4 sigma^2))`` for Hermitian ``A``.

    The outcome density of an ``A``-eigenstate with eigenvalue ``a`` is then
    exactly ``Normal(z; a, sigma)``. GRW, discrete CSL and the lattice field
    jump are all members with ``sigma = (2 alpha)^(-1/2)`` (or ``beta``).
    """

    def __init__(self, generator: LinearOp, sigma: float, label: Any = None,
                 grid: OutcomeGrid | None = None, n_points: int = DEFAULT_GRID_POINTS,
                 tolerance: float = DEFAULT_COMPLETENESS_TOL):
        if not sigma > 0:
            raise ContractViolation(f"sigma must be positive, got {sigma}")
        if not generator.is_hermitian():
            raise ContractViolation("jump generator must be Hermitian")
        self.generator = generator
        self.sigma = float(sigma)
        m = generator.entries
        self.is_diagonal = np.count_nonzero(m - np.diag(np.diagonal(m))) == 0
        if self.is_diagonal:
            self.eigvals = np.diagonal(m).real.copy()
            self.eigvecs = None
        else:
            self.eigvals, self.eigvecs = np.linalg.eigh(m)
        grid = grid or OutcomeGrid.covering(self.eigvals, self.sigma, n_points)
        super().__init__(None, grid, generator.dims, label, tolerance)

    @property
    def prefactor(self) -> float:
        return (2.0 * np.pi * self.sigma ** 2) ** -0.25

    def amplitudes(self, z: float) -> np.ndarray:
        return self.prefactor * np.exp(-((self.eigvals - z) ** 2) / (4.0 * self.sigma ** 2))

    def jump_at(self, z: float) -> LinearOp:
        amp = self.amplitudes(z)
        if self.is_diagonal:
            return LinearOp(np.diag(amp.astype(complex)), self.dims)
        v = self.eigvecs
        return LinearOp((v * amp) @ v.conj().T, self.dims)

    def apply(self, z: float, vec: np.ndarray) -> np.ndarray:
        amp = self.amplitudes(z)
        if self.is_diagonal:
            return amp * vec
        v = self.eigvecs
        return v @ (amp * (v.conj().T @ vec))

    def born_weights(self, state: QuantumState) -> np.ndarray:
        """Born weight of each generator eigenvector (not merged by eigenvalue)."""
        vec = state.amplitudes
        comps = vec if self.is_diagonal else self.eigvecs.conj().T @ vec
        w = np.abs(comps) ** 2
        total = w.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise DegenerateStateError("Born weights of a zero-norm state")
        return w / total

    def quadrature_gram(self) -> np.ndarray:
        lam = np.zeros_like(self.eigvals)
        for z, w in zip(self.grid.points, self.grid.weights):
            lam += w * self.amplitudes(z) ** 2
        if self.is_diagonal:
            return np.diag(lam.astype(complex))
        v = self.eigvecs
        return (v * lam) @ v.conj().T


def weighted_identity_family(dims, density: Callable[[float], float], grid: OutcomeGrid,
                             label: Any = None) -> JumpFamily:
    """``J(z) = sqrt(p(z)) I``: outcomes carry no information about the state."""
    dims = tuple(dims)
    eye = np.eye(int(np.prod(dims)))
    return JumpFamily(lambda z: LinearOp(np.sqrt(density(z)) * eye, dims), grid, dims, label)


# -- single-step operations -------------------------------------------------

def _check_state(state: QuantumState) -> float:
    n2 = state.norm2
    if not np.isfinite(n2) or n2 <= 0.0:
        raise DegenerateStateError("state has zero or non-finite norm")
    return n2


def _check_family(state: QuantumState, family: JumpFamily):
    if tuple(family.dims) != state.dims:
        raise BasisMismatch(f"family acts on {family.dims}, state is {state.dims}")


def evolve(state: QuantumState, h: LinearOp, dt: float) -> QuantumState:
    if h.dims != state.dims:
        raise BasisMismatch(f"hamiltonian on {h.dims}, state is {state.dims}")
    if dt == 0:
        return state
    return unitary_from_hamiltonian(h, dt) @ state


def outcome_density(state: QuantumState, family: JumpFamily, z) -> float | np.ndarray:
    """Probability density of outcome ``z`` (scalar or array of outcomes)."""
    _check_family(state, family)
    n2 = _check_state(state)
    vec = state.amplitudes
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty(zs.shape)
    for i, zi in enumerate(zs.flat):
        plus = family.apply(zi, vec)
        out.flat[i] = np.vdot(plus, plus).real / n2
    return float(out[0]) if np.ndim(z) == 0 else out


def collapse_apply(state: QuantumState, family: JumpFamily, z: float) -> QuantumState:
    _check_family(state, family)
    _check_state(state)
    out = family.apply(z, state.amplitudes)
    n2 = np.vdot(out, out).real
    if not np.isfinite(n2) or n2 <= 0.0:
        raise DegenerateOutcomeError(
            f"jump at z={z} annihilated the state", {"z": z, "label": family.label}
        )
    return QuantumState(out, state.dims)


def _grid_inverse_cdf(state, family, rng, size=None):
    zs, h = family.grid.points, family.grid.step
    p = outcome_density(state, family, zs)
    seg = 0.5 * h * (p[:-1] + p[1:])
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    u = rng.uniform(size=size) * cdf[-1]
    i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(seg) - 1)
    # density linear on the segment -> CDF quadratic in the offset s
    r = u - cdf[i]
    p0 = p[i]
    slope = (p[i + 1] - p0) / h
    flat = np.abs(slope) * h < 1e-12 * np.maximum(p0, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_lin = np.where(p0 > 0, r / np.where(p0 > 0, p0, 1.0), 0.5 * h)
        disc = np.maximum(p0 ** 2 + 2.0 * slope * r, 0.0)
        s_quad = (np.sqrt(disc) - p0) / np.where(flat, 1.0, slope)
    s = np.clip(np.where(flat, s_lin, s_quad), 0.0, h)
    out = zs[i] + s
    return float(out) if size is None else out


def sample_outcome(state: QuantumState, family: JumpFamily, rng, method: str = "auto",
                   size: int | None = None):
    """Draw ``z`` from :func:`outcome_density`.

    Gaussian families use the exact two-step draw (eigenvalue by Born weight,
    then Gaussian noise around it). Other families, or ``method="grid"``,
    invert the trapezoid CDF on the family's grid with the density linearly
    interpolated between grid points. ``size`` draws an array of independent
    outcomes from the same state.
    """
    _check_family(state, family)
    _check_state(state)
    if method not in ("auto", "two_step", "grid"):
        raise ContractViolation(f"unknown sampling method {method!r}")
    if isinstance(family, GaussianJumpFamily) and method != "grid":
        w = family.born_weights(state)
        k = rng.choice(len(w), p=w, size=size)
        z = rng.normal(family.eigvals[k], family.sigma)
        return float(z) if size is None else z
    if method == "two_step":
        raise ContractViolation("two-step sampling needs a Gaussian family")
    return _grid_inverse_cdf(state, family, rng, size)


class CompletenessReport(NamedTuple):
    max_deviation: float
    tolerance: float
    passed: bool


def completeness_check(family: JumpFamily) -> CompletenessReport:
    """Quadrature of ``∫ dz J^dag J`` compared entrywise with the identity."""
    gram = family.quadrature_gram()
    dev = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
    return CompletenessReport(dev, family.tolerance, dev <= family.tolerance)


# -- models, schedules, trajectories ----------------------------------------

class CollapseModel:
    """A Hamiltonian plus one jump family per addressable label.

    The label order of ``families`` fixes the tie-break for simultaneous
    events.
    """

    def __init__(self, hamiltonian: LinearOp, families: Mapping[Any, JumpFamily],
                 name: str = "generic", leakage_check: Callable[[QuantumState], None] | None = None):
        if not hamiltonian.is_hermitian():
            raise ContractViolation("model Hamiltonian must be Hermitian")
        for lab, fam in families.items():
            if tuple(fam.dims) != hamiltonian.dims:
                raise BasisMismatch(f"family {lab!r} acts on {fam.dims}, H on {hamiltonian.dims}")
        self.hamiltonian = hamiltonian
        self.families = dict(families)
        self.name = name
        self.leakage_check = leakage_check

    @property
    def labels(self) -> tuple:
        return tuple(self.families)

    @property
    def dims(self) -> tuple:
        return self.hamiltonian.dims

    @cached_property
    def _spectrum(self):
        return np.linalg.eigh(self.hamiltonian.entries)

    def propagate(self, vec: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0:
            return vec
        lam, v = self._spectrum
        return v @ (np.exp(-1j * lam * dt) * (v.conj().T @ vec))

    def energy(self, state: QuantumState) -> float:
        v = state.amplitudes
        return float(np.vdot(v, self.hamiltonian.entries @ v).real / state.norm2)


class ScheduledEvent(NamedTuple):
    time: float
    label: Any
    position: Any = None


@dataclass(frozen=True)
class EventSchedule:
    """When (and for which label) jump events happen within ``[0, horizon]``.

    kinds: ``poisson`` (independent rate per label), ``periodic`` (every
    ``period`` for all labels), ``explicit`` (given ``events``), and
    ``sprinkling`` (``sprinkler(rng)`` returns events, e.g. from a
    spacetime Poisson sprinkling).
    """

    kind: str
    horizon: float
    rate: float = 0.0
    period: float | None = None
    events: tuple = ()
    sprinkler: Callable[[np.random.Generator], Sequence[ScheduledEvent]] | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "periodic", "explicit", "sprinkling"):
            raise ContractViolation(f"unknown schedule kind {self.kind!r}")
        if not self.horizon > 0:
            raise ContractViolation("schedule horizon must be positive")
        if self.kind == "poisson" and self.rate < 0:
            raise ContractViolation("Poisson rate must be non-negative")
        if self.kind == "periodic" and not (self.period and self.period > 0):
            raise ContractViolation("periodic schedule needs a positive period")
        if self.kind == "sprinkling" and self.sprinkler is None:
            raise ContractViolation("sprinkling schedule needs a sprinkler")

    def sample(self, labels: Sequence[Any], rng) -> list[ScheduledEvent]:
        order = {lab: i for i, lab in enumerate(labels)}
        if self.kind == "poisson":
            evs = [ScheduledEvent(t, lab) for lab in labels
                   for t in poisson_event_times(self.rate, self.horizon, rng)]
        elif self.kind == "periodic":
            n = int(math.floor(self.horizon / self.period + 1e-12))
            evs = [ScheduledEvent(k * self.period, lab)
                   for k in range(1, n + 1) for lab in labels]
        elif self.kind == "explicit":
            evs = [ScheduledEvent(*e) for e in self.events]
        else:
            evs = [ScheduledEvent(*e) for e in self.sprinkler(rng)]
        for e in evs:
            if not 0.0 <= e.time <= self.horizon:
                raise ContractViolation(f"event time {e.time} outside [0, {self.horizon}]")
            if e.label not in order:
                raise ContractViolation(f"event label {e.label!r} unknown to the model")
        return sorted(evs, key=lambda e: (e.time, order[e.label]))


def poisson_event_times(rate: float, horizon: float, rng) -> list[float]:
    """Event times of a homogeneous Poisson process, by exponential gaps."""
    if rate < 0 or not horizon > 0:
        raise ContractViolation("need rate >= 0 and horizon > 0")
    times = []
    if rate == 0:
        return times
    t = rng.exponential(1.0 / rate)
    while t <= horizon:
        times.append(float(t))
        t += rng.exponential(1.0 / rate)
    return times


class FlashRecord(NamedTuple):
    time: float
    label: Any
    position: Any
    z: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    initial: QuantumState
    flashes: tuple
    final: QuantumState
    rng_seed: int
    rescale_log: tuple = ()
    notes: tuple = ()


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed of ensemble member ``index``; independent of scheduling."""
    words = np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def run_trajectory(model: CollapseModel, initial: QuantumState, schedule: EventSchedule,
                   rng_seed: int, method: str = "auto") -> Trajectory:
    """Alternate unitary drift and sampled jumps over ``[0, schedule.horizon]``."""
    if initial.dims != model.dims:
        raise BasisMismatch(f"initial state on {initial.dims}, model on {model.dims}")
    _check_state(initial)
    rng = np.random.default_rng(rng_seed)
    events = schedule.sample(model.labels, rng)
    vec = initial.amplitudes
    t = 0.0
    flashes, rescales, notes = [], [], []
    checked_pairs = set()
    for idx, ev in enumerate(events):
        vec = model.propagate(vec, ev.time - t)
        t = ev.time
        if idx and events[idx - 1].time == ev.time and events[idx - 1].label != ev.label:
            pair = (events[idx - 1].label, ev.label)
            if pair not in checked_pairs:
                checked_pairs.add(pair)
                if not _families_commute(model.families[pair[0]], model.families[pair[1]]):
                    notes.append(f"simultaneous non-commuting jumps {pair} at t={t}")
        family = model.families[ev.label]
        state = QuantumState(vec, model.dims)
        z = sample_outcome(state, family, rng, method)
        try:
            state = collapse_apply(state, family, z)
        except DegenerateOutcomeError as exc:
            raise DegenerateOutcomeError(
                str(exc), {**exc.context, "event_index": idx, "time": t, "seed": rng_seed}
            ) from exc
        state, factor = rescale_if_needed(state)
        if factor != 1.0:
            rescales.append((t, factor))
        if model.leakage_check is not None:
            model.leakage_check(state)
        vec = state.amplitudes
        flashes.append(FlashRecord(t, ev.label, ev.position, z))
    vec = model.propagate(vec, schedule.horizon - t)
    final = QuantumState(vec, model.dims)
    if model.leakage_check is not None:
        model.leakage_check(final)
    return Trajectory(initial, tuple(flashes), final, rng_seed, tuple(rescales), tuple(notes))


def _families_commute(a: JumpFamily, b: JumpFamily, n_probe: int = 3) -> bool:
    if isinstance(a, GaussianJumpFamily) and isinstance(b, GaussianJumpFamily):
        ga, gb = a.generator.entries, b.generator.entries
        return bool(np.max(np.abs(ga @ gb - gb @ ga)) == 0.0)
    za = np.linspace(a.grid.lo, a.grid.hi, n_probe)
    zb = np.linspace(b.grid.lo, b.grid.hi, n_probe)
    for x in za:
        ja = a.jump_at(x).entries
        for y in zb:
            jb = b.jump_at(y).entries
            if np.max(np.abs(ja @ jb - jb @ ja)) > 1e-12:
                return False
    return True


def run_ensemble(model: CollapseModel, initial: QuantumState, schedule: EventSchedule,
                 n_trajectories: int, master_seed: int, threads: int | None = None,
                 method: str = "auto") -> list[Trajectory]:
    """Run ``n_trajectories`` independent trajectories; order follows the index."""
    seeds = [trajectory_seed(master_seed, i) for i in range(n_trajectories)]

    def one(seed):
        return run_trajectory(model, initial, schedule, seed, method)

    if threads == 1 or n_trajectories <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
