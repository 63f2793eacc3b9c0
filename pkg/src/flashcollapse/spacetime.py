"""Collapse on a 1+1 dimensional spacetime lattice.

Sites ``0..L-1`` sit at ``x = (k + 1/2) a`` and timesteps ``0..T`` at
``t = n dt``. A cut assigns each site the timestep its hypersurface has
reached, and an elementary advance moves one site forward by one timestep.
That advance applies ``exp(-i h_int(site) dt)`` and then the jump of every
sprinkled event in the crossed plaquette, ordered by ``(t, x)``.

Interactions and jumps act on a single site's tensor factor, so operators
at different sites commute exactly. As a result the final state and the
joint outcome density do not depend on the order of advances (the
foliation) between two cuts.

Light speed is ``c = a / dt``; with the default ``a = dt = 1`` it is 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .engine import (
    FlashRecord,
    GaussianJumpFamily,
    JumpFamily,
    OutcomeGrid,
    collapse_apply,
    outcome_density,
    sample_outcome,
)
from .errors import (
    ContractViolation,
    EnumerationTooLarge,
    GridCoverageError,
    InvalidCutError,
    MissingOutcomeError,
)
from .models import RelativisticFieldSite
from .qalg import LinearOp, QuantumState, embed, rescale_if_needed, unitary_from_hamiltonian

DEFAULT_FOLIATION_CAP = 10_000


@dataclass(frozen=True)
class LatticeRegion:
    n_sites: int
    n_steps: int
    spacing: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.n_sites < 1 or self.n_steps < 1 or not self.spacing > 0 or not self.dt > 0:
            raise ContractViolation("region needs L >= 1, T >= 1, a > 0, dt > 0")

    @property
    def width(self) -> float:
        return self.n_sites * self.spacing

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def volume(self) -> float:
        return self.width * self.duration

    @property
    def c(self) -> float:
        return self.spacing / self.dt

    def site_of(self, x: float) -> int:
        """Nearest site centre; exact ties go to the lower index."""
        u = x / self.spacing - 0.5
        return int(min(max(math.ceil(u - 0.5), 0), self.n_sites - 1))

    def step_of(self, t: float) -> int:
        return int(min(max(math.floor(t / self.dt), 0), self.n_steps - 1))

    def contains(self, t: float, x: float) -> bool:
        return 0.0 <= t <= self.duration and 0.0 <= x <= self.width


class SprinkledEvent(NamedTuple):
    event_id: int
    t: float
    x: float
    site: int | None
    step: int | None
    z: float | None = None


class CausalAxiomsReport(NamedTuple):
    irreflexive: bool
    antisymmetric: bool
    transitive: bool
    locally_finite: bool
    max_interval_size: int

    @property
    def passed(self) -> bool:
        return self.irreflexive and self.antisymmetric and self.transitive and self.locally_finite


@dataclass(frozen=True, eq=False)
class CausalSprinkling:
    """Sprinkled events with the light-cone order ``x ≺ y``.

    ``x ≺ y`` iff ``t_y > t_x`` and ``|x_y - x_x| <= c (t_y - t_x)``.
    """

    events: tuple
    region: LatticeRegion | None = None
    c: float = 1.0

    def __len__(self):
        return len(self.events)

    @cached_property
    def coordinates(self) -> np.ndarray:
        return np.array([(e.t, e.x) for e in self.events], dtype=float).reshape(-1, 2)

    @cached_property
    def order(self) -> np.ndarray:
        """Boolean matrix ``order[i, j] = events[i] ≺ events[j]``."""
        t, x = self.coordinates[:, 0], self.coordinates[:, 1]
        dt = t[None, :] - t[:, None]
        dx = np.abs(x[None, :] - x[:, None])
        return (dt > 0) & (dx <= self.c * dt)

    def check_axioms(self) -> CausalAxiomsReport:
        prec = self.order
        n = prec.shape[0]
        irreflexive = not bool(np.any(np.diagonal(prec))) if n else True
        antisym = not bool(np.any(prec & prec.T))
        pi = prec.astype(np.int64)
        between = pi @ pi  # between[i, j] = #{k : i ≺ k ≺ j}
        transitive = not bool(np.any((between > 0) & ~prec))
        sizes = between[prec]
        max_interval = int(sizes.max()) if sizes.size else 0
        return CausalAxiomsReport(irreflexive, antisym, transitive, max_interval < n or n == 0,
                                  max_interval)

    def with_outcomes(self, outcomes: Mapping[int, float]) -> "CausalSprinkling":
        evs = tuple(e._replace(z=outcomes.get(e.event_id, e.z)) for e in self.events)
        return CausalSprinkling(evs, self.region, self.c)

    def to_csv(self, fh):
        """Write ``event_id,t,x,site,z`` rows (``z`` empty when unset)."""
        fh.write("event_id,t,x,site,z\n")
        for e in self.events:
            site = "" if e.site is None else str(e.site)
            z = "" if e.z is None else repr(float(e.z))
            fh.write(f"{e.event_id},{e.t!r},{e.x!r},{site},{z}\n")


def sprinkle(region: LatticeRegion, mu: float, rng) -> CausalSprinkling:
    """Poisson sprinkling at density ``mu`` per unit spacetime volume."""
    if mu < 0:
        raise ContractViolation("sprinkling density must be non-negative")
    n = int(rng.poisson(mu * region.volume)) if mu > 0 else 0
    t = rng.uniform(0.0, region.duration, n)
    x = rng.uniform(0.0, region.width, n)
    order = np.lexsort((x, t))
    events = tuple(
        SprinkledEvent(i, float(t[k]), float(x[k]), region.site_of(x[k]), region.step_of(t[k]))
        for i, k in enumerate(order)
    )
    return CausalSprinkling(events, region, region.c)


def boost(sprinkling: CausalSprinkling, rapidity: float) -> CausalSprinkling:
    """Lorentz boost of every event; lattice assignments are dropped."""
    c = sprinkling.c
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    evs = []
    for e in sprinkling.events:
        ct = c * e.t
        evs.append(SprinkledEvent(e.event_id, (ch * ct - sh * e.x) / c, ch * e.x - sh * ct,
                                  None, None, e.z))
    if rapidity == 0:
        return CausalSprinkling(sprinkling.events, sprinkling.region, c)
    return CausalSprinkling(tuple(evs), None, c)


class OrderComparison(NamedTuple):
    preserved: bool
    mismatches: int
    compared_pairs: int
    skipped_near_null: int


def compare_order(a: CausalSprinkling, b: CausalSprinkling, margin: float = 1e-12) -> OrderComparison:
    """Pairwise comparison of two orders, skipping pairs within ``margin`` of null."""
    if len(a) != len(b):
        raise ContractViolation("sprinklings have different sizes")
    t, x = a.coordinates[:, 0], a.coordinates[:, 1]
    interval = (a.c * (t[None, :] - t[:, None])) ** 2 - (x[None, :] - x[:, None]) ** 2
    scale = 1.0 + (a.c * np.abs(t[None, :] - t[:, None])) ** 2 + (x[None, :] - x[:, None]) ** 2
    near_null = np.abs(interval) <= margin * scale
    np.fill_diagonal(near_null, False)
    mask = ~near_null
    np.fill_diagonal(mask, False)
    mism = int(np.count_nonzero((a.order != b.order) & mask))
    return OrderComparison(mism == 0, mism, int(mask.sum()), int(near_null.sum()))


# -- cuts and foliations -----------------------------------------------------

@dataclass(frozen=True)
class Cut:
    """Spacelike hypersurface as a site -> timestep map."""

    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    def __getitem__(self, site):
        return self.levels[site]

    def __len__(self):
        return len(self.levels)

    def validate(self, region: LatticeRegion | None = None, slope_max: int | None = None):
        if region is not None:
            if len(self.levels) != region.n_sites:
                raise InvalidCutError(f"cut has {len(self.levels)} sites, region {region.n_sites}")
            if any(not 0 <= v <= region.n_steps for v in self.levels):
                raise InvalidCutError(f"cut {self.levels} leaves timesteps 0..{region.n_steps}")
        if slope_max is not None:
            for x in range(len(self.levels) - 1):
                if abs(self.levels[x + 1] - self.levels[x]) > slope_max:
                    raise InvalidCutError(f"cut {self.levels} exceeds slope {slope_max} at site {x}")
        return self

    def is_valid(self, region=None, slope_max=None) -> bool:
        try:
            self.validate(region, slope_max)
        except InvalidCutError:
            return False
        return True

    def advanced(self, site: int) -> "Cut":
        lv = list(self.levels)
        lv[site] += 1
        return Cut(tuple(lv))

    def precedes(self, other: "Cut") -> bool:
        return len(self) == len(other) and all(a <= b for a, b in zip(self.levels, other.levels))

    @classmethod
    def flat(cls, n_sites: int, level: int = 0) -> "Cut":
        return cls((level,) * n_sites)


@dataclass(frozen=True)
class Foliation:
    start: Cut
    end: Cut
    steps: tuple  # (site, from_step) pairs

    def validate(self, region=None, slope_max=None):
        cut = self.start.validate(region, slope_max)
        for site, frm in self.steps:
            if cut[site] != frm:
                raise InvalidCutError(f"step ({site}, {frm}) does not start from cut {cut.levels}")
            cut = cut.advanced(site).validate(region, slope_max)
        if cut != self.end:
            raise InvalidCutError(f"foliation ends at {cut.levels}, expected {self.end.levels}")
        return self

    @property
    def site_order(self) -> tuple:
        return tuple(s for s, _ in self.steps)

    @classmethod
    def from_sites(cls, start: Cut, sites: Sequence[int]) -> "Foliation":
        cut, steps = start, []
        for s in sites:
            steps.append((s, cut[s]))
            cut = cut.advanced(s)
        return cls(start, cut, tuple(steps))

    @classmethod
    def time_slices(cls, start: Cut, end: Cut) -> "Foliation":
        """Advance the lowest site (then lowest index) first: equal-time slicing."""
        cut, sites = start, []
        while cut != end:
            pending = [s for s in range(len(cut)) if cut[s] < end[s]]
            s = min(pending, key=lambda k: (cut[k], k))
            sites.append(s)
            cut = cut.advanced(s)
        return cls.from_sites(start, sites)


def count_foliations_upper_bound(start: Cut, end: Cut) -> int:
    """Multinomial count of advance orderings, ignoring slope validity."""
    moves = [e - s for s, e in zip(start.levels, end.levels)]
    total = math.factorial(sum(moves))
    for m in moves:
        total //= math.factorial(m)
    return total


def enumerate_foliations(start: Cut, end: Cut, cap: int = DEFAULT_FOLIATION_CAP,
                         region: LatticeRegion | None = None,
                         slope_max: int | None = None) -> list[Foliation]:
    """All monotone advance orderings from ``start`` to ``end`` whose cuts are valid."""
    if len(start) != len(end) or not start.precedes(end):
        raise ContractViolation("enumeration needs start ⪯ end on the same sites")
    start.validate(region, slope_max)
    end.validate(region, slope_max)
    found: list[Foliation] = []

    def walk(cut: Cut, sites: list):
        if cut == end:
            if len(found) >= cap:
                raise EnumerationTooLarge(
                    f"more than {cap} foliations", count_foliations_upper_bound(start, end)
                )
            found.append(Foliation.from_sites(start, sites))
            return
        for s in range(len(cut)):
            if cut[s] < end[s]:
                nxt = cut.advanced(s)
                if nxt.is_valid(region, slope_max):
                    sites.append(s)
                    walk(nxt, sites)
                    sites.pop()

    walk(start, [])
    return found


# -- local dynamics ----------------------------------------------------------

class LocalDynamics:
    """Per-site interaction Hamiltonians and jump families on a lattice Hilbert space.

    Use :meth:`single_site` to build operators supported on one tensor factor.
    The constructor also accepts arbitrary full-space operators so that
    microcausality violations can be represented and detected.
    """

    def __init__(self, site_dims, h_int: Mapping[int, LinearOp],
                 jump_families: Mapping[int, JumpFamily]):
        self.site_dims = tuple(int(d) for d in site_dims)
        for s, h in h_int.items():
            if h.dims != self.site_dims:
                raise ContractViolation(f"h_int[{s}] acts on {h.dims}, lattice is {self.site_dims}")
        for s, f in jump_families.items():
            if tuple(f.dims) != self.site_dims:
                raise ContractViolation(f"jump family {s} acts on {f.dims}")
        self.h_int = dict(h_int)
        self.jump_families = dict(jump_families)
        self._unitaries = {}

    @property
    def n_sites(self) -> int:
        return len(self.site_dims)

    @classmethod
    def single_site(cls, site_dims, h_local: Mapping[int, Any],
                    generators: Mapping[int, Any], sigma: float,
                    n_points: int = 161) -> "LocalDynamics":
        """Embed local ``h`` and local jump generators on their own factors."""
        dims = tuple(site_dims)
        h = {s: embed(m, s, dims) for s, m in h_local.items()}
        fams = {s: GaussianJumpFamily(embed(g, s, dims), sigma, label=s, n_points=n_points)
                for s, g in generators.items()}
        return cls(dims, h, fams)

    @classmethod
    def field_lattice(cls, site_model: RelativisticFieldSite, n_sites: int,
                      h_local: Mapping[int, Any] | Any) -> "LocalDynamics":
        """Relativistic field jump at every site, with one local Hamiltonian per site."""
        if not isinstance(h_local, Mapping):
            h_local = {s: h_local for s in range(n_sites)}
        gen = site_model.modulus_squared().entries
        return cls.single_site((site_model.fock_dim,) * n_sites, h_local,
                               {s: gen for s in range(n_sites)}, site_model.sigma)

    def unitary(self, site: int, dt: float) -> np.ndarray:
        key = (site, dt)
        u = self._unitaries.get(key)
        if u is None:
            h = self.h_int.get(site)
            u = np.eye(int(np.prod(self.site_dims)), dtype=complex) if h is None \
                else unitary_from_hamiltonian(h, dt).entries
            self._unitaries[key] = u
        return u


class MicrocausalityReport(NamedTuple):
    max_commutator_norm: float
    pair: tuple | None
    kind: str | None
    passed: bool


def microcausality_check(dyn: LocalDynamics, z_samples: int = 3) -> MicrocausalityReport:
    """Largest Frobenius norm of ``[H_x, H_y]``, ``[J_x, J_y]``, ``[J_x, H_y]`` over ``x != y``."""
    jumps = {}
    for s, fam in dyn.jump_families.items():
        zs = np.linspace(fam.grid.lo, fam.grid.hi, z_samples)
        jumps[s] = [fam.jump_at(z).entries for z in zs]
    hs = {s: h.entries for s, h in dyn.h_int.items()}
    worst, where, kind = 0.0, None, None

    def comm(a, b):
        return float(np.linalg.norm(a @ b - b @ a))

    sites = sorted(set(hs) | set(jumps))
    for x, y in itertools.permutations(sites, 2):
        cands = []
        if x < y and x in hs and y in hs:
            cands.append(("H-H", comm(hs[x], hs[y])))
        if x < y and x in jumps and y in jumps:
            cands.append(("J-J", max(comm(a, b) for a in jumps[x] for b in jumps[y])))
        if x in jumps and y in hs:
            cands.append(("J-H", max(comm(a, hs[y]) for a in jumps[x])))
        for k, v in cands:
            if v > worst:
                worst, where, kind = v, (x, y), k
    return MicrocausalityReport(worst, where, kind, worst == 0.0)


class AdvanceResult(NamedTuple):
    state: QuantumState
    cut: Cut
    flashes: tuple
    densities: tuple


def crossed_events(events: CausalSprinkling, site: int, step: int) -> list[SprinkledEvent]:
    """Events in plaquette (site, step), ordered by ``(t, x)``."""
    hits = [e for e in events.events if e.site == site and e.step == step]
    return sorted(hits, key=lambda e: (e.t, e.x))


def advance(state: QuantumState, cut: Cut, site: int, dyn: LocalDynamics, dt: float,
            events: CausalSprinkling, outcomes: Mapping[int, float] | None = None,
            rng=None, region: LatticeRegion | None = None,
            slope_max: int | None = None) -> AdvanceResult:
    """Move the cut forward one timestep at ``site``.

    With ``outcomes`` the crossed events are replayed; otherwise each ``z``
    is sampled from ``rng`` at the moment of crossing.
    """
    if not 0 <= site < len(cut):
        raise IndexError(f"site {site} out of range")
    new_cut = cut.advanced(site).validate(region or events.region, slope_max)
    if outcomes is None and rng is None:
        raise ContractViolation("advance needs either replay outcomes or an rng")
    vec = dyn.unitary(site, dt) @ state.amplitudes
    state = QuantumState(vec, state.dims)
    flashes, dens = [], []
    for ev in crossed_events(events, site, cut[site]):
        fam = dyn.jump_families.get(site)
        if fam is None:
            raise ContractViolation(f"event {ev.event_id} at site {site} has no jump family")
        if outcomes is not None:
            if ev.event_id not in outcomes:
                raise MissingOutcomeError(f"no outcome for event {ev.event_id}")
            z = float(outcomes[ev.event_id])
        else:
            z = sample_outcome(state, fam, rng)
        dens.append(outcome_density(state, fam, z))
        state = collapse_apply(state, fam, z)
        flashes.append(FlashRecord(ev.t, site, ev.x, z))
    return AdvanceResult(state, new_cut, tuple(flashes), tuple(dens))



class FoliationResult(NamedTuple):
    state: QuantumState
    cut: Cut
    flashes: tuple
    densities: tuple
    rescale_log: tuple

    @property
    def joint_density(self) -> float:
        return float(np.prod(self.densities)) if self.densities else 1.0


def evolve_along_foliation(state: QuantumState, fol: Foliation, dyn: LocalDynamics, dt: float,
                           events: CausalSprinkling, outcomes: Mapping[int, float] | None = None,
                           rng=None, slope_max: int | None = None) -> FoliationResult:
    """Fold :func:`advance` over the foliation's steps.

    Replay mode (``outcomes`` given) never rescales the state, so final
    states from different foliations can be compared directly. Sampling
    mode rescales defensively and logs the factors.
    """
    fol.validate(events.region, slope_max)
    cut = fol.start
    flashes, dens, rescales = [], [], []
    for site, _ in fol.steps:
        res = advance(state, cut, site, dyn, dt, events, outcomes, rng, slope_max=slope_max)
        state, cut = res.state, res.cut
        flashes.extend(res.flashes)
        dens.extend(res.densities)
        if outcomes is None and res.flashes:
            state, factor = rescale_if_needed(state)
            if factor != 1.0:
                rescales.append((cut.levels, factor))
    return FoliationResult(state, cut, tuple(flashes), tuple(dens), tuple(rescales))


def events_between(events: CausalSprinkling, start: Cut, end: Cut) -> list[SprinkledEvent]:
    return [e for e in events.events
            if e.site is not None and start[e.site] <= e.step < end[e.site]]


def region_outcome_probability(state: QuantumState, start: Cut, end: Cut, dyn: LocalDynamics,
                               dt: float, events: CausalSprinkling,
                               outcomes: Mapping[int, float], via: Foliation) -> float:
    """Joint density of the given outcomes, accumulated along ``via``."""
    if via.start != start or via.end != end:
        raise ContractViolation("foliation does not connect the given cuts")
    missing = [e.event_id for e in events_between(events, start, end) if e.event_id not in outcomes]
    if missing:
        raise MissingOutcomeError(f"no outcomes for events {missing}")
    return evolve_along_foliation(state, via, dyn, dt, events, outcomes).joint_density


def reduced_density(state: QuantumState, site: int) -> np.ndarray:
    """Reduced density matrix of one site (diagnostic only)."""
    dims = state.dims
    psi = (state.amplitudes / np.sqrt(state.norm2)).reshape(dims)
    psi = np.moveaxis(psi, site, 0).reshape(dims[site], -1)
    return psi @ psi.conj().T


# -- energy increase ---------------------------------------------------------

class EnergyIncrease(NamedTuple):
    delta_e: float          # quadrature of <J [H, J]>
    direct: float           # sum_z w <psi+|H|psi+> / <psi|psi> - <H>
    imaginary_part: float   # residual imaginary part of the commutator route
    phi_sq: float           # <phi^dag phi> at the collapse site


def energy_grid(site_model: RelativisticFieldSite, n_points: int = 161) -> OutcomeGrid:
    """Covers the ``phi^dag phi`` spectrum ± 8/sqrt(beta) with step <= sigma."""
    spec = site_model.spectrum()
    pad = 8.0 / math.sqrt(site_model.beta)
    lo, hi = float(spec.min() - pad), float(spec.max() + pad)
    n = max(n_points, int(math.ceil((hi - lo) / site_model.sigma)) + 1)
    return OutcomeGrid(lo, hi, n)


def energy_increase(state: QuantumState, site_model: RelativisticFieldSite, h: LinearOp,
                    site: int = 0, grid: OutcomeGrid | None = None) -> EnergyIncrease:
    """Mean energy change caused by one field collapse at ``site``.

    Two routes are returned: the commutator form ``∫dz <J(z)[H, J(z)]>`` on
    the grid, and the explicit average of ``<H>`` over collapsed states.
    """
    if not h.is_hermitian():
        raise ContractViolation("Hamiltonian must be Hermitian")
    if h.dims != state.dims:
        raise ContractViolation("state and Hamiltonian bases differ")
    if any(d != site_model.fock_dim for d in state.dims):
        raise ContractViolation("every lattice factor must have the site model's Fock dimension")
    spec = site_model.spectrum()
    pad = 8.0 / math.sqrt(site_model.beta)
    grid = grid or energy_grid(site_model)
    if grid.lo > spec.min() - pad + 1e-12 or grid.hi < spec.max() + pad - 1e-12:
        raise GridCoverageError(
            f"grid [{grid.lo}, {grid.hi}] must cover [{spec.min() - pad}, {spec.max() + pad}]"
        )
    gen = embed(site_model.modulus_squared(), site, state.dims)
    fam = GaussianJumpFamily(gen, site_model.sigma, label=site, grid=grid)
    psi = state.amplitudes
    n2 = state.norm2
    hm = h.entries
    h_psi = hm @ psi
    e0 = np.vdot(psi, h_psi).real / n2
    comm_acc = 0.0 + 0.0j
    direct_acc = 0.0
    for z, w in zip(grid.points, grid.weights):
        j_psi = fam.apply(z, psi)
        # <psi| J H J |psi> - <psi| J J H |psi>
        comm_acc += w * (np.vdot(j_psi, hm @ j_psi) - np.vdot(j_psi, fam.apply(z, h_psi)))
        plus = collapse_apply(state, fam, z).amplitudes
        direct_acc += w * np.vdot(plus, hm @ plus).real
    phi_sq = np.vdot(psi, gen.entries @ psi).real / n2
    return EnergyIncrease(float(comm_acc.real / n2), float(direct_acc / n2 - e0),
                          float(comm_acc.imag / n2), float(phi_sq))


def regularized_coefficient(state: QuantumState, site_model: RelativisticFieldSite,
                            h: LinearOp, site: int = 0) -> float:
    """``ΔE / ((beta/2) <phi^dag phi>)``: the lattice stand-in for ``δ(0)``.

    In one dimension it scales as ``1/a`` for small beta.
    """
    res = energy_increase(state, site_model, h, site)
    return res.delta_e / (0.5 * site_model.beta * res.phi_sq)
