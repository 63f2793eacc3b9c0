"""Probabilities of whole outcome histories under two-time boundary conditions.

For outcomes ``z_1..z_n`` separated by intervals ``dt_0..dt_n`` the history
operator is ``K = U(dt_n) J(z_n) ... J(z_1) U(dt_0)`` and the conditioned
density is

    p(z) = Tr[rho_F K rho_I K^dag] / Z,

where ``Z`` is the same numerator summed over the full product of outcome
grids with trapezoid weights. Reversing the outcomes and intervals and
swapping ``rho_I <-> conj(rho_F)``, ``rho_F <-> conj(rho_I)`` gives the
same density whenever ``U`` and every ``J`` are transpose-symmetric in the
collapse basis.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .engine import OutcomeGrid
from .errors import ConditioningInfeasibleError, ContractViolation
from .qalg import (
    DensityOp,
    LinearOp,
    conjugate_in_basis,
    is_symmetric_in_basis,
    unitary_from_hamiltonian,
)

SYMMETRY_TOL = 1e-12
Z_UNDERFLOW = 1e-280
COARSE_GRID_POINTS = 21


@dataclass(frozen=True, eq=False)
class BoundaryConditions:
    """Initial density operator and final POVM element.

    ``rho_final`` is rescaled so its largest eigenvalue is 1; every
    conditioned probability is invariant under that scale.
    """

    rho_initial: DensityOp
    rho_final: DensityOp

    def __post_init__(self):
        if self.rho_initial.dims != self.rho_final.dims:
            raise ContractViolation("initial and final conditions live on different bases")
        top = float(np.linalg.eigvalsh(self.rho_final.entries).max())
        if not top > 0:
            raise ContractViolation("final condition must have a positive eigenvalue")
        object.__setattr__(self, "rho_final", DensityOp(self.rho_final.entries / top,
                                                        self.rho_final.dims))

    @classmethod
    def unconstrained(cls, rho_initial: DensityOp) -> "BoundaryConditions":
        return cls(rho_initial, DensityOp(np.eye(rho_initial.dim), rho_initial.dims))

    def time_reversed(self) -> "BoundaryConditions":
        return BoundaryConditions(conjugate_in_basis(self.rho_final),
                                  conjugate_in_basis(self.rho_initial))


@dataclass(frozen=True, eq=False)
class SequenceSpec:
    outcomes: tuple
    intervals: tuple
    families: tuple
    hamiltonian: LinearOp

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(float(z) for z in self.outcomes))
        object.__setattr__(self, "intervals", tuple(float(t) for t in self.intervals))
        object.__setattr__(self, "families", tuple(self.families))
        if len(self.intervals) != len(self.outcomes) + 1:
            raise ContractViolation("need exactly one more interval than outcomes")
        if len(self.families) != len(self.outcomes):
            raise ContractViolation("need one jump family per outcome")
        if any(t < 0 for t in self.intervals):
            raise ContractViolation("intervals must be non-negative")
        for fam in self.families:
            if tuple(fam.dims) != self.hamiltonian.dims:
                raise ContractViolation("jump family and Hamiltonian bases differ")

    @property
    def n(self) -> int:
        return len(self.outcomes)

    def reversed(self) -> "SequenceSpec":
        return SequenceSpec(self.outcomes[::-1], self.intervals[::-1],
                            self.families[::-1], self.hamiltonian)

    def with_outcomes(self, outcomes) -> "SequenceSpec":
        return SequenceSpec(tuple(outcomes), self.intervals, self.families, self.hamiltonian)


class _HistoryKernel:
    """Caches ``U(dt)`` per interval and ``J(z)`` per (family, grid point)."""

    def __init__(self, spec: SequenceSpec):
        self.spec = spec
        self.unitaries = [unitary_from_hamiltonian(spec.hamiltonian, t).entries
                          for t in spec.intervals]
        self._jumps = {}

    def jump(self, k: int, z: float) -> np.ndarray:
        key = (k, z)
        j = self._jumps.get(key)
        if j is None:
            j = self.spec.families[k].jump_at(z).entries
            self._jumps[key] = j
        return j

    def history_operator(self, outcomes) -> np.ndarray:
        m = self.unitaries[0]
        for k, z in enumerate(outcomes):
            m = self.unitaries[k + 1] @ (self.jump(k, z) @ m)
        return m


def _numerator(k: np.ndarray, bc: BoundaryConditions) -> float:
    return float(np.trace(bc.rho_final.entries @ k @ bc.rho_initial.entries @ k.conj().T).real)


def default_grids(spec: SequenceSpec) -> list:
    """Each family's own grid, coarsened to 21 points once ``n >= 3``."""
    if spec.n >= 3:
        return [OutcomeGrid(f.grid.lo, f.grid.hi, COARSE_GRID_POINTS) for f in spec.families]
    return [f.grid for f in spec.families]


def _grids(spec: SequenceSpec, grids):
    if grids is None:
        return default_grids(spec)
    grids = list(grids)
    if len(grids) != spec.n:
        raise ContractViolation("need one outcome grid per event")
    return grids


def normalization(spec: SequenceSpec, bc: BoundaryConditions,
                  grids: Sequence[OutcomeGrid] | None = None, _kernel=None) -> float:
    """``Z``: trapezoid quadrature of the numerator over the outcome-grid product."""
    kern = _kernel or _HistoryKernel(spec)
    grids = _grids(spec, grids)
    if spec.n == 0:
        return _numerator(kern.history_operator(()), bc)
    # Z = Tr[rho_F Phi_n(...Phi_1(U_0 rho_I U_0^dag))] with
    # Phi_k(r) = U_k (sum_z w J_k(z) r J_k(z)^dag) U_k^dag
    u0 = kern.unitaries[0]
    r = u0 @ bc.rho_initial.entries @ u0.conj().T
    for k, grid in enumerate(grids):
        acc = np.zeros_like(r)
        for z, w in zip(grid.points, grid.weights):
            j = kern.jump(k, z)
            acc += w * (j @ r @ j.conj().T)
        u = kern.unitaries[k + 1]
        r = u @ acc @ u.conj().T
    z_total = float(np.trace(bc.rho_final.entries @ r).real)
    if not np.isfinite(z_total) or z_total < Z_UNDERFLOW:
        raise ConditioningInfeasibleError(
            f"normalization {z_total!r}: final condition nearly orthogonal to every history"
        )
    return z_total


def sequence_probability(spec: SequenceSpec, bc: BoundaryConditions,
                         grids: Sequence[OutcomeGrid] | None = None) -> float:
    """Conditioned density of ``spec.outcomes`` (a density in ``n`` outcomes)."""
    if spec.hamiltonian.dims != bc.rho_initial.dims:
        raise ContractViolation("sequence and boundary conditions live on different bases")
    kern = _HistoryKernel(spec)
    z_total = normalization(spec, bc, grids, kern)
    return _numerator(kern.history_operator(spec.outcomes), bc) / z_total


def reverse_probability(spec: SequenceSpec, bc: BoundaryConditions,
                        grids: Sequence[OutcomeGrid] | None = None) -> float:
    """Density of the reversed history under conjugated, swapped boundary conditions."""
    rgrids = None if grids is None else list(grids)[::-1]
    return sequence_probability(spec.reversed(), bc.time_reversed(), rgrids)


class GridProbabilities(NamedTuple):
    outcomes: np.ndarray  # (m, n) outcome tuples
    forward: np.ndarray
    reverse: np.ndarray


def sequence_table(spec: SequenceSpec, bc: BoundaryConditions,
                   grids: Sequence[OutcomeGrid] | None = None,
                   threads: int = 1) -> GridProbabilities:
    """Forward and reverse densities for every outcome tuple on the grid product.

    ``spec.outcomes`` is ignored; the table covers the whole product. With
    ``threads > 1`` the product is split into contiguous partitions that are
    evaluated concurrently and written back in index order.
    """
    grids = _grids(spec, grids)
    fwd_kern = _HistoryKernel(spec)
    rspec = spec.reversed()
    rev_kern = _HistoryKernel(rspec)
    rbc = bc.time_reversed()
    z_f = normalization(spec, bc, grids, fwd_kern)
    z_r = normalization(rspec, rbc, grids[::-1], rev_kern)
    tuples = list(itertools.product(*[g.points for g in grids]))
    fwd = np.empty(len(tuples))
    rev = np.empty(len(tuples))
    # warm the jump caches so workers only read them
    for k, g in enumerate(grids):
        for z in g.points:
            fwd_kern.jump(k, z)
            rev_kern.jump(spec.n - 1 - k, z)

    def fill(part):
        for i in part:
            zs = tuples[i]
            fwd[i] = _numerator(fwd_kern.history_operator(zs), bc) / z_f
            rev[i] = _numerator(rev_kern.history_operator(zs[::-1]), rbc) / z_r

    parts = np.array_split(np.arange(len(tuples)), max(1, threads))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, parts))
    else:
        fill(parts[0])
    return GridProbabilities(np.array(tuples).reshape(len(tuples), spec.n), fwd, rev)


def chain_rule_probability(spec: SequenceSpec, rho_initial: DensityOp) -> float:
    """Product of single-event densities ``Tr[J rho J^dag] / Tr rho`` along the history.

    Independent of :func:`sequence_probability`; with no final constraint
    the two agree up to the quadrature error of ``Z``.
    """
    rho = rho_initial.entries
    p = 1.0
    for k, z in enumerate(spec.outcomes):
        u = unitary_from_hamiltonian(spec.hamiltonian, spec.intervals[k]).entries
        rho = u @ rho @ u.conj().T
        j = spec.families[k].jump_at(z).entries
        plus = j @ rho @ j.conj().T
        p *= np.trace(plus).real / np.trace(rho).real
        rho = plus
    return float(p)


class SymmetryConditionReport(NamedTuple):
    passed: bool
    max_deviation: float
    worst: str | None


def symmetry_condition_check(spec: SequenceSpec, tol: float = SYMMETRY_TOL,
                             grids: Sequence[OutcomeGrid] | None = None) -> SymmetryConditionReport:
    """Transpose symmetry of every ``U(dt)`` and every ``J(z)`` on the grids."""
    worst_dev, worst_where = 0.0, None
    for k, t in enumerate(spec.intervals):
        rep = is_symmetric_in_basis(unitary_from_hamiltonian(spec.hamiltonian, t), tol)
        if rep.max_deviation > worst_dev:
            worst_dev, worst_where = rep.max_deviation, f"U(dt_{k}) at {rep.location}"
    for k, grid in enumerate(_grids(spec, grids)):
        for z in grid.points:
            rep = is_symmetric_in_basis(spec.families[k].jump_at(z), tol)
            if rep.max_deviation > worst_dev:
                worst_dev, worst_where = rep.max_deviation, f"J_{k}(z={z:.4g}) at {rep.location}"
    return SymmetryConditionReport(worst_dev <= tol, worst_dev, worst_where)


def max_relative_asymmetry(table: GridProbabilities) -> float:
    return float(np.max(np.abs(table.forward - table.reverse) / table.forward))
