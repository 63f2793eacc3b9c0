"""Dense finite-dimensional linear algebra for states and operators.

States are deliberately left unnormalized: every probability in the package
is a ratio of norms, so only the direction of a state vector matters.

The basis layout of a state or operator is a tuple of subsystem dimensions
(``dims``), ordered so that the first entry is the slowest-varying index of
the Kronecker product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BasisMismatch,
    ContractViolation,
    DegenerateStateError,
    SizeError,
)

MAX_DIM = 4096
HERMITIAN_TOL = 1e-12
PSD_REL_TOL = 1e-10
RESCALE_BOUNDS = (1e-6, 1e6)


def _frozen(a, dtype=complex):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_dims(dims, size):
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ContractViolation(f"subsystem dimensions must be positive, got {dims}")
    if int(np.prod(dims)) != size:
        raise ContractViolation(f"dims {dims} do not multiply to {size}")
    return dims


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Unnormalized complex amplitude vector on a product basis."""

    amplitudes: np.ndarray
    dims: tuple = None

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        dims = (amps.size,) if self.dims is None else self.dims
        object.__setattr__(self, "dims", _check_dims(dims, amps.size))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "QuantumState":
        n2 = self.norm2
        if not np.isfinite(n2) or n2 <= 0.0:
            raise DegenerateStateError("cannot normalize a zero-norm state")
        return QuantumState(self.amplitudes / np.sqrt(n2), self.dims)

    def scaled(self, factor) -> "QuantumState":
        return QuantumState(self.amplitudes * factor, self.dims)

    @classmethod
    def basis(cls, index, dims) -> "QuantumState":
        dims = tuple(dims) if np.ndim(dims) else (int(dims),)
        v = np.zeros(int(np.prod(dims)), dtype=complex)
        v[index] = 1.0
        return cls(v, dims)


@dataclass(frozen=True, eq=False)
class LinearOp:
    """Square complex matrix acting on a product basis."""

    entries: np.ndarray
    dims: tuple = None

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation(f"operator must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ContractViolation("operator has non-finite entries")
        object.__setattr__(self, "entries", m)
        dims = (m.shape[0],) if self.dims is None else self.dims
        object.__setattr__(self, "dims", _check_dims(dims, m.shape[0]))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def dag(self) -> "LinearOp":
        return LinearOp(self.entries.conj().T, self.dims)

    def hermitian_deviation(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def is_hermitian(self, tol=HERMITIAN_TOL) -> bool:
        return self.hermitian_deviation() <= tol

    def __matmul__(self, other):
        if isinstance(other, QuantumState):
            _same_basis(self, other)
            return QuantumState(self.entries @ other.amplitudes, self.dims)
        if isinstance(other, LinearOp):
            _same_basis(self, other)
            return LinearOp(self.entries @ other.entries, self.dims)
        return NotImplemented

    def __add__(self, other):
        _same_basis(self, other)
        return LinearOp(self.entries + other.entries, self.dims)

    def __sub__(self, other):
        _same_basis(self, other)
        return LinearOp(self.entries - other.entries, self.dims)

    def __mul__(self, scalar):
        return LinearOp(self.entries * scalar, self.dims)

    __rmul__ = __mul__

    @classmethod
    def identity(cls, dims) -> "LinearOp":
        dims = tuple(dims) if np.ndim(dims) else (int(dims),)
        return cls(np.eye(int(np.prod(dims))), dims)

    @classmethod
    def diagonal(cls, values, dims=None) -> "LinearOp":
        return cls(np.diag(np.asarray(values, dtype=complex)), dims)


@dataclass(frozen=True, eq=False)
class DensityOp:
    """Hermitian positive-semidefinite operator (density matrix or POVM element)."""

    entries: np.ndarray
    dims: tuple = None

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation(f"density operator must be square, got {m.shape}")
        dev = float(np.max(np.abs(m - m.conj().T), initial=0.0))
        if dev > HERMITIAN_TOL:
            raise ContractViolation(f"density operator not Hermitian (deviation {dev:.3e})")
        tr = float(np.trace(m).real)
        lam_min = float(np.linalg.eigvalsh(m).min())
        if lam_min < -PSD_REL_TOL * max(tr, 0.0):
            raise ContractViolation(f"density operator not PSD (min eigenvalue {lam_min:.3e})")
        object.__setattr__(self, "entries", m)
        dims = (m.shape[0],) if self.dims is None else self.dims
        object.__setattr__(self, "dims", _check_dims(dims, m.shape[0]))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @classmethod
    def from_state(cls, state: QuantumState) -> "DensityOp":
        v = state.amplitudes
        m = np.outer(v, v.conj())
        # outer products are Hermitian only up to rounding of v_i v_j^*
        return cls(0.5 * (m + m.conj().T), state.dims)


def _same_basis(a, b):
    if a.dims != b.dims:
        raise BasisMismatch(f"basis layouts differ: {a.dims} vs {b.dims}")


def tensor(a: LinearOp, b: LinearOp, max_dim: int = MAX_DIM) -> LinearOp:
    """Kronecker product ``a ⊗ b``; ``a`` becomes the leading subsystem(s)."""
    d = a.dim * b.dim
    if d > max_dim:
        raise SizeError(f"tensor product dimension {d} exceeds cap {max_dim}")
    return LinearOp(np.kron(a.entries, b.entries), a.dims + b.dims)


def tensor_states(a: QuantumState, b: QuantumState, max_dim: int = MAX_DIM) -> QuantumState:
    d = a.dim * b.dim
    if d > max_dim:
        raise SizeError(f"tensor product dimension {d} exceeds cap {max_dim}")
    return QuantumState(np.kron(a.amplitudes, b.amplitudes), a.dims + b.dims)


def embed(local, site: int, dims: Sequence[int], max_dim: int = MAX_DIM) -> LinearOp:
    """Place a single-subsystem matrix on factor ``site``, identity elsewhere."""
    dims = tuple(int(d) for d in dims)
    if not 0 <= site < len(dims):
        raise IndexError(f"site {site} out of range for {len(dims)} subsystems")
    local = np.asarray(getattr(local, "entries", local), dtype=complex)
    if local.shape != (dims[site], dims[site]):
        raise BasisMismatch(f"local operator shape {local.shape} != ({dims[site]}, {dims[site]})")
    total = int(np.prod(dims))
    if total > max_dim:
        raise SizeError(f"embedded dimension {total} exceeds cap {max_dim}")
    factors = [np.eye(d) for d in dims]
    factors[site] = local
    return LinearOp(reduce(np.kron, factors), dims)


def hermitian_function(h: LinearOp, fn: Callable[[np.ndarray], np.ndarray]) -> LinearOp:
    """Apply a scalar function to a Hermitian operator through its eigenbasis."""
    if not h.is_hermitian():
        raise ContractViolation(
            f"operator not Hermitian (deviation {h.hermitian_deviation():.3e})"
        )
    m = h.entries
    if np.count_nonzero(m - np.diag(np.diagonal(m))) == 0:
        # diagonal input: keep the result exactly diagonal
        return LinearOp(np.diag(fn(np.diagonal(m).real).astype(complex)), h.dims)
    lam, vecs = np.linalg.eigh(m)
    return LinearOp((vecs * fn(lam)) @ vecs.conj().T, h.dims)


def unitary_from_hamiltonian(h: LinearOp, t: float) -> LinearOp:
    """Return ``exp(-i h t)``.

    Computed by spectral decomposition of the Hermitian generator, which
    keeps the result unitary to rounding and makes ``U(t) U(s) = U(t + s)``
    hold to the same accuracy.
    """
    return hermitian_function(h, lambda lam: np.exp(-1j * lam * t))


def expectation(state: QuantumState, op: LinearOp) -> complex:
    _same_basis(op, state)
    n2 = state.norm2
    if not np.isfinite(n2) or n2 <= 0.0:
        raise DegenerateStateError("expectation of a zero-norm state")
    v = state.amplitudes
    return complex(np.vdot(v, op.entries @ v) / n2)


def conjugate_in_basis(rho: DensityOp) -> DensityOp:
    """Entrywise complex conjugate in the collapse basis."""
    return DensityOp(rho.entries.conj(), rho.dims)


class SymmetryReport(NamedTuple):
    symmetric: bool
    max_deviation: float
    location: tuple | None


def is_symmetric_in_basis(op, tol: float = HERMITIAN_TOL) -> SymmetryReport:
    """Check ``M_ij == M_ji`` within ``tol`` (transpose symmetry, not Hermiticity)."""
    m = np.asarray(getattr(op, "entries", op))
    dev = np.abs(m - m.T)
    if dev.size == 0:
        return SymmetryReport(True, 0.0, None)
    idx = np.unravel_index(int(np.argmax(dev)), dev.shape)
    worst = float(dev[idx])
    return SymmetryReport(worst <= tol, worst, tuple(int(i) for i in idx))


def rescale_if_needed(state: QuantumState, bounds=RESCALE_BOUNDS):
    """Renormalize a state whose norm drifted outside ``bounds``.

    Returns the (possibly rescaled) state and the factor applied to the
    amplitudes (1.0 when untouched).
    """
    n2 = state.norm2
    if not np.isfinite(n2) or n2 <= 0.0:
        raise DegenerateStateError("state norm is zero or non-finite")
    norm = np.sqrt(n2)
    if bounds[0] <= norm <= bounds[1]:
        return state, 1.0
    factor = 1.0 / norm
    return state.scaled(factor), factor


def random_state(dim, rng, dims=None) -> QuantumState:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return QuantumState(v, dims)


def random_hermitian(dim, rng, real=False) -> LinearOp:
    m = rng.normal(size=(dim, dim))
    if not real:
        m = m + 1j * rng.normal(size=(dim, dim))
    return LinearOp(0.5 * (m + m.conj().T))


def random_density(dim, rng, rank=None, real=False) -> DensityOp:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank))
    if not real:
        g = g + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T)
    return DensityOp(m / np.trace(m).real)
