"""Collapse read as Bayesian inference about a hidden quantity.

A hidden value ``A`` has a quantum (Born) prior given by the state. A datum
``z = A + noise`` with Gaussian noise of width ``sigma`` updates that prior.
The Bayes posterior equals the Born distribution of the collapsed state
``J(z)|psi>`` with ``J(z) = (2 pi sigma^2)^(-1/4) exp(-(A - z)^2 / 4 sigma^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .engine import GaussianJumpFamily
from .errors import (
    ContractViolation,
    DegenerateOutcomeError,
    DegenerateStateError,
    PosteriorUnderflowError,
)
from .qalg import LinearOp, QuantumState

MERGE_REL_TOL = 1e-9
EIG_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NoisyObservationModel:
    generator: LinearOp
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractViolation("sigma must be positive")
        if not self.generator.is_hermitian():
            raise ContractViolation("generator must be Hermitian")
        lam, vecs = self.eigensystem
        resid = np.linalg.norm(self.generator.entries @ vecs - vecs * lam, axis=0)
        if resid.size and resid.max() > EIG_RESIDUAL_TOL * max(1.0, np.abs(lam).max()):
            raise ContractViolation(f"eigendecomposition residual {resid.max():.2e} too large")

    @cached_property
    def eigensystem(self):
        return np.linalg.eigh(self.generator.entries)

    @cached_property
    def jump_family(self) -> GaussianJumpFamily:
        return GaussianJumpFamily(self.generator, self.sigma)

    @property
    def spread(self) -> float:
        lam = self.eigensystem[0]
        return float(lam.max() - lam.min())


@dataclass(frozen=True)
class EigenPosterior:
    """A discrete distribution over distinct generator eigenvalues."""

    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if s.shape != p.shape or s.ndim != 1:
            raise ContractViolation("support and probabilities must be equal-length vectors")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"probabilities must be non-negative and sum to 1 ({p.sum()!r})")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probabilities", p)

    def as_dict(self) -> dict:
        return dict(zip(self.support.tolist(), self.probabilities.tolist()))

    def mean(self) -> float:
        return float(self.support @ self.probabilities)


def merge_eigenvalues(values, weights, rel_tol: float = MERGE_REL_TOL):
    """Sum weights of eigenvalues closer than ``rel_tol * spread``."""
    order = np.argsort(values, kind="stable")
    v, w = np.asarray(values, float)[order], np.asarray(weights, float)[order]
    spread = v[-1] - v[0] if v.size else 0.0
    tol = rel_tol * max(spread, 1.0)
    support, mass = [v[0]], [w[0]]
    for vi, wi in zip(v[1:], w[1:]):
        if vi - support[-1] <= tol:
            mass[-1] += wi
        else:
            support.append(vi)
            mass.append(wi)
    return np.array(support), np.array(mass)


def _normalized(support, mass) -> EigenPosterior:
    total = mass.sum()
    p = mass / total
    # absorb the last ulp so the sum is 1 to rounding
    return EigenPosterior(support, p / p.sum())


def _born_posterior(vec: np.ndarray, obs: NoisyObservationModel) -> EigenPosterior:
    lam, vecs = obs.eigensystem
    w = np.abs(vecs.conj().T @ vec) ** 2
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateStateError("Born weights of a zero-norm state")
    support, mass = merge_eigenvalues(lam, w / total)
    return _normalized(support, mass)


def prior_from_state(state: QuantumState, obs: NoisyObservationModel) -> EigenPosterior:
    """Born distribution of the generator's eigenvalues, degeneracies merged."""
    if state.dims != obs.generator.dims:
        raise ContractViolation("state and generator bases differ")
    return _born_posterior(state.amplitudes, obs)


def bayes_posterior(prior: EigenPosterior, z: float, sigma: float) -> EigenPosterior:
    """``P(A | z) ∝ P(A) exp(-(A - z)^2 / 2 sigma^2)``, evaluated in log space."""
    if not sigma > 0:
        raise ContractViolation("sigma must be positive")
    p = prior.probabilities
    live = p > 0
    if not np.any(live):
        raise PosteriorUnderflowError("prior has no positive mass")
    logw = np.full(p.shape, -np.inf)
    with np.errstate(over="ignore"):
        # an overflowing square is an underflowing weight, reported below
        logw[live] = np.log(p[live]) - (prior.support[live] - z) ** 2 / (2.0 * sigma ** 2)
    norm = logsumexp(logw)
    if not np.isfinite(norm):
        raise PosteriorUnderflowError(
            f"posterior mass not representable at z={z} (max log-weight {logw.max():.1f})"
        )
    post = np.exp(logw - norm)
    return EigenPosterior(prior.support, post / post.sum())


def collapse_posterior(state: QuantumState, obs: NoisyObservationModel, z: float) -> EigenPosterior:
    """Born distribution of the collapsed state ``J(z)|psi>``.

    When ``J(z)|psi>`` underflows (``z`` many sigma from every eigenvalue
    with weight), the jump is multiplied by a positive constant before it
    is applied. The normalized Born distribution is unchanged by this.
    """
    if state.dims != obs.generator.dims:
        raise ContractViolation("state and generator bases differ")
    fam = obs.jump_family
    plus = fam.apply(z, state.amplitudes)
    n2 = np.vdot(plus, plus).real
    if not np.isfinite(n2) or n2 < 1e-280:
        lam = fam.eigvals
        shift = np.min((lam - z) ** 2) / (4.0 * fam.sigma ** 2)
        amp = np.exp(-((lam - z) ** 2) / (4.0 * fam.sigma ** 2) + shift)
        v = fam.eigvecs
        plus = amp * state.amplitudes if fam.is_diagonal else v @ (amp * (v.conj().T @ state.amplitudes))
        n2 = np.vdot(plus, plus).real
        if not np.isfinite(n2) or n2 <= 0.0:
            raise DegenerateOutcomeError(f"jump at z={z} annihilated the state", {"z": z})
    return _born_posterior(plus, obs)


def marginal_density(state: QuantumState, obs: NoisyObservationModel, z):
    """``sum_A P(A) Normal(z; A, sigma)``: noise convolved with the Born prior."""
    prior = prior_from_state(state, obs)
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    s = obs.sigma
    dens = np.exp(-((zs[:, None] - prior.support[None, :]) ** 2) / (2.0 * s * s))
    out = dens @ prior.probabilities / np.sqrt(2.0 * np.pi * s * s)
    return float(out[0]) if np.ndim(z) == 0 else out


def total_variation(p: EigenPosterior, q: EigenPosterior, rel_tol: float = MERGE_REL_TOL) -> float:
    """Half the L1 distance, with supports aligned by value."""
    values = np.concatenate([p.support, q.support])
    weights = np.concatenate([p.probabilities, -q.probabilities])
    _, diff = merge_eigenvalues(values, weights, rel_tol)
    return float(0.5 * np.abs(diff).sum())
