"""Numerical verification suites behind ``flashcollapse verify``.

Each suite returns a JSON-ready dict ``{"suite", "passed", "checks"}`` where
every check records its maximum deviation and the tolerance it was held to.
All randomness flows from the ``seed`` argument.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np
from scipy import stats

from .engine import GaussianJumpFamily, OutcomeGrid, completeness_check, outcome_density
from .inference import (
    NoisyObservationModel,
    bayes_posterior,
    collapse_posterior,
    marginal_density,
    prior_from_state,
    total_variation,
)
from .models import (
    CslDiscreteModel,
    GrwModel,
    PositionGrid,
    RelativisticFieldSite,
    hopping_hamiltonian,
)
from .qalg import LinearOp, QuantumState, random_density, random_hermitian, random_state
from .spacetime import (
    CausalSprinkling,
    Cut,
    LatticeRegion,
    LocalDynamics,
    boost,
    compare_order,
    crossed_events,
    energy_increase,
    enumerate_foliations,
    evolve_along_foliation,
    microcausality_check,
    region_outcome_probability,
    regularized_coefficient,
    sprinkle,
)
from .timesym import (
    BoundaryConditions,
    SequenceSpec,
    max_relative_asymmetry,
    sequence_table,
    symmetry_condition_check,
)

DEFAULT_SEED = 20240601

COMPLETENESS_TOL = 1e-6
BAYES_TOL = 1e-12
MARGINAL_TOL = 1e-12
TIMESYM_TOL = 1e-10
TIMESYM_NEGATIVE_MIN = 1e-2
FOLIATION_TOL = 1e-12
POISSON_ALPHA = 0.01
ENERGY_PATH_TOL = 1e-8
ENERGY_FLOOR = -1e-10
LINEARITY_TOL = 0.05
SCALING_TOL = 0.01


def _check(name, deviation, tolerance, passed=None, **extra) -> dict:
    deviation = float(deviation)
    ok = deviation <= tolerance if passed is None else bool(passed)
    return {"name": name, "max_deviation": deviation, "tolerance": tolerance,
            "passed": bool(ok), **extra}


def _suite(name, checks, started) -> dict:
    return {"suite": name, "passed": all(c["passed"] for c in checks), "checks": checks,
            "seconds": round(time.perf_counter() - started, 3)}


# -- completeness ------------------------------------------------------------

def suite_completeness(seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    started = time.perf_counter()
    grw = GrwModel(PositionGrid(-5.0, 5.0, 41))
    csl = CslDiscreteModel(2)
    rel = RelativisticFieldSite()
    fams = {
        "grw": grw.jump_family(0),
        "csl_discrete": csl.jump_family(0),
        "relativistic": GaussianJumpFamily(rel.modulus_squared(), rel.sigma),
    }
    checks = []
    for name, fam in fams.items():
        rep = completeness_check(fam)
        checks.append(_check(f"completeness[{name}]", rep.max_deviation, COMPLETENESS_TOL,
                             grid_points=fam.grid.n_points))
    return _suite("completeness", checks, started)


# -- collapse as Bayesian updating -------------------------------------------

def bayes_sweep(seed: int = DEFAULT_SEED, dims=(2, 4, 8, 16), n_states: int = 100,
                n_z: int = 21) -> dict:
    """Largest dual-path and marginal discrepancies over random states and data."""
    rng = np.random.default_rng(seed)
    worst_tv, worst_marg = {}, {}
    for d in dims:
        tv_max = marg_max = 0.0
        for _ in range(n_states):
            gen = random_hermitian(d, rng)
            sigma = float(rng.uniform(0.2, 2.0))
            obs = NoisyObservationModel(gen, sigma)
            psi = random_state(d, rng)
            prior = prior_from_state(psi, obs)
            lam = obs.eigensystem[0]
            zs = np.linspace(lam.min() - 3 * sigma, lam.max() + 3 * sigma, n_z)
            dens = outcome_density(psi, obs.jump_family, zs)
            marg = marginal_density(psi, obs, zs)
            marg_max = max(marg_max, float(np.max(np.abs(dens - marg))))
            for z in zs:
                tv = total_variation(collapse_posterior(psi, obs, z),
                                     bayes_posterior(prior, z, sigma))
                tv_max = max(tv_max, tv)
        worst_tv[d], worst_marg[d] = tv_max, marg_max
    return {"total_variation": worst_tv, "marginal": worst_marg}


def suite_bayes(seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    started = time.perf_counter()
    sweep = bayes_sweep(seed)
    checks = [_check(f"collapse_vs_bayes[d={d}]", v, BAYES_TOL)
              for d, v in sweep["total_variation"].items()]
    checks += [_check(f"marginal_vs_outcome_density[d={d}]", v, MARGINAL_TOL)
               for d, v in sweep["marginal"].items()]
    return _suite("bayes", checks, started)


# -- time symmetry -----------------------------------------------------------

def timesym_case(d: int, n: int, rng, real: bool = True, n_points: int = 21, threads: int = 1):
    """Forward/reverse table for a random instance; returns (asymmetry, symmetric?)."""
    h = random_hermitian(d, rng, real=real)
    fam = GaussianJumpFamily(LinearOp.diagonal(np.arange(d, dtype=float)),
                             float(rng.uniform(0.4, 1.0)))
    intervals = rng.uniform(0.1, 1.0, n + 1)
    spec = SequenceSpec([0.0] * n, intervals, [fam] * n, h)
    bc = BoundaryConditions(random_density(d, rng), random_density(d, rng))
    grids = [OutcomeGrid(fam.grid.lo, fam.grid.hi, n_points)] * n
    table = sequence_table(spec, bc, grids, threads)
    sym = symmetry_condition_check(spec, grids=grids)
    return max_relative_asymmetry(table), sym.passed


def suite_timesym(seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = []
    for d in (2, 3):
        for n in (1, 2, 3):
            asym, sym = timesym_case(d, n, rng, threads=threads)
            checks.append(_check(f"forward_vs_reverse[d={d},n={n}]", asym, TIMESYM_TOL,
                                 passed=sym and asym <= TIMESYM_TOL, symmetric_basis=sym))
    asym, sym = timesym_case(2, 2, rng, real=False, threads=threads)
    checks.append(_check("negative_control[complex H]", asym, TIMESYM_NEGATIVE_MIN,
                         passed=asym > TIMESYM_NEGATIVE_MIN, symmetric_basis=sym,
                         note="must exceed the tolerance"))
    return _suite("timesym", checks, started)


# -- foliation independence --------------------------------------------------

def _qubit_lattice(n_sites, rng):
    h_local = {s: random_hermitian(2, rng, real=False).entries for s in range(n_sites)}
    gens = {s: np.diag([0.0, 1.0]) for s in range(n_sites)}
    return LocalDynamics.single_site((2,) * n_sites, h_local, gens, sigma=0.6)


def _sprinkling_with(region, mu, rng, min_events):
    while True:
        s = sprinkle(region, mu, rng)
        if len(s) >= min_events and len({e.site for e in s.events}) == region.n_sites:
            return s


def foliation_case(n_sites: int, n_steps: int, entangled: bool, rng, min_events: int = 3):
    """Max final-state and probability spreads over every foliation of the region."""
    region = LatticeRegion(n_sites, n_steps)
    dyn = _qubit_lattice(n_sites, rng)
    events = _sprinkling_with(region, 1.5, rng, min_events)
    dims = (2,) * n_sites
    if entangled:
        psi = random_state(2 ** n_sites, rng, dims)
    else:
        vec = np.ones(1, dtype=complex)
        for _ in range(n_sites):
            vec = np.kron(vec, random_state(2, rng).amplitudes)
        psi = QuantumState(vec, dims)
    start, end = Cut.flat(n_sites, 0), Cut.flat(n_sites, n_steps)
    fols = enumerate_foliations(start, end, region=region)
    sim = evolve_along_foliation(psi, fols[0], dyn, region.dt, events, rng=rng)
    outcomes = {e.event_id: f.z for e, f in zip(_crossing_order(events, fols[0]), sim.flashes)}
    finals, probs = [], []
    for fol in fols:
        res = evolve_along_foliation(psi, fol, dyn, region.dt, events, outcomes)
        finals.append(res.state.amplitudes)
        probs.append(region_outcome_probability(psi, start, end, dyn, region.dt, events,
                                                outcomes, fol))
    ref = finals[0]
    state_dev = max(np.max(np.abs(f - ref)) for f in finals) / np.max(np.abs(ref))
    probs = np.array(probs)
    prob_dev = float(np.max(np.abs(probs - probs[0])) / probs[0])
    micro = microcausality_check(dyn)
    return {"foliations": len(fols), "events": len(events), "state_spread": float(state_dev),
            "probability_spread": prob_dev, "microcausal": micro.passed}


def _crossing_order(events: CausalSprinkling, fol):
    cut, out = fol.start, []
    for site, _ in fol.steps:
        out.extend(crossed_events(events, site, cut[site]))
        cut = cut.advanced(site)
    return out


def suite_foliation(seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = []
    for n_sites, n_steps in ((2, 2), (3, 1)):
        for entangled in (False, True):
            r = foliation_case(n_sites, n_steps, entangled, rng)
            tag = f"{n_sites}x{n_steps},{'entangled' if entangled else 'product'}"
            checks.append(_check(f"final_state[{tag}]", r["state_spread"], FOLIATION_TOL,
                                 foliations=r["foliations"], events=r["events"]))
            checks.append(_check(f"outcome_probability[{tag}]", r["probability_spread"],
                                 FOLIATION_TOL, passed=r["probability_spread"] <= FOLIATION_TOL
                                 and r["microcausal"], foliations=r["foliations"]))
    return _suite("foliation", checks, started)


# -- sprinkling statistics ---------------------------------------------------

def poisson_gof(counts: np.ndarray, mean: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer counts to Poisson(mean); returns (stat, p)."""
    counts = np.asarray(counts)
    n = counts.size
    kmax = int(max(counts.max(), mean + 10 * np.sqrt(mean)))
    ks = np.arange(kmax + 1)
    pmf = stats.poisson.pmf(ks, mean)
    pmf[-1] += stats.poisson.sf(kmax, mean)
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    # pool adjacent bins until each expected count reaches min_expected
    edges, acc_e, acc_o, exp_b, obs_b = [], 0.0, 0.0, [], []
    for k in ks:
        acc_e += n * pmf[k]
        acc_o += obs[k]
        if acc_e >= min_expected:
            exp_b.append(acc_e)
            obs_b.append(acc_o)
            edges.append(k)
            acc_e = acc_o = 0.0
    if acc_e > 0 and exp_b:
        exp_b[-1] += acc_e
        obs_b[-1] += acc_o
    res = stats.chisquare(obs_b, exp_b)
    return float(res.statistic), float(res.pvalue)


def suite_sprinkle(seed: int = DEFAULT_SEED, threads: int = 1, n_gof: int = 10_000,
                   n_boost: int = 1_000) -> dict:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    region = LatticeRegion(5, 2)  # volume 10
    mu = 2.0
    counts = np.array([len(sprinkle(region, mu, rng)) for _ in range(n_gof)])
    stat, p = poisson_gof(counts, mu * region.volume)
    checks = [_check("poisson_chi_square", 1.0 - p, 1.0 - POISSON_ALPHA,
                     passed=p > POISSON_ALPHA, p_value=p, statistic=stat,
                     mean=float(counts.mean()), variance=float(counts.var(ddof=1)))]
    mism, axioms_ok, skipped = 0, True, 0
    for _ in range(n_boost):
        s = sprinkle(region, mu, rng)
        b = boost(s, float(rng.uniform(-2.0, 2.0)))
        cmp = compare_order(s, b)
        mism += cmp.mismatches
        skipped += cmp.skipped_near_null
        axioms_ok &= s.check_axioms().passed and b.check_axioms().passed
    checks.append(_check("boost_order_preserved", mism, 0, skipped_near_null=skipped))
    checks.append(_check("causal_set_axioms", 0 if axioms_ok else 1, 0))
    return _suite("sprinkle", checks, started)


# -- energy increase ---------------------------------------------------------

def energy_states(fock_dim: int, n_sites: int, rng, n_random: int = 5):
    """Low-energy test states: hopping ground state of one particle and random
    non-negative superpositions of low occupations."""
    dims = (fock_dim,) * n_sites
    d = fock_dim ** n_sites
    occ = np.indices(dims).reshape(n_sites, -1).T
    out = []
    one = np.zeros(d, dtype=complex)
    for s in range(n_sites):
        k = np.zeros(n_sites, dtype=int)
        k[s] = 1
        one[np.ravel_multi_index(tuple(k), dims)] = 1.0
    out.append(QuantumState(one, dims))
    low = occ.sum(axis=1) <= 3
    for _ in range(n_random):
        v = np.zeros(d, dtype=complex)
        v[low] = rng.uniform(0.0, 1.0, int(low.sum()))
        out.append(QuantumState(v, dims))
    return out


def energy_sweep(seed: int = DEFAULT_SEED, fock_dim: int = 6, n_sites: int = 2) -> dict:
    rng = np.random.default_rng(seed)
    h = hopping_hamiltonian(fock_dim, n_sites)
    states = energy_states(fock_dim, n_sites, rng)
    site = RelativisticFieldSite(fock_dim, beta=1.0)
    path_dev, min_de = 0.0, np.inf
    for psi in states:
        r = energy_increase(psi, site, h)
        path_dev = max(path_dev, abs(r.delta_e - r.direct), abs(r.imaginary_part))
        min_de = min(min_de, r.delta_e)
    # commuting case: H diagonal in the collapse basis
    n_op = np.diag(np.indices((fock_dim,) * n_sites).reshape(n_sites, -1).sum(axis=0))
    comm = energy_increase(states[1], site, LinearOp(n_op.astype(complex), h.dims)).delta_e
    betas = (0.01, 0.02, 0.04)
    slopes = [energy_increase(states[0], RelativisticFieldSite(fock_dim, b), h).delta_e / b
              for b in betas]
    linearity = float((max(slopes) - min(slopes)) / np.mean(slopes))
    beta_small = 1e-3
    c1 = regularized_coefficient(states[0], RelativisticFieldSite(fock_dim, beta_small, 1.0), h)
    c2 = regularized_coefficient(states[0], RelativisticFieldSite(fock_dim, beta_small, 0.5), h)
    return {"path_deviation": float(path_dev), "min_delta_e": float(min_de),
            "commuting_delta_e": float(abs(comm)), "linearity_spread": linearity,
            "slopes": [float(s) for s in slopes], "scaling_ratio": float(c2 / c1)}


def suite_energy(seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    started = time.perf_counter()
    e = energy_sweep(seed)
    checks = [
        _check("quadrature_vs_direct", e["path_deviation"], ENERGY_PATH_TOL),
        _check("non_negative", max(0.0, -e["min_delta_e"]), -ENERGY_FLOOR,
               passed=e["min_delta_e"] >= ENERGY_FLOOR, min_delta_e=e["min_delta_e"]),
        _check("commuting_hamiltonian_zero", e["commuting_delta_e"], 1e-10),
        _check("small_beta_linearity", e["linearity_spread"], LINEARITY_TOL,
               passed=e["linearity_spread"] <= LINEARITY_TOL and min(e["slopes"]) > 0),
        _check("lattice_spacing_scaling", abs(e["scaling_ratio"] - 2.0) / 2.0, SCALING_TOL,
               ratio=e["scaling_ratio"]),
    ]
    return _suite("energy", checks, started)


SUITES: dict[str, Callable[..., dict]] = {
    "completeness": suite_completeness,
    "bayes": suite_bayes,
    "timesym": suite_timesym,
    "foliation": suite_foliation,
    "sprinkle": suite_sprinkle,
    "energy": suite_energy,
}


def execute_verify(suite: str, seed: int = DEFAULT_SEED, threads: int = 1) -> dict:
    """Run one suite (or ``all``); ``passed`` is the conjunction of its checks."""
    if suite == "all":
        reports = [fn(seed=seed, threads=threads) for fn in SUITES.values()]
        return {"suite": "all", "passed": all(r["passed"] for r in reports), "suites": reports}
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[suite](seed=seed, threads=threads)
