import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from flashcollapse.engine import OutcomeGrid, collapse_apply
from flashcollapse.errors import (
    ContractViolation,
    EnumerationTooLarge,
    GridCoverageError,
    InvalidCutError,
    MissingOutcomeError,
)
from flashcollapse.models import RelativisticFieldSite, hopping_hamiltonian
from flashcollapse.qalg import LinearOp, QuantumState, embed, random_hermitian, unitary_from_hamiltonian
from flashcollapse.spacetime import (
    CausalSprinkling,
    Cut,
    Foliation,
    LatticeRegion,
    LocalDynamics,
    SprinkledEvent,
    advance,
    boost,
    compare_order,
    count_foliations_upper_bound,
    crossed_events,
    energy_grid,
    energy_increase,
    enumerate_foliations,
    evolve_along_foliation,
    events_between,
    microcausality_check,
    reduced_density,
    region_outcome_probability,
    regularized_coefficient,
    sprinkle,
)
from flashcollapse.verify import foliation_case, poisson_gof


def qubit_dynamics(n_sites, rng, sigma=0.6):
    h = {s: random_hermitian(2, rng).entries for s in range(n_sites)}
    gens = {s: np.diag([0.0, 1.0]) for s in range(n_sites)}
    return LocalDynamics.single_site((2,) * n_sites, h, gens, sigma)


def manual_events(region, coords):
    evs = [SprinkledEvent(i, t, x, region.site_of(x), region.step_of(t))
           for i, (t, x) in enumerate(coords)]
    return CausalSprinkling(tuple(evs), region, region.c)


class TestRegion:
    def test_site_ties_go_low(self):
        r = LatticeRegion(4, 3)
        assert r.site_of(1.0) == 0
        assert r.site_of(2.0) == 1
        assert r.site_of(0.5) == 0
        assert r.site_of(1.6) == 1
        assert r.site_of(4.0) == 3

    def test_step_is_floor(self):
        r = LatticeRegion(2, 4, dt=0.5)
        assert r.step_of(0.49) == 0
        assert r.step_of(0.5) == 1
        assert r.step_of(2.0) == 3  # the closing boundary belongs to the last step

    def test_light_speed(self):
        assert LatticeRegion(2, 2, spacing=2.0, dt=0.5).c == 4.0

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            LatticeRegion(0, 2)


class TestSprinkle:
    region = LatticeRegion(5, 2)

    def test_empty_at_zero_density(self, rng):
        assert len(sprinkle(self.region, 0.0, rng)) == 0

    def test_events_ordered_and_assigned(self, rng):
        s = sprinkle(self.region, 3.0, rng)
        keys = [(e.t, e.x) for e in s.events]
        assert keys == sorted(keys)
        assert [e.event_id for e in s.events] == list(range(len(s)))
        for e in s.events:
            assert self.region.contains(e.t, e.x)
            assert e.site == self.region.site_of(e.x) and e.step == self.region.step_of(e.t)

    def test_counts_are_poisson(self):
        rng = np.random.default_rng(4)
        counts = np.array([len(sprinkle(self.region, 2.0, rng)) for _ in range(10_000)])
        assert poisson_gof(counts, 20.0)[1] > 0.01

    def test_positions_uniform(self):
        rng = np.random.default_rng(5)
        s = sprinkle(LatticeRegion(10, 10), 20.0, rng)
        c = s.coordinates
        assert stats.kstest(c[:, 0] / 10.0, "uniform").pvalue > 0.01
        assert stats.kstest(c[:, 1] / 10.0, "uniform").pvalue > 0.01

    def test_negative_density(self, rng):
        with pytest.raises(ContractViolation):
            sprinkle(self.region, -1.0, rng)

    def test_csv_header(self, rng):
        s = sprinkle(self.region, 1.0, rng).with_outcomes({0: 0.25})
        buf = io.StringIO()
        s.to_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "event_id,t,x,site,z"
        assert len(lines) == len(s) + 1
        if len(s):
            assert lines[1].endswith(",0.25")


class TestCausalOrder:
    @settings(max_examples=20)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 4.0))
    def test_axioms(self, seed, mu):
        s = sprinkle(LatticeRegion(4, 3), mu, np.random.default_rng(seed))
        rep = s.check_axioms()
        assert rep.passed
        assert rep.max_interval_size < max(len(s), 1)

    def test_light_cone(self):
        r = LatticeRegion(4, 4)
        s = manual_events(r, [(0.0, 1.0), (1.0, 1.5), (1.0, 3.5), (2.0, 1.0)])
        prec = s.order
        assert prec[0, 1] and not prec[0, 2] and prec[0, 3] and prec[1, 3]
        assert not prec[1, 0]

    def test_rapidity_zero_is_identity(self, rng):
        s = sprinkle(LatticeRegion(3, 3), 2.0, rng)
        assert boost(s, 0.0).events == s.events

    @settings(max_examples=20)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-2.0, 2.0))
    def test_boost_preserves_order(self, seed, eta):
        s = sprinkle(LatticeRegion(5, 2), 2.0, np.random.default_rng(seed))
        cmp = compare_order(s, boost(s, eta))
        assert cmp.preserved

    def test_boost_preserves_interval(self, rng):
        s = sprinkle(LatticeRegion(5, 2), 2.0, rng)
        b = boost(s, 0.8)
        for e, f in zip(s.events, b.events):
            assert e.t ** 2 - e.x ** 2 == pytest.approx(f.t ** 2 - f.x ** 2, abs=1e-11)
            assert f.site is None and f.step is None

    def test_boosted_diamond_is_uniform(self):
        # inside a causal diamond, light-cone coordinates are uniform and a
        # boost only rescales them
        rng = np.random.default_rng(6)
        s = sprinkle(LatticeRegion(20, 10, spacing=0.5, dt=1.0), 40.0, rng)
        t, x = s.coordinates[:, 0], s.coordinates[:, 1] - 5.0
        inside = (t + x >= 0) & (t + x <= 10) & (t - x >= 0) & (t - x <= 10)
        # recentre so the diamond's bottom tip is the boost origin
        sub = CausalSprinkling(tuple(e._replace(x=e.x - 5.0)
                                     for e, k in zip(s.events, inside) if k), None, 1.0)
        eta = 0.7
        bc = boost(sub, eta).coordinates
        u = (bc[:, 0] + bc[:, 1]) * math.exp(eta)
        v = (bc[:, 0] - bc[:, 1]) * math.exp(-eta)
        assert len(sub) > 500
        assert stats.kstest(u / 10.0, "uniform").pvalue > 0.01
        assert stats.kstest(v / 10.0, "uniform").pvalue > 0.01

    def test_compare_order_size_mismatch(self, rng):
        a = sprinkle(LatticeRegion(2, 2), 5.0, rng)
        b = CausalSprinkling(a.events[:-1], a.region, a.c)
        with pytest.raises(ContractViolation):
            compare_order(a, b)


class TestCuts:
    def test_flat_and_advance(self):
        c = Cut.flat(3, 1).advanced(2)
        assert c.levels == (1, 1, 2)
        assert Cut.flat(3, 1).precedes(c) and not c.precedes(Cut.flat(3, 1))

    def test_validation(self):
        r = LatticeRegion(3, 2)
        with pytest.raises(InvalidCutError):
            Cut((0, 3, 0)).validate(r)
        with pytest.raises(InvalidCutError):
            Cut((0, 2, 0)).validate(slope_max=1)
        assert Cut((0, 2, 0)).is_valid(r)

    def test_two_sites_one_step(self):
        fols = enumerate_foliations(Cut.flat(2, 0), Cut.flat(2, 1))
        assert sorted(f.site_order for f in fols) == [(0, 1), (1, 0)]

    def test_two_sites_two_steps(self):
        fols = enumerate_foliations(Cut.flat(2, 0), Cut.flat(2, 2))
        assert len(fols) == 6 == count_foliations_upper_bound(Cut.flat(2, 0), Cut.flat(2, 2))

    def test_slope_limit_prunes(self):
        fols = enumerate_foliations(Cut.flat(2, 0), Cut.flat(2, 2), slope_max=1)
        assert sorted(f.site_order for f in fols) == [(0, 1, 0, 1), (0, 1, 1, 0),
                                                       (1, 0, 0, 1), (1, 0, 1, 0)]

    def test_cap(self):
        with pytest.raises(EnumerationTooLarge):
            enumerate_foliations(Cut.flat(2, 0), Cut.flat(2, 2), cap=3)

    def test_time_slices(self):
        f = Foliation.time_slices(Cut((0, 1)), Cut((2, 2)))
        assert f.site_order == (0, 0, 1)
        f.validate()

    def test_foliation_must_reach_end(self):
        f = Foliation(Cut((0, 0)), Cut((1, 1)), ((0, 0),))
        with pytest.raises(InvalidCutError):
            f.validate()


class TestMicrocausality:
    def test_single_site_operators_commute(self, rng):
        rep = microcausality_check(qubit_dynamics(3, rng))
        assert rep.passed and rep.max_commutator_norm == 0.0

    def test_adversarial_coupling_detected(self, rng):
        dims = (2, 2)
        sx = np.array([[0.0, 1.0], [1.0, 0.0]])
        h = {0: LinearOp(np.kron(sx, sx), dims)}
        base = qubit_dynamics(2, rng)
        dyn = LocalDynamics(dims, h, base.jump_families)
        rep = microcausality_check(dyn)
        assert not rep.passed
        assert rep.kind == "J-H" and rep.pair == (1, 0)


class TestAdvance:
    def test_no_events_is_unitary(self, rng):
        r = LatticeRegion(2, 2)
        dyn = qubit_dynamics(2, rng)
        psi = QuantumState(np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2), (2, 2))
        empty = CausalSprinkling((), r, 1.0)
        res = advance(psi, Cut.flat(2), 1, dyn, 1.0, empty, outcomes={})
        u = unitary_from_hamiltonian(dyn.h_int[1], 1.0).entries
        assert np.allclose(res.state.amplitudes, u @ psi.amplitudes, atol=1e-14)
        assert res.cut.levels == (0, 1) and res.flashes == ()

    def test_replayed_event(self, rng):
        r = LatticeRegion(2, 2)
        dyn = qubit_dynamics(2, rng)
        events = manual_events(r, [(0.3, 0.4), (0.7, 0.2), (0.5, 1.7)])
        psi = QuantumState(np.full(4, 0.5), (2, 2))
        res = advance(psi, Cut.flat(2), 0, dyn, 1.0, events, outcomes={0: 0.8, 1: -0.1})
        expect = QuantumState(dyn.unitary(0, 1.0) @ psi.amplitudes, (2, 2))
        for z in (0.8, -0.1):
            expect = collapse_apply(expect, dyn.jump_families[0], z)
        assert np.allclose(res.state.amplitudes, expect.amplitudes, atol=1e-14)
        assert [f.z for f in res.flashes] == [0.8, -0.1]
        assert [e.event_id for e in crossed_events(events, 0, 0)] == [0, 1]

    def test_missing_outcome(self, rng):
        r = LatticeRegion(2, 2)
        events = manual_events(r, [(0.3, 0.4)])
        with pytest.raises(MissingOutcomeError):
            advance(QuantumState(np.ones(4), (2, 2)), Cut.flat(2), 0, qubit_dynamics(2, rng),
                    1.0, events, outcomes={})

    def test_needs_rng_or_outcomes(self, rng):
        r = LatticeRegion(2, 2)
        with pytest.raises(ContractViolation):
            advance(QuantumState(np.ones(4), (2, 2)), Cut.flat(2), 0, qubit_dynamics(2, rng),
                    1.0, CausalSprinkling((), r, 1.0))

    def test_cannot_leave_region(self, rng):
        r = LatticeRegion(2, 1)
        with pytest.raises(InvalidCutError):
            advance(QuantumState(np.ones(4), (2, 2)), Cut((1, 0)), 0, qubit_dynamics(2, rng),
                    1.0, CausalSprinkling((), r, 1.0), outcomes={})


class TestFoliationIndependence:
    @pytest.mark.parametrize("entangled", [False, True])
    def test_all_foliations_agree(self, entangled):
        rng = np.random.default_rng(7 + entangled)
        case = foliation_case(3, 2, entangled, rng)
        assert case["foliations"] == 90 and case["events"] >= 3
        assert case["microcausal"]
        assert case["state_spread"] <= 1e-12
        assert case["probability_spread"] <= 1e-12

    def test_region_probability_matches_fold(self, rng):
        r = LatticeRegion(2, 2)
        dyn = qubit_dynamics(2, rng)
        events = manual_events(r, [(0.2, 0.3), (1.4, 1.2), (1.6, 0.9)])
        psi = QuantumState(np.array([0.6, 0.0, 0.0, 0.8]), (2, 2))
        start, end = Cut.flat(2, 0), Cut.flat(2, 2)
        outs = {0: 0.1, 1: 0.9, 2: 0.4}
        probs = [region_outcome_probability(psi, start, end, dyn, 1.0, events, outs, f)
                 for f in enumerate_foliations(start, end, region=r)]
        assert max(probs) - min(probs) <= 1e-12 * max(probs)
        assert [e.event_id for e in events_between(events, start, end)] == [0, 1, 2]
        with pytest.raises(MissingOutcomeError):
            region_outcome_probability(psi, start, end, dyn, 1.0, events, {0: 0.1},
                                       Foliation.time_slices(start, end))

    def test_sampling_mode_runs(self, rng):
        r = LatticeRegion(2, 2)
        dyn = qubit_dynamics(2, rng)
        events = sprinkle(r, 2.0, rng)
        fol = Foliation.time_slices(Cut.flat(2, 0), Cut.flat(2, 2))
        res = evolve_along_foliation(QuantumState(np.ones(4), (2, 2)), fol, dyn, 1.0, events,
                                     rng=rng)
        assert len(res.flashes) == len(events)
        assert res.cut == Cut.flat(2, 2)
        assert res.joint_density > 0

    def test_reduced_density_of_product(self):
        psi = QuantumState(np.kron([0.6, 0.8], [1.0, 0.0]), (2, 2))
        assert np.allclose(reduced_density(psi, 0), [[0.36, 0.48], [0.48, 0.64]])


def one_particle_state(fock_dim):
    v = np.zeros(fock_dim ** 2, dtype=complex)
    v[np.ravel_multi_index((1, 0), (fock_dim, fock_dim))] = 1.0
    v[np.ravel_multi_index((0, 1), (fock_dim, fock_dim))] = 1.0
    return QuantumState(v / np.sqrt(2), (fock_dim, fock_dim))


class TestEnergy:
    def test_closed_form(self):
        # hopping changes phi^dag phi by 1/a, so each matrix element of H
        # is damped by exp(-beta / 4a^2) on average
        for beta, a in ((1.0, 1.0), (0.3, 0.5), (2.0, 2.0)):
            site = RelativisticFieldSite(fock_dim=4, beta=beta, lattice_spacing=a)
            h = hopping_hamiltonian(4, 2)
            psi = one_particle_state(4)
            res = energy_increase(psi, site, h)
            e0 = np.vdot(psi.amplitudes, h.entries @ psi.amplitudes).real
            expected = (1.0 - np.exp(-beta / (4 * a * a))) * (-e0)
            assert res.delta_e == pytest.approx(expected, rel=1e-8)
            assert res.direct == pytest.approx(expected, rel=1e-8)
            assert abs(res.imaginary_part) <= 1e-12
            assert res.delta_e > 0

    def test_commuting_hamiltonian_no_heating(self):
        site = RelativisticFieldSite(fock_dim=4)
        h = embed(np.diag(np.arange(4.0) ** 2), 0, (4, 4))
        res = energy_increase(one_particle_state(4), site, h)
        assert abs(res.delta_e) <= 1e-12

    def test_coefficient_scales_inversely_with_spacing(self):
        h = hopping_hamiltonian(4, 2)
        psi = one_particle_state(4)
        c1 = regularized_coefficient(psi, RelativisticFieldSite(4, 1e-3, 1.0), h)
        c2 = regularized_coefficient(psi, RelativisticFieldSite(4, 1e-3, 0.5), h)
        assert c2 / c1 == pytest.approx(2.0, rel=1e-3)

    def test_grid_must_cover_spectrum(self):
        site = RelativisticFieldSite(fock_dim=4)
        with pytest.raises(GridCoverageError):
            energy_increase(one_particle_state(4), site, hopping_hamiltonian(4, 2),
                            grid=OutcomeGrid(-1.0, 3.0, 41))
        grid = energy_grid(site)
        assert grid.step <= site.sigma

    def test_fock_dimension_checked(self):
        with pytest.raises(ContractViolation):
            energy_increase(one_particle_state(4), RelativisticFieldSite(fock_dim=5),
                            hopping_hamiltonian(4, 2))
