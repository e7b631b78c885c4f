import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import j0

from hartreelab.exceptions import ValidationError
from hartreelab.fock import SectorVector, sector_dimension
from hartreelab.many_body import build_free_hamiltonian
from hartreelab.models import kerr1, lattice_delta, lattice_hartree
from hartreelab.tests.oracles import full_reduced_density
from hartreelab.wick import SymbolPQ
from hartreelab.wigner import (
    StatePreparation,
    apriori_moment_check,
    characteristic_function,
    characteristic_lipschitz_ratio,
    circle_characteristic,
    convergence_metric,
    default_probes,
    density_target,
    duhamel_refinement,
    duhamel_residual,
    hermite_state,
    is_non_increasing,
    partial_trace,
    prepare,
    reduced_density_matrix,
    required_margin,
    superposition,
    trace_distance,
    weyl_policy,
    wick_expectation_limit,
)


def _random_state(rng, d, N):
    coeffs = rng.standard_normal(sector_dimension(d, N)) + 1j * rng.standard_normal(sector_dimension(d, N))
    return SectorVector(d, N, coeffs).normalized()


def test_hermite_state_is_normalized():
    psi = hermite_state(np.array([0.3, 0.4j]), 5)
    assert psi.norm() == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        hermite_state(np.zeros(2), 3)
    with pytest.raises(ValidationError):
        hermite_state(np.array([1.0, 1.0]), 3)


def test_superposition_validation():
    with pytest.raises(ValidationError):
        StatePreparation("superposition", 3, components=((1.0, [1.0, 0.0]), (1.0, [0.5, 0.0])))
    psi = superposition([(1.0, [1.0, 0.0]), (1.0, [0.0, 1.0])], 4)
    assert psi.norm() == pytest.approx(1.0)


def test_preparation_atoms():
    prep = StatePreparation("superposition", 3, components=((1.0, [1.0, 0.0]), (2.0j, [0.0, 0.5])))
    atoms = prep.atoms()
    assert [p for p, _ in atoms] == pytest.approx([0.2, 0.8])
    assert_allclose(atoms[1][1], [0.0, 1.0])
    assert prep.with_N(7).N == 7


@pytest.mark.parametrize("d,N,k", [(2, 4, 1), (2, 4, 2), (3, 3, 1), (3, 4, 2)])
def test_reduced_density_matches_full_tensor(d, N, k):
    psi = _random_state(np.random.default_rng(d + N + k), d, N)
    gamma = reduced_density_matrix(psi, k)
    assert_allclose(gamma.matrix, full_reduced_density(psi.coeffs, d, N, k), atol=1e-12)
    assert np.trace(gamma.matrix).real == pytest.approx(1.0)


def test_partial_trace_is_consistent():
    psi = _random_state(np.random.default_rng(7), 3, 4)
    gamma2 = reduced_density_matrix(psi, 2)
    assert_allclose(partial_trace(gamma2).matrix, reduced_density_matrix(psi, 1).matrix, atol=1e-12)


def test_reduced_density_expectation_of_one_body_operator():
    model = lattice_hartree()
    psi = _random_state(np.random.default_rng(8), 3, 4)
    gamma = reduced_density_matrix(psi, 1)
    kinetic = build_free_hamiltonian(model, 4).expectation(psi)
    assert gamma.expectation(model.A).real == pytest.approx(kinetic / 4)


def test_factorized_state_has_pure_marginals():
    z = np.array([0.6, 0.8j])
    psi = hermite_state(z, 5)
    target = density_target(((1.0, z),), 2)
    assert trace_distance(reduced_density_matrix(psi, 2).matrix, target) == pytest.approx(0.0, abs=1e-12)


def test_trace_distance():
    assert trace_distance(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == pytest.approx(2.0)


def test_kerr_reduced_density_is_exact():
    prep = StatePreparation("hermite", 2, np.array([1.0]))
    rows = convergence_metric(kerr1(), prep, [0.0, 0.5, 1.0], [2, 4, 8, 16])
    assert len(rows) == 12
    assert all(row.distance == pytest.approx(0.0, abs=1e-12) for row in rows)
    assert [(row.t, row.N) for row in rows[:4]] == [(0.0, 2), (0.0, 4), (0.0, 8), (0.0, 16)]


def test_convergence_metric_rejects_unsorted_sweeps():
    prep = StatePreparation("hermite", 2, np.array([1.0]))
    with pytest.raises(ValidationError):
        convergence_metric(kerr1(), prep, [0.0], [4, 2])


@pytest.mark.slow
def test_lattice_distance_decreases_with_N():
    prep = StatePreparation("hermite", 2, np.array([0.8, 0.6]))
    rows = convergence_metric(lattice_delta(), prep, [1.0], [2, 4, 8, 16])
    distances = [row.distance for row in rows]
    assert is_non_increasing(distances)
    assert distances[-1] < 0.5 * distances[0]


def test_is_non_increasing():
    assert is_non_increasing([0.3, 0.2, 0.2005, 0.1])
    assert not is_non_increasing([0.1, 0.2])


def test_characteristic_at_zero_probe_is_one():
    psi = hermite_state(np.array([0.6, 0.8]), 3)
    assert characteristic_function(lattice_delta(), psi, 0.4, np.zeros(2)) == pytest.approx(1.0)


def test_characteristic_of_a_factorized_state_is_real():
    psi = hermite_state(np.array([0.6, 0.8j]), 4)
    value = characteristic_function(lattice_delta(), psi, 0.0, np.array([0.3, -0.1j]))
    assert abs(value.imag) < 1e-12
    assert abs(value) <= 1.0 + 1e-12


def test_characteristic_approaches_the_circle_target():
    # kerr1 with z = 1: <N|D(beta)|N> tends to J0(2 pi |xi|)
    xi = np.array([0.3])
    target = j0(2 * math.pi * 0.3)
    errors = []
    for N in (2, 16):
        psi = hermite_state(np.array([1.0]), N)
        errors.append(abs(characteristic_function(kerr1(), psi, 0.0, xi) - target))
    assert errors[1] < 0.5 * errors[0]
    assert circle_characteristic(((1.0, np.array([1.0])),), xi) == pytest.approx(target)


def test_characteristic_lipschitz_ratio_is_bounded():
    psi = hermite_state(np.array([0.6, 0.8]), 4)
    ratio = characteristic_lipschitz_ratio(lattice_delta(), psi, 0.5, default_probes(2, 4))
    assert 0 < ratio < 4 * math.pi


def test_default_probes_are_seeded():
    assert_allclose(default_probes(3, seed=5), default_probes(3, seed=5))
    probes = default_probes(3, count=6, radius=0.5, seed=1)
    assert probes.shape == (6, 3)
    assert np.all(np.linalg.norm(probes, axis=1) <= 0.5 + 1e-15)


@pytest.mark.parametrize("model", [lattice_delta(), lattice_hartree()], ids=lambda m: m.label)
def test_seeded_weyl_vectors_respect_the_form_norm(model):
    probes = default_probes(model.d, count=50, seed=2)
    weight = model.A + np.eye(model.d)
    form_norms = np.sqrt(np.einsum("mj,jk,mk->m", probes.conj(), weight, probes).real)
    assert np.all(form_norms <= 2.0)


def test_weyl_policy_widens_for_large_probes():
    assert weyl_policy(8).n_max == 8 + 16
    assert required_margin(8) == 4
    small = weyl_policy(16, xi=np.array([[0.01, 0.0]]))
    large = weyl_policy(2, xi=np.array([[0.5, 0.0]]))
    assert small.n_max == 16 + 16
    assert large.n_max > 2 + 16


def test_duhamel_residual_is_zero_at_time_zero():
    prep = StatePreparation("hermite", 3, np.array([0.6, 0.8]))
    assert duhamel_residual(lattice_delta(), prep, np.array([0.2, 0.1]), 0.0) == 0.0
    with pytest.raises(ValidationError):
        duhamel_residual(lattice_delta(), prep, np.array([0.2, 0.1]), 0.5, nodes=64)


@pytest.mark.slow
def test_duhamel_residual_is_small():
    prep = StatePreparation("hermite", 4, np.array([0.6, 0.8j]))
    xi = np.array([0.25, -0.15j])
    history = duhamel_refinement(lattice_delta(), prep, xi, 0.5, nodes=(9, 65))
    assert history[1][1] <= 1e-5
    assert history[1][1] <= history[0][1]


def test_wick_expectation_of_the_charge():
    prep = StatePreparation("hermite", 2, np.array([0.6, 0.8]))
    report = wick_expectation_limit(lattice_delta(), prep, SymbolPQ(1, 1, np.eye(2)), [2, 4, 8])
    assert_allclose(np.array(report.expectations), 1.0, atol=1e-12)
    assert report.target == pytest.approx(1.0)
    assert report.fatou_holds()


def test_wick_expectation_fatou_extrapolation():
    prep = StatePreparation("hermite", 2, np.array([1.0]))
    b = SymbolPQ(2, 2, np.array([[1.0]]))
    report = wick_expectation_limit(kerr1(), prep, b, [4, 8])
    assert report.expectations == pytest.approx([0.75, 0.875])
    assert report.extrapolated == pytest.approx(1.0)
    assert report.fatou_holds()


def test_wick_expectation_off_diagonal_symbol_vanishes():
    prep = StatePreparation("hermite", 2, np.array([0.6, 0.8]))
    report = wick_expectation_limit(lattice_delta(), prep, SymbolPQ(1, 0, np.ones((1, 2)), d=2), [2, 4])
    assert report.expectations == (0j, 0j)
    assert report.target == 0
    with pytest.raises(ValidationError):
        report.fatou_holds()


def test_apriori_moment_check():
    model = lattice_hartree()
    z = np.array([0.6, 0.0, 0.8j])
    prep = StatePreparation("hermite", 2, z)
    report = apriori_moment_check(model, prep, [2, 4, 8])
    per_particle = float(np.vdot(z, model.A @ z).real)
    assert_allclose(report.kinetic_per_particle, per_particle, atol=1e-12)
    assert report.satisfied
    with pytest.raises(ValidationError):
        apriori_moment_check(model, prep, [2], C=0.5)


def test_custom_preparation_needs_a_normalized_vector():
    prep = StatePreparation("custom", 2, vector=np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValidationError):
        prepare(prep, 2)
    with pytest.raises(ValidationError):
        prep.with_N(3)
