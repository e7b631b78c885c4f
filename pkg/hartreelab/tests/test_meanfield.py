import cmath

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hartreelab.exceptions import DriftError, ValidationError
from hartreelab.meanfield import (
    ClassicalState,
    FlowConfig,
    HartreeVectorField,
    charge,
    classical_energy,
    continuity_probe,
    free_propagator,
    gradient_interaction,
    hartree_rhs,
    integrate_flow,
    integrate_flow_batch,
    interaction_flow,
    lipschitz_probe,
    sample_ball,
)
from hartreelab.models import ModelSpec, kerr1, lattice_delta, lattice_hartree


def test_kerr_gradient_and_energy():
    g = 0.7
    z = np.array([0.3 + 0.4j])
    assert_allclose(gradient_interaction(np.array([[g]]), z), g * abs(z[0]) ** 2 * z)
    model = kerr1(omega=2.0, g=g)
    assert classical_energy(model, z) == pytest.approx(2.0 * 0.25 + 0.5 * g * 0.25 ** 2)
    assert_allclose(hartree_rhs(model, z), -1j * (2.0 + g * 0.25) * z)


def test_contact_gradient_is_cubic():
    model = lattice_delta(d=3, kappa=1.5)
    z = np.array([0.5, 0.2j, -0.3])
    assert_allclose(gradient_interaction(model.q_kernel, z), 1.5 * np.abs(z) ** 2 * z, atol=1e-14)


def test_hartree_gradient_is_a_convolution():
    model = lattice_hartree(d=3)
    W = model.pair_potential()
    z = np.array([0.5, 0.2j, -0.3 + 0.1j])
    assert_allclose(gradient_interaction(model.q_kernel, z), (W @ np.abs(z) ** 2) * z, atol=1e-14)


def _hermitian_kernel(rng, d):
    size = d * (d + 1) // 2
    M = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    return 0.5 * (M + M.conj().T)


def test_gradient_of_a_generic_kernel_is_the_energy_derivative():
    rng = np.random.default_rng(7)
    K = _hermitian_kernel(rng, 3)
    model = ModelSpec(3, np.zeros((3, 3)), K)
    z = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    h = 1e-6
    slope = (classical_energy(model, z + h * w) - classical_energy(model, z - h * w)) / (2 * h)
    assert slope == pytest.approx(2 * np.vdot(gradient_interaction(K, z), w).real, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("t", [0.5, 1.0, -0.7])
def test_kerr_flow_closed_form(t):
    omega, g = 1.0, 1.0
    z0 = np.array([0.6 + 0.0j])
    state = integrate_flow(kerr1(omega, g), z0, t)
    expected = z0 * cmath.exp(-1j * (omega + g * 0.36) * t)
    assert_allclose(state.z, expected, atol=1e-9)
    assert state.t == t


def test_free_flow_is_the_propagator():
    model = lattice_delta(kappa=0.0)
    z0 = np.array([0.6, 0.8j])
    state = integrate_flow(model, z0, 1.3)
    assert_allclose(state.z, free_propagator(model, 1.3) @ z0, atol=1e-9)


@pytest.mark.parametrize("model", [lattice_delta(), lattice_hartree()], ids=lambda m: m.label)
def test_charge_and_energy_are_conserved(model):
    z0 = np.linspace(0.2, 0.5, model.d) * np.exp(1j * np.arange(model.d))
    z1 = integrate_flow(model, z0, 2.0).z
    assert charge(z1) == pytest.approx(charge(z0), abs=1e-9)
    assert classical_energy(model, z1) == pytest.approx(classical_energy(model, z0), abs=1e-9)


def test_interaction_flow_conjugates_the_flow():
    model = lattice_hartree()
    z0 = np.array([0.5, 0.3j, -0.4])
    t = 0.8
    moved = interaction_flow(model, z0, t).z
    direct = integrate_flow(model, z0, t).z
    assert_allclose(moved, free_propagator(model, -t) @ direct, atol=1e-9)


def _generic_model():
    rng = np.random.default_rng(3)
    return lattice_hartree().with_kernel(0.3 * _hermitian_kernel(rng, 3))


def test_flow_composes():
    model = _generic_model()
    z0 = np.array([0.4, 0.3j, -0.2 + 0.1j])
    halfway = integrate_flow(model, z0, 0.25).z
    assert_allclose(integrate_flow(model, halfway, 0.35).z, integrate_flow(model, z0, 0.6).z, atol=1e-8)


def test_interaction_flow_composes_across_start_times():
    model = _generic_model()
    z0 = np.array([0.4, 0.3j, -0.2 + 0.1j])
    halfway = interaction_flow(model, z0, 0.25).z
    joined = interaction_flow(model, halfway, 0.6, t0=0.25)
    assert joined.t == 0.6
    assert_allclose(joined.z, interaction_flow(model, z0, 0.6).z, atol=1e-8)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_kerr_interaction_flow_closed_form(t):
    g = 1.0
    z0 = np.array([0.8 + 0.0j])
    state = interaction_flow(kerr1(omega=1.0, g=g), z0, t)
    assert_allclose(state.z, cmath.exp(-1j * g * 0.64 * t) * z0, atol=1e-9)


def test_batches_match_single_atoms():
    model = lattice_delta()
    rng = np.random.default_rng(0)
    Z0 = sample_ball(rng, 5, 2, 0.9)
    batch = integrate_flow_batch(model, Z0, 0.6)
    for z0, z1 in zip(Z0, batch):
        assert_allclose(integrate_flow(model, z0, 0.6).z, z1, atol=1e-12)


def test_splitstep_agrees_with_rk4():
    model = lattice_delta()
    z0 = np.array([0.6, 0.8j])
    loose = FlowConfig("splitstep", 1e-3, 1e-4)
    assert_allclose(integrate_flow(model, z0, 1.0, loose).z, integrate_flow(model, z0, 1.0).z, atol=1e-4)


def test_splitstep_needs_a_pair_potential():
    model = lattice_hartree().with_kernel(np.ones((6, 6)))
    with pytest.raises(ValidationError):
        integrate_flow(model, np.array([0.5, 0.0, 0.0]), 1.0, FlowConfig("splitstep"))


def test_initial_data_outside_the_ball_is_rejected():
    with pytest.raises(ValidationError):
        integrate_flow(lattice_delta(), np.array([1.0, 0.5]), 1.0)


def test_drift_is_reported():
    config = FlowConfig(step=0.5, conservation_tol=1e-15, max_halvings=0)
    with pytest.raises(DriftError) as info:
        integrate_flow(lattice_delta(), np.array([0.6, -0.6]), 2.0, config)
    assert info.value.report["atom"] == 0
    assert info.value.exit_code == 3


def test_flow_config_validation():
    with pytest.raises(ValidationError):
        FlowConfig(integrator="euler")
    with pytest.raises(ValidationError):
        FlowConfig(step=0.0)
    assert FlowConfig(step=0.2).halved().step == pytest.approx(0.1)


def test_sample_ball_stays_inside():
    points = sample_ball(np.random.default_rng(1), 200, 3, 0.5)
    assert points.shape == (200, 3)
    assert np.all(np.linalg.norm(points, axis=1) <= 0.5 + 1e-15)


def test_vector_field_energy_matches_classical_energy():
    model = lattice_hartree()
    Z = sample_ball(np.random.default_rng(2), 4, 3, 1.0)
    field = HartreeVectorField(model)
    assert_allclose(field.energy(Z), [classical_energy(model, z) for z in Z], atol=1e-14)


def test_lipschitz_probe_is_finite():
    value = lipschitz_probe(lattice_hartree(), 1.0, samples=200)
    assert 0 < value < np.inf
    assert lipschitz_probe(lattice_delta(kappa=0.0), 1.0, samples=50) == 0.0


@pytest.mark.parametrize("seed", [0, 1])
def test_kerr_lipschitz_estimate_settles(seed):
    model = kerr1()
    coarse = lipschitz_probe(model, 1.0, samples=1_000, seed=seed)
    fine = lipschitz_probe(model, 1.0, samples=10_000, seed=seed)
    assert fine == pytest.approx(coarse, rel=0.1)


def test_lipschitz_estimate_is_linear_in_the_coupling():
    single = lipschitz_probe(kerr1(g=1.0), 1.0)
    double = lipschitz_probe(kerr1(g=2.0), 1.0)
    assert double == pytest.approx(2.0 * single, rel=1e-9)


def test_continuity_probe_is_stable():
    report = continuity_probe(lattice_delta(), np.array([0.5, 0.3j]), 0.5)
    assert report.constant > 0
    assert report.stable


def test_continuity_constant_is_measured_at_the_given_point():
    with pytest.raises(ValidationError):
        continuity_probe(lattice_delta(), np.array([0.6, 0.8j]), 0.5)
    with pytest.raises(ValidationError):
        continuity_probe(lattice_delta(), np.array([0.6, 0.8j]) * (1 - 1e-5), 0.5, delta=1e-4)
    inside = continuity_probe(lattice_delta(), np.array([0.6, 0.8j]) * (1 - 1e-3), 0.5, delta=1e-4)
    assert inside.stable


def test_classical_state_norms():
    model = lattice_delta()
    state = ClassicalState([0.6, 0.8j])
    assert state.d == 2
    assert state.norm() == pytest.approx(1.0)
    # <z, A z> = |0.6 - 0.8i|^2 = 1 for the two-site ring
    assert state.energy_norm(model.A) == pytest.approx(2 ** 0.5)
    with pytest.raises(ValueError):
        state.z[0] = 0
