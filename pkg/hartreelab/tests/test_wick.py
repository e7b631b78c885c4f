import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hartreelab.exceptions import ValidationError
from hartreelab.fock import (
    FockVector,
    SectorVector,
    TruncationPolicy,
    dgamma_block,
    sector_dimension,
    tensor_power,
    weyl_operator,
)
from hartreelab.models import lattice_delta, lattice_hartree
from hartreelab.tests.oracles import full_wick_matrix
from hartreelab.wick import (
    SymbolPQ,
    SymbolSum,
    adjoint_symbol,
    commutator_monomials,
    eval_symbol,
    evolve_symbol,
    expansion_closed_form,
    interaction_symbol,
    translate_symbol,
    wick_apply,
    wick_form_bound,
    wick_matrix,
    wick_operator,
)


def _random(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _symbol(rng, d, p, q):
    return SymbolPQ(p, q, _random(rng, (sector_dimension(d, q), sector_dimension(d, p))), d)


def _propagator(A, t):
    vals, vecs = np.linalg.eigh(A)
    return (vecs * np.exp(-1j * t * vals)) @ vecs.conj().T


def test_symbol_shapes_are_checked():
    with pytest.raises(ValidationError):
        SymbolPQ(1, 1, np.eye(2), d=3)
    with pytest.raises(ValidationError):
        SymbolPQ(0, 0, np.ones((1, 1)))
    assert SymbolPQ(2, 1, np.ones((3, 6))).d == 3


def test_eval_symbol_examples():
    z = np.array([0.6, 0.8j])
    assert eval_symbol(SymbolPQ(1, 1, np.eye(2)), z) == pytest.approx(1.0)
    assert eval_symbol(SymbolPQ(0, 0, np.array([[2.5]]), d=2), z) == pytest.approx(2.5)
    kerr = SymbolPQ(2, 2, np.array([[3.0]]))
    assert eval_symbol(kerr, np.array([0.5])) == pytest.approx(3.0 * 0.5 ** 4)
    linear = SymbolPQ(1, 0, np.array([[1.0, 2.0]]), d=2)
    assert eval_symbol(linear, z) == pytest.approx(0.6 + 1.6j)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("p,q", [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)])
def test_wick_matrix_matches_full_tensor(d, p, q):
    rng = np.random.default_rng(10 * d + 3 * p + q)
    b = _symbol(rng, d, p, q)
    eps = 0.5
    for n in range(p, 5):
        if d ** max(n, n - p + q) > 1024:
            continue
        assert_allclose(wick_matrix(b, n, eps), full_wick_matrix(b, n, eps), atol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_wick_of_charge_is_scaled_number(n):
    eps = 0.2
    b = SymbolPQ(1, 1, np.eye(3))
    assert_allclose(wick_matrix(b, n, eps), eps * n * np.eye(sector_dimension(3, n)), atol=1e-12)


def test_wick_of_one_body_symbol_is_dgamma():
    rng = np.random.default_rng(0)
    C = _random(rng, (3, 3))
    assert_allclose(wick_matrix(SymbolPQ(1, 1, C), 3, 0.25), dgamma_block(C, 3, 0.25), atol=1e-12)


@pytest.mark.parametrize("N", [2, 3, 8])
def test_kerr_interaction(N):
    g = 1.5
    value = wick_matrix(SymbolPQ(2, 2, np.array([[0.5 * g]])), N, 1.0 / N)
    assert N * value[0, 0] == pytest.approx(g * (N - 1) / 2)


def test_wick_matrix_below_degree_is_zero():
    b = SymbolPQ(2, 1, np.ones((2, 3)))
    out = wick_matrix(b, 1, 0.5)
    assert out.shape == (sector_dimension(2, 0), sector_dimension(2, 1))
    assert not np.any(out)


def test_cutoff_is_enforced():
    with pytest.raises(ValidationError):
        wick_matrix(SymbolPQ(0, 2, np.ones((3, 1)), d=2), 3, 0.5, cutoff=4)


@pytest.mark.parametrize("p,q", [(0, 1), (1, 1), (2, 1), (2, 2)])
def test_adjointness(p, q):
    rng = np.random.default_rng(p + 7 * q)
    b = _symbol(rng, 3, p, q)
    for n in range(p, 5):
        m = n - p + q
        assert_allclose(wick_matrix(adjoint_symbol(b), m, 0.3), wick_matrix(b, n, 0.3).conj().T, atol=1e-12)


def test_wick_operator_blocks_follow_the_sectors():
    rng = np.random.default_rng(5)
    b = _symbol(rng, 2, 1, 2)
    eps = 0.5
    full = wick_operator(b, 4, eps)
    sectors = [np.zeros(sector_dimension(2, n), dtype=complex) for n in range(5)]
    sectors[2] = _random(rng, 3)
    v = FockVector(2, eps, tuple(sectors))
    assert_allclose(full @ v.flat(), wick_apply(b, v).flat(), atol=1e-12)


@pytest.mark.parametrize("p,q", [(1, 1), (2, 1), (2, 2)])
def test_evolution_covariance(p, q):
    rng = np.random.default_rng(11)
    model = lattice_hartree()
    b = _symbol(rng, model.d, p, q)
    t, eps, n = 0.7, 1.0, 3
    m = n - p + q
    U_n = _propagator(dgamma_block(model.A, n, 1.0), t)
    U_m = _propagator(dgamma_block(model.A, m, 1.0), t)
    lhs = U_m.conj().T @ wick_matrix(b, n, eps) @ U_n
    assert_allclose(lhs, wick_matrix(evolve_symbol(b, model.A, t), n, eps), atol=1e-10)


def test_evolve_symbol_pointwise():
    rng = np.random.default_rng(12)
    model = lattice_delta(d=3)
    b = _symbol(rng, 3, 2, 1)
    z = _random(rng, 3)
    t = -0.4
    evolved = evolve_symbol(b, model.A, t)
    assert eval_symbol(evolved, z) == pytest.approx(eval_symbol(b, _propagator(model.A, t) @ z))
    assert evolve_symbol(b, model.A, 0.0) is b


def test_free_energy_is_invariant_under_evolution():
    model = lattice_hartree()
    b = SymbolPQ(1, 1, model.A)
    evolved = evolve_symbol(b, model.A, 1.3)
    assert_allclose(evolved.kernel, b.kernel, atol=1e-12)


@pytest.mark.parametrize("p,q", [(0, 1), (1, 1), (2, 2), (2, 1)])
def test_translate_symbol(p, q):
    rng = np.random.default_rng(20 + p + q)
    b = _symbol(rng, 2, p, q)
    xi, z = _random(rng, 2), _random(rng, 2)
    shifted = translate_symbol(b, xi)
    assert shifted(z) == pytest.approx(eval_symbol(b, z + xi), rel=1e-12)
    assert len(shifted.terms) == (p + 1) * (q + 1)


def test_translate_by_zero_keeps_the_symbol():
    b = SymbolPQ(1, 1, np.eye(2))
    shifted = translate_symbol(b, np.zeros(2))
    assert len(shifted.terms) == 1
    assert_allclose(shifted.terms[0].kernel, b.kernel)


def test_translated_charge_degrees():
    shifted = translate_symbol(SymbolPQ(1, 1, np.eye(2)), np.array([0.1, 0.2j]))
    assert shifted.degrees == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_translation_identity_on_fock_space():
    rng = np.random.default_rng(30)
    d, eps = 2, 0.5
    b = _symbol(rng, d, 1, 1)
    xi = 0.1 * _random(rng, d)
    policy = TruncationPolicy(18, 4)
    W = weyl_operator(-1j * math.sqrt(2.0) * xi / eps, policy, eps)
    sectors = [np.zeros(sector_dimension(d, n), dtype=complex) for n in range(policy.n_max + 1)]
    sectors[1] = _random(rng, 2)
    v = FockVector(d, eps, tuple(sectors))
    left = wick_apply(b, W.apply(v))
    right = W.apply(wick_apply(translate_symbol(b, xi), v))
    for n in range(policy.retained):
        assert_allclose(left.sectors[n], right.sectors[n], atol=1e-10)


def test_interaction_symbol_halves_the_kernel():
    K = np.diag([1.0, 0.0, 1.0])
    assert_allclose(interaction_symbol(K).kernel, 0.5 * K)


def test_commutator_monomials_sum_to_the_shift():
    rng = np.random.default_rng(40)
    model = lattice_hartree()
    xi, z = 0.3 * _random(rng, 3), _random(rng, 3)
    s, eps = 0.4, 0.25
    monomials = commutator_monomials(model.q_kernel, xi, s, model.A)
    q_s = interaction_symbol(model.q_kernel, model.A, s)
    expected = q_s(z + 1j * eps * math.pi * xi) - q_s(z)
    total = sum(eps ** j * q_j(z) for j, q_j in enumerate(monomials, start=1))
    assert total == pytest.approx(expected, rel=1e-10)


def test_commutator_monomial_degrees():
    model = lattice_delta()
    monomials = commutator_monomials(model.q_kernel, np.array([0.2, 0.1j]), 0.0, model.A)
    assert [max(p + q for p, q in m.degrees) for m in monomials] == [3, 2, 1, 0]
    assert monomials[3].degrees == [(0, 0)]


def test_closed_form_expansion():
    rng = np.random.default_rng(41)
    model = lattice_hartree()
    xi, z = 0.4 * _random(rng, 3), _random(rng, 3)
    s = 0.3
    monomials = commutator_monomials(model.q_kernel, xi, s, model.A)
    closed = expansion_closed_form(model.q_kernel, xi, s, model.A, z)
    for value, q_j in zip(closed, monomials):
        assert value == pytest.approx(q_j(z), rel=1e-10, abs=1e-12)


def test_commutator_with_zero_probe_vanishes():
    model = lattice_delta()
    monomials = commutator_monomials(model.q_kernel, np.zeros(2), 0.5, model.A)
    assert all(not m.terms for m in monomials)


def test_commutator_rejects_non_hermitian_kernel():
    with pytest.raises(ValidationError):
        commutator_monomials(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), np.ones(2), 0.0, np.eye(2))


def test_wick_form_bound():
    A = lattice_delta().A
    assert wick_form_bound(SymbolPQ(2, 2, np.zeros((3, 3))), 3, A) == 0.0
    charge = wick_form_bound(SymbolPQ(1, 1, np.eye(2)), 4, A)
    assert 0 < charge <= 1 + 1e-12
    with pytest.raises(ValidationError):
        wick_form_bound(SymbolPQ(1, 1, np.eye(2)), 4, A, m=5)


def test_wick_form_bound_is_uniform_in_n():
    rng = np.random.default_rng(42)
    b = _symbol(rng, 2, 2, 2)
    A = np.diag([0.0, 1.0])
    bounds = [wick_form_bound(b, n, A) for n in range(2, 11)]
    # (A_1 + 1)^{-1/2} is a contraction and the (2,2) prefactor is (n - 1) / n
    assert all(0.0 < value <= 1.0 + 1e-12 for value in bounds)


def test_symbol_sum_evaluates_termwise():
    a = SymbolPQ(1, 1, np.eye(2))
    b = SymbolPQ(0, 0, np.array([[1.0]]), d=2)
    z = np.array([0.3, 0.4])
    total = SymbolSum((a,)) + SymbolSum((b,))
    assert total(z) == pytest.approx(0.25 + 1.0)
    assert_allclose(tensor_power(z, 0), [1.0])
    with pytest.raises(ValidationError):
        SymbolSum((a, SymbolPQ(1, 1, np.eye(3))))


def test_wick_apply_checks_modes():
    v = FockVector.from_sector(SectorVector.basis_vector(2, (1, 0)), 3, 0.5)
    with pytest.raises(ValidationError):
        wick_apply(SymbolPQ(1, 1, np.eye(3)), v)
