import numpy as np
import pytest
from hypothesis import given, strategies as st

from branchjump.branching import decompose_basis, decompose_projectors, reconstruct
from branchjump.evolution import evolve
from branchjump.hilbert import CompositeSpace, random_state, random_unitary, tensor_state
from branchjump.model import ExperienceBasis, ProjectorFamily, projectors_from_basis, random_model


def test_product_state(rabi):
    d = decompose_basis(rabi.initial_state, rabi.basis)
    np.testing.assert_array_equal(d.weights, [1, 0])
    assert d.n_nonzero() == 1


def test_rabi_weights(rabi):
    for t in np.linspace(0, rabi.t_max, 25):
        d = decompose_basis(evolve(rabi, t), rabi.basis, time=t)
        np.testing.assert_allclose(d.weights, [np.cos(t) ** 2, np.sin(t) ** 2], atol=1e-12)


def test_measurement_weights_after_pulse(measurement):
    d = decompose_basis(evolve(measurement, measurement.t_max), measurement.basis)
    np.testing.assert_allclose(d.weights, [0, 0.36, 0.64], atol=1e-12)
    np.testing.assert_array_equal(d.reported_weights()[0], 0.0)


def test_dimension_mismatch(rabi, measurement):
    with pytest.raises(ValueError):
        decompose_basis(measurement.initial_state, rabi.basis)
    fam = projectors_from_basis(rabi.basis)
    with pytest.raises(ValueError):
        decompose_projectors(measurement.initial_state, fam)


def test_projector_standard_basis():
    fam = projectors_from_basis(ExperienceBasis.standard(CompositeSpace(3, 1)))
    np.testing.assert_array_equal(decompose_projectors([1, 0, 0], fam).weights, [1, 0, 0])


def test_single_member_family(rng):
    psi = random_state(5, rng) * 0.8
    d = decompose_projectors(psi, ProjectorFamily((np.eye(5),)))
    assert len(d.weights) == 1
    assert d.weights[0] == pytest.approx(0.64)


def test_random_rank2_family_against_quadratic_form(rng):
    u = random_unitary(8, rng)
    projs = [u[:, 2 * k: 2 * k + 2] @ u[:, 2 * k: 2 * k + 2].conj().T for k in range(4)]
    psi = random_state(8, rng)
    d = decompose_projectors(psi, ProjectorFamily(tuple(projs)))
    quad = [np.vdot(psi, p @ psi).real for p in projs]
    np.testing.assert_allclose(d.weights, quad, atol=1e-12)
    assert d.weights.sum() == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(reconstruct(d, None), psi, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_basis_and_projector_forms_agree(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    psi = random_state(m.dim, rng)
    db = decompose_basis(psi, m.basis)
    dp = decompose_projectors(psi, projectors_from_basis(m.basis))
    np.testing.assert_allclose(db.weights, dp.weights, atol=1e-12)
    for n, phi in enumerate(m.basis.vectors):
        embedded = tensor_state(phi, db.branch_vectors[n], m.space).amplitudes
        assert np.linalg.norm(dp.branch_vectors[n].amplitudes - embedded) <= 1e-12
        assert db.weights[n] == pytest.approx(db.branch_vectors[n].norm_squared(), abs=1e-12)
    assert db.weights.sum() == pytest.approx(np.vdot(psi, psi).real, abs=1e-9)
    np.testing.assert_allclose(reconstruct(db, m.basis), psi, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_global_phase_invariance(seed, theta):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    psi = random_state(m.dim, rng)
    a = decompose_basis(psi, m.basis).weights
    b = decompose_basis(np.exp(1j * theta) * psi, m.basis).weights
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-16)


def test_superposition_of_experience_states_is_not_one():
    space = CompositeSpace(2, 1)
    basis = ExperienceBasis.standard(space)
    psi = np.array([0.6, 0.8])
    assert decompose_basis(psi, basis).n_nonzero() == 2
