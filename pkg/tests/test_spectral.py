import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from modal_transfer.errors import DegenerateDampingError, InvalidSpecError, ShapeError
from modal_transfer.spectral import (ModalModel, StructureSpec, SystemMatrices, assemble_matrices,
                                     damped_frequencies, frf_magnitude, modal_damping_ratios,
                                     modal_mass, modal_stiffness, undamped_modes)


def chain(masses, springs, ground=None, damping=None):
    return StructureSpec(np.asarray(masses, float), np.asarray(springs, float), ground or {},
                         None if damping is None else np.asarray(damping, float))


positive = st.floats(0.1, 10.0)


@st.composite
def random_specs(draw, max_dof=6):
    n = draw(st.integers(1, max_dof))
    m = draw(st.lists(positive, min_size=n, max_size=n))
    k = draw(st.lists(positive, min_size=n + 1, max_size=n + 1))
    ground = draw(st.dictionaries(st.integers(0, n - 1), positive, max_size=2))
    return chain(m, k, ground)


# ---------------------------------------------------------------- assembly

def test_two_dof_equal_springs_matches_textbook_stiffness():
    mats = assemble_matrices(chain([1, 1], [3, 3, 3]))
    np.testing.assert_array_equal(mats.stiffness, [[6, -3], [-3, 6]])
    np.testing.assert_array_equal(mats.mass, np.eye(2))


def test_single_dof_single_connection():
    mats = assemble_matrices(chain([1], [1, 0]))
    np.testing.assert_array_equal(mats.stiffness, [[1.0]])
    np.testing.assert_array_equal(mats.mass, [[1.0]])


def test_ground_spring_adds_to_diagonal_only():
    base = assemble_matrices(chain([1, 1, 1], [1, 2, 3, 4])).stiffness
    grounded = assemble_matrices(chain([1, 1, 1], [1, 2, 3, 4], {1: 0.5})).stiffness
    diff = grounded - base
    expected = np.zeros((3, 3))
    expected[1, 1] = 0.5
    np.testing.assert_array_equal(diff, expected)


def test_damping_uses_spring_topology():
    mats = assemble_matrices(chain([1, 1], [1, 1, 1], damping=[0.1, 0.2, 0.3]))
    np.testing.assert_allclose(mats.damping, [[0.3, -0.2], [-0.2, 0.5]])


@pytest.mark.parametrize("masses,springs", [([0.0, 1.0], [1, 1, 1]), ([1, 1], [1, -1, 1]),
                                            ([1, 1], [1, 0, 1])])
def test_invalid_specs_rejected(masses, springs):
    with pytest.raises(InvalidSpecError):
        assemble_matrices(chain(masses, springs))


def test_unattached_structure_rejected():
    with pytest.raises(InvalidSpecError, match="ground"):
        assemble_matrices(chain([1, 1], [0, 1, 0]))


def test_system_matrices_validation():
    with pytest.raises(InvalidSpecError):
        SystemMatrices(np.array([[1.0, 0.1], [0.1, 1.0]]), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(InvalidSpecError):
        SystemMatrices(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        SystemMatrices(np.eye(2), np.eye(3), np.zeros((2, 2)))


# ---------------------------------------------------------------- undamped modes

def test_two_dof_unit_chain_eigenpairs():
    modal = undamped_modes(assemble_matrices(chain([1, 1], [1, 1, 1])))
    np.testing.assert_allclose(modal.frequencies ** 2, [1.0, 3.0], rtol=1e-12)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(modal.shapes, [[s, s], [s, -s]], atol=1e-12)
    assert modal.mass_normalized


def test_single_dof_frequency():
    modal = undamped_modes(assemble_matrices(chain([4], [16, 0])))
    assert modal.frequencies[0] == pytest.approx(2.0, rel=1e-14)


@given(random_specs())
def test_rayleigh_quotient_equals_squared_frequency(spec):
    mats = assemble_matrices(spec)
    modal = undamped_modes(mats)
    ratio = modal_stiffness(modal, mats.stiffness) / modal_mass(modal, mats.mass)
    np.testing.assert_allclose(ratio, modal.frequencies ** 2, rtol=1e-9)


@given(random_specs())
def test_eigen_residual_and_mass_orthonormality(spec):
    mats = assemble_matrices(spec)
    modal = undamped_modes(mats)
    K, M, V, w2 = mats.stiffness, mats.mass, modal.shapes, modal.frequencies ** 2
    KV = K @ V
    resid = np.abs(KV - M @ V * w2).max(axis=0) / np.abs(KV).max(axis=0)
    assert np.all(resid < 1e-8)
    np.testing.assert_allclose(V.T @ M @ V, np.eye(spec.dof), atol=1e-8)
    assert np.all(np.diff(modal.frequencies) >= 0)


@given(random_specs())
def test_first_nonzero_component_positive(spec):
    V = undamped_modes(assemble_matrices(spec)).shapes
    for col in V.T:
        first = col[np.abs(col) > 1e-12 * np.abs(col).max()][0]
        assert first > 0


# ---------------------------------------------------------------- damped frequencies

def test_zero_damping_matches_undamped():
    mats = assemble_matrices(chain([1, 2, 1.5], [2, 1, 3, 1], {1: 0.7}))
    np.testing.assert_allclose(damped_frequencies(mats), undamped_modes(mats).frequencies, rtol=1e-10)


def test_single_dof_damped_frequency():
    mats = assemble_matrices(chain([1], [1, 0], damping=[0.2, 0]))
    assert damped_frequencies(mats)[0] == pytest.approx(np.sqrt(1 - 0.01), rel=1e-12)


def test_state_space_oracle_two_dof():
    mats = assemble_matrices(chain([1.3, 0.8], [2.0, 1.1, 1.7], damping=[0.05, 0.02, 0.03]))
    M, K, C = mats.mass, mats.stiffness, mats.damping
    # independent oracle: quadratic eigenproblem via the generalized companion pencil
    A = np.block([[np.zeros((2, 2)), np.eye(2)], [-K, -C]])
    B = np.block([[np.eye(2), np.zeros((2, 2))], [np.zeros((2, 2)), M]])
    lam = scipy.linalg.eigvals(A, B)
    expected = np.sort(lam.imag[lam.imag > 0])
    got = damped_frequencies(mats)
    assert got.shape == (2,) and np.all(got > 0)
    np.testing.assert_allclose(got, expected, rtol=1e-10)


def test_overdamped_mode_raises():
    mats = assemble_matrices(chain([1], [1, 0], damping=[3.0, 0]))
    with pytest.raises(DegenerateDampingError, match="1 mode"):
        damped_frequencies(mats)


@given(random_specs(max_dof=5), st.floats(1e-4, 1e-2))
def test_proportional_damping_matches_textbook_formula(spec, beta):
    # C = beta K decouples the modes, so w_d = w sqrt(1 - zeta^2) with zeta = beta w / 2
    spec_d = StructureSpec(spec.masses, spec.spring_k, spec.ground_k, beta * spec.spring_k,
                           {i: beta * v for i, v in spec.ground_k.items()})
    w = undamped_modes(assemble_matrices(spec)).frequencies
    zeta = beta * w / 2
    wd = damped_frequencies(assemble_matrices(spec_d))
    np.testing.assert_allclose(wd, w * np.sqrt(1 - zeta ** 2), rtol=1e-9)


def test_modal_damping_ratio_single_dof():
    mats = assemble_matrices(chain([1], [4, 0], damping=[0.4, 0]))
    modal = undamped_modes(mats)
    # zeta = c / (2 sqrt(k m))
    assert modal_damping_ratios(modal, mats)[0] == pytest.approx(0.1, rel=1e-12)


# ---------------------------------------------------------------- FRF

@pytest.fixture(scope="module")
def damped_three_dof():
    mats = assemble_matrices(chain([1, 1.2, 0.9], [2, 1.5, 1.8, 2.2], damping=[0.002] * 4))
    return mats, undamped_modes(mats)


def test_frf_peaks_at_each_natural_frequency(damped_three_dof):
    mats, modal = damped_three_dof
    for w in modal.frequencies:
        f0 = w / (2 * np.pi)
        f = f0 * np.array([0.999, 1.0, 1.001])
        h = frf_magnitude(modal, mats, 0, 2, f)
        assert h[1] > h[0] and h[1] > h[2]


def test_frf_static_limit(damped_three_dof):
    mats, modal = damped_three_dof
    h0 = frf_magnitude(modal, mats, 0, 1, [1e-9])[0]
    static = abs(np.sum(modal.shapes[0] * modal.shapes[1] / modal.frequencies ** 2))
    assert h0 == pytest.approx(static, rel=1e-10)
    # the modal sum reproduces the static flexibility matrix
    assert static == pytest.approx(abs(np.linalg.inv(mats.stiffness)[0, 1]), rel=1e-10)


def test_frf_reciprocity(damped_three_dof):
    mats, modal = damped_three_dof
    f = np.linspace(0.05, 0.5, 50)
    np.testing.assert_array_equal(frf_magnitude(modal, mats, 0, 2, f), frf_magnitude(modal, mats, 2, 0, f))


def test_frf_rejects_bad_index(damped_three_dof):
    mats, modal = damped_three_dof
    with pytest.raises(ShapeError):
        frf_magnitude(modal, mats, 0, 3, [1.0])


# ---------------------------------------------------------------- scaling identities

@given(random_specs(), st.floats(0.2, 50.0), st.floats(0.2, 50.0))
def test_global_scaling_preserves_scaled_modal_quantities(spec, alpha, beta):
    src = assemble_matrices(spec)
    tgt = assemble_matrices(StructureSpec(spec.masses * beta, spec.spring_k * alpha,
                                          {i: v * alpha for i, v in spec.ground_k.items()}))
    ms, mt = undamped_modes(src), undamped_modes(tgt)
    # mode shapes are unit-normalised so the comparison does not depend on mass normalisation
    us = ms.shapes / np.linalg.norm(ms.shapes, axis=0)
    ut = mt.shapes / np.linalg.norm(mt.shapes, axis=0)
    ks = spec.spring_k.max()
    kt = ks * alpha
    m_s, m_t = spec.masses[0], spec.masses[0] * beta
    np.testing.assert_allclose(np.einsum("ij,ik,kj->j", us, src.stiffness, us) / ks,
                               np.einsum("ij,ik,kj->j", ut, tgt.stiffness, ut) / kt, rtol=1e-8)
    np.testing.assert_allclose(np.einsum("ij,ik,kj->j", us, src.mass, us) / m_s,
                               np.einsum("ij,ik,kj->j", ut, tgt.mass, ut) / m_t, rtol=1e-8)


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(-0.9, 5.0))
def test_two_dof_in_phase_mode_ignores_coupling_spring(k1, k2, m, dk):
    # symmetric chain: the in-phase mode has psi_1 = psi_2, so the coupling spring carries no strain
    def first_mode_stiffness(kc):
        mats = assemble_matrices(chain([m, m], [k1, kc, k1]))
        modal = undamped_modes(mats)
        psi = modal.shapes[:, 0]
        assert psi[0] == pytest.approx(psi[1], rel=1e-10)
        return modal_stiffness(modal, mats.stiffness)[0], modal.frequencies[0]
    a, wa = first_mode_stiffness(k2)
    b, wb = first_mode_stiffness(k2 * (1 + dk))
    assert a == pytest.approx(b, rel=1e-10)
    assert wa == pytest.approx(np.sqrt(k1 / m), rel=1e-10)


# ---------------------------------------------------------------- ModalModel

def test_modal_model_json_round_trip():
    modal = undamped_modes(assemble_matrices(chain([1, 2, 3], [1, 1, 1, 1])))
    text = modal.to_json()
    obj = json.loads(text)
    assert len(obj["shapes"]) == modal.n_modes and len(obj["shapes"][0]) == modal.n_sensors
    back = ModalModel.from_json(text)
    np.testing.assert_array_equal(back.frequencies, modal.frequencies)
    np.testing.assert_array_equal(back.shapes, modal.shapes)
    assert back.mass_normalized


def test_modal_model_validation():
    with pytest.raises(TypeError):
        ModalModel([1.0], np.array([[1j]]))
    with pytest.raises(InvalidSpecError):
        ModalModel([2.0, 1.0], np.eye(2))
    with pytest.raises(InvalidSpecError):
        ModalModel([1.0, 2.0], np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ShapeError):
        ModalModel([1.0], np.eye(2))
