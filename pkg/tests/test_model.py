import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimerfit.model import (
    TDI_DIMERS,
    TDI_MONOMER,
    BasisSpec,
    DimerParams,
    MonomerParams,
    build_dimer_hamiltonian,
    build_monomer_hamiltonian,
)

monomers = st.builds(
    MonomerParams,
    epsilon_e=st.floats(15000, 17000),
    omega_vib=st.floats(1000, 2000),
    huang_rhys=st.floats(0, 1.5),
    gamma=st.floats(0, 50),
    sigma_m=st.floats(100, 1000),
)
dimers = st.builds(
    DimerParams,
    coupling_v=st.floats(-1600, 1600),
    delta=st.floats(-300, 300),
    alpha=st.floats(0, 180),
    sigma_d=st.floats(100, 1000),
)


def test_uncoupled_monomer_is_diagonal():
    p = MonomerParams(16000.0, 1400.0, 0.0, 5.0, 200.0)
    h = build_monomer_hamiltonian(p, BasisSpec(6)).entries
    np.testing.assert_array_equal(h, np.diag(16000.0 + 1400.0 * np.arange(7)))


def test_monomer_off_diagonal_element():
    h = build_monomer_hamiltonian(TDI_MONOMER, BasisSpec(1)).entries
    assert h[0, 1].real == pytest.approx(math.sqrt(0.67) * 1450.0, rel=1e-14)
    assert h[0, 1].real == pytest.approx(1186.8, abs=0.1)


def test_monomer_labels_and_quanta():
    h = build_monomer_hamiltonian(TDI_MONOMER, BasisSpec(3))
    assert h.basis_labels == [(1, (k,)) for k in range(4)]
    np.testing.assert_array_equal(h.quanta, np.arange(4))


def test_dimer_without_vibrations_is_two_level():
    pd = DimerParams(300.0, -20.0, 40.0, 250.0)
    h = build_dimer_hamiltonian(TDI_MONOMER, pd, BasisSpec(0)).entries
    e = TDI_MONOMER.epsilon_e - 20.0
    np.testing.assert_allclose(h, [[e, 300.0], [300.0, e]])


def test_dimer0_two_level_eigenvalues():
    h = build_dimer_hamiltonian(TDI_MONOMER, TDI_DIMERS[0], BasisSpec(0)).entries
    w = np.linalg.eigvalsh(h)
    np.testing.assert_allclose(w, [16092.0 - 755.0, 16092.0 + 755.0], rtol=1e-14)


def test_dimer_index_convention():
    b = BasisSpec(2)
    h = build_dimer_hamiltonian(TDI_MONOMER, TDI_DIMERS[1], b)
    n = b.n_levels
    for idx, (site, (k1, k2)) in enumerate(h.basis_labels):
        assert idx == (site - 1) * n * n + k1 * n + k2
        assert h.quanta[idx] == k1 + k2


def test_uncoupled_dimer_blocks():
    b = BasisSpec(3)
    pd = DimerParams(0.0, 0.0, 10.0, 200.0)
    h = build_dimer_hamiltonian(TDI_MONOMER, pd, b).entries
    n2 = b.n_levels**2
    np.testing.assert_array_equal(h[:n2, n2:], 0)
    hm = build_monomer_hamiltonian(TDI_MONOMER, b).entries
    spectator = TDI_MONOMER.omega_vib * np.diag(np.arange(b.n_levels))
    eye = np.eye(b.n_levels)
    np.testing.assert_allclose(h[:n2, :n2], np.kron(hm, eye) + np.kron(eye, spectator))
    np.testing.assert_allclose(h[n2:, n2:], np.kron(eye, hm) + np.kron(spectator, eye))


@pytest.mark.parametrize("n_max", [0, 1, 2, 3])
def test_uncoupled_dimer_eigenvalues_are_monomer_plus_spectator(n_max):
    b = BasisSpec(n_max)
    h = build_dimer_hamiltonian(TDI_MONOMER, DimerParams(0.0, 0.0, 0.0, 200.0), b).entries
    wm = np.linalg.eigvalsh(build_monomer_hamiltonian(TDI_MONOMER, b).entries)
    spectator = TDI_MONOMER.omega_vib * np.arange(b.n_levels)
    expected = np.sort(np.tile(np.add.outer(wm, spectator).ravel(), 2))
    np.testing.assert_allclose(np.linalg.eigvalsh(h), expected, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(monomers, st.integers(0, 8))
def test_monomer_hermitian(p, n_max):
    h = build_monomer_hamiltonian(p, BasisSpec(n_max))
    assert h.hermiticity_error() < 1e-12 * np.abs(h.entries).max()


@settings(max_examples=30, deadline=None)
@given(monomers, dimers, st.integers(0, 4))
def test_dimer_hermitian_and_site_symmetric(pm, pd, n_max):
    b = BasisSpec(n_max)
    h = build_dimer_hamiltonian(pm, pd, b)
    assert h.hermiticity_error() < 1e-12 * np.abs(h.entries).max()
    # swap site 1 <-> 2 together with mode 1 <-> mode 2
    n = b.n_levels
    perm = [(2 - site) * n * n + k2 * n + k1 for site, (k1, k2) in h.basis_labels]
    swapped = h.entries[np.ix_(perm, perm)]
    np.testing.assert_array_equal(swapped, h.entries)


def test_damping_is_diagonal_in_quanta():
    h = build_dimer_hamiltonian(TDI_MONOMER, TDI_DIMERS[0], BasisSpec(2))
    d = h.with_damping(10.0)
    np.testing.assert_allclose(d.entries - h.entries, -10j * np.diag(h.quanta))
    with pytest.raises(ValueError):
        h.with_damping(-1.0)


def test_dimension_cap():
    with pytest.raises(ValueError, match="dimension"):
        build_dimer_hamiltonian(TDI_MONOMER, TDI_DIMERS[0], BasisSpec(60))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(epsilon_e=-1.0),
        dict(omega_vib=0.0),
        dict(huang_rhys=-0.1),
        dict(gamma=-1.0),
        dict(sigma_m=0.0),
        dict(epsilon_e=float("nan")),
    ],
)
def test_monomer_validation(kwargs):
    base = TDI_MONOMER.as_dict()
    with pytest.raises(ValueError):
        MonomerParams(**{**base, **kwargs})


def test_dimer_validation():
    with pytest.raises(ValueError):
        DimerParams(100.0, 0.0, 190.0, 200.0)
    with pytest.raises(ValueError):
        DimerParams(100.0, 0.0, 20.0, -5.0)
    with pytest.raises(ValueError):
        BasisSpec(-1)


def test_reorganization_energy():
    assert TDI_MONOMER.reorganization_energy == pytest.approx(0.67 * 1450.0)
