"""Independent reference implementations used by the spectra and acceptance tests."""

import math

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import expm_multiply

from dimerfit.model import build_dimer_hamiltonian


def analytic_monomer(p, t, zero_phonon_origin=True):
    """Vacuum amplitude of a displaced mode with complex frequency w - i*gamma."""
    w = p.omega_vib - 1j * p.gamma
    g2 = p.huang_rhys * p.omega_vib**2
    e = p.epsilon_e if zero_phonon_origin else p.epsilon_e - p.reorganization_energy
    lit = np.exp(g2 / w**2 * (np.exp(-1j * w * t) - 1 + 1j * w * t))
    return np.exp(-1j * (e + p.reorganization_energy) * t) * lit


def ladder(n):
    return np.diag(np.sqrt(np.arange(1, n)), 1)


def lindblad_coherences(h_exc, h_gnd, jumps, ket_states, bra_state, times):
    """Dense density-matrix propagation of the excited/ground coherence block.

    d X / dt = -i (H_e X - X H_g) + sum_j (L_j X L_j^dag - {L_j^dag L_j, X}/2)
    with L_j acting as (exc_j, gnd_j) on the two sides.
    """
    ne, ng = h_exc.shape[0], h_gnd.shape[0]
    ie, ig = np.eye(ne), np.eye(ng)
    # column-major vec: vec(A X B) = kron(B.T, A) vec(X)
    gen = -1j * (np.kron(ig, h_exc) - np.kron(h_gnd.T, ie))
    for le, lg in jumps:
        gen += np.kron(lg.conj(), le)
        gen -= 0.5 * np.kron(ig, le.conj().T @ le)
        gen -= 0.5 * np.kron((lg.conj().T @ lg).T, ie)
    out = np.empty((len(times), len(ket_states), len(ket_states)), dtype=complex)
    for a, ket in enumerate(ket_states):
        x0 = np.outer(ket, bra_state.conj())
        for j, t in enumerate(times):
            x = (linalg.expm(gen * t) @ x0.reshape(-1, order="F")).reshape(ne, ng, order="F")
            for b_, bra in enumerate(ket_states):
                out[j, b_, a] = bra.conj() @ x @ bra_state
    return out


def direct_double_sum(pm, pd, b, g, zero_phonon_origin=True):
    """C11 + C22 + cos(alpha) (C12 + C21) by Krylov propagation of both site states."""
    h = build_dimer_hamiltonian(pm, pd, b).with_damping(pm.gamma).entries
    shift = pm.epsilon_e + pd.delta
    off = pm.reorganization_energy if zero_phonon_origin else 0.0
    h = h + (off - shift) * np.eye(h.shape[0])
    kets = np.zeros((h.shape[0], 2), dtype=complex)
    kets[0, 0] = 1.0
    kets[b.n_levels**2, 1] = 1.0
    psi = expm_multiply(-1j * h, kets, start=0.0, stop=g.t_max, num=g.n_steps, endpoint=True)
    c = np.einsum("in,tim->tnm", kets.conj(), psi)
    cos = math.cos(math.radians(pd.alpha))
    env = c[:, 0, 0] + c[:, 1, 1] + cos * (c[:, 0, 1] + c[:, 1, 0])
    return env * np.exp(-1j * shift * g.t)


def monomer_lindblad(p, times, n_max=3):
    """Coherence <0|X(t)|0> of a damped displaced mode, literal energy origin."""
    n = n_max + 1
    a = ladder(n)
    num = a.T @ a
    h_exc = p.epsilon_e * np.eye(n) + p.omega_vib * num + math.sqrt(p.huang_rhys) * p.omega_vib * (a + a.T)
    h_gnd = p.omega_vib * num
    jump = math.sqrt(2 * p.gamma) * a
    vac = np.eye(n)[0]
    return lindblad_coherences(h_exc, h_gnd, [(jump, jump)], [vac], vac, times)[:, 0, 0]


def dimer_lindblad(pm, pd, b, times):
    """Site-resolved coherences C_nm(t) of the damped dimer, literal energy origin."""
    n = b.n_levels
    a = ladder(n)
    eye = np.eye(n)
    a1, a2 = np.kron(a, eye), np.kron(eye, a)
    h_exc = build_dimer_hamiltonian(pm, pd, b).entries
    h_gnd = pm.omega_vib * (a1.T @ a1 + a2.T @ a2)
    site = np.eye(2)
    jumps = [(math.sqrt(2 * pm.gamma) * np.kron(site, aj), math.sqrt(2 * pm.gamma) * aj) for aj in (a1, a2)]
    vac = np.eye(n * n)[0]
    kets = [np.kron(site[s], vac) for s in range(2)]
    return lindblad_coherences(h_exc, h_gnd, jumps, kets, vac, times)
