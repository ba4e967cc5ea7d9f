"""Truncated-basis excited-state Hamiltonians for the vibronic monomer and dimer.

Energies are wavenumbers (cm^-1) and the electronic ground state sits at zero.
Each monomer carries one harmonic mode truncated at ``n_max`` quanta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# dimensions above this are refused; the default basis gives 338
MAX_DIMENSION = 5000


def _check_finite(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not math.isfinite(value):
            raise ValueError(f"{type(obj).__name__}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class MonomerParams:
    """Electronic energy, mode frequency, Huang-Rhys factor, damping and broadening."""

    epsilon_e: float
    omega_vib: float
    huang_rhys: float
    gamma: float
    sigma_m: float

    NAMES = ("epsilon_e", "omega_vib", "huang_rhys", "gamma", "sigma_m")

    def __post_init__(self):
        _check_finite(self, self.NAMES)
        if self.epsilon_e <= 0:
            raise ValueError("epsilon_e must be positive")
        if self.omega_vib <= 0:
            raise ValueError("omega_vib must be positive")
        if self.huang_rhys < 0:
            raise ValueError("huang_rhys must be nonnegative")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.sigma_m <= 0:
            raise ValueError("sigma_m must be positive")

    def as_dict(self):
        return {name: float(getattr(self, name)) for name in self.NAMES}

    @property
    def reorganization_energy(self):
        return self.huang_rhys * self.omega_vib


@dataclass(frozen=True)
class DimerParams:
    """Coupling V, dimerization shift delta, dipole angle alpha (degrees), broadening."""

    coupling_v: float
    delta: float
    alpha: float
    sigma_d: float

    NAMES = ("coupling_v", "delta", "alpha", "sigma_d")

    def __post_init__(self):
        _check_finite(self, self.NAMES)
        if not 0.0 <= self.alpha <= 180.0:
            raise ValueError(f"alpha must lie in [0, 180] degrees, got {self.alpha}")
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")

    def as_dict(self):
        return {name: float(getattr(self, name)) for name in self.NAMES}


@dataclass(frozen=True)
class BasisSpec:
    n_max: int = 12

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a nonnegative integer, got {self.n_max!r}")

    @property
    def n_levels(self):
        return self.n_max + 1

    @property
    def monomer_dim(self):
        return self.n_levels

    @property
    def dimer_dim(self):
        return 2 * self.n_levels**2


@dataclass
class HamiltonianMatrix:
    """Dense excited-state matrix with a label per row.

    ``quanta`` holds the total number of vibrational quanta of each basis
    state, which is what the mode damping acts on.
    """

    entries: np.ndarray
    basis_labels: list
    quanta: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.entries.shape[0]

    def with_damping(self, gamma):
        """Return H - i*gamma*(total vibrational quanta)."""
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        damped = self.entries.astype(complex) - 1j * gamma * np.diag(self.quanta.astype(float))
        return HamiltonianMatrix(damped, list(self.basis_labels), self.quanta.copy())

    def hermiticity_error(self):
        h = self.entries
        return float(np.max(np.abs(h - h.conj().T)))


def _ladder(n_levels):
    """Annihilation operator and number operator on a truncated ladder."""
    a = np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), k=1)
    n = np.diag(np.arange(n_levels, dtype=float))
    return a, n


def build_monomer_hamiltonian(p: MonomerParams, b: BasisSpec = BasisSpec()) -> HamiltonianMatrix:
    """Excited-manifold matrix over |e>|k>, k = 0..n_max.

    Diagonal ``epsilon_e + k*omega_vib``; the displacement term couples
    neighbouring levels with ``sqrt(S)*omega_vib*sqrt(k+1)``.
    """
    nl = b.n_levels
    a, n = _ladder(nl)
    g = math.sqrt(p.huang_rhys) * p.omega_vib
    h = p.epsilon_e * np.eye(nl) + p.omega_vib * n + g * (a + a.T)
    labels = [(1, (k,)) for k in range(nl)]
    return HamiltonianMatrix(h.astype(complex), labels, np.arange(nl))


def build_dimer_hamiltonian(
    pm: MonomerParams,
    pd: DimerParams,
    b: BasisSpec = BasisSpec(),
    max_dim: int = MAX_DIMENSION,
) -> HamiltonianMatrix:
    """Single-exciton dimer matrix over {|1>,|2>} x |k1> x |k2>.

    Row index is ``(n-1)*N**2 + k1*N + k2`` with ``N = n_max+1``. Each site's
    displacement acts only on its own mode.
    """
    if b.dimer_dim > max_dim:
        raise ValueError(
            f"dimer basis with n_max={b.n_max} has dimension {b.dimer_dim} > cap {max_dim}"
        )
    nl = b.n_levels
    a, n = _ladder(nl)
    eye = np.eye(nl)
    x = a + a.T
    g = math.sqrt(pm.huang_rhys) * pm.omega_vib

    h_el = np.array([[pm.epsilon_e + pd.delta, pd.coupling_v],
                     [pd.coupling_v, pm.epsilon_e + pd.delta]])
    p1 = np.diag([1.0, 0.0])
    p2 = np.diag([0.0, 1.0])
    n_vib = np.kron(n, eye) + np.kron(eye, n)

    h = (np.kron(h_el, np.eye(nl * nl))
         + pm.omega_vib * np.kron(np.eye(2), n_vib)
         + g * np.kron(p1, np.kron(x, eye))
         + g * np.kron(p2, np.kron(eye, x)))

    labels = [(site, (k1, k2)) for site in (1, 2) for k1 in range(nl) for k2 in range(nl)]
    quanta = np.array([k1 + k2 for _, (k1, k2) in labels])
    return HamiltonianMatrix(h.astype(complex), labels, quanta)


# Best-fit values reported for the TDI monomer and its three dimers.
TDI_MONOMER = MonomerParams(epsilon_e=16120.0, omega_vib=1450.0, huang_rhys=0.67,
                            gamma=37.0, sigma_m=223.0)

TDI_DIMERS = {
    0: DimerParams(coupling_v=755.0, delta=-28.0, alpha=28.0, sigma_d=286.0),
    1: DimerParams(coupling_v=507.0, delta=-29.0, alpha=40.0, sigma_d=316.0),
    2: DimerParams(coupling_v=111.0, delta=-7.0, alpha=70.0, sigma_d=260.0),
}

# reported consistency intervals (V_min, V_max), (alpha_min, alpha_max)
TDI_DIMER_INTERVALS = {
    0: ((650.0, 850.0), (0.0, 50.0)),
    1: ((400.0, 600.0), (10.0, 60.0)),
    2: ((0.0, 300.0), (0.0, 180.0)),
}
