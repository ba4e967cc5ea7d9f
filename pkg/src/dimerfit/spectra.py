"""Dipole correlation functions and broadened absorption spectra.

The damped vibrational modes are propagated with the non-Hermitian
generator ``H - i*gamma*(a^dag a)``. For linear absorption from the
vibrational vacuum this reproduces the exponential bath correlation
``S*w^2*exp(-(gamma + i*w)*tau)`` exactly: quantum jumps act on the
ground-state (bra) side, where the mode stays in its vacuum, so they never
feed back into the coherence.

Time is measured in 1/cm^-1 with hbar = 1, so phases read exp(-i*E*t).
Correlation values are stored as an envelope relative to a carrier
frequency to keep the large electronic phase out of the arithmetic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid
from scipy.signal import czt

from .model import (
    BasisSpec,
    DimerParams,
    MonomerParams,
    build_dimer_hamiltonian,
    build_monomer_hamiltonian,
)

# largest |frequency offset| * dt tolerated by the trapezoid rule
MAX_PHASE_STEP = 0.1
# window must have decayed to exp(-N_SIGMA**2/2) at t_max
N_SIGMA = 6.0
# eigen-expansions with sum |weights| above this are treated as ill-conditioned
_CONDITION_LIMIT = 1e6
_MAX_EXP_BLOCK = 4_000_000


class PropagationError(RuntimeError):
    """Correlation function grew beyond its initial value."""


class CoverageWarning(UserWarning):
    """Frequency grid misses a noticeable part of the spectral weight."""


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")

    @property
    def t(self):
        return np.arange(self.n_steps) * self.dt

    @property
    def t_max(self):
        return (self.n_steps - 1) * self.dt

    @classmethod
    def for_window(cls, nu_grid, sigma_min, max_phase=MAX_PHASE_STEP, n_sigma=N_SIGMA):
        """Grid resolving every frequency in ``nu_grid`` and long enough for ``sigma_min``.

        The step keeps ``|nu - E| * dt`` below ``max_phase`` for transition
        energies E inside the window; the length makes ``sigma_min * t_max``
        reach ``n_sigma``.
        """
        nu = np.asarray(nu_grid, dtype=float)
        span = float(nu[-1] - nu[0])
        if span <= 0:
            raise ValueError("frequency grid must be increasing")
        dt = max_phase / span
        n_steps = int(math.ceil(n_sigma / (sigma_min * dt))) + 1
        return cls(dt=dt, n_steps=max(n_steps, 2))


@dataclass
class CorrelationSeries:
    """M(t_j) = envelope_j * exp(-i * carrier * t_j)."""

    grid: TimeGrid
    envelope: np.ndarray
    carrier: float
    kind: str = "monomer"

    KINDS = ("monomer", "dimer-plus", "dimer-minus", "dimer-combined")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown correlation kind {self.kind!r}")
        self.envelope = np.asarray(self.envelope, dtype=complex)
        if self.envelope.shape != (self.grid.n_steps,):
            raise ValueError("envelope length does not match the time grid")

    @property
    def values(self):
        return self.envelope * np.exp(-1j * self.carrier * self.grid.t)

    def reframed(self, carrier):
        """Same correlation function expressed relative to another carrier."""
        shift = np.exp(-1j * (self.carrier - carrier) * self.grid.t)
        return CorrelationSeries(self.grid, self.envelope * shift, carrier, self.kind)


@dataclass
class Spectrum:
    nu: np.ndarray
    amp: np.ndarray
    normalized: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.amp = np.asarray(self.amp, dtype=float)
        if self.nu.ndim != 1 or self.nu.shape != self.amp.shape:
            raise ValueError("nu and amp must be 1-D arrays of equal length")
        check_frequency_grid(self.nu)

    @property
    def area(self):
        return float(trapezoid(self.amp, self.nu))

    def normalize(self):
        area = self.area
        if not area > 0:
            raise ValueError(f"cannot normalize a spectrum with area {area}")
        return Spectrum(self.nu, self.amp / area, True, dict(self.info))


def check_frequency_grid(nu, rtol=1e-6):
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1 or nu.size < 2:
        raise ValueError("frequency grid needs at least two points")
    step = np.diff(nu)
    if np.any(step <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    if np.max(np.abs(step - step.mean())) > rtol * abs(step.mean()) + 1e-9 * np.max(np.abs(nu)):
        raise ValueError("frequency grid must be uniform")
    return nu


def default_frequency_grid(p: MonomerParams, sigma=None, n_points=2001, extra=0.0):
    """Uniform axis over [eps - 10 sigma - w, eps + 6 w + 10 sigma], widened by ``extra``."""
    sigma = p.sigma_m if sigma is None else sigma
    lo = p.epsilon_e - 10.0 * sigma - p.omega_vib - extra
    hi = p.epsilon_e + 6.0 * p.omega_vib + 10.0 * sigma + extra
    return np.linspace(lo, hi, n_points)


class _Propagator:
    """Overlaps <bra_i| exp(-i H t) |ket_j> for a fixed (possibly damped) matrix.

    Uses one eigendecomposition; falls back to stepping with a fixed
    short-time exponential when the eigenvector basis is ill-conditioned.
    """

    def __init__(self, h, bras, kets, carrier):
        self.h = np.asarray(h, dtype=complex)
        self.bras = np.asarray(bras, dtype=complex)
        self.kets = np.asarray(kets, dtype=complex)
        self.carrier = float(carrier)
        self.stepping = False
        shifted = self.h - self.carrier * np.eye(self.h.shape[0])
        if np.allclose(shifted, shifted.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(shifted).max())):
            lam, vec = np.linalg.eigh(shifted)
            right = vec.conj().T @ self.kets
        else:
            lam, vec = np.linalg.eig(shifted)
            right = np.linalg.solve(vec, self.kets)
        left = self.bras.conj().T @ vec
        # weights[k, i, j] = left[i, k] * right[k, j]
        weights = np.einsum("ik,kj->kij", left, right)
        self.condition = float(np.abs(weights).sum(axis=0).max())
        if self.condition > _CONDITION_LIMIT:
            self.stepping = True
        keep = np.abs(weights).reshape(len(lam), -1).max(axis=1) > 1e-16 * self.condition
        self.lam = lam[keep]
        self.weights = weights[keep]

    def evaluate(self, grid: TimeGrid):
        t = grid.t
        n_b, n_k = self.bras.shape[1], self.kets.shape[1]
        if self.stepping:
            return self._step(grid)
        out = np.empty((t.size, n_b, n_k), dtype=complex)
        w = self.weights.reshape(len(self.lam), -1)
        block = max(1, _MAX_EXP_BLOCK // max(1, len(self.lam)))
        for start in range(0, t.size, block):
            ts = t[start:start + block]
            phases = np.exp(-1j * np.outer(ts, self.lam))
            out[start:start + block] = (phases @ w).reshape(len(ts), n_b, n_k)
        return out

    def _step(self, grid):
        shifted = self.h - self.carrier * np.eye(self.h.shape[0])
        u = linalg.expm(-1j * shifted * grid.dt)
        psi = self.kets.copy()
        out = np.empty((grid.n_steps, self.bras.shape[1], self.kets.shape[1]), dtype=complex)
        for j in range(grid.n_steps):
            out[j] = self.bras.conj().T @ psi
            psi = u @ psi
        return out


def _check_contractive(series_values, what):
    peak = float(np.max(np.abs(series_values)))
    if peak > 1.0 + 1e-6:
        raise PropagationError(
            f"{what}: |M(t)| reached {peak:.6g} > M(0) = 1; "
            "the basis or time step is unsuitable for these parameters"
        )


def _offset(p: MonomerParams, zero_phonon_origin):
    # shifting the excited manifold by S*w puts the 0-0 line at epsilon_e
    return p.reorganization_energy if zero_phonon_origin else 0.0


def monomer_propagator(p: MonomerParams, b: BasisSpec = BasisSpec(), zero_phonon_origin=True):
    h = build_monomer_hamiltonian(p, b).with_damping(p.gamma).entries
    h = h + _offset(p, zero_phonon_origin) * np.eye(h.shape[0])
    ket = np.zeros((b.monomer_dim, 1))
    ket[0, 0] = 1.0
    return _Propagator(h, ket, ket, carrier=p.epsilon_e)


def monomer_correlation(p: MonomerParams, b: BasisSpec, g: TimeGrid, *, zero_phonon_origin=True):
    """M(t) = <e,0| exp(-i H_eff t) |e,0> with unit transition dipole.

    With ``zero_phonon_origin`` (default) the excited manifold is shifted up
    by the reorganization energy S*omega_vib, so ``epsilon_e`` is the 0-0
    line; otherwise the bare displaced-mode matrix is used.
    """
    prop = monomer_propagator(p, b, zero_phonon_origin)
    env = prop.evaluate(g)[:, 0, 0]
    out = CorrelationSeries(g, env, prop.carrier, "monomer")
    _check_contractive(out.envelope, "monomer correlation")
    return out


def dimer_propagator(pm: MonomerParams, pd: DimerParams, b: BasisSpec = BasisSpec(),
                     zero_phonon_origin=True):
    h = build_dimer_hamiltonian(pm, pd, b).with_damping(pm.gamma).entries
    h = h + _offset(pm, zero_phonon_origin) * np.eye(h.shape[0])
    kets = np.zeros((b.dimer_dim, 2))
    kets[0, 0] = 1.0                     # |1>|0,0>
    kets[b.n_levels**2, 1] = 1.0         # |2>|0,0>
    return _Propagator(h, kets, kets, carrier=pm.epsilon_e + pd.delta)


def site_overlaps(pm, pd, b, g, *, zero_phonon_origin=True):
    """C_nm(t) = <n,0,0| exp(-i H_eff t) |m,0,0> as an (n_steps, 2, 2) envelope array."""
    prop = dimer_propagator(pm, pd, b, zero_phonon_origin)
    return prop.evaluate(g), prop.carrier


def _plus_minus(c):
    plus = 0.5 * (c[:, 0, 0] + c[:, 0, 1] + c[:, 1, 0] + c[:, 1, 1])
    minus = 0.5 * (c[:, 0, 0] - c[:, 0, 1] - c[:, 1, 0] + c[:, 1, 1])
    return plus, minus


def dimer_correlation_components(pm: MonomerParams, pd: DimerParams, b: BasisSpec, g: TimeGrid,
                                 *, zero_phonon_origin=True):
    """Symmetric and antisymmetric correlation functions (M_+, M_-).

    Both come from propagating |1,0,0> and |2,0,0> and projecting onto
    (|1> +- |2>)/sqrt(2) site combinations.
    """
    c, carrier = site_overlaps(pm, pd, b, g, zero_phonon_origin=zero_phonon_origin)
    plus, minus = _plus_minus(c)
    mp = CorrelationSeries(g, plus, carrier, "dimer-plus")
    mm = CorrelationSeries(g, minus, carrier, "dimer-minus")
    _check_contractive(mp.envelope, "dimer M+")
    _check_contractive(mm.envelope, "dimer M-")
    return mp, mm


def combine_dimer_correlation(mp: CorrelationSeries, mm: CorrelationSeries, alpha):
    """(1 + cos a) M_+ + (1 - cos a) M_- with the angle in degrees."""
    if mp.grid != mm.grid:
        raise ValueError("M+ and M- live on different time grids")
    if mm.carrier != mp.carrier:
        mm = mm.reframed(mp.carrier)
    c = math.cos(math.radians(alpha))
    env = (1.0 + c) * mp.envelope + (1.0 - c) * mm.envelope
    return CorrelationSeries(mp.grid, env, mp.carrier, "dimer-combined")


def correlation_to_spectrum(m: CorrelationSeries, sigma, nu_grid, *, normalize=True,
                            min_coverage=0.99):
    """A(nu) = Re int_0^inf exp(i nu t) M(t) exp(-sigma^2 t^2 / 2) dt, area-normalized.

    Trapezoid rule on the stored time grid, evaluated on the uniform
    frequency axis with a chirp-z transform. ``info['coverage']`` is the
    fraction of the total weight (pi * M(0)) captured by the axis; a
    CoverageWarning is issued below ``min_coverage``.
    """
    nu = check_frequency_grid(nu_grid)
    g = m.grid
    if not sigma > 0:
        raise ValueError("broadening width must be positive")
    if sigma * g.t_max < N_SIGMA:
        raise ValueError(
            f"time grid too short: sigma*t_max = {sigma * g.t_max:.3g} < {N_SIGMA}"
        )
    t = g.t
    x = m.envelope * np.exp(-0.5 * (sigma * t) ** 2) * g.dt
    x[0] *= 0.5
    x[-1] *= 0.5
    dnu = (nu[-1] - nu[0]) / (nu.size - 1)
    a = np.exp(-1j * (nu[0] - m.carrier) * g.dt)
    w = np.exp(1j * dnu * g.dt)
    amp = np.real(czt(x, m=nu.size, w=w, a=a))

    m0 = float(np.real(m.envelope[0]))
    spec = Spectrum(nu, amp, False)
    area = spec.area
    coverage = area / (math.pi * m0) if m0 > 0 else float("nan")
    spec.info["coverage"] = coverage
    if coverage < min_coverage:
        warnings.warn(
            f"frequency grid [{nu[0]:.1f}, {nu[-1]:.1f}] captures only {coverage:.3%} "
            "of the spectral weight",
            CoverageWarning,
            stacklevel=2,
        )
    if normalize:
        spec = spec.normalize()
    return spec


def simulate_monomer(p: MonomerParams, b: BasisSpec = BasisSpec(), g: TimeGrid | None = None,
                     nu_grid=None, *, zero_phonon_origin=True, min_coverage=0.99):
    """Normalized monomer absorption spectrum broadened with sigma_m."""
    nu = default_frequency_grid(p) if nu_grid is None else np.asarray(nu_grid, dtype=float)
    g = TimeGrid.for_window(nu, p.sigma_m) if g is None else g
    m = monomer_correlation(p, b, g, zero_phonon_origin=zero_phonon_origin)
    return correlation_to_spectrum(m, p.sigma_m, nu, min_coverage=min_coverage)


def simulate_dimer(pm: MonomerParams, pd: DimerParams, b: BasisSpec = BasisSpec(),
                   g: TimeGrid | None = None, nu_grid=None, *, zero_phonon_origin=True,
                   min_coverage=0.99):
    """Normalized dimer absorption spectrum broadened with sigma_d."""
    if nu_grid is None:
        nu = default_frequency_grid(pm, sigma=pd.sigma_d,
                                    extra=abs(pd.coupling_v) + abs(pd.delta))
    else:
        nu = np.asarray(nu_grid, dtype=float)
    g = TimeGrid.for_window(nu, pd.sigma_d) if g is None else g
    mp, mm = dimer_correlation_components(pm, pd, b, g, zero_phonon_origin=zero_phonon_origin)
    m = combine_dimer_correlation(mp, mm, pd.alpha)
    return correlation_to_spectrum(m, pd.sigma_d, nu, min_coverage=min_coverage)


def write_correlation(m: CorrelationSeries, path):
    """Three columns: t (1/cm^-1), Re M, Im M."""
    vals = m.values
    header = (f"correlation function kind={m.kind} dt={m.grid.dt!r} n_steps={m.grid.n_steps}\n"
              "columns: t_inv_cm re_M im_M")
    np.savetxt(path, np.column_stack([m.grid.t, vals.real, vals.imag]), header=header,
               fmt="%.17g")


def write_spectrum(s: Spectrum, path, comments=()):
    """Two columns: nu (cm^-1), amplitude; readable by ``cost.ingest_spectrum``."""
    lines = [f"units: cm-1", f"normalized: {str(s.normalized).lower()}"]
    lines += [str(c) for c in comments]
    lines.append("columns: nu_cm-1 amplitude")
    np.savetxt(path, np.column_stack([s.nu, s.amp]), header="\n".join(lines), fmt="%.17g")
