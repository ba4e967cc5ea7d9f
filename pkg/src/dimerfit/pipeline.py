"""Stage evaluators: parameter vector -> simulated spectrum -> cost against a reference."""

from __future__ import annotations

import hashlib
import json
import threading
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .cost import spectral_cost
from .gpr import ParameterSpace
from .model import BasisSpec, DimerParams, MonomerParams
from .spectra import (
    MAX_PHASE_STEP,
    N_SIGMA,
    CoverageWarning,
    Spectrum,
    TimeGrid,
    combine_dimer_correlation,
    correlation_to_spectrum,
    dimer_correlation_components,
    monomer_correlation,
)

MONOMER_NAMES = MonomerParams.NAMES
DIMER_NAMES = DimerParams.NAMES

# search ranges in cm^-1 (S dimensionless, alpha in degrees)
DEFAULT_BOUNDS = {
    "monomer": {
        "epsilon_e": (15000.0, 17000.0),
        "omega_vib": (1000.0, 2000.0),
        "huang_rhys": (0.1, 1.0),
        "gamma": (1.0, 50.0),
        "sigma_m": (100.0, 1000.0),
    },
    "dimer": {
        "coupling_v": (0.0, 1600.0),
        "delta": (-300.0, 300.0),
        "alpha": (0.0, 180.0),
        "sigma_d": (100.0, 1000.0),
    },
}
DEFAULT_NSC = {"monomer": (0.0, 1.0, 2.0, 3.0), "dimer": (0.0, 20.0, 40.0, 60.0)}
STAGE_NAMES = {"monomer": MONOMER_NAMES, "dimer": DIMER_NAMES}
SIGMA_NAME = {"monomer": "sigma_m", "dimer": "sigma_d"}


@dataclass
class SimulationSettings:
    n_max: int = 12
    nu_min: float | None = None
    nu_max: float | None = None
    n_nu: int = 2001
    max_phase: float = MAX_PHASE_STEP
    n_sigma: float = N_SIGMA
    zero_phonon_origin: bool = True

    def frequency_grid(self, support=None):
        lo = self.nu_min if self.nu_min is not None else (support[0] if support else None)
        hi = self.nu_max if self.nu_max is not None else (support[1] if support else None)
        if lo is None or hi is None:
            raise ValueError("frequency range is undefined: set nu_min/nu_max or supply a spectrum")
        return np.linspace(float(lo), float(hi), int(self.n_nu))

    def as_dict(self):
        return asdict(self)


class StageEvaluator:
    """Callable cost of a parameter vector for one fitting stage.

    ``space`` holds the fitted parameters; every other stage parameter must
    appear in ``fixed``.
    """

    stage = ""

    def __init__(self, reference: Spectrum, space: ParameterSpace, fixed=None,
                 settings: SimulationSettings | None = None):
        self.reference = reference if reference.normalized else reference.normalize()
        self.space = space
        self.fixed = {k: float(v) for k, v in (fixed or {}).items()}
        self.settings = settings or SimulationSettings()
        names = STAGE_NAMES[self.stage]
        unknown = [n for n in (*space.names, *self.fixed) if n not in names]
        if unknown:
            raise ValueError(f"unknown {self.stage} parameters: {unknown}")
        missing = [n for n in names if n not in space.names and n not in self.fixed]
        if missing:
            raise ValueError(f"{self.stage} parameters neither fitted nor fixed: {missing}")
        sigma = SIGMA_NAME[self.stage]
        if sigma in space.names:
            sigma_min = space.lower[space.names.index(sigma)]
        else:
            sigma_min = self.fixed[sigma]
        self.basis = BasisSpec(self.settings.n_max)
        self.time_grid = TimeGrid.for_window(self.reference.nu, sigma_min,
                                             self.settings.max_phase, self.settings.n_sigma)

    def params(self, x):
        if isinstance(x, dict):
            values = {**self.fixed, **{k: float(v) for k, v in x.items()}}
        else:
            values = dict(self.fixed)
            values.update(zip(self.space.names, (float(v) for v in np.asarray(x).reshape(-1))))
        return values

    def spectrum(self, x) -> Spectrum:
        raise NotImplementedError

    def __call__(self, x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoverageWarning)
            calc = self.spectrum(x)
        return spectral_cost(self.reference, calc)

    def _fingerprint_payload(self):
        return {
            "stage": self.stage,
            "names": list(self.space.names),
            "fixed": self.fixed,
            "settings": self.settings.as_dict(),
            "dt": self.time_grid.dt,
            "n_steps": self.time_grid.n_steps,
            "reference": hashlib.sha256(
                np.ascontiguousarray(np.column_stack([self.reference.nu, self.reference.amp])).tobytes()
            ).hexdigest(),
        }

    @property
    def fingerprint(self):
        blob = json.dumps(self._fingerprint_payload(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


class MonomerEvaluator(StageEvaluator):
    stage = "monomer"

    def monomer_params(self, x) -> MonomerParams:
        return MonomerParams(**self.params(x))

    def spectrum(self, x) -> Spectrum:
        p = self.monomer_params(x)
        m = monomer_correlation(p, self.basis, self.time_grid,
                                zero_phonon_origin=self.settings.zero_phonon_origin)
        return correlation_to_spectrum(m, p.sigma_m, self.reference.nu)


class DimerEvaluator(StageEvaluator):
    """Dimer stage cost with the monomer parameters held read-only.

    M+ and M- depend only on (V, delta); they are memoized so that grids
    over alpha and sigma_d reuse one propagation per (V, delta) pair.
    """

    stage = "dimer"

    def __init__(self, reference, space, monomer: MonomerParams, fixed=None, settings=None,
                 cache_size=256):
        super().__init__(reference, space, fixed, settings)
        self.monomer = monomer
        self._components = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def dimer_params(self, x) -> DimerParams:
        return DimerParams(**self.params(x))

    def components(self, pd: DimerParams):
        key = (pd.coupling_v, pd.delta)
        with self._lock:
            hit = self._components.get(key)
            if hit is not None:
                self._components.move_to_end(key)
                return hit
        mp, mm = dimer_correlation_components(self.monomer, pd, self.basis, self.time_grid,
                                              zero_phonon_origin=self.settings.zero_phonon_origin)
        with self._lock:
            self._components[key] = (mp, mm)
            if len(self._components) > self._cache_size:
                self._components.popitem(last=False)
        return mp, mm

    def spectrum(self, x) -> Spectrum:
        pd = self.dimer_params(x)
        mp, mm = self.components(pd)
        m = combine_dimer_correlation(mp, mm, pd.alpha)
        return correlation_to_spectrum(m, pd.sigma_d, self.reference.nu)

    def _fingerprint_payload(self):
        return {**super()._fingerprint_payload(), "monomer": self.monomer.as_dict()}


def make_space(stage, bounds, fixed=None):
    fixed = fixed or {}
    names = [n for n in STAGE_NAMES[stage] if n not in fixed]
    return ParameterSpace.from_bounds({n: tuple(bounds[n]) for n in names})
