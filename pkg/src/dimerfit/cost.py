"""Experimental spectrum ingest, common-grid resampling and the spectral distance.

Spectrum files are plain text. Leading comment lines of the form
``# key: value`` form the metadata block; ``units: nm`` switches the first
column from cm^-1 to wavelength in nm (converted with nu = 1e7 / lambda).
Other comment lines are ignored. Data rows hold two numbers separated by
whitespace or a comma.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .spectra import Spectrum, check_frequency_grid

# cost below which spectra agree reasonably
COST_CONSISTENT = 0.1
# cost below which spectra are hard to tell apart by eye
COST_INDISTINGUISHABLE = 0.05
MAX_COST = 2.0

_META_RE = re.compile(r"^#\s*([A-Za-z_][\w\-]*)\s*:\s*(.*?)\s*$")
_UNITS = {"cm-1": "cm-1", "cm^-1": "cm-1", "1/cm": "cm-1", "wavenumber": "cm-1", "nm": "nm"}


class SpectrumFormatError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.source = source


@dataclass
class ExperimentalSpectrum:
    nu: np.ndarray
    amp: np.ndarray
    source: str = "<memory>"
    metadata: dict = field(default_factory=dict)
    preprocessing: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.amp = np.asarray(self.amp, dtype=float)
        if self.nu.shape != self.amp.shape or self.nu.ndim != 1:
            raise SpectrumFormatError("nu and amplitude columns differ in length", source=self.source)
        if self.nu.size < 10:
            raise SpectrumFormatError(f"need at least 10 points, got {self.nu.size}", source=self.source)
        if not (np.all(np.isfinite(self.nu)) and np.all(np.isfinite(self.amp))):
            raise SpectrumFormatError("non-finite values", source=self.source)
        if np.any(np.diff(self.nu) <= 0):
            raise SpectrumFormatError("frequencies are not strictly increasing", source=self.source)


def _parse_float(text, lineno, source):
    try:
        return float(text)
    except ValueError:
        raise SpectrumFormatError(f"not a number: {text!r}", line=lineno, source=source) from None


def ingest_spectrum(path, min_points=10) -> ExperimentalSpectrum:
    """Read a two-column spectrum file; returns ascending, de-duplicated points."""
    path = Path(path)
    source = str(path)
    raw = path.read_bytes()
    metadata = {}
    rows = []
    in_header = True
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if in_header:
                match = _META_RE.match(stripped)
                if match:
                    metadata[match.group(1).lower()] = match.group(2)
            continue
        in_header = False
        parts = [p for p in re.split(r"[,\s]+", stripped) if p]
        if len(parts) != 2:
            raise SpectrumFormatError(f"expected 2 columns, found {len(parts)}", lineno, source)
        rows.append((_parse_float(parts[0], lineno, source), _parse_float(parts[1], lineno, source),
                     lineno))

    units = _UNITS.get(metadata.get("units", "cm-1").strip().lower())
    if units is None:
        raise SpectrumFormatError(f"unknown units {metadata['units']!r}", source=source)
    if len(rows) < min_points:
        raise SpectrumFormatError(f"need at least {min_points} points, got {len(rows)}", source=source)

    data = np.array([(x, y) for x, y, _ in rows])
    lines = np.array([ln for _, _, ln in rows])
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise SpectrumFormatError("non-finite value", int(lines[bad][0]), source)
    if units == "nm":
        if np.any(data[:, 0] <= 0):
            raise SpectrumFormatError("wavelengths must be positive", source=source)
        data[:, 0] = 1e7 / data[:, 0]

    order = np.argsort(data[:, 0], kind="stable")
    data, lines = data[order], lines[order]
    keep = np.ones(len(data), dtype=bool)
    same = np.diff(data[:, 0]) == 0
    for i in np.nonzero(same)[0]:
        if data[i + 1, 1] != data[i, 1]:
            raise SpectrumFormatError(
                f"frequency {data[i, 0]!r} repeated with different amplitudes "
                f"(lines {lines[i]} and {lines[i + 1]})", source=source)
        keep[i + 1] = False
    data = data[keep]
    if len(data) < min_points:
        raise SpectrumFormatError(f"need at least {min_points} distinct points, got {len(data)}",
                                  source=source)

    return ExperimentalSpectrum(
        data[:, 0], data[:, 1], source=source, metadata=metadata,
        preprocessing={
            "units": units,
            "duplicates_removed": int((~keep).sum()),
            "sha256": hashlib.sha256(raw).hexdigest(),
        },
    )


def interpolate_onto(nu, amp, grid):
    """Linear interpolation; nodes outside [nu[0], nu[-1]] get 0 and are flagged."""
    grid = np.asarray(grid, dtype=float)
    outside = (grid < nu[0]) | (grid > nu[-1])
    values = np.interp(grid, nu, amp, left=0.0, right=0.0)
    return values, outside


def to_common_grid(e: ExperimentalSpectrum, nu_grid, normalize=True) -> Spectrum:
    """Resample onto ``nu_grid``, clip negative amplitudes, then area-normalize."""
    grid = check_frequency_grid(nu_grid)
    values, outside = interpolate_onto(e.nu, e.amp, grid)
    if outside.all():
        raise ValueError(f"grid [{grid[0]}, {grid[-1]}] lies outside the data support "
                         f"[{e.nu[0]}, {e.nu[-1]}]")
    negative = values < 0
    values = np.where(negative, 0.0, values)
    info = {
        "source": e.source,
        "outside_support": int(outside.sum()),
        "clipped_negative": int(negative.sum()),
    }
    spec = Spectrum(grid, values, False, info)
    return spec.normalize() if normalize else spec


def _check_pair(a: Spectrum, b: Spectrum, norm_tol):
    if a.nu.shape != b.nu.shape or not np.array_equal(a.nu, b.nu):
        raise ValueError("spectra are not on the same frequency grid")
    for name, s in (("experimental", a), ("calculated", b)):
        if not s.normalized or abs(s.area - 1.0) > norm_tol:
            raise ValueError(f"{name} spectrum is not area-normalized (area {s.area:.6g})")


def spectral_cost(a_exp: Spectrum, a_cal: Spectrum, signed=False, norm_tol=1e-6) -> float:
    """Integrated absolute difference of two normalized spectra, in [0, 2].

    ``signed=True`` integrates the plain difference instead, which vanishes
    for normalized inputs; it is kept only as a diagnostic.
    """
    _check_pair(a_exp, a_cal, norm_tol)
    diff = a_exp.amp - a_cal.amp
    if signed:
        return float(trapezoid(diff, a_exp.nu))
    return float(trapezoid(np.abs(diff), a_exp.nu))
