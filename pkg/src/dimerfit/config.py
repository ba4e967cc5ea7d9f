"""Run configuration: YAML file -> validated dataclasses."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .cost import COST_CONSISTENT, COST_INDISTINGUISHABLE
from .landscape import DEFAULT_EXACT_POINTS, DEFAULT_POINTS, MAX_EXACT_NODES
from .model import MonomerParams
from .pipeline import DEFAULT_BOUNDS, DEFAULT_NSC, STAGE_NAMES, SimulationSettings


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists (field path, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.problems))


@dataclass
class LandscapeSettings:
    points: int = DEFAULT_POINTS
    exact_points: int = DEFAULT_EXACT_POINTS
    max_exact_nodes: int = MAX_EXACT_NODES
    thresholds: tuple = (COST_INDISTINGUISHABLE, COST_CONSISTENT)


@dataclass
class RunConfig:
    stage: str
    spectrum: str
    bounds: dict
    fixed: dict = field(default_factory=dict)
    monomer: dict | None = None
    monomer_manifest: str | None = None
    budget: int = 1000
    n_sc: tuple = ()
    seed: int = 0
    workers: int = 1
    output: str = "runs"
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    landscape: LandscapeSettings = field(default_factory=LandscapeSettings)

    @property
    def fitted_names(self):
        return [n for n in STAGE_NAMES[self.stage] if n not in self.fixed]

    def resolve_monomer(self) -> MonomerParams:
        """Monomer parameters for the dimer stage (inline values or a monomer run manifest)."""
        if self.monomer is not None:
            return MonomerParams(**self.monomer)
        with open(self.monomer_manifest) as fh:
            doc = json.load(fh)
        if doc.get("stage") != "monomer":
            raise ConfigError([("monomer_manifest", "manifest is not from a monomer run")])
        return MonomerParams(**doc["best"]["params"])

    def as_dict(self):
        d = asdict(self)
        d["n_sc"] = list(self.n_sc)
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        d["landscape"]["thresholds"] = list(self.landscape.thresholds)
        return d


def _number(value, path, problems, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append((path, f"expected a number, got {value!r}"))
        return None
    if integer and int(value) != value:
        problems.append((path, f"expected an integer, got {value!r}"))
        return None
    if not math.isfinite(value):
        problems.append((path, "must be finite"))
        return None
    return int(value) if integer else float(value)


def _section(cls, raw, path, problems):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append((path, "expected a mapping"))
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            problems.append((f"{path}.{key}", "unknown key"))
            continue
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                problems.append((f"{path}.{key}", "expected true or false"))
                continue
        elif isinstance(default, tuple):
            if not isinstance(value, list) or not value:
                problems.append((f"{path}.{key}", "expected a non-empty list"))
                continue
            value = tuple(_number(v, f"{path}.{key}[{i}]", problems) for i, v in enumerate(value))
        elif value is not None:
            value = _number(value, f"{path}.{key}", problems, integer=isinstance(default, int))
        kwargs[key] = value
    return cls(**{k: v for k, v in kwargs.items() if v is not None or getattr(cls(), k) is None})


def parse_config(raw, base_dir=".") -> RunConfig:
    """Validate a configuration mapping; relative paths are taken from ``base_dir``."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "configuration must be a mapping")])
    allowed = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in allowed:
            problems.append((key, "unknown key"))

    stage = raw.get("stage")
    if stage not in STAGE_NAMES:
        problems.append(("stage", f"must be 'monomer' or 'dimer', got {stage!r}"))
        raise ConfigError(problems)
    names = STAGE_NAMES[stage]
    base = Path(base_dir)

    def path_of(key, required):
        value = raw.get(key)
        if value is None:
            if required:
                problems.append((key, "required"))
            return None
        if not isinstance(value, str):
            problems.append((key, "expected a file path"))
            return None
        p = Path(value)
        return str(p if p.is_absolute() else base / p)

    spectrum = path_of("spectrum", True)

    fixed = {}
    for key, value in (raw.get("fixed") or {}).items():
        if key not in names:
            problems.append((f"fixed.{key}", f"not a {stage} parameter"))
            continue
        v = _number(value, f"fixed.{key}", problems)
        if v is not None:
            fixed[key] = v

    raw_bounds = raw.get("bounds") or {}
    if not isinstance(raw_bounds, dict):
        problems.append(("bounds", "expected a mapping"))
        raw_bounds = {}
    bounds = {}
    for key, value in raw_bounds.items():
        if key not in names:
            problems.append((f"bounds.{key}", f"not a {stage} parameter"))
            continue
        if key in fixed:
            problems.append((f"bounds.{key}", "parameter is also fixed"))
            continue
        if not isinstance(value, list) or len(value) != 2:
            problems.append((f"bounds.{key}", "expected [lower, upper]"))
            continue
        lo = _number(value[0], f"bounds.{key}[0]", problems)
        hi = _number(value[1], f"bounds.{key}[1]", problems)
        if lo is None or hi is None:
            continue
        if not lo < hi:
            problems.append((f"bounds.{key}", f"lower {lo} must be below upper {hi}"))
            continue
        bounds[key] = (lo, hi)
    for key in names:
        if key not in fixed and key not in bounds:
            bounds[key] = DEFAULT_BOUNDS[stage][key]
    bounds = {k: bounds[k] for k in names if k in bounds}
    if not bounds:
        problems.append(("bounds", "every parameter is fixed; nothing to fit"))

    monomer = raw.get("monomer")
    monomer_manifest = None
    if stage == "dimer":
        monomer_manifest = path_of("monomer_manifest", False)
        if monomer is None and monomer_manifest is None:
            problems.append(("monomer", "dimer stage needs `monomer` values or `monomer_manifest`"))
        if monomer is not None and monomer_manifest is not None:
            problems.append(("monomer", "give either `monomer` or `monomer_manifest`, not both"))
        if monomer is not None:
            if not isinstance(monomer, dict):
                problems.append(("monomer", "expected a mapping"))
                monomer = None
            else:
                clean = {}
                for key in STAGE_NAMES["monomer"]:
                    if key not in monomer:
                        problems.append((f"monomer.{key}", "required"))
                        continue
                    v = _number(monomer[key], f"monomer.{key}", problems)
                    if v is not None:
                        clean[key] = v
                for key in monomer:
                    if key not in STAGE_NAMES["monomer"]:
                        problems.append((f"monomer.{key}", "unknown key"))
                monomer = clean
                if len(clean) == len(STAGE_NAMES["monomer"]):
                    try:
                        MonomerParams(**clean)
                    except ValueError as exc:
                        problems.append(("monomer", str(exc)))
    elif monomer is not None or raw.get("monomer_manifest") is not None:
        problems.append(("monomer", "only used by the dimer stage"))
        monomer = None

    budget = _number(raw.get("budget", 1000), "budget", problems, integer=True)
    n_initial = 2 * len(bounds) + 2
    if budget is not None and budget < n_initial:
        problems.append(("budget", f"must be at least {n_initial} (initial design size)"))

    raw_nsc = raw.get("n_sc", list(DEFAULT_NSC[stage]))
    n_sc = ()
    if not isinstance(raw_nsc, list) or not raw_nsc:
        problems.append(("n_sc", "expected a non-empty list of numbers"))
    else:
        vals = [_number(v, f"n_sc[{i}]", problems) for i, v in enumerate(raw_nsc)]
        if all(v is not None for v in vals):
            if any(v < 0 for v in vals):
                problems.append(("n_sc", "values must be non-negative"))
            n_sc = tuple(vals)

    seed = _number(raw.get("seed", 0), "seed", problems, integer=True)
    workers = _number(raw.get("workers", 1), "workers", problems, integer=True)
    if workers is not None and workers < 1:
        problems.append(("workers", "must be at least 1"))
    output = raw.get("output", "runs")
    if not isinstance(output, str):
        problems.append(("output", "expected a directory path"))
        output = "runs"
    output = str(Path(output) if Path(output).is_absolute() else base / output)

    simulation = _section(SimulationSettings, raw.get("simulation"), "simulation", problems)
    if simulation.n_max < 0:
        problems.append(("simulation.n_max", "must be non-negative"))
    if simulation.n_nu < 10:
        problems.append(("simulation.n_nu", "must be at least 10"))
    if (simulation.nu_min is not None and simulation.nu_max is not None
            and not simulation.nu_min < simulation.nu_max):
        problems.append(("simulation", "nu_min must be below nu_max"))
    landscape = _section(LandscapeSettings, raw.get("landscape"), "landscape", problems)
    for key in ("points", "exact_points"):
        if getattr(landscape, key) < 2:
            problems.append((f"landscape.{key}", "must be at least 2"))
    for thr in landscape.thresholds:
        if thr is not None and not 0 < thr <= 2:
            problems.append(("landscape.thresholds", f"threshold {thr} outside (0, 2]"))

    if problems:
        raise ConfigError(problems)
    return RunConfig(stage=stage, spectrum=spectrum, bounds=bounds, fixed=fixed, monomer=monomer,
                     monomer_manifest=monomer_manifest, budget=budget, n_sc=n_sc, seed=seed,
                     workers=workers, output=output, simulation=simulation, landscape=landscape)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"invalid YAML: {exc}")]) from exc
    return parse_config(raw, base_dir=path.parent)
