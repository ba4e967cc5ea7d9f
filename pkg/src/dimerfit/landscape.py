"""Dense evaluation of the surrogate and the exact cost on parameter grids.

Provides consistency regions (sublevel sets of the cost), 2-D cuts through
a chosen point, and the two convergence diagnostics: the grid-averaged
absolute surrogate error and the grid-averaged predicted uncertainty.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .cost import COST_CONSISTENT, COST_INDISTINGUISHABLE, MAX_COST
from .gpr import GprModel, ParameterSpace

log = logging.getLogger(__name__)

DEFAULT_POINTS = 25
DEFAULT_EXACT_POINTS = 11
MAX_EXACT_NODES = 200_000
THRESHOLDS = (COST_INDISTINGUISHABLE, COST_CONSISTENT)


@dataclass
class GridSpec:
    """Regular grid over some parameters with the rest held fixed."""

    space: ParameterSpace
    axes: dict
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        names = self.space.names
        self.axes = {k: np.asarray(v, dtype=float) for k, v in self.axes.items()}
        self.fixed = {k: float(v) for k, v in self.fixed.items()}
        for name, values in self.axes.items():
            if name not in names:
                raise ValueError(f"unknown grid axis {name!r}")
            if values.ndim != 1 or values.size < 2:
                raise ValueError(f"axis {name!r} needs at least 2 points")
            i = names.index(name)
            lo, hi = self.space.lower[i], self.space.upper[i]
            tol = 1e-9 * (hi - lo)
            if values.min() < lo - tol or values.max() > hi + tol:
                raise ValueError(f"axis {name!r} leaves the bounds [{lo}, {hi}]")
        for name, value in self.fixed.items():
            if name not in names:
                raise ValueError(f"unknown fixed parameter {name!r}")
            if name in self.axes:
                raise ValueError(f"{name!r} is both scanned and fixed")
            i = names.index(name)
            if not self.space.lower[i] <= value <= self.space.upper[i]:
                raise ValueError(f"fixed value {name}={value} outside the bounds")
        missing = [n for n in names if n not in self.axes and n not in self.fixed]
        if missing:
            raise ValueError(f"parameters neither scanned nor fixed: {missing}")
        # keep scanned axes in parameter-space order
        self.axes = {n: self.axes[n] for n in names if n in self.axes}

    @classmethod
    def build(cls, space: ParameterSpace, scanned, points=DEFAULT_POINTS, ranges=None, fixed=None):
        """Evenly spaced axes over ``ranges`` (default: full bounds) for each scanned name."""
        ranges = ranges or {}
        counts = points if isinstance(points, dict) else {n: points for n in scanned}
        axes = {}
        for name in scanned:
            i = space.names.index(name)
            lo, hi = ranges.get(name, (space.lower[i], space.upper[i]))
            axes[name] = np.linspace(lo, hi, int(counts[name]))
        return cls(space, axes, dict(fixed or {}))

    @property
    def scanned(self):
        return tuple(self.axes)

    @property
    def shape(self):
        return tuple(v.size for v in self.axes.values())

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    def nodes(self):
        """All grid nodes as raw parameter vectors, C-ordered over the scanned axes."""
        names = self.space.names
        mesh = np.meshgrid(*self.axes.values(), indexing="ij") if self.axes else []
        cols = []
        scanned = dict(zip(self.axes, (m.reshape(-1) for m in mesh)))
        for name in names:
            if name in scanned:
                cols.append(scanned[name])
            else:
                cols.append(np.full(self.size, self.fixed[name]))
        return np.column_stack(cols)

    def same_as(self, other):
        return (self.space == other.space and self.scanned == other.scanned
                and all(np.array_equal(self.axes[k], other.axes[k]) for k in self.axes)
                and self.fixed == other.fixed)

    def as_dict(self):
        return {
            "axes": [{"name": k, "min": float(v[0]), "max": float(v[-1]), "count": int(v.size)}
                     for k, v in self.axes.items()],
            "fixed": dict(self.fixed),
        }


@dataclass
class Landscape:
    grid: GridSpec
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    exact: np.ndarray | None = None
    thresholds: tuple = THRESHOLDS
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mean", "std", "exact"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float).reshape(self.grid.shape)
                setattr(self, name, arr)

    def costs(self, source="auto"):
        if source == "auto":
            source = "mean" if self.mean is not None else "exact"
        values = getattr(self, source)
        if values is None:
            raise ValueError(f"landscape has no {source} costs")
        return values

    @property
    def masks(self):
        return {thr: consistency_region(self, thr).mask for thr in self.thresholds}


def surrogate_grid(m: GprModel, g: GridSpec, chunk=8192) -> Landscape:
    """Posterior mean and standard deviation at every grid node."""
    if g.space != m.space:
        raise ValueError("grid and model use different parameter spaces")
    nodes = g.nodes()
    mean = np.empty(len(nodes))
    std = np.empty(len(nodes))
    for start in range(0, len(nodes), chunk):
        mean[start:start + chunk], std[start:start + chunk] = m.predict_many(nodes[start:start + chunk])
    return Landscape(g, mean, std)


class CostCache:
    """Append-only JSON-lines record of exact costs keyed by a content hash."""

    def __init__(self, path):
        self.path = Path(path)
        self._data = {}
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:  # torn final line of an interrupted run
                        log.warning("skipping unreadable cache line in %s", self.path)
                        continue
                    self._data[rec["key"]] = rec["cost"]

    @staticmethod
    def key(params, fingerprint):
        blob = json.dumps({"p": [repr(float(v)) for v in params], "f": fingerprint}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, params, fingerprint):
        value = self._data.get(self.key(params, fingerprint))
        return None if value is None else float(value)

    def put_many(self, items, fingerprint):
        with open(self.path, "a") as fh:
            for params, cost in items:
                k = self.key(params, fingerprint)
                self._data[k] = float(cost)
                fh.write(json.dumps({"key": k, "params": [float(v) for v in params],
                                     "cost": float(cost)}) + "\n")

    def __len__(self):
        return len(self._data)


def exact_grid(evaluator, g: GridSpec, *, cache=None, fingerprint=None, max_nodes=MAX_EXACT_NODES,
               workers=1, flush_every=256) -> Landscape:
    """Run ``evaluator`` at every grid node; failed nodes are left as NaN.

    ``cache`` is a path or CostCache; results are keyed by the parameter
    vector and ``fingerprint`` (default: ``evaluator.fingerprint``), which
    must identify everything else the cost depends on.
    """
    if g.size > max_nodes:
        raise ValueError(f"grid has {g.size} nodes, above the cap of {max_nodes}")
    if fingerprint is None:
        fingerprint = getattr(evaluator, "fingerprint", "")
    if cache is not None and not isinstance(cache, CostCache):
        cache = CostCache(cache)
    nodes = g.nodes()
    values = np.full(len(nodes), np.nan)
    todo = []
    n_cached = 0
    for i, x in enumerate(nodes):
        hit = cache.get(x, fingerprint) if cache is not None else None
        if hit is None:
            todo.append(i)
        else:
            values[i] = hit
            n_cached += 1

    failed = 0

    def run(i):
        try:
            value = float(evaluator(nodes[i]))
            return value if math.isfinite(value) else float("nan")
        except Exception as exc:  # recorded as a missing node
            log.warning("exact cost failed at %s: %s", nodes[i], exc)
            return float("nan")

    pending = []
    for start in range(0, len(todo), flush_every):
        batch = todo[start:start + flush_every]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, batch))
        else:
            results = [run(i) for i in batch]
        for i, value in zip(batch, results):
            values[i] = value
            if math.isfinite(value):
                pending.append((nodes[i], value))
            else:
                failed += 1
        if cache is not None and pending:
            cache.put_many(pending, fingerprint)
            pending = []
    info = {"evaluated": len(todo), "cached": n_cached, "failed": failed}
    return Landscape(g, exact=values, info=info)


def _pick(l: Landscape, prefer):
    if prefer == "exact":
        return l.exact if l.exact is not None else l.mean
    return l.mean if l.mean is not None else l.exact


def error_metric(exact: Landscape, surrogate: Landscape) -> float:
    """Mean |exact - surrogate| over the nodes that have an exact value."""
    if not exact.grid.same_as(surrogate.grid):
        raise ValueError("landscapes are on different grids")
    a = _pick(exact, "exact")
    b = _pick(surrogate, "mean")
    if a is None or b is None:
        raise ValueError("both landscapes need cost values")
    ok = np.isfinite(a) & np.isfinite(b)
    if not ok.any():
        return float("nan")
    return float(np.mean(np.abs(a[ok] - b[ok])))


def uncertainty_metric(surrogate: Landscape) -> float:
    """Mean predicted standard deviation over all nodes."""
    if surrogate.std is None:
        raise ValueError("landscape carries no uncertainties")
    return float(np.mean(surrogate.std))


@dataclass
class Region:
    threshold: float
    mask: np.ndarray
    extents: dict

    @property
    def empty(self):
        return not bool(self.mask.any())

    @property
    def n_nodes(self):
        return int(self.mask.sum())


def consistency_region(l: Landscape, threshold=COST_CONSISTENT, source="auto") -> Region:
    """Nodes with cost <= threshold and the per-axis [min, max] they span.

    Surrogate means are clipped to the attainable cost range [0, 2] first.
    An empty region has ``extents`` mapping every axis to None.
    """
    if not 0 < threshold <= MAX_COST:
        raise ValueError(f"threshold must lie in (0, {MAX_COST}], got {threshold}")
    values = np.clip(l.costs(source), 0.0, MAX_COST)
    with np.errstate(invalid="ignore"):
        mask = np.where(np.isfinite(values), values <= threshold, False)
    extents = {}
    for axis, name in enumerate(l.grid.scanned):
        if not mask.any():
            extents[name] = None
            continue
        other = tuple(i for i in range(mask.ndim) if i != axis)
        hit = mask.any(axis=other) if other else mask
        coords = l.grid.axes[name][hit]
        extents[name] = (float(coords.min()), float(coords.max()))
    return Region(threshold, mask, extents)


def extract_cut(l: Landscape, keep, at) -> Landscape:
    """Lower-dimensional slice keeping the ``keep`` axes, others pinned to grid values ``at``."""
    index = []
    fixed = dict(l.grid.fixed)
    axes = {}
    for name, values in l.grid.axes.items():
        if name in keep:
            index.append(slice(None))
            axes[name] = values
        else:
            hits = np.nonzero(np.isclose(values, at[name], rtol=0, atol=1e-9 * max(1.0, abs(at[name]))))[0]
            if hits.size == 0:
                raise ValueError(f"{name}={at[name]} is not a node of the grid")
            index.append(int(hits[0]))
            fixed[name] = float(values[hits[0]])
    idx = tuple(index)
    grid = GridSpec(l.grid.space, axes, fixed)
    take = lambda arr: None if arr is None else arr[idx]  # noqa: E731
    return Landscape(grid, take(l.mean), take(l.std), take(l.exact), l.thresholds)


def cut_grids(space: ParameterSpace, point, pairs=None, points=DEFAULT_POINTS, ranges=None):
    """2-D grids through ``point`` for each pair of parameters (all pairs by default)."""
    point = dict(zip(space.names, np.asarray(point, dtype=float)))
    pairs = list(combinations(space.names, 2)) if pairs is None else [tuple(p) for p in pairs]
    grids = []
    for a, b in pairs:
        fixed = {n: v for n, v in point.items() if n not in (a, b)}
        grids.append(GridSpec.build(space, (a, b), points, ranges, fixed))
    return grids


def write_landscape(l: Landscape, csv_path, manifest_path=None, metrics=None):
    """One row per node: scanned coordinates, mean, std, exact, mask flags."""
    names = list(l.grid.scanned)
    n = l.grid.size
    nodes = l.grid.nodes()
    idx = [l.grid.space.names.index(k) for k in names]
    flat = lambda arr: np.full(n, np.nan) if arr is None else arr.reshape(-1)  # noqa: E731
    mean, std, exact = flat(l.mean), flat(l.std), flat(l.exact)
    masks = {thr: consistency_region(l, thr).mask.reshape(-1) for thr in l.thresholds}
    header = names + ["mean", "std", "exact"] + [f"below_{thr:g}" for thr in l.thresholds]
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for j in range(n):
            row = [repr(float(nodes[j, i])) for i in idx]
            row += [repr(float(v)) for v in (mean[j], std[j], exact[j])]
            row += [str(int(masks[thr][j])) for thr in l.thresholds]
            fh.write(",".join(row) + "\n")
    if manifest_path is not None:
        doc = {
            "file": str(Path(csv_path).name),
            **l.grid.as_dict(),
            "columns": header,
            "thresholds": list(l.thresholds),
            "regions": {f"{thr:g}": consistency_region(l, thr).extents for thr in l.thresholds},
            "metrics": metrics or {},
            "info": l.info,
        }
        with open(manifest_path, "w") as fh:
            json.dump(doc, fh, indent=2)
