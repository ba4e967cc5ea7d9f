"""Command line entry point: fit, landscape, simulate, validate.

Exit codes: 0 success, 1 invalid input (config, spectrum file, arguments),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .cost import SpectrumFormatError, ingest_spectrum, spectral_cost, to_common_grid
from .gpr import (
    KernelHyperparams,
    TrainingSet,
    fit,
    optimize,
    read_history,
    write_history,
    write_timing,
)
from .landscape import (
    CostCache,
    GridSpec,
    consistency_region,
    cut_grids,
    error_metric,
    exact_grid,
    surrogate_grid,
    uncertainty_metric,
    write_landscape,
)
from .model import TDI_DIMERS, TDI_MONOMER, BasisSpec, DimerParams, MonomerParams
from .pipeline import (
    DIMER_NAMES,
    MONOMER_NAMES,
    DimerEvaluator,
    MonomerEvaluator,
    SimulationSettings,
    make_space,
)
from .spectra import CoverageWarning, Spectrum, simulate_dimer, simulate_monomer, write_spectrum

log = logging.getLogger("dimerfit")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
MANIFEST = "manifest.json"
CONVERGENCE_TOL = 1e-4


class UsageError(ValueError):
    pass


def load_reference(cfg: RunConfig) -> Spectrum:
    exp = ingest_spectrum(cfg.spectrum)
    nu = cfg.simulation.frequency_grid((float(exp.nu[0]), float(exp.nu[-1])))
    return to_common_grid(exp, nu)


def build_evaluator(cfg: RunConfig, reference: Spectrum):
    space = make_space(cfg.stage, cfg.bounds, cfg.fixed)
    if cfg.stage == "monomer":
        return MonomerEvaluator(reference, space, cfg.fixed, cfg.simulation)
    return DimerEvaluator(reference, space, cfg.resolve_monomer(), cfg.fixed, cfg.simulation)


def _override(cfg: RunConfig, seed=None, workers=None, output=None):
    if seed is not None:
        cfg.seed = int(seed)
    if workers is not None:
        if workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg.workers = int(workers)
    if output is not None:
        cfg.output = str(Path(output).resolve())
    return cfg


def run_fit(cfg: RunConfig, progress=None) -> dict:
    """Run one fitting stage and write history, timing, best spectrum and manifest."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    reference = load_reference(cfg)
    evaluator = build_evaluator(cfg, reference)
    space = evaluator.space
    start = time.perf_counter()
    result = optimize(evaluator, space, cfg.budget, cfg.n_sc, cfg.seed, workers=cfg.workers,
                      callback=progress)
    elapsed = time.perf_counter() - start

    files = {"history": "history.csv", "timing": "timing.csv", "best_spectrum": "best_spectrum.txt",
             "reference_spectrum": "reference_spectrum.txt"}
    write_history(result, space, out / files["history"])
    write_timing(result, out / files["timing"])
    best = evaluator.params(result.best_point)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        best_spec = evaluator.spectrum(result.best_point)
    write_spectrum(best_spec, out / files["best_spectrum"],
                   comments=[f"stage: {cfg.stage}", f"cost: {result.best_cost!r}"])
    write_spectrum(evaluator.reference, out / files["reference_spectrum"],
                   comments=[f"source: {cfg.spectrum}"])
    n_failed = sum(r.status != "ok" for r in result.history)
    manifest = {
        "tool": "dimerfit",
        "version": __version__,
        "stage": cfg.stage,
        "seed": cfg.seed,
        "config": cfg.as_dict(),
        "fitted": list(space.names),
        "best": {"params": best, "cost": result.best_cost},
        "monomer_params": evaluator.monomer.as_dict() if cfg.stage == "dimer" else None,
        "evaluations": len(result.history),
        "failed_evaluations": n_failed,
        "files": files,
        "landscapes": [],
        "final_hyperparameters": result.model.hyper.as_dict() if result.model else None,
        "hyperparameter_trace": result.hyper_trace,
        "evaluator_fingerprint": evaluator.fingerprint,
        "timing": {"total_s": elapsed, "per_evaluation_file": files["timing"]},
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def cmd_fit(config_path, seed=None, workers=None, output=None, progress=None) -> dict:
    cfg = _override(load_config(config_path), seed, workers, output)
    return run_fit(cfg, progress)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, default=float)
        fh.write("\n")


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    cfg = parse_config(doc["config"])
    return path, doc, cfg


def rebuild(manifest_path):
    """Evaluator, surrogate model and best point of a finished run."""
    path, doc, cfg = load_manifest(manifest_path)
    reference = load_reference(cfg)
    evaluator = build_evaluator(cfg, reference)
    space = evaluator.space
    history = read_history(path.parent / doc["files"]["history"], space)
    ok = [r for r in history if r.status == "ok"]
    train = TrainingSet(space, [r.params for r in ok], [r.cost for r in ok])
    hyper = KernelHyperparams(**doc["final_hyperparameters"])
    model = fit(train, space, hyper=hyper, optimize_hyper=False)
    best = np.array([doc["best"]["params"][n] for n in space.names])
    return path, doc, cfg, evaluator, model, best


def _parse_pairs(cuts, names):
    pairs = []
    for item in cuts:
        parts = tuple(p.strip() for p in item.split(","))
        if len(parts) != 2 or any(p not in names for p in parts) or parts[0] == parts[1]:
            raise UsageError(f"cut {item!r} must name two distinct fitted parameters from {names}")
        pairs.append(parts)
    return pairs


def cmd_landscape(manifest_path, cuts=None, points=None, exact=False, full=False,
                  exact_points=None, workers=None, output=None) -> dict:
    """Surrogate (and optionally exact) cost grids for a finished run."""
    path, doc, cfg, evaluator, model, best = rebuild(manifest_path)
    space = evaluator.space
    points = cfg.landscape.points if points is None else int(points)
    exact_points = cfg.landscape.exact_points if exact_points is None else int(exact_points)
    workers = cfg.workers if workers is None else int(workers)
    thresholds = tuple(cfg.landscape.thresholds)
    out = Path(output) if output is not None else path.parent / "landscape"
    out.mkdir(parents=True, exist_ok=True)
    cache = CostCache(path.parent / "exact_cache.jsonl") if exact else None

    jobs = []
    pairs = list(combinations(space.names, 2)) if cuts is None else _parse_pairs(cuts, space.names)
    if cuts is not None or not full:
        for g in cut_grids(space, best, pairs, points):
            jobs.append(("cut_" + "_".join(g.scanned), g))
    if full:
        g = GridSpec.build(space, space.names, exact_points)
        if g.size > cfg.landscape.max_exact_nodes:
            raise UsageError(f"full grid has {g.size} nodes, above max_exact_nodes "
                             f"{cfg.landscape.max_exact_nodes}")
        jobs.append(("full", g))

    entries = []
    for name, g in jobs:
        land = surrogate_grid(model, g)
        metrics = {"uncertainty_metric": uncertainty_metric(land)}
        if exact:
            ex = exact_grid(evaluator, g, cache=cache, max_nodes=cfg.landscape.max_exact_nodes,
                            workers=workers)
            land.exact = ex.exact
            land.info.update(ex.info)
            metrics["error_metric"] = error_metric(land, land)
        land.thresholds = thresholds
        regions = {}
        for thr in thresholds:
            for source in (("mean", "exact") if exact else ("mean",)):
                r = consistency_region(land, thr, source)
                regions[f"{source}@{thr:g}"] = {"n_nodes": r.n_nodes, "extents": r.extents}
        csv_name, json_name = f"{name}.csv", f"{name}.json"
        write_landscape(land, out / csv_name, out / json_name, metrics)
        entries.append({"name": name, "csv": str(out / csv_name), "manifest": str(out / json_name),
                        "shape": list(g.shape), "metrics": metrics, "regions": regions})
        log.info("%s: %s", name, json.dumps(metrics))

    summary = {"run": str(path), "exact": bool(exact), "landscapes": entries}
    _write_json(out / "summary.json", summary)
    known = {e["csv"] for e in doc.get("landscapes", [])}
    doc["landscapes"] = doc.get("landscapes", []) + [
        {"csv": e["csv"], "manifest": e["manifest"]} for e in entries if e["csv"] not in known]
    _write_json(path, doc)
    return summary


def _parse_assignments(items):
    values = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"expected name=value, got {item!r}")
        try:
            values[key.strip()] = float(value)
        except ValueError as exc:
            raise UsageError(f"{key}: {value!r} is not a number") from exc
    return values


def simulation_params(stage, values):
    """Monomer/dimer parameter objects; missing values default to the reference tables."""
    values = dict(values)
    known = set(MONOMER_NAMES) | (set(DIMER_NAMES) if stage == "dimer" else set())
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown parameters for the {stage} stage: {unknown}")
    pm = MonomerParams(**{n: values.get(n, getattr(TDI_MONOMER, n)) for n in MONOMER_NAMES})
    if stage == "monomer":
        return pm, None
    pd = DimerParams(**{n: values.get(n, getattr(TDI_DIMERS[0], n)) for n in DIMER_NAMES})
    return pm, pd


def cmd_simulate(stage, values, out_path, reference=None, n_max=12, nu_min=None, nu_max=None,
                 n_nu=None, zero_phonon_origin=True):
    """Write a normalized spectrum; with a reference, return its cost too."""
    pm, pd = simulation_params(stage, values)
    b = BasisSpec(n_max)
    ref = None
    if reference is not None:
        exp = ingest_spectrum(reference)
        lo = exp.nu[0] if nu_min is None else nu_min
        hi = exp.nu[-1] if nu_max is None else nu_max
        nu = np.linspace(lo, hi, len(exp.nu) if n_nu is None else n_nu)
        ref = to_common_grid(exp, nu)
    elif nu_min is not None or nu_max is not None:
        if nu_min is None or nu_max is None:
            raise UsageError("give both --nu-min and --nu-max")
        nu = np.linspace(nu_min, nu_max, 2001 if n_nu is None else n_nu)
    else:
        nu = None
    if stage == "monomer":
        spec = simulate_monomer(pm, b, nu_grid=nu, zero_phonon_origin=zero_phonon_origin)
        comments = [f"stage: monomer", f"params: {json.dumps(pm.as_dict())}"]
    else:
        spec = simulate_dimer(pm, pd, b, nu_grid=nu, zero_phonon_origin=zero_phonon_origin)
        comments = [f"stage: dimer", f"monomer: {json.dumps(pm.as_dict())}",
                    f"dimer: {json.dumps(pd.as_dict())}"]
    cost = spectral_cost(ref, spec) if ref is not None else None
    if cost is not None:
        comments.append(f"cost vs {reference}: {cost!r}")
    write_spectrum(spec, out_path, comments=[*comments, f"n_max: {n_max}"])
    return spec, cost


def _corner_probes(cfg: RunConfig, monomer):
    """Parameter sets at the bound corners where truncation errors are largest."""
    lo = {k: v[0] for k, v in cfg.bounds.items()}
    hi = {k: v[1] for k, v in cfg.bounds.items()}
    pick = lambda name, side: cfg.fixed.get(name, (hi if side else lo).get(name))  # noqa: E731
    probes = []
    if cfg.stage == "monomer":
        for w in (0, 1):
            for g in (0, 1):
                probes.append({"epsilon_e": pick("epsilon_e", 0), "omega_vib": pick("omega_vib", w),
                               "huang_rhys": pick("huang_rhys", 1), "gamma": pick("gamma", g),
                               "sigma_m": pick("sigma_m", 0)})
    else:
        for v in (0, 1):
            for a in (0, 1):
                probes.append({"coupling_v": pick("coupling_v", v), "delta": pick("delta", 1),
                               "alpha": pick("alpha", a), "sigma_d": pick("sigma_d", 0)})
    return probes


def cmd_validate(config_path, probe=True) -> dict:
    """Dry run: schema, files, basis convergence at bound corners, runtime estimate."""
    checks = []

    def add(name, status, detail=""):
        checks.append({"check": name, "status": status, "detail": detail})

    try:
        cfg = load_config(config_path)
        add("config", "ok")
    except FileNotFoundError as exc:
        add("config", "fail", f"cannot read {exc.filename}")
        return {"ok": False, "checks": checks}
    except ConfigError as exc:
        for field_path, msg in exc.problems:
            add(f"config:{field_path}", "fail", msg)
        return {"ok": False, "checks": checks}

    reference = None
    try:
        reference = load_reference(cfg)
        add("spectrum", "ok", f"{cfg.spectrum}: {len(reference.nu)} grid points")
    except (OSError, SpectrumFormatError, ValueError) as exc:
        add("spectrum", "fail", f"{cfg.spectrum}: {exc}")

    monomer = None
    if cfg.stage == "dimer":
        try:
            monomer = cfg.resolve_monomer()
            add("monomer_source", "ok", json.dumps(monomer.as_dict()))
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            add("monomer_source", "fail", f"{cfg.monomer_manifest}: {exc}")

    if probe and reference is not None and (cfg.stage == "monomer" or monomer is not None):
        worst = 0.0
        seconds = []
        for values in _corner_probes(cfg, monomer):
            spectra = []
            for n_max in (cfg.simulation.n_max, cfg.simulation.n_max + 2):
                settings = SimulationSettings(**{**cfg.simulation.as_dict(), "n_max": n_max})
                space = make_space(cfg.stage, cfg.bounds, cfg.fixed)
                fixed = {**cfg.fixed, **values}
                if cfg.stage == "monomer":
                    ev = MonomerEvaluator(reference, space, cfg.fixed, settings)
                else:
                    ev = DimerEvaluator(reference, space, monomer, cfg.fixed, settings)
                t0 = time.perf_counter()
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", CoverageWarning)
                    spectra.append(ev.spectrum(fixed))
                if n_max == cfg.simulation.n_max:
                    seconds.append(time.perf_counter() - t0)
            diff = spectral_cost(spectra[0], spectra[1])
            worst = max(worst, diff)
            if diff > CONVERGENCE_TOL:
                add("basis_convergence", "warn",
                    f"n_max={cfg.simulation.n_max} vs {cfg.simulation.n_max + 2} differ by cost "
                    f"{diff:.3g} at {values}; increase simulation.n_max")
        if worst <= CONVERGENCE_TOL:
            add("basis_convergence", "ok", f"largest change with n_max+2: {worst:.3g}")
        per_eval = float(np.median(seconds))
        if cfg.stage == "dimer":
            per_eval *= 2  # M+ and M- propagations
        gpr_overhead = 0.3 * cfg.budget  # measured desk-scale cost per evaluation at n <= 1000
        add("runtime_estimate", "ok",
            f"~{per_eval * cfg.budget + gpr_overhead:.0f} s for budget {cfg.budget} "
            f"({per_eval:.3g} s per evaluation)")
    ok = not any(c["status"] == "fail" for c in checks)
    return {"ok": ok, "config": str(config_path), "checks": checks}


def build_parser():
    p = argparse.ArgumentParser(prog="dimerfit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more detail")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run one fitting stage from a YAML config")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--workers", type=int)
    f.add_argument("--output", help="run directory (overrides the config)")

    lnd = sub.add_parser("landscape", help="cost grids and consistency regions for a finished run")
    lnd.add_argument("--manifest", required=True, help="run manifest or run directory")
    lnd.add_argument("--cut", action="append", metavar="A,B",
                     help="2-D cut through the best point; repeatable (default: all pairs)")
    lnd.add_argument("--points", type=int, help="nodes per axis for surrogate cuts")
    lnd.add_argument("--full", action="store_true", help="grid over every fitted parameter")
    lnd.add_argument("--exact", action="store_true", help="also evaluate the true cost (cached)")
    lnd.add_argument("--exact-points", type=int, help="nodes per axis for exact and full grids")
    lnd.add_argument("--workers", type=int)
    lnd.add_argument("--output")

    s = sub.add_parser("simulate", help="write one simulated spectrum")
    s.add_argument("--stage", choices=("monomer", "dimer"), default="monomer")
    s.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="parameter value; unset ones take the reference-table values")
    s.add_argument("--reference", help="spectrum file to score against")
    s.add_argument("--n-max", type=int, default=12)
    s.add_argument("--nu-min", type=float)
    s.add_argument("--nu-max", type=float)
    s.add_argument("--n-nu", type=int)
    s.add_argument("--output", required=True)

    v = sub.add_parser("validate", help="dry-run checks of a config")
    v.add_argument("--config", required=True)
    v.add_argument("--no-probe", action="store_true", help="skip the basis convergence probe")
    return p


def _progress(it, model, history):
    if it % 10 == 0:
        best = min((r.cost for r in history if r.status == "ok"), default=float("nan"))
        log.info("iteration %d: %d evaluations, best cost %.4g", it, len(history), best)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            doc = cmd_fit(args.config, args.seed, args.workers, args.output, _progress)
            print(json.dumps({"best": doc["best"], "manifest": str(Path(doc["config"]["output"]) / MANIFEST)},
                             indent=2))
        elif args.command == "landscape":
            summary = cmd_landscape(args.manifest, args.cut, args.points, args.exact, args.full,
                                    args.exact_points, args.workers, args.output)
            for e in summary["landscapes"]:
                print(f"{e['name']}: {json.dumps(e['metrics'])}")
                for key, r in e["regions"].items():
                    print(f"  {key}: {r['n_nodes']} nodes, extents {json.dumps(r['extents'])}")
        elif args.command == "simulate":
            _, cost = cmd_simulate(args.stage, _parse_assignments(args.param), args.output,
                                   args.reference, args.n_max, args.nu_min, args.nu_max, args.n_nu)
            print(f"wrote {args.output}")
            if cost is not None:
                print(f"cost: {cost:.6g}")
        elif args.command == "validate":
            report = cmd_validate(args.config, probe=not args.no_probe)
            for c in report["checks"]:
                print(f"[{c['status']}] {c['check']}: {c['detail']}".rstrip(": "))
            print("ok" if report["ok"] else "failed")
            return EXIT_OK if report["ok"] else EXIT_INVALID
    except (ConfigError, SpectrumFormatError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
