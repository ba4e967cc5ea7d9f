"""Gaussian-process surrogate of the cost landscape and the acquisition loop.

Inputs are mapped to the unit hypercube before anything else, so the model
is invariant under affine rescaling of parameter bounds. The kernel is an
anisotropic squared exponential plus a white-noise term, with a constant
prior mean equal to the mean observed cost.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.stats import qmc

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-10
LENGTH_SCALE_BOUNDS = (1e-2, 1e1)
SIGNAL_VARIANCE_BOUNDS = (1e-4, 4.0)
NOISE_VARIANCE_BOUNDS = (NOISE_FLOOR, 1e-2)
N_HYPER_STARTS = 8
N_ACQ_STARTS = 32
MIN_SEPARATION = 1e-6


class GprFitError(RuntimeError):
    """Kernel matrix could not be factorized even with added jitter."""


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    unit: str = ""


class ParameterSpace:
    """Ordered, bounded box of named parameters."""

    def __init__(self, dims):
        self.dims = tuple(dims)
        if not self.dims:
            raise ValueError("parameter space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        for d in self.dims:
            if not (math.isfinite(d.lower) and math.isfinite(d.upper) and d.lower < d.upper):
                raise ValueError(f"bounds of {d.name!r} must satisfy lower < upper, got "
                                 f"[{d.lower}, {d.upper}]")
        self.lower = np.array([d.lower for d in self.dims], dtype=float)
        self.upper = np.array([d.upper for d in self.dims], dtype=float)

    @classmethod
    def from_bounds(cls, bounds, units=None):
        units = units or {}
        return cls(Dimension(k, float(lo), float(hi), units.get(k, "")) for k, (lo, hi) in bounds.items())

    @property
    def names(self):
        return tuple(d.name for d in self.dims)

    @property
    def n_dims(self):
        return len(self.dims)

    @property
    def span(self):
        return self.upper - self.lower

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.span

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=float) * self.span

    def contains(self, x, tol=1e-9):
        u = self.to_unit(x)
        return bool(np.all(u >= -tol) and np.all(u <= 1 + tol))

    def as_dict(self):
        return {d.name: [d.lower, d.upper] for d in self.dims}

    def __eq__(self, other):
        return isinstance(other, ParameterSpace) and self.dims == other.dims

    def __repr__(self):
        return f"ParameterSpace({self.as_dict()})"


class TrainingSet:
    """Evaluated points (raw coordinates) and their costs."""

    def __init__(self, space: ParameterSpace, inputs=(), costs=()):
        self.space = space
        self._x = []
        self._y = []
        self._seen = {}
        for x, y in zip(inputs, costs):
            self.add(x, y)

    def add(self, x, cost):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.space.n_dims:
            raise ValueError(f"point has {x.size} coordinates, space has {self.space.n_dims}")
        if not self.space.contains(x):
            raise ValueError(f"point {x} lies outside the parameter bounds")
        cost = float(cost)
        if not math.isfinite(cost):
            raise ValueError("cost must be finite")
        key = (x + 0.0).tobytes()  # + 0.0 folds -0.0 into 0.0
        known = self._seen.get(key)
        if known is not None and known != cost:
            raise ValueError(f"point {x} already recorded with a different cost ({known} vs {cost})")
        self._seen[key] = cost
        self._x.append(x)
        self._y.append(cost)

    def __len__(self):
        return len(self._y)

    @property
    def inputs(self):
        return np.array(self._x).reshape(len(self._x), self.space.n_dims)

    @property
    def unit_inputs(self):
        return self.space.to_unit(self.inputs)

    @property
    def costs(self):
        return np.array(self._y, dtype=float)


@dataclass(frozen=True)
class KernelHyperparams:
    signal_variance: float
    length_scales: tuple
    noise_variance: float = NOISE_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(v) for v in self.length_scales))
        if self.signal_variance < 0:
            raise ValueError("signal variance must be nonnegative")
        if any(not v > 0 for v in self.length_scales):
            raise ValueError("length scales must be positive")
        if self.noise_variance < NOISE_FLOOR * (1 - 1e-9):
            raise ValueError(f"noise variance below floor {NOISE_FLOOR}")

    def to_log(self):
        return np.log(np.r_[self.signal_variance, self.length_scales, self.noise_variance])

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), tuple(np.exp(theta[1:-1])),
                   max(float(np.exp(theta[-1])), NOISE_FLOOR))

    def as_dict(self):
        return {"signal_variance": self.signal_variance,
                "length_scales": list(self.length_scales),
                "noise_variance": self.noise_variance}


def _log_bounds(n_dims):
    b = [np.log(SIGNAL_VARIANCE_BOUNDS)] + [np.log(LENGTH_SCALE_BOUNDS)] * n_dims
    b.append(np.log(NOISE_VARIANCE_BOUNDS))
    return np.array(b)


def se_kernel(u1, u2, signal_variance, length_scales):
    """Anisotropic squared-exponential kernel between rows of u1 and u2."""
    a = np.asarray(u1) / length_scales
    b = np.asarray(u2) / length_scales
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(d2, 0.0, out=d2)
    return signal_variance * np.exp(-0.5 * d2)


def _cholesky_with_jitter(k, scale, max_tries=7):
    jitter = 0.0
    for attempt in range(max_tries + 1):
        try:
            chol = linalg.cholesky(k + jitter * np.eye(k.shape[0]), lower=True, check_finite=False)
            return chol, jitter
        except linalg.LinAlgError:
            jitter = NOISE_FLOOR * max(scale, 1e-12) * 10.0**attempt
    return None, jitter


class _Objective:
    """Negative log marginal likelihood and its gradient in log-hyperparameters."""

    def __init__(self, u, y):
        self.u = u
        self.y = y
        self.n, self.d = u.shape
        self.sqdiff = (u[:, None, :] - u[None, :, :]) ** 2

    def __call__(self, theta):
        s2 = math.exp(theta[0])
        ls = np.exp(theta[1:-1])
        noise = max(math.exp(theta[-1]), NOISE_FLOOR)
        scaled = self.sqdiff / ls**2
        kf = s2 * np.exp(-0.5 * scaled.sum(-1))
        k = kf + noise * np.eye(self.n)
        chol, _ = _cholesky_with_jitter(k, s2)
        if chol is None:
            return 1e25, np.zeros_like(theta)
        alpha = linalg.cho_solve((chol, True), self.y, check_finite=False)
        nlml = (0.5 * self.y @ alpha + np.log(np.diag(chol)).sum()
                + 0.5 * self.n * math.log(2 * math.pi))
        kinv = linalg.cho_solve((chol, True), np.eye(self.n), check_finite=False)
        a = np.outer(alpha, alpha) - kinv
        akf = a * kf
        grad = np.empty_like(theta)
        grad[0] = -0.5 * akf.sum()
        grad[1:-1] = -0.5 * np.einsum("ij,ijd->d", akf, scaled)
        grad[-1] = -0.5 * noise * np.trace(a)
        return float(nlml), grad


@dataclass
class GprModel:
    space: ParameterSpace
    train: TrainingSet
    hyper: KernelHyperparams
    factorization: np.ndarray
    alpha_weights: np.ndarray
    prior_mean: float
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")
    fit_info: dict = field(default_factory=dict)
    unit_inputs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.unit_inputs is None:
            self.unit_inputs = self.train.unit_inputs

    def predict_unit(self, u, return_std=True):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        ks = se_kernel(u, self.unit_inputs, self.hyper.signal_variance,
                       np.asarray(self.hyper.length_scales))
        mean = self.prior_mean + ks @ self.alpha_weights
        if not return_std:
            return mean
        v = linalg.solve_triangular(self.factorization, ks.T, lower=True, check_finite=False)
        var = self.hyper.signal_variance - np.einsum("ij,ij->j", v, v)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def predict_many(self, x, return_std=True):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.predict_unit(self.space.to_unit(x), return_std)


def _factorize(u, y, hyper):
    n = len(y)
    k = se_kernel(u, u, hyper.signal_variance, np.asarray(hyper.length_scales))
    k[np.diag_indices(n)] += hyper.noise_variance
    chol, jitter = _cholesky_with_jitter(k, hyper.signal_variance)
    if chol is None:
        w = np.linalg.eigvalsh(k)
        raise GprFitError(
            f"kernel matrix not positive definite after jitter {jitter:.3g}: n={n}, "
            f"eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}], hyperparameters {hyper.as_dict()}"
        )
    alpha = linalg.cho_solve((chol, True), y, check_finite=False)
    nlml = 0.5 * y @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * math.log(2 * math.pi)
    return chol, alpha, jitter, -float(nlml)


def _hyper_starts(n_dims, n_starts, seed):
    bounds = _log_bounds(n_dims)
    sampler = qmc.Sobol(bounds.shape[0], scramble=True, seed=np.random.default_rng([seed, 7919]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pts = sampler.random(n_starts)
    return bounds[:, 0] + pts * (bounds[:, 1] - bounds[:, 0])


def fit(train: TrainingSet, space: ParameterSpace | None = None, *, hyper=None,
        optimize_hyper=True, n_restarts=N_HYPER_STARTS, seed=0, maxiter=200,
        max_hyper_points=None) -> GprModel:
    """Fit the GP to ``train``; hyperparameters maximize the log marginal likelihood.

    The search runs L-BFGS-B on log-hyperparameters from ``n_restarts``
    low-discrepancy starts inside the bounded box (the first start is
    replaced by ``hyper`` when given). With ``optimize_hyper=False`` the
    given ``hyper`` is used as is.

    ``max_hyper_points`` caps the number of points entering the likelihood
    search: an evenly strided subset of the training order is used, while
    the final factorization always covers every point.
    """
    space = train.space if space is None else space
    if space != train.space:
        raise ValueError("training set belongs to a different parameter space")
    if len(train) < 2:
        raise ValueError("need at least two training points")
    u = train.unit_inputs
    y_raw = train.costs
    prior_mean = float(y_raw.mean())
    y = y_raw - prior_mean
    d = space.n_dims
    info = {}

    if optimize_hyper:
        bounds = _log_bounds(d)
        starts = _hyper_starts(d, n_restarts, seed)
        if hyper is not None:
            starts[0] = np.clip(hyper.to_log(), bounds[:, 0], bounds[:, 1])
        sub = np.arange(len(y))
        if max_hyper_points is not None and len(y) > max_hyper_points:
            sub = np.unique(np.linspace(0, len(y) - 1, max_hyper_points).round().astype(int))
        objective = _Objective(u[sub], y_raw[sub] - y_raw[sub].mean())
        best_theta, best_val = None, np.inf
        trace = []
        for theta0 in starts:
            f0, _ = objective(theta0)
            res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter})
            theta, val = (res.x, float(res.fun)) if res.fun <= f0 else (theta0, f0)
            trace.append((-f0, -val))
            if val < best_val:
                best_theta, best_val = theta, val
        hyper = KernelHyperparams.from_log(best_theta)
        info["starts"] = trace
        info["n_hyper_points"] = int(len(sub))
    elif hyper is None:
        raise ValueError("fixed-hyperparameter fit needs `hyper`")

    chol, alpha, jitter, lml = _factorize(u, y, hyper)
    return GprModel(space, train, hyper, chol, alpha, prior_mean, jitter, lml, info, u)


def predict(m: GprModel, p):
    """Posterior mean cost and standard deviation at one point (raw coordinates)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if not m.space.contains(p):
        raise ValueError(f"query {p} lies outside the parameter bounds")
    mean, std = m.predict_many(p[None, :])
    return float(mean[0]), float(std[0])


def acquisition(m: GprModel, u, n_sc):
    """Predicted cost minus n_sc times predicted uncertainty (unit coordinates)."""
    mean, std = m.predict_unit(u)
    return mean - np.asarray(n_sc) * std


def _compass_search(m, x0, n_sc, step=0.1, tol=1e-6, max_iter=200):
    """Batched derivative-free coordinate search, one independent run per row of x0."""
    x = np.array(x0, dtype=float)
    s, d = x.shape
    n_sc = np.asarray(n_sc, dtype=float)
    f = acquisition(m, x, n_sc)
    h = np.full(s, step)
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    for _ in range(max_iter):
        idx = np.nonzero(h >= tol)[0]
        if idx.size == 0:
            break
        trial = np.clip(x[idx, None, :] + h[idx, None, None] * dirs[None], 0.0, 1.0)
        ft = acquisition(m, trial.reshape(-1, d), np.repeat(n_sc[idx], 2 * d))
        ft = ft.reshape(idx.size, 2 * d)
        j = np.argmin(ft, axis=1)
        best = ft[np.arange(idx.size), j]
        better = best < f[idx]
        moved = idx[better]
        x[moved] = trial[better, j[better]]
        f[moved] = best[better]
        h[idx[~better]] *= 0.5
    return x, f


def _far_enough(u, taken, min_separation):
    if len(taken) == 0:
        return True
    dist = np.sqrt(((np.asarray(taken) - u) ** 2).sum(1)).min()
    return dist >= min_separation


def propose(m: GprModel, n_sc_values, *, n_starts=N_ACQ_STARTS, n_candidates=1024, seed=0,
            min_separation=MIN_SEPARATION, exclude=None, tol=1e-5, max_iter=200):
    """One new point per n_sc value, minimizing ``mean - n_sc * std``.

    Local searches start from the ``n_starts`` best points of a scrambled
    Sobol pool (plus the best training points). A result closer than
    ``min_separation`` (unit cube) to a training input, an excluded point or
    an earlier proposal is replaced by the runner-up.
    """
    n_sc_values = [float(v) for v in n_sc_values]
    if not n_sc_values:
        raise ValueError("need at least one n_sc value")
    d = m.space.n_dims
    sampler = qmc.Sobol(d, scramble=True, seed=np.random.default_rng([seed, 104729]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pool = sampler.random(n_candidates)
    u_train = m.unit_inputs
    order = np.argsort(m.train.costs, kind="stable")[:8]
    pool = np.vstack([pool, u_train[order]])
    mean, std = m.predict_unit(pool)

    starts, labels = [], []
    for j, v in enumerate(n_sc_values):
        f = mean - v * std
        best = np.argsort(f, kind="stable")[:n_starts]
        starts.append(pool[best])
        labels.append(np.full(len(best), j))
    starts = np.vstack(starts)
    labels = np.concatenate(labels)
    nsc = np.array(n_sc_values)[labels]
    x, f = _compass_search(m, starts, nsc, tol=tol, max_iter=max_iter)

    taken = list(u_train)
    if exclude is not None and len(exclude):
        taken += list(m.space.to_unit(np.atleast_2d(exclude)))
    chosen = []
    for j, v in enumerate(n_sc_values):
        mine = labels == j
        cand = x[mine][np.argsort(f[mine], kind="stable")]
        fpool = mean - v * std
        cand = np.vstack([cand, pool[np.argsort(fpool, kind="stable")]])
        pick = None
        for u in cand:
            if _far_enough(u, taken, min_separation):
                pick = u
                break
        if pick is None:
            pick = np.random.default_rng([seed, j]).random(d)
        taken.append(pick)
        chosen.append(pick)
    return m.space.from_unit(np.array(chosen))


def initial_design(space: ParameterSpace, n_points, seed=0):
    """Scrambled Sobol points mapped into the bounds."""
    sampler = qmc.Sobol(space.n_dims, scramble=True, seed=np.random.default_rng([seed, 1]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = sampler.random(n_points)
    return space.from_unit(u)


@dataclass
class EvaluationRecord:
    index: int
    params: np.ndarray
    cost: float
    source: str
    status: str = "ok"
    message: str = ""
    wall_time: float = 0.0


@dataclass
class OptimizationResult:
    best_point: np.ndarray
    best_cost: float
    model: GprModel | None
    history: list
    space: ParameterSpace
    seed: int
    hyper_trace: list = field(default_factory=list)

    def training_set(self):
        ok = [r for r in self.history if r.status == "ok"]
        return TrainingSet(self.space, [r.params for r in ok], [r.cost for r in ok])


def _evaluate(evaluator, x):
    start = time.perf_counter()
    try:
        cost = float(evaluator(x))
        if not math.isfinite(cost):
            raise ValueError(f"evaluator returned non-finite cost {cost}")
        status, message = "ok", ""
    except Exception as exc:  # failures are recorded, the loop goes on
        cost, status, message = float("nan"), "failed", f"{type(exc).__name__}: {exc}"
    return cost, status, message, time.perf_counter() - start


def optimize(evaluator, space: ParameterSpace, budget, n_sc_values=(0, 1, 2, 3), seed=0, *,
             n_initial=None, workers=1, refit_growth=1.25, max_hyper_points=200,
             refit_restarts=4, callback=None, propose_options=None) -> OptimizationResult:
    """Surrogate-guided minimization of ``evaluator`` over ``space``.

    An initial Sobol batch of ``2*D + 2`` points is followed by rounds of
    {fit, propose one point per n_sc, evaluate} until ``budget`` evaluations
    are used. Hyperparameters are re-optimized whenever the training set
    has grown by the factor ``refit_growth`` since the last optimization and
    are otherwise carried over with a fresh factorization. The likelihood
    search sees at most ``max_hyper_points`` points (see ``fit``); later
    searches warm-start from the current values with ``refit_restarts`` starts.

    ``callback(iteration, model, history)`` runs after every fit.
    """
    d = space.n_dims
    n_initial = 2 * d + 2 if n_initial is None else n_initial
    if budget < n_initial:
        raise ValueError(f"budget {budget} is smaller than the initial design ({n_initial})")
    propose_options = dict(propose_options or {})
    history = []
    hyper_trace = []

    def run_batch(points, sources):
        if workers > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda x: _evaluate(evaluator, x), points))
        else:
            results = [_evaluate(evaluator, x) for x in points]
        for x, src, (cost, status, message, wall) in zip(points, sources, results):
            history.append(EvaluationRecord(len(history), np.asarray(x, dtype=float), cost, src,
                                            status, message, wall))

    run_batch(list(initial_design(space, n_initial, seed)), ["initial"] * n_initial)

    model, hyper, last_opt_n = None, None, 0
    iteration = 0
    while len(history) < budget:
        ok = [r for r in history if r.status == "ok"]
        failed = [r.params for r in history if r.status != "ok"]
        if len(ok) < 2:
            extra = initial_design(space, n_initial + len(history), seed)[len(history):]
            run_batch(list(extra[: budget - len(history)]), ["initial"] * min(len(extra), budget - len(history)))
            continue
        train = TrainingSet(space, [r.params for r in ok], [r.cost for r in ok])
        reoptimize = hyper is None or len(ok) >= refit_growth * last_opt_n
        model = fit(train, space, hyper=hyper, optimize_hyper=reoptimize, seed=seed + iteration,
                    n_restarts=N_HYPER_STARTS if hyper is None else refit_restarts,
                    max_hyper_points=max_hyper_points)
        hyper = model.hyper
        if reoptimize:
            last_opt_n = len(ok)
        hyper_trace.append({"iteration": iteration, "n_train": len(ok), "optimized": reoptimize,
                            **hyper.as_dict(), "log_marginal_likelihood": model.log_marginal_likelihood,
                            "jitter": model.jitter})
        if callback is not None:
            callback(iteration, model, history)
        remaining = budget - len(history)
        values = list(n_sc_values)[:remaining]
        points = propose(model, values, seed=seed + iteration,
                         exclude=np.array(failed) if failed else None, **propose_options)
        run_batch(list(points), [f"nsc={v:g}" for v in values])
        log.debug("iteration %d: %d evaluations, best %.4g", iteration, len(history),
                  min((r.cost for r in history if r.status == "ok"), default=float("nan")))
        iteration += 1

    ok = [r for r in history if r.status == "ok"]
    if not ok:
        raise RuntimeError("every evaluation failed")
    best = min(ok, key=lambda r: r.cost)
    if len(ok) >= 2:
        train = TrainingSet(space, [r.params for r in ok], [r.cost for r in ok])
        reoptimize = hyper is None or len(ok) >= refit_growth * last_opt_n
        model = fit(train, space, hyper=hyper, optimize_hyper=reoptimize, seed=seed + iteration,
                    n_restarts=N_HYPER_STARTS if hyper is None else refit_restarts,
                    max_hyper_points=max_hyper_points)
        hyper_trace.append({"iteration": iteration, "n_train": len(ok), "optimized": reoptimize,
                            **model.hyper.as_dict(),
                            "log_marginal_likelihood": model.log_marginal_likelihood,
                            "jitter": model.jitter})
        if callback is not None:
            callback(iteration, model, history)
    return OptimizationResult(best.params.copy(), best.cost, model, history, space, seed, hyper_trace)


def _fmt(v):
    return repr(float(v))


def write_history(result_or_history, space: ParameterSpace, path):
    """Deterministic per-evaluation record: index, parameters, cost, source, status."""
    history = getattr(result_or_history, "history", result_or_history)
    lines = [",".join(["index", *space.names, "cost", "source", "status"])]
    for r in history:
        lines.append(",".join([str(r.index), *(_fmt(v) for v in r.params),
                               _fmt(r.cost), r.source, r.status]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_timing(history, path):
    """Wall time per evaluation, kept apart so the history file stays reproducible."""
    history = getattr(history, "history", history)
    with open(path, "w", newline="\n") as fh:
        fh.write("index,wall_time_s,message\n")
        for r in history:
            msg = r.message.replace(",", ";").replace("\n", " ")
            fh.write(f"{r.index},{r.wall_time:.6f},{msg}\n")


def read_history(path, space: ParameterSpace):
    """Inverse of ``write_history``."""
    records = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        expected = ["index", *space.names, "cost", "source", "status"]
        if header != expected:
            raise ValueError(f"history header {header} does not match {expected}")
        d = space.n_dims
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(expected):
                continue
            records.append(EvaluationRecord(int(parts[0]), np.array([float(v) for v in parts[1:1 + d]]),
                                            float(parts[1 + d]), parts[2 + d], parts[3 + d]))
    return records
