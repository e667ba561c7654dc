"""
Experiment orchestration: configs, grid-search tuning, method suites.

A suite builds one problem instance, tunes each method's stepsizes on a
power-of-two grid to minimize iterations to a relative-error target, reruns
the winner with full recording, and writes per-method trace CSVs, a
``summary.json`` and ``plotdata/`` files of ``k log10(rel_err)`` pairs.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DivergenceError,
    ErrorSummary,
    PrimalKind,
    Stepsizes,
    Trace,
    UpdateSchedule,
    relative_error,
    run,
    run_errors_only,
)
from .objectives import make_least_squares, make_logistic, make_quadratic_toy
from .topology import degree_weights, erdos_renyi, ring_graph

__all__ = [
    "ConfigError",
    "TuningConfig",
    "ExperimentConfig",
    "SummaryRow",
    "TuneResult",
    "power_grid",
    "build_instance",
    "run_extra",
    "tune",
    "run_method",
    "run_suite",
    "fit_rate",
    "log_linear_fit",
    "setup1_config",
    "setup2_config",
    "write_outputs",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class TuningConfig:
    grid_lo: float = 2.0**-6
    grid_hi: float = 2.0**4
    grid_factor: float = 2.0
    target_rel_err: float = 1e-8
    max_iters: int = 5000
    mu_values: list | None = None  # default: the grid joined with {0}

    def __post_init__(self):
        if not 0 < self.grid_lo <= self.grid_hi:
            raise ConfigError("need 0 < grid_lo <= grid_hi")
        if self.grid_factor <= 1:
            raise ConfigError("grid_factor must exceed 1")
        if not 0 < self.target_rel_err < 1:
            raise ConfigError("target_rel_err must lie in (0, 1)")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be positive")


def power_grid(lo, hi, factor=2.0):
    """``lo, lo*factor, ...`` up to `hi` (inclusive within rounding)."""
    vals = []
    v = lo
    while v <= hi * (1 + 1e-12):
        vals.append(v)
        v *= factor
    return vals


DEFAULT_METHODS = [
    {"name": "EXTRA", "kind": "extra"},
    {"name": "DISH-G", "kind": "constant", "primal": "gradient", "dual": "gradient"},
    {"name": "ESOM-0", "kind": "constant", "primal": "esom", "dual": "gradient"},
    {"kind": "dish_k", "K": "half"},
    {"name": "DISH-N", "kind": "constant", "primal": "newton", "dual": "newton"},
    {"name": "DISH-G&N-U", "kind": "switching", "dist": "uniform", "lo": 5, "hi": 50, "seed": 11},
    {"name": "DISH-G&N-LN", "kind": "switching", "dist": "lognormal", "mean": 2.0, "spread": 4.0,
     "offset": 30.0, "seed": 12},
]

_SETUPS = ("least_squares", "logistic", "quadratic_toy", "custom")


@dataclass
class ExperimentConfig:
    setup: str = "least_squares"
    graph: dict = field(default_factory=lambda: dict(n=10, p=0.7, seed=0))
    problem: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: [dict(m) for m in DEFAULT_METHODS])
    tuning: TuningConfig = field(default_factory=TuningConfig)
    output: str | None = None

    def __post_init__(self):
        if self.setup not in _SETUPS:
            raise ConfigError(f"unknown setup {self.setup!r}")
        if isinstance(self.tuning, dict):
            try:
                self.tuning = TuningConfig(**self.tuning)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        n = self.graph.get("n")
        for m in self.methods:
            if "kind" not in m:
                raise ConfigError(f"method spec without 'kind': {m!r}")
            if m["kind"] == "dish_k":
                if m.get("K") == "half" and n is not None:
                    m["K"] = math.ceil(n / 2)
                elif m.get("K") == "n" and n is not None:
                    m["K"] = n
                m.setdefault("name", f"DISH-{m['K']}")
            m.setdefault("name", m["kind"])
        names = [m["name"] for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")

    @classmethod
    def from_dict(cls, doc):
        known = {"setup", "graph", "problem", "methods", "tuning", "output"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        d = asdict(self)
        return d


def setup1_config(seed=0, **tuning):
    return ExperimentConfig(
        setup="least_squares",
        graph=dict(n=10, p=0.7, seed=seed),
        problem=dict(d=5, N_i=50, rho=1.0, scaling=[10, 10, 0.1, 0.1, 0.1]),
        tuning=TuningConfig(**tuning),
    )


def setup2_config(seed=0, **tuning):
    return ExperimentConfig(
        setup="logistic",
        graph=dict(n=20, p=0.5, seed=seed),
        problem=dict(d=3, N_i=50, rho=1.0, scaling=[10, 0.1, 0.1]),
        tuning=TuningConfig(**tuning),
    )


def build_instance(config):
    g, p = config.graph, config.problem
    try:
        if config.setup == "quadratic_toy":
            centers = p.get("centers")
            if centers is None:
                rng = np.random.default_rng(p.get("seed", g.get("seed", 0)))
                centers = rng.normal(size=(g.get("n", 5), p.get("d", 2)))
            graph = erdos_renyi(g["n"], g["p"], g["seed"]) if "p" in g else ring_graph(len(centers))
            return make_quadratic_toy(centers, topology=degree_weights(graph))
        common = dict(n=g["n"], p=g["p"], d=p["d"], N_i=p["N_i"], rho=p["rho"],
                      scaling=p.get("scaling"), seed=g["seed"])
        if config.setup == "least_squares":
            return make_least_squares(**common)
        if config.setup == "logistic":
            return make_logistic(**common, loc=p.get("loc", 0.0), scale=p.get("scale", 1.0))
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from None
    raise ConfigError("custom setups must be run through the Python API")


# ---------------------------------------------------------------------------
# EXTRA baseline, written against its own recursion


def run_extra(instance, alpha, x0=None, max_iters=5000, stop=1e-8):
    """EXTRA with mixing ``Z`` and ``(I + Z)/2``.

    ``x1 = Z x0 - alpha grad(x0)``;
    ``x_{k+2} = (I + Z) x_{k+1} - (I + Z)/2 x_k - alpha (grad(x_{k+1}) - grad(x_k))``.
    """
    n, d = instance.n, instance.d
    Z = instance.topology.Z
    Zt = 0.5 * (np.eye(n) + Z)
    X_prev = np.zeros((n, d)) if x0 is None else np.asarray(x0, dtype=float).reshape(n, d).copy()
    ref = np.tile(instance.x_opt, (n, 1))
    denom = float(np.linalg.norm(X_prev - ref))
    trace = Trace(method="EXTRA", absolute=denom == 0, initial_error=denom)

    def log(k, X):
        e = relative_error(X.ravel(), ref.ravel(), denom)
        trace.k.append(k)
        trace.rel_err.append(e)
        trace.consensus_residual.append(float(np.linalg.norm(X - Z @ X)))
        trace.kinds.append("")
        return e

    err = log(0, X_prev)
    if stop is not None and err <= stop:
        trace.reached = True
        return trace
    g_prev = instance.gradients(X_prev)
    X = Z @ X_prev - alpha * g_prev
    k = 1
    err = log(k, X)
    while not (stop is not None and err <= stop) and k < max_iters:
        g = instance.gradients(X)
        X, X_prev = X + Z @ X - Zt @ X_prev - alpha * (g - g_prev), X
        g_prev = g
        k += 1
        err = log(k, X)
        if not math.isfinite(err) or err > 1e12:
            raise DivergenceError(k, f"relative error {err:.3g}", trace)
    trace.reached = stop is not None and err <= stop
    trace.state = X.ravel()
    return trace


# ---------------------------------------------------------------------------
# tuning


@dataclass
class TuneResult:
    steps: Stepsizes | float
    iterations: int | None
    final_error: float
    reached: bool
    evaluated: int = 0
    diverged: int = 0

    @property
    def flag(self):
        return "targeted" if self.reached else "untargeted"


def _uses_gradient_primal(schedule):
    return any(k.primal is PrimalKind.GRADIENT for i in range(schedule.n) for k in schedule.possible_kinds(i))


def _candidates(method, schedule, tuning):
    grid = power_grid(tuning.grid_lo, tuning.grid_hi, tuning.grid_factor)
    if method.get("kind") == "extra":
        return [(a,) for a in grid]
    mus = tuning.mu_values if tuning.mu_values is not None else [0.0] + grid
    a_grid = grid if _uses_gradient_primal(schedule) else [1.0]
    return [(a, b, mu) for a in a_grid for b in grid for mu in mus]


def _attempt(instance, method, schedule, params, max_iters, target, x0=None, resume=None):
    if method.get("kind") == "extra":
        tr = run_extra(instance, params[0], x0=x0, max_iters=max_iters, stop=target)
        return ErrorSummary(tr.iterations, tr.rel_err[-1], tr.reached)
    a, b, mu = params
    steps = Stepsizes.uniform(instance.n, a, b, mu, a_newton=1.0)
    return run_errors_only(instance, schedule, steps, x0=x0, max_iters=max_iters, stop=target, resume=resume)


def _to_steps(instance, method, params):
    if method.get("kind") == "extra":
        return float(params[0])
    a, b, mu = params
    return Stepsizes.uniform(instance.n, a, b, mu, a_newton=1.0)


def tune(instance, method, tuning=None, schedule=None, x0=None):
    """Exhaustive grid search for the fewest iterations to the target error.

    `method` is a method spec mapping (or an :class:`UpdateSchedule`). The
    stepsizes ``(a, b, mu)`` are uniform across agents; Newton-type primal
    iterations always use ``a = 1``. Ties go to the smaller final error,
    then the smaller ``a``, then grid order. Candidates that cannot beat the
    incumbent are cut off early, which does not change the winner.
    """
    tuning = tuning or TuningConfig()
    if isinstance(method, UpdateSchedule):
        schedule, method = method, dict(method.spec, name=method.name)
    if schedule is None and method.get("kind") != "extra":
        schedule = UpdateSchedule.from_spec(method, instance.n)
    target = tuning.target_rel_err
    cands = _candidates(method, schedule, tuning)
    # Iterative deepening on the iteration cap: a round that finds any
    # targeted candidate is exact, because every other candidate was given
    # at least as many iterations as the winner needed. Divergence found
    # under a small cap is permanent, so those points are skipped later, and
    # unfinished DISH runs are resumed rather than restarted.
    caps = [c for c in (100, 400, 1600) if c < tuning.max_iters] + [tuning.max_iters]
    dead = set()
    partial = {}
    for cap_round in caps:
        best_key, best = None, None
        for idx, params in enumerate(cands):
            if idx in dead:
                continue
            cap = cap_round
            if best is not None and best.reached:
                cap = min(cap, best.iterations)
            prev = partial.get(idx)
            if prev is not None and prev.iterations > cap:
                prev = None
            try:
                tr = _attempt(instance, method, schedule, params, cap, target, x0, prev)
            except (DivergenceError, np.linalg.LinAlgError):
                dead.add(idx)
                continue
            if tr.x is not None:
                partial[idx] = tr
            err = tr.final_error
            if best is not None and best.reached and not tr.reached:
                continue
            key = (0 if tr.reached else 1, tr.iterations if tr.reached else 0, err, params[0], idx)
            if best_key is None or key < best_key:
                best_key = key
                best = TuneResult(_to_steps(instance, method, params), tr.iterations if tr.reached else None,
                                  err, tr.reached)
        if best is not None and best.reached:
            break
    diverged = len(dead)
    if best is None:
        raise DivergenceError(0, "every grid point diverged")
    best.evaluated = len(cands)
    best.diverged = diverged
    return best


# ---------------------------------------------------------------------------
# rate fit


def log_linear_fit(k, err, discard=0.1, lo=1e-12, hi=1.0):
    """Least-squares line through ``(k, log err)``.

    Keeps points with ``lo < err < hi`` after dropping the first `discard`
    fraction of iterations. Returns ``(slope, intercept, r2)``.
    """
    k = np.asarray(k, dtype=float)
    err = np.asarray(err, dtype=float)
    if k.size:
        start = k[0] + discard * (k[-1] - k[0])
        keep = (k >= start) & (err > lo) & (err < hi)
        k, err = k[keep], err[keep]
    if k.size < 10:
        raise ValueError("insufficient points for a rate fit")
    y = np.log(err)
    A = np.vstack([k, np.ones_like(k)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # a flat series has zero variance up to rounding of the logs
    flat = ss_tot <= (1e-12 * float(np.max(np.abs(y)))) ** 2 * y.size
    r2 = 1.0 if flat else 1.0 - float(resid @ resid) / ss_tot
    return float(slope), float(intercept), r2


def fit_rate(trace):
    """Slope of ``log(rel_err)`` against ``k`` over the linear regime."""
    return log_linear_fit(trace.k, trace.rel_err)[0]


# ---------------------------------------------------------------------------
# suites


@dataclass
class SummaryRow:
    method: str
    a: float | None
    b: float | None
    mu: float | None
    iterations: int | str
    final_rel_err: float
    slope: float | None
    r2: float | None = None
    status: str = "ok"


def run_method(instance, method, tuning, x0=None):
    """Tune one method, rerun the winner with full recording; returns ``(SummaryRow, Trace)``."""
    name = method["name"]
    schedule = None if method["kind"] == "extra" else UpdateSchedule.from_spec(method, instance.n)
    result = tune(instance, method, tuning, schedule, x0)
    if method["kind"] == "extra":
        trace = run_extra(instance, result.steps, x0=x0, max_iters=tuning.max_iters, stop=tuning.target_rel_err)
        a, b, mu = result.steps, None, None
    else:
        trace = run(instance, schedule, result.steps, x0=x0, max_iters=tuning.max_iters,
                    stop=tuning.target_rel_err)
        s = result.steps
        a, b, mu = float(s.a[0]), float(s.b[0]), float(s.mu)
    trace.method = name
    try:
        slope, _, r2 = log_linear_fit(trace.k, trace.rel_err)
    except ValueError:
        slope, r2 = None, None
    iters = trace.iterations if trace.reached else "not reached"
    row = SummaryRow(name, a, b, mu, iters, trace.rel_err[-1], slope, r2,
                     "ok" if trace.reached else "untargeted")
    return row, trace


def run_suite(config, instance=None, write=True):
    """Tune and run every method in `config`; one failing method does not stop the rest."""
    instance = instance if instance is not None else build_instance(config)
    results = []
    for method in config.methods:
        try:
            row, trace = run_method(instance, method, config.tuning)
        except (DivergenceError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("method %s failed: %s", method["name"], exc)
            row = SummaryRow(method["name"], None, None, None, "not reached", float("nan"), None, None,
                             f"failed: {exc}")
            trace = getattr(exc, "trace", None) or Trace(method=method["name"])
        results.append((row, trace))
    if write and config.output:
        write_outputs(results, config.output)
    return results


def _safe_name(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def write_outputs(results, out_dir):
    out = Path(out_dir)
    (out / "plotdata").mkdir(parents=True, exist_ok=True)
    for row, trace in results:
        stem = _safe_name(row.method)
        trace.to_csv(out / f"{stem}.csv")
        lines = [f"{k} {math.log10(e):.17g}" for k, e in zip(trace.k, trace.rel_err) if e > 0]
        (out / "plotdata" / f"{stem}.dat").write_text("\n".join(lines) + ("\n" if lines else ""))
    summary = [asdict(r) for r in (row for row, _ in results)]
    (out / "summary.json").write_text(json.dumps(summary, indent=2, allow_nan=True) + "\n")
