"""
Acceptance checks for the library.

Every check returns a :class:`CheckResult` and never raises on a failed
comparison, so a caller can print one line per check and decide what to do
with failures. The reference recursions used for the special-case checks are
written against dense matrices here, independently of :mod:`dish.core`.

``python -m dish verify`` (or ``dish verify``) runs the fast subset.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    TheoryMonitor,
    constant_catalog,
    envelope_constant,
    dual_newton_step_exact,
    dual_value_grad,
    lagrangian_hessian,
    merit,
    optimal_dual_value,
    theoretical_stepsizes,
)
from .core import (
    ESOM0,
    GRADIENT,
    NEWTON,
    DivergenceError,
    RunState,
    Stepsizes,
    UpdateKind,
    UpdateSchedule,
    exchange,
    init_agents,
    run,
    run_errors_only,
    stack_agents,
    step_compact,
    step_distributed,
)
from .harness import run_suite, setup1_config, setup2_config
from .objectives import make_least_squares, make_logistic, make_quadratic_toy
from .topology import erdos_renyi, ring_graph

__all__ = [
    "CheckResult",
    "toy_instance",
    "scaled_setup1",
    "theory_runs",
    "check_contraction",
    "check_exact_convergence",
    "check_engine_equivalence",
    "check_special_cases",
    "check_dual_calculus",
    "check_bound_suite",
    "check_reproduction",
    "check_propositions",
    "run_checks",
]

CONTRACTION_TOL = 1e-9
PROPOSITION_TOL = 1e-7
EXACT_TARGET = 1e-6
EXACT_MAX_ITERS = 200_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict, repr=False)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def toy_instance(n=5, d=2, seed=0):
    """Quadratic toy on a ring with standard normal centers."""
    centers = np.random.default_rng(seed).normal(size=(n, d))
    return make_quadratic_toy(centers, graph=ring_graph(n))


def scaled_setup1(seed=0):
    """Least squares with 6 agents, 3 features and 20 samples per agent."""
    return make_least_squares(n=6, p=0.7, d=3, N_i=20, rho=1.0, scaling=[10, 10, 0.1], seed=seed)


def theory_schedules(n, seed=0):
    return {
        "all-gradient": UpdateSchedule.constant(n, GRADIENT),
        "all-Newton": UpdateSchedule.constant(n, NEWTON),
        "DISH-2": UpdateSchedule.dish_k(n, 2),
        "switching-U[5,50]": UpdateSchedule.switching(n, "uniform", 5, 50, seed=seed),
    }


def _theory_cases():
    for label, inst in (("toy", toy_instance()), ("setup1-scaled", scaled_setup1())):
        for mu in (0.0, 1.0):
            for sname, sched in theory_schedules(inst.n).items():
                yield f"{label} mu={mu:g} {sname}", inst, mu, sched


_THEORY_CACHE = {}


def theory_runs(iters=300):
    """Short runs under certified stepsizes, tracking the merit and the one-step inequalities.

    Results are cached per `iters` because two checks read them.
    """
    if iters in _THEORY_CACHE:
        return _THEORY_CACHE[iters]
    out = []
    for label, inst, mu, sched in _theory_cases():
        cert = theoretical_stepsizes(constant_catalog(inst, mu, sched), sched)
        mon = TheoryMonitor(inst, mu, sched, cert.steps, cert.catalog, cert.rho, propositions=True)
        trace = run(inst, sched, cert.steps, max_iters=iters, stop=None, monitor=mon)
        out.append(dict(label=label, instance=inst, mu=mu, schedule=sched, cert=cert, trace=trace,
                        contraction=np.array(mon.contraction_slack),
                        prop1=np.array(trace.column("prop1_slack")[:-1], dtype=float),
                        prop2=np.array(trace.column("prop2_slack")[:-1], dtype=float)))
    _THEORY_CACHE[iters] = out
    return out


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_contraction(iters=300):
    """Merit contraction by ``1 - rho`` at every step of every theory run."""
    runs = theory_runs(iters)
    worst = min(runs, key=lambda r: r["contraction"].min())
    ok = all(r["contraction"].min() >= -CONTRACTION_TOL for r in runs)
    bad = [r["label"] for r in runs if r["contraction"].min() < -CONTRACTION_TOL]
    detail = (f"{len(runs)} runs x {iters} steps, worst slack {worst['contraction'].min():.3e} "
              f"({worst['label']})")
    if bad:
        detail += f"; violated in {bad}"
    return CheckResult("1 contraction", ok, detail,
                       data={r["label"]: float(r["contraction"].min()) for r in runs})


@_timed
def check_propositions(iters=300):
    """Both one-step inequalities hold along the theory runs."""
    runs = theory_runs(iters)
    lo1 = min(float(np.min(r["prop1"])) for r in runs)
    lo2 = min(float(np.min(r["prop2"])) for r in runs)
    ok = lo1 >= -PROPOSITION_TOL and lo2 >= -PROPOSITION_TOL
    return CheckResult("8 proposition diagnostics", ok,
                       f"min prop1 slack {lo1:.3e}, min prop2 slack {lo2:.3e}")


@_timed
def check_exact_convergence(max_iters=EXACT_MAX_ITERS, target=EXACT_TARGET):
    """Theory runs reach the target and stay under the squared-error envelope."""
    rows = {}
    for label, inst, mu, sched in _theory_cases():
        cert = theoretical_stepsizes(constant_catalog(inst, mu, sched), sched)
        state0 = RunState(np.zeros(inst.n * inst.d), np.zeros(inst.n * inst.d), 0)
        delta0 = merit(inst, mu, state0, optimal_dual_value(inst)).delta
        c = envelope_constant(cert.catalog, delta0)
        init = float(np.linalg.norm(inst.x_opt_stacked))
        try:
            tr = run_errors_only(inst, sched, cert.steps, max_iters=max_iters, stop=target, history=True)
        except DivergenceError as exc:
            rows[label] = dict(reached=False, envelope_ok=False, iterations=exc.k, rel_err=math.inf)
            continue
        k = np.arange(len(tr.history), dtype=float)
        sq = (np.asarray(tr.history) * init) ** 2
        # the envelope in log space avoids underflow of (1 - rho)^k
        log_env = math.log(c) + k * math.log1p(-cert.rho)
        env_ok = bool(np.all(np.log(np.maximum(sq, 1e-300)) <= log_env + 1e-9))
        rows[label] = dict(reached=tr.reached, envelope_ok=env_ok, iterations=tr.iterations,
                           rel_err=tr.final_error, rho=cert.rho)
    missed = [lab for lab, r in rows.items() if not r["reached"]]
    env_bad = [lab for lab, r in rows.items() if not r["envelope_ok"]]
    ok = not missed and not env_bad
    detail = f"{len(rows) - len(missed)}/{len(rows)} runs reach {target:g} within {max_iters}"
    if missed:
        worst = max(missed, key=lambda lab: rows[lab]["rel_err"])
        detail += f"; worst miss {worst} at rel err {rows[worst]['rel_err']:.3e}"
    detail += f"; envelope {'holds' if not env_bad else 'violated in ' + str(env_bad)}"
    return CheckResult("2 exact convergence", ok, detail, data=rows)


def _random_config(rng, idx):
    kind = idx % 3
    n = int(rng.integers(3, 8))
    d = int(rng.integers(1, 4))
    seed = int(rng.integers(0, 2**31))
    if kind == 0:
        inst = make_quadratic_toy(rng.normal(size=(n, d)), graph=erdos_renyi(n, 0.6, seed))
    elif kind == 1:
        inst = make_least_squares(n=n, p=0.6, d=d, N_i=8, rho=1.0, seed=seed)
    else:
        inst = make_logistic(n=n, p=0.6, d=d, N_i=8, rho=1.0, seed=seed)
    choice = idx % 4
    if choice == 0:
        sched = UpdateSchedule.constant(n, [GRADIENT, NEWTON, ESOM0][int(rng.integers(3))])
    elif choice == 1:
        sched = UpdateSchedule.dish_k(n, int(rng.integers(0, n + 1)))
    elif choice == 2:
        sched = UpdateSchedule.switching(n, "uniform", 2, 6, seed=seed)
    else:
        kinds = [UpdateKind.parse(p, q) for p, q in
                 zip(rng.choice(["gradient", "newton", "esom"], n), rng.choice(["gradient", "newton"], n))]
        sched = UpdateSchedule.per_agent(kinds)
    steps = Stepsizes(rng.uniform(0.02, 0.2, n), rng.uniform(0.02, 0.2, n), float(rng.uniform(0, 1)),
                      a_newton=rng.uniform(0.3, 1.0, n))
    x0 = rng.normal(size=n * d)
    lam0 = rng.normal(size=n * d)
    return inst, sched, steps, x0, lam0


@_timed
def check_engine_equivalence(configs=20, iters=100, seed=2024):
    """Compact and message-level engines agree coordinatewise."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for idx in range(configs):
        inst, sched, steps, x0, lam0 = _random_config(rng, idx)
        state = RunState(x0.copy(), lam0.copy(), 0)
        agents = init_agents(inst, x0, lam0)
        for _ in range(iters):
            state = step_compact(state, inst, sched, steps)
            agents = step_distributed(agents, exchange(agents), inst, sched, steps)
            other = stack_agents(agents)
            worst = max(worst, float(np.max(np.abs(state.x - other.x))),
                        float(np.max(np.abs(state.lam - other.lam))))
    return CheckResult("3 engine equivalence", worst <= 1e-12,
                       f"{configs} configurations x {iters} steps, max deviation {worst:.2e}")


def arrow_hurwicz_reference(instance, a, b, mu, x0, lam0, iters):
    """Dense Arrow-Hurwicz-Uzawa iteration on the augmented Lagrangian."""
    n, d = instance.n, instance.d
    W = np.kron(np.eye(n) - instance.topology.Z, np.eye(d))
    A = np.kron(np.diag(a), np.eye(d))
    B = np.kron(np.diag(b), np.eye(d))
    x, lam = x0.copy(), lam0.copy()
    out = []
    for _ in range(iters):
        g = instance.gradients(x).ravel()
        x, lam = x - A @ (g + W @ lam + mu * W @ x), lam + B @ W @ x
        out.append((x.copy(), lam.copy()))
    return out


def esom0_reference(instance, a, b, mu, x0, lam0, iters):
    """Dense ESOM-0: primal step preconditioned by the block diagonal of the penalized Hessian."""
    n, d = instance.n, instance.d
    IZ = np.eye(n) - instance.topology.Z
    W = np.kron(IZ, np.eye(d))
    A = np.kron(np.diag(a), np.eye(d))
    B = np.kron(np.diag(b), np.eye(d))
    x, lam = x0.copy(), lam0.copy()
    out = []
    for _ in range(iters):
        H = np.zeros((n * d, n * d))
        for i, Hi in enumerate(instance.hessians(x)):
            H[i * d:(i + 1) * d, i * d:(i + 1) * d] = Hi
        D = H + mu * np.kron(np.diag(np.diag(IZ)), np.eye(d))
        g = instance.gradients(x).ravel()
        x, lam = x - A @ np.linalg.solve(D, g + W @ lam + mu * W @ x), lam + B @ W @ x
        out.append((x.copy(), lam.copy()))
    return out


@_timed
def check_special_cases(iters=50, seed=7):
    """All-gradient DISH against Arrow-Hurwicz, ESOM-kind DISH against ESOM-0."""
    rng = np.random.default_rng(seed)
    cases = [("least squares", make_least_squares(n=6, p=0.6, d=3, N_i=10, rho=1.0, seed=1)),
             ("logistic", make_logistic(n=6, p=0.6, d=3, N_i=10, rho=1.0, seed=1))]
    worst = {"Arrow-Hurwicz": 0.0, "ESOM-0": 0.0}
    for _, inst in cases:
        n, d = inst.n, inst.d
        a = rng.uniform(0.05, 0.2, n)
        b = rng.uniform(0.05, 0.2, n)
        mu = 0.7
        x0, lam0 = rng.normal(size=n * d), rng.normal(size=n * d)
        for label, kind, ref, an in (("Arrow-Hurwicz", GRADIENT, arrow_hurwicz_reference, None),
                                     ("ESOM-0", ESOM0, esom0_reference, a)):
            sched = UpdateSchedule.constant(n, kind)
            steps = Stepsizes(a, b, mu, a_newton=an)
            state = RunState(x0.copy(), lam0.copy(), 0)
            for xr, lr in ref(inst, a, b, mu, x0, lam0, iters):
                state = step_compact(state, inst, sched, steps)
                worst[label] = max(worst[label], float(np.max(np.abs(state.x - xr))),
                                   float(np.max(np.abs(state.lam - lr))))
    ok = all(v <= 1e-12 for v in worst.values())
    return CheckResult("4 special cases", ok,
                       ", ".join(f"{k} max deviation {v:.2e}" for k, v in worst.items()))


def _small_instances():
    return [("toy", toy_instance(), 0.5),
            ("least squares", make_least_squares(n=5, p=0.7, d=3, N_i=10, rho=1.0, seed=2), 1.0),
            ("logistic", make_logistic(n=6, p=0.6, d=3, N_i=10, rho=1.0, seed=2), 0.5)]


@_timed
def check_dual_calculus(points=10, h=1e-5, seed=11):
    """Dual gradient against central differences, and the dual Newton identity."""
    rng = np.random.default_rng(seed)
    worst_fd = worst_identity = 0.0
    for _, inst, mu in _small_instances():
        m = inst.n * inst.d
        for _ in range(points):
            lam = rng.normal(size=m)
            _, grad = dual_value_grad(inst, mu, lam)
            fd = np.empty(m)
            for j in range(m):
                e = np.zeros(m)
                e[j] = h
                fd[j] = (dual_value_grad(inst, mu, lam + e)[0] - dual_value_grad(inst, mu, lam - e)[0]) / (2 * h)
            worst_fd = max(worst_fd, float(np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12)))
        for _ in range(3):
            step = dual_newton_step_exact(inst, mu, rng.normal(size=m), rng.normal(size=m))
            worst_identity = max(worst_identity, step.identity_residual)
    ok = worst_fd <= 1e-5 and worst_identity <= 1e-8
    return CheckResult("5 dual calculus", ok,
                       f"gradient vs finite differences rel err {worst_fd:.2e}; "
                       f"dual Newton identity residual {worst_identity:.2e}")


@_timed
def check_bound_suite(seed=5):
    """Sector bounds of the primal Hessian, dual PL inequality and dual smoothness."""
    rng = np.random.default_rng(seed)
    sector = pl = lip = 0.0  # largest ratio of measured quantity to its bound
    for _, inst, mu in _small_instances():
        m = inst.n * inst.d
        cat = constant_catalog(inst, mu, [{GRADIENT}] * inst.n)
        for _ in range(10):
            ev = np.linalg.eigvalsh(lagrangian_hessian(inst, mu, rng.normal(size=m)))
            sector = max(sector, cat.s / ev[0], ev[-1] / cat.l_L)
        g_star = optimal_dual_value(inst)
        for _ in range(10):
            g, grad = dual_value_grad(inst, mu, rng.normal(size=m))
            pl = max(pl, (g_star - g) / (float(grad @ grad) / (2 * cat.p_g)))
        for _ in range(20):
            l1, l2 = rng.normal(size=m), rng.normal(size=m)
            diff = np.linalg.norm(dual_value_grad(inst, mu, l1)[1] - dual_value_grad(inst, mu, l2)[1])
            lip = max(lip, diff / (cat.l_g * np.linalg.norm(l1 - l2)))
    limit = 1 + 1e-9
    ok = sector <= limit and pl <= limit and lip <= limit
    return CheckResult("6 bound suite", ok,
                       f"worst ratio to bound: sector {sector:.3f}, PL {pl:.3f}, dual Lipschitz {lip:.3f}")


@_timed
def check_reproduction(configs=None, budget=600.0):
    """Tuned suites on both setups: linear error curves and Newton-count ordering."""
    configs = configs or {"setup1": setup1_config(), "setup2": setup2_config()}
    t0 = time.perf_counter()
    per_setup = {}
    linear_bad = []
    for label, cfg in configs.items():
        rows = {row.method: row for row, _ in run_suite(cfg, write=False)}
        for row in rows.values():
            if row.r2 is None or row.r2 < 0.95 or row.slope is None or row.slope >= 0:
                linear_bad.append(f"{label}/{row.method} r2={row.r2}")
        n = cfg.graph["n"]
        half = f"DISH-{math.ceil(n / 2)}"
        it = {name: (r.iterations if isinstance(r.iterations, int) else math.inf) for name, r in rows.items()}
        per_setup[label] = dict(
            iterations=it,
            newton_beats_gradient=it["DISH-N"] <= it["DISH-G"],
            monotone_in_K=it["DISH-G"] >= it[half] >= it["DISH-N"],
            chain=(it["DISH-G"], it[half], it["DISH-N"]),
        )
    elapsed = time.perf_counter() - t0
    a_ok = not linear_bad
    b_ok = all(v["newton_beats_gradient"] for v in per_setup.values())
    c_ok = any(v["monotone_in_K"] for v in per_setup.values())
    t_ok = elapsed < budget
    parts = [f"(a) linear fits {'ok' if a_ok else 'fail: ' + ', '.join(linear_bad)}"]
    parts.append("(b) " + ", ".join(
        f"{k} DISH-N {v['iterations']['DISH-N']} vs DISH-G {v['iterations']['DISH-G']}" for k, v in per_setup.items()))
    parts.append("(c) K chain " + ", ".join(f"{k} {v['chain']}" for k, v in per_setup.items()))
    parts.append(f"time {elapsed:.0f}s")
    return CheckResult("7 qualitative reproduction", a_ok and b_ok and c_ok and t_ok, "; ".join(parts),
                       data=dict(setups=per_setup, a=a_ok, b=b_ok, c=c_ok, time_ok=t_ok, elapsed=elapsed))


FAST_CHECKS = (check_contraction, check_engine_equivalence, check_special_cases, check_dual_calculus,
               check_bound_suite, check_propositions)
SLOW_CHECKS = (check_exact_convergence, check_reproduction)


def run_checks(full=False, report=print):
    """Run the fast checks (all of them with `full`); returns the list of results."""
    results = []
    for fn in FAST_CHECKS + (SLOW_CHECKS if full else ()):
        res = fn()
        results.append(res)
        if report is not None:
            report(res.line())
    return results
