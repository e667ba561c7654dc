"""
Hybrid primal-dual iteration engines.

One iteration updates every agent simultaneously from iteration-k values::

    x+      = x - A P (grad f(x) + W lam + mu W x)
    lam+    = lam + B Q W x

with block-diagonal ``P`` and ``Q`` chosen per agent and per iteration. The
compact engine works on stacked ``(n, d)`` arrays; the message-level engine
simulates agents that only see their own state, their neighbors' messages and
one row of ``Z``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .topology import consensus_residual_blocks

__all__ = [
    "PrimalKind",
    "DualKind",
    "UpdateKind",
    "GRADIENT",
    "NEWTON",
    "ESOM0",
    "UpdateSchedule",
    "Stepsizes",
    "RunState",
    "AgentState",
    "Trace",
    "DivergenceError",
    "ProtocolError",
    "primal_update_matrix",
    "dual_update_matrix",
    "update_operators",
    "step_compact",
    "exchange",
    "step_distributed",
    "init_agents",
    "stack_agents",
    "run",
    "run_errors_only",
    "relative_error",
]

DIVERGENCE_LIMIT = 1e12


class PrimalKind(Enum):
    GRADIENT = 0
    NEWTON = 1
    ESOM = 2


class DualKind(Enum):
    GRADIENT = 0
    NEWTON = 1


@dataclass(frozen=True)
class UpdateKind:
    primal: PrimalKind
    dual: DualKind

    @property
    def label(self):
        return "GNE"[self.primal.value] + "GN"[self.dual.value]

    @classmethod
    def parse(cls, primal, dual):
        p = {"gradient": PrimalKind.GRADIENT, "newton": PrimalKind.NEWTON, "esom": PrimalKind.ESOM}[primal]
        q = {"gradient": DualKind.GRADIENT, "newton": DualKind.NEWTON}[dual]
        return cls(p, q)


GRADIENT = UpdateKind(PrimalKind.GRADIENT, DualKind.GRADIENT)
NEWTON = UpdateKind(PrimalKind.NEWTON, DualKind.NEWTON)
ESOM0 = UpdateKind(PrimalKind.ESOM, DualKind.GRADIENT)

_KINDS = [UpdateKind(p, q) for p in PrimalKind for q in DualKind]


def _code(kind):
    return kind.primal.value * 2 + kind.dual.value


class DivergenceError(RuntimeError):
    def __init__(self, k, reason, trace=None):
        super().__init__(f"divergence at iteration {k}: {reason}")
        self.k = k
        self.trace = trace


class ProtocolError(RuntimeError):
    pass


class UpdateSchedule:
    """Which update kind each agent uses at each iteration.

    Internally a schedule maps an iteration index to an integer code per
    agent; use the constructors rather than ``__init__``.
    """

    def __init__(self, n, codes_at, name, possible, spec=None):
        self.n = n
        self._codes_at = codes_at
        self.name = name
        self._possible = possible
        self.spec = spec or {}

    @classmethod
    def constant(cls, n, kind=GRADIENT, name=None):
        codes = np.full(n, _code(kind))
        codes.setflags(write=False)
        label = name or {GRADIENT: "DISH-G", NEWTON: "DISH-N", ESOM0: "ESOM-0"}.get(kind, f"const-{kind.label}")
        spec = dict(kind="constant", primal=kind.primal.name.lower(), dual=kind.dual.name.lower())
        return cls(n, lambda k: codes, label, [{kind}] * n, spec)

    @classmethod
    def per_agent(cls, kinds, name="custom"):
        codes = np.array([_code(k) for k in kinds])
        codes.setflags(write=False)
        return cls(len(kinds), lambda k: codes, name, [{k} for k in kinds])

    @classmethod
    def dish_k(cls, n, K):
        """Agents ``0..K-1`` always Newton-type, the rest always gradient-type."""
        if not 0 <= K <= n:
            raise ValueError("K must lie in [0, n]")
        kinds = [NEWTON] * K + [GRADIENT] * (n - K)
        sched = cls.per_agent(kinds, name=f"DISH-{K}")
        sched.spec = dict(kind="dish_k", K=K)
        return sched

    @classmethod
    def switching(cls, n, dist="uniform", lo=5, hi=50, seed=0, mean=2.0, spread=4.0,
                  offset=30.0, spread_is="variance"):
        """Every agent toggles between gradient and Newton type every ``t_i`` iterations.

        ``t_i ~ U{lo..hi}`` for ``dist="uniform"``; for ``dist="lognormal"``
        ``t_i = round(lognormal(mean, sigma)) + offset`` where `spread` is the
        variance (default) or the standard deviation of the underlying normal.
        Initial kinds are drawn uniformly from the two options.
        """
        rng = np.random.default_rng(seed)
        if dist == "uniform":
            periods = rng.integers(lo, hi + 1, size=n)
        elif dist == "lognormal":
            sigma = math.sqrt(spread) if spread_is == "variance" else float(spread)
            periods = np.rint(rng.lognormal(mean, sigma, size=n) + offset).astype(int)
        else:
            raise ValueError(f"unknown period distribution {dist!r}")
        periods = np.maximum(periods, 1)
        first = rng.integers(0, 2, size=n)
        g, nt = _code(GRADIENT), _code(NEWTON)

        def codes_at(k):
            newton = (first + (k // periods)) % 2 == 1
            return np.where(newton, nt, g)

        spec = dict(kind="switching", dist=dist, lo=lo, hi=hi, seed=seed, mean=mean,
                    spread=spread, offset=offset, spread_is=spread_is)
        sched = cls(n, codes_at, f"DISH-G&N-{'U' if dist == 'uniform' else 'LN'}", [{GRADIENT, NEWTON}] * n, spec)
        sched.periods = periods
        sched.initial = [NEWTON if f else GRADIENT for f in first]
        return sched

    @classmethod
    def from_spec(cls, spec, n):
        """Build from a config mapping such as ``{"kind": "dish_k", "K": 3}``."""
        kind = spec["kind"]
        if kind == "constant":
            sched = cls.constant(n, UpdateKind.parse(spec.get("primal", "gradient"), spec.get("dual", "gradient")))
        elif kind == "dish_k":
            K = spec["K"]
            if isinstance(K, str):
                K = {"n": n, "half": math.ceil(n / 2)}[K]
            sched = cls.dish_k(n, int(K))
        elif kind == "switching":
            keys = ("dist", "lo", "hi", "seed", "mean", "spread", "offset", "spread_is")
            sched = cls.switching(n, **{k: spec[k] for k in keys if k in spec})
        else:
            raise ValueError(f"unknown schedule kind {kind!r}")
        if "name" in spec:
            sched.name = spec["name"]
        return sched

    def codes_at(self, k):
        return self._codes_at(k)

    def kind(self, k, i):
        return _KINDS[int(self._codes_at(k)[i])]

    def kinds_at(self, k):
        return [_KINDS[int(c)] for c in self._codes_at(k)]

    def possible_kinds(self, i):
        return set(self._possible[i])

    def __repr__(self):
        return f"UpdateSchedule({self.name!r}, n={self.n})"


@dataclass
class Stepsizes:
    """Per-agent primal/dual stepsizes and the augmentation penalty.

    ``a_newton`` is the primal stepsize an agent uses on iterations where its
    primal update is Newton-type (or ESOM); ``None`` means 1.
    """

    a: np.ndarray
    b: np.ndarray
    mu: float = 0.0
    a_newton: np.ndarray | None = None

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a_newton is not None:
            self.a_newton = np.atleast_1d(np.asarray(self.a_newton, dtype=float))
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ValueError("stepsizes must be positive")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ValueError("mu must be finite and non-negative")

    @classmethod
    def uniform(cls, n, a, b, mu=0.0, a_newton=None):
        an = None if a_newton is None else np.full(n, float(a_newton))
        return cls(np.full(n, float(a)), np.full(n, float(b)), float(mu), an)

    def primal(self, codes):
        """Effective primal stepsize per agent for the given kind codes."""
        an = np.ones_like(self.a) if self.a_newton is None else self.a_newton
        return np.where(codes // 2 == PrimalKind.GRADIENT.value, self.a, an)


@dataclass
class RunState:
    x: np.ndarray
    lam: np.ndarray
    k: int = 0

    def copy(self):
        return RunState(self.x.copy(), self.lam.copy(), self.k)


def primal_update_matrix(kind, objective, x, mu, z_ii):
    """Local primal update matrix ``P_i`` as an explicit ``d x d`` array."""
    kind = getattr(kind, "primal", kind)
    d = objective.d
    if kind is PrimalKind.GRADIENT:
        return np.eye(d)
    shift = mu if kind is PrimalKind.NEWTON else mu * (1.0 - z_ii)
    M = objective.hessian(x) + shift * np.eye(d)
    return np.linalg.inv(M)


def dual_update_matrix(kind, objective, x, mu):
    kind = getattr(kind, "dual", kind)
    d = objective.d
    if kind is DualKind.GRADIENT:
        return np.eye(d)
    return objective.hessian(x) + mu * np.eye(d)


def update_operators(state, instance, schedule, steps):
    """Blocks of ``A P^k`` and ``B Q^k`` at the given state, shape ``(n, d, d)`` each."""
    n, d = instance.n, instance.d
    X = state.x.reshape(n, d)
    codes = schedule.codes_at(state.k)
    z = np.diag(instance.topology.Z)
    H = instance.hessians(X)
    I = np.eye(d)
    AP = np.empty((n, d, d))
    BQ = np.empty((n, d, d))
    a_eff = steps.primal(codes)
    for i in range(n):
        kind = _KINDS[int(codes[i])]
        if kind.primal is PrimalKind.GRADIENT:
            P = I
        else:
            shift = steps.mu if kind.primal is PrimalKind.NEWTON else steps.mu * (1 - z[i])
            P = np.linalg.inv(H[i] + shift * I)
        Q = I if kind.dual is DualKind.GRADIENT else H[i] + steps.mu * I
        AP[i] = a_eff[i] * P
        BQ[i] = steps.b[i] * Q
    return AP, BQ


class _HessianCache:
    """Holds the Hessian blocks of a constant-Hessian instance."""

    def __init__(self):
        self.H = None

    def get(self, instance, X):
        if self.H is None:
            self.H = instance.hessians(X)
        return self.H


def step_compact(state, instance, schedule, steps, cache=None):
    """One simultaneous primal/dual update on stacked vectors.

    `cache` may be a ``_HessianCache`` (see :func:`run`); it is consulted only
    when every local Hessian is constant.
    """
    n, d = instance.n, instance.d
    Z = instance.topology.Z
    X = state.x.reshape(n, d)
    Lam = state.lam.reshape(n, d)
    WX = consensus_residual_blocks(Z, X)
    R = instance.gradients(X) + consensus_residual_blocks(Z, Lam) + steps.mu * WX

    codes = schedule.codes_at(state.k)
    primal = codes // 2
    dual = codes % 2
    dX, dL = R, WX
    if np.any(codes):
        if cache is not None and instance.constant_hessian:
            H = cache.get(instance, X)
        else:
            H = instance.hessians(X)
        I = np.eye(d)
        newton = np.flatnonzero(primal != PrimalKind.GRADIENT.value)
        if newton.size:
            shift = np.where(primal[newton] == PrimalKind.NEWTON.value, steps.mu,
                             steps.mu * (1.0 - np.diag(Z)[newton]))
            dX = R.copy()
            dX[newton] = np.linalg.solve(H[newton] + shift[:, None, None] * I, R[newton][..., None])[..., 0]
        qn = np.flatnonzero(dual == DualKind.NEWTON.value)
        if qn.size:
            dL = WX.copy()
            dL[qn] = np.einsum("ide,ie->id", H[qn] + steps.mu * I, WX[qn])
    X1 = X - steps.primal(codes)[:, None] * dX
    L1 = Lam + steps.b[:, None] * dL
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(L1))):
        raise DivergenceError(state.k, "non-finite iterate")
    return RunState(X1.ravel(), L1.ravel(), state.k + 1)


# ---------------------------------------------------------------------------
# message-level engine


@dataclass
class AgentState:
    """What agent ``i`` knows: its own copies, its row of Z and its neighbor list."""

    i: int
    x: np.ndarray
    lam: np.ndarray
    z_row: np.ndarray
    neighbors: list
    k: int = 0


def init_agents(instance, x0=None, lambda0=None):
    n, d = instance.n, instance.d
    X = np.zeros((n, d)) if x0 is None else np.asarray(x0, dtype=float).reshape(n, d)
    L = np.zeros((n, d)) if lambda0 is None else np.asarray(lambda0, dtype=float).reshape(n, d)
    Z = instance.topology.Z
    g = instance.topology.graph
    return [AgentState(i, X[i].copy(), L[i].copy(), Z[i].copy(), g.neighbors(i)) for i in range(n)]


def stack_agents(agents):
    x = np.concatenate([a.x for a in agents])
    lam = np.concatenate([a.lam for a in agents])
    return RunState(x, lam, agents[0].k)


def exchange(agents):
    """Synchronous round: every agent sends ``(x_i, lam_i)`` along each incident edge.

    Returns the mailbox ``{(sender, receiver): (x, lam)}`` with ``2|E|`` entries.
    """
    mailbox = {}
    for a in agents:
        for j in a.neighbors:
            mailbox[(a.i, j)] = (a.x.copy(), a.lam.copy())
    return mailbox


def step_distributed(agents, mailbox, instance, schedule, steps):
    out = []
    for a in agents:
        i = a.i
        kind = schedule.kind(a.k, i)
        f = instance.objectives[i]
        zii = a.z_row[i]
        wx = (1.0 - zii) * a.x
        wl = (1.0 - zii) * a.lam
        for j in a.neighbors:
            if (j, i) not in mailbox:
                raise ProtocolError(f"protocol violation: agent {i} is missing the message from {j}")
            xj, lj = mailbox[(j, i)]
            wx = wx - a.z_row[j] * xj
            wl = wl - a.z_row[j] * lj
        P = primal_update_matrix(kind, f, a.x, steps.mu, zii)
        Q = dual_update_matrix(kind, f, a.x, steps.mu)
        ai = steps.a[i] if kind.primal is PrimalKind.GRADIENT else (
            1.0 if steps.a_newton is None else steps.a_newton[i])
        x1 = a.x - ai * P @ (f.gradient(a.x) + wl + steps.mu * wx)
        l1 = a.lam + steps.b[i] * Q @ wx
        out.append(AgentState(i, x1, l1, a.z_row, a.neighbors, a.k + 1))
    return out


# ---------------------------------------------------------------------------
# driver


def relative_error(x, x_ref, denom):
    err = float(np.linalg.norm(x - x_ref))
    return err / denom if denom > 0 else err


@dataclass
class Trace:
    """Per-iteration record of a run.

    ``rel_err`` falls back to the absolute error when the start point is
    already optimal (``absolute`` is then True).
    """

    method: str = ""
    k: list = field(default_factory=list)
    rel_err: list = field(default_factory=list)
    consensus_residual: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    absolute: bool = False
    reached: bool = False
    state: RunState | None = None
    initial_error: float = 0.0

    BASE_COLUMNS = ("k", "rel_err", "consensus_residual", "merit", "dual_gap", "primal_err", "kinds")
    DIAGNOSTIC_COLUMNS = ("prop1_slack", "prop2_slack", "envelope")

    def __len__(self):
        return len(self.k)

    @property
    def iterations(self):
        return self.k[-1] if self.k else 0

    def errors(self):
        return np.asarray(self.rel_err)

    def column(self, name):
        if name in ("k", "rel_err", "consensus_residual", "kinds"):
            return list(getattr(self, name))
        return list(self.extra.get(name, [None] * len(self.k)))

    def _put(self, name, idx, value):
        col = self.extra.setdefault(name, [])
        col.extend([None] * (idx + 1 - len(col)))
        col[idx] = value

    def to_csv(self, path=None):
        """CSV text; diagnostic columns are appended only if any were recorded."""
        cols = list(self.BASE_COLUMNS)
        if any(c in self.extra for c in self.DIAGNOSTIC_COLUMNS):
            cols += list(self.DIAGNOSTIC_COLUMNS)
        data = {c: self.column(c) for c in cols}
        lines = [",".join(cols)]
        for r in range(len(self.k)):
            cells = []
            for c in cols:
                v = data[c][r] if r < len(data[c]) else None
                if v is None:
                    cells.append("")
                elif isinstance(v, str):
                    cells.append(v)
                elif c == "k":
                    cells.append(str(int(v)))
                else:
                    cells.append(f"{v:.17g}")
            lines.append(",".join(cells))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _histogram(codes, memo):
    key = codes.tobytes()
    if key not in memo:
        counts = Counter(_KINDS[int(c)].label for c in codes)
        memo[key] = ";".join(f"{lab}={counts[lab]}" for lab in sorted(counts))
    return memo[key]


def run(instance, schedule, steps, x0=None, lambda0=None, max_iters=5000, stop=1e-8,
        monitor=None, engine="compact", cache=True, record=True):
    """Iterate until the relative error drops to `stop` or `max_iters` steps pass.

    Parameters
    ----------
    instance : ProblemInstance
    schedule : UpdateSchedule
    steps : Stepsizes
    x0, lambda0 : array_like, optional
        Stacked initial points; zeros by default.
    max_iters : int
    stop : float or None
        Relative-error threshold; ``None`` runs all `max_iters` iterations.
    monitor : object, optional
        Analysis hook with ``observe(state)`` returning extra columns for that
        row and ``transition(state, new_state, operators)`` returning columns
        for the row of `state`. See :class:`dish.analysis.TheoryMonitor`.
    engine : {"compact", "distributed"}
    cache : bool
        Reuse Hessian blocks across iterations when they are constant.
    record : bool
        If False only errors are stored (no kinds histogram).

    Raises
    ------
    DivergenceError
        On non-finite iterates or relative error above 1e12; the partial
        trace is attached as ``.trace``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    n, d = instance.n, instance.d
    x = np.zeros(n * d) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    lam = np.zeros(n * d) if lambda0 is None else np.asarray(lambda0, dtype=float).ravel().copy()
    state = RunState(x, lam, 0)
    x_ref = instance.x_opt_stacked
    denom = float(np.linalg.norm(x - x_ref))
    trace = Trace(method=schedule.name, absolute=denom == 0.0, initial_error=denom)
    memo = {}
    hcache = _HessianCache() if cache else None
    agents = init_agents(instance, x, lam) if engine == "distributed" else None
    Z = instance.topology.Z

    def log(st):
        e = relative_error(st.x, x_ref, denom)
        idx = len(trace.k)
        trace.k.append(st.k)
        trace.rel_err.append(e)
        trace.consensus_residual.append(float(np.linalg.norm(consensus_residual_blocks(Z, st.x.reshape(n, d)))))
        trace.kinds.append(_histogram(schedule.codes_at(st.k), memo) if record else "")
        if monitor is not None:
            for name, v in monitor.observe(st).items():
                trace._put(name, idx, v)
        return e

    err = log(state)
    while True:
        if stop is not None and err <= stop:
            trace.reached = True
            break
        if state.k >= max_iters:
            break
        ops = update_operators(state, instance, schedule, steps) if getattr(monitor, "needs_operators", False) else None
        try:
            if engine == "compact":
                new = step_compact(state, instance, schedule, steps, hcache)
            else:
                agents = step_distributed(agents, exchange(agents), instance, schedule, steps)
                new = stack_agents(agents)
                if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.lam))):
                    raise DivergenceError(state.k, "non-finite iterate")
        except DivergenceError as exc:
            exc.trace = trace
            trace.state = state
            raise
        if monitor is not None and hasattr(monitor, "transition"):
            for name, v in monitor.transition(state, new, ops).items():
                trace._put(name, len(trace.k) - 1, v)
        state = new
        err = log(state)
        if not math.isfinite(err) or (not trace.absolute and err > DIVERGENCE_LIMIT):
            trace.state = state
            raise DivergenceError(state.k, f"relative error {err:.3g}", trace)
    trace.state = state
    return trace


@dataclass
class ErrorSummary:
    """Outcome of :func:`run_errors_only`."""

    iterations: int
    final_error: float
    reached: bool
    x: np.ndarray | None = None
    lam: np.ndarray | None = None
    scale: float = 1.0
    history: list | None = None


def _lean_operators(instance, schedule, steps, codes, H):
    n, d = instance.n, instance.d
    I = np.eye(d)
    z = np.diag(instance.topology.Z)
    a_eff = steps.primal(codes)
    AP = np.empty((n, d, d))
    BQ = np.empty((n, d, d))
    for i in range(n):
        kind = _KINDS[int(codes[i])]
        if kind.primal is PrimalKind.GRADIENT:
            AP[i] = a_eff[i] * I
        else:
            shift = steps.mu if kind.primal is PrimalKind.NEWTON else steps.mu * (1 - z[i])
            AP[i] = a_eff[i] * np.linalg.inv(H[i] + shift * I)
        BQ[i] = steps.b[i] * (I if kind.dual is DualKind.GRADIENT else H[i] + steps.mu * I)
    return AP, BQ


def run_errors_only(instance, schedule, steps, x0=None, lambda0=None, max_iters=5000, stop=1e-8,
                    resume=None, history=False):
    """Stripped-down :func:`run` for grid searches.

    Only the relative error is tracked and nothing is recorded per
    iteration. For constant-Hessian objectives the gradient is affine, so it
    is evaluated as ``H x + grad f(0)`` and the scaled update blocks are built
    once per distinct kind pattern. Results agree with :func:`run` up to
    rounding. Passing a previous :class:`ErrorSummary` as `resume` continues
    that run up to `max_iters` total iterations. With `history` the relative
    error of every iterate, starting at ``k = 0``, is kept in ``.history``.
    """
    n, d = instance.n, instance.d
    X = np.zeros((n, d)) if x0 is None else np.asarray(x0, dtype=float).reshape(n, d).copy()
    Lam = np.zeros((n, d)) if lambda0 is None else np.asarray(lambda0, dtype=float).reshape(n, d).copy()
    X_ref = instance.x_opt_stacked.reshape(n, d)
    stack = instance._stack
    constant = instance.constant_hessian
    if constant:
        H = stack.hessians(X)
        g0 = stack.gradients(np.zeros((n, d)))
    M = np.eye(n) - instance.topology.Z
    I = np.eye(d)
    mu = steps.mu
    esom_shift = mu * (1.0 - np.diag(instance.topology.Z))
    denom = float(np.linalg.norm(X - X_ref))
    scale = denom if denom > 0 else 1.0
    err = denom / scale
    k = 0
    if resume is not None:
        X, Lam, k, err = resume.x.copy(), resume.lam.copy(), resume.iterations, resume.final_error
        scale = resume.scale
    limit = (DIVERGENCE_LIMIT if denom > 0 else np.inf) * scale
    ops = {}
    errs = [err] if history else None
    while not (stop is not None and err <= stop) and k < max_iters:
        codes = schedule.codes_at(k)
        WX = M @ X
        if constant:
            key = codes.tobytes()
            if key not in ops:
                ops[key] = _lean_operators(instance, schedule, steps, codes, H)
            AP, BQ = ops[key]
            R = np.einsum("ide,ie->id", H, X) + g0 + M @ Lam + mu * WX
            X = X - np.einsum("ide,ie->id", AP, R)
            Lam = Lam + np.einsum("ide,ie->id", BQ, WX)
        else:
            if codes.any():
                G, Hk = stack.gradients_and_hessians(X)
            else:
                G = stack.gradients(X)
            R = G + M @ Lam + mu * WX
            dX, dL = R, WX
            if codes.any():
                primal = codes // 2
                rows = np.flatnonzero(primal)
                if rows.size:
                    shift = np.where(primal[rows] == PrimalKind.NEWTON.value, mu, esom_shift[rows])
                    dX = R.copy()
                    dX[rows] = np.linalg.solve(Hk[rows] + shift[:, None, None] * I, R[rows][..., None])[..., 0]
                rows = np.flatnonzero(codes % 2)
                if rows.size:
                    dL = WX.copy()
                    dL[rows] = np.einsum("ide,ie->id", Hk[rows], WX[rows]) + mu * WX[rows]
            X = X - steps.primal(codes)[:, None] * dX
            Lam = Lam + steps.b[:, None] * dL
        k += 1
        e = math.sqrt(float(np.sum((X - X_ref) ** 2)))
        if not math.isfinite(e) or e > limit:
            raise DivergenceError(k, f"relative error {e / scale:.3g}")
        err = e / scale
        if history:
            errs.append(err)
    return ErrorSummary(k, err, stop is not None and err <= stop, X, Lam, scale, errs)
