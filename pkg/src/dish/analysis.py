"""
Theory-side quantities for the hybrid primal-dual iteration.

Everything here works on stacked vectors of length ``n * d`` and the
augmented Lagrangian ``L(x, lam) = f(x) + lam' W x + mu/2 x' W x``.
Inner minimizations ``x*(lam) = argmin_x L(x, lam)`` use Newton's method on
the full ``nd x nd`` Hessian, so these routines are meant for small networks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import block_diag

from .core import DualKind, PrimalKind, Stepsizes
from .topology import apply_W

__all__ = [
    "InnerSolveError",
    "lagrangian",
    "lagrangian_gradient",
    "lagrangian_hessian",
    "inner_minimizer",
    "dual_value_grad",
    "dual_hessian",
    "DualNewtonStep",
    "dual_newton_step_exact",
    "hessian_weighted_average",
    "MeritReport",
    "merit",
    "optimal_dual_value",
    "ConstantCatalog",
    "constant_catalog",
    "RateCertificate",
    "theoretical_stepsizes",
    "envelope_constant",
    "corollary_envelope",
    "PropositionDiagnostics",
    "verify_proposition_bounds",
    "TheoryMonitor",
]

INNER_TOL = 1e-11
INNER_MAX_ITER = 200
NONNEG_TOL = 1e-9
PINV_RCOND = 1e-10


class InnerSolveError(RuntimeError):
    pass


def _W(instance, v):
    return apply_W(instance.topology, v)


def lagrangian(instance, mu, x, lam):
    x = np.asarray(x, dtype=float).ravel()
    Wx = _W(instance, x)
    return instance.f(x) + float(np.asarray(lam).ravel() @ Wx) + 0.5 * mu * float(x @ Wx)


def lagrangian_gradient(instance, mu, x, lam):
    """``grad f(x) + W lam + mu W x``."""
    x = np.asarray(x, dtype=float).ravel()
    return instance.gradients(x).ravel() + _W(instance, lam) + mu * _W(instance, x)


def lagrangian_hessian(instance, mu, x):
    """Dense ``blockdiag(hess f_i) + mu W``."""
    return block_diag(*instance.hessians(x)) + mu * instance.topology.dense_W()


def inner_minimizer(instance, mu, lam, tol=INNER_TOL, x0=None, max_iter=INNER_MAX_ITER):
    """Minimize ``L(., lam)`` by damped Newton until ``||grad_x L|| <= tol``.

    Returns
    -------
    x_star : ndarray
    residual : float
        Achieved gradient norm.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    x = np.zeros(instance.n * instance.d) if x0 is None else np.array(x0, dtype=float).ravel()
    g = lagrangian_gradient(instance, mu, x, lam)
    res = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if res <= tol:
            return x, res
        step = np.linalg.solve(lagrangian_hessian(instance, mu, x), g)
        t = 1.0
        if not instance.constant_hessian:
            L0 = lagrangian(instance, mu, x, lam)
            slack = 1e-14 * max(1.0, abs(L0))  # decrease below rounding of L near the minimizer
            while t > 1e-8 and lagrangian(instance, mu, x - t * step, lam) > L0 - 0.25 * t * float(g @ step) + slack:
                t *= 0.5
        x_new = x - t * step
        g_new = lagrangian_gradient(instance, mu, x_new, lam)
        res_new = float(np.linalg.norm(g_new))
        if res_new >= res and t < 1e-7:
            break
        x, g, res = x_new, g_new, res_new
    if res <= tol:
        return x, res
    raise InnerSolveError(f"inner solve failed: residual {res:.3g} > {tol:.3g}")


def dual_value_grad(instance, mu, lam, tol=INNER_TOL, x0=None):
    """Dual function ``g(lam) = L(x*(lam), lam)`` and its gradient ``W x*(lam)``."""
    x_star, _ = inner_minimizer(instance, mu, lam, tol, x0)
    return lagrangian(instance, mu, x_star, lam), _W(instance, x_star)


def dual_hessian(instance, mu, lam, tol=INNER_TOL):
    """``-W (hess_xx L(x*(lam)))^{-1} W`` as a dense matrix."""
    x_star, _ = inner_minimizer(instance, mu, lam, tol)
    W = instance.topology.dense_W()
    return -W @ np.linalg.solve(lagrangian_hessian(instance, mu, x_star), W)


def hessian_weighted_average(instance, x):
    """``(sum_i hess f_i(x_i))^{-1} sum_i hess f_i(x_i) x_i``."""
    X = np.asarray(x, dtype=float).reshape(instance.n, instance.d)
    H = instance.hessians(X)
    return np.linalg.solve(H.sum(axis=0), np.einsum("ide,ie->d", H, X))


@dataclass
class DualNewtonStep:
    delta_lambda: np.ndarray
    y: np.ndarray
    system_residual: float
    identity_residual: float


def dual_newton_step_exact(instance, mu, x, lam=None):
    """Minimum-norm solution of ``-W H^{-1} W dlam = W x`` with ``H = hess_xx L(x)``.

    Also returns the Hessian-weighted average ``y`` and the residual of the
    identity ``W dlam = H (1 kron y - x)``.
    """
    n, d = instance.n, instance.d
    if n * d > 200:
        raise ValueError("dense dual Newton step limited to n*d <= 200")
    x = np.asarray(x, dtype=float).ravel()
    W = instance.topology.dense_W()
    H = lagrangian_hessian(instance, mu, x)
    M = -W @ np.linalg.solve(H, W)
    rhs = W @ x
    dlam = np.linalg.pinv(M, rcond=PINV_RCOND, hermitian=True) @ rhs
    sys_res = float(np.linalg.norm(M @ dlam - rhs))
    if sys_res > 1e-6:
        raise ValueError(f"inconsistent system: residual {sys_res:.3g}")
    y = hessian_weighted_average(instance, x)
    lemma = float(np.linalg.norm(W @ dlam - H @ (np.tile(y, n) - x)))
    return DualNewtonStep(dlam, y, sys_res, lemma)


@dataclass
class MeritReport:
    delta_lambda: float
    delta_x: float
    delta: float
    x_star: np.ndarray | None = None
    g: float | None = None


def optimal_dual_value(instance):
    """``g(lam*)``, equal to the primal optimum by strong duality."""
    return instance.optimal_value()


def _clip(v):
    return 0.0 if -NONNEG_TOL <= v < 0.0 else v


def merit(instance, mu, state, g_star=None, tol=INNER_TOL, x0=None):
    """Dual gap, primal tracking error and their weighted sum ``9 gap + track``."""
    if g_star is None:
        g_star = optimal_dual_value(instance)
    x_star, _ = inner_minimizer(instance, mu, state.lam, tol, state.x if x0 is None else x0)
    g = lagrangian(instance, mu, x_star, state.lam)
    dl = _clip(g_star - g)
    dx = _clip(lagrangian(instance, mu, state.x, state.lam) - g)
    return MeritReport(dl, dx, 9.0 * dl + dx, x_star, g)


# ---------------------------------------------------------------------------
# constants and rates


@dataclass(frozen=True)
class ConstantCatalog:
    """Problem, network and update-matrix constants.

    ``p_lo, p_hi, q_lo, q_hi`` bound the eigenvalues of the local update
    matrices each agent may use. ``alpha_lo``, ``beta_lo`` and ``beta`` need
    stepsizes and are ``None`` until :meth:`with_steps` is called.
    """

    s: float
    l: float
    mu: float
    gamma: float
    s_local: np.ndarray
    l_local: np.ndarray
    z_diag: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    uses_gradient: np.ndarray
    uses_newton: np.ndarray
    alpha_lo: float | None = None
    beta_lo: float | None = None
    beta: float | None = None

    @property
    def l_L(self):
        return self.l + 2 * self.mu

    @property
    def p_g(self):
        return (1 - self.gamma) / (self.l + 2 * self.mu)

    @property
    def p_g_conservative(self):
        # PL constant of lam -> -f~*(-W lam) for arbitrary lam: squared spectral gap
        return (1 - self.gamma) ** 2 / (self.l + 2 * self.mu)

    @property
    def l_g(self):
        return 4.0 / self.s

    def with_steps(self, steps):
        a, b = steps.a, steps.b
        an = np.ones_like(a) if steps.a_newton is None else steps.a_newton
        # gradient-type iterations use a_i, Newton-type ones a_newton_i
        a_lo = np.minimum(np.where(self.uses_gradient, a, np.inf), np.where(self.uses_newton, an, np.inf))
        return replace(self,
                       alpha_lo=float(np.min(a_lo * self.p_lo)),
                       beta_lo=float(np.min(b * self.q_lo)),
                       beta=float(np.max(b * self.q_hi)))


def _kind_bounds(kinds, s_i, l_i, mu, z_ii):
    p_lo, p_hi, q_lo, q_hi = np.inf, 0.0, np.inf, 0.0
    grad = newton = False
    for kind in kinds:
        grad |= kind.primal is PrimalKind.GRADIENT
        newton |= kind.primal is not PrimalKind.GRADIENT
        if kind.primal is PrimalKind.GRADIENT:
            lo = hi = 1.0
        else:
            shift = mu if kind.primal is PrimalKind.NEWTON else mu * (1 - z_ii)
            lo, hi = min(1.0, 1.0 / (l_i + shift)), max(1.0, 1.0 / (s_i + shift))
        p_lo, p_hi = min(p_lo, lo), max(p_hi, hi)
        if kind.dual is DualKind.GRADIENT:
            lo = hi = 1.0
        else:
            lo, hi = min(1.0, s_i + mu), max(1.0, l_i + mu)
        q_lo, q_hi = min(q_lo, lo), max(q_hi, hi)
    return p_lo, p_hi, q_lo, q_hi, grad, newton


def constant_catalog(instance, mu, kinds_per_agent, steps=None):
    """Build the catalog; `kinds_per_agent` is a schedule or a list of kind sets."""
    if hasattr(kinds_per_agent, "possible_kinds"):
        kinds_per_agent = [kinds_per_agent.possible_kinds(i) for i in range(instance.n)]
    s_loc, l_loc = instance.s_local, instance.l_local
    z = np.diag(instance.topology.Z).copy()
    bounds = np.array([_kind_bounds(k, s_loc[i], l_loc[i], mu, z[i]) for i, k in enumerate(kinds_per_agent)])
    cat = ConstantCatalog(instance.s, instance.l, float(mu), instance.topology.gamma, s_loc, l_loc, z,
                          *bounds.T[:4], bounds[:, 4].astype(bool), bounds[:, 5].astype(bool))
    return cat.with_steps(steps) if steps is not None else cat


@dataclass
class RateCertificate:
    steps: Stepsizes
    rho: float
    rho_proof: float
    catalog: ConstantCatalog


def theoretical_stepsizes(catalog, kinds_per_agent=None):
    """Largest certified stepsizes and the linear rate they guarantee.

    ``a_i = 1 / [2 p_hi_i (s/16 + l + 2 mu)]``, then
    ``b_i = min(s/64, alpha_lo s^2 / 60) / q_hi_i``. The returned ``rho`` uses
    ``9 (l + 4 mu)`` in its first term; ``rho_proof`` uses ``9 (l + 2 mu)``.
    The primal stepsize also applies on Newton-type iterations.
    """
    if kinds_per_agent is not None:
        kinds = kinds_per_agent
        if hasattr(kinds, "possible_kinds"):
            kinds = [kinds.possible_kinds(i) for i in range(len(catalog.s_local))]
        b = np.array([_kind_bounds(k, catalog.s_local[i], catalog.l_local[i], catalog.mu, catalog.z_diag[i])
                      for i, k in enumerate(kinds)])
        catalog = replace(catalog, p_lo=b[:, 0], p_hi=b[:, 1], q_lo=b[:, 2], q_hi=b[:, 3],
                          uses_gradient=b[:, 4].astype(bool), uses_newton=b[:, 5].astype(bool))
    s, l, mu = catalog.s, catalog.l, catalog.mu
    a = 1.0 / (2.0 * catalog.p_hi * (s / 16 + l + 2 * mu))
    alpha_lo = float(np.min(a * catalog.p_lo))
    b = min(s / 64, alpha_lo * s**2 / 60) / catalog.q_hi
    steps = Stepsizes(a, b, mu, a_newton=a.copy())
    catalog = catalog.with_steps(steps)
    gap = 1 - catalog.gamma
    rho = min(gap * catalog.beta_lo / (9 * (l + 4 * mu)), s * catalog.alpha_lo / 2)
    rho_proof = min(gap * catalog.beta_lo / (9 * (l + 2 * mu)), s * catalog.alpha_lo / 2)
    return RateCertificate(steps, rho, rho_proof, catalog)


def envelope_constant(catalog, delta0):
    lL = catalog.l_L
    return 4 * lL * delta0 / (catalog.s * min(lL, 9 * catalog.s))


def corollary_envelope(catalog, delta0, rho, k):
    """Bound ``c (1 - rho)^k`` on the squared distance to the optimum."""
    return envelope_constant(catalog, delta0) * (1.0 - rho) ** k


# ---------------------------------------------------------------------------
# per-step diagnostics


@dataclass
class PropositionDiagnostics:
    prop1_lhs: float
    prop1_rhs: float
    prop2_lhs: float
    prop2_rhs: float
    merit_k: MeritReport
    merit_k1: MeritReport

    @property
    def prop1_slack(self):
        return self.prop1_rhs - self.prop1_lhs

    @property
    def prop2_slack(self):
        return self.prop2_rhs - self.prop2_lhs

    def violated(self, tol=1e-7):
        return self.prop1_slack < -tol or self.prop2_slack < -tol


def _block_quad(M, v):
    # sum_i v_i' M_i v_i
    return float(np.einsum("id,ide,ie->", v, M, v))


def verify_proposition_bounds(instance, mu, state_k, state_k1, catalog, operators, g_star=None,
                              tol=INNER_TOL, merit_k=None, merit_k1=None):
    """Evaluate both sides of the one-step dual-gap and primal-error inequalities.

    `operators` are the ``(A P^k, B Q^k)`` blocks used for the step (see
    :func:`dish.core.update_operators`). ``beta`` comes from the catalog when
    it holds stepsizes, otherwise from the operators.
    """
    n, d = instance.n, instance.d
    if g_star is None:
        g_star = optimal_dual_value(instance)
    AP, BQ = operators
    beta = catalog.beta if catalog.beta is not None else float(max(np.linalg.norm(B, 2) for B in BQ))
    s, lg, lL = catalog.s, catalog.l_g, catalog.l_L
    mk = merit_k or merit(instance, mu, state_k, g_star, tol)
    mk1 = merit_k1 or merit(instance, mu, state_k1, g_star, tol)
    grad_g = _W(instance, mk.x_star).reshape(n, d)
    grad_L = lagrangian_gradient(instance, mu, state_k.x, state_k.lam).reshape(n, d)
    gBQ = _block_quad(BQ, grad_g)
    gL2 = float(np.sum(grad_L**2))
    rhs1 = mk.delta_lambda - (0.5 - beta * lg) * gBQ + (0.5 + beta * lg) * 4 * beta / s**2 * gL2
    D = AP - (2 * beta + lL / 2) * np.einsum("ide,ief->idf", AP, AP) - 12 * beta / s**2 * np.eye(d)
    rhs2 = mk.delta_x + 3 * gBQ - _block_quad(D, grad_L) + mk.delta_lambda - mk1.delta_lambda
    return PropositionDiagnostics(mk1.delta_lambda, rhs1, mk1.delta_x, rhs2, mk, mk1)


class TheoryMonitor:
    """Run hook that records merit terms and, optionally, proposition slacks.

    Columns: ``merit``, ``dual_gap``, ``primal_err`` for every row and, with
    ``propositions=True``, ``prop1_slack``, ``prop2_slack`` for each step.
    If ``rho`` and ``catalog`` are given the squared-error envelope and the
    contraction slack ``(1 - rho) D_k - D_{k+1}`` are recorded as well.
    """

    def __init__(self, instance, mu, schedule=None, steps=None, catalog=None, rho=None,
                 propositions=False, tol=INNER_TOL):
        self.instance = instance
        self.mu = mu
        self.schedule = schedule
        self.steps = steps
        self.catalog = catalog
        self.rho = rho
        self.propositions = propositions
        self.needs_operators = propositions
        self.tol = tol
        self.g_star = optimal_dual_value(instance)
        self._merits = {}
        self.delta0 = None
        self.contraction_slack = []

    def _merit(self, state):
        m = self._merits.get(state.k)
        if m is None:
            prev = self._merits.get(state.k - 1)
            x0 = prev.x_star if prev is not None else state.x
            m = merit(self.instance, self.mu, state, self.g_star, self.tol, x0=x0)
            self._merits = {k: v for k, v in self._merits.items() if k >= state.k - 1}
            self._merits[state.k] = m
        return m

    def observe(self, state):
        m = self._merit(state)
        row = dict(merit=m.delta, dual_gap=m.delta_lambda, primal_err=m.delta_x)
        if state.k == 0:
            self.delta0 = m.delta
        if self.rho is not None and self.catalog is not None:
            row["envelope"] = corollary_envelope(self.catalog, self.delta0, self.rho, state.k)
        return row

    def transition(self, state, new_state, operators):
        mk = self._merit(state)
        mk1 = self._merit(new_state)
        if self.rho is not None:
            self.contraction_slack.append((1 - self.rho) * mk.delta - mk1.delta)
        if not self.propositions:
            return {}
        diag = verify_proposition_bounds(self.instance, self.mu, state, new_state, self.catalog, operators,
                                         self.g_star, self.tol, mk, mk1)
        return dict(prop1_slack=diag.prop1_slack, prop2_slack=diag.prop2_slack)

