"""Reference QP solver backends and the backend registry.

Three built-in backends cover the spectrum a differentiation layer has to
tolerate: an exact dense primal active-set method, a first-order sparse
operator-splitting (ADMM) method, and an equality-only direct solve.  All
backends are stateless per call; the registry guards concurrent registration
with a lock.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from .errors import DuplicateBackendError, RankDeficiencyError, UnknownBackendError
from .metrics import residuals
from .problem import QpProblem

__all__ = [
    "SOLVED",
    "MAX_ITER",
    "FAILED",
    "SolveSettings",
    "PrimalDualPoint",
    "SolverBackend",
    "EqualityBackend",
    "ActiveSetBackend",
    "AdmmBackend",
    "PrimalOnlyBackend",
    "solve_equality_qp",
    "solve_active_set",
    "solve_admm",
    "register_backend",
    "get_backend",
    "list_backends",
]

SOLVED = "solved"
MAX_ITER = "max_iter"
FAILED = "failed"


@dataclass
class SolveSettings:
    """Solver tolerances shared by all backends.

    ``eps_abs`` bounds the achieved primal and dual residuals in infinity
    norm.  Backends that are exact by construction (active set, equality)
    report their achieved residuals and ignore the tolerance otherwise.
    """

    eps_abs: float = 1e-6
    max_iterations: int = 20000
    warm_start: "PrimalDualPoint | None" = None
    time_limit: float | None = None

    def __post_init__(self):
        if not self.eps_abs > 0:
            raise ValueError("eps_abs must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class PrimalDualPoint:
    """Primal solution with optional duals and achieved residuals."""

    z: np.ndarray
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    status: str = SOLVED
    r_p: float = np.nan
    r_d: float = np.nan
    iterations: int = 0
    working_set: np.ndarray | None = None

    @property
    def has_duals(self):
        return self.lam is not None and self.mu is not None


class SolverBackend:
    """Interface for pluggable QP solvers (the black box of the forward pass)."""

    name = "abstract"
    capabilities = {
        "returns_duals": False,
        "supports_sparse": False,
        "supports_warm_start": False,
    }

    def solve(self, problem: QpProblem, settings: SolveSettings) -> PrimalDualPoint:
        raise NotImplementedError


# --- equality-constrained solve ---------------------------------------------


def solve_equality_qp(P, q, A=None, b=None):
    """Solve min 0.5 z'Pz + q'z s.t. Az = b via the saddle-point system.

    Requires P positive definite and A full row rank; raises
    :class:`RankDeficiencyError` otherwise.  Returns ``(z, lam)`` with
    ``lam`` empty when there are no equality constraints.
    """
    Pd = P.toarray() if sp.issparse(P) else np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    n = q.shape[0]
    if A is None or (hasattr(A, "shape") and A.shape[0] == 0):
        p = 0
        K = Pd
        rhs = -q
    else:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        p = Ad.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = Pd
        K[:n, n:] = Ad.T
        K[n:, :n] = Ad
        rhs = np.concatenate([-q, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("equality KKT matrix is singular") from exc
    if not np.all(np.isfinite(sol)):
        raise RankDeficiencyError("equality KKT solve produced non-finite values")
    resid = np.abs(K @ sol - rhs).max(initial=0.0)
    if resid > 1e-6 * (1.0 + np.abs(rhs).max(initial=0.0)):
        raise RankDeficiencyError(
            f"equality KKT solve is unreliable (residual {resid:.2e})"
        )
    return sol[:n], sol[n : n + p]


class EqualityBackend(SolverBackend):
    """Direct solve that ignores inequalities, valid when none are active.

    If the equality-relaxed optimum happens to satisfy C z <= d it is the true
    optimum with mu = 0; otherwise the solve fails.
    """

    name = "equality"
    capabilities = {
        "returns_duals": True,
        "supports_sparse": True,
        "supports_warm_start": False,
    }

    def solve(self, problem, settings):
        z, lam = solve_equality_qp(problem.P, problem.q, problem.A, problem.b)
        mu = np.zeros(problem.m)
        point = PrimalDualPoint(z=z, lam=lam, mu=mu)
        res = residuals(problem, point)
        point.r_p, point.r_d = res.r_p, res.r_d
        feas_tol = max(settings.eps_abs, 1e-9)
        if problem.m and (problem.C @ z - problem.d).max() > feas_tol:
            point.status = FAILED
        return point


# --- dense primal active-set method ------------------------------------------


class ActiveSetBackend(SolverBackend):
    """Textbook primal active-set method for strictly convex dense QPs.

    Starts from the equality-constrained minimizer; if that point violates
    inequalities, a phase-one LP restores feasibility.  Blocking-constraint
    ties are broken by lowest index, making the method deterministic.
    """

    name = "active_set"
    capabilities = {
        "returns_duals": True,
        "supports_sparse": False,
        "supports_warm_start": False,
    }

    def solve(self, problem, settings):
        t_start = time.perf_counter()
        P = problem.P.toarray()
        q = problem.q
        A = problem.A.toarray()
        b = problem.b
        C = problem.C.toarray()
        d = problem.d
        n, p, m = problem.n, problem.p, problem.m

        try:
            x, lam0 = solve_equality_qp(P, q, A if p else None, b if p else None)
        except RankDeficiencyError:
            return PrimalDualPoint(
                z=np.full(n, np.nan), lam=np.zeros(p), mu=np.zeros(m), status=FAILED
            )

        if m == 0:
            point = PrimalDualPoint(
                z=x, lam=lam0, mu=np.zeros(0), working_set=np.zeros(0, dtype=int)
            )
            res = residuals(problem, point)
            point.r_p, point.r_d = res.r_p, res.r_d
            return point

        feas_tol = 1e-9 * (1.0 + float(np.abs(d).max(initial=0.0)))
        if (C @ x - d).max() > feas_tol:
            x = self._phase_one(A, b, C, d, n, p)
            if x is None:
                return PrimalDualPoint(
                    z=np.full(n, np.nan),
                    lam=np.zeros(p),
                    mu=np.zeros(m),
                    status=FAILED,
                )

        work: list[int] = []
        duals_for = []  # snapshot of the working set mu_w belongs to
        lam = np.zeros(p)
        mu_w = np.zeros(0)
        max_iters = min(settings.max_iterations, 10 * (n + m) + 50)
        status = MAX_ITER
        it = 0
        for it in range(1, max_iters + 1):
            if (
                settings.time_limit is not None
                and time.perf_counter() - t_start > settings.time_limit
            ):
                break
            g = P @ x + q
            step, lam, mu_w = self._subproblem(P, A, C, work, g, n, p)
            duals_for = list(work)
            if np.abs(step).max(initial=0.0) <= 1e-11 * (1.0 + np.abs(x).max()):
                if mu_w.size == 0 or mu_w.min() >= -1e-11:
                    status = SOLVED
                    break
                # drop the constraint with the most negative multiplier
                work.pop(int(np.argmin(mu_w)))
                continue
            alpha, blocking = self._step_length(C, d, x, step, work)
            x = x + alpha * step
            if blocking is not None:
                work.append(blocking)
                work.sort()

        mu = np.zeros(m)
        if duals_for:
            mu[np.asarray(duals_for)] = np.maximum(mu_w, 0.0)
        point = PrimalDualPoint(
            z=x,
            lam=lam,
            mu=mu,
            status=status,
            iterations=it,
            working_set=np.asarray(duals_for, dtype=int),
        )
        res = residuals(problem, point)
        point.r_p, point.r_d = res.r_p, res.r_d
        if status == SOLVED and (res.r_p > settings.eps_abs or res.r_d > settings.eps_abs):
            point.status = FAILED
        return point

    @staticmethod
    def _phase_one(A, b, C, d, n, p):
        """Feasible point via an LP minimizing the worst inequality violation."""
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = np.hstack([C, -np.ones((C.shape[0], 1))])
        A_eq = np.hstack([A, np.zeros((p, 1))]) if p else None
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=d,
            A_eq=A_eq,
            b_eq=b if p else None,
            bounds=[(None, None)] * n + [(-1.0, None)],
            method="highs",
        )
        if not res.success or res.x[-1] > 1e-7:
            return None
        return res.x[:n]

    @staticmethod
    def _subproblem(P, A, C, work, g, n, p):
        """Direction and multipliers for the current working set."""
        Cw = C[work] if work else np.zeros((0, n))
        k = len(work)
        K = np.zeros((n + p + k, n + p + k))
        K[:n, :n] = P
        if p:
            K[:n, n : n + p] = A.T
            K[n : n + p, :n] = A
        if k:
            K[:n, n + p :] = Cw.T
            K[n + p :, :n] = Cw
        rhs = np.concatenate([-g, np.zeros(p + k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:n], sol[n : n + p], sol[n + p :]

    @staticmethod
    def _step_length(C, d, x, step, work):
        """Largest step <= 1 staying feasible; lowest-index blocking row wins."""
        alpha = 1.0
        blocking = None
        in_work = set(work)
        Cs = C @ step
        Cx = C @ x
        for j in range(C.shape[0]):
            if j in in_work or Cs[j] <= 1e-13:
                continue
            ratio = max((d[j] - Cx[j]) / Cs[j], 0.0)
            if ratio < alpha - 1e-15:
                alpha = ratio
                blocking = j
        return alpha, blocking


def solve_active_set(problem, settings=None):
    return ActiveSetBackend().solve(problem, settings or SolveSettings())


# --- sparse operator-splitting method -----------------------------------------


class AdmmBackend(SolverBackend):
    """Operator-splitting (ADMM) solver on the stacked constraint form.

    The iteration follows the standard splitting for l <= Gz <= u with a
    single sparse factorization of the regularized KKT matrix.  The penalty
    is fixed (with a stiffer value on equality rows) and diagonal data
    rescaling is off, so runs are deterministic given the settings.  After
    convergence the solution is polished by an exact solve on the rows the
    final iterate marks as active; the polished point is kept only when it
    improves both residuals.
    """

    name = "admm"
    capabilities = {
        "returns_duals": True,
        "supports_sparse": True,
        "supports_warm_start": True,
    }

    sigma = 1e-6
    relaxation = 1.6
    rho = 10.0
    rho_eq_scale = 1e3
    check_interval = 10
    polish = True
    polish_reg = 1e-9
    polish_refine_steps = 3

    def solve(self, problem, settings):
        n, p, m = problem.n, problem.p, problem.m
        t_start = time.perf_counter()

        G = sp.vstack([problem.A, problem.C], format="csc") if p + m else None
        lower = np.concatenate([problem.b, np.full(m, -np.inf)])
        upper = np.concatenate([problem.b, problem.d])

        rho = np.full(p + m, self.rho)
        rho[:p] *= self.rho_eq_scale
        rho_inv = 1.0 / rho if p + m else rho

        eye = sp.identity(n, format="csc")
        if p + m:
            kkt = sp.bmat(
                [[problem.P + self.sigma * eye, G.T], [G, sp.diags_array(-rho_inv)]],
                format="csc",
            )
        else:
            kkt = sp.csc_matrix(problem.P + self.sigma * eye)
        lu = splu(kkt)

        ws = settings.warm_start
        if ws is not None and ws.z is not None:
            x = np.asarray(ws.z, dtype=float).copy()
            y = np.concatenate(
                [
                    np.asarray(ws.lam) if ws.lam is not None else np.zeros(p),
                    np.asarray(ws.mu) if ws.mu is not None else np.zeros(m),
                ]
            )
            zs = np.clip(G @ x, lower, upper) if p + m else np.zeros(0)
        else:
            x = np.zeros(n)
            zs = np.clip(np.zeros(p + m), lower, upper)
            y = np.zeros(p + m)

        status = MAX_ITER
        it = 0
        while it < settings.max_iterations:
            rhs = np.concatenate([self.sigma * x - problem.q, zs - rho_inv * y])
            sol = lu.solve(rhs)
            x_t = sol[:n]
            nu = sol[n:]
            z_t = zs + rho_inv * (nu - y)
            x = self.relaxation * x_t + (1.0 - self.relaxation) * x
            w = self.relaxation * z_t + (1.0 - self.relaxation) * zs + rho_inv * y
            zs = np.clip(w, lower, upper)
            y = rho * (w - zs)
            it += 1

            # never terminate before an iteration has refreshed the duals;
            # early checks let warm starts exit almost immediately
            if it <= 5 or it % self.check_interval == 0:
                r_p, r_d = self._residuals(problem, x, y, p)
                if r_p <= settings.eps_abs and r_d <= settings.eps_abs:
                    status = SOLVED
                    break
                if (
                    settings.time_limit is not None
                    and time.perf_counter() - t_start > settings.time_limit
                ):
                    break
        if status != SOLVED:
            r_p, r_d = self._residuals(problem, x, y, p)

        if self.polish and status == SOLVED and p + m:
            x, y, r_p, r_d = self._polish(problem, G, upper, x, y, r_p, r_d)

        point = PrimalDualPoint(
            z=x,
            lam=y[:p].copy(),
            mu=y[p:].copy(),
            status=status,
            r_p=r_p,
            r_d=r_d,
            iterations=it,
        )
        return point

    def _polish(self, problem, G, upper, x, y, r_p, r_d):
        """Exact solve on the rows the iterate marks as active."""
        n, p = problem.n, problem.p
        slack = upper - G @ x
        active = np.flatnonzero(
            np.concatenate([np.ones(p, dtype=bool), (y[p:] > 0) | (slack[p:] <= 0)])
        )
        k = active.size
        if k == 0:
            return x, y, r_p, r_d
        Gact = sp.csc_array(sp.csr_array(G)[active])
        reg = self.polish_reg
        K_reg = sp.bmat(
            [
                [problem.P + reg * sp.identity(n), Gact.T],
                [Gact, -reg * sp.identity(k)],
            ],
            format="csc",
        )
        rhs = np.concatenate([-problem.q, upper[active]])
        try:
            lu = splu(K_reg)
        except RuntimeError:
            return x, y, r_p, r_d
        sol = lu.solve(rhs)
        for _ in range(self.polish_refine_steps):
            resid = rhs - np.concatenate(
                [
                    problem.P @ sol[:n] + Gact.T @ sol[n:],
                    Gact @ sol[:n],
                ]
            )
            sol = sol + lu.solve(resid)
        x_pol = sol[:n]
        y_pol = np.zeros(G.shape[0])
        y_pol[active] = sol[n:]
        if np.any(y_pol[p:] < -1e-9) or not np.all(np.isfinite(sol)):
            return x, y, r_p, r_d
        r_p_pol, r_d_pol = self._residuals(problem, x_pol, y_pol, p)
        if max(r_p_pol, r_d_pol) < max(r_p, r_d):
            return x_pol, y_pol, r_p_pol, r_d_pol
        return x, y, r_p, r_d

    @staticmethod
    def _residuals(problem, x, y, p):
        lam, mu = y[:p], y[p:]
        r_p = 0.0
        if problem.p:
            r_p = float(np.abs(problem.A @ x - problem.b).max())
        if problem.m:
            r_p = max(r_p, float((problem.C @ x - problem.d).max()), 0.0)
        stat = problem.P @ x + problem.q
        if problem.p:
            stat = stat + problem.A.T @ lam
        if problem.m:
            stat = stat + problem.C.T @ mu
        return r_p, float(np.abs(stat).max())


def solve_admm(problem, settings=None):
    return AdmmBackend().solve(problem, settings or SolveSettings())


# --- helpers ------------------------------------------------------------------


class PrimalOnlyBackend(SolverBackend):
    """Wrapper that strips duals from another backend's answer.

    Exists to exercise the dual-recovery path exactly as a solver that only
    reports the primal would.
    """

    def __init__(self, inner: SolverBackend):
        self.inner = inner
        self.name = f"{inner.name}_primal_only"
        self.capabilities = dict(inner.capabilities, returns_duals=False)

    def solve(self, problem, settings):
        point = self.inner.solve(problem, settings)
        return PrimalDualPoint(
            z=point.z,
            lam=None,
            mu=None,
            status=point.status,
            r_p=point.r_p,
            r_d=point.r_d,
            iterations=point.iterations,
        )


# --- registry -----------------------------------------------------------------

_registry: dict[str, SolverBackend] = {}
_registry_lock = threading.Lock()


def register_backend(name: str, backend: SolverBackend) -> None:
    with _registry_lock:
        if name in _registry:
            raise DuplicateBackendError(f"backend '{name}' is already registered")
        _registry[name] = backend


def get_backend(name: str) -> SolverBackend:
    with _registry_lock:
        try:
            return _registry[name]
        except KeyError:
            known = ", ".join(sorted(_registry)) or "none"
            raise UnknownBackendError(
                f"unknown backend '{name}' (registered: {known})"
            ) from None


def list_backends() -> list[str]:
    with _registry_lock:
        return sorted(_registry)


for _backend in (ActiveSetBackend(), AdmmBackend(), EqualityBackend()):
    register_backend(_backend.name, _backend)
