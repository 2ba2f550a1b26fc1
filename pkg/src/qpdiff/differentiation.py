"""Dual recovery, forward directional derivatives, and the backward pass.

Everything runs through one reduced KKT factorization per (problem, active
set) pair: recovering missing duals, pushing a parameter perturbation
forward, and pulling a loss gradient back.  Because the reduced matrix is
symmetric, the backward pass reuses the exact same solve as the forward
(no transposed factorization exists or is needed).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolveFailedError
from .identification import (
    DEFAULT_EPS_ACTIVE,
    ActiveSet,
    DifferentiabilityDiagnosis,
    diagnose,
    identify,
    refine,
)
from .kkt import DIRECT, KktFactorization, assemble_reduced_kkt, factorize
from .metrics import residuals
from .problem import QpProblem, RowScaling, normalize_constraints
from .solvers import SOLVED, PrimalDualPoint, SolveSettings, SolverBackend, get_backend

__all__ = [
    "ParamDirection",
    "GradientBundle",
    "DifferentiableSolution",
    "recover_duals",
    "forward_directional",
    "backward",
    "differentiable_solve",
]

PARAM_NAMES = ("P", "q", "A", "b", "C", "d")

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamDirection:
    """A tangent direction in problem-parameter space; None blocks are zero."""

    dP: object = None
    dq: np.ndarray | None = None
    dA: object = None
    db: np.ndarray | None = None
    dC: object = None
    dd: np.ndarray | None = None

    def apply(self, problem: QpProblem, t: float) -> QpProblem:
        """The perturbed problem at parameter offset ``t`` along this direction."""
        P = problem.P + t * sp.csc_array(self.dP) if self.dP is not None else problem.P
        q = problem.q + t * np.asarray(self.dq) if self.dq is not None else problem.q
        A = problem.A + t * sp.csc_array(self.dA) if self.dA is not None else problem.A
        b = problem.b + t * np.asarray(self.db) if self.db is not None else problem.b
        C = problem.C + t * sp.csc_array(self.dC) if self.dC is not None else problem.C
        d = problem.d + t * np.asarray(self.dd) if self.dd is not None else problem.d
        return QpProblem(
            P, q,
            A if problem.p else None, b if problem.p else None,
            C if problem.m else None, d if problem.m else None,
        )


@dataclass(frozen=True)
class GradientBundle:
    """Loss gradients with respect to the six parameter blocks.

    Matrix gradients share the sparsity pattern of the corresponding input
    block and grad_P is symmetric by construction.  Blocks named in
    ``fixed`` were skipped entirely and are None.
    """

    grad_P: object = None
    grad_q: np.ndarray | None = None
    grad_A: object = None
    grad_b: np.ndarray | None = None
    grad_C: object = None
    grad_d: np.ndarray | None = None
    fixed: frozenset = field(default_factory=frozenset)


@dataclass
class DifferentiableSolution:
    """Solved QP bundled with everything needed to differentiate it.

    ``point`` always carries duals.  ``fact`` is the single reduced-KKT
    factorization shared by dual recovery and all derivative solves; in
    direct mode the solver's primal z is kept as-is rather than overwritten
    by the KKT solve, so backend inaccuracy stays visible to diagnostics.
    Treated as immutable once built: concurrent forward/backward calls on
    one solution are safe.
    """

    problem: QpProblem
    point: PrimalDualPoint
    active: ActiveSet
    fact: KktFactorization
    diagnosis: DifferentiabilityDiagnosis
    scaling: RowScaling | None = None
    solve_ms: float = 0.0
    prepare_ms: float = 0.0

    def forward(self, direction: ParamDirection):
        return forward_directional(self, direction)

    def backward(self, grad_z, grad_lam=None, grad_mu=None, fixed=()):
        return backward(self, grad_z, grad_lam, grad_mu, fixed)


def recover_duals(problem, z, active: ActiveSet, fact: KktFactorization):
    """Dual variables implied by the reduced KKT system at the active set.

    In direct mode this solves K_J zeta = (-q, b, d_J) and discards the
    primal block of the result in favor of the caller's z.  In least-squares
    mode the duals minimize the stationarity residual with z held fixed.
    Returns ``(lam, mu)`` with mu scattered to full length (zero off J).
    """
    n, p = problem.n, problem.p
    idx = active.indices
    if fact.mode == DIRECT:
        rhs = np.concatenate([-problem.q, problem.b, problem.d[idx]])
        sol = fact.solve(rhs)
        lam = sol[n : n + p]
        mu_j = sol[n + p :]
    else:
        from .identification import _DualLeastSquares

        duals, _ = _DualLeastSquares(problem, idx).solve(-(problem.P @ z + problem.q))
        lam = duals[:p]
        mu_j = duals[p:]
    mu = np.zeros(problem.m)
    if idx.size:
        mu[idx] = mu_j
    return lam, mu


def forward_directional(sol: DifferentiableSolution, direction: ParamDirection):
    """Directional derivatives (dz, dlam, dmu) for a parameter perturbation.

    Solves the reduced system with right-hand side
    (-dq, db, dd_J) - dK_J (z, lam, mu_J); the mu block is scattered back to
    full length with zeros on inactive rows.
    """
    problem = sol.problem
    n, p = problem.n, problem.p
    idx = sol.active.indices
    z = sol.point.z
    lam = sol.point.lam if p else np.zeros(0)
    mu_j = sol.point.mu[idx] if idx.size else np.zeros(0)

    top = np.zeros(n)
    if direction.dq is not None:
        dq = np.asarray(direction.dq, dtype=float).ravel()
        _check_len(dq, n, "dq")
        top += dq
    if direction.dP is not None:
        dP = _check_mat(direction.dP, (n, n), "dP", symmetric=True)
        top += dP @ z
    dA = None
    if direction.dA is not None:
        dA = _check_mat(direction.dA, (p, n), "dA")
        top += dA.T @ lam
    dC_J = None
    if direction.dC is not None:
        dC = _check_mat(direction.dC, (problem.m, n), "dC")
        dC_J = sp.csr_array(dC)[idx] if idx.size else None
        if dC_J is not None:
            top += dC_J.T @ mu_j

    mid = np.zeros(p)
    if direction.db is not None:
        db = np.asarray(direction.db, dtype=float).ravel()
        _check_len(db, p, "db")
        mid += db
    if dA is not None:
        mid -= dA @ z

    bot = np.zeros(idx.size)
    if direction.dd is not None:
        dd = np.asarray(direction.dd, dtype=float).ravel()
        _check_len(dd, problem.m, "dd")
        bot += dd[idx]
    if dC_J is not None:
        bot -= dC_J @ z

    rhs = np.concatenate([-top, mid, bot])
    step = sol.fact.solve(rhs)
    dz = step[:n]
    dlam = step[n : n + p]
    dmu = np.zeros(problem.m)
    if idx.size:
        dmu[idx] = step[n + p :]
    return dz, dlam, dmu


def backward(sol: DifferentiableSolution, grad_z, grad_lam=None, grad_mu=None,
             fixed=()) -> GradientBundle:
    """Pull a loss gradient on (z, lam, mu) back to the problem parameters.

    Components of ``grad_mu`` on inactive rows cannot influence the result
    (complementary slackness) and are ignored.  Blocks listed in ``fixed``
    are skipped entirely, saving both the solve unwrapping and the gradient
    storage.
    """
    problem = sol.problem
    n, p, m = problem.n, problem.p, problem.m
    idx = sol.active.indices
    fixed = frozenset(fixed)
    unknown = fixed - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown fixed parameter names: {sorted(unknown)}")

    gz = np.asarray(grad_z, dtype=float).ravel()
    _check_len(gz, n, "grad_z")
    gl = np.zeros(p)
    if grad_lam is not None:
        gl = np.asarray(grad_lam, dtype=float).ravel()
        _check_len(gl, p, "grad_lam")
    gm_j = np.zeros(idx.size)
    if grad_mu is not None:
        gm = np.asarray(grad_mu, dtype=float).ravel()
        _check_len(gm, m, "grad_mu")
        off = np.setdiff1d(np.flatnonzero(gm != 0.0), idx)
        if off.size:
            log.debug(
                "backward: ignoring mu-gradient on %d inactive rows", off.size
            )
        if idx.size:
            gm_j = gm[idx]

    # symmetric K_J: the adjoint solve is the same solve
    u = sol.fact.solve(np.concatenate([gz, gl, gm_j]))
    d_z = -u[:n]
    d_lam = -u[n : n + p]
    d_mu = -u[n + p :]

    z = sol.point.z
    lam = sol.point.lam if p else np.zeros(0)
    mu_full = sol.point.mu if m else np.zeros(0)
    d_mu_full = np.zeros(m)
    if idx.size:
        d_mu_full[idx] = d_mu

    grad_P = grad_q = grad_A = grad_b = grad_C = grad_d = None
    if "q" not in fixed:
        grad_q = d_z.copy()
    if "b" not in fixed:
        grad_b = -d_lam.copy()
    if "d" not in fixed:
        grad_d = -d_mu_full
    if "P" not in fixed:
        grad_P = _pattern_outer(problem.P, d_z, z, z, d_z, half=True)
    if "A" not in fixed and p:
        grad_A = _pattern_outer(problem.A, d_lam, z, lam, d_z)
    elif "A" not in fixed:
        grad_A = sp.csc_array((0, n))
    if "C" not in fixed and m:
        grad_C = _pattern_outer(problem.C, d_mu_full, z, mu_full, d_z)
    elif "C" not in fixed:
        grad_C = sp.csc_array((0, n))

    return GradientBundle(
        grad_P=grad_P, grad_q=grad_q, grad_A=grad_A, grad_b=grad_b,
        grad_C=grad_C, grad_d=grad_d, fixed=fixed,
    )


def _pattern_outer(mat, left, right, left2, right2, half=False):
    """(left right' + left2 right2') restricted to the sparsity pattern of mat."""
    coo = sp.coo_array(mat)
    vals = left[coo.row] * right[coo.col] + left2[coo.row] * right2[coo.col]
    if half:
        vals = 0.5 * vals
    out = sp.csc_array(
        sp.coo_array((vals, (coo.row.copy(), coo.col.copy())), shape=mat.shape)
    )
    out.sort_indices()
    return out


def _check_len(vec, length, name):
    if vec.shape[0] != length:
        raise ValueError(f"{name} has length {vec.shape[0]}, expected {length}")


def _check_mat(mat, shape, name, symmetric=False):
    out = sp.csc_array(mat)
    if out.shape != shape:
        raise ValueError(f"{name} has shape {out.shape}, expected {shape}")
    if symmetric and out.shape[0]:
        asym = abs(out - out.T)
        scale = max(1.0, abs(out).max() if out.nnz else 0.0)
        if (asym.max() if asym.nnz else 0.0) > 1e-12 * scale:
            raise ValueError(f"{name} must be symmetric")
    return out


def differentiable_solve(
    problem: QpProblem,
    backend: str | SolverBackend = "active_set",
    settings: SolveSettings | None = None,
    eps_active: float = DEFAULT_EPS_ACTIVE,
    normalize: bool = False,
    refine_active: bool = False,
    check_duals: bool = False,
) -> DifferentiableSolution:
    """Solve a QP with any registered backend and prepare its differentiation.

    Pipeline: solve -> (optional constraint normalization) -> active-set
    identification -> (optional refinement) -> reduced KKT assembly and
    factorization -> dual recovery if the backend returned none ->
    diagnosis.  The factorization is retained on the returned solution for
    any number of subsequent forward/backward calls.

    With ``normalize`` the solver and the identification see the row-scaled
    problem (scale-invariant residuals); the factorization, duals and all
    gradients refer to the original problem, with backend duals unscaled
    accordingly.

    A backend that does not report success raises :class:`SolveFailedError`
    with the failed point attached.
    """
    settings = settings or SolveSettings()
    backend_obj = get_backend(backend) if isinstance(backend, str) else backend

    scaling = None
    work = problem
    if normalize:
        work, scaling = normalize_constraints(problem)

    t0 = time.perf_counter()
    point = backend_obj.solve(work, settings)
    t1 = time.perf_counter()
    if point.status != SOLVED:
        raise SolveFailedError(
            f"backend '{backend_obj.name}' returned status '{point.status}'", point
        )

    active = identify(work, point.z, eps_active)
    if refine_active:
        active = refine(work, point.z, active)

    if scaling is not None and point.has_duals:
        point = PrimalDualPoint(
            z=point.z,
            lam=point.lam / scaling.eq_scales if problem.p else point.lam,
            mu=point.mu / scaling.ineq_scales if problem.m else point.mu,
            status=point.status,
            r_p=point.r_p,
            r_d=point.r_d,
            iterations=point.iterations,
            working_set=point.working_set,
        )

    fact = factorize(assemble_reduced_kkt(problem, active))

    if not point.has_duals:
        lam, mu = recover_duals(problem, point.z, active, fact)
        point.lam, point.mu = lam, mu
    elif check_duals:
        lam, mu = recover_duals(problem, point.z, active, fact)
        diff = 0.0
        if problem.p:
            diff = max(diff, float(np.abs(lam - point.lam).max()))
        if problem.m:
            diff = max(diff, float(np.abs(mu - point.mu).max()))
        if diff > 1e-4:
            log.warning(
                "backend duals disagree with KKT recovery by %.2e; "
                "using recovered duals", diff,
            )
        point.lam, point.mu = lam, mu

    res = residuals(problem, point)
    point.r_p, point.r_d = res.r_p, res.r_d

    # diagnosis in the same (possibly scale-invariant) frame as identification
    diag_point = point
    if scaling is not None and problem.m:
        diag_point = PrimalDualPoint(
            z=point.z, lam=point.lam, mu=point.mu * scaling.ineq_scales
        )
    diag = diagnose(work, diag_point, active, eps_active)
    t2 = time.perf_counter()

    return DifferentiableSolution(
        problem=problem,
        point=point,
        active=active,
        fact=fact,
        diagnosis=diag,
        scaling=scaling,
        solve_ms=(t1 - t0) * 1e3,
        prepare_ms=(t2 - t1) * 1e3,
    )
