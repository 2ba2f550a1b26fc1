"""Shared test utilities: small random problems and independent oracles."""

import numpy as np

from qpdiff import QpProblem


def random_mixed_qp(n, m, p, seed, margin_lo=0.05, margin_hi=1.0):
    """Small dense strictly convex QP, feasible by construction.

    A random interior point z0 fixes b = A z0 and d = C z0 + U(lo, hi), so
    every instance is feasible with positive inequality slack at z0.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    W = rng.standard_normal((n, n))
    P = W.T @ W / n + 0.3 * np.eye(n)
    q = rng.standard_normal(n)
    z0 = rng.standard_normal(n)
    A = b = None
    if p:
        A = rng.standard_normal((p, n))
        b = A @ z0
    C = d = None
    if m:
        C = rng.standard_normal((m, n))
        d = C @ z0 + rng.uniform(margin_lo, margin_hi, m)
    return QpProblem(P, q, A, b, C, d)


def dims_for_seed(seed):
    """Deterministic (n, m, p) draw with n in 4..10, m in 2..10, p in 0..2."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xD1))))
    n = int(rng.integers(4, 11))
    m = int(rng.integers(2, 11))
    p = int(rng.integers(0, min(3, n - 1)))
    return n, m, p


def complementarity_margins(problem, point, active):
    """(min active multiplier, min inactive |residual|); inf when empty."""
    mu = np.asarray(point.mu)
    res = active.residuals
    idx = active.indices
    inactive = np.setdiff1d(np.arange(problem.m), idx)
    mu_min = float(mu[idx].min()) if idx.size else np.inf
    res_min = float(np.abs(res[inactive]).min()) if inactive.size else np.inf
    return mu_min, res_min


def simplex_projection_sort(x):
    """Closed-form projection onto the probability simplex (sort algorithm)."""
    x = np.asarray(x, dtype=float)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, x.size + 1)
    rho = np.max(ind[u - css / ind > 0])
    theta = css[rho - 1] / rho
    return np.minimum(np.maximum(x - theta, 0.0), 1.0)
