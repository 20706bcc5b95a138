"""Lyapunov exponents of deformed channel products, their derivative, the
Legendre transform and assembly of rate-function profiles.

All estimators work along one quenched environment path.  Per-step log
increments are recorded so that a standard error can be attached by
non-overlapping block means.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .cocycle import (
    DEFAULT_TOL,
    NonConvergenceError,
    _normalise,
    _site_derivatives,
    _site_superops,
    z_backward,
    z_forward,
)
from .environment import sample_path

N_BLOCKS = 16
METHODS = ("norm", "trace", "fixed-point")
PATH_STREAM = 0


@dataclass(frozen=True)
class LyapunovEstimate:
    alpha: float
    value: float
    std_error: float
    n_steps: int
    n_samples: int
    method: str


@dataclass(frozen=True)
class DerivativeEstimate:
    alpha: float
    value: float
    std_error: float
    n_sites: int


def block_std_error(increments, n_blocks=N_BLOCKS):
    """Standard error of the mean of ``increments`` from non-overlapping block means."""
    x = np.asarray(increments, dtype=float)
    m = min(n_blocks, len(x))
    if m < 2:
        return 0.0
    L = len(x) // m
    means = x[: m * L].reshape(m, L).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(m))


def _estimate(alpha, incs, method):
    incs = np.asarray(incs)
    return LyapunovEstimate(float(alpha), float(np.sum(incs) / len(incs)),
                            block_std_error(incs), len(incs), 1, method)


def _site_mats(model, path, alpha, start, n, table=None):
    table = _site_superops(model, float(alpha)) if table is None else table
    return [table[path.symbol(start + j)] for j in range(n)]


def _scalar_increments(model, path, alpha, start, n):
    # d = 1: every map is multiplication by a positive number
    table = _site_superops(model, float(alpha))
    logs = np.log([table[s][0, 0].real for s in model.symbols])
    return logs[path.symbol_indices(start, start + n)]


def lyapunov_norm(model, path, alpha, n, start=0):
    """``(1/n) log ||phi_{start+n-1} ∘ ... ∘ phi_start||_{op,1}``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if model.dim == 1:
        return _estimate(alpha, _scalar_increments(model, path, alpha, start, n), "norm")
    d = model.dim
    S = np.eye(d * d, dtype=complex)
    incs = np.empty(n)
    for j, M in enumerate(_site_mats(model, path, alpha, start, n)):
        S, incs[j] = _normalise(M @ S, d)
    return _estimate(alpha, incs, "norm")


def _trace_increments(mats, v, d):
    e = np.eye(d).reshape(-1)
    incs = np.empty(len(mats))
    for j, M in enumerate(mats):
        v = M @ v
        t = (e @ v).real
        incs[j] = np.log(t)
        v = v / t
    return incs, v


def lyapunov_trace(model, path, alpha, rho, n, start=0):
    """``(1/n) log tr[phi_{start+n-1} ∘ ... ∘ phi_start (rho)]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if model.dim == 1:
        return _estimate(alpha, _scalar_increments(model, path, alpha, start, n), "trace")
    d = model.dim
    v = np.asarray(rho, dtype=complex).reshape(-1)
    incs, _ = _trace_increments(_site_mats(model, path, alpha, start, n), v, d)
    return _estimate(alpha, incs, "trace")


def lyapunov_fixedpoint(model, path, alpha, n_sites, start=0, tol=DEFAULT_TOL):
    """Birkhoff average of ``log tr[phi_k(Z_{k-1})]`` over ``k = start .. start+n_sites-1``.

    ``Z_{start-1}`` is the converged forward fixed point; later ``Z_k`` follow
    from the one-step cocycle update.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    if model.dim == 1:
        return _estimate(alpha, _scalar_increments(model, path, alpha, start, n_sites),
                         "fixed-point")
    d = model.dim
    z0 = z_forward(model, path, alpha, start - 1, tol=tol, residual=False).z
    incs, _ = _trace_increments(_site_mats(model, path, alpha, start, n_sites),
                                z0.reshape(-1), d)
    return _estimate(alpha, incs, "fixed-point")


def lyapunov_derivative(model, path, alpha, n_sites, start=0, tol=DEFAULT_TOL):
    """Birkhoff average of ``tr[Z~_{k+1} phi'_k(Z_{k-1})] / tr[Z~_{k+1} phi_k(Z_{k-1})]``.

    ``phi'`` is the alpha-derivative ``sum_a -f(a) exp(-alpha f(a)) psi_a``;
    ``Z`` and ``Z~`` are the forward and adjoint cocycle fixed points along
    the path.  Estimates ``λ'(alpha)``.
    """
    d = model.dim
    a = float(alpha)
    table = _site_superops(model, a)
    dtable = _site_derivatives(model, a)
    syms = [path.symbol(start + j) for j in range(n_sites)]
    if d == 1:
        vals = np.array([dtable[s][0, 0].real / table[s][0, 0].real for s in syms])
        return DerivativeEstimate(a, float(vals.mean()), block_std_error(vals), n_sites)
    e = np.eye(d).reshape(-1)

    # Z_{k-1} for k = start .. start+n-1
    Z = np.empty((n_sites, d * d), dtype=complex)
    z = z_forward(model, path, a, start - 1, tol=tol, residual=False).z.reshape(-1)
    for j, s in enumerate(syms):
        Z[j] = z
        z = table[s] @ z
        z = z / (e @ z).real

    # Z~_{k+1} for k = start .. start+n-1, built downward from the end
    Zt = np.empty((n_sites, d * d), dtype=complex)
    zt = z_backward(model, path, a, start + n_sites, tol=tol, residual=False).z.reshape(-1)
    for j in range(n_sites - 1, -1, -1):
        Zt[j] = zt
        zt = table[syms[j]].conj().T @ zt
        zt = zt / (e @ zt).real

    vals = np.empty(n_sites)
    for j, s in enumerate(syms):
        num = np.vdot(Zt[j], dtable[s] @ Z[j]).real
        den = np.vdot(Zt[j], table[s] @ Z[j]).real
        vals[j] = num / den
    return DerivativeEstimate(a, float(vals.mean()), block_std_error(vals), n_sites)


# -- Legendre transform ------------------------------------------------------

@dataclass
class RateProfile:
    """Sampled ``λ(alpha)`` together with its convexified Legendre transform.

    ``lambda_star[i] = sup_alpha (s_grid[i] alpha - λ(alpha))``; points
    outside the resolved slope range carry ``inf`` and the flag
    ``"effectively-infinite"``.
    """

    alphas: np.ndarray
    lambdas: np.ndarray
    std_errors: np.ndarray
    lambdas_convex: np.ndarray
    s_grid: np.ndarray
    lambda_star: np.ndarray
    domain_flags: list
    method_spread: np.ndarray | None = None
    partial: bool = False
    diagnostics: dict = field(default_factory=dict)

    def rate(self, s):
        """Rate function of the Birkhoff mean at ``s``, i.e. ``λ*(-s)``."""
        return legendre_value(self, -np.asarray(s, dtype=float))


def convexify(alphas, lambdas):
    """Convex fit: weighted isotonic regression of the chord slopes, re-integrated."""
    a = np.asarray(alphas, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    da = np.diff(a)
    slopes = np.diff(lam) / da
    iso = isotonic_regression(slopes, weights=da, increasing=True).x
    out = np.concatenate([[0.0], np.cumsum(iso * da)])
    return out + np.mean(lam - out), iso


def _conjugate(a, lam, s):
    return np.max(np.outer(s, a) - lam[None, :], axis=1)


def legendre(alphas, lambdas, s_grid=None, std_errors=None, n_s=201):
    """Convexify ``λ`` on its grid and take ``λ*(s) = max_alpha (s alpha - λ(alpha))``.

    The resolved ``s`` range is the slope range of the convexified curve.
    The default ``s_grid`` covers that range plus a 10% margin on each side
    so the boundary flags are visible.
    """
    a = np.asarray(alphas, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if a.ndim != 1 or len(a) < 3 or lam.shape != a.shape:
        raise ValueError("legendre needs at least 3 grid points")
    order = np.argsort(a)
    a, lam = a[order], lam[order]
    if np.any(np.diff(a) <= 0):
        raise ValueError("alpha grid has repeated points")
    lam_c, slopes = convexify(a, lam)
    lo, hi = slopes[0], slopes[-1]
    span_tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if s_grid is None:
        w = 0.1 * (hi - lo) if hi > lo else 1.0
        s_grid = np.union1d(np.linspace(lo - w, hi + w, n_s), [lo, hi])
    s = np.asarray(s_grid, dtype=float)
    inside = (s >= lo - span_tol) & (s <= hi + span_tol)
    star = np.full(s.shape, np.inf)
    if np.any(inside):
        star[inside] = _conjugate(a, lam_c, s[inside])
    flags = ["finite" if f else "effectively-infinite" for f in inside]
    se = np.zeros_like(lam) if std_errors is None else np.asarray(std_errors, dtype=float)[order]
    return RateProfile(a, lam, se, lam_c, s, star, flags)


def legendre_value(profile, s):
    """``λ*(s)`` of a profile at arbitrary points (``inf`` outside the resolved span)."""
    a, lam_c = profile.alphas, profile.lambdas_convex
    slopes = np.diff(lam_c) / np.diff(a)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = _conjugate(a, lam_c, s)
    tol = 1e-12 * max(1.0, np.abs(slopes).max())
    out[(s < slopes.min() - tol) | (s > slopes.max() + tol)] = np.inf
    return out


# -- profile assembly --------------------------------------------------------

def replica_path(model, root_seed, replica):
    """Environment path of a disorder replica; shared by all alpha values."""
    ss = np.random.SeedSequence(root_seed, spawn_key=(PATH_STREAM, replica))
    return sample_path(model, 0, ss)


def _task(model, path, alpha, n, tol, spread):
    fp = lyapunov_fixedpoint(model, path, alpha, n, tol=tol)
    out = {"value": fp.value, "std_error": fp.std_error, "spread": np.nan}
    if spread:
        d = model.dim
        norm = lyapunov_norm(model, path, alpha, n)
        tr = lyapunov_trace(model, path, alpha, np.eye(d) / d, n)
        vals = (norm.value, tr.value, fp.value)
        out["spread"] = float(max(vals) - min(vals))
        out["methods"] = dict(zip(METHODS, vals))
    return out


def run_tasks(fn, tasks, threads=1):
    """Evaluate ``fn(*task)`` for each task; results come back in task order."""
    if threads <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def lambda_profile(model, alphas, n, n_replicas=1, seed=0, threads=1, tol=DEFAULT_TOL,
                   diagnostics=True):
    """Quenched ``λ(alpha)`` on a grid by the fixed-point estimator.

    Each replica is an independent environment path; the value at each alpha
    is the replica mean and ``std_error`` the replica standard error (for a
    single replica the block standard error).  Returns a dict of arrays plus
    the list of alphas that failed to converge.
    """
    alphas = np.asarray(alphas, dtype=float)
    paths = [replica_path(model, seed, r) for r in range(n_replicas)]
    tasks = [(model, paths[r], float(a), n, tol, diagnostics and r == 0)
             for a in alphas for r in range(n_replicas)]

    def guarded(*t):
        try:
            return _task(*t)
        except NonConvergenceError as exc:
            return {"error": str(exc), "diameter": exc.diameter}

    results = run_tasks(guarded, tasks, threads)
    lam = np.full(len(alphas), np.nan)
    se = np.full(len(alphas), np.nan)
    spread = np.full(len(alphas), np.nan)
    methods = [None] * len(alphas)
    failed = []
    for i, a in enumerate(alphas):
        chunk = results[i * n_replicas:(i + 1) * n_replicas]
        if any("error" in c for c in chunk):
            failed.append(float(a))
            continue
        vals = np.array([c["value"] for c in chunk])
        lam[i] = vals.mean()
        se[i] = (np.std(vals, ddof=1) / np.sqrt(n_replicas)) if n_replicas > 1 else chunk[0]["std_error"]
        spread[i] = chunk[0]["spread"]
        methods[i] = chunk[0].get("methods")
    return {"alphas": alphas, "lambdas": lam, "std_errors": se, "method_spread": spread,
            "methods": methods, "failed": failed}


def rate_function(model, alphas, n, n_replicas=1, seed=0, threads=1, s_grid=None,
                  tol=DEFAULT_TOL, diagnostics=True):
    """``λ`` on the alpha grid followed by its Legendre transform.

    Alphas that fail to converge are dropped and the profile is marked
    ``partial``.
    """
    prof = lambda_profile(model, alphas, n, n_replicas, seed, threads, tol, diagnostics)
    ok = ~np.isnan(prof["lambdas"])
    out = legendre(prof["alphas"][ok], prof["lambdas"][ok], s_grid, prof["std_errors"][ok])
    out.method_spread = prof["method_spread"][ok]
    out.partial = bool(prof["failed"])
    out.diagnostics = {"failed_alphas": prof["failed"], "n_steps": n, "n_replicas": n_replicas,
                       "methods": [m for m, k in zip(prof["methods"], ok) if k]}
    return out

