"""Products of deformed channels along a path, their projective fixed points
and contraction coefficients.

Deformed site maps are cached per ``(model, alpha)``.  Products are kept
normalised to unit induced trace norm, with the scale carried separately as a
log, so that lengths far beyond the under/overflow threshold are safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .channels import (
    CPMap,
    deform_derivative_superop,
    deform_superop,
    op_norm_1,
)
from .matlin import _proj_distance, pd_distance_batch, random_pure_vector

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 12
_N_START = 4


class NonConvergenceError(RuntimeError):
    """Fixed-point iteration did not settle; ``diameter`` is the last two-seed distance."""

    def __init__(self, message, diameter):
        super().__init__(message)
        self.diameter = diameter


class ContractionError(ValueError):
    """The map sends a probed state to zero."""


@lru_cache(maxsize=256)
def _site_superops(model, alpha):
    return {s: deform_superop(inst, alpha) for s, inst in model.site_table.items()}


@lru_cache(maxsize=256)
def _site_derivatives(model, alpha):
    return {s: deform_derivative_superop(inst, alpha) for s, inst in model.site_table.items()}


def site_superop(model, path, alpha, k):
    """Superoperator of the deformed channel at site ``k``."""
    return _site_superops(model, float(alpha))[path.symbol(k)]


def site_derivative(model, path, alpha, k):
    return _site_derivatives(model, float(alpha))[path.symbol(k)]


def _vec_eye(d):
    return np.eye(d).reshape(-1)


@dataclass(frozen=True)
class CocycleProduct:
    """Normalised product of deformed site maps.

    ``superop`` has induced trace norm 1; the true product is
    ``exp(log_scale) * superop``.
    """

    alpha: float
    start: int
    length: int
    direction: str
    dim: int
    superop: np.ndarray
    log_scale: float

    @property
    def map(self):
        return CPMap(self.dim, self.superop)

    def full_superop(self):
        return np.exp(self.log_scale) * self.superop


def _normalise(S, d):
    c = op_norm_1(CPMap(d, S))
    return S / c, np.log(c)


def forward_product(model, path, alpha, start, n):
    """``phi_{start+n-1} ∘ ... ∘ phi_start`` (later sites act on the left)."""
    d = model.dim
    S = np.eye(d * d, dtype=complex)
    log_scale = 0.0
    for j in range(n):
        S, ls = _normalise(site_superop(model, path, alpha, start + j) @ S, d)
        log_scale += ls
    return CocycleProduct(float(alpha), start, n, "forward", d, S, log_scale)


def backward_product(model, path, alpha, end, n):
    """``phi_end ∘ phi_{end-1} ∘ ... ∘ phi_{end-n+1}``."""
    d = model.dim
    S = np.eye(d * d, dtype=complex)
    log_scale = 0.0
    for j in range(n):
        S, ls = _normalise(S @ site_superop(model, path, alpha, end - j), d)
        log_scale += ls
    return CocycleProduct(float(alpha), end, n, "backward", d, S, log_scale)


@dataclass(frozen=True)
class FixedPointResult:
    z: np.ndarray
    alpha: float
    site: int
    residual: float
    iterations_used: int
    diameter: float
    depth: int


def _push(vecs, mats):
    """Apply ``mats`` in order to the columns of ``vecs``, renormalising traces."""
    d = int(round(np.sqrt(vecs.shape[0])))
    e = _vec_eye(d)
    for M in mats:
        vecs = M @ vecs
        vecs = vecs / (e @ vecs).real
    return vecs


def _as_density(v, d):
    Z = v.reshape(d, d)
    Z = 0.5 * (Z + Z.conj().T)
    return Z / np.trace(Z).real


def _seeds(d, seed):
    rng = np.random.default_rng(seed)
    x = random_pure_vector(d, rng)
    return np.stack([_vec_eye(d) / d, np.outer(x, x.conj()).reshape(-1)], axis=1)


def _iterate(model, path, alpha, site, tol, max_iter, seed, backward):
    d = model.dim
    Y = _seeds(d, seed)
    prev = None
    diam = np.inf
    N = _N_START
    for it in range(1, max_iter + 1):
        if backward:
            # (phi_{site+N-1} ∘ ... ∘ phi_site)^* = phi_site^* ∘ ... ∘ phi_{site+N-1}^*
            mats = [site_superop(model, path, alpha, site + j).conj().T for j in range(N - 1, -1, -1)]
        else:
            mats = [site_superop(model, path, alpha, site - j) for j in range(N - 1, -1, -1)]
        V = _push(Y, mats)
        Z1, Z2 = _as_density(V[:, 0], d), _as_density(V[:, 1], d)
        diam = _proj_distance(Z1, Z2)
        step = np.inf if prev is None else _proj_distance(Z1, prev)
        if diam < tol and step < tol:
            return Z1, it, diam, N
        prev = Z1
        N *= 2
    raise NonConvergenceError(
        f"fixed point at site {site}, alpha={alpha} not reached after {max_iter} doublings "
        f"(last diameter {diam:.3e})",
        diam,
    )


def z_forward(model, path, alpha, site=0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=0,
              residual=True):
    """Projective fixed point ``Z_site = lim_N Phi_{-N} · Y`` of the forward cocycle.

    The limit is taken along ``N = 4, 8, 16, ...`` from two seeds (``I/d``
    and a random pure state) and accepted once the seeds agree and the
    iterate has stopped moving, both to within ``tol`` in the projective
    metric.  ``residual`` is ``d(phi_site · Z_{site-1}, Z_site)`` with
    ``Z_{site-1}`` computed independently.
    """
    Z, it, diam, N = _iterate(model, path, alpha, site, tol, max_iter, seed, backward=False)
    res = np.nan
    if residual:
        Zp = z_forward(model, path, alpha, site - 1, tol, max_iter, seed, residual=False).z
        img = (site_superop(model, path, alpha, site) @ Zp.reshape(-1))
        res = _proj_distance(_as_density(img, model.dim), Z)
    return FixedPointResult(Z, float(alpha), site, res, it, diam, N)


def z_backward(model, path, alpha, site=0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=0,
               residual=True):
    """Fixed point of the adjoint cocycle, ``Z~_site = lim_N (Phi_{N,site})^* · Y``.

    ``residual`` is ``d(phi_site^* · Z~_{site+1}, Z~_site)``.
    """
    Z, it, diam, N = _iterate(model, path, alpha, site, tol, max_iter, seed, backward=True)
    res = np.nan
    if residual:
        Zn = z_backward(model, path, alpha, site + 1, tol, max_iter, seed, residual=False).z
        img = site_superop(model, path, alpha, site).conj().T @ Zn.reshape(-1)
        res = _proj_distance(_as_density(img, model.dim), Z)
    return FixedPointResult(Z, float(alpha), site, res, it, diam, N)


# -- contraction coefficient -------------------------------------------------

@dataclass(frozen=True)
class ContractionEstimate:
    """Estimate of ``diam_d(Phi · S)``.

    ``kind`` is ``"grid-oracle"`` for ``d = 2`` (dense Bloch-sphere grid plus
    local refinement) and ``"lower-bound"`` otherwise.
    """

    value: float
    kind: str

    def __float__(self):
        return float(self.value)


def fibonacci_sphere(n):
    """Nearly uniform points on the unit sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _bloch_vectors(points):
    theta = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
    phi = np.arctan2(points[:, 1], points[:, 0])
    return np.stack([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], axis=1)


def _images(S, vecs, d):
    P = np.einsum("ni,nj->nij", vecs, vecs.conj()).reshape(len(vecs), -1)
    img = (P @ S.T).reshape(len(vecs), d, d)
    img = 0.5 * (img + np.conj(np.swapaxes(img, 1, 2)))
    tr = np.trace(img, axis1=1, axis2=2).real
    if np.any(tr <= 0):
        raise ContractionError("map annihilates a probed pure state")
    return img / tr[:, None, None]


def _pair_distance(S, d, params):
    x = params[:2 * d].reshape(2, d)
    y = params[2 * d:].reshape(2, d)
    vecs = np.stack([x[0] + 1j * x[1], y[0] + 1j * y[1]])
    vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    img = _images(S, vecs, d)
    return _proj_distance(img[0], img[1])


def _refine(S, d, x, y, steps):
    p0 = np.concatenate([x.real, x.imag, y.real, y.imag])
    res = minimize(lambda p: -_pair_distance(S, d, p), p0, method="L-BFGS-B",
                   options={"maxiter": steps})
    return max(-res.fun, _pair_distance(S, d, p0))


def contraction_coeff(phi, n_pairs=2000, refine_steps=40, seed=0, n_grid=160, n_refine=6):
    """Projective diameter of the image of the state space under ``phi``.

    The diameter is attained on pure states, so pure pairs are probed: for
    ``d = 2`` every pair of an ``n_grid``-point Bloch-sphere grid, otherwise
    ``n_pairs`` random pairs.  The best ``n_refine`` pairs are then improved
    by local ascent.  Returns a :class:`ContractionEstimate`.
    """
    if isinstance(phi, CocycleProduct):
        phi = phi.map
    d, S = phi.dim, phi.superop
    if d == 1:
        return ContractionEstimate(0.0, "grid-oracle")
    rng = np.random.default_rng(seed)
    if d == 2:
        vecs = _bloch_vectors(fibonacci_sphere(n_grid))
        img = _images(S, vecs, d)
        i, j = np.triu_indices(n_grid, 1)
        kind = "grid-oracle"
    else:
        vecs = np.stack([random_pure_vector(d, rng) for _ in range(2 * n_pairs)])
        img = _images(S, vecs, d)
        i, j = np.arange(n_pairs), np.arange(n_pairs, 2 * n_pairs)
        kind = "lower-bound"
    dist = pd_distance_batch(img[i], img[j])
    best = float(dist.max())
    if best >= 1.0:
        return ContractionEstimate(1.0, kind)
    for t in np.argsort(dist)[::-1][:n_refine]:
        best = max(best, _refine(S, d, vecs[i[t]], vecs[j[t]], refine_steps))
    return ContractionEstimate(float(min(best, 1.0)), kind)


def kappa_estimate(model, path, alpha, n_max, start=0, **kw):
    """``[(n, c(Phi_n)^(1/n)) for n = 1..n_max]`` along the path from ``start``."""
    d = model.dim
    S = np.eye(d * d, dtype=complex)
    out = []
    for n in range(1, n_max + 1):
        S, _ = _normalise(site_superop(model, path, alpha, start + n - 1) @ S, d)
        c = contraction_coeff(CPMap(d, S), **kw).value
        out.append((n, float(c ** (1.0 / n))))
    return out
