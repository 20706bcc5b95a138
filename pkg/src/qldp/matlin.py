"""Matrix primitives: density-matrix validation, trace norm and the
projective metric ``d`` built from the order ratio ``m(X, Y)``.

All functions take and return plain ``numpy`` arrays.  Density matrices are
``(d, d)`` complex arrays; validation helpers raise :class:`ValidationError`
when an input is not what it claims to be.
"""

from __future__ import annotations

import numpy as np

#: absolute tolerance on representation invariants (hermiticity, unit trace)
REPR_ATOL = 1e-12
#: eigenvalues in [-PSD_FLOOR, 0] are treated as zero
PSD_FLOOR = 1e-12
#: relative cut-off used to decide the support of a PSD matrix
SUPPORT_RTOL = 1e-10


class ValidationError(ValueError):
    """An input matrix violates a stated invariant."""


def as_square(X, name="X"):
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {X.shape}")
    return X


def hermitian(X, atol=REPR_ATOL, name="X"):
    """Return ``X`` as a complex array after checking ``X == X^†``."""
    X = as_square(X, name)
    dev = np.max(np.abs(X - X.conj().T)) if X.size else 0.0
    if dev > atol:
        raise ValidationError(f"{name} is not Hermitian (max deviation {dev:.3e})")
    return X


def is_psd(X, tol=PSD_FLOOR):
    """Positive semidefinite up to the eigenvalue floor ``tol``."""
    X = as_square(X)
    return bool(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0] >= -tol)


def psd(X, tol=PSD_FLOOR, name="X"):
    X = hermitian(X, name=name)
    lo = np.linalg.eigvalsh(X)[0]
    if lo < -tol:
        raise ValidationError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3e})")
    return X


def density_matrix(X, atol=REPR_ATOL, name="rho"):
    """Validate a density matrix (Hermitian, PSD, unit trace) and return it."""
    X = psd(X, name=name)
    tr = np.trace(X).real
    if abs(tr - 1.0) > atol:
        raise ValidationError(f"{name} must have unit trace, got {tr!r}")
    return X


def trace_norm(X):
    """Trace norm of a Hermitian matrix (sum of |eigenvalues|)."""
    X = as_square(X)
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (X + X.conj().T)))))


def _m_ratio(X, Y, rtol=SUPPORT_RTOL):
    """Unchecked order ratio ``sup{t >= 0 : t X <= Y}`` for PSD ``X != 0``.

    Works on the support of ``Y`` so that singular (e.g. pure) arguments are
    legal: if part of ``X`` lies outside ``supp Y`` the ratio is 0.
    """
    w, V = np.linalg.eigh(0.5 * (Y + Y.conj().T))
    top = w[-1]
    if top <= 0:
        return 0.0
    keep = w > rtol * top
    Xs = 0.5 * (X + X.conj().T)
    trX = np.trace(Xs).real
    if not np.all(keep):
        Vc = V[:, ~keep]
        leak = np.trace(Vc.conj().T @ Xs @ Vc).real
        if leak > rtol * trX:
            return 0.0
    Vs = V[:, keep]
    scale = 1.0 / np.sqrt(w[keep])
    B = (Vs.conj().T @ Xs @ Vs) * scale[:, None] * scale[None, :]
    lmax = np.linalg.eigvalsh(B)[-1]
    if lmax <= 0:
        return np.inf
    return float(1.0 / lmax)


def _distance_from_ratios(mxy, myx):
    prod = mxy * myx
    if not np.isfinite(prod):
        return 0.0
    return float(min(1.0, max(0.0, (1.0 - prod) / (1.0 + prod))))


def _proj_distance(X, Y):
    """Unchecked projective distance between nonzero PSD matrices."""
    return _distance_from_ratios(_m_ratio(X, Y), _m_ratio(Y, X))


def _check_pair(X, Y):
    X = density_matrix(X, name="X")
    Y = density_matrix(Y, name="Y")
    if X.shape != Y.shape:
        raise ValidationError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    return X, Y


def m_ratio(X, Y):
    """Largest ``t >= 0`` with ``Y - t X`` positive semidefinite.

    Parameters
    ----------
    X, Y : array_like
        Density matrices of the same dimension.

    Returns
    -------
    float
        0 when ``supp X`` is not contained in ``supp Y``.
    """
    X, Y = _check_pair(X, Y)
    return _m_ratio(X, Y)


def proj_distance(X, Y):
    """Projective distance ``(1 - m(X,Y) m(Y,X)) / (1 + m(X,Y) m(Y,X))``.

    Symmetric, in ``[0, 1]``, zero iff ``X == Y`` and equal to 1 as soon as
    the supports differ.
    """
    X, Y = _check_pair(X, Y)
    return _proj_distance(X, Y)


def pd_distance_batch(X, Y):
    """Vectorised projective distance for stacks of PSD matrices.

    ``X`` and ``Y`` have shape ``(n, d, d)``.  Pairs where both entries are
    positive definite are handled with one batched Cholesky solve; the rest
    fall back to :func:`_proj_distance`.
    """
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    n = X.shape[0]
    out = np.empty(n)
    ex = np.linalg.eigvalsh(X)
    ey = np.linalg.eigvalsh(Y)
    pd = (ex[:, 0] > SUPPORT_RTOL * ex[:, -1]) & (ey[:, 0] > SUPPORT_RTOL * ey[:, -1])
    if np.any(pd):
        mxy = _m_batch_pd(X[pd], Y[pd])
        myx = _m_batch_pd(Y[pd], X[pd])
        prod = mxy * myx
        out[pd] = np.clip((1.0 - prod) / (1.0 + prod), 0.0, 1.0)
    for i in np.flatnonzero(~pd):
        out[i] = _proj_distance(X[i], Y[i])
    return out


def _m_batch_pd(X, Y):
    L = np.linalg.cholesky(Y)
    W = np.linalg.solve(L, X)
    B = np.linalg.solve(L, np.conj(np.swapaxes(W, -1, -2)))
    B = 0.5 * (B + np.conj(np.swapaxes(B, -1, -2)))
    return 1.0 / np.linalg.eigvalsh(B)[:, -1]


def random_pure_vector(d, rng):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_density(d, mode="generic", seed=None):
    """Draw a random density matrix.

    ``generic`` returns ``G G^† / tr(G G^†)`` for a complex Ginibre ``G``;
    ``pure`` a projector onto a normalised complex Gaussian vector;
    ``diagonal`` a diagonal matrix with a flat-Dirichlet spectrum.
    Deterministic for a fixed ``seed``.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = np.random.default_rng(seed)
    if d == 1:
        return np.ones((1, 1), dtype=complex)
    if mode == "generic":
        G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rho = G @ G.conj().T
        rho = 0.5 * (rho + rho.conj().T)
        return rho / np.trace(rho).real
    if mode == "pure":
        v = random_pure_vector(d, rng)
        return np.outer(v, v.conj())
    if mode == "diagonal":
        return np.diag(rng.dirichlet(np.ones(d))).astype(complex)
    raise ValueError(f"unknown mode {mode!r}")
