"""Completely positive maps, instruments and their analytic deformations.

A :class:`CPMap` on ``d x d`` matrices is stored as its ``d^2 x d^2``
superoperator acting on *row-major* vectorised matrices, i.e.
``vec(X) = X.reshape(-1)``.  With this convention a Kraus family
``{K_k}`` has superoperator ``sum_k K_k ⊗ conj(K_k)`` and products of maps
are plain matrix products, which is what long cocycle products need.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Mapping, Sequence

import numpy as np

from .matlin import ValidationError, as_square, random_pure_vector

ALGEBRA_ATOL = 1e-10
SPECTRAL_TOL = 1e-9


class Verdict(str, enum.Enum):
    """Three-valued answer of the positivity predicates."""

    YES = "yes"
    NO = "no"
    UNDETERMINED = "undetermined"

    def __str__(self):
        return self.value


@dataclass(frozen=True, eq=False)
class CPMap:
    """Completely positive map given by its superoperator.

    Attributes
    ----------
    dim : int
        Hilbert space dimension ``d``.
    superop : ndarray, shape (d*d, d*d)
        Matrix of the map on row-major vectorised operators.
    kraus : tuple of ndarray, optional
        Kraus operators the map was built from, if any.
    """

    dim: int
    superop: np.ndarray
    kraus: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        S = np.asarray(self.superop, dtype=complex)
        d2 = self.dim * self.dim
        if S.shape != (d2, d2):
            raise ValidationError(f"superoperator must have shape {(d2, d2)}, got {S.shape}")
        object.__setattr__(self, "superop", S)

    def __call__(self, X):
        return apply(self, X)


def from_superop(S, check=True, atol=ALGEBRA_ATOL):
    """Wrap a superoperator, optionally checking complete positivity."""
    S = np.asarray(S, dtype=complex)
    d = int(round(np.sqrt(S.shape[0])))
    m = CPMap(d, S)
    if check:
        lo = np.linalg.eigvalsh(choi(m))[0]
        if lo < -atol * max(1.0, np.abs(S).max()):
            raise ValidationError(f"map is not completely positive (Choi min eigenvalue {lo:.3e})")
    return m


def from_kraus(kraus: Sequence) -> CPMap:
    ks = tuple(as_square(K, "Kraus operator") for K in kraus)
    if not ks:
        raise ValidationError("at least one Kraus operator is required")
    d = ks[0].shape[0]
    if any(K.shape != (d, d) for K in ks):
        raise ValidationError("Kraus operators must share one shape")
    S = sum(np.kron(K, K.conj()) for K in ks)
    return CPMap(d, S, ks)


def identity_map(d):
    return from_kraus([np.eye(d)])


def zero_map(d):
    return CPMap(d, np.zeros((d * d, d * d)))


def unitary_map(U):
    return from_kraus([U])


def constant_map(sigma):
    """The replacement channel ``rho -> tr(rho) sigma``."""
    sigma = as_square(sigma, "sigma")
    d = sigma.shape[0]
    # tr(rho) = vec(I)^T vec(rho) in row-major order
    S = np.outer(sigma.reshape(-1), np.eye(d).reshape(-1))
    return CPMap(d, S)


def depolarizing(d):
    """Completely depolarising channel ``rho -> tr(rho) I/d``."""
    return constant_map(np.eye(d) / d)


def apply(phi: CPMap, X):
    X = as_square(X)
    d = phi.dim
    if X.shape != (d, d):
        raise ValidationError(f"dimension mismatch: map on {d}x{d}, matrix {X.shape}")
    return (phi.superop @ X.reshape(-1)).reshape(d, d)


def adjoint(phi: CPMap) -> CPMap:
    """Hilbert-Schmidt adjoint."""
    kraus = None if phi.kraus is None else tuple(K.conj().T for K in phi.kraus)
    return CPMap(phi.dim, phi.superop.conj().T, kraus)


def _same_dim(a: CPMap, b: CPMap):
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")


def compose(outer: CPMap, inner: CPMap) -> CPMap:
    """``outer ∘ inner``."""
    _same_dim(outer, inner)
    return CPMap(outer.dim, outer.superop @ inner.superop)


def add(a: CPMap, b: CPMap) -> CPMap:
    _same_dim(a, b)
    return CPMap(a.dim, a.superop + b.superop)


def scale(c, m: CPMap) -> CPMap:
    if c < 0:
        raise ValueError("scaling must be nonnegative to stay completely positive")
    kraus = None if m.kraus is None else tuple(np.sqrt(c) * K for K in m.kraus)
    return CPMap(m.dim, c * m.superop, kraus)


def power(m: CPMap, k: int) -> CPMap:
    return CPMap(m.dim, np.linalg.matrix_power(m.superop, k))


def choi(phi: CPMap):
    """Choi matrix ``sum_ij phi(|i><j|) ⊗ |i><j|``."""
    d = phi.dim
    return phi.superop.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


def _vec_identity(d):
    return np.eye(d).reshape(-1)


def adjoint_identity(phi: CPMap):
    """``phi^*(I)`` as a ``d x d`` matrix."""
    d = phi.dim
    return (phi.superop.conj().T @ _vec_identity(d)).reshape(d, d)


def is_trace_preserving(phi: CPMap, atol=SPECTRAL_TOL):
    return bool(np.max(np.abs(adjoint_identity(phi) - np.eye(phi.dim))) <= atol)


def is_unital(phi: CPMap, atol=SPECTRAL_TOL):
    d = phi.dim
    out = (phi.superop @ _vec_identity(d)).reshape(d, d)
    return bool(np.max(np.abs(out - np.eye(d))) <= atol)


def _herm_eigvals(A):
    return np.linalg.eigvalsh(0.5 * (A + A.conj().T))


def v_floor(phi: CPMap):
    """``inf{||phi(X)||_1 : X state}`` for a positive map, i.e. ``λ_min(phi^*(I))``."""
    return float(max(0.0, _herm_eigvals(adjoint_identity(phi))[0]))


def op_norm_1(phi: CPMap):
    """Induced trace norm of a positive map, ``λ_max(phi^*(I))``."""
    return float(_herm_eigvals(adjoint_identity(phi))[-1])


def is_positivity_improving(phi: CPMap, n_probe=256, tol=SPECTRAL_TOL, steps=50, seed=0):
    """Decide whether ``phi`` maps every nonzero PSD matrix to a positive definite one.

    A positive definite Choi matrix certifies ``yes``.  Otherwise pure states
    are probed: ``n_probe`` random vectors are refined by alternating
    minimisation of ``<y|phi(xx^*)|y>`` over unit ``x`` and ``y``.  If some
    probe reaches ``λ_min(phi(xx^*)) <= tol * tr phi(xx^*)`` the answer is
    ``no``; if neither test is conclusive the answer is ``undetermined``.
    """
    d = phi.dim
    C = choi(phi)
    ev = _herm_eigvals(C)
    if ev[-1] <= 0:
        return Verdict.NO
    if ev[0] > tol * ev[-1]:
        return Verdict.YES
    S = phi.superop
    Sa = S.conj().T
    rng = np.random.default_rng(seed)
    X = np.stack([random_pure_vector(d, rng) for _ in range(n_probe)])
    best = np.inf
    for _ in range(steps):
        P = np.einsum("ni,nj->nij", X, X.conj()).reshape(n_probe, -1)
        img = (P @ S.T).reshape(n_probe, d, d)
        img = 0.5 * (img + np.conj(np.swapaxes(img, 1, 2)))
        w, V = np.linalg.eigh(img)
        tr = np.maximum(np.trace(img, axis1=1, axis2=2).real, np.finfo(float).tiny)
        rel = w[:, 0] / tr
        best = min(best, rel.min())
        if best <= tol:
            return Verdict.NO
        Y = V[:, :, 0]
        Q = np.einsum("ni,nj->nij", Y, Y.conj()).reshape(n_probe, -1)
        back = (Q @ Sa.T).reshape(n_probe, d, d)
        back = 0.5 * (back + np.conj(np.swapaxes(back, 1, 2)))
        X = np.linalg.eigh(back)[1][:, :, 0]
    return Verdict.UNDETERMINED


def is_irreducible(phi: CPMap, **probe):
    """``(id + phi)^(d-1)`` positivity improving."""
    d = phi.dim
    base = np.eye(d * d) + phi.superop
    M = np.linalg.matrix_power(base, max(d - 1, 0))
    return is_positivity_improving(CPMap(d, M), **probe)


def is_primitive(phi: CPMap, **probe):
    """Some power ``phi^j`` with ``j < d`` is positivity improving.

    For ``d = 1`` the single power ``j = 1`` is tested.
    """
    d = phi.dim
    seen_undetermined = False
    P = np.eye(d * d, dtype=complex)
    for _ in range(max(d - 1, 1)):
        P = phi.superop @ P
        v = is_positivity_improving(CPMap(d, P), **probe)
        if v is Verdict.YES:
            return Verdict.YES
        if v is Verdict.UNDETERMINED:
            seen_undetermined = True
    return Verdict.UNDETERMINED if seen_undetermined else Verdict.NO


@dataclass(frozen=True, eq=False)
class Instrument:
    """Finite family of CP maps labelled by outcomes, with outcome weights.

    ``weights[i]`` is the real quantity attached to outcome ``labels[i]``.
    The branches must add up to a trace preserving map.
    """

    labels: tuple
    branches: tuple
    weights: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        branches = tuple(self.branches)
        w = np.asarray(self.weights, dtype=float)
        if not labels:
            raise ValidationError("instrument needs at least one outcome")
        if len(set(labels)) != len(labels):
            raise ValidationError("outcome labels must be distinct")
        if len(branches) != len(labels) or w.shape != (len(labels),):
            raise ValidationError("labels, branches and weights must have equal length")
        d = branches[0].dim
        if any(b.dim != d for b in branches):
            raise ValidationError("all branches must act on the same dimension")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "branches", branches)
        object.__setattr__(self, "weights", w)
        dev = np.max(np.abs(adjoint_identity(self.channel) - np.eye(d)))
        if dev > ALGEBRA_ATOL:
            raise ValidationError(
                f"instrument branches do not sum to a trace preserving map (deviation {dev:.3e})"
            )

    @property
    def dim(self):
        return self.branches[0].dim

    @property
    def big_f(self):
        return float(np.max(np.abs(self.weights)))

    @cached_property
    def stack(self):
        """Branch superoperators stacked along axis 0."""
        return np.stack([b.superop for b in self.branches])

    @cached_property
    def trace_rows(self):
        """Row ``a`` maps ``vec(rho)`` to ``tr psi_a(rho)``."""
        return np.einsum("i,aij->aj", _vec_identity(self.dim), self.stack)

    @cached_property
    def channel(self) -> CPMap:
        return CPMap(self.dim, np.sum([b.superop for b in self.branches], axis=0))

    def index(self, label):
        return self.labels.index(label)

    def branch(self, label) -> CPMap:
        return self.branches[self.index(label)]

    def weight(self, label) -> float:
        return float(self.weights[self.index(label)])


def make_instrument(branches: Mapping[Hashable, CPMap], weights: Mapping[Hashable, float]):
    labels = tuple(branches)
    missing = [a for a in labels if a not in weights]
    if missing:
        raise ValidationError(f"no weight given for outcomes {missing}")
    return Instrument(labels, tuple(branches[a] for a in labels), [weights[a] for a in labels])


def instrument_from_kraus(outcomes: Mapping[Hashable, tuple]):
    """Build an instrument from ``{label: (kraus_list, weight)}``."""
    return make_instrument(
        {a: from_kraus(ks) for a, (ks, _) in outcomes.items()},
        {a: w for a, (_, w) in outcomes.items()},
    )


def deform_superop(inst: Instrument, alpha):
    """Superoperator of ``sum_a exp(-alpha f(a)) psi_a``."""
    c = np.exp(-alpha * inst.weights)
    return np.tensordot(c, inst.stack, axes=1)


def deform_derivative_superop(inst: Instrument, alpha):
    """``d/dalpha`` of :func:`deform_superop`."""
    c = -inst.weights * np.exp(-alpha * inst.weights)
    return np.tensordot(c, inst.stack, axes=1)


def deform(inst: Instrument, alpha) -> CPMap:
    """Analytic deformation ``sum_a exp(-alpha f(a)) psi_a`` of the instrument channel."""
    return CPMap(inst.dim, deform_superop(inst, alpha))
