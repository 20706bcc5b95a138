"""Entropy production for repeated two-time energy measurements of a probe.

Each site couples the system to a fresh probe in the Gibbs state
``xi = sum_eps g_eps pi_eps`` (``g = exp(-beta E) / Z``), measures the probe
energy before and after a joint unitary ``U`` and records the pair
``(eps, eps')`` with weight ``beta (E_eps' - E_eps)``.  Time-reversal
invariance is witnessed by antiunitaries ``tau = W ∘ conj`` on system and
probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import CPMap, adjoint, deform, from_kraus, make_instrument
from .environment import time_reverse
from .ldp import lambda_profile, legendre, legendre_value
from .matlin import ValidationError, hermitian
from .qmp import exact_marginal, word_probability

UNITARY_ATOL = 1e-10
TRI_TOL = 1e-8


class SupportMismatchError(ValueError):
    """A forward word has positive probability but its time reversal has none."""


@dataclass(frozen=True, eq=False)
class TwoTimeSite:
    """System of dimension ``sys_dim`` coupled to a probe of dimension ``probe_dim``.

    ``unitary`` acts on ``C^d ⊗ C^m`` (system first).  ``probe_basis`` holds
    the probe energy eigenvectors as columns (identity by default).
    """

    sys_dim: int
    probe_dim: int
    unitary: np.ndarray
    energies: np.ndarray
    beta: float
    probe_basis: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        d, m = self.sys_dim, self.probe_dim
        U = np.asarray(self.unitary, dtype=complex)
        E = np.asarray(self.energies, dtype=float)
        B = np.eye(m, dtype=complex) if self.probe_basis is None else np.asarray(self.probe_basis, dtype=complex)
        if U.shape != (d * m, d * m):
            raise ValidationError(f"unitary must have shape {(d * m, d * m)}, got {U.shape}")
        if np.max(np.abs(U.conj().T @ U - np.eye(d * m))) > UNITARY_ATOL:
            raise ValidationError("coupling is not unitary")
        if E.shape != (m,) or np.any(np.diff(E) <= 0):
            raise ValidationError("probe energies must be strictly increasing, one per level")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if B.shape != (m, m) or np.max(np.abs(B.conj().T @ B - np.eye(m))) > UNITARY_ATOL:
            raise ValidationError("probe basis must be an orthonormal basis")
        object.__setattr__(self, "unitary", U)
        object.__setattr__(self, "energies", E)
        object.__setattr__(self, "probe_basis", B)

    @property
    def gibbs(self):
        x = -self.beta * (self.energies - self.energies[0])
        w = np.exp(x)
        return w / w.sum()

    @property
    def labels(self):
        m = self.probe_dim
        return tuple((e, f) for e in range(1, m + 1) for f in range(1, m + 1))


def two_time_kraus(site, eps, eps2):
    """Single Kraus operator ``sqrt(g_eps) (I ⊗ <b_eps2|) U (I ⊗ |b_eps>)`` (1-based labels)."""
    d, m = site.sys_dim, site.probe_dim
    U4 = site.unitary.reshape(d, m, d, m)
    b_in = site.probe_basis[:, eps - 1]
    b_out = site.probe_basis[:, eps2 - 1]
    K = np.einsum("imjn,m,n->ij", U4, b_out.conj(), b_in)
    return np.sqrt(site.gibbs[eps - 1]) * K


def two_time_branch_direct(site, eps, eps2):
    """Branch ``(eps, eps')`` built by partial trace, as a :class:`CPMap`.

    ``rho -> Tr_probe[(I ⊗ pi') U (rho ⊗ g pi) U^† (I ⊗ pi')]`` evaluated on
    matrix units; used to cross-check :func:`two_time_kraus`.
    """
    d, m = site.sys_dim, site.probe_dim
    b_in = site.probe_basis[:, eps - 1]
    b_out = site.probe_basis[:, eps2 - 1]
    pin = site.gibbs[eps - 1] * np.outer(b_in, b_in.conj())
    proj = np.kron(np.eye(d), np.outer(b_out, b_out.conj()))
    U = site.unitary
    S = np.empty((d * d, d * d), dtype=complex)
    for k in range(d * d):
        Ek = np.zeros(d * d)
        Ek[k] = 1.0
        big = proj @ U @ np.kron(Ek.reshape(d, d), pin) @ U.conj().T @ proj
        S[:, k] = np.einsum("imjm->ij", big.reshape(d, m, d, m)).reshape(-1)
    return CPMap(d, S)


def build_two_time_instrument(site):
    """Instrument over the pair alphabet ``{1..m}^2`` with weights ``beta (E_eps' - E_eps)``."""
    E, b = site.energies, site.beta
    branches = {lab: from_kraus([two_time_kraus(site, *lab)]) for lab in site.labels}
    weights = {(e, f): b * (E[f - 1] - E[e - 1]) for (e, f) in site.labels}
    return make_instrument(branches, weights)


def clausius_sum(outcomes, instruments):
    """``sum_j f_j(eps_j, eps'_j)`` for a record of pair outcomes."""
    if len(outcomes) != len(instruments):
        raise ValueError("one instrument per outcome is required")
    total = 0.0
    for a, inst in zip(outcomes, instruments):
        if a not in inst.labels:
            raise ValidationError(f"outcome {a!r} not in the instrument alphabet")
        total += inst.weight(a)
    return total


def reverse_word(word):
    """``((e1,e1'),...,(en,en')) -> ((en',en),...,(e1',e1))``."""
    return [(b, a) for (a, b) in reversed(word)]


def info_ep(model, path, rho, word, start=0):
    """Log-likelihood ratio of a word against its time reversal.

    Returns ``nan`` when both probabilities vanish and ``-inf`` when only the
    forward one does.
    """
    n = len(word)
    base = path.shifted(start)
    p = word_probability(model, base, rho, word)
    q = word_probability(model, time_reverse(model, base, n), rho, reverse_word(word))
    if p <= 0 and q <= 0:
        return np.nan
    if q <= 0:
        raise SupportMismatchError(f"reversed word has zero probability (forward {p:.3e})")
    if p <= 0:
        return -np.inf
    return float(np.log(p / q))


def delta_rho(rho):
    """``1 / λ_min(rho)`` for a faithful state."""
    lo = np.linalg.eigvalsh(hermitian(rho, name="rho"))[0]
    if lo <= 0:
        raise ValidationError("rho is singular; its smallest eigenvalue must be positive")
    return float(1.0 / lo)


def sandwich_check(model, path, rho, n, start=0):
    """Exhaustive check of ``|sigma_n - Sigma_n| <= log Delta_rho`` over all words of length ``n``.

    Returns a dict with the extreme deviation, the bound and the number of
    words with positive probability.
    """
    base = path.shifted(start)
    fwd = exact_marginal(model, base, rho, n)
    rev = exact_marginal(model, time_reverse(model, base, n), rho, n)
    bound = float(np.log(delta_rho(rho)))
    worst = 0.0
    count = 0
    mismatch = 0
    for ix in np.ndindex(fwd.probs.shape):
        p = fwd.probs[ix]
        word = [fwd.labels[j][i] for j, i in enumerate(ix)]
        q = rev.probability(reverse_word(word))
        if p <= 0 and q <= 0:
            continue
        if p <= 0 or q <= 0:
            mismatch += 1
            continue
        sigma = np.log(p / q)
        big_sigma = sum(inst.weight(a) for inst, a in
                        zip((model.instrument(base.symbol(j)) for j in range(n)), word))
        worst = max(worst, abs(sigma - big_sigma))
        count += 1
    return {"n": n, "max_deviation": float(worst), "log_delta": bound, "words": count,
            "support_mismatches": mismatch, "passed": bool(mismatch == 0 and worst <= bound + 1e-12)}


@dataclass(frozen=True)
class TriWitness:
    """Antiunitaries ``tau = W_sys ∘ conj`` and ``tau' = W_probe ∘ conj``."""

    tau_sys: np.ndarray
    tau_probe: np.ndarray

    def __post_init__(self):
        for name in ("tau_sys", "tau_probe"):
            W = np.asarray(getattr(self, name), dtype=complex)
            if np.max(np.abs(W.conj().T @ W - np.eye(len(W)))) > UNITARY_ATOL:
                raise ValidationError(f"{name} must be unitary")
            object.__setattr__(self, name, W)

    @classmethod
    def conjugation(cls, d, m):
        return cls(np.eye(d), np.eye(m))

    def is_involution(self, atol=UNITARY_ATOL):
        return all(np.max(np.abs(W @ W.conj() - np.eye(len(W)))) <= atol
                   for W in (self.tau_sys, self.tau_probe))

    def sys(self, X):
        """``tau X tau^{-1} = W conj(X) W^†``."""
        W = self.tau_sys
        return W @ np.conj(X) @ W.conj().T


def tri_intertwining_residual(site, tri, reversed_site=None):
    """``||(tau ⊗ tau') U - U_rev^† (tau ⊗ tau')||`` and the Gibbs-state analogue."""
    rev = site if reversed_site is None else reversed_site
    W = np.kron(tri.tau_sys, tri.tau_probe)
    r_u = np.max(np.abs(W @ np.conj(site.unitary) - rev.unitary.conj().T @ W))
    xi = site.probe_basis @ np.diag(site.gibbs) @ site.probe_basis.conj().T
    xi_r = rev.probe_basis @ np.diag(rev.gibbs) @ rev.probe_basis.conj().T
    Wp = tri.tau_probe
    r_xi = np.max(np.abs(Wp @ np.conj(xi) - xi_r @ Wp))
    return float(max(r_u, r_xi))


def check_tri_duality(site, tri, alpha_grid=(-1.0, 0.0, 0.5, 1.0, 2.0), n_samples=32, seed=0,
                      reversed_site=None, tol=TRI_TOL):
    """Compare ``phi_rev^(alpha)(tau X tau)`` with ``tau (phi^(1-alpha))^*(X) tau``.

    ``X`` runs over ``n_samples`` random Hermitian matrices of unit Frobenius
    norm.  The reversed site defaults to ``site`` itself (sequence reversal).
    Failures are reported, never raised.
    """
    rev = site if reversed_site is None else reversed_site
    inst = build_two_time_instrument(site)
    inst_r = build_two_time_instrument(rev)
    d = site.sys_dim
    rng = np.random.default_rng(seed)
    Xs = []
    for _ in range(n_samples):
        G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        H = G + G.conj().T
        Xs.append(H / np.linalg.norm(H))
    per_alpha = {}
    for a in alpha_grid:
        lhs_map = deform(inst_r, a)
        rhs_map = adjoint(deform(inst, 1.0 - a))
        dev = max(np.max(np.abs(lhs_map(tri.sys(X)) - tri.sys(rhs_map(X)))) for X in Xs)
        per_alpha[repr(float(a))] = float(dev)
    worst = max(per_alpha.values())
    return {"max_deviation": worst, "per_alpha": per_alpha, "involution": tri.is_involution(),
            "intertwining_residual": tri_intertwining_residual(site, tri, reversed_site),
            "passed": bool(worst < tol and tri.is_involution())}


def gc_resolution(alphas, lambdas_convex):
    """Bound on the Legendre error from the alpha grid: ``max_i h_i (g_{i+1} - g_{i-1}) / 4``
    with ``g`` the chord slopes."""
    a = np.asarray(alphas)
    h = np.diff(a)
    g = np.diff(lambdas_convex) / h
    if len(g) < 2:
        return 0.0
    jump = np.concatenate([[g[1] - g[0]], g[2:] - g[:-2], [g[-1] - g[-2]]])
    return float(np.max(h * jump) / 4.0)


def check_gc_symmetry(model, alphas, n, n_replicas=4, seed=0, threads=1, s_grid=None):
    """Gallavotti-Cohen check ``λ(alpha) = λ(1 - alpha)`` and ``J(-s) = J(s) + s``.

    ``alphas`` should be symmetric about 1/2.  ``J(s) = λ*(-s)`` is the rate
    function of the Birkhoff mean of the Clausius weights.  The J check is
    made where both ``J(s)`` and ``J(-s)`` are resolved, against the
    tolerance ``grid resolution + 3 * sqrt(2) * max std_error``.
    """
    alphas = np.asarray(sorted(set(np.round(np.concatenate([alphas, 1.0 - np.asarray(alphas)]), 12))))
    prof = lambda_profile(model, alphas, n, n_replicas, seed, threads, diagnostics=False)
    lam, se = prof["lambdas"], prof["std_errors"]
    index = {round(float(a), 12): i for i, a in enumerate(alphas)}
    rows = []
    for i, a in enumerate(alphas):
        j = index[round(1.0 - float(a), 12)]
        diff = abs(lam[i] - lam[j])
        comb = float(np.hypot(se[i], se[j]))
        rows.append({"alpha": float(a), "lambda": float(lam[i]), "lambda_mirror": float(lam[j]),
                     "abs_diff": float(diff), "combined_se": comb,
                     "within_3se": bool(diff <= 3 * comb + 1e-12)})
    profile = legendre(alphas, lam, std_errors=se)
    if s_grid is None:
        finite = profile.s_grid[np.isfinite(profile.lambda_star)]
        smax = min(abs(finite.min()), abs(finite.max())) if finite.size else 0.0
        s_grid = np.linspace(-smax, smax, 101)
    s = np.asarray(s_grid, dtype=float)
    J = legendre_value(profile, -s)
    Jm = legendre_value(profile, s)
    resolved = np.isfinite(J) & np.isfinite(Jm)
    resid = Jm - J - s
    tol = gc_resolution(alphas, profile.lambdas_convex) + 3 * np.sqrt(2) * float(np.nanmax(se))
    max_resid = float(np.max(np.abs(resid[resolved]))) if np.any(resolved) else 0.0
    return {
        "alphas": alphas, "lambdas": lam, "std_errors": se, "rows": rows,
        "lambda_passed": all(r["within_3se"] for r in rows),
        "s": s, "J": J, "J_residual": resid, "resolved": resolved,
        "J_max_residual": max_resid, "J_tolerance": float(tol),
        "J_passed": bool(max_resid <= tol), "profile": profile,
        "failed_alphas": prof["failed"],
    }

