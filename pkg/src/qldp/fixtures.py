"""Ready-made models: the two-channel reset/depolarising pair, random
instruments, two-time measurement sites with a real coupling Hamiltonian,
and a classical (one-dimensional) mixture.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from . import environment as env
from .channels import instrument_from_kraus
from .ep import TriWitness, TwoTimeSite, build_two_time_instrument


def ket(v):
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v)


def reset_instrument(eps, gamma_vec, weights=(0.0, 1.0, -1.0)):
    """Instrument whose channel is ``rho -> eps tr(rho) gamma + (1 - eps) rho``.

    Outcome ``"keep"`` is the branch ``(1 - eps) rho``; outcome ``"reset-k"``
    is ``eps <k|rho|k> gamma`` (Kraus ``sqrt(eps) |g><k|``).  ``gamma`` is the
    pure state ``gamma_vec``; ``weights`` are attached in that label order.
    """
    g = ket(gamma_vec)
    d = len(g)
    out = {"keep": ([np.sqrt(1.0 - eps) * np.eye(d)], weights[0])}
    for k in range(d):
        e_k = np.zeros(d)
        e_k[k] = 1.0
        out[f"reset-{k}"] = ([np.sqrt(eps) * np.outer(g, e_k)], weights[1 + k])
    return instrument_from_kraus(out)


def depolarizing_pair(eps=(0.3, 0.5), probabilities=(0.5, 0.5), weights=(0.0, 1.0, -1.0)):
    """i.i.d. environment over two qubit reset channels.

    Site 1 resets to ``|0>`` with probability ``eps[0]``, site 2 to ``|+>``
    with probability ``eps[1]``.  Neither channel is positivity improving but
    their composition is.
    """
    table = {
        "phi1": reset_instrument(eps[0], [1, 0], weights),
        "phi2": reset_instrument(eps[1], [1, 1], weights),
    }
    return env.iid(table, probabilities)


def random_instrument(d, n_outcomes, seed=None, kraus_per_outcome=2, weight_scale=1.0,
                      integer_weights=False):
    """Instrument from a Haar-like random isometry split into outcome blocks."""
    rng = np.random.default_rng(seed)
    r = n_outcomes * kraus_per_outcome
    G = rng.standard_normal((r * d, d)) + 1j * rng.standard_normal((r * d, d))
    Q, _ = np.linalg.qr(G)
    ks = Q.reshape(r, d, d)
    if integer_weights:
        w = rng.integers(-2, 3, size=n_outcomes).astype(float)
    else:
        w = weight_scale * rng.standard_normal(n_outcomes)
    return instrument_from_kraus({
        a: (list(ks[a * kraus_per_outcome:(a + 1) * kraus_per_outcome]), float(w[a]))
        for a in range(n_outcomes)
    })


def random_iid_model(d, n_outcomes, n_symbols=2, seed=None, **kw):
    rng = np.random.default_rng(seed)
    table = {f"s{i}": random_instrument(d, n_outcomes, rng.integers(2**32), **kw)
             for i in range(n_symbols)}
    p = rng.dirichlet(np.ones(n_symbols))
    return env.iid(table, p)


def single_channel_model(instrument):
    return env.deterministic(instrument)


def real_coupling_site(d=2, m=2, seed=None, beta=1.0, energies=None, t=1.0):
    """Two-time site with ``U = exp(i t H)`` for a random real symmetric ``H``.

    Such a ``U`` is symmetric, so plain complex conjugation on system and
    probe is a time-reversal witness.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d * m, d * m))
    H = 0.5 * (A + A.T)
    E = np.arange(m, dtype=float) if energies is None else np.asarray(energies, dtype=float)
    return TwoTimeSite(d, m, expm(1j * t * H), E, beta)


def two_time_model(d=2, m=2, n_symbols=2, seed=0, beta=1.0, probabilities=None):
    """i.i.d. environment over time-reversal invariant two-time sites.

    Returns ``(model, sites, witness)``.
    """
    rng = np.random.default_rng(seed)
    sites = {}
    for i in range(n_symbols):
        E = np.sort(rng.uniform(0.0, 1.5, size=m))
        sites[f"u{i}"] = real_coupling_site(d, m, rng.integers(2**32), beta, E, t=1.0)
    table = {k: build_two_time_instrument(s) for k, s in sites.items()}
    p = np.full(n_symbols, 1.0 / n_symbols) if probabilities is None else probabilities
    return env.iid(table, p), sites, TriWitness.conjugation(d, m)


def identity_two_time_model(d=2, m=2, beta=1.0):
    site = TwoTimeSite(d, m, np.eye(d * m), np.arange(m, dtype=float), beta)
    return env.deterministic(build_two_time_instrument(site)), site


CLASSICAL_SITES = {
    "A": ((0.5, 0.5), (0.0, 1.0)),
    "B": ((0.3, 0.7), (0.0, 1.0)),
}


def classical_d1(sites=CLASSICAL_SITES, probabilities=(0.5, 0.5)):
    """Scalar model: site ``s`` emits outcome ``a`` with probability ``p_s(a)`` and weight ``f_s(a)``."""
    table = {
        s: instrument_from_kraus({a: ([np.array([[np.sqrt(p[a])]])], f[a]) for a in range(len(p))})
        for s, (p, f) in sites.items()
    }
    return env.iid(table, probabilities)


def classical_lambda(alpha, sites=CLASSICAL_SITES, probabilities=(0.5, 0.5)):
    """``sum_s P(s) log sum_a p_s(a) exp(-alpha f_s(a))`` for the scalar model."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.zeros_like(alpha)
    for w, (p, f) in zip(probabilities, sites.values()):
        p, f = np.asarray(p), np.asarray(f)
        out = out + w * np.log(np.exp(-np.multiply.outer(alpha, f)) @ p)
    return out


BUILTINS = ("depolarizing-pair", "two-time", "classical-d1")


def builtin(name, **kw):
    """Model for a builtin fixture name."""
    if name == "depolarizing-pair":
        return depolarizing_pair(**kw)
    if name == "two-time":
        return two_time_model(**kw)[0]
    if name == "classical-d1":
        return classical_d1(**kw)
    raise KeyError(f"unknown builtin fixture {name!r}; choose from {BUILTINS}")
