"""The repeated-measurement process: sampling, exact enumeration of outcome
probabilities and moment generating functionals.

Outcome probabilities are ``tr[(psi_{a_n} ∘ ... ∘ psi_{a_1})(rho)]`` with the
instrument at step ``j`` read from the environment path at site
``start + j - 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cocycle import _site_superops
from .environment import instrument_at, sample_path, substream
from .matlin import ValidationError

ENUMERATION_GUARD = 10**7
PROB_ATOL = 1e-10
_CHUNK_ROWS = 2**15


class EnumerationGuardError(ValueError):
    """Exhaustive enumeration would exceed the word-count guard."""


def step_probabilities(rho, inst):
    """Outcome distribution ``p(a) = tr psi_a(rho)`` of one measurement."""
    p = (inst.trace_rows @ np.asarray(rho, dtype=complex).reshape(-1)).real
    if p.min() < -PROB_ATOL:
        raise ValidationError(f"negative outcome probability {p.min():.3e}")
    return np.clip(p, 0.0, None)


@dataclass
class Trajectory:
    outcomes: list
    birkhoff_sum: float
    posterior: np.ndarray
    log_prob: float


@dataclass
class TrajectoryBatch:
    """``T`` trajectories of length ``n`` sampled side by side.

    ``indices[t, j]`` is the outcome index at step ``j`` in the instrument of
    site ``start + j``; ``labels[j]`` lists that instrument's labels.
    """

    indices: np.ndarray
    labels: list
    birkhoff_sums: np.ndarray
    posteriors: np.ndarray
    log_probs: np.ndarray
    seed: object = None

    def __len__(self):
        return len(self.birkhoff_sums)

    def __getitem__(self, t):
        outs = [self.labels[j][i] for j, i in enumerate(self.indices[t])]
        return Trajectory(outs, float(self.birkhoff_sums[t]), self.posteriors[t],
                          float(self.log_probs[t]))


def sample_trajectories(model, path, rho0, n, n_traj, seed=None, start=0):
    """Sample ``n_traj`` independent measurement records of length ``n``.

    Each step draws ``a_j`` from the exact conditional law given the current
    posterior, then updates ``rho_j = psi_{a_j}(rho_{j-1}) / p(a_j)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.dim
    e = np.eye(d).reshape(-1)
    V = np.tile(np.asarray(rho0, dtype=complex).reshape(-1), (n_traj, 1))
    idx = np.empty((n_traj, n), dtype=np.int64)
    sums = np.zeros(n_traj)
    logp = np.zeros(n_traj)
    labels = []
    rows = np.arange(n_traj)
    for j in range(n):
        inst = instrument_at(model, path, start + j)
        labels.append(inst.labels)
        P = np.clip((V @ inst.trace_rows.T).real, 0.0, None)
        cum = np.cumsum(P, axis=1)
        u = rng.random(n_traj) * cum[:, -1]
        a = np.minimum((cum <= u[:, None]).sum(axis=1), P.shape[1] - 1)
        p = P[rows, a]
        V = np.einsum("tij,tj->ti", inst.stack[a], V)
        V = V / (V @ e).real[:, None]
        idx[:, j] = a
        sums += inst.weights[a]
        logp += np.log(p)
    post = V.reshape(n_traj, d, d)
    post = 0.5 * (post + np.conj(np.swapaxes(post, 1, 2)))
    return TrajectoryBatch(idx, labels, sums, post, logp, seed)


def sample_trajectory(model, path, rho0, n, seed=None, start=0):
    return sample_trajectories(model, path, rho0, n, 1, seed, start)[0]


@dataclass
class OutcomeTable:
    """Exact joint law of the first ``n`` outcomes.

    ``probs`` has one axis per step; ``labels[j]`` names the entries of axis
    ``j``.
    """

    n: int
    labels: list
    probs: np.ndarray

    def probability(self, word):
        return float(self.probs[tuple(lab.index(a) for lab, a in zip(self.labels, word))])

    @property
    def entries(self):
        return {tuple(lab[i] for lab, i in zip(self.labels, ix)): float(self.probs[ix])
                for ix in np.ndindex(self.probs.shape)}

    def marginal(self):
        """Table of the first ``n - 1`` outcomes."""
        return OutcomeTable(self.n - 1, self.labels[:-1], self.probs.sum(axis=-1))


def _expand(V, stacks):
    """All branch products applied to the rows of ``V`` (row-major word order)."""
    d2 = V.shape[1]
    for st in stacks:
        V = np.einsum("aij,pj->pai", st, V).reshape(-1, d2)
    return V


def exact_marginal(model, path, rho0, n, start=0):
    """Enumerate the probabilities of every outcome word of length ``n``."""
    insts = [instrument_at(model, path, start + j) for j in range(n)]
    sizes = [len(i.labels) for i in insts]
    total = int(np.prod(sizes, dtype=object)) if n else 1
    if total > ENUMERATION_GUARD:
        raise EnumerationGuardError(f"{total} words exceed the enumeration guard {ENUMERATION_GUARD}")
    d = model.dim
    e = np.eye(d).reshape(-1)
    v0 = np.asarray(rho0, dtype=complex).reshape(1, -1)
    # split into a prefix enumerated one word at a time and a vectorised suffix
    split = n
    while split > 0 and int(np.prod(sizes[split - 1:])) <= _CHUNK_ROWS:
        split -= 1
    stacks = [i.stack for i in insts]
    out = np.empty(total)
    block = int(np.prod(sizes[split:])) if split < n else 1
    for k, prefix in enumerate(itertools.product(*[range(s) for s in sizes[:split]])):
        v = v0
        for st, a in zip(stacks, prefix):
            v = v @ st[a].T
        out[k * block:(k + 1) * block] = (_expand(v, stacks[split:]) @ e).real
    return OutcomeTable(n, [i.labels for i in insts], out.reshape(sizes))


def _weight_tensor(table, model, path, start):
    W = np.zeros(table.probs.shape)
    for j in range(table.n):
        w = instrument_at(model, path, start + j).weights
        shape = [1] * table.n
        shape[j] = len(w)
        W = W + w.reshape(shape)
    return W


def log_mgf(model, path, rho0, alpha, n, mode="trace", start=0):
    """``log sum_words exp(-alpha sum f) p(word)``.

    ``bruteforce`` sums over the exact outcome table with compensated
    summation; ``trace`` evaluates ``log tr[Phi_n^(alpha)(rho0)]`` with
    per-step renormalisation.
    """
    if mode == "bruteforce":
        table = exact_marginal(model, path, rho0, n, start)
        W = _weight_tensor(table, model, path, start)
        terms = np.exp(-alpha * W) * table.probs
        return math.log(math.fsum(terms.ravel().tolist()))
    if mode == "trace":
        table = _site_superops(model, float(alpha))
        d = model.dim
        e = np.eye(d).reshape(-1)
        v = np.asarray(rho0, dtype=complex).reshape(-1)
        acc = 0.0
        for j in range(n):
            v = table[path.symbol(start + j)] @ v
            t = (e @ v).real
            acc += math.log(t)
            v = v / t
        return acc
    raise ValueError(f"unknown mode {mode!r}")


def mgf(model, path, rho0, alpha, n, mode="trace", start=0):
    """Moment generating functional ``E[exp(-alpha sum_j f_j(a_j))]`` of the first ``n`` outcomes."""
    return math.exp(log_mgf(model, path, rho0, alpha, n, mode, start))


def log_mgf_from_table(table, model, path, alpha, start=0):
    """Log-sum-exp of ``-alpha sum f + log p`` over a table (zero-probability words skipped)."""
    W = _weight_tensor(table, model, path, start)
    p = table.probs.ravel()
    keep = p > 0
    x = -alpha * W.ravel()[keep] + np.log(p[keep])
    m = x.max()
    return float(m + math.log(math.fsum(np.exp(x - m).tolist())))


def word_probability(model, path, rho0, word, start=0):
    """Probability of one outcome word, by direct application of the branch maps."""
    v = np.asarray(rho0, dtype=complex).reshape(-1)
    for j, a in enumerate(word):
        inst = instrument_at(model, path, start + j)
        v = inst.stack[inst.index(a)] @ v
    d = model.dim
    return float(np.real(np.eye(d).reshape(-1) @ v))


@dataclass(frozen=True)
class EmpiricalRate:
    """``-(1/n) log`` of the fraction of sampled records with Birkhoff mean in an interval."""

    value: float
    hits: int
    n_traj: int
    below_resolution: bool


def empirical_rate(model, rho0, n, n_traj, interval, seed=None, path=None):
    """Monte Carlo estimate of ``-(1/n) log P(S_n / n in [u, v])``.

    With no hits the value is ``inf`` and ``below_resolution`` is set.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    path_seed, traj_seed = substream(seed, 0), substream(seed, 1)
    if path is None:
        path = sample_path(model, 0, path_seed)
    batch = sample_trajectories(model, path, rho0, n, n_traj, traj_seed)
    u, v = interval
    means = batch.birkhoff_sums / n
    hits = int(np.count_nonzero((means >= u) & (means <= v)))
    if hits == 0:
        return EmpiricalRate(np.inf, 0, n_traj, True)
    return EmpiricalRate(0.0 - math.log(hits / n_traj) / n, hits, n_traj, False)
