"""Ergodic driving processes and the instruments they select.

Four concrete environments are supported: a single fixed symbol, i.i.d.
symbols, a stationary Markov chain, and an irrational circle rotation read
through half-open bins.  A finite explicit sequence, repeated periodically,
is available for hand-built paths.

A realised environment is a :class:`PathWindow`: a lazily extended
two-sided sequence of symbols.  Extension is deterministic in the seed and
does not depend on the order in which sites are requested.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping

import numpy as np

from .channels import (
    Verdict,
    deform,
    is_irreducible,
    is_positivity_improving,
    CPMap,
)
from .matlin import ValidationError

KINDS = ("deterministic-single", "iid", "markov", "rotation", "explicit-path")
_CHUNK = 256
MAX_WORD_LENGTH = 8
WORD_BUDGET = 4096


class ReversibilityError(ValueError):
    """Time reversal requested for an environment whose law is not reversal invariant."""


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    """Driving process plus the per-symbol instrument table.

    Use the constructors :func:`deterministic`, :func:`iid`, :func:`markov`,
    :func:`rotation` and :func:`explicit_path` rather than building this
    directly; they validate the parameters.
    """

    kind: str
    site_table: Mapping[Hashable, object]
    probabilities: np.ndarray | None = None
    transition: np.ndarray | None = None
    stationary: np.ndarray | None = None
    angle: float | None = None
    bin_edges: np.ndarray | None = None
    bin_symbols: tuple | None = None
    sequence: tuple | None = None
    irreducible: dict = field(default_factory=dict, repr=False)

    @property
    def symbols(self):
        return tuple(self.site_table)

    @property
    def dim(self):
        return next(iter(self.site_table.values())).dim

    def instrument(self, symbol):
        try:
            return self.site_table[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} missing from site table") from None

    def detailed_balance(self, atol=1e-10):
        if self.kind != "markov":
            return True
        flux = self.stationary[:, None] * self.transition
        return bool(np.max(np.abs(flux - flux.T)) <= atol)


def _check_table(site_table, strict):
    if not site_table:
        raise ValidationError("site table is empty")
    dims = {inst.dim for inst in site_table.values()}
    if len(dims) != 1:
        raise ValidationError(f"instruments act on different dimensions {sorted(dims)}")
    irreducible = {}
    for sym, inst in site_table.items():
        verdict = is_irreducible(inst.channel, n_probe=64, steps=30)
        irreducible[sym] = verdict
        if strict and verdict is Verdict.NO:
            raise ValidationError(f"channel at symbol {sym!r} is not irreducible")
    return dict(site_table), irreducible


def deterministic(instrument, symbol="s", strict=False):
    table, irr = _check_table({symbol: instrument}, strict)
    return EnvironmentModel("deterministic-single", table, irreducible=irr)


def iid(site_table, probabilities, strict=False):
    table, irr = _check_table(site_table, strict)
    p = np.asarray(probabilities, dtype=float)
    if p.shape != (len(table),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValidationError("iid probabilities must be a probability vector over the site table")
    return EnvironmentModel("iid", table, probabilities=p, irreducible=irr)


def stationary_vector(P):
    """Unique stationary distribution of a stochastic matrix."""
    w, V = np.linalg.eig(P.T)
    near = np.abs(w - 1.0) < 1e-9
    if near.sum() != 1:
        raise ValidationError("stationary vector is not unique; pass it explicitly")
    pi = np.real(V[:, np.argmax(near)])
    pi = pi / pi.sum()
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def markov(site_table, transition, stationary=None, strict=False):
    table, irr = _check_table(site_table, strict)
    P = np.asarray(transition, dtype=float)
    n = len(table)
    if P.shape != (n, n) or np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise ValidationError("transition must be a row-stochastic matrix over the site table")
    pi = stationary_vector(P) if stationary is None else np.asarray(stationary, dtype=float)
    if pi.shape != (n,) or np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ValidationError("stationary vector must be a positive probability vector")
    if np.max(np.abs(pi @ P - pi)) > 1e-10:
        raise ValidationError("stationary vector does not satisfy pi P = pi")
    return EnvironmentModel("markov", table, transition=P, stationary=pi, irreducible=irr)


def rotation(site_table, angle, bin_edges, bin_symbols, strict=False):
    """Circle rotation ``x -> x + angle mod 1`` read through half-open bins.

    ``bin_edges`` runs from 0 to 1; bin ``i`` is ``[edges[i], edges[i+1])``
    and selects the instrument ``site_table[bin_symbols[i]]``.
    """
    table, irr = _check_table(site_table, strict)
    edges = np.asarray(bin_edges, dtype=float)
    if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin edges must increase strictly from 0 to 1")
    syms = tuple(bin_symbols)
    if len(syms) != len(edges) - 1 or any(s not in table for s in syms):
        raise ValidationError("one site-table symbol is needed per bin")
    a = float(angle) % 1.0
    if Fraction(a).limit_denominator(10**6) == Fraction(a):
        raise ValidationError("rotation angle is rational with denominator <= 1e6; not ergodic")
    return EnvironmentModel(
        "rotation", table, angle=a, bin_edges=edges, bin_symbols=syms, irreducible=irr
    )


def explicit_path(site_table, sequence, strict=False):
    """A finite symbol sequence; site ``k`` reads ``sequence[k mod len]``."""
    table, irr = _check_table(site_table, strict)
    seq = tuple(sequence)
    if not seq or any(s not in table for s in seq):
        raise ValidationError("sequence must be nonempty and use site-table symbols")
    return EnvironmentModel("explicit-path", table, sequence=seq, irreducible=irr)


def substream(seed, *keys):
    """Child ``SeedSequence`` keyed by ``keys``; unlike ``spawn`` it never mutates ``seed``."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))


class _SiteBuffer:
    """Two-sided symbol-index storage for the i.i.d. and Markov kinds.

    Forward sites ``0, 1, ...`` and backward sites ``-1, -2, ...`` each come
    from their own RNG stream, consumed in fixed-size chunks.
    """

    def __init__(self, model, seed_seq):
        self.model = model
        fwd, bwd = substream(seed_seq, 0), substream(seed_seq, 1)
        self.rng_fwd = np.random.default_rng(fwd)
        self.rng_bwd = np.random.default_rng(bwd)
        self.fwd = []
        self.bwd = []
        self._lock = threading.Lock()
        if model.kind == "markov":
            P, pi = model.transition, model.stationary
            self.cum_fwd = np.cumsum(P, axis=1)
            reverse = pi[None, :] * P.T / pi[:, None]
            self.cum_bwd = np.cumsum(reverse, axis=1)
            self.cum0 = np.cumsum(pi)
        else:
            self.cum0 = np.cumsum(model.probabilities)

    def copy(self):
        other = object.__new__(_SiteBuffer)
        other.__dict__.update(self.__dict__)
        other.fwd = list(self.fwd)
        other.bwd = list(self.bwd)
        other._lock = threading.Lock()
        other.rng_fwd = np.random.default_rng()
        other.rng_fwd.bit_generator.state = self.rng_fwd.bit_generator.state
        other.rng_bwd = np.random.default_rng()
        other.rng_bwd.bit_generator.state = self.rng_bwd.bit_generator.state
        return other

    @staticmethod
    def _draw(cum, u):
        return min(int(np.searchsorted(cum, u, side="right")), len(cum) - 1)

    def _extend(self, forward):
        store = self.fwd if forward else self.bwd
        rng = self.rng_fwd if forward else self.rng_bwd
        u = rng.random(_CHUNK)
        if self.model.kind == "iid":
            idx = np.minimum(np.searchsorted(self.cum0, u, side="right"), len(self.cum0) - 1)
            store.extend(int(i) for i in idx)
            return
        for x in u:
            if forward:
                if not store:
                    store.append(self._draw(self.cum0, x))
                else:
                    store.append(self._draw(self.cum_fwd[store[-1]], x))
            else:
                if not self.fwd:
                    self._extend(True)
                prev = store[-1] if store else self.fwd[0]
                store.append(self._draw(self.cum_bwd[prev], x))

    def _ensure(self, j):
        # paths may be shared between worker threads; extension must not interleave
        if (j >= 0 and len(self.fwd) > j) or (j < 0 and len(self.bwd) >= -j):
            return
        with self._lock:
            while len(self.fwd) <= max(j, 0):
                self._extend(True)
            while len(self.bwd) < -j:
                self._extend(False)

    def get(self, j):
        self._ensure(j)
        return self.fwd[j] if j >= 0 else self.bwd[-j - 1]

    def take(self, js):
        """Symbol indices at the integer array of positions ``js``."""
        js = np.asarray(js, dtype=np.int64)
        if js.size == 0:
            return js
        self._ensure(int(js.max()))
        self._ensure(int(js.min()))
        fwd = np.asarray(self.fwd[: int(max(js.max(), -1)) + 1], dtype=np.int64)
        bwd = np.asarray(self.bwd[: int(max(-js.min(), 0))], dtype=np.int64)
        out = np.empty(js.shape, dtype=np.int64)
        pos = js >= 0
        out[pos] = fwd[js[pos]]
        out[~pos] = bwd[-js[~pos] - 1]
        return out


class PathWindow:
    """A realised two-sided environment path.

    Site ``k`` of the window reads the underlying sequence at
    ``origin + direction * k``; shifting and time reversal only change these
    two numbers (and, for the rotation, the sign of the angle variable), so
    they are cheap and exact.
    """

    def __init__(self, model, seed, half_width=0, *, origin=0, direction=1, negate=False,
                 x0=None, buffer=None):
        self.model = model
        self.seed = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.half_width = int(half_width)
        self.origin = int(origin)
        self.direction = int(direction)
        self.negate = bool(negate)
        if model.kind == "rotation" and x0 is None:
            x0 = float(np.random.default_rng(self.seed).random())
        self.x0 = x0
        if buffer is None and model.kind in ("iid", "markov"):
            buffer = _SiteBuffer(model, self.seed)
        self._buffer = buffer

    def _replace(self, **kw):
        args = dict(origin=self.origin, direction=self.direction, negate=self.negate,
                    x0=self.x0, buffer=self._buffer)
        args.update(kw)
        return PathWindow(self.model, self.seed, self.half_width, **args)

    def position(self, k):
        """Rotation only: the angle variable read at site ``k``."""
        j = self.origin + self.direction * k
        x = self.x0 + self.model.angle * j
        return (-x if self.negate else x) % 1.0

    def symbol(self, k):
        m = self.model
        j = self.origin + self.direction * k
        if m.kind == "deterministic-single":
            return m.symbols[0]
        if m.kind == "explicit-path":
            return m.sequence[j % len(m.sequence)]
        if m.kind == "rotation":
            i = int(np.searchsorted(m.bin_edges, self.position(k), side="right")) - 1
            return m.bin_symbols[min(i, len(m.bin_symbols) - 1)]
        return m.symbols[self._buffer.get(j)]

    def symbols_between(self, lo, hi):
        syms = self.model.symbols
        return [syms[i] for i in self.symbol_indices(lo, hi)]

    def symbol_indices(self, lo, hi):
        """Indices into ``model.symbols`` of sites ``lo .. hi - 1``."""
        if self._buffer is not None:
            return self._buffer.take(self.origin + self.direction * np.arange(lo, hi))
        where = {s: i for i, s in enumerate(self.model.symbols)}
        return np.array([where[self.symbol(k)] for k in range(lo, hi)], dtype=np.int64)

    @property
    def symbols(self):
        """The materialised sites ``-half_width .. half_width``."""
        return self.symbols_between(-self.half_width, self.half_width + 1)

    def shifted(self, k):
        """The path of ``theta^k omega``."""
        return self._replace(origin=self.origin + self.direction * k)

    def reversed(self, n):
        """The path of ``T(theta^(n-1) omega)``: site ``k`` reads old site ``n-1-k``."""
        return self._replace(
            origin=self.origin + self.direction * (n - 1),
            direction=-self.direction,
            negate=not self.negate,
        )

    def clone(self):
        """Independent copy with a private buffer (for use in another worker)."""
        buf = None if self._buffer is None else self._buffer.copy()
        return self._replace(buffer=buf)


def sample_path(model, half_width=0, seed=None):
    """Realise the environment; the returned window is materialised on ``[-N, N]``."""
    if half_width < 0:
        raise ValueError("half_width must be >= 0")
    path = PathWindow(model, seed, half_width)
    path.symbols  # materialise
    return path


def instrument_at(model, path, k):
    return model.instrument(path.symbol(k))


def time_reverse(model, path, n):
    """Path of ``T(theta^(n-1) omega)``.

    Sequence environments are reversed about site ``n-1``; the rotation
    reverses by negating the angle variable.  Markov chains must satisfy
    detailed balance, otherwise the reversal does not preserve the law.
    """
    if model.kind == "markov" and not model.detailed_balance():
        raise ReversibilityError("Markov chain violates detailed balance; reversal is not law invariant")
    return path.reversed(n)


# -- assumption checks -------------------------------------------------------

@dataclass
class AssumptionStatus:
    status: str
    detail: dict

    def as_dict(self):
        return {"status": self.status, **self.detail}


@dataclass
class AssumptionReport:
    a1: AssumptionStatus
    a2: AssumptionStatus
    a3: AssumptionStatus
    sites: dict

    def as_dict(self):
        return {"A1": self.a1.as_dict(), "A2": self.a2.as_dict(), "A3": self.a3.as_dict(),
                "sites": self.sites}

    @property
    def ok(self):
        return all(s.status != "fails" for s in (self.a1, self.a2, self.a3))


def _circle_words(model, length):
    """Exact word distribution of the rotation: cut the circle at all
    preimages of bin edges and read one word per cell."""
    edges, a = model.bin_edges[:-1], model.angle
    cuts = np.unique(np.concatenate([(edges - j * a) % 1.0 for j in range(length)] + [[0.0, 1.0]]))
    out = {}
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        x = 0.5 * (lo + hi)
        word = []
        for j in range(length):
            i = int(np.searchsorted(model.bin_edges, (x + j * a) % 1.0, side="right")) - 1
            word.append(model.bin_symbols[min(i, len(model.bin_symbols) - 1)])
        out[tuple(word)] = out.get(tuple(word), 0.0) + (hi - lo)
    return out


def word_distribution(model, length, budget=WORD_BUDGET):
    """Probabilities of the symbol words ``(omega_0, ..., omega_{L-1})`` with positive mass.

    Returns ``None`` if more than ``budget`` words would have to be listed.
    """
    syms = model.symbols
    if model.kind == "deterministic-single":
        return {(syms[0],) * length: 1.0}
    if model.kind == "explicit-path":
        seq = model.sequence
        out = {}
        for s in range(len(seq)):
            w = tuple(seq[(s + j) % len(seq)] for j in range(length))
            out[w] = out.get(w, 0.0) + 1.0 / len(seq)
        return out
    if model.kind == "rotation":
        return _circle_words(model, length)
    if model.kind == "iid":
        support = [i for i, p in enumerate(model.probabilities) if p > 0]
        if len(support) ** length > budget:
            return None
        return {
            tuple(syms[i] for i in w): float(np.prod(model.probabilities[list(w)]))
            for w in itertools.product(support, repeat=length)
        }
    P, pi = model.transition, model.stationary
    words = {(i,): pi[i] for i in range(len(syms)) if pi[i] > 0}
    for _ in range(length - 1):
        nxt = {}
        for w, p in words.items():
            for j in np.flatnonzero(P[w[-1]] > 0):
                nxt[w + (int(j),)] = p * P[w[-1], j]
        if len(nxt) > budget:
            return None
        words = nxt
    return {tuple(syms[i] for i in w): float(p) for w, p in words.items()}


def verify_assumptions(model, alpha_grid=(-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0),
                       sample_count=256, seed=0, max_length=MAX_WORD_LENGTH):
    """Check the three standing assumptions on a finite site table.

    A1: ``λ_min(phi(I)) > 0`` for every site channel ``phi`` (this is
    ``v(phi^*)``).  A2: search for a positivity improving product
    ``phi_{omega_{N-1}} ∘ ... ∘ phi_{omega_0}`` over words of positive
    probability with ``N <= max_length``.  A3: the outcome weights are
    bounded; the report carries ``F = max |f|``.

    Per-site entries record irreducibility of the channel and of its
    deformations on ``alpha_grid``.
    """
    table = model.site_table
    probe = dict(n_probe=sample_count, seed=seed)

    v = {str(s): float(np.linalg.eigvalsh(_channel_at_identity(inst))[0]) for s, inst in table.items()}
    vmin = min(v.values())
    a1 = AssumptionStatus("holds" if vmin > 1e-12 else "fails", {"v_min": vmin, "per_site": v})

    a2 = AssumptionStatus("undetermined", {"max_length": max_length})
    saw_undetermined = False
    for length in range(1, max_length + 1):
        dist = word_distribution(model, length)
        if dist is None:
            saw_undetermined = True
            a2.detail["note"] = f"word budget exceeded at length {length}"
            break
        for word, prob in sorted(dist.items(), key=lambda kv: -kv[1]):
            if prob <= 0:
                continue
            S = np.eye(model.dim ** 2, dtype=complex)
            for s in word:
                S = table[s].channel.superop @ S
            verdict = is_positivity_improving(CPMap(model.dim, S), **probe)
            if verdict is Verdict.YES:
                a2 = AssumptionStatus("holds", {"N0": length, "word": [str(s) for s in word],
                                                "probability": float(prob)})
                break
            if verdict is Verdict.UNDETERMINED:
                saw_undetermined = True
        if a2.status == "holds":
            break
    else:
        if not saw_undetermined:
            a2 = AssumptionStatus("fails", {"max_length": max_length,
                                            "note": "no positivity improving word found"})

    fs = {str(s): inst.big_f for s, inst in table.items()}
    a3 = AssumptionStatus("holds", {"F": max(fs.values()), "per_site": fs})

    sites = {}
    for s, inst in table.items():
        base = model.irreducible.get(s) or is_irreducible(inst.channel, **probe)
        deformed = {}
        if base is not Verdict.NO:
            deformed = {repr(float(a)): str(is_irreducible(deform(inst, a), **probe)) for a in alpha_grid}
        sites[str(s)] = {"irreducible": str(base), "deformed_irreducible": deformed,
                         "F": inst.big_f}
    return AssumptionReport(a1, a2, a3, sites)


def _channel_at_identity(inst):
    d = inst.dim
    out = (inst.channel.superop @ np.eye(d).reshape(-1)).reshape(d, d)
    return 0.5 * (out + out.conj().T)
