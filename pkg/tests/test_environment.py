import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from qldp import environment as env
from qldp import fixtures as fx
from qldp.channels import depolarizing, identity_map, make_instrument
from qldp.matlin import ValidationError


def dep_inst(d=2, w=0.0):
    return make_instrument({"a": depolarizing(d)}, {"a": w})


def table(n, d=2):
    return {f"s{i}": fx.random_instrument(d, 2, seed=i) for i in range(n)}


def test_deterministic_and_degenerate_iid():
    m = env.deterministic(dep_inst(), symbol="x")
    p = env.sample_path(m, 5, seed=1)
    assert p.symbols == ["x"] * 11
    m2 = env.iid(table(2), [1.0, 0.0])
    assert set(env.sample_path(m2, 20, seed=3).symbols) == {"s0"}


def test_parameter_validation():
    with pytest.raises(ValidationError):
        env.iid(table(2), [0.5, 0.6])
    with pytest.raises(ValidationError):
        env.markov(table(2), [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ValidationError):
        env.markov(table(2), np.eye(2))  # stationary vector not unique
    with pytest.raises(ValidationError):
        env.rotation(table(2), 0.25, [0, 0.5, 1], ["s0", "s1"])
    with pytest.raises(ValidationError):
        env.explicit_path(table(2), ["s0", "zz"])
    with pytest.raises(ValidationError):
        env.iid({"a": dep_inst(2), "b": dep_inst(3)}, [0.5, 0.5])


def test_markov_identity_chain_is_constant_and_balanced():
    m = env.markov(table(2), np.eye(2), stationary=[0.5, 0.5])
    firsts = []
    for seed in range(1000):
        syms = env.sample_path(m, 4, seed=seed).symbols
        assert len(set(syms)) == 1
        firsts.append(syms[0])
    frac = firsts.count("s0") / 1000
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 1000)


def test_markov_backward_law_matches_reversed_forward():
    P = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])  # symmetric: detailed balance
    m = env.markov(table(3), P)
    pi = m.stationary
    # exact law of (omega_{-m}, ..., omega_0) from the backward kernel equals the forward law
    R = pi[None, :] * P.T / pi[:, None]
    for length in range(1, 5):
        for w in itertools.product(range(3), repeat=length + 1):
            fwd = pi[w[0]] * np.prod([P[a, b] for a, b in zip(w, w[1:])])
            # backward chain starts at omega_0 = w[-1] and steps to omega_{-1} = w[-2] ...
            rv = w[::-1]
            bwd = pi[rv[0]] * np.prod([R[a, b] for a, b in zip(rv, rv[1:])])
            assert fwd == pytest.approx(bwd, abs=1e-14)
    # and the sampler uses that kernel: empirical pair frequency (omega_{-1}, omega_0)
    counts = np.zeros((3, 3))
    idx = {s: i for i, s in enumerate(m.symbols)}
    for seed in range(3000):
        p = env.PathWindow(m, seed)
        counts[idx[p.symbol(-1)], idx[p.symbol(0)]] += 1
    expected = (pi[:, None] * P) * 3000
    assert chisquare(counts.ravel(), expected.ravel()).pvalue > 1e-3


def test_stationary_vector_oracle():
    P = np.array([[0.9, 0.1], [0.4, 0.6]])
    pi = env.stationary_vector(P)
    assert np.allclose(pi, [0.8, 0.2])


def test_shift_covariance():
    for m in (env.iid(table(3), [0.2, 0.3, 0.5]),
              env.markov(table(2), [[0.7, 0.3], [0.4, 0.6]]),
              env.rotation(table(2), np.sqrt(2) - 1, [0, 0.3, 1], ["s0", "s1"]),
              env.explicit_path(table(3), ["s0", "s2", "s1", "s1"])):
        p = env.sample_path(m, 0, seed=11)
        q = p.shifted(1)
        for k in range(-64, 65):
            assert env.instrument_at(m, p, k + 1) is env.instrument_at(m, q, k)


def test_lazy_extension_is_order_independent():
    m = env.iid(table(3), [0.2, 0.3, 0.5])
    a = env.PathWindow(m, 5)
    b = env.PathWindow(m, 5)
    ks = list(range(-700, 700))
    fwd = [a.symbol(k) for k in ks]
    rng = np.random.default_rng(0)
    perm = rng.permutation(ks)
    got = {k: b.symbol(k) for k in perm}
    assert fwd == [got[k] for k in ks]


def test_rotation_half_open_bins():
    theta = np.sqrt(2) - 1
    m = env.rotation(table(2), theta, [0, 0.5, 1], ["s0", "s1"])
    p = env.PathWindow(m, 0, x0=0.5)
    assert p.symbol(0) == "s1"  # x = 0.5 belongs to [0.5, 1)
    p = env.PathWindow(m, 0, x0=0.5 - 1e-12)
    assert p.symbol(0) == "s0"
    p = env.PathWindow(m, 0, x0=0.0)
    assert p.symbol(0) == "s0"
    assert p.position(1) == pytest.approx(theta)


def test_time_reverse_examples():
    m = env.explicit_path(table(3), ["s0", "s1", "s2"])
    p = env.sample_path(m, 0, seed=0)
    r = env.time_reverse(m, p, 3)
    assert [r.symbol(k) for k in range(3)] == ["s2", "s1", "s0"]
    c = env.deterministic(dep_inst())
    pc = env.sample_path(c, 3, seed=0)
    assert env.time_reverse(c, pc, 5).symbols == pc.symbols


@pytest.mark.parametrize("kind", ["iid", "markov", "rotation", "explicit"])
def test_time_reverse_is_involution(kind):
    models = {
        "iid": env.iid(table(3), [0.2, 0.3, 0.5]),
        "markov": env.markov(table(2), [[0.6, 0.4], [0.4, 0.6]]),
        "rotation": env.rotation(table(2), np.sqrt(3) - 1, [0, 0.4, 1], ["s1", "s0"]),
        "explicit": env.explicit_path(table(2), ["s0", "s0", "s1"]),
    }
    m = models[kind]
    p = env.sample_path(m, 0, seed=7)
    for n in (1, 4, 9):
        rr = env.time_reverse(m, env.time_reverse(m, p, n), n)
        assert [rr.symbol(k) for k in range(-30, 30)] == [p.symbol(k) for k in range(-30, 30)]
        r = env.time_reverse(m, p, n)
        if kind == "rotation":
            # reversal flips the angle variable: x -> -x
            for k in range(n):
                assert (r.position(k) + p.position(n - 1 - k)) % 1.0 == pytest.approx(0.0, abs=1e-12) or \
                    (r.position(k) + p.position(n - 1 - k)) % 1.0 == pytest.approx(1.0, abs=1e-12)
        else:
            assert [r.symbol(k) for k in range(n)] == [p.symbol(n - 1 - k) for k in range(n)]


def test_time_reverse_rejects_non_reversible_markov():
    P = np.array([[0.1, 0.9, 0.0], [0.0, 0.1, 0.9], [0.9, 0.0, 0.1]])
    m = env.markov(table(3), P)
    with pytest.raises(env.ReversibilityError):
        env.time_reverse(m, env.sample_path(m, 0, seed=0), 3)


def test_iid_reversal_preserves_law():
    m = env.iid(table(3), [0.2, 0.3, 0.5])
    idx = {s: i for i, s in enumerate(m.symbols)}
    counts = np.zeros(9)
    for seed in range(10**4 // 4):
        p = env.sample_path(m, 0, seed=seed)
        r = env.time_reverse(m, p, 8)
        for k in (0, 2, 4, 6):
            counts[3 * idx[r.symbol(k)] + idx[r.symbol(k + 1)]] += 1
    pr = np.array([0.2, 0.3, 0.5])
    expected = np.outer(pr, pr).ravel() * counts.sum()
    assert chisquare(counts, expected).pvalue > 1e-3


def test_verify_assumptions_examples():
    rep = env.verify_assumptions(env.deterministic(dep_inst()))
    assert (rep.a1.status, rep.a2.status, rep.a3.status) == ("holds", "holds", "holds")
    assert rep.a2.detail["N0"] == 1
    assert rep.a3.detail["F"] == 0.0

    rep = env.verify_assumptions(fx.depolarizing_pair())
    assert rep.a2.status == "holds"
    assert rep.a2.detail["N0"] == 2
    assert sorted(rep.a2.detail["word"]) == ["phi1", "phi2"]
    assert rep.a2.detail["probability"] == pytest.approx(0.25)

    ident = env.deterministic(make_instrument({"a": identity_map(2)}, {"a": 0.0}))
    rep = env.verify_assumptions(ident)
    assert rep.a1.status == "holds" and rep.a2.status == "fails"


def test_word_distribution_rotation_sums_to_one():
    m = env.rotation(table(2), np.sqrt(2) - 1, [0, 0.3, 1], ["s0", "s1"])
    for L in (1, 3, 5):
        dist = env.word_distribution(m, L)
        assert sum(dist.values()) == pytest.approx(1.0)
    # frequency oracle along one orbit
    p = env.PathWindow(m, 0)
    dist = env.word_distribution(m, 2)
    N = 20000
    words = [(p.symbol(k), p.symbol(k + 1)) for k in range(N)]
    for w, prob in dist.items():
        assert words.count(w) / N == pytest.approx(prob, abs=5e-3)
