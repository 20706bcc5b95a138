import numpy as np
import pytest
from scipy.stats import unitary_group

from qldp import fixtures as fx
from qldp.channels import (
    CPMap,
    Instrument,
    Verdict,
    adjoint,
    adjoint_identity,
    apply,
    choi,
    compose,
    constant_map,
    deform,
    depolarizing,
    from_kraus,
    from_superop,
    identity_map,
    instrument_from_kraus,
    is_irreducible,
    is_positivity_improving,
    is_primitive,
    is_trace_preserving,
    is_unital,
    op_norm_1,
    scale,
    unitary_map,
    v_floor,
    zero_map,
)
from qldp.matlin import ValidationError, random_density


def random_kraus(d, r, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((r * d, d)) + 1j * rng.standard_normal((r * d, d))
    Q, _ = np.linalg.qr(G)
    return list(Q.reshape(r, d, d))


def random_herm(d, rng):
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return G + G.conj().T


def test_apply_matches_kraus_sum():
    ks = random_kraus(3, 4, 0)
    phi = from_kraus(ks)
    X = random_herm(3, np.random.default_rng(1))
    assert np.allclose(apply(phi, X), sum(K @ X @ K.conj().T for K in ks), atol=1e-12)
    assert np.allclose(identity_map(3)(X), X)
    sigma = random_density(3, seed=2)
    assert np.allclose(constant_map(sigma)(random_density(3, seed=5)), sigma)


def test_adjoint_pairing_and_unitality():
    rng = np.random.default_rng(3)
    phi = from_kraus(random_kraus(3, 2, 7))
    phis = adjoint(phi)
    for _ in range(100):
        X, Y = random_herm(3, rng), random_herm(3, rng)
        lhs = np.trace(phis(X) @ Y)
        rhs = np.trace(X @ phi(Y))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    assert np.allclose(phis(np.eye(3)), np.eye(3), atol=1e-10)
    assert np.allclose(adjoint(phis).superop, phi.superop)
    psi = from_kraus(random_kraus(3, 2, 8))
    assert np.allclose(adjoint(compose(phi, psi)).superop,
                       compose(adjoint(psi), adjoint(phi)).superop)


def test_compose_associative():
    a, b, c = (from_kraus(random_kraus(2, 2, s)) for s in range(3))
    left = compose(compose(c, b), a).superop
    right = compose(c, compose(b, a)).superop
    assert np.max(np.abs(left - right)) < 1e-10
    assert np.allclose(compose(identity_map(2), a).superop, a.superop)


def test_choi_oracles():
    d = 3
    C = choi(identity_map(d))
    omega = np.eye(d).reshape(-1)
    assert np.allclose(C, np.outer(omega, omega))
    assert np.allclose(choi(depolarizing(d)), np.eye(d * d) / d)
    ks = random_kraus(d, 3, 11)
    ref = sum(np.outer(K.reshape(-1), K.reshape(-1).conj()) for K in ks)
    assert np.allclose(choi(from_kraus(ks)), ref)


def test_from_superop_rejects_non_cp():
    # transpose map is positive but not completely positive
    d = 2
    S = np.zeros((4, 4))
    for i in range(d):
        for j in range(d):
            S[j * d + i, i * d + j] = 1.0
    with pytest.raises(ValidationError):
        from_superop(S)


def test_trace_preserving_and_unital():
    assert is_trace_preserving(identity_map(2)) and is_unital(identity_map(2))
    reset = constant_map(np.diag([1.0, 0.0]))
    assert is_trace_preserving(reset) and not is_unital(reset)
    U = unitary_group.rvs(3, random_state=1)
    assert is_trace_preserving(unitary_map(U)) and is_unital(unitary_map(U))


def test_positivity_predicates():
    assert is_positivity_improving(depolarizing(2)) is Verdict.YES
    assert is_positivity_improving(identity_map(2)) is Verdict.NO
    assert is_irreducible(identity_map(2)) is Verdict.NO
    assert is_irreducible(depolarizing(3)) is Verdict.YES
    P, Q = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert is_irreducible(from_kraus([P, Q])) is Verdict.NO
    assert is_primitive(depolarizing(2)) is Verdict.YES
    assert is_primitive(identity_map(2)) is Verdict.NO
    U = unitary_group.rvs(3, random_state=4)
    assert is_primitive(unitary_map(U)) is Verdict.NO


def test_example_pair_composition_is_positivity_improving():
    model = fx.depolarizing_pair()
    phi1 = model.site_table["phi1"].channel
    phi2 = model.site_table["phi2"].channel
    assert is_positivity_improving(phi1) is Verdict.NO
    assert is_positivity_improving(phi2) is Verdict.NO
    assert is_positivity_improving(compose(phi2, phi1)) is Verdict.YES


def test_v_floor_and_norm():
    phi = from_kraus(random_kraus(3, 2, 5))
    assert v_floor(phi) == pytest.approx(1.0, abs=1e-10)
    assert op_norm_1(phi) == pytest.approx(1.0, abs=1e-10)
    assert v_floor(zero_map(2)) == 0.0
    assert op_norm_1(scale(np.exp(-0.7), phi)) == pytest.approx(np.exp(-0.7))
    # v(phi^*) = λ_min(phi(I)), checked by direct minimisation over states
    lam = np.linalg.eigvalsh(phi(np.eye(3)))[0]
    assert v_floor(adjoint(phi)) == pytest.approx(lam, abs=1e-10)
    traces = [np.trace(adjoint(phi)(random_density(3, "pure", seed=s))).real for s in range(1000)]
    assert min(traces) >= lam - 1e-10


def test_op_norm_is_max_over_states():
    rng = np.random.default_rng(2)
    ks = [0.8 * K for K in random_kraus(3, 2, 6)] + [0.3 * random_herm(3, rng)]
    phi = from_kraus(ks)
    norm = op_norm_1(phi)
    sampled = max(np.trace(phi(random_density(3, "pure", seed=s))).real for s in range(10**4))
    assert sampled <= norm + 1e-12
    w, V = np.linalg.eigh(adjoint_identity(phi))
    v = V[:, -1]
    assert np.trace(phi(np.outer(v, v.conj()))).real == pytest.approx(norm, abs=1e-10)


def test_deform_examples():
    inst = fx.random_instrument(2, 3, seed=1)
    assert np.allclose(deform(inst, 0.0).superop, inst.channel.superop)
    single = instrument_from_kraus({"a": (random_kraus(2, 2, 3), 0.7)})
    assert np.allclose(deform(single, 1.3).superop, np.exp(-1.3 * 0.7) * single.channel.superop)
    cl = fx.classical_d1()
    inst = cl.site_table["B"]
    for a in (-1.0, 0.5, 2.0):
        assert deform(inst, a).superop[0, 0].real == pytest.approx(0.3 + 0.7 * np.exp(-a))


def test_deformation_bound_order():
    rng = np.random.default_rng(0)
    for k in range(50):
        inst = fx.random_instrument(3, 3, seed=k)
        a = rng.uniform(-2, 2)
        X = random_density(3, "pure", seed=k)
        F = inst.big_f
        base = inst.channel(X)
        mid = deform(inst, a)(X)
        assert np.linalg.eigvalsh(mid - np.exp(-F * abs(a)) * base)[0] >= -1e-12
        assert np.linalg.eigvalsh(np.exp(F * abs(a)) * base - mid)[0] >= -1e-12


def test_instrument_validation():
    with pytest.raises(ValidationError):
        instrument_from_kraus({"a": ([np.eye(2) * 0.9], 0.0)})
    ok = instrument_from_kraus({"a": ([np.eye(2)], 1.0)})
    with pytest.raises(ValidationError):
        Instrument(("a", "a"), ok.branches * 2, [0.0, 0.0])
    with pytest.raises(ValidationError):
        CPMap(2, np.eye(3))


def test_irreducible_tp_adjoint_is_strictly_positive():
    inst = fx.random_instrument(3, 2, seed=5)
    phis = adjoint(inst.channel)
    for s in range(20):
        X = random_density(3, seed=s)
        assert np.linalg.eigvalsh(phis(X))[0] > 0
