import numpy as np
import pytest
from scipy.optimize import minimize

from qldp import cocycle as cc
from qldp import environment as env
from qldp import fixtures as fx
from qldp.channels import (
    CPMap,
    compose,
    constant_map,
    deform,
    from_kraus,
    identity_map,
    is_trace_preserving,
    make_instrument,
    op_norm_1,
)
from qldp.matlin import proj_distance, random_density

ALPHAS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


def perron_state(S, d):
    w, V = np.linalg.eig(S)
    v = V[:, np.argmax(w.real)].reshape(d, d)
    v = 0.5 * (v + v.conj().T) / np.trace(v)
    return v / np.trace(v).real


@pytest.fixture(scope="module")
def pair():
    m = fx.depolarizing_pair()
    return m, env.sample_path(m, 0, seed=3)


@pytest.fixture(scope="module")
def single():
    inst = fx.random_instrument(2, 3, seed=21)
    m = env.deterministic(inst)
    return m, env.sample_path(m, 0, seed=0), inst


def test_forward_product_basics(pair):
    m, p = pair
    P0 = cc.forward_product(m, p, 0.7, 0, 0)
    assert np.allclose(P0.superop, np.eye(4)) and P0.log_scale == 0.0
    P1 = cc.forward_product(m, p, 0.7, 2, 1)
    D = deform(m.instrument(p.symbol(2)), 0.7)
    assert P1.log_scale == pytest.approx(np.log(op_norm_1(D)))
    assert np.allclose(P1.full_superop(), D.superop)
    P5 = cc.forward_product(m, p, 0.0, -3, 5)
    assert abs(P5.log_scale) < 1e-10
    assert is_trace_preserving(P5.map)


def test_products_match_direct_composition(pair):
    m, p = pair
    a = 1.3
    direct = np.eye(4)
    for j in range(7):
        direct = deform(m.instrument(p.symbol(4 + j)), a).superop @ direct
    P = cc.forward_product(m, p, a, 4, 7)
    assert np.allclose(P.full_superop(), direct, rtol=1e-9, atol=1e-12)
    assert op_norm_1(P.map) == pytest.approx(1.0)
    B = cc.backward_product(m, p, a, 5, 2)
    two = compose(deform(m.instrument(p.symbol(5)), a), deform(m.instrument(p.symbol(4)), a))
    assert np.allclose(B.full_superop(), two.superop)
    # backward of length n ending at site e equals forward of length n starting at e-n+1
    F = cc.forward_product(m, p, a, -2, 6)
    Bk = cc.backward_product(m, p, a, 3, 6)
    assert np.allclose(F.full_superop(), Bk.full_superop(), rtol=1e-9)
    assert is_trace_preserving(cc.backward_product(m, p, 0.0, 0, 6).map)


@pytest.mark.parametrize("alpha", [0.0, -1.0, 0.8, 2.0])
def test_z_forward_eigen_oracle(single, alpha):
    m, p, inst = single
    z = cc.z_forward(m, p, alpha, 0, tol=1e-11)
    ref = perron_state(deform(inst, alpha).superop, 2)
    assert np.max(np.abs(z.z - ref)) < 1e-8
    assert np.linalg.eigvalsh(z.z)[0] > 0
    assert z.diameter < 1e-11


@pytest.mark.parametrize("alpha", [0.0, 1.5])
def test_z_backward_eigen_oracle(single, alpha):
    m, p, inst = single
    zb = cc.z_backward(m, p, alpha, 0, tol=1e-11)
    ref = perron_state(deform(inst, alpha).superop.conj().T, 2)
    assert np.max(np.abs(zb.z - ref)) < 1e-8
    if alpha == 0.0:
        assert np.allclose(zb.z, np.eye(2) / 2, atol=1e-9)


def test_cocycle_residual_random_sites(pair):
    m, p = pair
    tol = 1e-9
    rng = np.random.default_rng(1)
    for site in rng.integers(-500, 500, size=16):
        for a in (-1.0, 0.5, 2.0):
            assert cc.z_forward(m, p, a, int(site), tol=tol).residual <= 2 * tol
            assert cc.z_backward(m, p, a, int(site), tol=tol).residual <= 2 * tol


def test_non_convergence_reported():
    m = env.deterministic(make_instrument({"a": identity_map(2)}, {"a": 0.0}))
    with pytest.raises(cc.NonConvergenceError) as exc:
        cc.z_forward(m, env.sample_path(m, 0, 0), 0.0, 0, max_iter=3)
    assert exc.value.diameter > 0.5


def grid_oracle(S, n_theta=80, n_phi=160):
    """Dense spherical grid on the Bloch sphere plus multi-start polishing."""
    th, ph = np.meshgrid(np.linspace(0, np.pi, n_theta), np.linspace(0, 2 * np.pi, n_phi, endpoint=False))
    th, ph = th.ravel(), ph.ravel()
    vecs = np.stack([np.cos(th / 2), np.exp(1j * ph) * np.sin(th / 2)], axis=1)
    phi = CPMap(2, S)
    imgs = [phi(np.outer(v, v.conj())) for v in vecs]
    imgs = [X / np.trace(X).real for X in imgs]
    rng = np.random.default_rng(0)
    sample = rng.choice(len(vecs), size=(4000, 2))
    best = []

    def dist(x):
        a = np.array([np.cos(x[0] / 2), np.exp(1j * x[1]) * np.sin(x[0] / 2)])
        b = np.array([np.cos(x[2] / 2), np.exp(1j * x[3]) * np.sin(x[2] / 2)])
        A, B = phi(np.outer(a, a.conj())), phi(np.outer(b, b.conj()))
        return proj_distance(A / np.trace(A).real, B / np.trace(B).real)

    vals = [proj_distance(imgs[i], imgs[j]) for i, j in sample]
    for t in np.argsort(vals)[-10:]:
        i, j = sample[t]
        x0 = [th[i], ph[i], th[j], ph[j]]
        r = minimize(lambda x: -dist(x), x0, method="Nelder-Mead",
                     options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
        best.append(-r.fun)
    return max(max(vals), max(best))


def test_contraction_coefficient_examples():
    sigma = random_density(2, seed=1)
    assert cc.contraction_coeff(constant_map(sigma)).value == pytest.approx(0.0, abs=1e-12)
    assert cc.contraction_coeff(identity_map(2)).value == 1.0
    assert cc.contraction_coeff(identity_map(3)).value == pytest.approx(1.0)
    assert cc.contraction_coeff(identity_map(3)).kind == "lower-bound"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_contraction_matches_grid_oracle(seed):
    inst = fx.random_instrument(2, 2, seed=seed, kraus_per_outcome=1)
    S = deform(inst, 0.3).superop
    est = cc.contraction_coeff(CPMap(2, S))
    assert est.kind == "grid-oracle"
    assert est.value == pytest.approx(grid_oracle(S), abs=1e-3)


def test_submultiplicativity(pair):
    m, p = pair
    for N, M in [(2, 3), (3, 3), (1, 4)]:
        c_nm = cc.contraction_coeff(cc.forward_product(m, p, 0.4, 0, N + M)).value
        c_n = cc.contraction_coeff(cc.forward_product(m, p, 0.4, 0, N)).value
        c_m = cc.contraction_coeff(cc.forward_product(m, p, 0.4, N, M)).value
        assert c_nm <= c_n * c_m + 1e-3


def test_contraction_equicontinuity(pair):
    m, p = pair
    n = 4
    F = sum(m.instrument(p.symbol(k)).big_f for k in range(n))
    for a, b in [(0.0, 0.1), (1.0, 1.05), (-0.5, -0.3)]:
        ca = cc.contraction_coeff(cc.forward_product(m, p, a, 0, n)).value
        cb = cc.contraction_coeff(cc.forward_product(m, p, b, 0, n)).value
        assert abs(ca - cb) <= 2 * abs(b - a) * F + 1e-3


def test_fixed_point_continuity_in_alpha(pair):
    m, p = pair
    z0 = cc.z_forward(m, p, 0.5, 0, residual=False).z
    dists = [proj_distance(z0, cc.z_forward(m, p, 0.5 + h, 0, residual=False).z)
             for h in (1e-1, 1e-2, 1e-3)]
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 1e-2


def test_fundamental_bound(pair):
    m, p = pair
    for a in (0.0, 1.0):
        z = cc.z_forward(m, p, a, 0, tol=1e-10, residual=False).z
        for N in (4, 8, 16):
            B = cc.backward_product(m, p, a, 0, N)
            c = cc.contraction_coeff(B).value
            for s in range(5):
                Y = random_density(2, "pure", seed=s)
                img = B.map(Y)
                assert proj_distance(img / np.trace(img).real, z) <= c + 1e-6


def test_kappa_examples(pair):
    m, p = pair
    ks = cc.kappa_estimate(m, p, 0.5, 6)
    assert all(v < 1 for n, v in ks if n >= 2)
    sigma = random_density(2, seed=3)
    cm = env.deterministic(make_instrument({"a": constant_map(sigma)}, {"a": 0.0}))
    assert cc.kappa_estimate(cm, env.sample_path(cm, 0, 0), 0.0, 1)[0][1] == pytest.approx(0.0, abs=1e-12)
    im = env.deterministic(make_instrument({"a": from_kraus([np.eye(2)])}, {"a": 0.0}))
    assert all(v == 1.0 for _, v in cc.kappa_estimate(im, env.sample_path(im, 0, 0), 0.0, 3))
