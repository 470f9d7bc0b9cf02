import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wildeuler.algebra import StateError, StateTriple, matrix_in_wave_cone, to_matrix
from wildeuler.geometry import (
    caratheodory_decompose,
    certify_many,
    dist_to_K,
    dist_to_K_many,
    hull_dim,
    interior_certificate,
    k_point,
    lambda_check_difference,
    pair_coords,
    segment_direction,
    sphere_quadrature,
    tmap,
)


@pytest.fixture(scope="module")
def quad2():
    return sphere_quadrature(2, 31)


@pytest.fixture(scope="module")
def quad3():
    return sphere_quadrature(3, 15)


def toeplitz_min_eig(v, u):
    """Smallest eigenvalue of the moment Toeplitz matrix of a circle measure."""
    c1 = v[0] + 1j * v[1]
    c2 = 2 * u[0, 0] + 2j * u[0, 1]
    T = np.array([[1, np.conj(c1), np.conj(c2)], [c1, 1, np.conj(c1)], [c2, c1, 1]])
    return float(np.linalg.eigvalsh(T).min())


def test_hull_dim():
    assert hull_dim(2) == 4
    assert hull_dim(3) == 8


@pytest.mark.parametrize("n,deg", [(2, 15), (3, 15), (3, 31)])
def test_quadrature_exactness(n, deg):
    q = sphere_quadrature(n, deg)
    assert np.abs(np.linalg.norm(q.points, axis=1) - 1).max() <= 1e-14
    assert q.weights.min() > 0 and q.weights.sum() == pytest.approx(1.0, abs=1e-12)
    x = q.points
    # second and fourth moments of the uniform measure
    assert q.integrate(x[:, 0] ** 2) == pytest.approx(1.0 / n, abs=1e-13)
    assert q.integrate(x[:, 0] ** 4) == pytest.approx(3.0 / (n * (n + 2)), abs=1e-13)
    assert q.integrate(x[:, 0] * x[:, 1] ** 3) == pytest.approx(0.0, abs=1e-13)


def test_tmap_moments(quad2):
    v, u = tmap(quad2, np.ones(quad2.size))
    assert np.abs(v).max() <= 1e-3 and np.abs(u).max() <= 1e-3
    x = quad2.points
    v, u = tmap(quad2, x[:, 0])
    np.testing.assert_allclose(v, [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(u, 0.0, atol=1e-12)
    v, u = tmap(quad2, x[:, 0] * x[:, 1])
    np.testing.assert_allclose(v, 0.0, atol=1e-12)
    np.testing.assert_allclose(u, [[0, 0.125], [0.125, 0]], atol=1e-12)


@pytest.mark.parametrize(
    "v,u",
    [
        ([1.0, 0.0], np.diag([0.5, -0.5])),
        ([1 / np.sqrt(2), 1 / np.sqrt(2)], np.array([[0, 0.5], [0.5, 0]])),
        ([0, 0, 1.0], np.diag([-1 / 3, -1 / 3, 2 / 3])),
    ],
)
def test_k_point(v, u):
    w, uu = k_point(np.array(v))
    np.testing.assert_allclose(uu, u, atol=1e-15)


def test_zero_is_interior(quad2, quad3):
    assert interior_certificate(StateTriple.zero(2), 1e-3, quad2) is not None
    assert interior_certificate(StateTriple.zero(3), 1e-3, quad3) is not None


def test_boundary_q_rejected(quad2):
    assert interior_certificate(StateTriple(np.zeros(2), np.zeros((2, 2)), 1.0), 1e-6, quad2) is None


def test_k_point_not_interior(quad2):
    v, u = k_point(np.array([1.0, 0.0]))
    assert interior_certificate(StateTriple(v, u, 0.0), 1e-6, quad2) is None


def test_certificate_agrees_with_toeplitz_oracle(quad2, rng):
    # positive definiteness of the moment matrix characterizes the open hull
    agree = 0
    for _ in range(300):
        v = rng.uniform(-1, 1, 2)
        a = rng.uniform(-0.5, 0.5)
        b = rng.uniform(-0.5, 0.5)
        u = np.array([[a, b], [b, -a]])
        lam = toeplitz_min_eig(v, u)
        ok = certify_many(pair_coords(v[None], u[None]), np.zeros(1), 1e-6, quad2)[0]
        if ok:
            assert lam > 0
        if lam > 0.05:
            assert ok
        agree += 1
    assert agree == 300


@pytest.mark.parametrize("quad", ["quad2", "quad3"])
def test_certificate_density_reproduces_target(quad, request, rng):
    q = request.getfixturevalue(quad)
    n = q.n
    for _ in range(20):
        w = rng.normal(size=(3, n))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        lam = rng.dirichlet(np.ones(3)) * 0.7
        pts = [k_point(x) for x in w]
        v = sum(l * p[0] for l, p in zip(lam, pts))
        u = sum(l * p[1] for l, p in zip(lam, pts))
        cert = interior_certificate(StateTriple(v, u, 0.0), 1e-6, q)
        assert cert is not None
        tv, tu = tmap(q, cert.density)
        np.testing.assert_allclose(tv, v, atol=1e-8)
        np.testing.assert_allclose(tu, u, atol=1e-8)


def test_caratheodory_zero(quad2):
    dec = caratheodory_decompose(np.zeros(2), np.zeros((2, 2)), quad2)
    assert dec.residual() <= 1e-10
    assert len(dec.weights) <= hull_dim(2) + 2
    assert dec.weights.min() > 0 and dec.weights.sum() == pytest.approx(1.0, abs=1e-10)


def test_caratheodory_near_k(quad2):
    v, u = k_point(np.array([1.0, 0.0]))
    dec = caratheodory_decompose(0.99 * v, 0.99 * u, quad2)
    assert dec.residual() <= 1e-10
    top = dec.points[np.argmax(dec.weights)]
    assert top[0] > 0.9


@pytest.mark.parametrize("n", [2, 3])
def test_caratheodory_random(n, quad2, quad3, rng):
    q = quad2 if n == 2 else quad3
    for _ in range(30):
        w = rng.normal(size=(4, n))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        lam = rng.dirichlet(np.ones(4)) * 0.8
        pts = [k_point(x) for x in w]
        v = sum(l * p[0] for l, p in zip(lam, pts))
        u = sum(l * p[1] for l, p in zip(lam, pts))
        dec = caratheodory_decompose(v, u, q)
        assert dec.residual() <= 1e-10
        assert np.abs(np.linalg.norm(dec.points, axis=1) - 1).max() <= 1e-14
        assert len(dec.weights) <= hull_dim(n) + 2


def test_segment_direction_zero(quad2):
    d = segment_direction(StateTriple.zero(2), quad2)
    assert np.linalg.norm(d.vbar) >= 1 / 16 - 1e-12
    assert matrix_in_wave_cone(to_matrix(d.state()), 1e-8)


def test_segment_direction_endpoints_certified(quad2, rng):
    for _ in range(20):
        v = rng.uniform(-0.3, 0.3, 2)
        z = StateTriple(v, np.zeros((2, 2)), 0.0)
        d = segment_direction(z, quad2).state()
        for s in (-0.5, 0.5):
            assert interior_certificate(z + StateTriple(s * d.v, s * d.u, 0.0), 1e-8, quad2) is not None


def test_segment_direction_near_k(quad2):
    v, u = k_point(np.array([0.0, 1.0]))
    z = StateTriple(0.95 * v, 0.95 * u, 0.0)
    d = segment_direction(z, quad2)
    assert 0 < np.linalg.norm(d.vbar) < 0.2


def test_segment_direction_rejects_q(quad2):
    with pytest.raises(StateError):
        segment_direction(StateTriple(np.zeros(2), np.zeros((2, 2)), 1.0), quad2)


def test_lambda_check_examples():
    assert lambda_check_difference([1.0, 0.0], [0.0, 1.0]) <= 1e-15
    assert lambda_check_difference([0.6, 0.8], [0.6, 0.8]) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_lambda_check_random(seed):
    r = np.random.default_rng(seed)
    for n in (2, 3):
        a, b = r.normal(size=(2, n))
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        assert lambda_check_difference(a, b) <= 1e-12


def test_dist_to_K_examples():
    v, u = k_point(np.array([1.0, 0.0]))
    assert dist_to_K(v, u) <= 1e-8
    assert dist_to_K(np.zeros(2), np.zeros((2, 2))) == pytest.approx(np.sqrt(1.5), abs=1e-10)


def _brute(v, u, m=200_000):
    n = len(v)
    r = np.random.default_rng(1).normal(size=(m, n))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    du = np.einsum("pi,pj->pij", r, r) - np.eye(n) / n - u
    return np.sqrt(((r - v) ** 2).sum(1) + (du**2).sum((1, 2))).min()


@pytest.mark.parametrize("n", [2, 3])
def test_dist_to_K_brute_force(n, rng):
    for _ in range(5):
        a, b = rng.normal(size=(2, n))
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        pa, pb = k_point(a), k_point(b)
        v, u = 0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])
        d = dist_to_K(v, u)
        assert d > 0
        assert d <= _brute(v, u) + 1e-12
        assert d == pytest.approx(_brute(v, u), abs=2e-2 if n == 3 else 2e-3)


def test_dist_to_K_many_matches_single(rng):
    v = rng.normal(size=(10, 2)) * 0.3
    u = np.zeros((10, 2, 2))
    many = dist_to_K_many(v, u)
    for i in range(10):
        assert many[i] == pytest.approx(dist_to_K(v[i], u[i]), abs=1e-12)
