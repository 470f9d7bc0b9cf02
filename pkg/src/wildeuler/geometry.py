"""Geometry of the constraint set K and its convex hull.

K is the set of pairs ``(v, v (x) v - I/n)`` with ``|v| = 1``. Pairs ``(v, u)``
are handled in flat coordinates ``(v, c(u))`` where ``c`` expands ``u`` in an
orthonormal basis of trace-free symmetric matrices, so Euclidean distances in
coordinates equal the product norm with the Frobenius norm on ``u``.

Interior membership is certified constructively: a point lies in the interior
of the hull when it is the moment vector of a strictly positive density on a
sphere quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog
from scipy.special import roots_jacobi

from .algebra import StateError, StateTriple, matrix_in_wave_cone, to_matrix


def hull_dim(n: int) -> int:
    """Dimension of R^n x S_0^n."""
    return n * (n + 3) // 2 - 1


@lru_cache(maxsize=None)
def _sym0_basis(n: int) -> np.ndarray:
    mats = []
    for i in range(n):
        for j in range(i + 1, n):
            b = np.zeros((n, n))
            b[i, j] = b[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(b)
    for k in range(1, n):
        b = np.zeros((n, n))
        b[np.arange(k), np.arange(k)] = 1.0
        b[k, k] = -float(k)
        mats.append(b / np.sqrt(k * (k + 1)))
    out = np.array(mats)
    out.setflags(write=False)
    return out


def sym0_basis(n: int) -> np.ndarray:
    """Orthonormal basis of trace-free symmetric n x n matrices, shape (d, n, n)."""
    return _sym0_basis(n)


def u_coords(u: np.ndarray) -> np.ndarray:
    """Coordinates of (a stack of) trace-free symmetric matrices."""
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    return np.einsum("...ij,kij->...k", u, sym0_basis(n))


def u_from_coords(c: np.ndarray, n: int) -> np.ndarray:
    return np.einsum("...k,kij->...ij", np.asarray(c, dtype=float), sym0_basis(n))


def pair_coords(v, u) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.concatenate([v, u_coords(u)], axis=-1)


def split_coords(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return x[..., :n], u_from_coords(x[..., n:], n)


def k_point(v) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise StateError("k_point needs a unit vector")
    n = v.shape[0]
    return v, np.outer(v, v) - np.eye(n) / n


def k_coords(points: np.ndarray) -> np.ndarray:
    """Flat coordinates of the K points over unit vectors ``points`` (M, n)."""
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    quad = np.einsum("mi,mj->mij", points, points) - np.eye(n) / n
    return np.concatenate([points, u_coords(quad)], axis=-1)


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class SphereQuadrature:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.abs(np.linalg.norm(self.points, axis=1) - 1.0).max() > 1e-14:
            raise ValueError("quadrature points must be unit vectors")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def _circle(m: int) -> tuple[np.ndarray, np.ndarray]:
    theta = 2.0 * np.pi * np.arange(m) / m
    return np.column_stack([np.cos(theta), np.sin(theta)]), np.full(m, 1.0 / m)


def sphere_quadrature(n: int, degree: int = 15) -> SphereQuadrature:
    """Positive quadrature on S^{n-1}, exact for polynomials up to ``degree``.

    Equally spaced nodes on the circle; higher spheres are built recursively
    from Gauss-Jacobi nodes in the last coordinate.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    pts, wts = _circle(degree + 1)
    for dim in range(3, n + 1):
        a = (dim - 3) / 2.0
        t, wt = roots_jacobi((degree + 2) // 2, a, a)
        wt = wt / wt.sum()
        r = np.sqrt(1.0 - t * t)
        pts = np.concatenate(
            [np.column_stack([ri * pts, np.full(len(pts), ti)]) for ti, ri in zip(t, r)]
        )
        wts = np.concatenate([wi * wts for wi in wt])
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return SphereQuadrature(pts, wts / wts.sum())


def tmap(quad: SphereQuadrature, density) -> tuple[np.ndarray, np.ndarray]:
    """Discrete moment map ``sum_i w_i phi_i (x_i, x_i x_i^T - I/n)``."""
    density = np.asarray(density, dtype=float)
    pts = quad.points
    n = quad.n
    wd = quad.weights * density
    v = wd @ pts
    u = np.einsum("m,mi,mj->ij", wd, pts, pts) - wd.sum() * np.eye(n) / n
    return v, u


def beta_constants(quad: SphereQuadrature) -> tuple[float, float, float]:
    """Second and fourth moments of the quadrature measure."""
    x = quad.points
    n = quad.n
    b1 = quad.integrate(x[:, 0] ** 2)
    b2 = quad.integrate(x[:, 0] ** 2 * x[:, 1] ** 2)
    b3 = quad.integrate((x[:, 0] ** 2 - 1.0 / n) ** 2)
    return float(b1), float(b2), float(b3)


@dataclass(frozen=True)
class _Moments:
    kc: np.ndarray  # K coordinates at quadrature points, (M, N)
    basis: np.ndarray  # low-degree density basis at quadrature points, (M, N)
    solve: np.ndarray  # maps target coordinates to basis coefficients, (N, N)
    lipschitz: float  # sup |psi| per unit target displacement


def _moments(quad: SphereQuadrature) -> _Moments:
    cached = quad.__dict__.get("_moments")
    if cached is not None:
        return cached
    n = quad.n
    x = quad.points
    kc = k_coords(x)
    # x_i and x^T B_k x; their images under the moment map are diagonal
    basis = np.concatenate([x, np.einsum("mi,kij,mj->mk", x, sym0_basis(n), x)], axis=1)
    gram = np.einsum("m,mp,mq->pq", quad.weights, basis, kc)
    solve = np.linalg.inv(gram)
    lip = float(np.linalg.norm(basis @ solve.T, axis=1).max())
    out = _Moments(kc, basis, solve, lip)
    object.__setattr__(quad, "_moments", out)
    return out


def certificate_lipschitz(quad: SphereQuadrature) -> float:
    """Bound L with ``|psi_delta| <= L |delta|`` for the density correction."""
    return _moments(quad).lipschitz


# ------------------------------------------------------------ certificates


@dataclass(frozen=True)
class Certificate:
    density: np.ndarray
    margin: float
    method: str


def _ansatz_density(quad: SphereQuadrature, target: np.ndarray) -> np.ndarray:
    mom = _moments(quad)
    coef = target @ mom.solve.T
    # every basis function integrates to zero, so the constant part stays 1
    return 1.0 + coef @ mom.basis.T


def _lp_density(quad: SphereQuadrature, target: np.ndarray) -> tuple[np.ndarray, float] | None:
    mom = _moments(quad)
    m = quad.size
    w = quad.weights
    a_eq = np.zeros((mom.kc.shape[1] + 1, m + 1))
    a_eq[:-1, :m] = (w[:, None] * mom.kc).T
    a_eq[-1, :m] = w
    b_eq = np.concatenate([target, [1.0]])
    a_ub = np.zeros((m, m + 1))
    a_ub[:, :m] = -np.eye(m)
    a_ub[:, m] = 1.0
    c = np.zeros(m + 1)
    c[m] = -1.0
    bounds = [(0, None)] * m + [(None, 1.0)]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    phi = res.x[:m]
    return phi, float(phi.min())


def interior_certificate(
    z: StateTriple, margin: float, quad: SphereQuadrature, *, use_lp: bool = True
) -> Certificate | None:
    """Certify ``z`` in int(K^co x [-1, 1]) with density floor ``margin``.

    Tries the density ``1 + psi`` with ``psi`` in the span of linear and
    trace-free quadratic harmonics first, then a linear program maximizing
    the minimum density. Returns ``None`` when neither clears the margin.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if abs(z.q) > 1.0 - margin:
        return None
    target = pair_coords(z.v, z.u)
    phi = _ansatz_density(quad, target)
    if phi.min() >= margin:
        return Certificate(phi, float(phi.min()), "ansatz")
    if not use_lp:
        return None
    found = _lp_density(quad, target)
    if found is None or found[1] < margin:
        return None
    return Certificate(found[0], found[1], "lp")


def certify_many(
    coords: np.ndarray, q: np.ndarray, margin: float, quad: SphereQuadrature, *, use_lp: bool = True
) -> np.ndarray:
    """Vectorized certification of many (v, u) coordinate rows; returns a bool mask."""
    coords = np.atleast_2d(coords)
    q = np.asarray(q, dtype=float).reshape(-1)
    mom = _moments(quad)
    phi_min = (1.0 + (coords @ mom.solve.T) @ mom.basis.T).min(axis=1)
    ok = phi_min >= margin
    ok &= np.abs(q) <= 1.0 - margin
    if use_lp:
        for i in np.flatnonzero(~ok & (np.abs(q) <= 1.0 - margin)):
            found = _lp_density(quad, coords[i])
            ok[i] = found is not None and found[1] >= margin
    return ok


def density_floor(coords: np.ndarray, quad: SphereQuadrature, *, use_lp: bool = True) -> np.ndarray:
    """Best available density floor per row (ansatz, improved by LP if asked)."""
    coords = np.atleast_2d(coords)
    mom = _moments(quad)
    floor = (1.0 + (coords @ mom.solve.T) @ mom.basis.T).min(axis=1)
    if use_lp:
        for i in range(coords.shape[0]):
            found = _lp_density(quad, coords[i])
            if found is not None:
                floor[i] = max(floor[i], found[1])
    return floor


# ------------------------------------------------------------ decomposition


@dataclass(frozen=True)
class KDecomposition:
    weights: np.ndarray  # lambda_i > 0, sum 1
    points: np.ndarray  # unit vectors v_i, (k, n)
    target: np.ndarray  # flat (v, u) coordinates

    @property
    def coords(self) -> np.ndarray:
        return k_coords(self.points)

    def residual(self) -> float:
        return float(np.linalg.norm(self.weights @ self.coords - self.target))


def _reduce(lam: np.ndarray, kc: np.ndarray, target: np.ndarray, tol: float) -> np.ndarray:
    """Drop atoms along null directions of the moment matrix until independent."""
    active = np.flatnonzero(lam > 0)
    while True:
        p = np.vstack([kc[active].T, np.ones(len(active))])
        _, s, vt = np.linalg.svd(p)
        rank = int((s > 1e-10 * s[0]).sum())
        if len(active) <= rank:
            break
        d = vt[-1]
        if d.max() <= 0:
            d = -d
        pos = d > 1e-14
        ratios = lam[active][pos] / d[pos]
        tau = ratios.min()
        lam[active] = lam[active] - tau * d
        lam[active[pos][np.argmin(ratios)]] = 0.0
        lam[lam < 1e-15] = 0.0
        active = np.flatnonzero(lam > 0)
    # re-solve on the surviving atoms to remove drift
    p = np.vstack([kc[active].T, np.ones(len(active))])
    rhs = np.concatenate([target, [1.0]])
    sol, *_ = np.linalg.lstsq(p, rhs, rcond=None)
    if np.all(sol > 0) and np.linalg.norm(p @ sol - rhs) <= tol:
        lam[active] = sol
    return lam


def caratheodory_decompose(v, u, quad: SphereQuadrature, tol: float = 1e-10) -> KDecomposition:
    """Write ``(v, u)`` as a convex combination of at most N+1 points of K."""
    n = quad.n
    z = StateTriple(v, u, 0.0)
    cert = interior_certificate(z, 1e-12, quad)
    if cert is None:
        raise StateError("point is not certified interior to the hull of K")
    mom = _moments(quad)
    target = pair_coords(z.v, z.u)
    lam = _reduce(quad.weights * cert.density, mom.kc, target, tol)
    keep = lam > 0
    dec = KDecomposition(lam[keep], quad.points[keep], target)
    if dec.residual() > tol or abs(dec.weights.sum() - 1.0) > tol:
        raise StateError(f"decomposition residual {dec.residual():.3e} exceeds tol")
    if len(dec.weights) > hull_dim(n) + 2:
        raise StateError("decomposition did not reduce")
    return dec


# ------------------------------------------------------------ directions


@dataclass(frozen=True)
class SegmentDirection:
    vbar: np.ndarray
    ubar: np.ndarray

    def state(self) -> StateTriple:
        return StateTriple(self.vbar, self.ubar, 0.0)


def segment_direction(z: StateTriple, quad: SphereQuadrature) -> SegmentDirection:
    """Wave-cone direction whose segment around ``z`` stays inside the hull.

    Decompose ``(v, u)``, take the heaviest atom ``z_1`` and the atom ``z_j``
    maximizing ``lambda_j |v_j - v_1|``; return ``lambda_j (z_j - z_1) / 2``.
    """
    if abs(z.q) >= 1.0:
        raise StateError("q outside ]-1, 1[")
    dec = caratheodory_decompose(z.v, z.u, quad)
    lam = dec.weights
    pts = dec.points
    i1 = int(np.argmax(lam))
    spread = lam * np.linalg.norm(pts - pts[i1], axis=1)
    spread[i1] = -1.0
    j = int(np.argmax(spread))
    v1, u1 = k_point(pts[i1])
    vj, uj = k_point(pts[j])
    d = SegmentDirection(0.5 * lam[j] * (vj - v1), 0.5 * lam[j] * (uj - u1))
    if not matrix_in_wave_cone(to_matrix(d.state()), 1e-8):
        raise StateError("segment direction left the wave cone")
    return d


def lambda_check_difference(a, b) -> float:
    """``|det|`` of the difference of the bordered matrices of two K points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def bordered(w):
        n = w.shape[0]
        m = np.zeros((n + 1, n + 1))
        m[:n, :n] = np.outer(w, w) - np.eye(n) / n
        m[:n, n] = w
        m[n, :n] = w
        return m

    return abs(float(np.linalg.det(bordered(a) - bordered(b))))


# ------------------------------------------------------------ distance to K


def dist_to_K_many(v: np.ndarray, u: np.ndarray, quad: SphereQuadrature | None = None, iters: int = 60) -> np.ndarray:
    """Distance from each ``(v, u)`` to K, for stacks ``v`` (P, n), ``u`` (P, n, n).

    On the sphere ``|w (x) w - I/n|^2 = 1 - 1/n``, so the squared distance is
    ``|v|^2 + |u|^2 + 2 - 1/n - 2 max_w (v.w + w^T u w)``. The max is seeded
    from the quadrature nodes and polished by a monotone ascent iteration.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = np.asarray(u, dtype=float).reshape(v.shape[0], v.shape[1], v.shape[1])
    n = v.shape[1]
    if quad is None:
        quad = sphere_quadrature(n, 47 if n == 2 else 15)
    out = np.empty(v.shape[0])
    chunk = max(1, 200_000 // quad.size)
    for s in range(0, v.shape[0], chunk):
        vs, us = v[s : s + chunk], u[s : s + chunk]
        x = quad.points
        f = vs @ x.T + np.einsum("mi,pij,mj->pm", x, us, x)
        w = x[np.argmax(f, axis=1)]
        shift = 2.0 * np.linalg.norm(us, axis=(1, 2)) + 1e-12
        for _ in range(iters):
            g = vs + 2.0 * np.einsum("pij,pj->pi", us, w) + shift[:, None] * w
            nrm = np.linalg.norm(g, axis=1, keepdims=True)
            w = np.where(nrm > 0, g / np.where(nrm > 0, nrm, 1.0), w)
        best = np.einsum("pi,pi->p", vs, w) + np.einsum("pi,pij,pj->p", w, us, w)
        d2 = (vs * vs).sum(1) + (us * us).sum((1, 2)) + 2.0 - 1.0 / n - 2.0 * best
        out[s : s + chunk] = np.sqrt(np.maximum(d2, 0.0))
    return out


def dist_to_K(v, u, quad: SphereQuadrature | None = None) -> float:
    v = np.asarray(v, dtype=float).reshape(1, -1)
    u = np.asarray(u, dtype=float)[None]
    return float(dist_to_K_many(v, u, quad)[0])
