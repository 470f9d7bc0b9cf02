"""Localized plane waves.

A divergence-free field with values in the zero-corner symmetric matrices is
generated from a potential ``E`` skew in both index pairs through

    U_ij = 1/2 sum_kl d_k d_l (E^{il}_{kj} + E^{jl}_{ki}).

Every potential used here is a sum of ``constant tensor * scalar function``,
so ``U`` is the contraction of a fixed linear map with the Hessian of the
scalar. Hessians are closed form, which keeps divergence-freeness analytic.

Tensor index convention: ``C[k, l, i, j]`` stores ``E^{kl}_{ij}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .algebra import (
    StateError,
    StateTriple,
    check_galilean,
    check_m,
    galilean_matrix,
    matrix_in_wave_cone,
    to_matrix,
)
from .geometry import sphere_quadrature


class WaveError(RuntimeError):
    """Raised when a wave cannot be built within the configured limits."""

    def __init__(self, message: str, required_n: float | None = None):
        super().__init__(message)
        self.required_n = required_n


# ------------------------------------------------------------ scalar fields


class ScalarField:
    """Smooth scalar on R^m with closed-form gradient and Hessian."""

    def evaluate(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, y):
        return self.evaluate(np.atleast_2d(y))[0]


@dataclass(frozen=True)
class SineProfile(ScalarField):
    """``sin(N y_axis) / N^2``."""

    N: float
    axis: int = 0

    def evaluate(self, y):
        y = np.atleast_2d(y)
        p, m = y.shape
        arg = self.N * y[:, self.axis]
        s, c = np.sin(arg), np.cos(arg)
        val = s / self.N**2
        grad = np.zeros((p, m))
        grad[:, self.axis] = c / self.N
        hess = np.zeros((p, m, m))
        hess[:, self.axis, self.axis] = -s
        return val, grad, hess


def _smooth_step(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C-infinity step h(t) = f(t) / (f(t) + f(1-t)), f(t) = exp(-1/t), with h', h''."""
    t = np.asarray(t, dtype=float)
    inside = (t > 1e-3) & (t < 1.0 - 1e-3)
    ts = np.where(inside, t, 0.5)
    rs = 1.0 - ts
    a = np.exp(-1.0 / ts)
    b = np.exp(-1.0 / rs)
    da = a / ts**2
    db = -b / rs**2
    dda = a * (1.0 - 2.0 * ts) / ts**4
    ddb = b * (1.0 - 2.0 * rs) / rs**4
    den = a + b
    num = da * b - a * db
    h = a / den
    dh = num / den**2
    ddh = (dda * b - a * ddb) / den**2 - 2.0 * num * (da + db) / den**3
    h = np.where(inside, h, (t >= 0.5).astype(float))
    dh = np.where(inside, dh, 0.0)
    ddh = np.where(inside, ddh, 0.0)
    return h, dh, ddh


@dataclass(frozen=True)
class CutoffProfile(ScalarField):
    """Radial bump ``rho(|y|^2)``: 1 on the inner ball, 0 outside the outer ball."""

    inner: float = 0.5
    outer: float = 1.0

    def evaluate(self, y):
        y = np.atleast_2d(y)
        p, m = y.shape
        s = np.einsum("pi,pi->p", y, y)
        width = self.outer**2 - self.inner**2
        h, dh, ddh = _smooth_step((self.outer**2 - s) / width)
        d1 = -dh / width
        d2 = ddh / width**2
        grad = 2.0 * d1[:, None] * y
        hess = 2.0 * d1[:, None, None] * np.eye(m) + 4.0 * d2[:, None, None] * np.einsum("pi,pj->pij", y, y)
        return h, grad, hess


@dataclass(frozen=True)
class Product(ScalarField):
    a: ScalarField
    b: ScalarField

    def evaluate(self, y):
        va, ga, ha = self.a.evaluate(y)
        vb, gb, hb = self.b.evaluate(y)
        val = va * vb
        grad = ga * vb[:, None] + va[:, None] * gb
        hess = (
            ha * vb[:, None, None]
            + va[:, None, None] * hb
            + np.einsum("pi,pj->pij", ga, gb)
            + np.einsum("pi,pj->pij", gb, ga)
        )
        return val, grad, hess


@dataclass(frozen=True)
class PlaneWaveSum(ScalarField):
    """``sum_j amp_j sin(k_j . y + phase_j)``."""

    wavevectors: np.ndarray
    phases: np.ndarray
    amps: np.ndarray

    def evaluate(self, y):
        y = np.atleast_2d(y)
        arg = y @ self.wavevectors.T + self.phases
        s = np.sin(arg) * self.amps
        c = np.cos(arg) * self.amps
        val = s.sum(1)
        grad = c @ self.wavevectors
        hess = -np.einsum("pj,ja,jb->pab", s, self.wavevectors, self.wavevectors)
        return val, grad, hess


@dataclass(frozen=True)
class RidgePolynomial(ScalarField):
    """``sum_j amp_j (k_j . y)^deg_j``."""

    directions: np.ndarray
    degrees: np.ndarray
    amps: np.ndarray

    def evaluate(self, y):
        y = np.atleast_2d(y)
        t = y @ self.directions.T
        d = self.degrees.astype(float)
        val = (self.amps * t**d).sum(1)
        c1 = self.amps * d * np.where(d >= 1, t ** np.maximum(d - 1, 0), 0.0)
        c2 = self.amps * d * (d - 1) * np.where(d >= 2, t ** np.maximum(d - 2, 0), 0.0)
        grad = c1 @ self.directions
        hess = np.einsum("pj,ja,jb->pab", c2, self.directions, self.directions)
        return val, grad, hess


# ------------------------------------------------------------ potentials


def l_map(coef: np.ndarray) -> np.ndarray:
    """Linear map H -> U of the potential operator for one constant tensor.

    Returns ``M[i, j, k, l]`` with ``U_ij = sum_kl M[i, j, k, l] H_kl``.
    """
    # coef[k, l, i, j] = E^{kl}_{ij}; U_ij = 1/2 sum_kl H_kl (E^{il}_{kj} + E^{jl}_{ki})
    a = np.einsum("ilkj->ijkl", coef)
    b = np.einsum("jlki->ijkl", coef)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class SkewPotential:
    """``E(y) = sum_t coef_t * g_t(y)`` with each coef skew in both index pairs."""

    terms: tuple[tuple[np.ndarray, ScalarField], ...]

    @property
    def dim(self) -> int:
        return self.terms[0][0].shape[0]

    def check(self, tol: float = 1e-14) -> None:
        for coef, _ in self.terms:
            scale = max(1.0, float(np.abs(coef).max()))
            if np.abs(coef + coef.transpose(1, 0, 2, 3)).max() > tol * scale:
                raise StateError("potential is not skew in the upper pair")
            if np.abs(coef + coef.transpose(0, 1, 3, 2)).max() > tol * scale:
                raise StateError("potential is not skew in the lower pair")

    def zero_corner(self, tol: float = 1e-14) -> bool:
        """Whether ``E^{(n+1) j}_{(n+1) i}`` vanishes for all i, j."""
        return all(np.abs(coef[-1, :, -1, :]).max() <= tol for coef, _ in self.terms)

    def entries(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        out = 0.0
        for coef, g in self.terms:
            out = out + np.einsum("p,klij->pklij", g.evaluate(y)[0], coef)
        return out

    def times(self, g: ScalarField) -> "SkewPotential":
        return SkewPotential(tuple((coef, Product(f, g)) for coef, f in self.terms))


def apply_L(E: SkewPotential, y: np.ndarray) -> np.ndarray:
    """Evaluate the divergence-free symmetric field generated by ``E`` at ``y``."""
    y = np.atleast_2d(y)
    m = E.dim
    out = np.zeros((y.shape[0], m, m))
    for coef, g in E.terms:
        hess = g.evaluate(y)[2]
        out += np.einsum("ijkl,pkl->pij", l_map(coef), hess)
    return 0.5 * (out + out.transpose(0, 2, 1))


def canonical_coef(vbar: np.ndarray) -> np.ndarray:
    """Constant tensor of the canonical potential for ``vbar`` with ``vbar e_1 = 0``.

    Nonzero entries ``E^{j1}_{i1} = -E^{j1}_{1i} = -E^{1j}_{i1} = E^{1j}_{1i} = vbar_ij``.
    """
    m = vbar.shape[0]
    coef = np.zeros((m, m, m, m))
    for i in range(1, m):
        for j in range(1, m):
            c = vbar[i, j]
            coef[j, 0, i, 0] = c
            coef[j, 0, 0, i] = -c
            coef[0, j, i, 0] = -c
            coef[0, j, 0, i] = c
    return coef


def build_E_canonical(vbar, N: float) -> SkewPotential:
    vbar = check_m(vbar)
    scale = max(1.0, float(np.abs(vbar).max()))
    if np.abs(vbar[:, 0]).max() > 1e-12 * scale:
        raise StateError("canonical potential needs vbar e_1 = 0")
    if N <= 0:
        raise ValueError("N must be positive")
    return SkewPotential(((canonical_coef(vbar), SineProfile(float(N))),))


def n2_potential(jac_w: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """3 x 3 zero-corner field from the Jacobian of a divergence-free w on R^3.

    ``jac_w[p, k, m]`` is ``d_m w_k`` at sample ``p``.
    """
    J = np.asarray(jac_w, dtype=float)
    if J.shape[-2:] != (3, 3):
        raise StateError("n2_potential is for n = 2 (fields on R^3)")
    J = J.reshape(-1, 3, 3)
    div = np.einsum("pkk->p", J)
    scale = max(1.0, float(np.abs(J).max()))
    if np.abs(div).max() > tol * scale:
        raise StateError("w is not divergence-free")
    d = lambda k, m: J[:, k - 1, m - 1]  # noqa: E731  d(k, m) = d_m w_k
    U = np.zeros((J.shape[0], 3, 3))
    U[:, 0, 0] = d(1, 2)
    U[:, 0, 1] = U[:, 1, 0] = 0.5 * d(2, 2) - 0.5 * d(1, 1)
    U[:, 0, 2] = U[:, 2, 0] = 0.5 * d(3, 2)
    U[:, 1, 1] = -d(2, 1)
    U[:, 1, 2] = U[:, 2, 1] = -0.5 * d(3, 1)
    return U


# ------------------------------------------------------------ wave terms


@dataclass(frozen=True)
class WaveTerm:
    """``U(y) = A^{-t} V(A^t (y - center) / scale) A^{-1}`` with ``V`` the canonical wave.

    ``ubar`` is the wave state in the y frame; ``A^t ubar A`` must kill ``e_1``.
    """

    ubar: np.ndarray
    N: float
    A: np.ndarray
    center: np.ndarray
    scale: float = 1.0
    cutoff: CutoffProfile = field(default_factory=CutoffProfile)

    def __post_init__(self):
        m = self.ubar.shape[0]
        object.__setattr__(self, "ubar", check_m(np.asarray(self.ubar, dtype=float)))
        object.__setattr__(self, "A", check_galilean(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(m))
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "scale", float(self.scale))
        if self.N <= 0 or self.scale <= 0:
            raise StateError("frequency and scale must be positive")

    @property
    def dim(self) -> int:
        return self.ubar.shape[0]

    @property
    def vbar(self) -> np.ndarray:
        v = self.A.T @ self.ubar @ self.A
        v[:, 0] = 0.0
        v[0, :] = 0.0
        return 0.5 * (v + v.T)

    def _cached(self):
        c = self.__dict__.get("_cache")
        if c is None:
            ainv = np.linalg.inv(self.A)
            lm = l_map(canonical_coef(self.vbar))
            wmap = np.einsum("ai,ijkl,jb->abkl", ainv.T, lm, ainv)
            radius = self.scale / np.linalg.svd(self.A, compute_uv=False).min()
            c = (wmap, radius)
            object.__setattr__(self, "_cache", c)
        return c

    @property
    def bounding_radius(self) -> float:
        """Radius of a ball around ``center`` containing the support."""
        return self._cached()[1]

    @property
    def inner_radius(self) -> float:
        """Shortest semi-axis of the support ellipsoid."""
        return self.scale / np.linalg.svd(self.A, compute_uv=False).max()

    def local(self, y: np.ndarray) -> np.ndarray:
        return ((np.atleast_2d(y) - self.center) @ self.A) / self.scale

    def in_support(self, y: np.ndarray) -> np.ndarray:
        z = self.local(y)
        return np.einsum("pi,pi->p", z, z) < self.cutoff.outer**2

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        m = self.dim
        out = np.zeros((y.shape[0], m, m))
        z = self.local(y)
        inside = np.einsum("pi,pi->p", z, z) < self.cutoff.outer**2
        if not inside.any():
            return out
        g = Product(SineProfile(self.N), self.cutoff)
        hess = g.evaluate(z[inside])[2]
        vals = np.einsum("ijkl,pkl->pij", self._cached()[0], hess)
        # exact symmetry: a + b == b + a in floating point
        out[inside] = 0.5 * (vals + vals.transpose(0, 2, 1))
        return out

    def deviation(self, y: np.ndarray) -> np.ndarray:
        """``U - phi * ubar * sin(N z_1)`` at ``y``."""
        z = self.local(y)
        phi = self.cutoff.evaluate(z)[0]
        return self.evaluate(y) - (phi * np.sin(self.N * z[:, 0]))[:, None, None] * self.ubar

    def wavevector(self) -> np.ndarray:
        """Spatial frequency vector of the carrier ``sin(N z_1)`` in y."""
        return self.N * self.A[:, 0] / self.scale

    def scaled(self, s: float) -> "WaveTerm":
        """Same term with amplitude multiplied by ``s``."""
        return replace(self, ubar=s * self.ubar)

    def moved(self, center, scale: float) -> "WaveTerm":
        """Place the unit-frame term inside the ball ``B_scale(center)``."""
        return replace(self, center=np.asarray(center) + scale * self.center, scale=self.scale * scale)


def conjugate_wave(A: np.ndarray, wt: WaveTerm) -> WaveTerm:
    """Term evaluating to ``A^{-t} wt(A^t y) A^{-1}``."""
    A = check_galilean(A)
    ainv = np.linalg.inv(A)
    return WaveTerm(
        ubar=ainv.T @ wt.ubar @ ainv,
        N=wt.N,
        A=A @ wt.A,
        center=ainv.T @ wt.center,
        scale=wt.scale,
        cutoff=wt.cutoff,
    )


@dataclass(frozen=True)
class WaveSum:
    terms: tuple[WaveTerm, ...]
    dim: int

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        out = np.zeros((y.shape[0], self.dim, self.dim))
        if not self.terms:
            return out
        if len(self.terms) <= 4 or y.shape[0] < 64:
            for t in self.terms:
                out += t.evaluate(y)
            return out
        tree = cKDTree(y)
        for t in self.terms:
            idx = tree.query_ball_point(t.center, t.bounding_radius * (1 + 1e-9))
            if idx:
                idx = np.asarray(idx)
                out[idx] += t.evaluate(y[idx])
        return out

    def __add__(self, other: "WaveSum") -> "WaveSum":
        return WaveSum(self.terms + other.terms, self.dim)

    def max_wavenumber(self) -> float:
        return max((float(np.linalg.norm(t.wavevector())) for t in self.terms), default=0.0)


# ------------------------------------------------------------ canonical wave


def _shell_samples(m: int, radial: int = 160) -> np.ndarray:
    dirs = sphere_quadrature(m, 15).points
    r = np.linspace(0.5, 1.0, radial)
    return (r[:, None, None] * dirs[None]).reshape(-1, m)


def deviation_envelope(vbar: np.ndarray, cutoff: CutoffProfile | None = None) -> tuple[float, float]:
    """Constants ``(X, Y)`` with ``|U - phi U~| <= X / N + Y / N^2`` on samples.

    The cutoff correction is ``cos(N z_1)/N * L(grad phi (x) e_1 + e_1 (x) grad phi)
    + sin(N z_1)/N^2 * L(Hess phi)``; neither factor oscillates, so sampling them
    is reliable.
    """
    cutoff = cutoff or CutoffProfile()
    m = vbar.shape[0]
    lm = l_map(canonical_coef(vbar))
    z = _shell_samples(m) * cutoff.outer
    _, grad, hess = cutoff.evaluate(z)
    e1 = np.zeros(m)
    e1[0] = 1.0
    sym = np.einsum("pi,j->pij", grad, e1)
    sym = sym + sym.transpose(0, 2, 1)
    x = np.linalg.norm(np.einsum("ijkl,pkl->pij", lm, sym), axis=(1, 2)).max()
    yv = np.linalg.norm(np.einsum("ijkl,pkl->pij", lm, hess), axis=(1, 2)).max()
    return float(x), float(yv)


def required_frequency(vbar: np.ndarray, eps: float, n_start: float = 64.0, safety: float = 2.0) -> float:
    """Smallest ``n_start * 2^k`` whose deviation bound times ``safety`` is below eps."""
    x, yv = deviation_envelope(vbar)
    N = float(n_start)
    while safety * (x / N + yv / N**2) >= eps:
        N *= 2.0
        if N > 2.0**40:
            break
    return N


def canonical_wave(vbar, eps: float, *, n_start: float = 64.0, n_cap: float = 8192.0, safety: float = 2.0) -> WaveTerm:
    """Wave for ``vbar`` with ``vbar e_1 = 0``: equals ``vbar sin(N y_1)`` on the inner ball."""
    vbar = check_m(vbar)
    m = vbar.shape[0]
    if eps <= 0:
        raise ValueError("eps must be positive")
    if np.abs(vbar[:, 0]).max() > 1e-12 * max(1.0, np.abs(vbar).max()):
        raise StateError("canonical wave needs vbar e_1 = 0")
    if not np.any(vbar[:, -1]):
        raise StateError("canonical wave needs vbar e_{n+1} != 0")
    N = required_frequency(vbar, eps, n_start, safety)
    if N > n_cap:
        raise WaveError(f"eps={eps:g} needs N={N:g} above the cap {n_cap:g}", required_n=N)
    return WaveTerm(ubar=vbar, N=N, A=np.eye(m), center=np.zeros(m), scale=1.0)


# ------------------------------------------------------------ packing


def _grid_in_box(lo: np.ndarray, hi: np.ndarray, spacing: float) -> np.ndarray:
    axes = [np.arange(a, b + 0.5 * spacing, spacing) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def greedy_balls(
    candidates: np.ndarray,
    room: np.ndarray,
    *,
    r_cap: float,
    r_min: float,
    done,
    weight: np.ndarray | None = None,
) -> list[tuple[np.ndarray, float]]:
    """Largest-empty-ball packing over a candidate set.

    ``room[i]`` is the largest admissible radius at candidate ``i`` (distance
    to the boundary). Each round places the ball maximizing
    ``weight * radius^m``, then shrinks the room of every candidate by the
    new ball. Stops when ``done(balls)`` holds or no room ``>= r_min`` is left.
    """
    m = candidates.shape[1]
    room = np.minimum(np.asarray(room, dtype=float), r_cap)
    w = np.ones(len(candidates)) if weight is None else np.asarray(weight, dtype=float)
    balls: list[tuple[np.ndarray, float]] = []
    while len(candidates):
        score = np.where(room >= r_min, w * np.clip(room, 0.0, None) ** m, -1.0)
        i = int(np.argmax(score))
        if score[i] <= 0.0:
            break
        c, r = candidates[i].copy(), float(room[i])
        balls.append((c, r))
        room = np.minimum(room, np.linalg.norm(candidates - c, axis=1) - r)
        if done(balls):
            break
    return balls


def ellipsoid_packing(
    A: np.ndarray, target: float = 0.5, resolution: int = 24, r_min: float = 0.02, max_candidates: int = 60_000
) -> list[tuple[np.ndarray, float]]:
    """Disjoint ellipsoids ``c + r A^{-t} B_1`` inside ``B_1`` covering ``target`` of its volume.

    In the frame ``z = A^t y`` the ellipsoids are balls; they are placed
    greedily, largest first, on a candidate grid of ``resolution`` points per
    unit of the largest inscribed radius (coarsened to at most
    ``max_candidates`` points). Containment uses the bounding
    sphere ``|c| + r sigma_max(A^{-t}) <= 1``.
    """
    A = check_galilean(A)
    m = A.shape[0]
    ainvt = np.linalg.inv(A).T
    smax = np.linalg.svd(ainvt, compute_uv=False).max()
    det = abs(np.linalg.det(A))
    r0 = 1.0 / smax
    if r0**m / det >= target:
        return [(np.zeros(m), r0)]
    ext = np.abs(A.T).sum(axis=1)  # bounding box of A^t B_1
    frac = 0.0
    budget = max_candidates
    while True:
        spacing = max(r0 / resolution, float(np.prod(2 * ext) / budget) ** (1.0 / m))
        z = np.vstack([np.zeros(m), _grid_in_box(-ext, ext, spacing)])
        room = (1.0 - np.linalg.norm(z @ ainvt.T, axis=1)) / smax
        z, room = z[room > 0], room[room > 0]
        balls = greedy_balls(
            z, room, r_cap=r0, r_min=r_min * r0, done=lambda b: sum(r**m for _, r in b) / det >= target
        )
        frac = sum(r**m for _, r in balls) / det
        if frac >= target:
            break
        if spacing <= r0 / resolution or budget >= 16 * max_candidates:
            raise WaveError(f"packing reached coverage {frac:.3f} < {target}")
        budget *= 4
    return [(ainvt @ c, r) for c, r in balls]


def packing_coverage(A: np.ndarray, packing) -> float:
    m = A.shape[0]
    return sum(r**m for _, r in packing) / abs(np.linalg.det(A))


def packing_disjoint(A: np.ndarray, packing) -> bool:
    """Pairwise disjointness in the metric where the ellipsoids are balls."""
    if len(packing) < 2:
        return True
    z = np.array([A.T @ c for c, _ in packing])
    r = np.array([rr for _, rr in packing])
    tree = cKDTree(z)
    pairs = tree.query_pairs(2.0 * r.max() * (1 + 1e-12), output_type="ndarray")
    if len(pairs) == 0:
        return True
    d = np.linalg.norm(z[pairs[:, 0]] - z[pairs[:, 1]], axis=1)
    return bool(np.all(d >= r[pairs[:, 0]] + r[pairs[:, 1]] - 1e-12))


# ------------------------------------------------------------ localized wave


def kernel_direction(U: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Unit kernel vector of ``U`` as far from ``e_{n+1}`` as the kernel allows."""
    _, s, vt = np.linalg.svd(U)
    kdim = int((s <= rtol * max(s[0], 1e-300)).sum())
    if kdim == 0:
        raise StateError("matrix has no kernel: state is not in the wave cone")
    K = vt[-kdim:].T
    if kdim == 1:
        f = K[:, 0]
    else:
        proj = K[-1]  # components of e_{n+1} in the kernel basis
        _, _, w = np.linalg.svd(proj.reshape(1, -1))
        f = K @ w[-1]
    f = f / np.linalg.norm(f)
    lead = f[np.flatnonzero(np.abs(f) > 1e-12)[0]]
    return f * np.sign(lead)


def conjugation_norm(A: np.ndarray) -> float:
    """Upper bound of ``X -> A^{-t} X A^{-1}`` in the Frobenius operator norm."""
    return float(np.linalg.svd(np.linalg.inv(A), compute_uv=False).max() ** 2)


@dataclass(frozen=True)
class LocalizedWave:
    waves: WaveSum
    ubar: np.ndarray
    A: np.ndarray
    N: float
    coverage: float
    projection_error: float


def localized_wave(
    a: StateTriple,
    eps: float,
    *,
    n_start: float = 64.0,
    n_cap: float = 8192.0,
    cone_tol: float = 1e-8,
    frequency: float | None = None,
    packing: str = "cover",
) -> LocalizedWave:
    """Compactly supported wave in ``B_1`` with values within ``eps`` of ``[-a, a]``.

    Passing ``frequency`` fixes N and skips the eps-driven selection; the tube
    bound then has to be checked by the caller. ``packing="single"`` keeps
    only the largest centered ellipsoid instead of covering half of ``B_1``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    U = to_matrix(a)
    if not np.any(a.v):
        raise StateError("localized wave needs a nonzero velocity component")
    if not matrix_in_wave_cone(U, cone_tol):
        raise StateError("state is not in the wave cone")
    f = kernel_direction(U)
    A = galilean_matrix(f / np.linalg.norm(f[:-1]))  # det A = 1
    vbar = A.T @ U @ A
    proj_err = float(np.linalg.norm(vbar[:, 0]) * np.sqrt(2.0))
    vbar[:, 0] = 0.0
    vbar[0, :] = 0.0
    tnorm = conjugation_norm(A)
    budget = eps / tnorm - proj_err
    if budget <= 0:
        raise WaveError("cone defect of the input exceeds eps")
    if frequency is None:
        base = canonical_wave(vbar, budget, n_start=n_start, n_cap=n_cap)
    else:
        base = WaveTerm(ubar=vbar, N=frequency, A=np.eye(U.shape[0]), center=np.zeros(U.shape[0]))
    term = conjugate_wave(A, base)
    if packing == "single":
        packing = [(np.zeros(U.shape[0]), 1.0 / np.linalg.svd(np.linalg.inv(term.A), compute_uv=False).max())]
    elif packing == "cover":
        packing = ellipsoid_packing(term.A)
    else:
        raise ValueError(f"unknown packing {packing!r}")
    terms = tuple(replace(term, center=c, scale=r) for c, r in packing)
    return LocalizedWave(
        waves=WaveSum(terms, U.shape[0]),
        ubar=term.ubar,
        A=term.A,
        N=base.N,
        coverage=packing_coverage(term.A, packing),
        projection_error=proj_err,
    )


# ------------------------------------------------------------ measurements


def ball_volume(m: int, r: float = 1.0) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1) * r**m


def ball_samples(m: int, count: int, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points mapped uniformly into ``B_1`` (volume preserving)."""
    sob = qmc.Sobol(m + 1, scramble=True, seed=seed).random(count)
    # inverse-CDF normals on independent coordinates give an isotropic direction
    x = ndtri(np.clip(sob[:, :m], 1e-16, 1.0 - 1e-16))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = sob[:, m] ** (1.0 / m)
    return x * r[:, None]


def velocity_mass(waves: WaveSum, count: int = 2**17, seed: int = 0) -> float:
    """Quasi-Monte Carlo estimate of ``int |U e_{n+1}|`` over ``B_1``."""
    m = waves.dim
    y = ball_samples(m, count, seed)
    vals = waves.evaluate(y)[:, :, -1]
    return float(np.linalg.norm(vals, axis=1).mean() * ball_volume(m))


def tube_deviation(waves: WaveSum, ubar: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance in ``(v, u, q)`` coordinates from sampled values to ``[-ubar, ubar]``."""
    from .algebra import from_matrix

    vals = waves.evaluate(y)
    a = from_matrix(ubar).vector()
    n = ubar.shape[0] - 1
    block = vals[:, :n, :n]
    q = np.trace(block, axis1=1, axis2=2) / n
    u = block - q[:, None, None] * np.eye(n)
    z = np.concatenate([vals[:, :n, n], u.reshape(len(y), -1), q[:, None]], axis=1)
    aa = float(a @ a)
    if aa == 0.0:
        return np.linalg.norm(z, axis=1)
    t = np.clip(z @ a / aa, -1.0, 1.0)
    return np.linalg.norm(z - t[:, None] * a, axis=1)
