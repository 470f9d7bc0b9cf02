"""Grid diagnostics for constructed states.

Finite differences are second-order centered differences on periodic grids;
grids are laid out so that fields vanish well before the boundary, which
makes the periodic wrap harmless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import split_fields
from .engine import ConstructionState, DomainSpec
from .geometry import dist_to_K_many
from .grid import GridSpec


class ResolutionError(ValueError):
    """The grid is too coarse for the frequencies in the state."""


NODES_PER_WAVELENGTH = 8.0


@dataclass(frozen=True)
class SampledField:
    """Matrix field ``U`` on a grid, shape ``grid.shape + (n+1, n+1)``."""

    grid: GridSpec
    U: np.ndarray

    @property
    def n(self) -> int:
        return self.U.shape[-1] - 1

    def triple(self):
        return split_fields(self.U)

    @property
    def v(self) -> np.ndarray:
        return self.U[..., : self.n, self.n]

    @property
    def q(self) -> np.ndarray:
        return np.trace(self.U[..., : self.n, : self.n], axis1=-2, axis2=-1) / self.n

    @property
    def u(self) -> np.ndarray:
        return split_fields(self.U)[1]

    @property
    def p(self) -> np.ndarray:
        v = self.v
        return self.q - (v * v).sum(-1) / self.n


def sample_grid(state: ConstructionState, grid: GridSpec, chunk: int = 400_000) -> SampledField:
    """Evaluate the state at every grid node (deterministic, chunked)."""
    m = state.domain.dim
    if grid.dim != m:
        raise ValueError(f"grid has {grid.dim} axes, state needs {m}")
    pts = grid.points()
    out = np.empty((len(pts), m, m))
    for s in range(0, len(pts), chunk):
        out[s : s + chunk] = state.evaluate(pts[s : s + chunk])
    return SampledField(grid, out.reshape(grid.shape + (m, m)))


def _d(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Periodic centered difference along ``axis``."""
    return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / (2.0 * h)


def divergence(U: np.ndarray, h) -> np.ndarray:
    """Row divergence ``sum_j d_j U_ij`` of a grid matrix field, shape ``grid + (rows,)``."""
    dim = U.ndim - 2
    h = np.broadcast_to(np.asarray(h, dtype=float), (dim,))
    return sum(_d(U[..., :, j], j, h[j]) for j in range(dim))


def _interior(a: np.ndarray, dim: int, width: int = 1) -> np.ndarray:
    return a[(slice(width, -width),) * dim]


def divergence_residual(U: np.ndarray, h) -> float:
    """Max over interior nodes of ``|div U|`` (Euclidean over all rows)."""
    dim = U.ndim - 2
    div = _interior(divergence(U, h), dim)
    return float(np.linalg.norm(div, axis=-1).max()) if div.size else 0.0


def divergence_refinement(state: ConstructionState, center, width: float, points: int = 32) -> tuple[float, float]:
    """Divergence residual on a patch at spacing ``h`` and ``h/2``."""
    center = np.asarray(center, dtype=float)
    g = GridSpec.from_box(center - width / 2, center + width / 2, points)
    r1 = divergence_residual(sample_grid(state, g).U, g.h)
    g2 = g.refined()
    r2 = divergence_residual(sample_grid(state, g2).U, g2.h)
    return r1, r2


def patch_refinement(state: ConstructionState, patches: int = 4, points: int = 32) -> tuple[float, float]:
    """Worst divergence residual over patches centered on the largest-amplitude terms.

    Each patch spans at most one and a half carrier wavelengths and 0.15 of
    the shortest support semi-axis, so that both the carrier and the steep cutoff ramp are
    in the asymptotic regime of the difference quotients.
    """
    terms = sorted(state.terms, key=lambda t: -float(np.abs(t.ubar).max()))[:patches]
    worst = (0.0, 0.0)
    for t in terms:
        k = float(np.linalg.norm(t.wavevector()))
        width = min(3.0 * np.pi / k, 0.15 * t.inner_radius)
        e2 = np.zeros(len(t.center))
        e2[1] = 0.75  # on the cutoff ramp, where every term of the field is active
        c = t.center + t.scale * np.linalg.solve(t.A.T, e2)
        r = divergence_refinement(state, c, width, points)
        if r[0] > worst[0]:
            worst = r
    return worst


def k_distance_stats(sampled: SampledField, mask: np.ndarray) -> tuple[float, float]:
    """Mean and max of the distance to K over masked nodes."""
    v, u, _ = sampled.triple()
    sel = mask.reshape(sampled.grid.shape)
    if not sel.any():
        return 0.0, 0.0
    d = dist_to_K_many(v[sel], u[sel])
    return float(d.mean()), float(d.max())


def energy_profile(state: ConstructionState, times, spatial: GridSpec, chunk: int = 400_000) -> np.ndarray:
    """``e(t) = int |v(x, t)|^2 dx`` by the node rule on the spatial grid."""
    n = state.n
    if spatial.dim != n:
        raise ValueError(f"spatial grid needs {n} axes")
    xs = spatial.points()
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        total = 0.0
        for s in range(0, len(xs), chunk):
            y = np.column_stack([xs[s : s + chunk], np.full(len(xs[s : s + chunk]), t)])
            v = state.evaluate(y)[:, :n, n]
            total += float((v * v).sum())
        out.append(total * spatial.cell_volume)
    return np.array(out)


def hminus1_norm(f: np.ndarray, grid: GridSpec) -> float:
    """``|| f_hat / sqrt(lambda) ||`` over the periodic grid, zero mode dropped.

    ``f`` has shape ``grid.shape`` or ``grid.shape + (c,)``; components add in
    quadrature. Normalized so that ``sin(k.y)`` has norm ``||.||_2 / |k|`` up to
    the discrete symbol.
    """
    lam = grid.laplacian_symbol()
    inv = np.zeros_like(lam)
    nz = lam > 0
    inv[nz] = 1.0 / lam[nz]
    comps = f.reshape(grid.shape + (-1,))
    total = 0.0
    scale = grid.cell_volume / grid.size
    for c in range(comps.shape[-1]):
        fh = np.fft.fftn(comps[..., c])
        total += float((np.abs(fh) ** 2 * inv).sum()) * scale
    return float(np.sqrt(total))


def l2_norm(f: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt((f * f).sum() * grid.cell_volume))


@dataclass(frozen=True)
class ResidualForce:
    f: np.ndarray
    hminus1: float
    l2: float


def mismatch(sampled: SampledField) -> np.ndarray:
    """``v (x) v - |v|^2 I / n - u`` at every node."""
    v, u, _ = sampled.triple()
    n = sampled.n
    vv = np.einsum("...i,...j->...ij", v, v)
    return vv - (v * v).sum(-1)[..., None, None] * np.eye(n) / n - u


def check_resolution(state: ConstructionState, grid: GridSpec, nodes: float = NODES_PER_WAVELENGTH) -> None:
    k = state.max_wavenumber()
    if not grid.resolves(k, nodes):
        raise ResolutionError(
            f"grid spacing {grid.h.max():.4g} gives fewer than {nodes:g} nodes per wavelength at |k| = {k:.4g}"
        )


def force_field(sampled: SampledField) -> np.ndarray:
    """``f = div_x(v (x) v - |v|^2 I / n - u)`` by centered differences, shape ``grid + (n,)``."""
    M = mismatch(sampled)
    h = sampled.grid.h
    return sum(_d(M[..., :, j], j, h[j]) for j in range(sampled.n))


def residual_force(state: ConstructionState, grid: GridSpec, sampled: SampledField | None = None) -> ResidualForce:
    """Residual force on a resolved grid, with its H^-1 and L^2 norms."""
    check_resolution(state, grid)
    sampled = sampled if sampled is not None else sample_grid(state, grid)
    f = force_field(sampled)
    return ResidualForce(f, hminus1_norm(f, grid), l2_norm(f, grid))


def pressure_consistency(state: ConstructionState, grid: GridSpec, sampled: SampledField | None = None) -> float:
    """Negative-norm size of ``-Lap p - d_i d_j (v_i v_j) + d_i f_i``."""
    check_resolution(state, grid)
    sampled = sampled if sampled is not None else sample_grid(state, grid)
    n = sampled.n
    h = grid.h
    v = sampled.v
    p = sampled.p
    f = force_field(sampled)
    res = -sum(_d(_d(p, i, h[i]), i, h[i]) for i in range(n))
    for i in range(n):
        for j in range(n):
            res = res - _d(_d(v[..., i] * v[..., j], i, h[i]), j, h[j])
    res = res + sum(_d(f[..., i], i, h[i]) for i in range(n))
    return hminus1_norm(res, grid)


def support_check(state: ConstructionState, sampled: SampledField) -> bool:
    """Exact zeros at nodes farther than one cell diagonal outside the domain."""
    pts = sampled.grid.points()
    far = state.domain.boundary_distance(pts) < -float(np.linalg.norm(sampled.grid.h))
    vals = sampled.U.reshape(len(pts), -1)[far]
    return bool(np.all(vals == 0.0))


@dataclass(frozen=True)
class DiagnosticReport:
    k: int
    energy: float
    gap: float
    dist_mean: float
    dist_max: float
    div_h: float
    div_h2: float
    f_hminus1: float
    support_ok: bool
    certified: bool
    mollifier_ok: bool
    alpha_measured: float
    extra: dict = field(default_factory=dict)

    def finite(self) -> bool:
        vals = [self.energy, self.gap, self.dist_mean, self.dist_max, self.div_h, self.div_h2, self.f_hminus1]
        return all(np.isfinite(v) for v in vals)

    def as_dict(self) -> dict:
        out = {
            "k": self.k,
            "energy": self.energy,
            "gap": self.gap,
            "dist_to_K_mean": self.dist_mean,
            "dist_to_K_max": self.dist_max,
            "divergence_h": self.div_h,
            "divergence_h2": self.div_h2,
            "f_hminus1": self.f_hminus1,
            "support_ok": self.support_ok,
            "certified": self.certified,
            "mollifier_ok": self.mollifier_ok,
            "alpha_measured": self.alpha_measured,
        }
        out.update(self.extra)
        return out


def diagnose(
    state: ConstructionState,
    grid: GridSpec,
    *,
    k: int,
    energy: float,
    certified: bool,
    mollifier_ok: bool,
    alpha_measured: float,
    extra: dict | None = None,
) -> DiagnosticReport:
    """Full per-iteration report on ``grid`` (which must resolve the state)."""
    sampled = sample_grid(state, grid)
    mask = state.domain.contains(grid.points())
    dmean, dmax = k_distance_stats(sampled, mask)
    rf = residual_force(state, grid, sampled)
    div_h, div_h2 = patch_refinement(state) if state.terms else (0.0, 0.0)
    return DiagnosticReport(
        k=k,
        energy=energy,
        gap=state.domain.volume() - energy,
        dist_mean=dmean,
        dist_max=dmax,
        div_h=div_h,
        div_h2=div_h2,
        f_hminus1=rf.hminus1,
        support_ok=support_check(state, sampled),
        certified=certified,
        mollifier_ok=mollifier_ok,
        alpha_measured=alpha_measured,
        extra=dict(extra or {}),
    )


def diagnostic_grid(domain: DomainSpec, points: int) -> GridSpec:
    """Grid over the domain's box padded by a quarter of its width per side."""
    lo, hi = domain.bounding_box()
    return GridSpec.covering(lo, hi, points, pad=0.25)


def auto_grid(state: ConstructionState, nodes: float = NODES_PER_WAVELENGTH, min_points: int = 32, max_points: int = 192) -> GridSpec:
    """Smallest cubic-count diagnostic grid resolving the state, clipped to ``[min_points, max_points]``."""
    lo, hi = state.domain.bounding_box()
    width = 1.5 * float((hi - lo).max())
    k = state.max_wavenumber()
    need = int(np.ceil(nodes * k * width / (2.0 * np.pi))) + 1 if k > 0 else min_points
    return diagnostic_grid(state.domain, int(np.clip(need, min_points, max_points)))
