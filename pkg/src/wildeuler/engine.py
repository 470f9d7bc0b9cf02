"""Perturbation step and convex-integration loop.

States are finite sums of localized waves supported in the domain, so the
linear system holds by construction and the support condition is exact. The
remaining membership condition (values in the open hull set) is certified on
a fixed low-discrepancy sample set that is reused across iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import qmc

from .algebra import StateError, StateTriple, split_fields
from .grid import GridSpec
from .geometry import (
    SphereQuadrature,
    certify_many,
    hull_dim,
    pair_coords,
    segment_direction,
    sphere_quadrature,
)
from .waves import (
    WaveError,
    WaveSum,
    WaveTerm,
    _grid_in_box,
    ball_samples,
    ball_volume,
    greedy_balls,
    localized_wave,
)


class EngineError(RuntimeError):
    """A step could not be certified; ``state`` holds the last good state."""

    def __init__(self, message: str, state: "ConstructionState | None" = None):
        super().__init__(message)
        self.state = state


class SelectionError(EngineError):
    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


# ------------------------------------------------------------ domain


SHAPES = ("ball", "box", "ball_interval")


@dataclass(frozen=True)
class DomainSpec:
    """Bounded open set in space-time ``R^n x R`` (time is the last coordinate).

    ``ball``: ``|y - center| < radius``. ``box``: ``|y_i - center_i| < half_widths_i``.
    ``ball_interval``: ``|x - center_x| < radius`` and ``|t - center_t| < half_length``.
    """

    shape: str
    n: int
    center: np.ndarray
    radius: float = 1.0
    half_widths: np.ndarray | None = None
    half_length: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown domain shape {self.shape!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        c = np.asarray(self.center, dtype=float).reshape(self.n + 1)
        object.__setattr__(self, "center", c)
        if self.shape == "box":
            hw = np.asarray(self.half_widths, dtype=float).reshape(self.n + 1)
            if np.any(hw <= 0):
                raise ValueError("box half widths must be positive")
            object.__setattr__(self, "half_widths", hw)
        if self.radius <= 0 or self.half_length <= 0:
            raise ValueError("domain extents must be positive")

    @classmethod
    def unit_ball(cls, n: int) -> "DomainSpec":
        return cls("ball", n, np.zeros(n + 1), 1.0)

    @property
    def dim(self) -> int:
        return self.n + 1

    def volume(self) -> float:
        if self.shape == "ball":
            return ball_volume(self.dim, self.radius)
        if self.shape == "box":
            return float(np.prod(2.0 * self.half_widths))
        return ball_volume(self.n, self.radius) * 2.0 * self.half_length

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "ball":
            h = np.full(self.dim, self.radius)
        elif self.shape == "box":
            h = self.half_widths
        else:
            h = np.append(np.full(self.n, self.radius), self.half_length)
        return self.center - h, self.center + h

    def contains(self, y: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(y) - self.center
        if self.shape == "ball":
            return np.einsum("pi,pi->p", d, d) < self.radius**2
        if self.shape == "box":
            return np.all(np.abs(d) < self.half_widths, axis=1)
        return (np.einsum("pi,pi->p", d[:, :-1], d[:, :-1]) < self.radius**2) & (np.abs(d[:, -1]) < self.half_length)

    def contains_ball(self, c: np.ndarray, r: float) -> np.ndarray:
        """Whether the closed balls ``B_r(c)`` lie in the closure of the domain."""
        d = np.atleast_2d(c) - self.center
        if self.shape == "ball":
            return np.linalg.norm(d, axis=1) + r <= self.radius
        if self.shape == "box":
            return np.all(np.abs(d) + r <= self.half_widths, axis=1)
        return (np.linalg.norm(d[:, :-1], axis=1) + r <= self.radius) & (np.abs(d[:, -1]) + r <= self.half_length)

    def boundary_distance(self, y: np.ndarray) -> np.ndarray:
        """Signed distance to the boundary (positive inside)."""
        d = np.atleast_2d(y) - self.center
        if self.shape == "ball":
            return self.radius - np.linalg.norm(d, axis=1)
        if self.shape == "box":
            return np.min(self.half_widths - np.abs(d), axis=1)
        return np.minimum(self.radius - np.linalg.norm(d[:, :-1], axis=1), self.half_length - np.abs(d[:, -1]))

    def samples(self, count: int, seed: int = 0) -> np.ndarray:
        """Scrambled Sobol points of the bounding box that fall inside the domain."""
        lo, hi = self.bounding_box()
        m = int(2 ** math.ceil(math.log2(max(count, 2))))
        pts = lo + (hi - lo) * qmc.Sobol(self.dim, scramble=True, seed=seed).random(m)
        return pts[self.contains(pts)]


# ------------------------------------------------------------ state


@dataclass(frozen=True)
class StepRecord:
    """Bookkeeping for one accepted generation."""

    balls: int
    radius: float
    amplitude_min: float
    frequency_max: float
    samples_certified: int
    energy_before: float
    energy_after: float
    mass: float
    gap_integral: float


@dataclass(frozen=True)
class ConstructionState:
    domain: DomainSpec
    generations: tuple[WaveSum, ...] = ()
    certified: tuple[StepRecord, ...] = ()

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def terms(self) -> tuple[WaveTerm, ...]:
        return tuple(t for g in self.generations for t in g.terms)

    def evaluate(self, y: np.ndarray, generations: slice | None = None) -> np.ndarray:
        y = np.atleast_2d(y)
        m = self.domain.dim
        out = np.zeros((y.shape[0], m, m))
        gens = self.generations if generations is None else self.generations[generations]
        for g in gens:
            out += g.evaluate(y)
        return out

    def fields(self, y: np.ndarray):
        return split_fields(self.evaluate(y))

    def at(self, y: np.ndarray) -> StateTriple:
        v, u, q = self.fields(np.atleast_2d(y))
        return StateTriple(v[0], 0.5 * (u[0] + u[0].T), q[0])

    def with_generation(self, g: WaveSum, record: StepRecord) -> "ConstructionState":
        return ConstructionState(self.domain, self.generations + (g,), self.certified + (record,))

    def max_wavenumber(self) -> float:
        return max((g.max_wavenumber() for g in self.generations), default=0.0)


def state_coords(state: ConstructionState, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v, u, q = state.fields(y)
    return pair_coords(v, u), q


# ------------------------------------------------------------ configuration


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the construction loop."""

    iterations: int = 4
    r_max: tuple[float, ...] = (1.0,)
    frequency: float = 8.0
    frequency_cap: float = 32.0
    amplitudes: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    margin: float = 1e-3
    quadrature_degree: int = 31
    cert_samples: int = 4096
    ball_samples: int = 256
    energy_samples: int = 2**15
    packing: str = "single"
    max_wavenumber: float = math.inf
    r_min: float = 0.05
    grid_points: int = 48
    seed: int = 0

    def r_max_at(self, k: int) -> float:
        return self.r_max[min(k - 1, len(self.r_max) - 1)]


@dataclass
class Context:
    """Sample sets and quadrature shared by every step of a run."""

    domain: DomainSpec
    config: EngineConfig
    quad: SphereQuadrature = field(init=False)
    cert_points: np.ndarray = field(init=False)
    energy_points: np.ndarray = field(init=False)

    def __post_init__(self):
        cfg = self.config
        self.quad = sphere_quadrature(self.domain.n, cfg.quadrature_degree)
        self.cert_points = self.domain.samples(cfg.cert_samples, seed=cfg.seed + 1)
        self.energy_points = self.domain.samples(cfg.energy_samples, seed=cfg.seed + 2)


def energy(state: ConstructionState, pts: np.ndarray) -> float:
    """Quasi-Monte Carlo estimate of ``||v||^2`` over the domain."""
    if len(pts) == 0:
        return 0.0
    v, _, _ = state.fields(pts)
    return float((v * v).sum(1).mean() * state.domain.volume())


def gap_integral(state: ConstructionState, pts: np.ndarray) -> float:
    """Estimate of ``int (1 - |v|^2)`` over the domain."""
    return state.domain.volume() - energy(state, pts)


# ------------------------------------------------------------ ball selection


@dataclass(frozen=True)
class BallSelection:
    centers: np.ndarray
    radii: np.ndarray
    ratio: float


def _ball_weights(state: ConstructionState, centers: np.ndarray) -> np.ndarray:
    v, _, _ = state.fields(centers)
    return np.clip(1.0 - (v * v).sum(1), 0.0, None)


def _cubic_selection(state, r_max, rhs, r_min, shrink=0.9):
    """Simple cubic lattice of equal balls, the largest radius meeting the bound."""
    dom = state.domain
    m = dom.dim
    lo, hi = dom.bounding_box()
    r = r_max * (1 - 1e-9)
    while r >= r_min:
        best = None
        for offset in (dom.center, lo + r):
            c = _grid_in_box(lo + ((offset - lo) % (2 * r)), hi, 2 * r * (1 + 1e-9))
            c = c[dom.contains_ball(c, r)]
            if len(c) == 0:
                continue
            lhs = 2.0 * _ball_weights(state, c).sum() * ball_volume(m, r)
            if best is None or lhs > best[0]:
                best = (lhs, c)
        if best is not None and best[0] >= rhs:
            return BallSelection(best[1], np.full(len(best[1]), r), best[0] / rhs if rhs > 0 else math.inf)
        r *= shrink
    return None


def _greedy_selection(state, r_max, rhs, r_min, resolution):
    dom = state.domain
    m = dom.dim
    lo, hi = dom.bounding_box()
    cand = np.vstack([dom.center, _grid_in_box(lo, hi, r_max / resolution)])
    room = dom.boundary_distance(cand)
    cand, room = cand[room > 0], room[room > 0]
    weight = _ball_weights(state, cand)
    index = {tuple(c): i for i, c in enumerate(cand)}

    def lhs(balls):
        return 2.0 * sum(weight[index[tuple(c)]] * ball_volume(m, r) for c, r in balls)

    balls = greedy_balls(
        cand, room, r_cap=r_max * (1 - 1e-9), r_min=r_min, weight=weight, done=lambda b: lhs(b) >= rhs
    )
    if not balls or lhs(balls) < rhs:
        return None, (lhs(balls) / rhs if rhs > 0 else 0.0)
    centers = np.array([c for c, _ in balls])
    return BallSelection(centers, np.array([r for _, r in balls]), lhs(balls) / rhs if rhs > 0 else math.inf), None


def ball_selection(
    state: ConstructionState,
    r_max: float,
    pts: np.ndarray,
    *,
    resolution: int = 8,
    r_min: float = 0.05,
) -> BallSelection:
    """Disjoint balls in the domain with ``2 sum (1-|v(x_j)|^2)|B_j| >= int (1-|v|^2)``.

    Two families are tried: simple cubic lattices of equal balls (radius
    shrinking from ``r_max``) and a greedy largest-weighted-ball packing on a
    candidate grid of spacing ``r_max / resolution``. The valid family with
    the larger smallest radius wins, which keeps wave frequencies low.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    rhs = gap_integral(state, pts)
    cubic = _cubic_selection(state, r_max, rhs, r_min)
    greedy, ratio = _greedy_selection(state, r_max, rhs, r_min, resolution)
    options = [o for o in (cubic, greedy) if o is not None]
    if not options:
        raise SelectionError(f"ball selection reached ratio {ratio:.3f} < 1", ratio)
    return max(options, key=lambda o: (o.radii.min(), -len(o.radii)))


# ------------------------------------------------------------ perturbation step


def _ball_points(ctx: Context, center: np.ndarray, r: float, seed: int) -> np.ndarray:
    local = center + r * ball_samples(ctx.domain.dim, ctx.config.ball_samples, seed)
    d = ctx.cert_points - center
    shared = ctx.cert_points[np.einsum("pi,pi->p", d, d) < r * r]
    return np.vstack([local, shared])


def _try_ball(state, ctx: Context, center, r, frequencies, amplitudes, seed):
    """Find the largest amplitude and smallest frequency with certified samples."""
    cfg = ctx.config
    m = ctx.domain.dim
    z0 = state.at(center)
    try:
        a = segment_direction(z0, ctx.quad).state()
    except StateError:
        return None
    if not np.any(a.v):
        return None
    pts = _ball_points(ctx, center, r, seed)
    U0 = state.evaluate(pts)
    for s in amplitudes:
        for N in frequencies:
            try:
                lw = localized_wave(a, 1.0, frequency=N, packing=cfg.packing)
            except (StateError, WaveError):
                return None
            terms = tuple(t.scaled(s).moved(center, r) for t in lw.waves.terms)
            w = WaveSum(terms, m)
            if w.max_wavenumber() > cfg.max_wavenumber:
                break
            v, u, q = split_fields(U0 + w.evaluate(pts))
            if certify_many(pair_coords(v, u), q, cfg.margin, ctx.quad).all():
                return terms, s, N, len(pts)
    return None


def perturbation_step(
    state: ConstructionState,
    r_max: float,
    ctx: Context,
    *,
    frequency: float | None = None,
    amplitude_cap: float | None = None,
    step_seed: int = 0,
) -> ConstructionState:
    """Add one certified generation of localized waves.

    ``amplitude_cap`` restricts the amplitude ladder to values at or below it.
    """
    cfg = ctx.config
    amps_allowed = tuple(a for a in cfg.amplitudes if amplitude_cap is None or a <= amplitude_cap * (1 + 1e-12))
    if not amps_allowed:
        raise EngineError(f"no amplitude at or below {amplitude_cap:g}", state)
    N0 = cfg.frequency if frequency is None else frequency
    freqs = []
    N = N0
    while N <= cfg.frequency_cap * (1 + 1e-12):
        freqs.append(N)
        N *= 2.0
    if not freqs:
        raise EngineError(f"frequency {N0:g} exceeds the cap {cfg.frequency_cap:g}", state)
    sel = ball_selection(state, r_max, ctx.energy_points, r_min=cfg.r_min)
    terms: list[WaveTerm] = []
    amps, used_n, certified = [], [], 0
    for j, (c, r0) in enumerate(zip(sel.centers, sel.radii)):
        r = r0
        found = None
        while found is None and r >= r0 * 0.25:
            found = _try_ball(state, ctx, c, r, freqs, amps_allowed, seed=cfg.seed + 1000 * step_seed + j)
            if found is None:
                r *= 0.5
        if found is None:
            continue
        t, s, N, cnt = found
        terms.extend(t)
        amps.append(s)
        used_n.append(N)
        certified += cnt
    if not terms:
        raise EngineError("no ball admits a certified segment", state)
    gen = WaveSum(tuple(terms), ctx.domain.dim)
    e0 = energy(state, ctx.energy_points)
    pts = ctx.energy_points
    wv = gen.evaluate(pts)[:, :-1, -1]
    mass = float(np.linalg.norm(wv, axis=1).mean() * ctx.domain.volume())
    record = StepRecord(
        balls=len(amps),
        radius=float(sel.radii.min()),
        amplitude_min=float(min(amps)),
        frequency_max=float(max(used_n)),
        samples_certified=int(certified),
        energy_before=e0,
        energy_after=float("nan"),
        mass=mass,
        gap_integral=ctx.domain.volume() - e0,
    )
    new = state.with_generation(gen, record)
    e1 = energy(new, pts)
    record = StepRecord(**{**record.__dict__, "energy_after": e1})
    new = ConstructionState(new.domain, new.generations, state.certified + (record,))
    if not e1 > e0:
        raise EngineError(f"energy did not increase ({e0:.6g} -> {e1:.6g})", state)
    return new


def certify_state(state: ConstructionState, ctx: Context) -> np.ndarray:
    """Certification mask over the shared sample set."""
    coords, q = state_coords(state, ctx.cert_points)
    return certify_many(coords, q, ctx.config.margin, ctx.quad)


# ------------------------------------------------------------ constants


def certificate_constant(n: int) -> float:
    """``C = 1 / (4N)`` with N the dimension of ``R^n x S_0^n``."""
    return 1.0 / (4.0 * hull_dim(n))


def alpha_density(alpha_wave: float, m: int) -> float:
    """Mass per unit volume and unit amplitude: ``alpha_wave / |B_1|``."""
    return alpha_wave / ball_volume(m)


def beta_impl(n: int, alpha_wave: float, volume: float) -> float:
    C = certificate_constant(n)
    a = alpha_density(alpha_wave, n + 1)
    return C * C * a * a / (4.0 * volume)


# ------------------------------------------------------------ mollifier


def _bump(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


class RadialKernel:
    """Normalized radial bump ``c exp(-1/(1-|y|^2))`` on ``B_1`` in R^m, with its Fourier transform."""

    def __init__(self, m: int, samples: int = 4001):
        self.m = m
        r = np.linspace(0.0, 1.0, samples)
        self._r = r
        self._f = _bump(r)
        shell = 2.0 * math.pi ** (m / 2) / math.gamma(m / 2)
        self.norm = 1.0 / np.trapezoid(self._f * shell * r ** (m - 1), r)
        kk = np.linspace(0.0, 200.0, 4001)
        self._k = kk
        self._ft = np.array([self._hankel(k) for k in kk])

    def _hankel(self, k: float) -> float:
        m, r, f = self.m, self._r, self._f
        if k == 0.0:
            kern = np.ones_like(r) * (2.0 * math.pi ** (m / 2) / math.gamma(m / 2)) * r ** (m - 1)
        else:
            nu = m / 2 - 1
            kern = (2.0 * math.pi) ** (m / 2) * special.jv(nu, k * r) * r ** (m / 2) / k**nu
        return float(np.trapezoid(f * kern, r) * self.norm)

    def __call__(self, y: np.ndarray, eta: float) -> np.ndarray:
        """Kernel ``rho_eta(y) = eta^-m rho(y / eta)``."""
        r = np.linalg.norm(np.atleast_2d(y), axis=1) / eta
        return self.norm * _bump(r) / eta**self.m

    def fourier(self, k: np.ndarray, eta: float) -> np.ndarray:
        """Fourier transform ``hat rho(eta k)`` (1 at k = 0); 0 beyond the table."""
        x = np.asarray(k) * eta
        return np.interp(x, self._k, self._ft, right=0.0)


@dataclass(frozen=True)
class MollifierSchedule:
    etas: tuple[float, ...] = ()

    def check(self) -> None:
        for k, eta in enumerate(self.etas, start=1):
            if not 0 < eta < 2.0**-k:
                raise EngineError(f"eta_{k} = {eta:g} violates 0 < eta_k < 2^-{k}")

    def extended(self, eta: float) -> "MollifierSchedule":
        return MollifierSchedule(self.etas + (eta,))


@dataclass(frozen=True)
class MollifierReport:
    k: int
    eta: float
    osc: float
    osc_ok: bool
    weak: tuple[float, ...]
    weak_ok: bool

    @property
    def ok(self) -> bool:
        return self.osc_ok and self.weak_ok


def state_vector_field(state: ConstructionState, pts: np.ndarray, generations: slice | None = None) -> np.ndarray:
    """Flat ``(v, u, q)`` vectors at ``pts``; the Euclidean norm is the state norm."""
    v, u, q = split_fields(state.evaluate(pts, generations))
    return np.concatenate([v, u.reshape(len(pts), -1), q[:, None]], axis=1)


def _mollify(field_: np.ndarray, grid: GridSpec, kernel: RadialKernel, eta: float) -> np.ndarray:
    ks = np.meshgrid(*grid.wavenumbers(), indexing="ij", sparse=True)
    kmag = np.sqrt(sum(k * k for k in ks))
    mult = kernel.fourier(kmag, eta)
    f = field_.reshape(grid.shape + (-1,))
    axes = tuple(range(len(grid.shape)))
    spec = np.fft.fftn(f, axes=axes) * mult[..., None]
    return np.real(np.fft.ifftn(spec, axes=axes)).reshape(field_.shape)


def _l2(field_: np.ndarray, mask: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt((field_[mask] ** 2).sum() * np.prod(grid.h)))


def mollifier_check(
    state_next: ConstructionState,
    state_k: ConstructionState,
    schedule: MollifierSchedule,
    grid: GridSpec,
    kernel: RadialKernel | None = None,
) -> MollifierReport:
    """Check ``||z_k - z_k * rho_{eta_k}|| < 2^-k`` and ``||(z_{k+1} - z_k) * rho_{eta_j}|| < 2^-k``.

    Convolutions use the kernel's Fourier transform on a zero-padded periodic
    grid, so ``eta`` may be smaller than the spacing as long as the grid
    resolves the waves of the state.
    """
    schedule.check()
    k = len(schedule.etas)
    if k == 0:
        raise ValueError("schedule needs eta_k for the current iteration")
    if not grid.resolves(state_next.max_wavenumber(), 4.0):
        raise EngineError("grid too coarse for the state frequencies")
    kernel = kernel or RadialKernel(state_k.domain.dim)
    pts = grid.points()
    mask = state_k.domain.contains(pts)
    zk = state_vector_field(state_k, pts)
    osc = _l2(zk - _mollify(zk, grid, kernel, schedule.etas[-1]), mask, grid)
    kgen = len(state_k.generations)
    diff = state_vector_field(state_next, pts, slice(kgen, None))
    weak = tuple(_l2(_mollify(diff, grid, kernel, eta), mask, grid) for eta in schedule.etas)
    bound = 2.0**-k
    return MollifierReport(k, schedule.etas[-1], osc, osc < bound, weak, all(w < bound for w in weak))


def mollifier_grid(domain: DomainSpec, points: int) -> GridSpec:
    """Grid over the domain padded by 1/2 per side, enough for kernels with eta < 1/2."""
    lo, hi = domain.bounding_box()
    return GridSpec.from_box(lo - 0.5, hi + 0.5, points)


def choose_eta(state: ConstructionState, k: int, grid: GridSpec, kernel: RadialKernel, eta_prev: float | None) -> float:
    """Largest ``eta = 0.9 * 2^-k / 2^j`` (capped by the previous one) with the oscillation bound."""
    eta = 0.9 * 2.0**-k
    if eta_prev is not None:
        eta = min(eta, eta_prev)
    pts = grid.points()
    mask = state.domain.contains(pts)
    z = state_vector_field(state, pts)
    for _ in range(40):
        if _l2(z - _mollify(z, grid, kernel, eta), mask, grid) < 2.0**-k:
            return eta
        eta *= 0.5
    raise EngineError(f"no eta resolves the oscillation bound at k={k}")


# ------------------------------------------------------------ loop


@dataclass(frozen=True)
class IterationRecord:
    k: int
    state: ConstructionState
    eta: float
    mollifier: MollifierReport
    frequency: float


def run(domain: DomainSpec, config: EngineConfig, on_iteration=None) -> tuple[ConstructionState, list[IterationRecord]]:
    """Convex-integration loop from the zero state.

    Step k picks ``eta_k`` for the current state, adds a generation and
    checks both mollifier bounds. A failed step is retried at doubled
    frequency up to the cap, then with the next lower amplitude ceiling. ``on_iteration`` receives each accepted record.
    """
    ctx = Context(domain, config)
    state = ConstructionState(domain)
    grid = mollifier_grid(domain, config.grid_points)
    kernel = RadialKernel(domain.dim)
    schedule = MollifierSchedule()
    records: list[IterationRecord] = []
    freq = config.frequency
    for k in range(1, config.iterations + 1):
        eta = choose_eta(state, k, grid, kernel, schedule.etas[-1] if schedule.etas else None)
        sched_k = schedule.extended(eta)
        new, report = None, None
        f = freq
        last_err: Exception | None = None
        for cap in config.amplitudes:
            f = freq
            while f <= config.frequency_cap * (1 + 1e-12):
                try:
                    cand = perturbation_step(
                        state, config.r_max_at(k), ctx, frequency=f, amplitude_cap=cap, step_seed=k
                    )
                except SelectionError:
                    raise
                except EngineError as err:
                    last_err = err
                    f *= 2.0
                    continue
                rep = mollifier_check(cand, state, sched_k, grid, kernel)
                if rep.ok:
                    new, report = cand, rep
                    break
                last_err = EngineError(
                    f"mollifier bounds failed at k={k}: osc={rep.osc:.3g} weak={max(rep.weak):.3g}"
                )
                f *= 2.0
            if new is not None:
                break
        if new is None:
            raise EngineError(f"iteration {k} could not be certified: {last_err}", state)
        state, schedule = new, sched_k
        rec = IterationRecord(k, state, eta, report, f)
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec)
    return state, records
