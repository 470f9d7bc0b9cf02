import numpy as np
import pytest

from wildeuler.algebra import StateTriple, euler_embed, to_matrix
from wildeuler.diagnostics import (
    ResolutionError,
    SampledField,
    auto_grid,
    diagnose,
    diagnostic_grid,
    divergence_residual,
    energy_profile,
    force_field,
    hminus1_norm,
    k_distance_stats,
    l2_norm,
    patch_refinement,
    pressure_consistency,
    residual_force,
    sample_grid,
    support_check,
)
from wildeuler.engine import ConstructionState, Context, DomainSpec, EngineConfig, energy, perturbation_step
from wildeuler.geometry import k_point
from wildeuler.grid import GridSpec
from wildeuler.waves import WaveSum, WaveTerm

CANON = np.array([[0.0, 0, 0], [0, 0.0, 0.5], [0, 0.5, 0]])


@pytest.fixture(scope="module")
def one_step():
    dom = DomainSpec.unit_ball(2)
    return perturbation_step(ConstructionState(dom), 1.0, Context(dom, EngineConfig()), step_seed=1)


def canonical_state(N=8.0):
    dom = DomainSpec.unit_ball(2)
    return ConstructionState(dom, (WaveSum((WaveTerm(CANON, N, np.eye(3), np.zeros(3)),), 3),))


class SteadyShear:
    """Exact steady Euler flow v = (sin(2 x_2), 0), p = 0 embedded as a state, no support."""

    def __init__(self):
        self.domain = DomainSpec("box", 2, np.zeros(3), half_widths=np.full(3, 10.0))

    def evaluate(self, y):
        y = np.atleast_2d(y)
        return np.stack([to_matrix(euler_embed([np.sin(2 * p[1]), 0.0], 0.0)) for p in y])

    def max_wavenumber(self):
        return 2.0


def test_zero_state_samples():
    st = ConstructionState(DomainSpec.unit_ball(2))
    g = diagnostic_grid(st.domain, 16)
    s = sample_grid(st, g)
    assert np.all(s.U == 0.0)
    assert support_check(st, s)
    assert np.all(energy_profile(st, [-0.5, 0.0, 0.5], GridSpec.from_box([-1, -1], [1, 1], 16)) == 0.0)
    assert pressure_consistency(st, g, s) == 0.0


def test_canonical_wave_on_inner_ball():
    st = canonical_state()
    g = GridSpec.from_box([-0.25] * 3, [0.25] * 3, 9)
    s = sample_grid(st, g)
    y = g.points()
    expect = np.sin(8.0 * y[:, 0])[:, None, None] * CANON
    np.testing.assert_allclose(s.U.reshape(-1, 3, 3), expect, atol=1e-14)


def test_support_zero_outside(one_step):
    g = diagnostic_grid(one_step.domain, 32)
    assert support_check(one_step, sample_grid(one_step, g))


def test_divergence_of_constants():
    U = np.zeros((10, 10, 10, 3, 3))
    assert divergence_residual(U, 0.1) == 0.0
    U[...] = CANON
    assert divergence_residual(U, 0.1) == 0.0


def test_one_wave_refinement(one_step):
    r1, r2 = patch_refinement(one_step)
    assert r2 / r1 <= 0.29
    r1, r2 = patch_refinement(canonical_state())
    assert r2 / r1 <= 0.29


def test_k_distance_stats():
    g = GridSpec.from_box([0, 0, 0], [1, 1, 1], 8)
    zero = SampledField(g, np.zeros(g.shape + (3, 3)))
    mask = np.ones(g.size, bool)
    mean, mx = k_distance_stats(zero, mask)
    assert mean == pytest.approx(np.sqrt(1.5), abs=1e-10)
    v, u = k_point(np.array([1.0, 0.0]))
    on_k = SampledField(g, np.broadcast_to(to_matrix(StateTriple(v, u, 0.0)), g.shape + (3, 3)).copy())
    assert k_distance_stats(on_k, mask)[1] <= 1e-8


def test_hminus1_oracle():
    g = GridSpec(np.zeros(3), 2 * np.pi / 64, (64, 64, 64))
    k = np.array([1.0, 2.0, 0.0])
    f = np.sin(g.points() @ k).reshape(g.shape)
    assert hminus1_norm(f, g) == pytest.approx(l2_norm(f, g) / np.linalg.norm(k), rel=0.01)
    # vector fields add in quadrature
    F = np.stack([f, f], axis=-1)
    assert hminus1_norm(F, g) == pytest.approx(np.sqrt(2) * hminus1_norm(f, g), rel=1e-12)


def test_exact_euler_flow_has_no_force():
    st = SteadyShear()
    g = GridSpec.from_box([-1, -1, -1], [1, 1, 1], 16)
    rf = residual_force(st, g)
    assert np.abs(rf.f).max() <= 1e-14
    assert pressure_consistency(st, g) <= 1e-12


def test_residual_force_requires_resolution(one_step):
    coarse = diagnostic_grid(one_step.domain, 12)
    with pytest.raises(ResolutionError):
        residual_force(one_step, coarse)
    fine = auto_grid(one_step)
    rf = residual_force(one_step, fine)
    np.testing.assert_array_equal(rf.f, force_field(sample_grid(one_step, fine)))
    assert np.isfinite(rf.hminus1) and rf.hminus1 > 0


def test_pressure_consistency_refines(one_step):
    # the steep cutoff ramp delays the O(h^2) regime; the observed order must still climb
    lo, hi = one_step.domain.bounding_box()
    r = [pressure_consistency(one_step, GridSpec.covering(lo, hi, P)) for P in (48, 95, 189)]
    assert r[0] > r[1] > r[2]
    assert r[1] / r[2] > r[0] / r[1] > 1.5


def test_energy_profile(one_step):
    spatial = GridSpec.from_box([-1, -1], [1, 1], 64)
    times = np.linspace(-1.2, 1.2, 49)
    e = energy_profile(one_step, times, spatial)
    assert np.all(e[np.abs(times) >= 1.0] == 0.0)
    assert np.all(e <= np.pi)  # |v| <= 1 on the unit disc
    total = np.trapezoid(e, times)
    qmc = energy(one_step, one_step.domain.samples(2**16, 5))
    assert total == pytest.approx(qmc, rel=0.05)


def test_diagnose_report(one_step):
    g = auto_grid(one_step)
    rep = diagnose(one_step, g, k=1, energy=0.1, certified=True, mollifier_ok=True, alpha_measured=0.5)
    assert rep.finite()
    assert rep.div_h2 <= rep.div_h
    assert rep.support_ok
    d = rep.as_dict()
    assert d["gap"] == pytest.approx(one_step.domain.volume() - 0.1)
