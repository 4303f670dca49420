import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg, stats

from pdrice.crossing import (
    campbell_check,
    detect_crossings,
    estimate_nu_c,
    kac_estimate,
    palm_jump_measure,
    return_time_bound,
)
from pdrice.density import GammaShotNoise, fit_occupation
from pdrice.flow import Affine, Box, Constant, SoftIdle, StressDrift, flow_map, hitting_time, integrate_flow
from pdrice.pdmp import ShotNoise, SoftIdleNetwork, StressReleaseNetwork, Trajectory, simulate
from pdrice.rice import conditional_palm, rhs_1d, rhs_general, rhs_hyperplane
from pdrice.surface import (
    GraphPatch,
    Hyperplane,
    PushedForward,
    QuadratureSpec,
    Sphere,
    jacobian_identity_check,
    parallel_surface,
    surface_integral,
)

PROP = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
FIELDS_2D = [
    Constant([1.0, 0.5]),
    StressDrift([1.0, 0.3]),
    Affine(-np.eye(2)),
    Affine([[-1.0, 0.4], [-0.2, -0.5]], [0.3, 0.1]),
    SoftIdle([1.0, 2.0], [0.5, 0.5]),
]
coord = st.floats(-2.0, 2.0)
unit = st.floats(0.0, 1.0)


@PROP
@given(st.sampled_from(FIELDS_2D), coord, coord, unit, unit)
def test_flow_semigroup_and_reversibility(field, a, b, s, t):
    x = np.array([a, b])
    both = integrate_flow(field, x, s + t, step=1e-3).endpoint
    two = integrate_flow(field, integrate_flow(field, x, s, step=1e-3).endpoint, t, step=1e-3).endpoint
    assert np.allclose(both, two, atol=1e-9)
    back = integrate_flow(field, integrate_flow(field, x, t, step=1e-3).endpoint, -t, step=1e-3).endpoint
    assert np.allclose(back, x, atol=1e-9)


@PROP
@given(st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4), coord, coord, st.floats(-1.0, 1.0))
def test_affine_flow_matches_matrix_exponential(entries, a, b, t):
    A = np.array(entries).reshape(2, 2)
    bvec = np.array([0.3, -0.2])
    x = np.array([a, b])
    # augmented generator handles the affine part
    M = np.zeros((3, 3))
    M[:2, :2] = A
    M[:2, 2] = bvec
    ref = (linalg.expm(M * t) @ np.append(x, 1.0))[:2]
    got = integrate_flow(Affine(A, bvec), x, t, step=1e-3).endpoint
    assert np.allclose(got, ref, atol=1e-10)


@PROP
@given(st.floats(0.1, 3.0), st.floats(0.0, 3.0))
def test_hitting_time_monotone_in_horizon(t_max, extra):
    f = Affine([[0.0, -1.0], [1.0, 0.0]])
    s = Hyperplane(2, 1, 0.5)
    short = hitting_time(f, [1.0, 0.0], s, t_max)
    long = hitting_time(f, [1.0, 0.0], s, t_max + extra)
    if short is not None:
        assert long == short


SURFACES = [
    Hyperplane(2, 0, 0.7, window=([-1.0], [2.0])),
    Hyperplane(2, 1, 0.4, window=([0.1], [1.5])),
    Sphere([0.3, -0.2], 1.2),
    GraphPatch(2, "affine", ([-1.0], [1.0]), coef=[0.5], intercept=0.2),
    GraphPatch(2, "cumulative", ([-3.0], [0.5]), beta=1.0, level=3.0),
]


@pytest.mark.parametrize("surface", SURFACES, ids=lambda s: s.describe())
def test_pushed_by_zero_keeps_area(surface):
    one = lambda x: np.ones(x.shape[0])
    q = QuadratureSpec(order=16, panels=4)
    base, err = surface_integral(surface, one, q, return_error=True)
    pushed = surface_integral(PushedForward(surface, SoftIdle([1.0, 1.0], [0.5, 0.5]), 0.0), one, q)
    # the pushed frame is differenced numerically, so allow its round-off on top of the quadrature error
    assert abs(pushed - base) <= err + 1e-9 * base


@pytest.mark.parametrize("surface", SURFACES, ids=lambda s: s.describe())
def test_doubling_order_within_error_estimate(surface):
    g = lambda x: np.exp(-0.3 * np.sum(x**2, axis=1)) * (1 + x[:, 0] ** 2)
    q = QuadratureSpec(order=8, panels=2)
    val, err = surface_integral(surface, g, q, return_error=True)
    assert abs(surface_integral(surface, g, q.doubled()) - val) <= err


@PROP
@given(st.sampled_from(SURFACES), st.sampled_from(FIELDS_2D), unit, st.floats(0.0, 0.2))
def test_jacobian_identity_random_probes(surface, field, frac, u):
    lo, hi = surface.param_window()
    w = lo + (0.05 + 0.9 * frac) * (hi - lo)
    lhs, rhs = jacobian_identity_check(surface, field, w, u)
    assert abs(lhs - rhs) <= 1e-6 * (1 + abs(rhs))


@pytest.mark.parametrize("surface", SURFACES[2:], ids=lambda s: s.describe())
def test_parallel_normals_continuous_in_u(surface):
    field = Affine([[-1.0, 0.4], [-0.2, -0.5]], [0.3, 0.1])
    lo, hi = surface.param_window()
    w = (0.5 * (lo + hi))[None, :]
    _, _, n0 = surface.frame(w)
    gaps = []
    for u in (1e-2, 1e-3, 1e-4):
        _, _, nu = parallel_surface(surface, field, u).frame(w)
        gaps.append(float(np.linalg.norm(nu - n0)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


MODELS = [
    ShotNoise(1, 1.0),
    ShotNoise(2, [1.0, 0.5]),
    StressReleaseNetwork([1.0], 1.0),
    StressReleaseNetwork([1.0, 0.5], [1.0, 1.0], transfer=[[-1.0, 0.2], [0.3, -1.0]]),
    SoftIdleNetwork([1.0, 1.0], [0.5, 0.5], 0.8, [0.5, 0.5], routing=[[0.0, 0.3], [0.0, 0.0]]),
]


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(MODELS), st.integers(0, 2**31), st.integers(0, 50))
def test_simulation_reproducible_and_well_formed(model, master, rep):
    a = simulate(model, 100.0, seed=(master, rep))
    b = simulate(model, 100.0, seed=(master, rep))
    for name in ("jump_times", "x_before", "x_after", "start_state"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    a.check_structure()


def test_poisson_interjump_times():
    tr = simulate(ShotNoise(1, 2.0), 5000.0, seed=(77, 0))
    gaps = np.diff(tr.jump_times)
    assert stats.kstest(gaps, stats.expon(scale=0.5).cdf).pvalue > 0.01


def test_thinning_reproduces_risk_function():
    tr = simulate(StressReleaseNetwork([1.0], 1.0), 2e4, seed=(78, 0))
    lo, hi = np.quantile(tr.x_before[:, 0], [0.05, 0.95])
    edges = np.linspace(lo, hi, 11)
    occ = fit_occupation([tr], Box([lo], [hi]), bins=10).counts
    jumps = np.histogram(tr.x_before[:, 0], bins=edges)[0]
    rate = jumps / occ
    se = np.sqrt(jumps) / occ
    # average of exp(x) over each bin, weighted uniformly (bins are narrow)
    mids = 0.5 * (edges[1:] + edges[:-1])
    width = np.diff(edges)
    psi = np.exp(mids) * np.sinh(width / 2) / (width / 2)
    assert np.all(np.abs(rate - psi) < 3 * se + 0.02 * psi)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.3, 2.5))
def test_crossing_count_invariant_under_step_refinement(seed, level):
    tr = simulate(StressReleaseNetwork([1.0, 0.5], [1.0, 1.0]), 100.0, seed=seed)
    s = Sphere([0.0, 0.0], level)
    a = detect_crossings(tr, s, step=1e-2, method="rk4")
    b = detect_crossings(tr, s, step=5e-3, method="rk4")
    assert a.n_events == b.n_events
    assert np.allclose(a.times, b.times, atol=1e-8)


def test_consecutive_crossings_respect_return_time():
    rot = Affine([[0.0, -1.0], [1.0, 0.0]])
    s = Sphere([2.0, 0.0], 1.0)
    bound = return_time_bound(s, rot)
    assert math.isfinite(bound)
    for r0 in (1.3, 2.0, 2.7):
        tr = Trajectory(rot, [r0, 0.0], [], np.zeros((0, 2)), np.zeros((0, 2)), 30.0)
        cs = detect_crossings(tr, s)
        assert cs.n_events >= 8
        assert np.min(np.diff(cs.times)) >= bound - 1e-6


def test_kac_converges_to_direct_count():
    # unit rotation observed through x1 = cos t; the level sits just below the turning point
    rot = Affine([[0.0, -1.0], [1.0, 0.0]])
    tr = Trajectory.from_jumps(rot, [1.0, 0.0], [7.0, 13.0], 20.0, landings=[[0.5, 0.0], [1.0, 0.0]])
    direct = estimate_nu_c(detect_crossings(tr, Hyperplane(2, 0, 0.999))).value
    errs = [abs(kac_estimate(tr, lambda x: x[..., 0], 0.999, d, dt=d / 10) - direct) for d in (1e-2, 1e-3, 1e-4)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(MODELS), st.integers(0, 1000))
def test_palm_mass_bounded_by_jump_rate(model, seed):
    tr = simulate(model, 50.0, seed=seed)
    palm = palm_jump_measure([tr])
    assert palm.mass <= palm.jump_rate


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(2, 64))
def test_campbell_unit_weight_exact(seed, n_bins):
    tr = simulate(ShotNoise(2, [1.0, 1.0]), 100.0, seed=seed)
    s = Sphere([0.0, 0.0], 1.0)
    sets = [detect_crossings(tr, s)]
    lhs, rhs = campbell_check(sets, s, lambda x: np.ones(x.shape[:-1]), n_bins=n_bins)
    assert lhs == rhs == estimate_nu_c(sets).value


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.5, 3.0), st.floats(0.5, 5.0), st.floats(0.5, 3.0))
def test_gamma_density_integrates_to_one(l1, e1, l2, e2):
    g1 = GammaShotNoise([l1], [e1])
    val = integrate.quad(lambda x: g1(np.array([x])), 0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    assert val == pytest.approx(1.0, abs=1e-8)
    g2 = GammaShotNoise([l1, l2], [e1, e2])
    # the product factorises, so the 2-d integral is the product of two 1-d integrals
    m2 = integrate.quad(lambda y: GammaShotNoise([l2], [e2])(np.array([y])), 0, np.inf, epsabs=1e-12, limit=200)[0]
    assert val * m2 == pytest.approx(1.0, abs=1e-8)
    assert g2(np.array([0.7, 1.3])) == pytest.approx(g1(np.array([0.7])) * GammaShotNoise([l2], [e2])(np.array([1.3])))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(10.0, 200.0))
def test_occupation_invariant_under_retiming(seed, burn):
    model = ShotNoise(1, 1.0)
    box = Box([0.0], [4.0])
    short = simulate(model, 300.0, burn_in=burn, seed=seed)
    long = simulate(model, 300.0 + burn, burn_in=0.0, seed=seed)
    head = long.truncated(burn)
    occ_long = fit_occupation([long], box, bins=8).counts
    occ_head = fit_occupation([head], box, bins=8).counts if head.n_jumps else np.zeros(8)
    assert np.allclose(fit_occupation([short], box, bins=8).counts, occ_long - occ_head, atol=1e-8)


SLICE_DENS = GammaShotNoise([1.0, 2.0], [1.0, 1.5])


@PROP
@given(st.floats(0.2, 3.0), st.sampled_from(SURFACES[:4]))
def test_rhs_orientation_invariant(u, surface):
    field = Affine(-np.eye(2))
    q = QuadratureSpec(order=16, panels=4)
    a = rhs_general(surface, field, SLICE_DENS, quad=q)
    b = rhs_general(surface.flipped(), field, SLICE_DENS, quad=q)
    assert a.value == b.value
    s = Hyperplane(2, 0, u, window=([0.0], [8.0]))
    assert rhs_general(s.flipped(), field, SLICE_DENS, quad=q).value == rhs_general(s, field, SLICE_DENS, quad=q).value


@PROP
@given(st.floats(0.05, 10.0))
def test_consistency_ladder(u):
    f = Affine([[-1.0]])
    g = GammaShotNoise([1.3], [0.8])
    a = rhs_1d(u, f, g)
    b = rhs_hyperplane(u, 0, f, g).value
    c = rhs_general(Hyperplane(1, 0, u), f, g).value
    assert a == b == c


@PROP
@given(st.floats(1.0, 8.0), st.floats(0.0, 4.0), st.floats(0.3, 2.0))
def test_monotone_truncation(a, extra, u):
    field = Affine(-np.eye(2))
    q = QuadratureSpec(order=32, panels=8)
    small = rhs_general(Hyperplane(2, 0, u, window=([0.0], [a])), field, SLICE_DENS, quad=q)
    big = rhs_general(Hyperplane(2, 0, u, window=([0.0], [a + extra])), field, SLICE_DENS, quad=q)
    assert big.value >= small.value - 1e-12
    # the tail bound is exactly what the doubled window adds
    lo, hi = -a / 2, 1.5 * a
    doubled = rhs_general(Hyperplane(2, 0, u, window=([lo], [hi])), field, SLICE_DENS,
                          quad=QuadratureSpec(order=32, panels=16), tail=False)
    assert doubled.value - small.value == pytest.approx(small.tail_bound, abs=1e-10)


@PROP
@given(st.floats(0.2, 3.0), st.integers(2, 12))
def test_conditional_palm_normalised(u, n_bins):
    q = conditional_palm(u, 0, Affine(-np.eye(2)), SLICE_DENS, [np.linspace(0.0, 20.0, n_bins + 1)], ([0.0], [20.0]))
    assert q.probs.sum() == pytest.approx(1.0, abs=1e-8)
    mass = integrate.quad(lambda y: q.pdf(np.array([[y]]))[0], 0.0, 20.0, epsabs=1e-12, limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
