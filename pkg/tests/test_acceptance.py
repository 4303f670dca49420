"""Acceptance suite: one test per criterion, run at full scale on the bundled scenarios.

Every test records a single pass/fail line (shown in the terminal summary)
before asserting.
"""
import math

import numpy as np
import pytest
from scipy import stats

from pdrice.crossing import (
    coarea_check,
    detect_crossings,
    estimate_nu_c,
    jump_condition_diagnostic,
    kac_count,
    palm_jump_measure,
    ratio_estimate,
)
from pdrice.density import GammaShotNoise, bin_probabilities, fit_occupation
from pdrice.flow import Affine, Box, Constant, SoftIdle, StressDrift
from pdrice.harness.runner import run_scenario
from pdrice.pdmp import OnSurfaceJumps, simulate
from pdrice.rice import discrepancy_z, ratio_trend_test, rhs_1d, RiceResult
from pdrice.surface import GraphPatch, Hyperplane, Sphere, jacobian_identity_check

pytestmark = pytest.mark.slow


def _comparison(report, name):
    return next(c for c in report.data["comparisons"] if c["name"] == name)


@pytest.fixture(scope="module")
def shot_1d():
    return run_scenario("shotnoise_1d", identities=True, keep_data=True)


@pytest.fixture(scope="module")
def shot_2d():
    return run_scenario("shotnoise_2d_hyperplane")


@pytest.fixture(scope="module")
def stress_2d():
    return run_scenario("stressrelease_2d_warning", identities=True)


def test_criterion_01_shot_noise_level_one(shot_1d, acceptance_log):
    c = _comparison(shot_1d, "hyperplane(x[0]=1)")
    trajs = shot_1d.trajectories
    # occupation-histogram check of the Gamma(1,1) law that supplies the Rice value
    edges = np.linspace(0.0, 5.0, 11)
    per_rep = np.array([fit_occupation([tr], Box([0.0], [5.0]), bins=10).counts for tr in trajs])
    horizons = [tr.horizon for tr in trajs]
    est = [ratio_estimate(per_rep[:, i], horizons) for i in range(10)]
    p = bin_probabilities(GammaShotNoise([1.0], [1.0]), [edges])
    chi2 = float(sum(((v - q) / se) ** 2 for (v, se), q in zip(est, p)))
    p_occ = float(stats.chi2.sf(chi2, 10))
    ok = abs(c["z"]) < 3 and len(trajs) == 20 and all(tr.horizon == 5e4 for tr in trajs) and p_occ > 0.01
    acceptance_log(1, ok, f"nu_hat={c['nu_hat']['value']:.5f}+-{c['nu_hat']['std_error']:.5f} "
                          f"rice={c['rice']['value']:.5f} z={c['z']:+.2f}; occupation chi2 p={p_occ:.3f}")
    assert c["rice"]["value"] == pytest.approx(math.exp(-1), rel=1e-12)
    assert ok


def test_criterion_02_level_sweep(shot_1d, acceptance_log):
    trajs = shot_1d.trajectories
    field = trajs[0].field
    dens = GammaShotNoise([1.0], [1.0])
    levels = [0.5, 1.0, 2.0]
    zs, ratios, ses = [], [], []
    for u in levels:
        nu = estimate_nu_c([detect_crossings(tr, Hyperplane(1, 0, u)) for tr in trajs])
        rhs = rhs_1d(u, field, dens)
        assert rhs == pytest.approx(u * math.exp(-u), rel=1e-12)
        zs.append(discrepancy_z(nu.value, nu.std_error, RiceResult(rhs, 0.0, 0.0, "", "")))
        ratios.append(nu.value / rhs)
        ses.append(nu.std_error / rhs)
    _, _, p = ratio_trend_test(levels, ratios, ses)
    ok = all(abs(z) < 3 for z in zs) and p > 0.01
    acceptance_log(2, ok, "z=" + ",".join(f"{z:+.2f}" for z in zs) + f"; ratio trend p={p:.3f}")
    assert ok


def test_criterion_03_hyperplane_and_region(shot_2d, acceptance_log):
    full = _comparison(shot_2d, "hyperplane(x[0]=1)")
    inB = _comparison(shot_2d, "hyperplane(x[0]=1) in B")
    ok = abs(full["z"]) < 3 and abs(inB["z"]) < 3
    acceptance_log(3, ok, f"S: rice={full['rice']['value']:.5f} z={full['z']:+.2f}; "
                          f"B: rice={inB['rice']['value']:.5f} (e^-2={math.exp(-2):.5f}) z={inB['z']:+.2f}")
    assert full["rice"]["value"] == pytest.approx(math.exp(-1) * (1 - math.exp(-10)), rel=1e-8)
    assert inB["rice"]["value"] == pytest.approx(math.exp(-1) * (math.exp(-1) - math.exp(-10)), rel=1e-8)
    assert ok


def test_criterion_04_circle(acceptance_log):
    rep = run_scenario("shotnoise_2d_circle")
    c = rep.data["comparisons"][0]
    n = c["nu_hat"]["n_events"]
    ok = abs(c["z"]) < 3 and n >= 10_000
    acceptance_log(4, ok, f"{n} crossings, nu_hat={c['nu_hat']['value']:.5f} rice={c['rice']['value']:.5f} "
                          f"z={c['z']:+.2f}")
    assert ok


def test_criterion_05_palm(shot_2d, acceptance_log):
    palm = shot_2d.data["palm"]
    ok = palm["p_value"] > 0.01 and palm["n_bins"] >= 10
    acceptance_log(5, ok, f"chi2={palm['chi2']:.2f} on {palm['df']} df over {palm['n_bins']} bins, "
                          f"p={palm['p_value']:.3f}")
    assert ok


def test_criterion_06_tube(shot_1d, stress_2d, acceptance_log):
    entries = []
    for name, rep in (("shot 1-d", shot_1d), ("stress 2-d", stress_2d)):
        for e in rep.data["identities"]["tube"]["entries"]:
            entries.append((name, e))
    vs = sorted({e["v"] for _, e in entries})
    ok = vs == [0.05, 0.1] and all(abs(e["z"]) < 3 for _, e in entries) and len(entries) == 4
    acceptance_log(6, ok, "; ".join(f"{n} v={e['v']:g} z={e['z']:+.2f}" for n, e in entries))
    assert ok


JAC_SURFACES_2D = [
    Hyperplane(2, 0, 1.0, window=([0.0], [2.0])),
    Hyperplane(2, 1, -0.5, window=([-1.0], [1.0])),
    Sphere([0.0, 0.0], 1.0),
    GraphPatch(2, "affine", ([-1.0], [1.0]), coef=[0.5], intercept=0.2),
    GraphPatch(2, "cumulative", ([-3.0], [0.5]), beta=1.0, level=3.0),
]
JAC_FIELDS_2D = [
    Constant([1.0, 0.5]),
    StressDrift([1.0, 1.0]),
    Affine(-np.eye(2)),
    Affine([[0.0, -1.0], [1.0, 0.0]]),
    SoftIdle([1.0, 1.0], [0.5, 0.5]),
]


def test_criterion_07_deterministic_identities(shot_1d, acceptance_log):
    t = np.linspace(0.0, 1.0, 200_001)
    kac = kac_count(t, np.sin(2 * np.pi * t), 0.5, 1e-3)
    lhs, rhs = coarea_check("sine")
    camp = shot_1d.data["identities"]["campbell_unit"]
    rng = np.random.default_rng(2024)
    worst = 0.0
    pairs = [(s, f) for s in JAC_SURFACES_2D for f in JAC_FIELDS_2D]
    pairs += [(Sphere([0.0, 0.0, 0.0], 1.0), f) for f in
              (Constant([1.0, 0.0, 0.5]), Affine(-np.eye(3)), SoftIdle([1.0, 1.0, 1.0], [0.5, 0.5, 0.5]))]
    for s, f in pairs:
        lo, hi = s.param_window()
        for _ in range(100):
            w = lo + (hi - lo) * rng.uniform(0.02, 0.98, size=len(lo))
            a, b = jacobian_identity_check(s, f, w, float(rng.uniform(0.0, 0.2)))
            worst = max(worst, abs(a - b))
    ok = (abs(kac - 2.0) < 1e-3 and abs(lhs - 4.0) < 1e-2 and abs(rhs - 4.0) < 1e-2
          and camp["lhs"] == camp["rhs"] and worst < 1e-6)
    acceptance_log(7, ok, f"kac={kac:.6f} coarea=({lhs:.5f},{rhs:.5f}) campbell exact={camp['lhs'] == camp['rhs']} "
                          f"jacobian max diff={worst:.1e} over {len(pairs)} pairs x 100")
    assert ok


def test_criterion_08_stress_release_kde(stress_2d, acceptance_log):
    one = run_scenario("stressrelease_1d")
    c1 = one.data["comparisons"][0]
    c2 = stress_2d.data["comparisons"][0]
    ok = abs(c1["z"]) < 3 and abs(c2["z"]) < 3
    acceptance_log(8, ok, f"1-d at median u={one.data['surface']['level']:.4f}: z={c1['z']:+.2f}; "
                          f"2-d warning surface: nu_hat={c2['nu_hat']['value']:.4f} rice={c2['rice']['value']:.4f} "
                          f"z={c2['z']:+.2f}")
    assert ok


def test_criterion_09_soft_idle_network(acceptance_log):
    net = run_scenario("softidle_net_idle")
    comp = run_scenario("composite_idle")
    zs = [c["z"] for c in net.data["comparisons"]] + [c["z"] for c in comp.data["comparisons"]]
    trig = comp.data["triggering"]
    ok = all(abs(z) < 3 for z in zs) and trig["sum_is_one"] and len(zs) == 4
    acceptance_log(9, ok, "z=" + ",".join(f"{z:+.2f}" for z in zs)
                   + f"; triggering {trig['fractions']} sum exactly 1: {trig['sum_is_one']}")
    assert ok


def test_criterion_10_jump_condition(shot_1d, acceptance_log):
    jc = shot_1d.data["identities"]["jump_condition"]
    r2 = (jc["into_fit"]["r2"], jc["outof_fit"]["r2"])
    violator = simulate(OnSurfaceJumps(1.0), 5000.0, seed=(20240110, 0))
    bad = jump_condition_diagnostic(palm_jump_measure([violator]), Hyperplane(1, 0, 1.0), (0.1, 0.05, 0.025))
    ok = jc["passed"] and min(r2) > 0.95 and not bad.passed
    acceptance_log(10, ok, f"shot noise shell fits R^2=({r2[0]:.4f},{r2[1]:.4f}); violator masses "
                           f"into={bad.into[-1]:.3f} out={bad.outof[-1]:.3f} flagged={not bad.passed}")
    assert ok
