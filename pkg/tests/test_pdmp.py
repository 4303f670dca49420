import csv
import math

import numpy as np
import pytest

from pdrice.errors import InsufficientData
from pdrice.flow import Constant
from pdrice.pdmp import (
    Deterministic,
    Exponential,
    OnSurfaceJumps,
    ShotNoise,
    SoftIdleNetwork,
    StressReleaseNetwork,
    Trajectory,
    model_from_dict,
    replication_rng,
    sample_path,
    simulate,
    state_at,
    stationarity_diagnostic,
    thinning_majorant,
)


def test_shot_noise_jump_rate_is_poisson_rate():
    tr = simulate(ShotNoise(1, 1.0), 1e4, seed=(3, 0))
    se = math.sqrt(tr.n_jumps) / tr.horizon
    assert abs(tr.jump_rate - 1.0) < 3 * se


def test_stress_release_rate_balance():
    # loading rho must be balanced by mean release E[xi] * jump rate
    tr = simulate(StressReleaseNetwork([1.0], 1.0, Deterministic(1.0)), 2e4, seed=(5, 0))
    assert tr.jump_rate == pytest.approx(1.0, abs=0.01)


def test_tiny_horizon_has_no_jumps():
    tr = simulate(ShotNoise(1, 1.0), 1e-12, burn_in=0.0, seed=1)
    assert tr.n_jumps == 0
    assert len(tr.segments()[0]) == 1


def test_state_at_conventions():
    tr = Trajectory.from_jumps(Constant([1.0]), [0.0], [1.0, 2.5], 4.0, increments=[[-2.0], [0.5]])
    assert state_at(tr, 1.0)[0] == pytest.approx(-1.0)  # right-continuous at the jump
    assert state_at(tr, 0.4)[0] == pytest.approx(0.4)
    assert state_at(tr, 2.0)[0] == pytest.approx(0.0)
    shot = simulate(ShotNoise(1, 1.0), 50.0, seed=2)
    t0, t1, x0 = shot.segments()
    k = int(np.argmax(t1 - t0))
    mid = 0.5 * (t0[k] + t1[k])
    assert state_at(shot, mid)[0] == pytest.approx(x0[k, 0] * math.exp(-(mid - t0[k])), rel=1e-12)


def test_thinning_majorant_examples():
    assert thinning_majorant(StressReleaseNetwork([1.0], 1.0), [0.0], 1.0) == pytest.approx(math.e)
    assert thinning_majorant(StressReleaseNetwork([-1.0], 1.0), [0.0], 1.0) == pytest.approx(1.0)
    two = StressReleaseNetwork([1.0, 0.0], [1.0, 1.0])
    assert thinning_majorant(two, [0.0, 0.0], 0.5) == pytest.approx(math.exp(0.5) + 1.0)


def test_simulated_paths_are_consistent():
    models = [
        ShotNoise(2, [1.0, 0.5]),
        StressReleaseNetwork([1.0, 0.5], [1.0, 1.0], transfer=[[-1.0, 0.2], [0.3, -1.0]]),
        SoftIdleNetwork([1.0, 1.0], [0.5, 0.5], 0.8, [0.5, 0.5], routing=[[0.0, 0.3], [0.0, 0.0]]),
    ]
    for m in models:
        tr = simulate(m, 200.0, seed=(9, 1))
        assert tr.n_jumps > 20
        tr.check_structure()


def test_soft_idle_routing_increments():
    tr = simulate(SoftIdleNetwork([1.0, 1.0], [0.5, 0.5], 1.0, [1.0, 0.0], routing=[[0.0, 0.3], [0.0, 0.0]]),
                  100.0, seed=4)
    inc = tr.x_after - tr.x_before
    assert np.allclose(inc[:, 1], 0.3 * inc[:, 0])


def test_on_surface_jumps_touch_the_level():
    tr = simulate(OnSurfaceJumps(1.0, level=1.0), 500.0, seed=4)
    on_after = np.isclose(tr.x_after[:, 0], 1.0)
    on_before = np.isclose(tr.x_before[:, 0], 1.0, atol=1e-9)
    assert on_after.any() and on_before.any()


def test_reproducible_and_independent_streams():
    a = simulate(ShotNoise(1, 1.0), 100.0, seed=(42, 3))
    b = simulate(ShotNoise(1, 1.0), 100.0, seed=(42, 3))
    c = simulate(ShotNoise(1, 1.0), 100.0, seed=(42, 4))
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.x_after, b.x_after)
    assert not np.array_equal(a.jump_times[:5], c.jump_times[:5])
    assert replication_rng(1, 0).random() != replication_rng(1, 1).random()


def test_rk4_and_closed_form_paths_agree():
    m = StressReleaseNetwork([1.0], 1.0)
    a = simulate(m, 100.0, seed=8)
    b = simulate(m, 100.0, seed=8, method="rk4")
    assert a.n_jumps == b.n_jumps
    assert np.allclose(a.x_after, b.x_after, atol=1e-9)


def test_stationarity_of_shot_noise():
    tr = simulate(ShotNoise(1, 1.0), 1e5, seed=(12, 0))
    rep = stationarity_diagnostic(tr)
    assert not rep.flagged
    assert rep.half_moments[0][0][0] == pytest.approx(1.0, abs=0.05)
    assert rep.half_moments[1][0][0] == pytest.approx(1.0, abs=0.05)


def test_drifting_path_is_flagged():
    tr = Trajectory(Constant([1.0]), [0.0], [], np.zeros((0, 1)), np.zeros((0, 1)), 100.0)
    rep = stationarity_diagnostic(tr)
    assert rep.flagged and rep.insufficient_data


def test_short_path_reports_insufficient_data():
    tr = simulate(ShotNoise(1, 0.01), 10.0, burn_in=0.0, seed=1)
    assert stationarity_diagnostic(tr).insufficient_data
    with pytest.raises(InsufficientData):
        stationarity_diagnostic(tr, dt=1.0)


def test_model_round_trip():
    for m in (ShotNoise(2, [1.0, 2.0], Exponential(2.0)), StressReleaseNetwork([1.0], 1.0, Deterministic(1.0)),
              SoftIdleNetwork([1.0, 2.0], [0.5, 0.5], 0.8, [0.5, 0.5]), OnSurfaceJumps(2.0)):
        m2 = model_from_dict(m.to_dict())
        a = simulate(m, 20.0, seed=3)
        b = simulate(m2, 20.0, seed=3)
        assert np.array_equal(a.x_after, b.x_after)


def test_sample_path_and_csv(tmp_path, shot_1d_path):
    t, x = sample_path(shot_1d_path, 0.5)
    assert t.size == 4000 and np.all(x > 0)
    tr = shot_1d_path.truncated(10.0)
    tr.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t", "x1", "event_type"]
    assert rows[1][-1] == "start" and rows[-1][-1] == "end"
    assert len(rows) == 3 + 2 * tr.n_jumps
