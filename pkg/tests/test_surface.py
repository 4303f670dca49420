import math

import numpy as np
import pytest

from pdrice.errors import OutOfWindow
from pdrice.flow import Affine, Constant, SoftIdle, flow_map
from pdrice.surface import (
    GraphPatch,
    Hyperplane,
    PushedForward,
    QuadratureSpec,
    Sphere,
    jacobian_identity_check,
    parallel_surface,
    signed_value,
    surface_from_dict,
    surface_integral,
    transversality_margin,
    working_u0,
)


def cumulative(level=3.0, window=((-4.0,), (0.9,))):
    return GraphPatch(2, "cumulative", window, beta=1.0, level=level)


def test_signed_values():
    assert Hyperplane(2, 1, 2.0).signed_value(np.array([3.0, 3.0])) == pytest.approx(1.0)
    assert Sphere([0.0, 0.0], 1.0).signed_value(np.array([0.0, 2.0])) == pytest.approx(1.0)
    assert cumulative().signed_value(np.array([0.0, math.log(2)])) == pytest.approx(0.0, abs=1e-12)


def test_strict_signed_value_checks_window():
    s = Hyperplane(2, 0, 1.0, window=([0.0], [1.0]))
    with pytest.raises(OutOfWindow):
        signed_value(s, np.array([[1.0, 2.0]]), strict=True)


def test_normals():
    assert np.allclose(Hyperplane(2, 0, 0.0).normal(np.array([0.0, 5.0])), [1.0, 0.0])
    assert np.allclose(Sphere([0.0, 0.0], 1.0).normal(np.array([0.0, 1.0])), [0.0, 1.0])
    pushed = PushedForward(Hyperplane(2, 0, 0.0), Constant([0.0, 1.0]), 0.7)
    assert np.allclose(pushed.normal(np.array([[0.0, 0.7]])), [[1.0, 0.0]])


def test_graph_normal_is_gradient_direction():
    s = cumulative()
    x = s.point(np.array([[-0.5], [0.3]]))
    grad = np.exp(x)
    grad /= np.linalg.norm(grad, axis=1, keepdims=True)
    assert np.allclose(np.abs(np.sum(s.normal(x) * grad, axis=1)), 1.0, atol=1e-10)


def test_transversality_margins():
    assert transversality_margin(Hyperplane(2, 0, 3.0), Constant([1.0, 0.0])) == pytest.approx(1.0)
    assert transversality_margin(Sphere([0.0, 0.0], 1.0), Affine(-np.eye(2))) == pytest.approx(1.0)
    assert transversality_margin(Hyperplane(2, 0, 0.0), Constant([0.0, 1.0])) == 0.0


def test_parallel_surfaces():
    s = parallel_surface(Hyperplane(2, 0, 1.0), Constant([1.0, 0.0]), 0.5)
    assert s.signed_value(np.array([[1.5, 3.0]]))[0] == pytest.approx(0.0, abs=1e-12)
    p = parallel_surface(Hyperplane(1, 0, 1.0), Affine([[-1.0]]), math.log(2))
    assert p.point(np.zeros((1, 0)))[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_pushed_circle_radius():
    # radial flow closed form: every node of the unit circle lands at radius e^{-0.3}
    s = parallel_surface(Sphere([0.0, 0.0], 1.0), Affine(-np.eye(2)), 0.3)
    w = np.linspace(0, 2 * np.pi, 17)[:-1, None]
    pts = s.point(w)
    assert np.allclose(np.linalg.norm(pts, axis=1), math.exp(-0.3), atol=1e-12)
    node = flow_map(Affine(-np.eye(2)), Sphere([0.0, 0.0], 1.0).point(w), 0.3, method="rk4", step=1e-3)
    assert np.allclose(pts, node, atol=1e-10)


def test_surface_integrals():
    one = lambda x: np.ones(x.shape[0])
    unit = Hyperplane(2, 0, 0.0, window=([0.0], [1.0]))
    assert surface_integral(unit, one) == pytest.approx(1.0, abs=1e-12)
    assert surface_integral(Sphere([0.0, 0.0], 2.5), one) == pytest.approx(5 * math.pi, rel=1e-12)
    circ = Sphere([0.0, 0.0], 1.0)
    val = surface_integral(circ, lambda x: np.abs(circ.normal(x)[:, 0]), QuadratureSpec(order=32, panels=8))
    assert val == pytest.approx(4.0, abs=1e-10)


def test_surface_integral_error_estimate():
    s = Sphere([0.0, 0.0], 1.0)
    val, err = surface_integral(s, lambda x: np.exp(x[:, 0]), QuadratureSpec(order=16, panels=4),
                                  return_error=True)
    exact = 2 * math.pi * 1.2660658777520082  # 2 pi I_0(1)
    assert val == pytest.approx(exact, rel=1e-12)
    assert abs(val - exact) <= err < 1e-3


def test_cumulative_graph_area_matches_arc_length():
    s = cumulative()
    w = np.linspace(-4.0, 0.9, 400_001)
    y = np.log(3.0 - np.exp(w))
    arc = float(np.sum(np.hypot(np.diff(w), np.diff(y))))
    assert surface_integral(s, lambda x: np.ones(x.shape[0]), QuadratureSpec(order=32, panels=8)) == pytest.approx(
        arc, rel=1e-9)


def test_jacobian_identity_examples():
    base = Hyperplane(2, 0, 0.0, window=([-1.0], [1.0]))
    assert jacobian_identity_check(base, Constant([1.0, 0.0]), [0.2], 0.5) == pytest.approx((1.0, 1.0), abs=1e-8)
    assert jacobian_identity_check(base, Constant([2.0, 0.0]), [0.2], 0.5) == pytest.approx((2.0, 2.0), abs=1e-8)
    lhs, rhs = jacobian_identity_check(Sphere([0.0, 0.0], 1.0), Affine(-np.eye(2)), [math.pi / 4], 0.3)
    assert lhs == pytest.approx(rhs, abs=1e-6)
    assert rhs == pytest.approx(math.exp(-0.6), abs=1e-6)


def test_working_u0_positive_for_transversal_pair():
    assert working_u0(Sphere([0.0, 0.0], 1.0), Affine(-np.eye(2)), 0.5) > 0.0


def test_may_cross_box_prefilter():
    h = Hyperplane(2, 0, 1.0)
    assert h.may_cross_box(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([[2.0, 1.0], [3.0, 1.0]])).tolist() == [True, False]
    c = Sphere([0.0, 0.0], 1.0)
    lo = np.array([[-0.1, -0.1], [2.0, 2.0], [-3.0, -3.0]])
    hi = np.array([[0.1, 0.1], [3.0, 3.0], [3.0, 3.0]])
    assert c.may_cross_box(lo, hi).tolist() == [False, False, True]


def test_round_trip_from_dict():
    for s in (Hyperplane(2, 1, 0.5, window=([0.0], [2.0])), Sphere([1.0, 0.0], 2.0), cumulative()):
        t = surface_from_dict(s.to_dict())
        x = np.array([[0.3, 0.4], [1.5, -0.2]])
        assert np.allclose(s.signed_value(x), t.signed_value(x))


def test_flip_reverses_normal_only():
    s = Sphere([0.0, 0.0], 1.0)
    x = np.array([[0.6, 0.8]])
    assert np.allclose(s.flipped().normal(x), -s.normal(x))
    assert transversality_margin(s.flipped(), SoftIdle([1.0, 1.0], [0.2, 0.2])) == pytest.approx(
        transversality_margin(s, SoftIdle([1.0, 1.0], [0.2, 0.2])))
