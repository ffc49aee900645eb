import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobmfg.single_queue import (ConvergenceError, SingleQueueParams, constant, first_order_switch_points,
                                 solve_fifo, solve_single_queue, step_intensity)


def params(lam=3.0, mu=1.0, P=1.0, c=0.1, q=1.0, x_max=40.0, **kw):
    mu = mu if callable(mu) else constant(mu)
    P = P if callable(P) else constant(P)
    return SingleQueueParams(lam, mu, P, c, q, x_max, **kw)


def test_first_order_switch_points_constant_price():
    assert first_order_switch_points(1.0, 2.0, 1.0, 0.1) == pytest.approx((10.0, 20.0))


def test_first_order_switch_points_decreasing_price():
    x1, x2 = first_order_switch_points(1.0, 4.0, lambda x: 1.0 / x, 0.01)
    assert x1 == pytest.approx(10.0, rel=1e-12) and x2 == pytest.approx(20.0, rel=1e-12)


def test_switch_point_outside_range_is_an_error():
    with pytest.raises(ValueError):
        first_order_switch_points(1.0, 2.0, 1.0, 0.1, x_max=15.0)


def test_parameters_are_validated():
    with pytest.raises(ValueError):
        params(lam=1.0, mu=2.0)
    with pytest.raises(ValueError):
        params(x_max=40.5)
    with pytest.raises(ValueError):
        params(c=0.0)


def test_constant_service_has_one_switch_near_first_order_point():
    res = solve_single_queue(params())
    (x, kind), = res.sign_switches()
    assert kind == "+-"
    assert abs(x - 10.0) <= 1.0
    assert res.residual < 1e-10


def test_no_service_means_no_entry():
    res = solve_single_queue(params(mu=0.0, x_max=20.0))
    assert np.all(res.u <= 0)


def test_anticipated_faster_service_reopens_entry():
    p = params(lam=10.0, mu=step_intensity(1.0, 5.0, 15.0), x_max=80.0)
    sw = solve_single_queue(p).sign_switches()
    assert [k for _, k in sw] == ["+-", "-+", "+-"]
    assert sw[1][0] < 15.0
    x1, x2 = first_order_switch_points(1.0, 5.0, 1.0, 0.1)
    assert abs(sw[0][0] - x1) <= 1.0


def test_iteration_limit_raises():
    with pytest.raises(ConvergenceError) as e:
        solve_single_queue(params(max_iterations=3))
    assert e.value.iterations == 3


@settings(max_examples=15, deadline=None)
@given(mu=st.floats(0.5, 2.5), c=st.floats(0.02, 0.2))
def test_fifo_matches_expected_waiting_time(mu, c):
    # with constant service, position z is served after z / mu on average
    p = params(lam=3.0, mu=mu, c=c, x_max=15.0)
    res = solve_fifo(p)
    for x in range(1, 16):
        for z in range(1, x + 1):
            assert res.value(z, x) == pytest.approx(1.0 - c * z / mu, abs=1e-8)


def test_fifo_positions_behind_the_queue_are_undefined():
    res = solve_fifo(params(lam=3.0, mu=1.0, x_max=10.0))
    iz, ix = np.indices(res.u.shape)
    assert np.isnan(res.u[iz > ix]).all()
    assert np.isfinite(res.u[iz <= ix]).all()


@pytest.mark.xfail(strict=True, reason="the one-sided fixed point is not unique; "
                                      "starting from u = +1 selects a different equilibrium")
def test_initial_values_do_not_matter():
    p = params(lam=10.0, mu=step_intensity(1.0, 5.0, 15.0), x_max=80.0)
    a = solve_single_queue(p, 0.0).u
    b = solve_single_queue(p, 1.0).u
    assert np.abs(a - b).max() < 1e-6
