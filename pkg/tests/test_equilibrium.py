import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobmfg.equilibrium import (PolicyEvaluator, _LocalModel, antisymmetry_error, assemble, class_rhs,
                                equilibrium_gap, evaluate, extract_decisions, fixed_point_residual,
                                lemke, margins, mirror_decisions, solve_equilibrium, update_u, update_v)
from lobmfg.model import DecisionField, apply_boundary

from conftest import preset_config, solved


def random_decisions(config, seed, mixed=False):
    rng = np.random.default_rng(seed)
    n, k = config.n, len(config.classes)
    draw = (lambda: rng.random((n, n))) if mixed else (lambda: (rng.random((n, n)) < 0.5).astype(float))
    return apply_boundary(DecisionField(tuple(draw() for _ in range(k)), tuple(draw() for _ in range(k))), config)


def test_small_equilibrium_is_consistent(small_test1):
    config, res = small_test1
    assert res.info["residual"] < 1e-10
    assert equilibrium_gap(res.values, res.decisions, config) < 1e-8
    assert antisymmetry_error(res.values, config) < 1e-9
    assert fixed_point_residual(res.values, res.decisions, config) < 1e-10


def test_pure_nodes_follow_margin_sign(small_test4):
    config, res = small_test4
    best = extract_decisions(res.values, config)
    ms, mb = margins(config, res.values)[0]
    clear = ~np.isnan(ms) & (np.abs(ms) > 1e-7)
    np.testing.assert_array_equal(best.p_sell[0][clear], res.decisions.p_sell[0][clear])
    clear = ~np.isnan(mb) & (np.abs(mb) > 1e-7)
    np.testing.assert_array_equal(best.p_buy[0][clear], res.decisions.p_buy[0][clear])


def test_jacobi_sweep_leaves_equilibrium_unchanged(small_test1):
    config, res = small_test1
    for new, old in ((update_u(res.values, config, res.decisions), res.values.u),
                     (update_v(res.values, config, res.decisions), res.values.v)):
        assert np.abs(new[0] - old[0]).max() < 1e-9


def test_buyer_waiting_cost_raises_the_value():
    config = preset_config("test1", 10.0)
    rhs0 = np.zeros((config.n, config.n))
    kq = config.classes[0].c * config.classes[0].q
    assert np.all(class_rhs(config, rhs0, "u", 0) == -kq)
    assert np.all(class_rhs(config, rhs0, "v", 0) == kq)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), mixed=st.booleans())
def test_value_systems_are_m_matrices(seed, mixed):
    config = preset_config("test5", 4.0)
    dec = random_decisions(config, seed, mixed)
    for side in ("u", "v"):
        A, _ = assemble(config, dec, side)
        A = A.toarray()
        off = A - np.diag(np.diag(A))
        assert off.max() <= 0
        assert np.all(np.diag(A) + off.sum(1) >= -1e-12)


def test_warm_krylov_path_matches_direct_solve():
    config = preset_config("test4", 15.0)
    d1 = random_decisions(config, 1)
    d2 = random_decisions(config, 1, mixed=True)
    ev = PolicyEvaluator(config)
    w1 = ev(d1)
    w2 = ev(d2, w1)
    ref = evaluate(config, d2)
    assert np.abs(w2.u[0] - ref.u[0]).max() < 1e-9
    assert np.abs(w2.v[0] - ref.v[0]).max() < 1e-9


def test_low_rank_update_matches_direct_solve():
    config = preset_config("test1", 12.0)
    n = config.n
    base = mirror_decisions(random_decisions(config, 3))
    local = _LocalModel(config, base, symmetric=True)
    nodes = [(4, 5), (7, 2), (6, 6)]
    local.extend([a * n + b for a, b in nodes] + [b * n + a for a, b in nodes])
    ps = base.p_sell[0].copy()
    for a, b in nodes:
        ps[a, b] = 0.3
    dec = mirror_decisions(DecisionField((ps,), (ps.T,)))
    got = local(dec)
    ref = evaluate(config, dec)
    assert np.abs(got.u[0] - ref.u[0]).max() < 1e-9
    assert np.abs(got.v[0] - ref.v[0]).max() < 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 8))
def test_lemke_solves_monotone_problems(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, k))
    S = rng.normal(size=(k, k))
    M = A @ A.T + 0.05 * np.eye(k) + (S - S.T)
    q = rng.normal(size=k)
    z = lemke(M, q)
    assert z is not None
    w = M @ z + q
    assert w.min() > -1e-8
    assert abs(w @ z) < 1e-8 * max(1.0, np.abs(q).max())


def test_symmetric_search_matches_full_search():
    config = preset_config("test4", 20.0)
    a = solve_equilibrium(config, symmetric=True)
    b = solve_equilibrium(config, symmetric=False)
    assert b.info["equilibrium_gap"] < 1e-8
    assert np.abs(a.values.u[0] - b.values.u[0]).max() < 1e-8


def test_equal_cost_per_order_gives_equal_values():
    config = preset_config("test5", 8.0)
    res = solve_equilibrium(config)
    assert np.abs(res.values.u[0] - res.values.u[1]).max() < 1e-10


@pytest.mark.parametrize("offset", [0.1, -0.1])
def test_initial_values_do_not_matter(small_test1, offset):
    config, ref = small_test1
    res = solve_equilibrium(config, init_offset=offset)
    assert np.abs(res.values.u[0] - ref.values.u[0]).max() < 10 * config.tol * config.P


def test_info_records_diagnostics(small_test4):
    _, res = small_test4
    for key in ("best_response_steps", "newton_iterations", "residual", "equilibrium_gap", "seconds"):
        assert key in res.info
