from __future__ import annotations

import numpy as np
import pytest
from conftest import setup, solved

from sdgame.chain import build_kernel, sample_paths
from sdgame.dpp import (Policy, dpp_consistency, evaluate_policies, one_step, solve_game,
                        step_all_pairs)
from sdgame.families import spec_from_config
from sdgame.model import CFLError, Grid, SpecError, build_grid


def const_setup(dx=0.1, reach=1.0, **params):
    spec = spec_from_config({"scenario": {"family": "constant", "params": {"reach": reach, **params}},
                             "horizon": 1.0})
    grid = build_grid(spec, dx=[dx] * int(params.get("d", 1)))
    return spec, grid, build_kernel(spec, grid)


def test_one_step_constant_field():
    spec, grid, kernel = const_setup()
    vals = np.full(grid.shape, 3.0)
    y, z = one_step(vals, grid.origin_index, 0, 0.0, 0.0, kernel)
    assert y == 3.0
    assert np.all(z == 0.0)


def test_one_step_linear_driver():
    # f = -y with dt = 0.01: y = 3 + 0.01 * (-3)
    spec, grid, kernel = const_setup(f_y=-1.0)
    assert grid.dt == pytest.approx(0.01)
    y, _ = one_step(np.full(grid.shape, 3.0), grid.origin_index, 0, 0.0, 0.0, kernel)
    assert y == pytest.approx(3.0 + grid.dt * -3.0, abs=1e-15)
    assert y == pytest.approx(2.97, abs=1e-15)


def test_one_step_linear_field_gives_unit_gradient():
    spec, grid, kernel = const_setup()
    y, z = one_step(grid.axes[0].copy(), grid.origin_index, 0, 0.0, 0.0, kernel)
    assert z[0] == pytest.approx(1.0, abs=1e-12)
    assert y == pytest.approx(0.0, abs=1e-15)


def test_large_lipschitz_step_rejected():
    spec, grid, _ = const_setup(f_y=-200.0)
    assert grid.dt * spec.coefficients.L0 < 1.0
    with pytest.raises(CFLError):
        build_grid(spec, dx=[0.1], n_t=100)
    coarse = Grid(1.0, 100, grid.axes, grid.x0)
    with pytest.raises(SpecError):
        one_step(np.zeros(coarse.shape), coarse.origin_index, 0, 0.0, 0.0, build_kernel(spec, coarse))


def test_constant_payoff_preserved():
    spec, grid, kernel = const_setup(d=2, dx=0.2, xi=1.75)
    for side in ("lower", "upper"):
        field, _, _ = solve_game(spec, grid, kernel, side)
        assert np.all(field.values == 1.75)


def test_heat_value_matches_closed_form():
    spec, grid, kernel, lo, up = solved("heat")
    # value(t, x) = x^2 + (T - t)
    assert lo[0].at_origin() == pytest.approx(1.0, abs=1e-3)
    x = grid.axes[0]
    near = np.abs(x) <= 2.0
    assert np.allclose(lo[0].values[0][near], x[near] ** 2 + 1.0, atol=1e-3)
    assert np.array_equal(lo[0].values, up[0].values)


def test_steering_game_value_exists_and_below_horizon():
    spec, grid, kernel, lo, up = solved("example81", (51, 51))
    assert abs(up[0].at_origin() - lo[0].at_origin()) <= 5e-3
    assert up[0].at_origin() <= spec.T


def test_constant_driver_integrates():
    spec, grid, kernel = const_setup(sigma=0.25, reach=4.0, f_const=2.0, dx=0.05)
    pol = (Policy.constant(spec.U, grid), Policy.constant(spec.V, grid))
    field = evaluate_policies(spec, grid, kernel, *pol)
    assert field.at_origin() == pytest.approx(2.0, abs=1e-12)


def test_policy_replay_is_exact():
    spec, grid, kernel, lo, up = solved("example81", (31, 31))
    field, u, v = lo
    replay = evaluate_policies(spec, grid, kernel, u, v)
    assert np.array_equal(replay.values, field.values)
    ufield, uu, uv = up
    assert np.array_equal(evaluate_policies(spec, grid, kernel, uu, uv).values, ufield.values)


def test_fixed_policy_value_matches_chain_monte_carlo():
    spec, grid, kernel = setup("example81", (31, 31))
    rng = np.random.default_rng(2)
    u = Policy.random(spec.U, grid, rng)
    v = Policy.random(spec.V, grid, rng)
    val = evaluate_policies(spec, grid, kernel, u, v).at_origin()
    n = 40_000
    idx = sample_paths(kernel, (u, v), n, seed=9)["index"][:, -1]
    coords = grid.node_coords()[idx[:, 0], idx[:, 1]]
    payoffs = spec.terminal(coords)
    se = payoffs.std(ddof=1) / np.sqrt(n)
    assert abs(payoffs.mean() - val) <= 4 * se


def test_thread_count_does_not_change_values():
    spec, grid, kernel = setup("example81", (31, 31))
    a, _, _ = solve_game(spec, grid, kernel, "lower", threads=1)
    b, _, _ = solve_game(spec, grid, kernel, "lower", threads=3)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.z, b.z)


def test_policy_out_of_range_rejected():
    spec, grid, _ = setup("example81", (31, 31))
    idx = np.full((grid.n_t,) + grid.shape, len(spec.U), dtype=np.int16)
    with pytest.raises(SpecError):
        Policy(spec.U, idx)


def test_dpp_split_exact():
    spec, grid, kernel = setup("single-player", (41,))
    for split in (1, grid.n_t // 3, grid.n_t - 1):
        for side in ("lower", "upper"):
            assert dpp_consistency(spec, grid, kernel, split, side) == 0.0


def test_dpp_split_detects_perturbation():
    spec, grid, kernel = setup("single-player", (41,))
    node = grid.origin_index

    def bump(v):
        v = v.copy()
        v[node] += 1e-3
        return v

    assert dpp_consistency(spec, grid, kernel, grid.n_t // 2, transform=bump) > 0.0


def test_dpp_split_rounding_stability():
    spec, grid, kernel = const_setup(f_y=-0.5, f_const=0.3, xi={"kind": "cos"}, reach=3.0, dx=0.1)
    dev = dpp_consistency(spec, grid, kernel, grid.n_t // 2, transform=lambda v: np.round(v, 6))
    bound = (1 + grid.dt * spec.coefficients.L0) ** grid.n_t * 1e-6
    assert 0.0 < dev <= bound


def test_split_index_must_be_interior():
    spec, grid, kernel = setup("single-player", (41,))
    with pytest.raises(SpecError):
        dpp_consistency(spec, grid, kernel, 0)


def test_all_pairs_step_matches_single_node_step():
    spec, grid, kernel = setup("matching-pennies", (41,))
    vals = np.random.default_rng(0).normal(size=grid.shape)
    Y = step_all_pairs(vals, 3, kernel)
    for iu in range(len(spec.U)):
        for iv in range(len(spec.V)):
            y, _ = one_step(vals, (17,), 3, iu, iv, kernel)
            assert Y[iu, iv, 16] == y
