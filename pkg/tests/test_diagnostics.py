from __future__ import annotations

import numpy as np
import pytest
from conftest import setup, solved

from sdgame.chain import build_kernel
from sdgame.diagnostics import (bsde_apriori, check_bounds, modulus_report, modulus_stability,
                                weak_duality)
from sdgame.dpp import Policy, evaluate_policies, solve_game
from sdgame.families import spec_from_config
from sdgame.model import SpecError, build_grid


def const_spec(**params):
    return spec_from_config({"scenario": {"family": "constant", "params": {"reach": 1.0, **params}},
                             "horizon": 1.0})


def test_heat_within_bound():
    spec, grid, kernel, lo, _ = solved("heat")
    rep = check_bounds(lo[0], spec)
    assert rep.passed
    assert rep.max_abs <= rep.C


def test_constant_payoff_bound_is_tight():
    spec = const_spec(xi=0.6)
    grid = build_grid(spec, resolution=[21])
    field, _, _ = solve_game(spec, grid, build_kernel(spec, grid), "lower")
    rep = check_bounds(field, spec)
    assert rep.passed
    assert np.max(np.abs(field.values - 0.6)) == 0.0


def test_injected_violation_located():
    spec, grid, kernel, lo, _ = solved("example81", (31, 31))
    bad = lo[0].copy()
    node = (3, 7, 11)
    bad.values[node] = 10 * check_bounds(lo[0], spec).C
    rep = check_bounds(bad, spec)
    assert not rep.passed
    assert tuple(rep.worst_node) == node


def test_weak_duality_on_gap_game():
    spec, grid, kernel, lo, up = solved("matching-pennies", (41,))
    assert weak_duality(lo[0], up[0]).passed
    assert not weak_duality(up[0], lo[0]).passed


def test_heat_temporal_gap_is_elapsed_time():
    spec, grid, kernel, lo, _ = solved("heat")
    f = lo[0]
    for n in (0, 5, grid.n_t // 2):
        assert f.at_origin(n) - f.at_origin(n + 3) == pytest.approx(3 * grid.dt, rel=1e-6)


def test_constant_field_has_zero_constants():
    spec = const_spec(xi=1.3, d=2)
    grid = build_grid(spec, resolution=[11, 11])
    field, _, _ = solve_game(spec, grid, build_kernel(spec, grid), "lower")
    rep = modulus_report(field, spec, probes=300)
    assert rep.C_spatial == 0.0 and rep.C_temporal == 0.0


def test_constants_grow_with_probe_count():
    spec, grid, kernel, lo, _ = solved("example81", (31, 31))
    fits = [modulus_report(lo[0], spec, probes=p, seed=5) for p in (100, 400, 1600)]
    assert all(a.C_spatial <= b.C_spatial for a, b in zip(fits, fits[1:]))
    assert all(a.C_temporal <= b.C_temporal for a, b in zip(fits, fits[1:]))
    assert fits[-1].passed


def test_modulus_stable_under_refinement():
    spec, _, _, coarse, _ = solved("example81", (31, 31))
    _, _, _, fine, _ = solved("example81", (51, 51))
    rep = modulus_stability(modulus_report(coarse[0], spec), modulus_report(fine[0], spec))
    assert rep["passed"], rep


def test_modulus_rejects_zero_probes():
    spec, _, _, lo, _ = solved("single-player", (41,))
    with pytest.raises(SpecError):
        modulus_report(lo[0], spec, probes=0)


def test_apriori_zero_data():
    spec = const_spec(xi=0.0, sigma=0.5, reach=3.0)
    grid = build_grid(spec, dx=[0.1])
    rep = bsde_apriori(spec, grid, build_kernel(spec, grid), trials=5)
    assert rep.passed
    assert all(t["max_abs_Y"] == 0.0 for t in rep.trials)


def test_apriori_short_horizon_bound_is_attained():
    # f = 2, xi = 0: Y = 2 delta and sqrt(delta) * I0 = 2 delta exactly
    spec = const_spec(xi=0.0, f_const=2.0, sigma=0.5, reach=3.0)
    assert spec.coefficients.L0 == 0.0
    grid = build_grid(spec, dx=[0.1])
    kernel = build_kernel(spec, grid)
    rep = bsde_apriori(spec, grid, kernel, trials=5, seed=3)
    assert rep.passed
    assert all(abs(t["short_excess"]) <= 1e-12 for t in rep.trials)
    y = evaluate_policies(spec, grid, kernel, Policy.constant(spec.U, grid),
                          Policy.constant(spec.V, grid)).at_origin()
    assert y == pytest.approx(2.0, abs=1e-12)


def test_apriori_steering_game():
    spec, grid, kernel = setup("example81", (51, 51))
    rep = bsde_apriori(spec, grid, kernel, trials=50)
    assert rep.applicable and rep.passed
    assert len(rep.trials) == 50


def test_apriori_skipped_for_z_driver():
    spec = const_spec(f_z=[0.5])
    grid = build_grid(spec, dx=[0.1])
    rep = bsde_apriori(spec, grid, build_kernel(spec, grid), trials=3)
    assert not rep.applicable
    assert "z" in rep.reason
