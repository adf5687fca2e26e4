from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import setup, solved

from sdgame.families import builtin_config, spec_from_config
from sdgame.model import CFLError, Grid, SpecError, build_grid
from sdgame.pdefd import (EllipticityError, IsaacsRefusal, PdeProblem, cross_check, refinement_study,
                          sample_field, solve_pde)


def test_heat_closed_form():
    spec, grid, _ = setup("heat")
    assert grid.spatial_shape == (201,)
    field = solve_pde(PdeProblem(spec), grid)
    assert field.at_origin() == pytest.approx(1.0, abs=1e-3)


def test_constant_payoff_is_fixed_point():
    spec = spec_from_config({"scenario": {"family": "constant",
                                          "params": {"d": 2, "xi": -0.4, "reach": 1.0}},
                             "horizon": 1.0})
    field = solve_pde(PdeProblem(spec), build_grid(spec, resolution=[11, 11]))
    assert np.all(field.values == -0.4)


def test_localized_box_with_exact_boundary():
    spec, grid, _ = setup("heat")
    exact = lambda t, x: x[..., 0] ** 2 + (spec.T - t)  # noqa: E731
    prob = PdeProblem(spec, box=((-1.0, 1.0),), boundary=exact)
    field = solve_pde(prob, grid)
    assert field.grid.axes[0][0] == pytest.approx(-1.0)
    coords = field.grid.node_coords()
    assert np.allclose(field.values[0], exact(0.0, coords), atol=1e-12)


def test_seam_mismatch_rejected():
    spec, grid, _ = setup("heat")
    prob = PdeProblem(spec, box=((-1.0, 1.0),), boundary=lambda t, x: np.zeros(x.shape[0]))
    with pytest.raises(SpecError, match="seam"):
        solve_pde(prob, grid)


def test_time_step_too_large_rejected():
    spec, grid, _ = setup("heat")
    coarse = Grid(spec.T, 10, grid.axes, grid.x0)
    with pytest.raises(CFLError):
        solve_pde(PdeProblem(spec), coarse)


def test_degenerate_sigma_rejected():
    spec = spec_from_config(builtin_config("example81", alpha=0.0))
    axes = tuple(np.linspace(-1, 1, 11) for _ in range(2))
    with pytest.raises(EllipticityError):
        solve_pde(PdeProblem(spec), Grid(1.0, 100, axes, (0.0, 0.0)))


def test_heat_cross_check():
    spec, grid, _ = setup("heat")
    rep = cross_check(spec, grid, grid, tolerance=2e-3, isaacs_samples=500)
    assert rep["passed"]
    assert abs(rep["dpp_lower"][0] - 1.0) <= 2e-3
    assert abs(rep["pde"][0] - 1.0) <= 2e-3


def test_single_player_cross_check():
    spec, grid, _ = setup("single-player")
    rep = cross_check(spec, grid, grid, tolerance=5e-3, isaacs_samples=500)
    assert rep["passed"]
    assert rep["max_deviation"] <= 5e-3


def test_steering_game_cross_check_with_refinement_tolerance():
    spec, grid, _ = setup("example81", (51, 51))
    rep = cross_check(spec, grid, grid, isaacs_samples=500)
    assert rep["tolerance_source"] == "refinement"
    assert rep["passed"]


def test_pde_matches_lattice_value_field():
    spec, grid, kernel, lo, _ = solved("example81", (31, 31))
    pde = solve_pde(PdeProblem(spec), grid)
    assert np.max(np.abs(pde.values[0] - lo[0].values[0])) <= 1e-10


def test_matching_pennies_refused():
    spec, grid, _ = setup("matching-pennies", (41,))
    with pytest.raises(IsaacsRefusal) as err:
        cross_check(spec, grid, grid, isaacs_samples=200)
    assert err.value.report.max_gap == pytest.approx(2.0, abs=1e-12)


def test_sample_field_interpolates_linear_data():
    spec, grid, _ = setup("single-player", (41,))
    field = solve_pde(PdeProblem(spec), grid)
    field.values[0] = grid.axes[0] * 3.0
    assert sample_field(field, [[0.123]])[0] == pytest.approx(0.369)


@pytest.mark.parametrize("solver", ["dpp", "pde"])
def test_second_order_refinement_on_smooth_payoff(solver):
    cfg = builtin_config("heat", xi={"kind": "cos"})
    spec = spec_from_config(cfg)
    study = refinement_study(spec, [[51], [101], [201]], solver, exact=math.exp(-0.5))
    ratios = [r["error_ratio"] for r in study["rows"][1:]]
    assert all(3.0 <= q <= 5.0 for q in ratios)
