from __future__ import annotations

import numpy as np
import pytest
from conftest import setup

from sdgame import saddle
from sdgame.chain import build_kernel
from sdgame.dpp import evaluate_policies
from sdgame.families import spec_from_config
from sdgame.model import build_grid


def test_singleton_opponent_has_zero_epsilon():
    spec, grid, kernel = setup("single-player", (41,))
    ex = saddle.extract(spec, grid, kernel)
    assert ex.epsilon == 0.0
    # u* is Bellman optimal: the best response against v* gains nothing
    bu = saddle.best_response(spec, grid, kernel, ex.v_star, "u")
    best = evaluate_policies(spec, grid, kernel, bu, ex.v_star).at_origin()
    center = evaluate_policies(spec, grid, kernel, ex.u_star, ex.v_star).at_origin()
    assert best == center
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 20, seed=1, epsilon=ex.epsilon)
    assert cert.passed
    assert max(t.gain for t in cert.trials if t.side == "u") <= cert.arith_tol


def test_constant_game_lowest_index_controls():
    cfg = {"scenario": {"family": "constant", "params": {"xi": 0.7, "reach": 1.0}}, "horizon": 1.0,
           "controls": {"U": {"points": [-1.0, 0.0, 1.0]}, "V": {"points": [2.0, 3.0]}}}
    spec = spec_from_config(cfg)
    grid = build_grid(spec, resolution=[11])
    kernel = build_kernel(spec, grid)
    ex = saddle.extract(spec, grid, kernel)
    assert ex.epsilon == 0.0
    assert not ex.u_star.index.any()
    assert not ex.v_star.index.any()
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 5, epsilon=0.0)
    assert cert.passed
    assert all(t.gain == 0.0 for t in cert.trials)


def test_steering_game_certificate():
    spec, grid, kernel = setup("example81", (31, 31))
    ex = saddle.extract(spec, grid, kernel)
    assert ex.epsilon <= 1e-12
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 20, seed=0, epsilon=ex.epsilon)
    assert cert.passed
    assert cert.value_at_origin == pytest.approx(ex.lower.at_origin(), abs=ex.epsilon + 1e-12)
    ids = {t.policy_id for t in cert.trials}
    assert "best-response" in ids and len(cert.trials) == 2 * 20 + 2


def test_best_response_beats_center():
    spec, grid, kernel = setup("example81", (31, 31))
    ex = saddle.extract(spec, grid, kernel)
    center = evaluate_policies(spec, grid, kernel, ex.u_star, ex.v_star).at_origin()
    bu = saddle.best_response(spec, grid, kernel, ex.v_star, "u")
    bv = saddle.best_response(spec, grid, kernel, ex.u_star, "v")
    assert evaluate_policies(spec, grid, kernel, bu, ex.v_star).at_origin() >= center - 1e-12
    assert evaluate_policies(spec, grid, kernel, ex.u_star, bv).at_origin() <= center + 1e-12
    # the best response against v* stays below the upper value
    assert evaluate_policies(spec, grid, kernel, bu, ex.v_star).at_origin() <= ex.upper.at_origin() + 1e-12


def test_gap_game_epsilon_covers_deviations():
    spec, grid, kernel = setup("matching-pennies", (41,))
    ex = saddle.extract(spec, grid, kernel)
    assert ex.field_gap > 1.0
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 10, epsilon=ex.epsilon)
    assert cert.passed
    assert max(t.gain for t in cert.trials) > 0.0


def test_failed_certificate_is_reported():
    spec, grid, kernel = setup("matching-pennies", (41,))
    ex = saddle.extract(spec, grid, kernel)
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 3, epsilon=0.0)
    assert not cert.passed
    assert cert.violations
    assert cert.to_dict()["n_violations"] == len(cert.violations)


def test_certificate_deterministic():
    spec, grid, kernel = setup("example81", (31, 31))
    ex = saddle.extract(spec, grid, kernel)
    a = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 6, seed=4, epsilon=ex.epsilon)
    b = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, 6, seed=4, epsilon=ex.epsilon,
                      threads=3)
    assert a.to_json() == b.to_json()


def test_best_response_side_validated():
    spec, grid, kernel = setup("single-player", (41,))
    ex = saddle.extract(spec, grid, kernel)
    with pytest.raises(ValueError):
        saddle.best_response(spec, grid, kernel, ex.v_star, "w")
    assert np.array_equal(saddle.best_response(spec, grid, kernel, ex.v_star, "u").index,
                          ex.u_star.index)
