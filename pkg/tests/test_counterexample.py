from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from sdgame.counterexample import (CounterexampleParams, OpenLoopControl, best_response_u, gap_report,
                                   strong_lower_estimate, strong_upper_estimate)
from sdgame.model import SpecError


def folded_normal_mean(m, s):
    """E|m + s N| for a standard normal N."""
    return m * (1 - 2 * norm.cdf(-m / s)) + 2 * s * norm.pdf(m / s)


def const(c):
    return OpenLoopControl(f"const {c}", lambda t, c=c: np.full_like(t, c))


def test_lower_without_noise_is_zero():
    est = strong_lower_estimate(CounterexampleParams(alpha=0.0))
    assert est.estimate == 0.0
    assert est.stderr == 0.0
    assert est.n_paths == 0


def test_lower_matches_gaussian_identity():
    est = strong_lower_estimate(CounterexampleParams(alpha=0.3, n_paths=100_000, seed=1))
    assert abs(est.estimate - 0.3 * math.sqrt(4 / math.pi)) <= 3 * est.stderr
    assert est.estimate <= 0.3 * math.sqrt(2) + 3 * est.stderr
    assert est.extra["l2_bound"] == pytest.approx(0.4243, abs=1e-4)
    assert est.extra["regime"] == "gap regime"


def test_lower_outside_regime():
    est = strong_lower_estimate(CounterexampleParams(alpha=1.0, n_paths=100_000, seed=2))
    assert abs(est.estimate - math.sqrt(4 / math.pi)) <= 3 * est.stderr
    assert est.extra["regime"] == "outside gap regime"


def test_too_few_paths_rejected():
    with pytest.raises(SpecError):
        strong_lower_estimate(CounterexampleParams(n_paths=10))


def test_best_response_signs():
    assert best_response_u(0.5, 0.0) == 1.0
    assert best_response_u(0.5, 1.0) == -1.0
    assert best_response_u(0.5, 0.5) == 1.0


def test_zero_control_response():
    p = CounterexampleParams(alpha=0.3, a=0.5, n_paths=100_000, seed=3)
    est = strong_upper_estimate(p, [const(0.0)])
    row = est.extra["candidates"][0]
    assert row["u0"] == 1.0
    assert row["J"] >= 1.5 - 3 * row["stderr"]
    # independent oracle: a + X1 - X2 ~ N(1.5, 2 alpha^2 T)
    exact = folded_normal_mean(1.5, 0.3 * math.sqrt(2.0))
    assert abs(row["J"] - exact) <= 3 * row["stderr"]


def test_copying_control_response():
    p = CounterexampleParams(alpha=0.3, a=0.5, n_paths=50_000)
    row = strong_upper_estimate(p, [const(0.5)]).extra["candidates"][0]
    assert row["E_X2_T"] == pytest.approx(0.5, abs=1e-12)
    assert row["u0"] == 1.0
    assert row["J"] >= 1.0 - 3 * row["stderr"]


def test_deterministic_game_exact():
    p = CounterexampleParams(alpha=0.0, a=0.5)
    est = strong_upper_estimate(p)
    assert est.n_paths == 0
    assert all(r["stderr"] == 0.0 for r in est.extra["candidates"])
    assert all(r["J"] >= p.T - 1e-12 for r in est.extra["candidates"])


def test_inadmissible_candidate_rejected():
    bad = OpenLoopControl("too fast", lambda t: np.full_like(t, 2.5))
    with pytest.raises(SpecError):
        strong_upper_estimate(CounterexampleParams(), [bad])


def test_gap_report_in_regime():
    rep = gap_report(CounterexampleParams(alpha=0.3, a=0.5, T=1.0, n_paths=100_000))
    assert rep.passed
    assert rep.strong_gap >= 1 - 0.4243 - 3 * rep.strong_lower_stderr
    assert rep.strong_gap > 0.5
    assert all(c["J"] >= 1 - 3 * c["stderr"] for c in rep.candidates)


def test_gap_report_without_noise():
    rep = gap_report(CounterexampleParams(alpha=0.0, a=0.5))
    assert rep.strong_gap == 1.0
    assert rep.passed


def test_gap_report_weak_rows_checked():
    weak = {"rows": [{"lower": 0.4, "upper": 0.4}, {"lower": 0.3, "upper": 0.3}]}
    rep = gap_report(CounterexampleParams(n_paths=2000), weak)
    assert rep.checks["weak_lower_le_upper"]
    assert rep.checks["weak_value_le_strong_upper"]
    bad = gap_report(CounterexampleParams(n_paths=2000), {"rows": [{"lower": 0.5, "upper": 0.4}]})
    assert not bad.passed


def test_estimates_deterministic():
    p = CounterexampleParams(n_paths=120_000, seed=7)
    assert strong_lower_estimate(p).estimate == strong_lower_estimate(p).estimate
