"""Strong- versus weak-formulation values for the two-player steering game.

State: X1 = alpha B1 + int u ds, X2 = alpha B2 + int v ds, with |u| <= 1,
|v| <= 2 and payoff J(u, v) = E|a + X1_T - X2_T|. With open-loop controls the
minimizer can copy the maximizer (v = u + a/T) and the maximizer can answer
any v with a constant push away from E[X2_T], which separates the two values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .model import SpecError

BATCH = 50_000


@dataclass(frozen=True)
class CounterexampleParams:
    alpha: float = 0.3
    a: float = 0.5
    T: float = 1.0
    n_paths: int = 100_000
    seed: int = 0
    n_steps: int = 200       # time grid for integrating open-loop controls

    def __post_init__(self):
        if self.alpha < 0:
            raise SpecError("alpha must be >= 0")
        if self.T <= 0:
            raise SpecError("T must be positive")

    @property
    def in_gap_regime(self) -> bool:
        return self.alpha < math.sqrt(self.T / 2) and abs(self.a) <= self.T

    @property
    def regime(self) -> str:
        return "gap regime" if self.in_gap_regime else "outside gap regime"


@dataclass
class Estimate:
    estimate: float
    stderr: float
    n_paths: int
    extra: dict = field(default_factory=dict)


def _normals(params: CounterexampleParams, stream: int, width: int) -> np.ndarray:
    """Standard normals (n_paths, width) drawn in fixed-size batches from spawned seeds.

    Each batch has its own child seed, so the sample does not depend on how the
    batches are scheduled.
    """
    n = params.n_paths
    n_batches = -(-n // BATCH)
    children = np.random.SeedSequence([params.seed, stream]).spawn(n_batches)
    out = np.empty((n, width))
    for b, ss in enumerate(children):
        lo, hi = b * BATCH, min(n, (b + 1) * BATCH)
        out[lo:hi] = np.random.default_rng(ss).standard_normal((hi - lo, width))
    return out


def _mean_se(x: np.ndarray):
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def strong_lower_estimate(params: CounterexampleParams) -> Estimate:
    """Monte Carlo of J(u, u + a/T) = alpha E|B1_T - B2_T| (any u gives the same J)."""
    if params.n_paths < 1000:
        raise SpecError("n_paths must be >= 1000")
    T, alpha = params.T, params.alpha
    extra = {"l2_bound": alpha * math.sqrt(2 * T),
             "gaussian_exact": alpha * math.sqrt(4 * T / math.pi),
             "regime": params.regime}
    if alpha == 0:
        return Estimate(0.0, 0.0, 0, extra)
    g = _normals(params, 0, 2) * math.sqrt(T)
    mean, se = _mean_se(alpha * np.abs(g[:, 0] - g[:, 1]))
    return Estimate(mean, se, params.n_paths, extra)


@dataclass(frozen=True)
class OpenLoopControl:
    """A deterministic control path v(t) for the minimizer."""

    name: str
    fn: Callable

    def path(self, times: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.fn(times), dtype=float), times.shape)


def candidate_family(params: CounterexampleParams) -> list:
    """Constants, sinusoids and bang-bang controls with |v| <= 2."""
    T, a = params.T, params.a
    cands = [OpenLoopControl(f"const {c:g}", (lambda t, c=c: np.full_like(t, c)))
             for c in (-2.0, -1.0, 0.0, a / T, 1.0, 2.0)]
    for k in (1, 2, 3):
        cands.append(OpenLoopControl(f"2 sin(2 pi {k} t/T)",
                                     lambda t, k=k: 2 * np.sin(2 * np.pi * k * t / T)))
        cands.append(OpenLoopControl(f"cos(pi {k} t/T)", lambda t, k=k: np.cos(np.pi * k * t / T)))
    for s in (0.25, 0.5, 0.75):
        cands.append(OpenLoopControl(f"bang-bang +2/-2 at {s:g}T",
                                     lambda t, s=s: np.where(t < s * T, 2.0, -2.0)))
        cands.append(OpenLoopControl(f"bang-bang -2/+2 at {s:g}T",
                                     lambda t, s=s: np.where(t < s * T, -2.0, 2.0)))
    return cands


def best_response_u(a: float, mean_x2: float) -> float:
    """Constant maximizer response: push a + X1 - X2 away from zero, +1 on ties."""
    gap = a - mean_x2
    if abs(gap) <= 1e-12 * max(1.0, abs(a)):
        return 1.0
    return math.copysign(1.0, gap)


def strong_upper_estimate(params: CounterexampleParams,
                          v_candidates: Optional[Sequence[OpenLoopControl]] = None) -> Estimate:
    """Min over candidates v of J(u_v, v) with u_v the constant best response.

    Every candidate payoff is bounded below by T, so the returned minimum
    certifies sup_u J(u, v) >= T on the candidate family.
    """
    cands = list(v_candidates) if v_candidates is not None else candidate_family(params)
    T, alpha, a = params.T, params.alpha, params.a
    times = np.linspace(0.0, T, params.n_steps + 1)
    rows = []
    for i, cand in enumerate(cands):
        vpath = cand.path(times)
        if np.max(np.abs(vpath)) > 2.0 + 1e-12:
            raise SpecError(f"candidate {cand.name!r} violates |v| <= 2")
        mean_x2 = float(trapezoid(vpath, times))    # the Brownian part has mean zero
        u0 = best_response_u(a, mean_x2)
        if alpha == 0:
            J, se = abs(a + u0 * T - mean_x2), 0.0
        else:
            g = _normals(params, 1 + i, 2) * math.sqrt(T)
            x1 = alpha * g[:, 0] + u0 * T
            x2 = alpha * g[:, 1] + mean_x2
            J, se = _mean_se(np.abs(a + x1 - x2))
        rows.append({"candidate": cand.name, "E_X2_T": mean_x2, "u0": u0, "J": J, "stderr": se,
                     "jensen_bound": T + abs(a - mean_x2)})
    best = min(rows, key=lambda r: r["J"])
    return Estimate(best["J"], best["stderr"], params.n_paths if alpha > 0 else 0,
                    {"candidates": rows, "argmin": best["candidate"], "upper_bound_claim": T})


@dataclass
class GapReport:
    params: dict
    regime: str
    strong_lower: float
    strong_lower_stderr: float
    l2_bound: float
    gaussian_exact: float
    strong_upper_bound: float
    strong_upper_min_candidate: float
    strong_upper_min_stderr: float
    strong_gap: float
    required_margin: float
    candidates: list
    weak: Optional[dict] = None
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def gap_report(params: CounterexampleParams, weak: Optional[dict] = None,
               lower: Optional[Estimate] = None, upper: Optional[Estimate] = None) -> GapReport:
    """Combine the strong estimates with weak-formulation values (if supplied).

    ``weak`` maps to rows like ``{"resolution": ..., "lower": ..., "upper": ...}``
    under the key ``"rows"``, finest last.
    """
    lo = lower or strong_lower_estimate(params)
    up = upper or strong_upper_estimate(params)
    T = params.T
    gap = T - lo.estimate
    margin = T - lo.extra["l2_bound"] - 3 * lo.stderr
    checks = {
        "lower_below_l2_bound": lo.estimate <= lo.extra["l2_bound"] + 3 * lo.stderr,
        "candidates_at_least_T": all(r["J"] >= T - 3 * r["stderr"] - 1e-12 for r in up.extra["candidates"]),
    }
    if params.in_gap_regime:
        checks["gap_positive_with_margin"] = gap >= margin and gap > 0
    if weak is not None and weak.get("rows"):
        rows = weak["rows"]
        checks["weak_lower_le_upper"] = all(r["lower"] <= r["upper"] + 1e-10 for r in rows)
        checks["weak_value_le_strong_upper"] = rows[-1]["upper"] <= T + 1e-10
    return GapReport(
        params=asdict(params), regime=params.regime, strong_lower=lo.estimate,
        strong_lower_stderr=lo.stderr, l2_bound=lo.extra["l2_bound"],
        gaussian_exact=lo.extra["gaussian_exact"], strong_upper_bound=T,
        strong_upper_min_candidate=up.estimate, strong_upper_min_stderr=up.stderr,
        strong_gap=gap, required_margin=margin, candidates=up.extra["candidates"],
        weak=weak, checks=checks)
