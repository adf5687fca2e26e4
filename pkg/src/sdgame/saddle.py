"""Epsilon-saddle feedback policies: extraction from solved fields and verification.

u* is the maximizer's argmax policy from the lower recursion and v* the
minimizer's argmin policy from the upper recursion. Against v* no u can beat
the upper value, and against u* no v can push below the lower value, so the
pair is an epsilon-saddle with epsilon = upper - lower (plus any one-step
duality gap the recursion carried).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import TransitionKernel
from .dpp import Policy, ValueField, _Stepper, evaluate_policies, solve_game
from .hamiltonian import minimax
from .model import GameSpec, Grid, SpecError

ARITH_TOL = 1e-12   # relative allowance for rounding in the payoff comparisons


@dataclass
class Extraction:
    u_star: Policy
    v_star: Policy
    epsilon: float
    field_gap: float
    one_step_gap: float
    lower: ValueField
    upper: ValueField


def _one_step_gap(spec: GameSpec, grid: Grid, kernel: TransitionKernel, lower: ValueField,
                  stepper: _Stepper) -> float:
    """Sum over steps of the worst node gap between inf-sup and sup-inf of the pair stack."""
    total = 0.0
    for n in range(grid.n_t):
        r = minimax(stepper.stacks(lower.values[n + 1], n)[0])
        total += float(np.max(r["upper"] - r["lower"], initial=0.0))
    return total


def extract(spec: GameSpec, grid: Grid, kernel: TransitionKernel,
            lower_field: Optional[ValueField] = None, upper_field: Optional[ValueField] = None,
            threads: int = 1) -> Extraction:
    """Saddle candidates and the scheme epsilon; solves either side that is not supplied."""
    lo, lu, _ = solve_game(spec, grid, kernel, "lower", threads)
    up, _, uv = solve_game(spec, grid, kernel, "upper", threads)
    if lower_field is not None and not np.array_equal(lower_field.values, lo.values):
        raise SpecError("lower_field was not solved on this grid and kernel")
    if upper_field is not None and not np.array_equal(upper_field.values, up.values):
        raise SpecError("upper_field was not solved on this grid and kernel")
    st = _Stepper(spec, grid, kernel, threads)
    field_gap = float(np.max(np.abs(up.values - lo.values)))
    step_gap = _one_step_gap(spec, grid, kernel, lo, st)
    return Extraction(Policy(spec.U, lu.index, "u*"), Policy(spec.V, uv.index, "v*"),
                      field_gap + step_gap, field_gap, step_gap, lo, up)


def best_response(spec: GameSpec, grid: Grid, kernel: TransitionKernel, fixed: Policy,
                  side: str, threads: int = 1) -> Policy:
    """Backward best response of one player against a fixed feedback opponent.

    ``side="u"`` maximizes against a fixed v-policy; ``side="v"`` minimizes
    against a fixed u-policy. Ties go to the lowest control index.
    """
    if side not in ("u", "v"):
        raise ValueError("side must be 'u' or 'v'")
    st = _Stepper(spec, grid, kernel, threads)
    inner = grid.interior
    values = st.frozen.copy()
    out = np.zeros((grid.n_t,) + grid.shape, dtype=np.int16)
    for n in range(grid.n_t - 1, -1, -1):
        Y = st.stacks(values, n)[0]
        opp = fixed.index[n][inner].astype(np.intp)
        if side == "u":
            col = np.take_along_axis(Y, opp[None, None], axis=1)[:, 0]
            pick = np.argmax(col, axis=0)
        else:
            col = np.take_along_axis(Y, opp[None, None], axis=0)[0]
            pick = np.argmin(col, axis=0)
        y = np.take_along_axis(col, pick[None], axis=0)[0]
        values = st.frozen.copy()
        values[inner] = y
        out[n][inner] = pick
    controls = spec.U if side == "u" else spec.V
    return Policy(controls, out, f"best-response-{side}")


@dataclass
class DeviationTrial:
    policy_id: str
    side: str
    payoff: float
    gain: float
    violation: float


@dataclass
class SaddleCertificate:
    epsilon: float
    value_at_origin: float
    u_star: str
    v_star: str
    trials: list = field(default_factory=list)
    seed: int = 0
    arith_tol: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def violations(self) -> list:
        return [t for t in self.trials if t.violation > self.arith_tol]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "value_at_origin": self.value_at_origin,
                "u_star": self.u_star, "v_star": self.v_star, "seed": self.seed,
                "arith_tol": self.arith_tol, "passed": self.passed,
                "n_trials": len(self.trials), "n_violations": len(self.violations),
                "max_gain": max((t.gain for t in self.trials), default=0.0),
                "trials": [t.__dict__ for t in self.trials], "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def verify(spec: GameSpec, grid: Grid, kernel: TransitionKernel, u_star: Policy, v_star: Policy,
           deviations: int = 100, seed: int = 0, epsilon: float = 0.0,
           threads: int = 1, best_responses: bool = True) -> SaddleCertificate:
    """Check both saddle inequalities at the origin against random and best-response deviations.

    Trial i draws a random u-policy and a random v-policy from its own spawned
    seed; the u-deviation is played against v* and the v-deviation against u*.
    """
    center = evaluate_policies(spec, grid, kernel, u_star, v_star).at_origin()
    tol = ARITH_TOL * max(1.0, abs(center))

    def trial(u_dev: Optional[Policy], v_dev: Optional[Policy], pid: str):
        rows = []
        if u_dev is not None:
            J = evaluate_policies(spec, grid, kernel, u_dev, v_star).at_origin()
            gain = J - center
            rows.append(DeviationTrial(pid, "u", J, gain, max(0.0, gain - epsilon)))
        if v_dev is not None:
            J = evaluate_policies(spec, grid, kernel, u_star, v_dev).at_origin()
            gain = center - J
            rows.append(DeviationTrial(pid, "v", J, gain, max(0.0, gain - epsilon)))
        return rows

    def random_trial(i_ss):
        i, ss = i_ss
        ru, rv = (np.random.default_rng(s) for s in ss.spawn(2))
        return trial(Policy.random(spec.U, grid, ru, f"random-{i}-u"),
                     Policy.random(spec.V, grid, rv, f"random-{i}-v"), f"random-{i}")

    children = list(enumerate(np.random.SeedSequence(seed).spawn(deviations)))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(random_trial, children))
    else:
        chunks = [random_trial(c) for c in children]
    trials = [t for rows in chunks for t in rows]
    if best_responses:
        bu = best_response(spec, grid, kernel, v_star, "u", threads)
        bv = best_response(spec, grid, kernel, u_star, "v", threads)
        trials += trial(bu, bv, "best-response")
    return SaddleCertificate(epsilon, center, u_star.name, v_star.name, trials, seed, tol,
                             {"deviations": deviations, "n_t": grid.n_t,
                              "resolution": list(grid.spatial_shape)})
