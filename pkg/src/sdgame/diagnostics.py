"""Empirical bound and regularity suites over solved value fields.

- ``check_bounds``: every node within the discrete Gronwall constant.
- ``weak_duality``: lower <= upper node by node.
- ``modulus_report``: smallest constants making the spatial and temporal
  continuity bounds hold over random probe pairs.
- ``bsde_apriori``: square-integrability and short-horizon bounds for the
  fixed-policy value, with I0 computed along the kernel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .chain import TransitionKernel
from .dpp import Policy, ValueField, evaluate_policies
from .model import GameSpec, Grid, SpecError

REL_TOL = 1e-12


@dataclass
class BoundsReport:
    C: float
    max_abs: float
    worst_node: list
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_bounds(field_: ValueField, spec: GameSpec) -> BoundsReport:
    """|value| <= C at every computed node, C the discrete Gronwall constant for the grid."""
    C = spec.value_bound(field_.grid.n_t)
    a = np.abs(field_.values)
    a = np.where(np.isnan(a), -np.inf, a)
    flat = int(np.argmax(a))
    worst = [int(i) for i in np.unravel_index(flat, a.shape)]
    m = float(a.reshape(-1)[flat])
    return BoundsReport(C, m, worst, m <= C * (1 + REL_TOL))


@dataclass
class DualityReport:
    max_violation: float
    worst_node: list
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def weak_duality(lower: ValueField, upper: ValueField, tol: float = 1e-10) -> DualityReport:
    diff = np.nan_to_num(lower.values - upper.values, nan=-np.inf)
    flat = int(np.argmax(diff))
    worst = [int(i) for i in np.unravel_index(flat, diff.shape)]
    v = float(diff.reshape(-1)[flat])
    return DualityReport(v, worst, v <= tol)


def rho1(spec: GameSpec, delta):
    """Temporal reference modulus rho0(d + d^(1/4)) + d + d^(1/4)."""
    delta = np.asarray(delta, dtype=float)
    q = delta ** 0.25
    return spec.coefficients.rho(delta + q) + delta + q


@dataclass
class RegularityReport:
    spatial: np.ndarray          # (P, 3): distance, gap, rho0(distance)
    temporal: np.ndarray         # (P, 3): time distance, gap, rho1(distance)
    C_spatial: float
    C_temporal: float
    temporal_exponent: Optional[float]
    probes: int
    seed: int
    passed: bool = True
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"C_spatial": self.C_spatial, "C_temporal": self.C_temporal,
                "temporal_exponent": self.temporal_exponent, "probes": self.probes,
                "seed": self.seed, "passed": self.passed, "meta": self.meta}


def _fit(gaps: np.ndarray, ref: np.ndarray) -> float:
    ok = ref > 0
    if not ok.any():
        return 0.0
    return float(np.max(gaps[ok] / ref[ok], initial=0.0))


def modulus_report(field_: ValueField, spec: GameSpec, probes: int = 2000,
                   seed: int = 0) -> RegularityReport:
    """Random probe pairs: node pairs within a slice and slice pairs at a node.

    Probes come from one ``rng.random((probes, width))`` draw, so a larger
    probe count extends the smaller set and the fitted constants can only grow.
    """
    if probes < 1:
        raise SpecError("probes must be >= 1")
    g = field_.grid
    shape = g.shape
    slices = np.flatnonzero(~np.isnan(field_.values.reshape(g.n_t + 1, -1)[:, 0]))
    coords = g.node_coords()
    r = np.random.default_rng(seed).random((probes, 3 + 2 * len(shape)))
    n = slices[(r[:, 0] * slices.size).astype(int)]
    k = len(shape)
    a = tuple((r[:, 1 + i] * shape[i]).astype(int) for i in range(k))
    b = tuple((r[:, 1 + k + i] * shape[i]).astype(int) for i in range(k))
    va, vb = field_.values[(n,) + a], field_.values[(n,) + b]
    dist = np.max(np.abs(coords[a] - coords[b]), axis=-1)
    sgap = np.abs(va - vb)
    sref = spec.coefficients.rho(dist)
    n1 = slices[(r[:, -2] * slices.size).astype(int)]
    n2 = slices[(r[:, -1] * slices.size).astype(int)]
    tdist = np.abs(g.times[n1] - g.times[n2])
    tgap = np.abs(field_.values[(n1,) + a] - field_.values[(n2,) + a])
    tref = rho1(spec, tdist)
    expo = None
    ok = (tdist > 0) & (tgap > 0)
    if ok.sum() >= 2 and np.ptp(np.log(tdist[ok])) > 0:
        expo = float(np.polyfit(np.log(tdist[ok]), np.log(tgap[ok]), 1)[0])
    Cs, Ct = _fit(sgap, sref), _fit(tgap, tref)
    return RegularityReport(np.column_stack([dist, sgap, sref]), np.column_stack([tdist, tgap, tref]),
                            Cs, Ct, expo, probes, seed, bool(np.isfinite(Cs) and np.isfinite(Ct)),
                            {"kind": field_.kind, "n_t": g.n_t, "resolution": list(g.spatial_shape)})


def modulus_stability(coarse: RegularityReport, fine: RegularityReport, factor: float = 2.0) -> dict:
    """Fitted constants agree within ``factor`` across a refinement (zero matches zero)."""
    def stable(a, b):
        if a == 0.0 or b == 0.0:
            return a == b or max(a, b) < 1e-12
        return 1.0 / factor <= b / a <= factor

    out = {"C_spatial": [coarse.C_spatial, fine.C_spatial],
           "C_temporal": [coarse.C_temporal, fine.C_temporal],
           "spatial_stable": stable(coarse.C_spatial, fine.C_spatial),
           "temporal_stable": stable(coarse.C_temporal, fine.C_temporal)}
    out["passed"] = out["spatial_stable"] and out["temporal_stable"]
    return out


def _policy_expect(kernel: TransitionKernel, values_next: np.ndarray, n: int,
                   iu: np.ndarray, iv: np.ndarray) -> np.ndarray:
    """Kernel expectation with node-wise control pairs (interior-shaped result)."""
    S = kernel.neighbor_values(values_next, n)
    P = kernel.probs[kernel.step(n)][iu, iv]          # (*interior, K)
    m = np.zeros(S.shape[1:])
    for k in range(kernel.K):
        m += P[..., k] * S[k]
    return m


def _zero_driver(spec: GameSpec, grid: Grid, n: int, x: np.ndarray, iu, iv) -> np.ndarray:
    c = spec.coefficients
    out = np.zeros(x.shape[0])
    if c.f is None:
        return out
    y0 = np.zeros(x.shape[0])
    z0 = np.zeros((x.shape[0], spec.d))
    for code in np.unique(iu * len(spec.V) + iv):
        a, b = divmod(int(code), len(spec.V))
        mask = (iu == a) & (iv == b)
        out[mask] = np.asarray(c.f(grid.times[n], x[mask], y0[mask], z0[mask], spec.U[a], spec.V[b]),
                               dtype=float)
    return out


def integrability(spec: GameSpec, grid: Grid, kernel: TransitionKernel, u_policy: Policy,
                  v_policy: Policy, n_bottom: int = 0):
    """(E xi^2, I0^2) from slice ``n_bottom`` along the controlled chain; boundary absorbs."""
    inner = grid.interior
    coords = grid.node_coords()
    x_int = coords[inner].reshape(-1, spec.k)
    xi2 = spec.terminal(coords) ** 2
    K, J = xi2.copy(), xi2.copy()
    for n in range(grid.n_t - 1, n_bottom - 1, -1):
        iu = u_policy.index[n][inner].astype(np.intp)
        iv = v_policy.index[n][inner].astype(np.intp)
        f0 = _zero_driver(spec, grid, n, x_int, iu.reshape(-1), iv.reshape(-1)).reshape(iu.shape)
        newK, newJ = xi2.copy(), xi2.copy()
        newK[inner] = _policy_expect(kernel, K, n, iu, iv)
        newJ[inner] = _policy_expect(kernel, J, n, iu, iv) + grid.dt * f0**2
        K, J = newK, newJ
    return K, J


@dataclass
class AprioriReport:
    trials: list
    applicable: bool
    reason: str = ""

    @property
    def passed(self) -> bool:
        return all(t["square_ok"] and t["short_ok"] for t in self.trials)

    def to_dict(self) -> dict:
        return {"applicable": self.applicable, "reason": self.reason, "passed": self.passed,
                "n_trials": len(self.trials), "trials": self.trials}


def bsde_apriori(spec: GameSpec, grid: Grid, kernel: TransitionKernel, trials: int = 50,
                 seed: int = 0) -> AprioriReport:
    """Random policy pairs and sub-horizons: check both a-priori bounds at every node.

    With G = (1 + dt L0)^(steps) and delta the remaining horizon:
      |Y| <= G sqrt(1 + delta) I0             (square integrability)
      |Y| <= G (sqrt(E xi^2) + sqrt(delta) I0)  (short horizon)
    The induction behind both needs a driver that ignores z.
    """
    if trials < 1:
        raise SpecError("trials must be >= 1")
    if spec.coefficients.f_uses_z:
        return AprioriReport([], False, "driver depends on z; the induction does not apply")
    L0 = spec.coefficients.L0
    rows = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(ss)
        up = Policy.random(spec.U, grid, rng, f"u-{i}")
        vp = Policy.random(spec.V, grid, rng, f"v-{i}")
        m = int(rng.integers(0, grid.n_t))
        Y = evaluate_policies(spec, grid, kernel, up, vp, n_bottom=m).values[m]
        K, J = integrability(spec, grid, kernel, up, vp, n_bottom=m)
        steps = grid.n_t - m
        delta = steps * grid.dt
        G = (1.0 + grid.dt * L0) ** steps
        I0 = np.sqrt(J)
        b1 = G * math.sqrt(1.0 + delta) * I0
        b2 = G * (np.sqrt(K) + math.sqrt(delta) * I0)
        a = np.abs(Y)
        slack = REL_TOL * max(1.0, float(a.max()))
        rows.append({"trial": i, "start_slice": m, "delta": delta, "G": G,
                     "max_abs_Y": float(a.max()),
                     "square_excess": float(np.max(a - b1)), "short_excess": float(np.max(a - b2)),
                     "square_ok": bool(np.all(a <= b1 + slack)),
                     "short_ok": bool(np.all(a <= b2 + slack))})
    return AprioriReport(rows, True)
