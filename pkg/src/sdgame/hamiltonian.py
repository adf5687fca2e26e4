"""Lower/upper Hamiltonians by exhaustive sup-inf and inf-sup over finite control sets."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import Coefficients, GameSpec, SpecError, _jsonable, sample_reach


@dataclass(frozen=True)
class HamiltonianInput:
    t: float
    x: np.ndarray
    y: float
    z: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if g.shape != (z.size, z.size):
            raise SpecError(f"gamma must be {z.size}x{z.size}")
        if np.max(np.abs(g - g.T)) > 1e-12:
            raise SpecError("gamma must be symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class HamiltonianResult:
    lower: float
    upper: float
    lower_u: int
    lower_v: int
    upper_v: int
    upper_u: int

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def payoff_array(t, x, y, z, gamma, u, v, coeffs: Coefficients) -> np.ndarray:
    """½ tr(sigma² gamma) + (sigma b)·z + f(t, x, y, z sigma, u, v), vectorized over rows.

    ``x`` is (N, k), ``y`` (N,), ``z`` (N, d), ``gamma`` (N, d, d) or None for zero.
    """
    sig = np.atleast_2d(np.asarray(coeffs.sigma(t, u, v), dtype=float))
    a = sig @ sig.T
    mu = coeffs.effective_drift(t, u, v)
    out = z @ mu
    if gamma is not None:
        out = 0.5 * np.einsum("ij,nij->n", a, gamma) + out
    if coeffs.f is not None:
        out = out + np.asarray(coeffs.f(t, x, y, z @ sig, u, v), dtype=float)
    return out


def payoff(inp: HamiltonianInput, u, v, coeffs: Coefficients) -> float:
    return float(payoff_array(inp.t, inp.x[None, :], np.array([inp.y]), inp.z[None, :],
                              inp.gamma[None, :, :], u, v, coeffs)[0])


def minimax(P: np.ndarray) -> dict:
    """Sup-inf and inf-sup of a payoff stack ``P[u, v, ...]``.

    Ties go to the lowest control index on both sides.
    """
    inner_min = P.min(axis=1)
    lower_u = np.argmax(inner_min, axis=0)
    lower = np.take_along_axis(inner_min, lower_u[None], axis=0)[0]
    argmin_v = np.argmin(P, axis=1)
    lower_v = np.take_along_axis(argmin_v, lower_u[None], axis=0)[0]

    inner_max = P.max(axis=0)
    upper_v = np.argmin(inner_max, axis=0)
    upper = np.take_along_axis(inner_max, upper_v[None], axis=0)[0]
    argmax_u = np.argmax(P, axis=0)
    upper_u = np.take_along_axis(argmax_u, upper_v[None], axis=0)[0]
    return {"lower": lower, "upper": upper, "lower_u": lower_u, "lower_v": lower_v,
            "upper_u": upper_u, "upper_v": upper_v}


def lower_upper(inp: HamiltonianInput, spec: GameSpec) -> HamiltonianResult:
    P = np.array([[payoff(inp, u, v, spec.coefficients) for v in spec.V.points]
                  for u in spec.U.points])
    r = minimax(P)
    return HamiltonianResult(float(r["lower"]), float(r["upper"]), int(r["lower_u"]),
                             int(r["lower_v"]), int(r["upper_v"]), int(r["upper_u"]))


@dataclass
class IsaacsReport:
    max_gap: float
    witness: dict
    samples: int
    tolerance: float
    seed: int

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tolerance

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_gap": self.max_gap, "witness": self.witness,
                "samples": self.samples, "tolerance": self.tolerance, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def sample_inputs(spec: GameSpec, n: int, rng: np.random.Generator) -> dict:
    """Random (t, x, y, z, gamma) over the ranges the solvers visit."""
    d, c = spec.d, spec.coefficients
    reach = sample_reach(spec)
    t = rng.uniform(0.0, spec.T, n)
    x = np.array(spec.x0) + rng.uniform(-reach, reach, (n, d))
    if spec.augmentation is not None:
        aug = spec.augmentation
        x = np.concatenate([x, rng.uniform(aug.lo, aug.hi, (n, 1))], axis=1)
    ybound = spec.value_bound()
    y = rng.uniform(-ybound, ybound, n)
    z = rng.uniform(-10.0, 10.0, (n, d))
    q, _ = np.linalg.qr(rng.standard_normal((n, d, d)))
    lam = rng.uniform(-10.0, 10.0, (n, d))
    gamma = np.einsum("nij,nj,nkj->nik", q, lam, q)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, 1, 2))
    # pin one sample at the degenerate point z = 0, gamma = 0
    z[0] = 0.0
    gamma[0] = 0.0
    return {"t": t, "x": x, "y": y, "z": z, "gamma": gamma}


def isaacs_check(spec: GameSpec, sample_count: int = 10_000, tolerance: float = 1e-10,
                 seed: int = 0) -> IsaacsReport:
    if sample_count < 1:
        raise SpecError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    s = sample_inputs(spec, sample_count, rng)
    c = spec.coefficients
    P = np.empty((len(spec.U), len(spec.V), sample_count))
    if c.time_homogeneous:
        for iu, iv, u, v in spec.pairs():
            P[iu, iv] = payoff_array(0.0, s["x"], s["y"], s["z"], s["gamma"], u, v, c)
    else:
        for n in range(sample_count):
            sl = slice(n, n + 1)
            for iu, iv, u, v in spec.pairs():
                P[iu, iv, n] = payoff_array(s["t"][n], s["x"][sl], s["y"][sl], s["z"][sl],
                                            s["gamma"][sl], u, v, c)[0]
    r = minimax(P)
    gap = r["upper"] - r["lower"]
    i = int(np.argmax(gap))
    witness = {"t": float(s["t"][i]), "x": s["x"][i].tolist(), "y": float(s["y"][i]),
               "z": s["z"][i].tolist(), "gamma": s["gamma"][i].tolist(),
               "lower": float(r["lower"][i]), "upper": float(r["upper"][i]),
               "lower_u": _jsonable(spec.U[int(r["lower_u"][i])]),
               "upper_v": _jsonable(spec.V[int(r["upper_v"][i])])}
    return IsaacsReport(float(gap[i]), witness, sample_count, float(tolerance), seed)
