"""Explicit monotone finite differences for the Markovian Bellman-Isaacs equation.

Solves  -dY/dt - G(t, x, Y, DY, D2Y) = 0  backward from the terminal payoff on a
box, with Dirichlet data on the lateral boundary. G is the lower, upper or
common Hamiltonian, evaluated through :mod:`sdgame.hamiltonian` on difference
quotients: three-point second differences, a sign-matched seven-point cross
difference, and first differences that are central where the control pair's
stencil stays monotone and upwinded otherwise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import stencil
from .chain import build_kernel
from .dpp import ValueField, solve_game
from .hamiltonian import IsaacsReport, isaacs_check, minimax, payoff_array
from .model import CFLError, GameSpec, Grid, SpecError, _jsonable, build_grid


class EllipticityError(SpecError):
    def __init__(self, t, u, v, smallest):
        self.witness = {"t": float(t), "u": _jsonable(u), "v": _jsonable(v),
                        "min_eigenvalue_sigma": float(smallest)}
        super().__init__(f"sigma is not uniformly elliptic at {self.witness}")


class IsaacsRefusal(SpecError):
    """Cross-check refused: the lower and upper Hamiltonians differ."""

    def __init__(self, report: IsaacsReport):
        self.report = report
        super().__init__(f"Isaacs condition fails (max gap {report.max_gap:.3g} > "
                         f"{report.tolerance:.3g}); lower and upper equations differ")


@dataclass
class PdeProblem:
    spec: GameSpec
    box: Optional[tuple] = None           # ((lo, hi), ...) per spatial axis; default: whole grid
    terminal: Optional[Callable] = None   # (N, k) -> (N,), default spec.terminal
    boundary: Optional[Callable] = None   # (t, (N, k)) -> (N,), default frozen terminal
    c0: Optional[float] = None            # ellipticity floor for sigma; default: any positive
    seam_tol: float = 1e-8
    checked: dict = field(default_factory=dict)

    def terminal_values(self, x):
        return (self.terminal or self.spec.terminal)(x)

    def boundary_values(self, t, x):
        if self.boundary is None:
            return self.terminal_values(x)
        return self.boundary(t, x)

    def check_ellipticity(self, times) -> float:
        c = self.spec.coefficients
        smallest = np.inf
        for t in times:
            for _, _, u, v in self.spec.pairs():
                lam = float(np.linalg.eigvalsh(np.atleast_2d(c.sigma(t, u, v))).min())
                floor = self.c0 if self.c0 is not None else 0.0
                if lam <= floor or lam <= 0.0:
                    raise EllipticityError(t, u, v, lam)
                smallest = min(smallest, lam)
        self.checked["min_sigma_eigenvalue"] = smallest
        return smallest


def restrict(grid: Grid, box) -> Grid:
    """Sub-lattice of ``grid`` whose nodes lie in ``box`` (same time grid)."""
    if box is None:
        return grid
    axes = []
    for ax, (lo, hi) in zip(grid.axes, box):
        sel = ax[(ax >= lo - 1e-12) & (ax <= hi + 1e-12)]
        if sel.size < 3:
            raise SpecError("localized box must contain at least 3 nodes per axis")
        sel = sel.copy()
        sel.setflags(write=False)
        axes.append(sel)
    return Grid(grid.T, grid.n_t, tuple(axes), grid.x0, grid.aug_axis, grid.aug_start,
                grid.pure_drift)


def _diff_quotients(V: np.ndarray, dx, d: int):
    """Interior first/second differences of a (spatial-only) field."""
    def sh(*off):
        return V[tuple(slice(1 + o, V.shape[i] - 1 + o) for i, o in enumerate(off))]

    c = sh(*([0] * d))
    out = {"center": c, "fwd": [], "bwd": [], "cen": [], "second": []}
    for i in range(d):
        e = [0] * d
        e[i] = 1
        p = sh(*e)
        e[i] = -1
        m = sh(*e)
        out["fwd"].append((p - c) / dx[i])
        out["bwd"].append((c - m) / dx[i])
        out["cen"].append((p - m) / (2 * dx[i]))
        out["second"].append((p - 2 * c + m) / dx[i] ** 2)
    if d == 2:
        axis_sum = sh(1, 0) + sh(-1, 0) + sh(0, 1) + sh(0, -1)
        out["cross_pos"] = (2 * c + sh(1, 1) + sh(-1, -1) - axis_sum) / (2 * dx[0] * dx[1])
        out["cross_neg"] = -(2 * c + sh(1, -1) + sh(-1, 1) - axis_sum) / (2 * dx[0] * dx[1])
    return out


def solve_pde(problem: PdeProblem, grid: Grid, side: str = "isaacs", threads: int = 1) -> ValueField:
    """Backward explicit solve; ``side`` is ``lower``, ``upper`` or ``isaacs``."""
    if side not in ("lower", "upper", "isaacs"):
        raise ValueError("side must be lower, upper or isaacs")
    spec = problem.spec
    if spec.augmentation is not None:
        raise SpecError("the PDE solver handles Markovian states only (no augmented statistic)")
    c = spec.coefficients
    g = restrict(grid, problem.box)
    d, dt, dx = g.d, g.dt, g.dx
    times = g.times
    probe_times = [0.0] if c.time_homogeneous else times[:-1]
    problem.check_ellipticity(probe_times)

    rate = 0.0
    for t in probe_times:
        for _, _, u, v in spec.pairs():
            rate = max(rate, stencil.leaving_rate(c.covariance(t, u, v), c.effective_drift(t, u, v), dx))
    if dt * rate > 1.0 + 1e-12 or dt * c.L0 >= 1.0:
        n_min = int(np.ceil(g.T * max(rate, c.L0 + 1e-12) * (1 - 1e-12)))
        raise CFLError(g.n_t, n_min, "the explicit scheme's monotonicity bound")

    coords = g.node_coords()
    x_int = coords[g.interior].reshape(-1, d)
    bmask = g.boundary_mask()
    xb = coords[bmask]
    T_vals = problem.terminal_values(coords)
    seam = float(np.max(np.abs(problem.boundary_values(g.T, xb) - T_vals[bmask])))
    if seam > problem.seam_tol:
        raise SpecError(f"boundary and terminal data disagree on the corner seam by {seam:.3g}")

    nU, nV = len(spec.U), len(spec.V)
    values = np.full((g.n_t + 1,) + g.shape, np.nan)
    zs = np.zeros((g.n_t + 1,) + g.shape + (d,))
    values[g.n_t] = T_vals
    gap_max = 0.0
    # per-pair scheme data (time-homogeneous coefficients reuse step 0)
    cache = {}

    def pair_data(t, iu, iv, u, v):
        key = (t if not c.time_homogeneous else 0.0, iu, iv)
        if key not in cache:
            a = c.covariance(t, u, v)
            mu = c.effective_drift(t, u, v)
            a12 = 0.5 * (a[0, 1] + a[1, 0]) if d == 2 else 0.0
            diag_eff = [a[i, i] - (abs(a12) * dx[i] / dx[1 - i] if d == 2 else 0.0) for i in range(d)]
            central = [abs(mu[i]) * dx[i] <= diag_eff[i] for i in range(d)]
            cache[key] = (mu, a12, central)
        return cache[key]

    for n in range(g.n_t - 1, -1, -1):
        t = times[n]
        V = values[n + 1]
        q = _diff_quotients(V, dx, d)
        y_flat = q["center"].reshape(-1)
        P = np.empty((nU, nV, y_flat.size))
        Zp = np.empty((nU, nV, y_flat.size, d))

        def row(iu):
            u = spec.U[iu]
            for iv in range(nV):
                v = spec.V[iv]
                mu, a12, central = pair_data(t, iu, iv, u, v)
                z = np.empty((y_flat.size, d))
                for i in range(d):
                    if central[i]:
                        z[:, i] = q["cen"][i].reshape(-1)
                    else:
                        z[:, i] = (q["fwd"][i] if mu[i] > 0 else q["bwd"][i]).reshape(-1)
                gam = np.zeros((y_flat.size, d, d))
                for i in range(d):
                    gam[:, i, i] = q["second"][i].reshape(-1)
                if d == 2 and a12 != 0.0:
                    cross = (q["cross_pos"] if a12 > 0 else q["cross_neg"]).reshape(-1)
                    gam[:, 0, 1] = gam[:, 1, 0] = cross
                P[iu, iv] = payoff_array(t, x_int, y_flat, z, gam, u, v, c)
                Zp[iu, iv] = z

        if threads > 1 and nU > 1:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(row, range(nU)))
        else:
            for iu in range(nU):
                row(iu)
        r = minimax(P)
        if side == "upper":
            H, iu_sel, iv_sel = r["upper"], r["upper_u"], r["upper_v"]
        else:
            H, iu_sel, iv_sel = r["lower"], r["lower_u"], r["lower_v"]
            if side == "isaacs":
                gap_max = max(gap_max, float(np.max(r["upper"] - r["lower"])))
        new = np.empty(g.shape)
        new[g.interior] = (y_flat + dt * H).reshape(g.interior_shape)
        new[bmask] = problem.boundary_values(t, xb)
        values[n] = new
        flat = iu_sel * nV + iv_sel
        zsel = np.take_along_axis(Zp.reshape(nU * nV, -1, d), flat[None, :, None], axis=0)[0]
        zs[n][g.interior] = zsel.reshape(g.interior_shape + (d,))
    meta = {"side": side, "hamiltonian_gap_max": gap_max, "seam": seam,
            "min_sigma_eigenvalue": problem.checked.get("min_sigma_eigenvalue")}
    return ValueField(g, f"pde-{side}", values, zs, np.zeros(values.shape, dtype=bool), meta)


def sample_field(field_: ValueField, points, n: int = 0) -> np.ndarray:
    """Multilinear interpolation of one slice at spatial points (P, d)."""
    g = field_.grid
    vals = field_.values[n]
    if g.aug_axis is not None:
        vals = vals[..., g.origin_index[-1]]
    interp = RegularGridInterpolator(g.axes, vals, method="linear")
    return interp(np.atleast_2d(points))


def default_probes(spec: GameSpec, grid: Grid) -> np.ndarray:
    x0 = np.array(spec.x0)
    half = min(float(ax[-1] - ax[0]) for ax in grid.axes) / 2
    pts = [x0]
    for frac in (0.1, 0.25):
        for i in range(spec.d):
            for s in (-1, 1):
                p = x0.copy()
                p[i] += s * frac * half
                pts.append(p)
    return np.array(pts)


def cross_check(spec: GameSpec, grid_dpp: Grid, grid_pde: Grid, tolerance: Optional[float] = None,
                probes=None, threads: int = 1, isaacs_samples: int = 2000,
                isaacs_tol: float = 1e-10) -> dict:
    """Compare the lattice game value with the PDE solution at probe points.

    Refuses (raises :class:`IsaacsRefusal`) when the Isaacs condition fails.
    With ``tolerance=None`` the tolerance is the sum of both solvers' changes
    between the given grids and half-resolution grids at the probes.
    """
    rep = isaacs_check(spec, isaacs_samples, isaacs_tol)
    if not rep.passed:
        raise IsaacsRefusal(rep)
    probes = default_probes(spec, grid_dpp) if probes is None else np.atleast_2d(probes)

    def dpp_vals(g):
        k = build_kernel(spec, g)
        lo, _, _ = solve_game(spec, g, k, "lower", threads)
        up, _, _ = solve_game(spec, g, k, "upper", threads)
        return sample_field(lo, probes), sample_field(up, probes)

    def pde_vals(g):
        return sample_field(solve_pde(PdeProblem(spec), g, "isaacs", threads), probes)

    lo, up = dpp_vals(grid_dpp)
    pde = pde_vals(grid_pde)
    dev = np.maximum(np.abs(lo - pde), np.abs(up - pde))
    report = {"probes": probes.tolist(), "dpp_lower": lo.tolist(), "dpp_upper": up.tolist(),
              "pde": pde.tolist(), "deviation": dev.tolist(), "max_deviation": float(dev.max()),
              "isaacs": rep.to_dict(), "grid_dpp": grid_dpp.describe(),
              "grid_pde": grid_pde.describe()}
    if tolerance is None:
        coarse = [build_grid(spec, resolution=[(len(ax) - 1) // 2 + 1 for ax in g.axes],
                             reach=float(g.axes[0][-1] - g.x0[0])) for g in (grid_dpp, grid_pde)]
        lo_c, _ = dpp_vals(coarse[0])
        pde_c = pde_vals(coarse[1])
        tol = np.abs(lo - lo_c) + np.abs(pde - pde_c)
        report["tolerance_source"] = "refinement"
    else:
        tol = np.full(dev.shape, float(tolerance))
        report["tolerance_source"] = "given"
    report["tolerance"] = tol.tolist()
    report["passed"] = bool(np.all(dev <= tol))
    return report


def refinement_study(spec: GameSpec, resolutions, solver: str = "dpp", threads: int = 1,
                     exact: Optional[float] = None) -> dict:
    """Origin values across successively refined grids (JSON-ready)."""
    rows = []
    for res in resolutions:
        g = build_grid(spec, resolution=res)
        if solver == "dpp":
            k = build_kernel(spec, g)
            lo, _, _ = solve_game(spec, g, k, "lower", threads)
            up, _, _ = solve_game(spec, g, k, "upper", threads)
            row = {"lower": lo.at_origin(), "upper": up.at_origin()}
            row["gap"] = row["upper"] - row["lower"]
            val = row["lower"]
        else:
            f = solve_pde(PdeProblem(spec), g, "isaacs", threads)
            val = f.at_origin()
            row = {"value": val}
        row.update({"resolution": [int(r) for r in np.atleast_1d(res)], "n_t": g.n_t, "dx": list(g.dx)})
        if exact is not None:
            row["error"] = abs(val - exact)
        rows.append(row)
    for prev, cur in zip(rows, rows[1:]):
        if exact is not None and cur["error"] > 0:
            cur["error_ratio"] = prev["error"] / cur["error"]
    return {"solver": solver, "family": spec.family, "rows": rows, "exact": exact}
