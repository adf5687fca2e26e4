"""Backward dynamic programming for lower/upper game values and fixed policy pairs.

Each backward step evaluates, for every control pair, one explicit Euler step
of the BSDE under that pair's transition kernel::

    m = E[V_next],  z = Cov(V_next, dX) Cov(dX)^-1,  y = m + dt * f(t, x, m, z sigma, u, v)

and then reduces over the pair stack by sup-inf (lower), inf-sup (upper) or
by reading the pair off a policy. All three modes share the same arithmetic,
so replaying a solved side's policies reproduces its values bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .chain import TransitionKernel
from .hamiltonian import minimax
from .model import ControlSet, GameSpec, Grid, SpecError, _jsonable


@dataclass(eq=False)
class ValueField:
    grid: Grid
    kind: str
    values: np.ndarray       # (n_t + 1, *shape)
    z: np.ndarray            # (n_t + 1, *shape, d)
    fallback: np.ndarray     # (n_t + 1, *shape) True where z came from finite differences
    meta: dict = field(default_factory=dict)

    def at_origin(self, n: int = 0) -> float:
        return float(self.values[(n,) + self.grid.origin_index])

    def copy(self) -> "ValueField":
        return ValueField(self.grid, self.kind, self.values.copy(), self.z.copy(),
                          self.fallback.copy(), dict(self.meta))


@dataclass(eq=False)
class Policy:
    """Feedback policy: a control index per (time step, node)."""

    controls: ControlSet
    index: np.ndarray        # (n_t, *shape) integer indices into controls
    name: str = ""

    def __post_init__(self):
        self.index = np.asarray(self.index)
        if self.index.size and (self.index.min() < 0 or self.index.max() >= len(self.controls)):
            raise SpecError(f"policy {self.name!r} assigns a value outside its control set")

    def value(self, n: int, node) -> object:
        return self.controls[int(self.index[(n,) + tuple(node)])]

    @classmethod
    def constant(cls, controls: ControlSet, grid: Grid, i: int = 0, name: str = "") -> "Policy":
        return cls(controls, np.full((grid.n_t,) + grid.shape, i, dtype=np.int16), name)

    @classmethod
    def random(cls, controls: ControlSet, grid: Grid, rng: np.random.Generator,
               name: str = "") -> "Policy":
        idx = rng.integers(0, len(controls), size=(grid.n_t,) + grid.shape).astype(np.int16)
        return cls(controls, idx, name)


def _rowdot(z: np.ndarray, m: np.ndarray) -> np.ndarray:
    """z @ m as fixed-order elementwise sums (independent of batch size, unlike BLAS)."""
    m = m.reshape(z.shape[1], -1)
    out = np.zeros((z.shape[0], m.shape[1]))
    for j in range(m.shape[1]):
        for i in range(z.shape[1]):
            out[:, j] += z[:, i] * m[i, j]
    return out


class _Stepper:
    """Per-step pair stacks shared by every reduction mode."""

    def __init__(self, spec: GameSpec, grid: Grid, kernel: TransitionKernel, threads: int = 1):
        self.spec, self.grid, self.kernel = spec, grid, kernel
        self.threads = max(1, int(threads))
        c = spec.coefficients
        coords = grid.node_coords()
        self.coords = coords
        self.x_int = coords[grid.interior].reshape(-1, spec.k)
        self.bmask = grid.boundary_mask()
        self.frozen = spec.terminal(coords)
        dx = np.array(grid.dx)
        disp = kernel.offsets * dx
        # deviation of each move from the pair's mean increment: (S, nU, nV, K, d)
        self.dev = disp[None, None, None] - kernel.mean[:, :, :, None, :]
        cov = np.array(kernel.cov)
        self.cov_inv = np.zeros_like(cov)
        for idx in np.ndindex(cov.shape[:3]):
            if not kernel.degenerate[idx]:
                self.cov_inv[idx] = np.linalg.inv(cov[idx])
        self.sig = {}
        for s in range(kernel.probs.shape[0]):
            t = grid.times[s]
            for iu, iv, u, v in spec.pairs():
                self.sig[s, iu, iv] = np.atleast_2d(np.asarray(c.sigma(t, u, v), dtype=float))
        d = grid.d
        self.unit = [tuple(1 if j == i else 0 for j in range(d)) for i in range(d)]
        offs = [tuple(o) for o in kernel.offsets.tolist()]
        self.unit_k = [offs.index(e) for e in self.unit]
        self.center_k = offs.index((0,) * d)

    def stacks(self, values_next: np.ndarray, n: int):
        """Y (nU, nV, *interior), Z (nU, nV, *interior, d), FB (nU, nV) for step n -> n+1."""
        kern, g = self.kernel, self.grid
        S = kern.neighbor_values(values_next, n)
        nU, nV = len(self.spec.U), len(self.spec.V)
        Y = np.empty((nU, nV) + g.interior_shape)
        Z = np.empty((nU, nV) + g.interior_shape + (g.d,))
        FB = np.zeros((nU, nV), dtype=bool)

        def row(iu):
            for iv in range(nV):
                Y[iu, iv], Z[iu, iv], FB[iu, iv] = self._pair(S, n, iu, iv)

        if self.threads > 1 and nU > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(row, range(nU)))
        else:
            for iu in range(nU):
                row(iu)
        return Y, Z, FB

    def _pair(self, S, n, iu, iv, x=None):
        """One BSDE step for pair (iu, iv); S is (K, ...) and x the matching node coordinates."""
        kern, g, spec = self.kernel, self.grid, self.spec
        x = self.x_int if x is None else x
        s = kern.step(n)
        p = kern.probs[s, iu, iv]
        dev = self.dev[s, iu, iv]
        m = np.zeros(S.shape[1:])
        covs = np.zeros((g.d,) + S.shape[1:])
        for k in range(kern.K):
            if p[k] == 0.0:
                continue
            m += p[k] * S[k]
            for i in range(g.d):
                covs[i] += (p[k] * dev[k, i]) * S[k]
        degenerate = bool(kern.degenerate[s, iu, iv])
        if degenerate:
            z = np.stack([(S[self.unit_k[i]] - S[self.center_k]) / g.dx[i] for i in range(g.d)],
                         axis=-1)
        else:
            ci = self.cov_inv[s, iu, iv]
            z = np.stack([sum(covs[i] * ci[i, j] for i in range(g.d)) for j in range(g.d)], axis=-1)
        c = spec.coefficients
        if c.f is None:
            y = m
        else:
            u, v = spec.U[iu], spec.V[iv]
            sig = self.sig[s, iu, iv]
            zflat = z.reshape(-1, g.d)
            fval = np.asarray(c.f(g.times[n], x, m.reshape(-1), _rowdot(zflat, sig), u, v),
                              dtype=float).reshape(m.shape)
            y = m + g.dt * fval
        return y, z, degenerate

    def policy_step(self, values_next: np.ndarray, n: int, iu: np.ndarray, iv: np.ndarray):
        """Step n -> n+1 under node-wise pair indices (interior-shaped), computing only used pairs.

        Per node the arithmetic matches ``_pair`` exactly, so results equal the
        corresponding entries of ``stacks``.
        """
        g = self.grid
        S = self.kernel.neighbor_values(values_next, n)
        y = np.empty(g.interior_shape)
        z = np.empty(g.interior_shape + (g.d,))
        fb = np.zeros(g.interior_shape, dtype=bool)
        flat = iu.astype(np.int64) * len(self.spec.V) + iv
        for code in np.unique(flat):
            a, b = divmod(int(code), len(self.spec.V))
            mask = flat == code
            yy, zz, deg = self._pair(S[:, mask], n, a, b, self.x_int[mask.reshape(-1)])
            y[mask], z[mask], fb[mask] = yy, zz, deg
        return y, z, fb


def _run(spec: GameSpec, grid: Grid, kernel: TransitionKernel, mode: str,
         terminal: Optional[np.ndarray] = None, n_top: Optional[int] = None, n_bottom: int = 0,
         policies=None, threads: int = 1, stepper: Optional[_Stepper] = None):
    """Backward pass from slice ``n_top`` (holding ``terminal``) down to ``n_bottom``."""
    st = stepper or _Stepper(spec, grid, kernel, threads)
    n_top = grid.n_t if n_top is None else n_top
    shape = grid.shape
    values = np.full((grid.n_t + 1,) + shape, np.nan)
    z = np.zeros((grid.n_t + 1,) + shape + (grid.d,))
    fb = np.zeros((grid.n_t + 1,) + shape, dtype=bool)
    values[n_top] = st.frozen if terminal is None else terminal
    u_idx = np.zeros((grid.n_t,) + shape, dtype=np.int16)
    v_idx = np.zeros((grid.n_t,) + shape, dtype=np.int16)
    inner = grid.interior
    if mode not in ("lower", "upper", "policy"):
        raise ValueError(f"unknown mode {mode!r}")
    for n in range(n_top - 1, n_bottom - 1, -1):
        if mode == "policy":
            iu = policies[0].index[n][inner].astype(np.intp)
            iv = policies[1].index[n][inner].astype(np.intp)
            y, zz, fbn = st.policy_step(values[n + 1], n, iu, iv)
        else:
            Y, Z, FB = st.stacks(values[n + 1], n)
            r = minimax(Y)
            y, iu, iv = r[mode], r[mode + "_u"], r[mode + "_v"]
            flat = (iu * Y.shape[1] + iv)
            zz = np.take_along_axis(Z.reshape((-1,) + Z.shape[2:]), flat[None, ..., None], axis=0)[0]
            fbn = FB.reshape(-1)[flat]
        slice_vals = st.frozen.copy()
        slice_vals[inner] = y
        values[n] = slice_vals
        z[n][inner] = zz
        fb[n][inner] = fbn
        u_idx[n][inner] = iu
        v_idx[n][inner] = iv
    meta = {"fd_fallback_nodes": int(fb.sum()), "n_top": n_top, "n_bottom": n_bottom}
    field_ = ValueField(grid, mode if mode != "policy" else "fixed-policy", values, z, fb, meta)
    return field_, u_idx, v_idx


def solve_game(spec: GameSpec, grid: Grid, kernel: TransitionKernel, side: str = "lower",
               threads: int = 1):
    """Lower (sup-inf) or upper (inf-sup) value field plus the optimizing policies."""
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    field_, u_idx, v_idx = _run(spec, grid, kernel, side, threads=threads)
    return (field_, Policy(spec.U, u_idx, f"{side}-u"), Policy(spec.V, v_idx, f"{side}-v"))


def evaluate_policies(spec: GameSpec, grid: Grid, kernel: TransitionKernel, u_policy: Policy,
                      v_policy: Policy, threads: int = 1, n_top: Optional[int] = None,
                      n_bottom: int = 0, terminal: Optional[np.ndarray] = None) -> ValueField:
    """Discrete BSDE value of a fixed feedback pair (optionally on a sub-window)."""
    for pol in (u_policy, v_policy):
        if pol.index.shape != (grid.n_t,) + grid.shape:
            raise SpecError(f"policy {pol.name!r} is not defined on the whole grid")
    field_, _, _ = _run(spec, grid, kernel, "policy", terminal=terminal, n_top=n_top,
                        n_bottom=n_bottom, policies=(u_policy, v_policy), threads=threads)
    return field_


def _control_index(controls: ControlSet, value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value)
    pts = controls.points.reshape(len(controls), -1)
    hit = np.flatnonzero(np.all(np.isclose(pts, np.atleast_1d(value)), axis=1))
    if hit.size == 0:
        raise SpecError(f"{_jsonable(value)} is not in control set {controls.name!r}")
    return int(hit[0])


def one_step(values_next: np.ndarray, node, n: int, u, v, kernel: TransitionKernel):
    """(y, z) of one explicit BSDE step at ``node`` under the control pair (u, v).

    ``u``/``v`` may be control values or integer indices.
    """
    spec, grid = kernel.spec, kernel.grid
    c = spec.coefficients
    if c.L0 * grid.dt >= 1.0:
        raise SpecError("one_step requires dt * L0 < 1")
    iu, iv = _control_index(spec.U, u), _control_index(spec.V, v)
    st = _Stepper(spec, grid, kernel)
    S = kernel.neighbor_values(values_next, n)
    y, z, _ = st._pair(S, n, iu, iv)
    node = tuple(node)
    if any(i <= 0 or i >= s - 1 for i, s in zip(node[: grid.d], grid.spatial_shape)):
        return float(st.frozen[node]), np.zeros(grid.d)
    inner = tuple(i - 1 for i in node[: grid.d]) + tuple(node[grid.d:])
    return float(y[inner]), np.array(z[inner])


def step_all_pairs(values_next: np.ndarray, n: int, kernel: TransitionKernel,
                   threads: int = 1) -> np.ndarray:
    """One-step values (nU, nV, *interior) of every control pair from a full slice."""
    spec, grid = kernel.spec, kernel.grid
    if spec.coefficients.L0 * grid.dt >= 1.0:
        raise SpecError("the one-step operator requires dt * L0 < 1")
    Y, _, _ = _Stepper(spec, grid, kernel, threads).stacks(np.asarray(values_next, dtype=float), n)
    return Y


def dpp_consistency(spec: GameSpec, grid: Grid, kernel: TransitionKernel, split_index: int,
                    side: str = "lower", transform: Optional[Callable] = None,
                    threads: int = 1) -> float:
    """Max deviation on the initial slice between a full pass and a two-stage pass.

    The second computation solves on [t_split, T], passes that slice (optionally
    through ``transform``) as terminal data, and solves on [0, t_split].
    """
    if not 0 < split_index < grid.n_t:
        raise SpecError("split_index must lie strictly inside the time grid")
    st = _Stepper(spec, grid, kernel, threads)
    full, _, _ = _run(spec, grid, kernel, side, stepper=st)
    late, _, _ = _run(spec, grid, kernel, side, n_bottom=split_index, stepper=st)
    mid = late.values[split_index].copy()
    if transform is not None:
        mid = transform(mid)
    early, _, _ = _run(spec, grid, kernel, side, terminal=mid, n_top=split_index, stepper=st)
    return float(np.max(np.abs(full.values[0] - early.values[0])))
