"""Locally consistent Markov-chain kernels for the controlled diffusion on a lattice.

Coefficients do not depend on the state, so one stencil per (time step, u, v)
serves every interior node. Boundary nodes are absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stencil
from .model import GameSpec, Grid, SpecError


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    spec: GameSpec
    grid: Grid
    offsets: np.ndarray      # (K, d) neighbour offsets in lattice units
    probs: np.ndarray        # (S, nU, nV, K) with S = 1 when time-homogeneous
    mean: np.ndarray         # (S, nU, nV, d)
    cov: np.ndarray          # (S, nU, nV, d, d)
    upwinded: np.ndarray     # (S, nU, nV, d)
    degenerate: np.ndarray   # (S, nU, nV)
    consistency: dict

    def step(self, n: int) -> int:
        return 0 if self.probs.shape[0] == 1 else n

    def p(self, n: int, iu: int, iv: int) -> np.ndarray:
        return self.probs[self.step(n), iu, iv]

    @property
    def K(self) -> int:
        return self.offsets.shape[0]

    def _shift(self, arr: np.ndarray, off) -> np.ndarray:
        sl = tuple(slice(1 + o, n - 1 + o) for o, n in zip(off, self.grid.spatial_shape))
        return arr[sl]

    def neighbor_values(self, values_next: np.ndarray, n: int) -> np.ndarray:
        """Values seen after each neighbour move from every interior node, (K, *interior)."""
        g, aug = self.grid, self.spec.augmentation
        out = np.empty((self.K,) + g.interior_shape)
        for k, off in enumerate(self.offsets):
            w = self._shift(values_next, off)
            if aug is None:
                out[k] = w
            else:
                out[k] = self._aug_interp(w, off, n)
        return out

    def _aug_interp(self, w: np.ndarray, off, n: int) -> np.ndarray:
        g, aug = self.grid, self.spec.augmentation
        A = g.aug_axis
        xs = g.axes[aug.axis][1 + off[aug.axis]: len(g.axes[aug.axis]) - 1 + off[aug.axis]]
        shape = [1] * (g.d + 1)
        shape[aug.axis] = xs.size
        x_new = xs.reshape(shape)
        a = A.reshape([1] * g.d + [A.size])
        t_new = g.times[n + 1]
        a_new = aug.update(a, x_new, t_new, g.dt)
        a_new = np.broadcast_to(a_new, w.shape)
        idx = np.clip(np.searchsorted(A, a_new, side="right") - 1, 0, A.size - 2)
        lam = (a_new - A[idx]) / (A[idx + 1] - A[idx])
        lo = np.take_along_axis(w, idx, axis=-1)
        hi = np.take_along_axis(w, idx + 1, axis=-1)
        return (1.0 - lam) * lo + lam * hi

    def expect(self, values_next: np.ndarray, n: int, iu: int, iv: int) -> np.ndarray:
        """Kernel expectation over the full lattice; boundary nodes keep their own value."""
        S = self.neighbor_values(values_next, n)
        p = self.p(n, iu, iv)
        m = np.zeros(S.shape[1:])
        for k in range(self.K):
            m += p[k] * S[k]
        out = np.array(values_next, dtype=float, copy=True)
        out[self.grid.interior] = m
        return out


def build_kernel(spec: GameSpec, grid: Grid) -> TransitionKernel:
    c = spec.coefficients
    d, dt = grid.d, grid.dt
    dx = np.array(grid.dx)
    offs = stencil.offsets(d)
    disp = offs * dx
    center = stencil.center_index(d)
    n_steps = 1 if c.time_homogeneous else grid.n_t
    nU, nV, K = len(spec.U), len(spec.V), offs.shape[0]
    probs = np.zeros((n_steps, nU, nV, K))
    mean = np.zeros((n_steps, nU, nV, d))
    cov = np.zeros((n_steps, nU, nV, d, d))
    upw = np.zeros((n_steps, nU, nV, d), dtype=bool)
    degen = np.zeros((n_steps, nU, nV), dtype=bool)
    worst_mean, worst_cov, worst_excess = 0.0, 0.0, 0.0
    for s in range(n_steps):
        t = grid.times[s]
        for iu, iv, u, v in spec.pairs():
            a = c.covariance(t, u, v)
            mu = c.effective_drift(t, u, v)
            try:
                r, flags = stencil.rates(a, mu, dx)
            except stencil.StencilError as exc:
                raise SpecError(f"negative-probability stencil at t={t:g}, u={u}, v={v}: {exc}") from exc
            p = r * dt
            stay = 1.0 - p.sum()
            if stay < -1e-9:
                raise SpecError(f"time step too large for the stencil at t={t:g}, u={u}, v={v}: "
                                f"stay probability {stay:.3g}; reduce dt to <= {1.0 / r.sum():.6g}")
            if stay < 0.0:
                p = p / p.sum()
                stay = 0.0
            p[center] = stay
            probs[s, iu, iv] = p
            m1 = p @ disp
            m2 = np.einsum("k,ki,kj->ij", p, disp, disp) - np.outer(m1, m1)
            mean[s, iu, iv] = m1
            cov[s, iu, iv] = m2
            upw[s, iu, iv] = flags
            lam = np.linalg.eigvalsh(a)
            degen[s, iu, iv] = lam.min() <= 1e-12 * max(1.0, lam.max())
            excess = np.diag(np.where(flags, np.abs(mu) * dx, 0.0))
            worst_mean = max(worst_mean, float(np.max(np.abs(m1 - mu * dt))))
            worst_cov = max(worst_cov, float(np.max(np.abs(m2 - (a + excess) * dt))))
            worst_excess = max(worst_excess, float(np.max(np.abs(excess))) * dt)
    consistency = {"mean_defect": worst_mean, "cov_defect": worst_cov,
                   "upwind_excess": worst_excess, "dt2": dt * dt,
                   "any_upwinded": bool(upw.any()), "any_degenerate": bool(degen.any())}
    for arr in (probs, mean, cov, upw, degen):
        arr.setflags(write=False)
    return TransitionKernel(spec, grid, offs, probs, mean, cov, upw, degen, consistency)


def _policy_index(policy, n: int, nodes: np.ndarray) -> np.ndarray:
    idx = policy.index[n]
    return idx[tuple(nodes.T)]


def sample_paths(kernel: TransitionKernel, policies, n_paths: int, seed: int,
                 start=None) -> dict:
    """Simulate lattice paths under a feedback policy pair.

    Returns ``{"index": (n_paths, n_t + 1, d) int, "aug": (n_paths, n_t + 1) or None}``.
    A path that reaches the boundary ring stays there.
    """
    u_pol, v_pol = policies
    g, spec = kernel.grid, kernel.spec
    aug = spec.augmentation
    rng = np.random.default_rng(seed)
    d = g.d
    start = g.origin_index[:d] if start is None else tuple(start)
    idx = np.empty((n_paths, g.n_t + 1, d), dtype=np.int64)
    idx[:, 0] = start
    avals = None
    if aug is not None:
        avals = np.empty((n_paths, g.n_t + 1))
        avals[:, 0] = g.aug_start
    hi = np.array(g.spatial_shape) - 1
    cum_all = np.cumsum(kernel.probs, axis=-1)
    for n in range(g.n_t):
        cur = idx[:, n]
        nodes = cur
        if aug is not None:
            ai = np.argmin(np.abs(g.aug_axis[None, :] - avals[:, n, None]), axis=1)
            nodes = np.concatenate([cur, ai[:, None]], axis=1)
        iu = _policy_index(u_pol, n, nodes)
        iv = _policy_index(v_pol, n, nodes)
        cum = cum_all[kernel.step(n), iu, iv]
        draw = rng.random(n_paths)
        k = np.minimum((draw[:, None] >= cum).sum(axis=1), kernel.K - 1)
        on_boundary = np.any((cur == 0) | (cur == hi), axis=1)
        step = np.where(on_boundary[:, None], 0, kernel.offsets[k])
        idx[:, n + 1] = cur + step
        if aug is not None:
            x_new = g.axes[aug.axis][idx[:, n + 1, aug.axis]]
            avals[:, n + 1] = aug.update(avals[:, n], x_new, g.times[n + 1], g.dt)
    return {"index": idx, "aug": avals}


def sample_path(kernel: TransitionKernel, policies, seed: int, start=None) -> np.ndarray:
    """One lattice path of length n_t + 1 (spatial node indices)."""
    return sample_paths(kernel, policies, 1, seed, start)["index"][0]
