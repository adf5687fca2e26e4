"""Nearest-neighbour transition intensities for a controlled diffusion on a lattice.

A diffusion with covariance rate ``a`` and drift ``mu`` is approximated by a
continuous-time chain jumping to the 3**d neighbourhood of each node. The
intensities returned here are shared by the Markov-chain kernel and the
explicit finite-difference scheme; a step of length ``dt`` moves with
probability ``rate * dt`` and stays with the remainder.

Axis moves use central drift weights when that keeps every weight
non-negative and fall back to upwinding otherwise. Off-diagonal covariance is
carried by the diagonal neighbours (positive/negative correlation split).
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


class StencilError(ValueError):
    """The covariance cannot be represented by a non-negative neighbour stencil."""


@lru_cache(maxsize=None)
def offsets(d: int) -> np.ndarray:
    """All offsets in {-1, 0, 1}**d, in a fixed lexicographic order."""
    return np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)


def center_index(d: int) -> int:
    return (3**d - 1) // 2


def _offset_index(d: int, off) -> int:
    idx = 0
    for o in off:
        idx = 3 * idx + (o + 1)
    return idx


def rates(a: np.ndarray, mu: np.ndarray, dx, tol: float = 1e-14):
    """Jump intensities towards each offset of ``offsets(d)``.

    Returns ``(r, upwinded)`` where ``r[center]`` is zero and ``upwinded`` is a
    tuple of per-axis flags telling whether the drift on that axis had to be
    upwinded (which adds ``|mu_i| * dx_i`` of numerical variance rate).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    d = mu.shape[0]
    r = np.zeros(3**d)
    diag = np.diag(a).copy()
    if d == 2:
        a12 = 0.5 * (a[0, 1] + a[1, 0])
        if abs(a12) > tol:
            q = abs(a12) / (2.0 * dx[0] * dx[1])
            s = 1 if a12 > 0 else -1
            r[_offset_index(2, (1, s))] += q
            r[_offset_index(2, (-1, -s))] += q
            diag[0] -= abs(a12) * dx[0] / dx[1]
            diag[1] -= abs(a12) * dx[1] / dx[0]
            if diag.min() < -tol:
                i = int(np.argmin(diag))
                need = abs(a12) * dx[i] / dx[1 - i]
                raise StencilError(
                    f"covariance {a.tolist()} is not diagonally dominant on this lattice: "
                    f"axis {i} needs a[{i},{i}] >= {need:.6g}; "
                    f"use dx[{i}]/dx[{1 - i}] <= {a[i, i] / abs(a12):.6g}"
                )
    elif d != 1:
        raise ValueError(f"only d in (1, 2) is supported, got {d}")
    diag = np.maximum(diag, 0.0)
    upwinded = []
    for i in range(d):
        plus = [0] * d
        minus = [0] * d
        plus[i], minus[i] = 1, -1
        base = diag[i] / (2.0 * dx[i] ** 2)
        if abs(mu[i]) * dx[i] <= diag[i]:
            rp = base + mu[i] / (2.0 * dx[i])
            rm = base - mu[i] / (2.0 * dx[i])
            upwinded.append(False)
        else:
            rp = base + max(mu[i], 0.0) / dx[i]
            rm = base + max(-mu[i], 0.0) / dx[i]
            upwinded.append(True)
        r[_offset_index(d, plus)] += max(rp, 0.0)
        r[_offset_index(d, minus)] += max(rm, 0.0)
    return r, tuple(upwinded)


def leaving_rate(a, mu, dx) -> float:
    r, _ = rates(a, mu, dx)
    return float(r.sum())
