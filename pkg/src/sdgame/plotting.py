"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dpp import ValueField  # noqa: E402

STYLE = {"figure.dpi": 100, "savefig.dpi": 120, "font.size": 9, "axes.grid": True,
         "grid.alpha": 0.3, "svg.hashsalt": "sdgame"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def value_figure(fields: dict, path, n: int = 0) -> Path:
    """Line plot (d = 1) or one heat map per field (d = 2) of slice ``n``."""
    with plt.rc_context(STYLE):
        first = next(iter(fields.values()))
        g = first.grid
        if g.d == 1:
            fig, ax = plt.subplots(figsize=(5, 3.2))
            for name, f in fields.items():
                vals = f.values[n] if g.aug_axis is None else f.values[n][:, g.origin_index[-1]]
                ax.plot(g.axes[0], vals, label=name)
            ax.set_xlabel("x")
            ax.set_ylabel(f"value at t = {g.times[n]:.3g}")
            ax.legend()
        else:
            fig, axes = plt.subplots(1, len(fields), figsize=(4.2 * len(fields), 3.6), squeeze=False)
            for ax, (name, f) in zip(axes[0], fields.items()):
                vals = f.values[n] if g.aug_axis is None else f.values[n][..., g.origin_index[-1]]
                im = ax.pcolormesh(g.axes[0], g.axes[1], vals.T, shading="auto")
                fig.colorbar(im, ax=ax)
                ax.set_title(name)
                ax.set_xlabel("x1")
                ax.set_ylabel("x2")
        return _save(fig, path)


def modulus_figure(report, path) -> Path:
    """Probe clouds against the fitted reference moduli."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
        for ax, data, C, label in ((axes[0], report.spatial, report.C_spatial, "spatial"),
                                   (axes[1], report.temporal, report.C_temporal, "temporal")):
            order = np.argsort(data[:, 0])
            ax.scatter(data[:, 0], data[:, 1], s=4, alpha=0.5, label="probe gaps")
            ax.plot(data[order, 0], C * data[order, 2], color="C3", label=f"C = {C:.3g}")
            ax.set_xlabel(f"{label} distance")
            ax.set_ylabel("value gap")
            ax.legend()
        return _save(fig, path)


def counterexample_figure(report: dict, path) -> Path:
    """Candidate payoffs against the lower estimate and the horizon."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.4))
        cands = report["candidates"]
        J = [c["J"] for c in cands]
        se = [3 * c["stderr"] for c in cands]
        ax.errorbar(range(len(J)), J, yerr=se, fmt="o", ms=3, label="best-response payoff")
        T = report["strong_upper_bound"]
        ax.axhline(T, color="C2", ls="--", label="T")
        ax.axhline(report["strong_lower"], color="C3", label="strong lower estimate")
        ax.axhline(report["l2_bound"], color="C3", ls=":", label="alpha sqrt(2T)")
        ax.set_xticks(range(len(J)))
        ax.set_xticklabels([c["candidate"] for c in cands], rotation=70, fontsize=6)
        ax.set_ylabel("payoff")
        ax.legend(fontsize=7)
        return _save(fig, path)


def refinement_figure(study: dict, path) -> Path:
    """Origin values (or gaps) versus grid spacing."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        rows = study["rows"]
        dx = [r["dx"][0] for r in rows]
        if "lower" in rows[0]:
            ax.plot(dx, [r["lower"] for r in rows], "o-", label="lower")
            ax.plot(dx, [r["upper"] for r in rows], "s--", label="upper")
        else:
            ax.plot(dx, [r["value"] for r in rows], "o-", label="value")
        ax.set_xlabel("dx")
        ax.set_ylabel("value at origin")
        ax.invert_xaxis()
        ax.legend()
        return _save(fig, path)
