"""Figure rendering for the report path (headless, files only)."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def value_snapshots(bundle, model, path, times=None):
    """Value surface against the obstacles at a few times."""
    grid = bundle.grid
    if times is None:
        times = [0.0, 0.5 * grid.horizon, grid.horizon]
    if grid.d_star == 1:
        x = grid.axes()[0]
        mesh = grid.mesh()
        fig, ax = plt.subplots(figsize=(7, 4.2))
        for t in times:
            m = min(int(round(t / grid.dt)), grid.steps)
            ax.plot(x, bundle.V.values[m], label=f"V at t={grid.times[m]:.3g}")
        from .model import evaluate

        if model.lower is not None:
            lo = np.broadcast_to(evaluate(model.lower.value, times[0], mesh, None), grid.nodes)
            if np.all(np.isfinite(lo)) and np.max(np.abs(lo)) < 1e5:
                ax.plot(x, lo, "k--", lw=1, label="lower obstacle")
        if model.upper is not None:
            up = np.broadcast_to(evaluate(model.upper.value, times[0], mesh, None), grid.nodes)
            if np.all(np.isfinite(up)) and np.max(np.abs(up)) < 1e5:
                ax.plot(x, up, "k:", lw=1, label="upper obstacle")
        ax.set_xlabel("x")
        ax.set_ylabel("value")
        ax.legend(loc="best", fontsize=8)
    else:
        fig, axes = plt.subplots(1, len(times), figsize=(4 * len(times), 3.4))
        x1, x2 = grid.axes()
        for ax, t in zip(np.atleast_1d(axes), times):
            m = min(int(round(t / grid.dt)), grid.steps)
            pc = ax.pcolormesh(x1, x2, bundle.V.values[m].T, shading="auto")
            fig.colorbar(pc, ax=ax)
            ax.set_title(f"V at t={grid.times[m]:.3g}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def reflection_profiles(bundle, path):
    """Reflection densities at the initial time slice (1-d) or as maps."""
    grid = bundle.grid
    fig, ax = plt.subplots(figsize=(7, 4.2))
    if grid.d_star == 1:
        x = grid.axes()[0]
        ax.plot(x, bundle.k_plus.values[0], label="k+ at t=0")
        ax.plot(x, bundle.k_minus.values[0], label="k- at t=0")
        ax.set_xlabel("x")
    else:
        ax.imshow(bundle.k_plus.values[0].T, origin="lower", aspect="auto")
        ax.set_title("k+ at t=0")
    ax.set_ylabel("reflection density")
    if grid.d_star == 1:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def boundary_plot(fb, path):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    vals = np.ma.masked_invalid(np.atleast_2d(fb.values.T if fb.values.ndim > 1 else fb.values))
    if fb.cross_coords is None:
        ax.plot(fb.times, np.ma.masked_invalid(fb.values), ".-", ms=3)
        ax.set_xlabel("t")
        ax.set_ylabel(f"{fb.side} boundary ({fb.orientation})")
    else:
        pc = ax.pcolormesh(fb.times, fb.cross_coords, vals, shading="auto")
        fig.colorbar(pc, ax=ax, label="boundary coordinate")
        ax.set_xlabel("t")
        ax.set_ylabel("cross coordinate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def convergence_plot(rows, path):
    """log-log sup/l2 error against spacing for a refinement table."""
    hs = [r["h"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for key, marker in (("sup_error", "o"), ("l2_error", "s")):
        errs = [r[key] for r in rows]
        if any(e > 0 for e in errs):
            ax.loglog(hs, errs, marker + "-", label=key)
    if len(hs) >= 2 and rows[0]["sup_error"] > 0:
        ref = [rows[0]["sup_error"] * (h / hs[0]) ** 2 for h in hs]
        ax.loglog(hs, ref, "k--", lw=1, label="order 2")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def lattice_fan(lat, path):
    """Per-node values at the spatial midpoint across lattice steps."""
    mid = tuple(n // 2 for n in lat.grid.nodes)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for m in range(lat.steps + 1):
        vals = [lat.V[m][pos][mid] for pos in range(m + 1)]
        ax.plot([m] * (m + 1), vals, "b.", ms=3, alpha=0.6)
    ax.set_xlabel("lattice step")
    ax.set_ylabel("V at spatial midpoint")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def saddle_plot(report, path):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    labels = [f"{e.side}:{e.label}" for e in report.entries]
    margins = [e.margin for e in report.entries]
    errs = [3 * e.se for e in report.entries]
    ax.errorbar(range(len(labels)), margins, yerr=errs, fmt="o", capsize=3)
    ax.axhline(0.0, color="k", lw=1)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("deviation margin")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
