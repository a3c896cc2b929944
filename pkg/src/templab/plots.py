"""Figure rendering for CLI reports (headless Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120
# no Software tag: keeps PNG bytes identical across matplotlib patch levels
_META = {"metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, **_META)
    plt.close(fig)


def render_arc(arc, path, title):
    """State norm, state components, and estimation error along an arc."""
    floor = 1e-300
    xnorm = np.linalg.norm(arc.x, axis=1)
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax = axes[0]
    for k in range(arc.n):
        ax.plot(arc.t, arc.x[:, k], lw=1.0, label=f"x_{k + 1}")
    ax.set_ylabel("state")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title)
    ax = axes[1]
    ax.semilogy(arc.t, np.maximum(xnorm, floor), lw=1.2, label="|x|")
    if arc.mz:
        ax.semilogy(arc.t, np.maximum(arc.e_norm, floor), lw=1.2,
                    label="|e|")
    for jr in arc.jumps:
        ax.axvline(jr.tau, color="0.85", lw=0.5, zorder=0)
    ax.set_xlabel("t")
    ax.set_ylabel("norms")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_sweep(rows, path, title):
    """Fitted rates vs theta, one line per delta, from sweep result rows."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    deltas = sorted({r["delta"] for r in rows})
    for d in deltas:
        pts = sorted((r["theta"], r["nu_e"]) for r in rows
                     if r["delta"] == d and r["nu_e"] is not None)
        if pts:
            th, nu = zip(*pts)
            ax.plot(th, nu, "o-", label=f"delta={d:g}")
        bad = [(r["theta"], 0.0) for r in rows
               if r["delta"] == d and not r["contained"]]
        if bad:
            th, nu = zip(*bad)
            ax.plot(th, nu, "rx", ms=8)
    ax.set_xlabel("theta")
    ax.set_ylabel("fitted error decay rate")
    ax.set_title(title)
    if deltas:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_compare(arcs, path, title):
    """Overlay of |x(t)| for the closed-loop variants."""
    floor = 1e-300
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, arc in arcs:
        xnorm = np.linalg.norm(arc.x, axis=1)
        ax.semilogy(arc.t, np.maximum(xnorm, floor), lw=1.2, label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("|x|")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_certification(report, path, title):
    """Bar chart of the certification margins."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names, vals = [], []
    for name, val in (("rho1", report.rho1), ("rho2", report.rho2)):
        if np.isfinite(val):
            names.append(name)
            vals.append(val)
    color = "tab:green" if report.passed else "tab:red"
    ax.bar(names, vals, color=color)
    ax.set_yscale("log" if vals and min(vals) > 0 else "linear")
    verdict = "passed" if report.passed else "failed"
    ax.set_title(f"{title} ({verdict})")
    ax.set_ylabel("margin")
    fig.tight_layout()
    _save(fig, path)
