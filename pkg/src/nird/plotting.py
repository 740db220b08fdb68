"""Optional PNG renderings of CLI outputs (matplotlib, Agg backend)."""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=120, metadata={"Software": None})


def plot_lsf_history(states, path, reference=None):
    """Global functional against NIRD iteration."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    it = [s["iteration"] for s in states]
    ax.semilogy(it, [s["lsf"] for s in states], "o-", label="NIRD")
    if reference:
        for label, value in reference.items():
            ax.axhline(value, ls="--", lw=1, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("least-squares functional")
    ax.set_xticks(it)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_convergence(n, values, path, label="LSF"):
    """Log-log functional against element count with a fitted slope."""
    plt = _pyplot()
    n = np.asarray(n, dtype=float)
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(n, values, "o-", label=label)
    if len(n) >= 2:
        k = min(len(n), 5)
        slope = np.polyfit(np.log(n[-k:]), np.log(values[-k:]), 1)[0]
        ax.set_title(f"slope over last {k} levels: {slope:.3f}")
    ax.set_xlabel("elements")
    ax.set_ylabel(label)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_mesh(mesh, path, owner=None, title=None):
    """Triangulation, coloured by ``owner`` (one value per leaf) when given."""
    plt = _pyplot()
    from matplotlib.collections import PolyCollection
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    polys = PolyCollection(mesh.coords, edgecolors="k", linewidths=0.2)
    if owner is not None:
        polys.set_array(np.asarray(owner, dtype=float))
        polys.set_cmap("tab20")
    else:
        polys.set_facecolor("none")
    ax.add_collection(polys)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_perfmodel(curves, path):
    """Communication counts against processor count, one curve per series."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in curves.items():
        ax.loglog([r["P"] for r in rows], [r["value"] for r in rows], "-", label=label)
    ax.set_xlabel("processors P")
    ax.set_ylabel("communications")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
