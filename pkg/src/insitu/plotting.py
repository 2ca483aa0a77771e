"""Static SVG line charts drawn from artifact CSVs (no recomputation)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from insitu.artifacts import read_csv  # noqa: E402


def _trace(ax, rows):
    it = [r["iteration"] for r in rows]
    ax.semilogy(it, [max(1 - r["f_le_exact"], 1e-16) for r in rows], label="1 - F_LE")
    f = [r["f_exact"] for r in rows]
    if not all(np.isnan(f)):
        ax.semilogy(it, [max(1 - x, 1e-16) for x in f], label="1 - F")
    ax.set_xlabel("update")
    ax.set_ylabel("infidelity")


def _scaling(ax, rows):
    n = [r["n"] for r in rows]
    ax.errorbar(n, [r["mean_nupds"] for r in rows], yerr=[2 * r["stderr_nupds"] for r in rows],
                marker="o", capsize=3, label="mean N_upds")
    ax.set_xlabel("qubits")
    ax.set_ylabel("N_upds")


def _anum(ax, rows):
    ax.plot([r["n"] for r in rows], [r["anum_at_50"] for r in rows], marker="o", label="A_num")
    ax.set_xlabel("qubits")
    ax.set_ylabel("A_num at threshold")


def _perturb(ax, rows):
    n = [r["n"] for r in rows]
    ax.plot(n, [r["mean_f"] for r in rows], marker="o", label="F")
    ax.plot(n, [r["mean_fle"] for r in rows], marker="s", label="F_LE")
    ax.set_xlabel("qubits")
    ax.set_ylabel("mean fidelity")


_PLOTTERS = {
    ("iteration", "f_le_measured", "f_le_exact", "f_exact"): _trace,
    ("n", "mean_nupds", "stderr_nupds", "trials", "p_succ"): _scaling,
    ("n", "f_targ", "anum_at_50", "grid_points"): _anum,
    ("n", "mean_f", "mean_fle", "samples"): _perturb,
}


def plot_csv(path, out=None) -> Path:
    """Render ``path`` to SVG; raises ``ValueError`` for schemas without a chart."""
    path = Path(path)
    _, columns, rows = read_csv(path)
    fn = _PLOTTERS.get(tuple(columns))
    if fn is None:
        raise ValueError(f"{path}: no line chart for columns {columns}")
    out = Path(out) if out else path.with_suffix(".svg")
    plt.rcParams["svg.hashsalt"] = "insitu"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    fn(ax, rows)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    tmp = out.with_name(f".{out.name}.tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    tmp.replace(out)
    return out
