"""Render a run report to figure files alongside the delimited output.

Matplotlib is imported lazily with the Agg backend so headless report
generation never needs a display. The canonical outputs remain report.json
and report.csv; these renderings are a convenience for eyeballing runs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import NUM_CHANNEL_PAIRS, FrequencySlot, Role, itu_channel_label

_USER_COLORS = {
    "A1": "#1f77b4",
    "A2": "#aec7e8",
    "B1": "#d62728",
    "B2": "#ff9896",
    "C1": "#2ca02c",
    "C2": "#98df8a",
}


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update(
        {
            "figure.dpi": 120,
            "savefig.dpi": 150,
            "axes.grid": True,
            "grid.linestyle": ":",
            "font.size": 9,
            "axes.titlesize": 10,
        }
    )
    return plt


def _slot_sequence() -> list[FrequencySlot]:
    idlers = [FrequencySlot(n, Role.IDLER) for n in range(NUM_CHANNEL_PAIRS, 0, -1)]
    signals = [FrequencySlot(n, Role.SIGNAL) for n in range(1, NUM_CHANNEL_PAIRS + 1)]
    return idlers + signals


def allocation_figure(assignments: list[dict], title: str, path: Path) -> Path:
    """One colored cell per 25 GHz slot, ordered by center frequency."""
    plt = _plt()
    assigned = {(a["channel"], a["role"]): a["user"] for a in assignments}
    slots = _slot_sequence()
    fig, ax = plt.subplots(figsize=(9, 1.8))
    for pos, slot in enumerate(slots):
        user = assigned.get((slot.channel, slot.role.value))
        color = _USER_COLORS.get(user, "#dddddd") if user else "#f2f2f2"
        ax.add_patch(plt.Rectangle((pos, 0), 1, 1, facecolor=color, edgecolor="black"))
        label = f"{slot.key}\n{user}" if user else slot.key
        ax.text(pos + 0.5, 0.5, label, ha="center", va="center", fontsize=7)
    ax.set_xlim(0, len(slots))
    ax.set_ylim(0, 1)
    ax.set_yticks([])
    ax.set_xticks([i + 0.5 for i in range(len(slots))])
    ax.set_xticklabels([f"{itu_channel_label(s):.2f}" for s in slots], fontsize=6, rotation=45)
    ax.set_xlabel("grid label")
    ax.set_title(title)
    ax.grid(False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def rates_figure(pairs: list[dict], path: Path) -> Path:
    """Coincidence rate (log scale) and fidelity with posterior error bars."""
    plt = _plt()
    labels = ["-".join(p["pair"]) for p in pairs]
    rates = [max(p["true_rate_hz"], 1e-6) for p in pairs]
    fid = [p["fidelity"]["mean"] for p in pairs]
    fid_sd = [p["fidelity"]["sd"] for p in pairs]
    x = np.arange(len(labels))

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.bar(x, rates, color="#4c72b0")
    ax1.set_yscale("log")
    ax1.set_xticks(x)
    ax1.set_xticklabels(labels, rotation=45, ha="right")
    ax1.set_ylabel("coincidence rate (1/s)")

    ax2.errorbar(x, fid, yerr=np.asarray(fid_sd) * 3, fmt="o", capsize=3, color="#55a868")
    ax2.axhline(0.5, color="gray", linestyle="--", linewidth=0.8)
    ax2.set_ylim(0.0, 1.05)
    ax2.set_xticks(x)
    ax2.set_xticklabels(labels, rotation=45, ha="right")
    ax2.set_ylabel("fidelity (3 sd bars)")

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def density_figure(matrix_re_im: list[list[float]], title: str, path: Path) -> Path:
    """Real and imaginary parts of a posterior mean state as annotated maps."""
    plt = _plt()
    flat = np.array([complex(re, im) for re, im in matrix_re_im])
    rho = flat.reshape(4, 4)
    kets = ["HH", "HV", "VH", "VV"]

    fig, axes = plt.subplots(1, 2, figsize=(7.2, 3.2))
    for ax, part, name in ((axes[0], rho.real, "Re"), (axes[1], rho.imag, "Im")):
        image = ax.imshow(part, vmin=-0.5, vmax=0.5, cmap="RdBu_r")
        ax.set_xticks(range(4))
        ax.set_yticks(range(4))
        ax.set_xticklabels(kets)
        ax.set_yticklabels(kets)
        ax.set_title(f"{name}[{title}]")
        ax.grid(False)
        for i in range(4):
            for j in range(4):
                ax.text(j, i, f"{part[i, j]:.2f}", ha="center", va="center", fontsize=7)
        fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_report_figures(report: dict, outdir: str | Path) -> list[Path]:
    """Write the figure set for one report; returns the created paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    allocation = report.get("allocation", {})
    if allocation.get("assignments"):
        created.append(
            allocation_figure(
                allocation["assignments"],
                f"spectrum allocation: {allocation.get('label', '')}",
                outdir / "allocation.png",
            )
        )
    pairs = report.get("pairs", [])
    if pairs:
        created.append(rates_figure(pairs, outdir / "rates_fidelities.png"))
        for entry in pairs:
            name = "-".join(entry["pair"])
            created.append(
                density_figure(
                    entry["mean_state_re_im_row_major"],
                    name,
                    outdir / f"state_{name}.png",
                )
            )
    return created
