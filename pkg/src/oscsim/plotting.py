"""Deterministic SVG figure emission for records and field profiles."""
from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "oscsim"

_STYLES = ("transient", "field", "density")


def emit_plot(records, style: str, path: str, labels=None):
    """Write an SVG figure; byte-identical output for identical input.

    style 'transient' expects TransientRecord-like objects (log-x |J|
    overlay); 'field' and 'density' expect field dicts with x, E, n, p.
    """
    if style not in _STYLES:
        raise ValueError(f"unknown plot style {style!r}")
    if not records:
        raise ValueError("no records to plot")
    if labels is None:
        labels = [f"run {i + 1}" for i in range(len(records))]

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    if style == "transient":
        for rec, lab in zip(records, labels):
            mask = rec.t > 0
            ax.semilogx(rec.t[mask], np.abs(rec.J[mask]), label=lab)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("|J| (A/m$^2$)")
        ax.set_title("photocurrent turn-on")
    elif style == "field":
        for fields, lab in zip(records, labels):
            ax.plot(fields["x"] * 1e9, np.abs(fields["E"]), label=lab)
        ax.set_xlabel("x (nm)")
        ax.set_ylabel("|E| (V/m)")
        ax.set_title("electric field magnitude")
    else:
        for fields, lab in zip(records, labels):
            ax.semilogy(fields["x"] * 1e9, fields["n"], label=f"n, {lab}")
            ax.semilogy(fields["x"] * 1e9, fields["p"], "--", label=f"p, {lab}")
        ax.set_xlabel("x (nm)")
        ax.set_ylabel("density (m$^{-3}$)")
        ax.set_title("carrier densities")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
