"""Figure rendering for study outputs.

Renders matplotlib figures next to the delimited study outputs; the CSVs
stay the canonical record, the figures are a convenience view of the same
numbers.
"""

from __future__ import annotations

import re

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

_METHOD_STYLE = {
    "amce": dict(color="#c23b22", marker="o", label="AMCE t-test"),
    "crt_hiernet": dict(color="#2166ac", marker="^", label="CRT (HierNet)"),
    "crt_hiernet_unconstrained": dict(color="#7b3294", marker="s",
                                      label="CRT (HierNet, unconstrained)"),
    "crt_dicrt": dict(color="#1a1a1a", marker="D", label="CRT (dICRT)"),
}


def _grid_fraction(grid_id: str) -> float:
    m = re.search(r"frac=([0-9.]+)", grid_id)
    if m:
        return float(m.group(1))
    m = re.search(r"size=([0-9.]+)", grid_id)
    return float(m.group(1)) if m else 0.0


def save_power_figure(summary: pd.DataFrame, path, title: str = "") -> None:
    """Power curves over the interaction-variance grid, one line per method
    (or per scenario when a scenario column is present)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if "scenario" in summary.columns:
        for (scen, method), grp in summary.groupby(["scenario", "method"]):
            grp = grp.copy()
            grp["x"] = grp["grid_id"].map(_grid_fraction)
            grp = grp.sort_values("x")
            style = dict(_METHOD_STYLE.get(method, {}))
            label = f"{style.pop('label', method)} [{scen}]"
            ls = "-" if scen == "homogeneous" else "--"
            ax.errorbar(100 * grp["x"], grp["power"], yerr=grp["mc_se"],
                        linestyle=ls, label=label, **style)
    else:
        for method, grp in summary.groupby("method"):
            grp = grp.copy()
            grp["x"] = grp["grid_id"].map(_grid_fraction)
            grp = grp.sort_values("x")
            style = dict(_METHOD_STYLE.get(method, {}))
            label = style.pop("label", method)
            ax.errorbar(100 * grp["x"], grp["power"], yerr=grp["mc_se"],
                        linestyle="-", label=label, **style)
    ax.set_xlabel("variance explained by X-Z interactions (%)")
    ax.set_ylabel("rejection rate at $\\alpha$")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=9)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_inflation_figures(pvals: pd.DataFrame, summary: pd.DataFrame,
                           prefix) -> list:
    """Rejection-rate curve plus the p-value histogram at the widest design."""
    paths = []
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(summary["num_z"], summary["rejection_rate"], "o-", color="#2166ac")
    ax.axhline(0.05, color="#c23b22", linestyle=":", label="nominal 0.05")
    ax.set_xlabel("number of other factors")
    ax.set_ylabel("proportion of p-values < 0.05")
    ax.legend(frameon=False)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    p1 = f"{prefix}_rejection.png"
    fig.savefig(p1, dpi=150)
    plt.close(fig)
    paths.append(p1)

    worst = int(summary["num_z"].iloc[summary["rejection_rate"].argmax()])
    sub = pvals[pvals["num_z"] == worst]["p_value"].dropna()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(sub, bins=np.linspace(0, 1, 21), color="#2166ac", edgecolor="white")
    ax.axhline(len(sub) / 20, color="#c23b22", linestyle=":",
               label="uniform expectation")
    ax.set_xlabel(f"p-value ({worst} other factors)")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    fig.tight_layout()
    p2 = f"{prefix}_pvalue_hist.png"
    fig.savefig(p2, dpi=150)
    plt.close(fig)
    paths.append(p2)
    return paths


def save_screen_figure(table: pd.DataFrame, path) -> None:
    """Horizontal bar chart of per-variable screening p-values."""
    tab = table.sort_values("p_value")
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.3 * len(tab))))
    ax.barh(tab["variable"], tab["p_value"], color="#2166ac")
    ax.axvline(0.05, color="#c23b22", linestyle=":")
    ax.set_xlabel("CRT p-value")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
