"""Optional SVG figures for verification reports (matplotlib, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def lhs_rhs_plot(comparisons, path) -> None:
    """Bars of estimated vs Rice intensities with 1.96-sigma whiskers."""
    rows = [c for c in comparisons if c.get("rice")]
    names = [c["name"] for c in rows]
    lhs = np.array([c["nu_hat"]["value"] for c in rows])
    lhs_err = np.array([c["nu_hat"]["std_error"] for c in rows])
    rhs = np.array([c["rice"]["value"] for c in rows])
    rhs_err = np.array([np.hypot(c["rice"]["quad_error"], np.hypot(c["rice"]["tail_bound"], c.get("rhs_std_error", 0.0)))
                        for c in rows])
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(rows) + 2), 3.5))
    ax.bar(x - 0.2, lhs, 0.4, yerr=1.96 * lhs_err, capsize=4, label="crossings per unit time")
    ax.bar(x + 0.2, rhs, 0.4, yerr=1.96 * rhs_err, capsize=4, label="Rice integral")
    ax.set_xticks(x, names, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel("intensity")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def palm_plot(palm: dict, path) -> None:
    """Empirical crossing-location histogram against the conditional Palm law."""
    edges = np.asarray(palm["histogram"]["edges"][0])
    p = np.asarray(palm["histogram"]["probs"])
    se = np.asarray(palm["histogram"]["std_errors"])
    q = np.asarray(palm["q_u"])
    mids = 0.5 * (edges[1:] + edges[:-1])
    width = np.diff(edges)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(mids, p / width, width, alpha=0.5, label="crossing locations")
    ax.errorbar(mids, p / width, yerr=1.96 * se / width, fmt="none", ecolor="k", lw=0.8)
    ax.step(edges, np.append(q / width, q[-1] / width[-1]), where="post", color="C3", label="Palm slice")
    ax.set_xlabel("location on the surface")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
