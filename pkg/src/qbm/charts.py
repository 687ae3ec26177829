"""SVG line charts of training traces."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS = ("loss", "kl", "e_cl", "e_q", "gamma", "grad_norm", "wall_ms", "energy")
LABELS = {
    "loss": "training objective",
    "kl": "KL divergence",
    "e_cl": "classical energy",
    "e_q": "quantum energy",
    "gamma": "transverse field",
    "grad_norm": "gradient norm",
    "wall_ms": "wall time (ms)",
}


def chart_series(traces, metric):
    """The (x, y) polyline drawn for each label, in iteration order."""
    if not traces:
        raise ValueError("nothing to plot")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    series = {}
    for label, trace in traces.items():
        if not len(trace):
            raise ValueError(f"trace {label!r} is empty")
        if metric == "energy":
            series[label] = (np.abs(trace.column("e_cl")), np.abs(trace.column("e_q")))
        else:
            series[label] = (trace.column("iter"), trace.column(metric))
    return series


def render_chart(traces, metric, destination):
    """One polyline per machine: ``metric`` against iteration, or for
    ``metric='energy'`` the path of (|E_cl|, |E_q|) in iteration order.

    ``traces`` maps a label to a :class:`~qbm.optim.TrainingTrace`. Each
    polyline is written as an SVG group with id ``trace-<label>``.
    """
    series = chart_series(traces, metric)
    plt.rcParams["svg.hashsalt"] = "qbm"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o" if len(x) == 1 else None, label=label, gid=f"trace-{label}")
    if metric == "energy":
        ax.set_xlabel("|E_cl|")
        ax.set_ylabel("|E_q|")
    else:
        ax.set_xlabel("iteration")
        ax.set_ylabel(LABELS[metric])
    ax.legend()
    fig.tight_layout()
    fig.savefig(destination, format="svg", metadata={"Date": None})
    plt.close(fig)
    return destination
