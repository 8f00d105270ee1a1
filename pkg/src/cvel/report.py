"""Figure rendering for run reports.

Kept separate from the pipeline so the numerical layer stays plot-free;
the CLI calls this next to the CSV export.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_trace_plots(report, tol, path):
    """Two-panel PNG: the six convergence metrics on a log axis with the
    tolerance line, and the energy per outer iteration."""
    iters = range(1, report.iterations + 1)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for label, series in (("T1", report.t1), ("T2", report.t2), ("T3", report.t3),
                          ("T4", report.t4), ("Phi", report.phi_change),
                          ("Sigma", report.sigma)):
        ax1.plot(iters, series, label=label, linewidth=1.0)
    ax1.axhline(tol, color="k", linestyle="--", linewidth=0.8, label="tol")
    ax1.set_yscale("log")
    ax1.set_xlabel("outer iteration")
    ax1.set_ylabel("relative change")
    ax1.legend(fontsize=8, ncol=2)
    ax2.plot(iters, report.energy, color="tab:red", linewidth=1.0)
    ax2.set_xlabel("outer iteration")
    ax2.set_ylabel("energy")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
