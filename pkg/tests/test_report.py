"""Trace figure rendering."""

from cvel.report import render_trace_plots
from cvel.solver import ConvergenceReport


def _report(iterations):
    report = ConvergenceReport()
    report.iterations = iterations
    for k in range(iterations):
        for column in (report.t1, report.t2, report.t3, report.t4,
                       report.phi_change, report.sigma):
            column.append(0.5 / (k + 1))
        report.energy.append(100.0 - k)
    return report


def test_render_trace_plots_writes_png(tmp_path):
    path = tmp_path / "trace.png"
    render_trace_plots(_report(12), tol=0.01, path=path)
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000


def test_render_trace_plots_handles_empty_report(tmp_path):
    path = tmp_path / "empty.png"
    render_trace_plots(_report(0), tol=0.01, path=path)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
