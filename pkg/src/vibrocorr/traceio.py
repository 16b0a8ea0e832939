"""Trace persistence: provenance-stamped CSV files and SVG plots.

CSV layout: ``# key=value`` header lines carrying the trace metadata and the
full parameter set, a column line (``t_ps,value`` or ``tau_ps,value``), then
one row per sample at 17 significant digits. Files round-trip to equal
traces and contain nothing non-deterministic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .correlations import CorrelationTrace

_FORMAT_TAG = "vibrocorr-trace-v1"


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_trace(path, trace: CorrelationTrace, provenance: dict | None = None):
    """Write one trace as CSV; provenance keys are sorted for determinism."""
    lines = [f"# format={_FORMAT_TAG}", f"# axis={trace.axis}"]
    if trace.op_first is not None:
        lines.append(f"# op_first={trace.op_first}")
    if trace.op_second is not None:
        lines.append(f"# op_second={trace.op_second}")
    lines.append(f"# normalized={'true' if trace.normalized else 'false'}")
    if trace.reference_value is not None:
        lines.append(f"# reference_value={_fmt(trace.reference_value)}")
    if trace.t_anchor_ps is not None:
        lines.append(f"# t_anchor_ps={_fmt(trace.t_anchor_ps)}")
    for key in sorted(provenance or {}):
        lines.append(f"# {key}={provenance[key]}")
    lines.append(f"{trace.axis}_ps,value")
    for t, v in zip(trace.grid_ps, trace.values):
        lines.append(f"{_fmt(t)},{_fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path):
    """Read a CSV written by :func:`write_trace`; returns (trace, provenance)."""
    meta: dict[str, str] = {}
    grid: list[float] = []
    values: list[float] = []
    with open(path, "r") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if meta.get("format") != _FORMAT_TAG:
                raise ValueError(f"{path} is not a {_FORMAT_TAG} file")
            if line.endswith(",value"):
                continue
            t_text, _, v_text = line.partition(",")
            grid.append(float(t_text))
            values.append(float(v_text))
    if meta.get("format") != _FORMAT_TAG:
        raise ValueError(f"{path} is not a {_FORMAT_TAG} file")
    trace_keys = ("format", "axis", "op_first", "op_second", "normalized",
                  "reference_value", "t_anchor_ps")
    trace = CorrelationTrace(
        axis=meta["axis"],
        grid_ps=np.array(grid),
        values=np.array(values),
        op_first=meta.get("op_first"),
        op_second=meta.get("op_second"),
        normalized=meta.get("normalized") == "true",
        reference_value=float(meta["reference_value"]) if "reference_value" in meta else None,
        t_anchor_ps=float(meta["t_anchor_ps"]) if "t_anchor_ps" in meta else None,
    )
    provenance = {k: v for k, v in meta.items() if k not in trace_keys}
    return trace, provenance


def render_svg(labeled_traces, path, title: str = "", ylabel: str = "value"):
    """Plot traces on shared axes to an SVG file; input data is untouched."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    axis = None
    for label, trace in labeled_traces:
        ax.plot(trace.grid_ps, trace.values, label=label, linewidth=1.0)
        axis = trace.axis
    ax.set_xlabel("tau (ps)" if axis == "tau" else "t (ps)")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(labeled_traces) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
