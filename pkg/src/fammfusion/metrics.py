"""Summary statistics over run reports."""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import geodesy
from .famm import ALL_MODELS


def error_stats(errors):
    """Mean and sample standard deviation (``ddof=1``) of a filter-error series."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if len(e) == 0:
        return float("nan"), float("nan")
    std = float(np.std(e, ddof=1)) if len(e) > 1 else 0.0
    return float(np.mean(e)), std


def model_histogram(models, warmup: int = 0):
    """Fraction of steps per model name, every model listed."""
    models = list(models)[warmup:]
    counts = Counter(models)
    n = max(len(models), 1)
    return {m.name: counts.get(m.name, 0) / n for m in ALL_MODELS}


def summarize(report, warmup: int = 0) -> dict:
    mean, std = error_stats(report.y_p[warmup:])
    out = {
        "steps": len(report),
        "mean_error": mean,
        "std_error": std,
        "dropped": report.dropped,
        "singular_updates": report.singular_updates,
        "wall_clock": report.wall_clock,
    }
    if len(report):
        out["final_trace"] = float(report.trace[-1])
    for name, frac in model_histogram(report.models, warmup).items():
        out[f"model.{name}"] = frac
    for src, n in sorted(report.events.items()):
        out[f"events.{src}"] = n
    return out


def truth_in_report_frame(dataset, report, times=None):
    """Ground-truth positions at ``times`` expressed in the report's local frame.

    The simulator's frame is anchored at its configured origin while a run
    is anchored at its first GPS fix; both are mapped through ECEF.
    """
    times = report.t if times is None else np.asarray(times, dtype=float)
    truth = dataset.truth
    if truth.trajectory is not None:
        pos, _, _, _ = truth.trajectory.evaluate(times)
    else:
        pos = np.column_stack([np.interp(times, truth.t, truth.position[:, k]) for k in range(3)])
    origin = dataset.meta.get("noise.origin_lat_deg"), dataset.meta.get("noise.origin_lon_deg"), dataset.meta.get("noise.origin_alt")
    if report.origin is None or None in origin:
        return pos
    sim_frame = geodesy.LocalFrame(geodesy.GeodeticPosition(np.radians(origin[0]), np.radians(origin[1]), origin[2]))
    run_frame = geodesy.LocalFrame(report.origin)
    return run_frame.ecef_to_local(sim_frame.local_to_ecef(pos))


def rms_position_error(dataset, report, warmup: int = 0) -> float:
    truth = truth_in_report_frame(dataset, report)[warmup:]
    diff = report.position[warmup:] - truth
    if len(diff) == 0:
        return float("nan")
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def loop_gap(report, start_time: float) -> float:
    """Distance between the estimate at ``start_time`` and the final estimate."""
    if len(report) == 0:
        return float("nan")
    k = int(np.clip(np.searchsorted(report.t, start_time), 0, len(report) - 1))
    return float(np.linalg.norm(report.position[-1] - report.position[k]))
