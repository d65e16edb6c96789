"""Grouping and summary statistics for logged rotation angles.

Angles recorded during training are grouped by (snapshot step, task) and
reduced to count, mean, population standard deviation, and a fixed-bin
histogram over [-pi, pi]. Growing per-task dispersion and growing gaps
between per-task means are the signatures of the rotation gate actually
specializing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import pi

import numpy as np

from .numkit import ConfigError
from .trainer import ThetaRecord


@dataclass(frozen=True)
class ThetaSummary:
    step: int
    task_id: int
    count: int
    mean: float
    std: float  # population convention (divide by count)
    histogram: tuple[int, ...]


def summarize(
    records: list[ThetaRecord], snapshot_steps: list[int], n_bins: int
) -> list[ThetaSummary]:
    """One summary per (snapshot step, task).

    Bins are uniform over [-pi, pi], left-closed, with the last bin closed on
    the right. Snapshot steps with no records are skipped with a warning.
    """
    if n_bins < 2:
        raise ConfigError(f"summarize: n_bins must be >= 2, got {n_bins}")
    edges = np.linspace(-pi, pi, n_bins + 1)
    summaries = []
    for step in snapshot_steps:
        at_step = [r for r in records if r.step == step]
        if not at_step:
            warnings.warn(f"no theta records at snapshot step {step}")
            continue
        for task in sorted({r.task_id for r in at_step}):
            values = np.array([r.theta for r in at_step if r.task_id == task])
            counts, _ = np.histogram(values, bins=edges)
            summaries.append(
                ThetaSummary(
                    step=step,
                    task_id=task,
                    count=values.size,
                    mean=float(values.mean()),
                    std=float(values.std()),
                    histogram=tuple(int(c) for c in counts),
                )
            )
    return summaries


def separation(records: list[ThetaRecord], step: int) -> float:
    """Smallest gap between per-task mean angles at one snapshot step."""
    by_task: dict[int, list[float]] = {}
    for r in records:
        if r.step == step:
            by_task.setdefault(r.task_id, []).append(r.theta)
    if len(by_task) < 2:
        raise ValueError(f"separation: need >= 2 tasks at step {step}, got {len(by_task)}")
    means = [float(np.mean(v)) for v in by_task.values()]
    return min(
        abs(means[i] - means[j])
        for i in range(len(means))
        for j in range(i + 1, len(means))
    )


def write_summary_csv(summaries: list[ThetaSummary], path) -> None:
    """CSV rows: step,task_id,count,mean,std,bin_0,...,bin_{n-1} (9 significant digits)."""
    if not summaries:
        raise ValueError("write_summary_csv: no summaries to write")
    n_bins = len(summaries[0].histogram)
    header = "step,task_id,count,mean,std," + ",".join(f"bin_{i}" for i in range(n_bins))
    lines = [header]
    for s in summaries:
        bins = ",".join(str(c) for c in s.histogram)
        lines.append(f"{s.step},{s.task_id},{s.count},{s.mean:.9g},{s.std:.9g},{bins}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
