"""
Negative transfer and CL-versus-MTL comparison statistics.
"""
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.core.types import EvalRecord, NegativeTransferStat, TrainMode


def negative_transfer(accuracies: Sequence[float], mode: TrainMode = TrainMode.CL) -> NegativeTransferStat:
    """
    Accuracy drops between consecutive prefixes.

    A drop from prefix ``k`` to ``k + 1`` is recorded as ``(k + 1, delta)``
    with ``delta < 0``; sequences shorter than two give no events.
    """
    events = []
    for position in range(1, len(accuracies)):
        delta = float(accuracies[position]) - float(accuracies[position - 1])
        if delta < 0:
            events.append((position + 1, delta))
    return NegativeTransferStat(mode=mode, drop_events=events)


def pool_negative_transfer(stats: Iterable[NegativeTransferStat], mode: TrainMode) -> NegativeTransferStat:
    """All drop events of ``stats`` in one statistic."""
    events = [event for stat in stats if stat.mode is mode for event in stat.drop_events]
    return NegativeTransferStat(mode=mode, drop_events=events)


def accuracy_grid(records: Iterable[EvalRecord], mode: TrainMode) -> Dict[int, Dict[int, float]]:
    """``{seed: {k: probe_accuracy}}`` for one mode."""
    grid: Dict[int, Dict[int, float]] = defaultdict(dict)
    for record in records:
        if record.mode is mode:
            grid[record.seed][record.prefix_length] = record.probe_accuracy
    return dict(grid)


def per_seed_negative_transfer(
    records: Sequence[EvalRecord], mode: TrainMode, task_count: int
) -> Dict[int, NegativeTransferStat]:
    """Negative transfer of every seed whose prefix sequence is complete."""
    stats = {}
    for seed, cells in sorted(accuracy_grid(records, mode).items()):
        if all(k in cells for k in range(1, task_count + 1)):
            stats[seed] = negative_transfer([cells[k] for k in range(1, task_count + 1)], mode)
    return stats


def mean_by_prefix(records: Iterable[EvalRecord], mode: TrainMode) -> Dict[int, float]:
    """Mean probe accuracy over seeds for each prefix length."""
    values: Dict[int, List[float]] = defaultdict(list)
    for record in records:
        if record.mode is mode:
            values[record.prefix_length].append(record.probe_accuracy)
    return {k: float(np.mean(v)) for k, v in sorted(values.items())}


@dataclass
class WinCount:
    """Prefixes where each regime has the higher mean accuracy."""
    cl_wins: int = 0
    mtl_wins: int = 0
    ties: int = 0

    @property
    def cl_at_least_mtl(self) -> int:
        return self.cl_wins + self.ties


def count_wins(cl_means: Dict[int, float], mtl_means: Dict[int, float]) -> WinCount:
    counts = WinCount()
    for k in sorted(set(cl_means) & set(mtl_means)):
        if cl_means[k] > mtl_means[k]:
            counts.cl_wins += 1
        elif cl_means[k] < mtl_means[k]:
            counts.mtl_wins += 1
        else:
            counts.ties += 1
    return counts


def winner_marks(cl_mean: Optional[float], mtl_mean: Optional[float]) -> Dict[TrainMode, bool]:
    """Which cell of a CL/MTL pair is bold; equal means mark both."""
    if cl_mean is None or mtl_mean is None:
        return {TrainMode.CL: False, TrainMode.MTL: False}
    best = max(cl_mean, mtl_mean)
    return {TrainMode.CL: cl_mean == best, TrainMode.MTL: mtl_mean == best}
