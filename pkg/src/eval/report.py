"""
Run reports: record persistence and CSV / Markdown rendering.

Reports are rebuilt from the CSV logs on disk, so regenerating a report
from a finished run directory reproduces the original byte for byte.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config.settings import ExperimentConfig
from src.core.exceptions import ConfigurationError, LogCorruptionError
from src.core.types import EvalRecord, NegativeTransferStat, StepRecord, TrainMode
from src.eval.metrics import (
    WinCount,
    count_wins,
    mean_by_prefix,
    negative_transfer,
    per_seed_negative_transfer,
    pool_negative_transfer,
    winner_marks,
)
from src.utils.io import atomic_write_text
from src.utils.logger import get_logger

logger = get_logger(__name__)

RECORD_COLUMNS = ["curriculum", "prefix_length", "mode", "seed", "probe_accuracy", "val_accuracy"]
LOSS_COLUMNS = ["step", "task", "kind", "ssl_term", "distill_a", "distill_b", "total"]
SINGLE_AUG_COLUMNS = ["kind", "seed", "probe_accuracy", "val_accuracy"]
NEGTRANSFER_COLUMNS = ["scope", "curriculum", "seed", "mode", "drop_count", "average_drop", "events"]

CONFIG_FILE = "config.json"
RECORDS_FILE = "records.csv"
REPORT_CSV = "report.csv"
REPORT_MD = "report.md"
NEGTRANSFER_CSV = "negtransfer.csv"
SINGLE_AUG_DIR = "single_aug"
SINGLE_AUG_CSV = "single_aug.csv"
SINGLE_AUG_MD = "single_aug.md"
SWEEP_FILE = "sweep.json"
MISSING = "—"
MODE_ORDER = (TrainMode.MTL, TrainMode.CL)


@dataclass
class RunReport:
    """What a report build found and wrote."""
    run_dir: Path
    records: List[EvalRecord]
    missing_cells: List[Tuple[int, str, int]] = field(default_factory=list)
    negative_transfer: Dict[TrainMode, NegativeTransferStat] = field(default_factory=dict)
    wins: Optional[WinCount] = None
    failures: List[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing_cells


@dataclass
class SingleAugRecord:
    kind: str
    seed: int
    probe_accuracy: float
    val_accuracy: float


# CSV persistence

def _write_frame(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def _read_frame(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise LogCorruptionError(f"Missing log file {path}", path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise LogCorruptionError(f"Cannot parse {path}: {e}", path) from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise LogCorruptionError(f"{path} lacks columns {missing}", path)
    return frame


def records_to_frame(records: Iterable[EvalRecord]) -> pd.DataFrame:
    rows = [
        {
            "curriculum": r.curriculum,
            "prefix_length": r.prefix_length,
            "mode": r.mode.value,
            "seed": r.seed,
            "probe_accuracy": r.probe_accuracy,
            "val_accuracy": r.val_accuracy,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def sort_records(records: Iterable[EvalRecord]) -> List[EvalRecord]:
    return sorted(records, key=lambda r: (r.curriculum, r.mode.value, r.prefix_length, r.seed))


def write_records(path: Path, records: Iterable[EvalRecord]) -> Path:
    return _write_frame(path, records_to_frame(sort_records(records)))


def read_records(path: Path) -> List[EvalRecord]:
    """
    Parse a records CSV.

    Raises:
        LogCorruptionError: If the file is missing, unparsable or holds invalid values
    """
    frame = _read_frame(path, RECORD_COLUMNS)
    records = []
    try:
        for row in frame.itertuples(index=False):
            records.append(EvalRecord(
                curriculum=str(row.curriculum),
                prefix_length=int(row.prefix_length),
                mode=TrainMode(row.mode),
                seed=int(row.seed),
                probe_accuracy=float(row.probe_accuracy),
                val_accuracy=float(row.val_accuracy),
            ))
    except (TypeError, ValueError) as e:
        raise LogCorruptionError(f"Invalid record in {path}: {e}", path) from e
    return records


def write_loss_log(path: Path, series: Iterable[StepRecord]) -> Path:
    frame = pd.DataFrame([vars(r) for r in series], columns=LOSS_COLUMNS)
    return _write_frame(path, frame)


def read_loss_log(path: Path) -> List[StepRecord]:
    frame = _read_frame(path, LOSS_COLUMNS)
    try:
        return [
            StepRecord(int(r.step), int(r.task), str(r.kind), float(r.ssl_term),
                       float(r.distill_a), float(r.distill_b), float(r.total))
            for r in frame.itertuples(index=False)
        ]
    except (TypeError, ValueError) as e:
        raise LogCorruptionError(f"Invalid loss row in {path}: {e}", path) from e


def write_single_aug(path: Path, records: Iterable[SingleAugRecord]) -> Path:
    ordered = sorted(records, key=lambda r: (r.kind, r.seed))
    return _write_frame(path, pd.DataFrame([vars(r) for r in ordered], columns=SINGLE_AUG_COLUMNS))


def read_single_aug(path: Path) -> List[SingleAugRecord]:
    frame = _read_frame(path, SINGLE_AUG_COLUMNS)
    try:
        return [
            SingleAugRecord(str(r.kind), int(r.seed), float(r.probe_accuracy), float(r.val_accuracy))
            for r in frame.itertuples(index=False)
        ]
    except (TypeError, ValueError) as e:
        raise LogCorruptionError(f"Invalid single-augmentation row in {path}: {e}", path) from e


def merge_single_aug(path: Path, new_records: Sequence[SingleAugRecord]) -> List[SingleAugRecord]:
    """Add rows to the single-augmentation log, replacing rows with the same kind and seed."""
    existing = read_single_aug(path) if path.exists() else []
    replaced = {(r.kind, r.seed) for r in new_records}
    merged = [r for r in existing if (r.kind, r.seed) not in replaced] + list(new_records)
    write_single_aug(path, merged)
    return sorted(merged, key=lambda r: (r.kind, r.seed))


# Rendering

def _fmt(value: Optional[float], bold: bool = False) -> str:
    if value is None:
        return MISSING
    text = f"{value:.2f}"
    return f"**{text}**" if bold else text


def _stat_cells(stat: Optional[NegativeTransferStat]) -> List[str]:
    if stat is None:
        return [MISSING, MISSING]
    return [str(stat.drop_count), f"{stat.average_drop:.2f}"]


def _events_text(stat: NegativeTransferStat) -> str:
    return ";".join(f"{k}:{delta!r}" for k, delta in stat.drop_events)


def expected_seeds(config: ExperimentConfig) -> List[int]:
    return [config.train.seed + r for r in range(config.train.run_count)]


def find_missing_cells(records: Sequence[EvalRecord], config: ExperimentConfig) -> List[Tuple[int, str, int]]:
    present = {(r.seed, r.mode, r.prefix_length) for r in records}
    task_count = len(config.train.curriculum)
    return [
        (seed, mode.value, k)
        for seed in expected_seeds(config)
        for mode in config.train.modes
        for k in range(1, task_count + 1)
        if (seed, mode, k) not in present
    ]


def negative_transfer_rows(
    records: Sequence[EvalRecord], curriculum_id: str, task_count: int
) -> Tuple[List[Dict[str, object]], Dict[TrainMode, NegativeTransferStat], Dict[TrainMode, Dict[int, NegativeTransferStat]]]:
    """Rows for negtransfer.csv plus pooled and per-seed statistics."""
    rows: List[Dict[str, object]] = []
    pooled: Dict[TrainMode, NegativeTransferStat] = {}
    by_seed: Dict[TrainMode, Dict[int, NegativeTransferStat]] = {}
    for mode in MODE_ORDER:
        seeds = per_seed_negative_transfer(records, mode, task_count)
        if not seeds:
            continue
        by_seed[mode] = seeds
        pooled[mode] = pool_negative_transfer(seeds.values(), mode)
        means = mean_by_prefix(records, mode)
        curve = negative_transfer([means[k] for k in sorted(means)], mode)
        for scope, seed, stat in [("pooled", "all", pooled[mode]), ("mean_curve", "all", curve)] + [
            ("seed", str(s), st) for s, st in seeds.items()
        ]:
            rows.append({
                "scope": scope,
                "curriculum": curriculum_id,
                "seed": seed,
                "mode": mode.value,
                "drop_count": stat.drop_count,
                "average_drop": stat.average_drop,
                "events": _events_text(stat),
            })
    return rows, pooled, by_seed


def render_single_aug_table(records: Sequence[SingleAugRecord]) -> List[str]:
    lines = ["| Augmentation | Mean probe accuracy | Seeds |", "|---|---|---|"]
    by_kind: Dict[str, List[float]] = {}
    for record in records:
        by_kind.setdefault(record.kind, []).append(record.probe_accuracy)
    for kind in sorted(by_kind):
        values = by_kind[kind]
        lines.append(f"| {kind} | {np.mean(values):.2f} | {len(values)} |")
    return lines


def render_markdown(
    config: ExperimentConfig,
    records: Sequence[EvalRecord],
    missing: Sequence[Tuple[int, str, int]],
    nt_pooled: Dict[TrainMode, NegativeTransferStat],
    nt_by_seed: Dict[TrainMode, Dict[int, NegativeTransferStat]],
    wins: WinCount,
    single_aug: Optional[Sequence[SingleAugRecord]] = None,
) -> str:
    train = config.train
    curriculum = train.curriculum
    seeds = expected_seeds(config)
    means = {mode: mean_by_prefix(records, mode) for mode in MODE_ORDER}

    lines = [
        f"# Run report: {curriculum.id}",
        "",
        f"Dataset: {train.dataset}, arch: {train.arch.value}, d_proj: {train.d_proj}, "
        f"epochs/task: {train.epochs_per_task}, seeds: {', '.join(str(s) for s in seeds)}",
        "",
    ]
    if single_aug:
        lines += ["## Individual augmentations", ""] + render_single_aug_table(single_aug) + [""]

    lines += [
        "## CL vs MTL probe accuracy (mean over seeds)",
        "",
        "| k | Task added | MTL | CL |",
        "|---|---|---|---|",
    ]
    for k, kind in enumerate(curriculum.tasks, start=1):
        mtl, cl = means[TrainMode.MTL].get(k), means[TrainMode.CL].get(k)
        marks = winner_marks(cl, mtl)
        lines.append(f"| {k} | {kind.value} | {_fmt(mtl, marks[TrainMode.MTL])} | {_fmt(cl, marks[TrainMode.CL])} |")
    compared = wins.cl_wins + wins.mtl_wins + wins.ties
    lines += ["", f"CL is at least as accurate as MTL on {wins.cl_at_least_mtl} of {compared} prefixes.", ""]

    lines += [
        "## Average negative transfer",
        "",
        "| Scope | MTL drops | MTL average | CL drops | CL average |",
        "|---|---|---|---|---|",
        "| pooled | " + " | ".join(_stat_cells(nt_pooled.get(TrainMode.MTL)) + _stat_cells(nt_pooled.get(TrainMode.CL))) + " |",
    ]
    for seed in seeds:
        cells = _stat_cells(nt_by_seed.get(TrainMode.MTL, {}).get(seed)) + _stat_cells(
            nt_by_seed.get(TrainMode.CL, {}).get(seed)
        )
        lines.append(f"| seed {seed} | " + " | ".join(cells) + " |")
    lines.append("")

    if missing:
        lines += ["## Incomplete cells", ""]
        lines += [f"- seed {seed}, {mode}, k={k}" for seed, mode, k in missing]
        lines.append("")
    return "\n".join(lines)


def build_report(
    run_dir: Path,
    records: Sequence[EvalRecord],
    config: ExperimentConfig,
) -> RunReport:
    """Write report.csv, report.md and negtransfer.csv for one curriculum run."""
    run_dir = Path(run_dir)
    records = sort_records(records)
    task_count = len(config.train.curriculum)
    missing = find_missing_cells(records, config)
    rows, pooled, by_seed = negative_transfer_rows(records, config.train.curriculum.id, task_count)
    wins = count_wins(mean_by_prefix(records, TrainMode.CL), mean_by_prefix(records, TrainMode.MTL))

    single_path = run_dir / SINGLE_AUG_DIR / SINGLE_AUG_CSV
    single_aug = read_single_aug(single_path) if single_path.exists() else None

    write_records(run_dir / REPORT_CSV, records)
    _write_frame(run_dir / NEGTRANSFER_CSV, pd.DataFrame(rows, columns=NEGTRANSFER_COLUMNS))
    atomic_write_text(
        run_dir / REPORT_MD, render_markdown(config, records, missing, pooled, by_seed, wins, single_aug)
    )
    if missing:
        logger.warning("Report has incomplete cells", run_dir=str(run_dir), missing=len(missing))
    logger.info("Report written", run_dir=str(run_dir), records=len(records))
    return RunReport(run_dir=run_dir, records=list(records), missing_cells=missing, negative_transfer=pooled, wins=wins)


def load_run_config(run_dir: Path) -> ExperimentConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.exists():
        raise LogCorruptionError(f"No {CONFIG_FILE} in {run_dir}", path)
    try:
        return ExperimentConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ConfigurationError) as e:
        raise LogCorruptionError(f"Corrupt run config {path}: {e}", path) from e


def collect_records(run_dir: Path, seeds: Optional[Sequence[int]] = None) -> List[EvalRecord]:
    """Per-seed record logs under ``run_dir``, restricted to ``seeds`` when given."""
    records: List[EvalRecord] = []
    if seeds is None:
        paths = sorted(Path(run_dir).glob(f"seed_*/{RECORDS_FILE}"))
    else:
        paths = [Path(run_dir) / f"seed_{seed}" / RECORDS_FILE for seed in seeds]
    for path in paths:
        if path.exists():
            records.extend(read_records(path))
    return records


def regenerate_report(run_dir: Path) -> List[RunReport]:
    """
    Rebuild reports from persisted logs only.

    A curriculum sweep directory is detected by its ``sweep.json`` and each
    curriculum subdirectory is rebuilt before the pooled summary.

    Raises:
        LogCorruptionError: If the directory holds no usable run logs
    """
    run_dir = Path(run_dir)
    if (run_dir / SWEEP_FILE).exists():
        return regenerate_sweep(run_dir)
    config = load_run_config(run_dir)
    return [build_report(run_dir, collect_records(run_dir, expected_seeds(config)), config)]


def regenerate_sweep(root: Path) -> List[RunReport]:
    try:
        ids = json.loads((root / SWEEP_FILE).read_text(encoding="utf-8"))["curricula"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise LogCorruptionError(f"Corrupt sweep index {root / SWEEP_FILE}: {e}", root / SWEEP_FILE) from e
    reports = []
    configs = []
    for curriculum_id in ids:
        sub_dir = root / curriculum_id
        config = load_run_config(sub_dir)
        configs.append(config)
        reports.append(build_report(sub_dir, collect_records(sub_dir, expected_seeds(config)), config))
    build_sweep_report(root, reports, configs)
    return reports


def write_sweep_index(root: Path, curriculum_ids: Sequence[str]) -> Path:
    return atomic_write_text(root / SWEEP_FILE, json.dumps({"curricula": list(curriculum_ids)}, indent=2) + "\n")


def build_sweep_report(root: Path, reports: Sequence[RunReport], configs: Sequence[ExperimentConfig]) -> None:
    """Negative transfer pooled over every curriculum and seed, with per-curriculum rows."""
    rows: List[Dict[str, object]] = []
    per_curriculum: List[Tuple[str, Dict[TrainMode, NegativeTransferStat]]] = []
    all_stats: List[NegativeTransferStat] = []
    for report, config in zip(reports, configs):
        curriculum_id = config.train.curriculum.id
        sub_rows, pooled, by_seed = negative_transfer_rows(report.records, curriculum_id, len(config.train.curriculum))
        rows.extend(sub_rows)
        per_curriculum.append((curriculum_id, pooled))
        for seeds in by_seed.values():
            all_stats.extend(seeds.values())

    overall = {mode: pool_negative_transfer(all_stats, mode) for mode in MODE_ORDER}
    rows = [
        {
            "scope": "pooled", "curriculum": "all", "seed": "all", "mode": mode.value,
            "drop_count": overall[mode].drop_count, "average_drop": overall[mode].average_drop,
            "events": _events_text(overall[mode]),
        }
        for mode in MODE_ORDER
    ] + rows

    lines = [
        "# Curriculum sweep report",
        "",
        "| Curriculum | MTL drops | MTL average | CL drops | CL average |",
        "|---|---|---|---|---|",
        "| all | " + " | ".join(_stat_cells(overall[TrainMode.MTL]) + _stat_cells(overall[TrainMode.CL])) + " |",
    ]
    for curriculum_id, pooled in per_curriculum:
        cells = _stat_cells(pooled.get(TrainMode.MTL)) + _stat_cells(pooled.get(TrainMode.CL))
        lines.append(f"| {curriculum_id} | " + " | ".join(cells) + " |")
    lines.append("")

    all_records = [r for report in reports for r in report.records]
    write_records(root / REPORT_CSV, all_records)
    _write_frame(root / NEGTRANSFER_CSV, pd.DataFrame(rows, columns=NEGTRANSFER_COLUMNS))
    atomic_write_text(root / REPORT_MD, "\n".join(lines))
    logger.info("Sweep report written", root=str(root), curricula=len(reports))


def render_single_aug_markdown(config: ExperimentConfig, records: Sequence[SingleAugRecord]) -> str:
    lines = [
        f"# Individual augmentations: {config.train.dataset}",
        "",
        f"Arch: {config.train.arch.value}, epochs: {config.train.epochs_per_task}",
        "",
    ] + render_single_aug_table(records) + [""]
    return "\n".join(lines)
