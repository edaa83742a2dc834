"""
Experiment orchestration: seeds, run directories, loss logs and reports.

A run directory holds ``config.json`` and ``run_meta.json``, a ``run.log``,
one ``seed_<s>/`` directory per seed-run (checkpoints, loss CSVs and
``records.csv``), the shared probe feature cache and the report files.
"""
import json
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from src.config.curricula import Curriculum
from src.config.settings import EnvironmentConfig, ExperimentConfig
from src.core.exceptions import BaseAugclError, ConfigurationError, TrainingError
from src.core.types import AugmentationKind, EvalRecord, TaskResult, TrainMode, kinds_for_dataset
from src.data.datasets import TrainingData, load_dataset, prepare_training_data, subset
from src.eval.probe import FeatureCache, evaluate_encoder
from src.eval.report import (
    CONFIG_FILE,
    RECORDS_FILE,
    SINGLE_AUG_CSV,
    SINGLE_AUG_DIR,
    SINGLE_AUG_MD,
    RunReport,
    SingleAugRecord,
    build_report,
    build_sweep_report,
    collect_records,
    expected_seeds,
    merge_single_aug,
    render_single_aug_markdown,
    write_loss_log,
    write_records,
    write_sweep_index,
)
from src.model.encoder import FrozenEncoder, freeze_snapshot
from src.train.trainer import TaskPlan, Trainer
from src.utils.io import atomic_write_text
from src.utils.logger import attach_run_log, detach_run_log, get_logger

PACKAGE_LOGGER = "src"
META_FILE = "run_meta.json"
FEATURE_CACHE_DIR = "feature_cache"
CL_LOSS_FILE = "cl_loss.csv"

logger = get_logger(__name__)


def code_version() -> str:
    try:
        return version("augcl")
    except PackageNotFoundError:
        return "0.1.0+local"


@dataclass
class SeedOutcome:
    """What one seed-run produced."""
    seed: int
    records: List[EvalRecord] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)


def load_experiment_data(config: ExperimentConfig, environment: Optional[EnvironmentConfig] = None) -> TrainingData:
    """Load, subset and split the configured dataset.

    Raises:
        DataError: If the dataset directory or files are missing or malformed
    """
    dataset = load_dataset(config.train.dataset, config.resolve_data_dir(environment))
    if config.train_subset is not None or config.test_subset is not None:
        dataset = subset(dataset, config.train_subset, config.test_subset, config.train.seed)
    data = prepare_training_data(dataset, config.train.seed)
    logger.info(
        "Dataset ready",
        dataset=config.train.dataset,
        train=len(data.train_labels),
        val=len(data.val_labels),
        test=len(data.test_labels),
    )
    return data


def write_run_files(config: ExperimentConfig, run_dir: Path) -> None:
    """Config snapshot and code version, enough to reproduce the run."""
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(run_dir / CONFIG_FILE, config.to_json())
    meta = {
        "code_version": code_version(),
        "curriculum": config.train.curriculum.id,
        "tasks": [kind.value for kind in config.train.curriculum.tasks],
        "seeds": expected_seeds(config),
    }
    atomic_write_text(run_dir / META_FILE, json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _make_evaluator(config: ExperimentConfig, data: TrainingData, seed: int, cache: FeatureCache):
    def evaluate(frozen: FrozenEncoder, result: TaskResult) -> Tuple[float, float]:
        outcome = evaluate_encoder(frozen, data, config.probe, seed, cache)
        return outcome.test_accuracy, outcome.val_accuracy
    return evaluate


def _record(config: ExperimentConfig, seed: int, result: TaskResult) -> EvalRecord:
    return EvalRecord(
        curriculum=config.train.curriculum.id,
        prefix_length=result.task_index,
        mode=result.mode,
        seed=seed,
        probe_accuracy=float(result.probe_accuracy),
        val_accuracy=float(result.val_accuracy),
    )


def run_seed(config: ExperimentConfig, data: TrainingData, seed: int, run_dir: Path) -> SeedOutcome:
    """CL over the whole curriculum, then MTL for every prefix, for one seed."""
    seed_dir = Path(run_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    cache = FeatureCache(Path(run_dir) / FEATURE_CACHE_DIR)
    trainer = Trainer(config, data, seed)
    evaluator = _make_evaluator(config, data, seed, cache)
    outcome = SeedOutcome(seed=seed)
    records_path = seed_dir / RECORDS_FILE
    write_records(records_path, [])

    if TrainMode.CL in config.train.modes:
        try:
            results = trainer.run_curriculum_cl(seed_dir, evaluator)
        except TrainingError as e:
            results = e.completed
            outcome.failures.append(f"seed {seed} CL: {e}")
            logger.error("CL run failed", seed=seed, task=e.task_index, completed=len(results), error=str(e))
        except BaseAugclError as e:
            results = []
            outcome.failures.append(f"seed {seed} CL: {e}")
            logger.error("CL evaluation failed", seed=seed, error=str(e))
        write_loss_log(seed_dir / CL_LOSS_FILE, [r for result in results for r in result.loss_series])
        outcome.records.extend(_record(config, seed, result) for result in results)
        write_records(records_path, outcome.records)

    if TrainMode.MTL in config.train.modes:
        for k in range(1, len(config.train.curriculum) + 1):
            try:
                result = trainer.run_joint_mtl(k, seed_dir, evaluator)
            except BaseAugclError as e:
                outcome.failures.append(f"seed {seed} MTL k={k}: {e}")
                logger.error("MTL prefix failed", seed=seed, k=k, error=str(e))
                continue
            write_loss_log(seed_dir / f"mtl_k{k}_loss.csv", result.loss_series)
            outcome.records.append(_record(config, seed, result))
            write_records(records_path, outcome.records)

    logger.info("Seed finished", seed=seed, records=len(outcome.records), failures=len(outcome.failures))
    return outcome


def run_experiment(
    config: ExperimentConfig,
    data: TrainingData,
    parallel_runs: int = 1,
    run_dir: Optional[Path] = None,
) -> RunReport:
    """
    Every seed-run of ``config``, then the report rebuilt from the logs on disk.

    Seed-runs execute in worker processes when ``parallel_runs > 1``. Failed
    cells are recorded and show up as incomplete in the report.
    """
    run_dir = Path(run_dir or config.run_dir)
    write_run_files(config, run_dir)
    handler = attach_run_log(PACKAGE_LOGGER, run_dir)
    seeds = expected_seeds(config)
    failures: List[str] = []
    logger.info(
        "Starting experiment",
        run_dir=str(run_dir),
        curriculum=config.train.curriculum.id,
        seeds=len(seeds),
        mode=config.train.mode,
        workers=parallel_runs,
    )
    try:
        if parallel_runs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(parallel_runs, len(seeds))) as executor:
                futures = {executor.submit(run_seed, config, data, seed, run_dir): seed for seed in seeds}
                for future in as_completed(futures):
                    seed = futures[future]
                    try:
                        failures.extend(future.result().failures)
                    except Exception as e:
                        failures.append(f"seed {seed}: {e}")
                        logger.error("Seed worker crashed", seed=seed, error=str(e))
        else:
            for seed in seeds:
                failures.extend(run_seed(config, data, seed, run_dir).failures)

        report = build_report(run_dir, collect_records(run_dir, seeds), config)
        report.failures = sorted(failures)
        return report
    finally:
        detach_run_log(PACKAGE_LOGGER, handler)


def sweep_root(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / (config.run_name or f"{config.train.dataset}_sweep")


def run_sweep(
    config: ExperimentConfig,
    curricula: Sequence[Curriculum],
    data: TrainingData,
    parallel_runs: int = 1,
) -> List[RunReport]:
    """One experiment per curriculum under a shared root, plus a pooled summary."""
    root = sweep_root(config)
    configs = [
        replace(config.with_curriculum(curriculum), output_dir=str(root), run_name=curriculum.id)
        for curriculum in curricula
    ]
    for sub_config in configs:
        errors = sub_config.validate()
        if errors:
            raise ConfigurationError(f"Invalid curriculum {sub_config.train.curriculum.id}", errors)
    root.mkdir(parents=True, exist_ok=True)
    reports = [run_experiment(sub_config, data, parallel_runs) for sub_config in configs]
    write_sweep_index(root, [c.train.curriculum.id for c in configs])
    build_sweep_report(root, reports, configs)
    return reports


def parse_kinds(names: Sequence[Union[str, AugmentationKind]], dataset_name: str) -> List[AugmentationKind]:
    """
    Resolve kind names for a dataset; ``all`` expands to the dataset's families.

    Raises:
        ConfigurationError: If a name is unknown or not available for the dataset
    """
    allowed = kinds_for_dataset(dataset_name)
    kinds: List[AugmentationKind] = []
    errors: List[str] = []
    for name in names:
        if isinstance(name, str) and name.strip().lower() == "all":
            kinds.extend(k for k in allowed if k not in kinds)
            continue
        try:
            kind = AugmentationKind.parse(name)
        except ValueError as e:
            errors.append(f"kind: {e}")
            continue
        if kind not in allowed:
            errors.append(f"kind: {kind.value} is not a {dataset_name} augmentation")
        elif kind not in kinds:
            kinds.append(kind)
    if errors or not kinds:
        raise ConfigurationError("Invalid augmentation kind", errors or ["kind: none given"])
    return kinds


def run_single_augmentation(
    config: ExperimentConfig,
    data: TrainingData,
    kinds: Sequence[AugmentationKind],
) -> List[SingleAugRecord]:
    """
    SSL with one augmentation family for ``epochs_per_task`` epochs, then a probe.

    Rows are merged into ``<run_dir>/single_aug/single_aug.csv``; reruns of a
    kind and seed replace the earlier row. Returns the whole merged table.
    """
    kinds = parse_kinds(kinds, config.train.dataset)
    out_dir = config.run_dir / SINGLE_AUG_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = attach_run_log(PACKAGE_LOGGER, out_dir)
    cache = FeatureCache(out_dir / FEATURE_CACHE_DIR)
    new_records: List[SingleAugRecord] = []
    try:
        for seed in expected_seeds(config):
            trainer = Trainer(config, data, seed)
            seed_dir = out_dir / f"seed_{seed}"
            for kind in kinds:
                model = trainer.new_encoder()
                plan = TaskPlan(TrainMode.CL, 1, config.train.epochs_per_task, seed_dir / f"{kind.value}.ckpt")
                result = trainer.train_task(model, None, None, [kind], plan)
                write_loss_log(seed_dir / f"{kind.value}_loss.csv", result.loss_series)
                outcome = evaluate_encoder(freeze_snapshot(model), data, config.probe, seed, cache)
                new_records.append(SingleAugRecord(kind.value, seed, outcome.test_accuracy, outcome.val_accuracy))
                logger.info("Single augmentation evaluated", kind=kind.value, seed=seed,
                            probe_accuracy=outcome.test_accuracy)
        merged = merge_single_aug(out_dir / SINGLE_AUG_CSV, new_records)
        atomic_write_text(out_dir / SINGLE_AUG_MD, render_single_aug_markdown(config, merged))
        return merged
    finally:
        detach_run_log(PACKAGE_LOGGER, handler)
