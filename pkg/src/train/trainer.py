"""
Continual (CL) and joint multi-task (MTL) self-supervised training loops.

CL visits the curriculum one task at a time: after each task the encoder is
frozen as the distillation target, the predictor is rebuilt and the
optimizer state is cleared. MTL trains a fresh encoder on a prefix of the
curriculum with the same total number of optimizer steps and no
distillation.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.augment.views import AugmentationStream, KindSpec, make_view_pair
from src.config.settings import ExperimentConfig
from src.core.exceptions import BaseAugclError, ContractError, TrainingError
from src.core.types import AugmentationKind, LossBreakdown, MtlSampling, StepRecord, TaskResult, TrainMode
from src.data.batching import BatchIterator, next_batch
from src.data.datasets import TrainingData
from src.loss.barlow import barlow_twins_breakdown, cassle_loss
from src.model.checkpoint import save_checkpoint
from src.model.encoder import (
    EncoderModel,
    FrozenEncoder,
    Predictor,
    build_encoder,
    build_predictor,
    embed,
    freeze_snapshot,
    parameter_checksum,
)
from src.numeric.optim import Adam
from src.numeric.tensor import Tape, backward
from src.utils.logger import get_logger
from src.utils.seeding import derive_seed, make_rng

MIXED_KIND = "mixed"

# Called after every CL task / MTL prefix with the frozen encoder; returns (test, val) accuracy
Evaluator = Callable[[FrozenEncoder, TaskResult], Tuple[float, float]]


@dataclass
class TaskPlan:
    """Where a task's random streams and outputs live."""
    mode: TrainMode
    index: int
    epochs: int
    checkpoint_path: Optional[Path] = None


class Trainer:
    """Runs SSL tasks for one seed of an experiment."""

    def __init__(self, config: ExperimentConfig, data: TrainingData, seed: int):
        self.config = config
        self.train_config = config.train
        self.data = data
        self.seed = seed
        self.logger = get_logger(__name__)
        self.logger.set_context(seed=seed)
        self._images = data.train_images.astype(self.train_config.precision, copy=False)

    # Construction

    def init_seed(self) -> int:
        """Initial-weight seed shared by CL and every MTL prefix of this run."""
        return derive_seed(self.seed, "init")

    def new_encoder(self) -> EncoderModel:
        channels, size, _ = self.data.dataset.image_shape
        return build_encoder(
            self.train_config.arch,
            self.train_config.d_proj,
            self.init_seed(),
            in_channels=channels,
            image_size=size,
            dtype=self.train_config.precision,
        )

    def new_predictor(self, task_index: int) -> Predictor:
        return build_predictor(
            self.train_config.d_proj,
            derive_seed(self.seed, "predictor", task_index),
            dtype=self.train_config.precision,
        )

    def batch_iterator(self, plan: TaskPlan) -> BatchIterator:
        return BatchIterator(
            np.arange(len(self._images)),
            self.train_config.batch_size,
            derive_seed(self.seed, plan.mode.value, plan.index, "batches"),
            drop_last=True,
        )

    # Training

    def train_task(
        self,
        model: EncoderModel,
        frozen_prev: Optional[FrozenEncoder],
        g: Optional[Predictor],
        kinds: Sequence[AugmentationKind],
        plan: TaskPlan,
        sampling: MtlSampling = MtlSampling.PER_BATCH,
        step_offset: int = 0,
    ) -> TaskResult:
        """
        Train ``model`` for ``plan.epochs`` epochs on views drawn from ``kinds``.

        With a frozen previous model the distillation objective is used and
        ``g`` is trained alongside the encoder.
        """
        if (frozen_prev is None) != (g is None):
            raise ContractError("A predictor is needed exactly when a frozen previous model is given")

        cfg = self.train_config
        params = model.parameters() + (g.parameters() if g is not None else [])
        optimizer = Adam(params, lr=cfg.lr)
        optimizer.reset()
        iterator = self.batch_iterator(plan)
        task_seed = derive_seed(self.seed, plan.mode.value, plan.index, "augment")
        task_rng = make_rng(self.seed, plan.mode.value, plan.index, "tasks")
        frozen_checksum = parameter_checksum(frozen_prev) if frozen_prev is not None else None

        model.train()
        if g is not None:
            g.train()

        result = TaskResult(
            task_index=plan.index,
            mode=plan.mode,
            kinds=list(kinds),
            batches_per_epoch=iterator.batches_per_epoch,
            epochs=plan.epochs,
            frozen_checksum=frozen_checksum,
        )
        self.logger.info(
            "Starting task",
            mode=plan.mode.value,
            task=plan.index,
            kinds=",".join(k.value for k in kinds),
            epochs=plan.epochs,
            batches_per_epoch=iterator.batches_per_epoch,
        )

        step = step_offset
        for epoch in range(plan.epochs):
            epoch_kind = kinds[int(task_rng.integers(len(kinds)))] if sampling is MtlSampling.PER_EPOCH else None
            epoch_losses: List[LossBreakdown] = []
            for batch_in_epoch in range(iterator.batches_per_epoch):
                batch_index = epoch * iterator.batches_per_epoch + batch_in_epoch
                batch = next_batch(iterator, self._images)
                kind_spec, kind_label = self._draw_kinds(kinds, sampling, epoch_kind, task_rng, len(batch))
                views = make_view_pair(kind_spec, self.config.augmentations, batch, AugmentationStream(task_seed, batch_index))
                try:
                    breakdown = self._step(model, frozen_prev, g, views.view_a, views.view_b, optimizer)
                except BaseAugclError as e:
                    self.logger.error(
                        "Training step failed",
                        mode=plan.mode.value, task=plan.index, step=step, kind=kind_label, error=str(e),
                    )
                    raise
                step += 1
                epoch_losses.append(breakdown)
                result.loss_series.append(StepRecord(
                    step=step,
                    task=plan.index,
                    kind=kind_label,
                    ssl_term=breakdown.ssl_term,
                    distill_a=breakdown.distill_a,
                    distill_b=breakdown.distill_b,
                    total=breakdown.total,
                ))
                self.logger.debug("Step", task=plan.index, step=step, kind=kind_label, total=breakdown.total)

            self.logger.info(
                "Epoch finished",
                mode=plan.mode.value,
                task=plan.index,
                epoch=epoch + 1,
                ssl_term=float(np.mean([b.ssl_term for b in epoch_losses])),
                distill=float(np.mean([b.distill_a + b.distill_b for b in epoch_losses])),
                total=float(np.mean([b.total for b in epoch_losses])),
            )

        result.steps = step - step_offset
        if frozen_prev is not None and parameter_checksum(frozen_prev) != frozen_checksum:
            raise TrainingError("Frozen encoder changed during training", task_index=plan.index)
        result.encoder_checksum = parameter_checksum(model)
        if plan.checkpoint_path is not None:
            result.checkpoint = save_checkpoint(plan.checkpoint_path, model, plan.index, {"mode": plan.mode.value})
        return result

    def _draw_kinds(
        self,
        kinds: Sequence[AugmentationKind],
        sampling: MtlSampling,
        epoch_kind: Optional[AugmentationKind],
        rng: np.random.Generator,
        batch_size: int,
    ) -> Tuple[KindSpec, str]:
        if len(kinds) == 1:
            return kinds[0], kinds[0].value
        if sampling is MtlSampling.PER_EPOCH:
            return epoch_kind, epoch_kind.value
        if sampling is MtlSampling.PER_SAMPLE:
            drawn = [kinds[i] for i in rng.integers(len(kinds), size=batch_size)]
            return drawn, MIXED_KIND
        kind = kinds[int(rng.integers(len(kinds)))]
        return kind, kind.value

    def _step(
        self,
        model: EncoderModel,
        frozen_prev: Optional[FrozenEncoder],
        g: Optional[Predictor],
        view_a: np.ndarray,
        view_b: np.ndarray,
        optimizer: Adam,
    ) -> LossBreakdown:
        cfg = self.train_config
        zbar_a = zbar_b = None
        if frozen_prev is not None:
            zbar_a = frozen_prev.embed(view_a)
            zbar_b = frozen_prev.embed(view_b)
        with Tape() as tape:
            za = embed(model, view_a)
            zb = embed(model, view_b)
            if frozen_prev is not None:
                breakdown = cassle_loss(za, zb, zbar_a, zbar_b, g, cfg.lambd, cfg.gamma)
            else:
                breakdown = barlow_twins_breakdown(za, zb, cfg.lambd)
        backward(tape, breakdown.objective)
        optimizer.step()
        return breakdown

    # Regimes

    def run_curriculum_cl(
        self,
        checkpoint_dir: Optional[Path] = None,
        evaluator: Optional[Evaluator] = None,
        task_count: Optional[int] = None,
    ) -> List[TaskResult]:
        """
        Train the curriculum task by task.

        Raises:
            TrainingError: If a task fails; ``completed`` holds the finished tasks
        """
        curriculum = self.train_config.curriculum
        tasks = curriculum.tasks[: task_count or len(curriculum)]
        model = self.new_encoder()
        frozen: Optional[FrozenEncoder] = None
        g: Optional[Predictor] = None
        results: List[TaskResult] = []
        step = 0

        for t, kind in enumerate(tasks, start=1):
            if t > 1:
                frozen = freeze_snapshot(model)
                if g is None or not self.train_config.persist_predictor:
                    g = self.new_predictor(t)
            plan = TaskPlan(
                TrainMode.CL,
                t,
                self.train_config.epochs_per_task,
                checkpoint_dir / f"cl_task{t}.ckpt" if checkpoint_dir else None,
            )
            try:
                result = self.train_task(model, frozen, g, [kind], plan, step_offset=step)
            except BaseAugclError as e:
                raise TrainingError(f"CL task {t} ({kind.value}) failed: {e}", completed=results, task_index=t) from e
            step += result.steps
            if evaluator is not None:
                model.eval()
                result.probe_accuracy, result.val_accuracy = evaluator(freeze_snapshot(model), result)
            results.append(result)
        return results

    def run_joint_mtl(
        self,
        k: int,
        checkpoint_dir: Optional[Path] = None,
        evaluator: Optional[Evaluator] = None,
    ) -> TaskResult:
        """Train a fresh encoder jointly on the first ``k`` tasks for ``k`` times the per-task budget."""
        curriculum = self.train_config.curriculum
        if not 1 <= k <= len(curriculum):
            raise ContractError(f"Prefix length must be within [1, {len(curriculum)}], got {k}")
        model = self.new_encoder()
        plan = TaskPlan(
            TrainMode.MTL,
            k,
            k * self.train_config.epochs_per_task,
            checkpoint_dir / f"mtl_k{k}.ckpt" if checkpoint_dir else None,
        )
        try:
            result = self.train_task(
                model, None, None, list(curriculum.prefix(k)), plan, sampling=self.train_config.mtl_sampling
            )
        except BaseAugclError as e:
            raise TrainingError(f"MTL prefix {k} failed: {e}", task_index=k) from e
        if evaluator is not None:
            model.eval()
            result.probe_accuracy, result.val_accuracy = evaluator(freeze_snapshot(model), result)
        return result


def train_task_cl(
    model: EncoderModel,
    frozen_prev: Optional[FrozenEncoder],
    g: Optional[Predictor],
    kind: AugmentationKind,
    config: ExperimentConfig,
    data: TrainingData,
    task_index: int = 1,
    seed: Optional[int] = None,
    checkpoint_path: Optional[Path] = None,
) -> TaskResult:
    """One CL task: distillation objective when ``frozen_prev`` is given, plain SSL otherwise."""
    trainer = Trainer(config, data, config.train.seed if seed is None else seed)
    plan = TaskPlan(TrainMode.CL, task_index, config.train.epochs_per_task, checkpoint_path)
    return trainer.train_task(model, frozen_prev, g, [kind], plan)


def run_curriculum_cl(
    config: ExperimentConfig,
    data: TrainingData,
    seed: Optional[int] = None,
    checkpoint_dir: Optional[Path] = None,
    evaluator: Optional[Evaluator] = None,
) -> List[TaskResult]:
    trainer = Trainer(config, data, config.train.seed if seed is None else seed)
    return trainer.run_curriculum_cl(checkpoint_dir, evaluator)


def run_joint_mtl(
    config: ExperimentConfig,
    data: TrainingData,
    k: int,
    seed: Optional[int] = None,
    checkpoint_dir: Optional[Path] = None,
    evaluator: Optional[Evaluator] = None,
) -> TaskResult:
    trainer = Trainer(config, data, config.train.seed if seed is None else seed)
    return trainer.run_joint_mtl(k, checkpoint_dir, evaluator)
