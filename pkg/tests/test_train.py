"""Tests for the CL and MTL training loops."""
from unittest.mock import MagicMock

import numpy as np
import pytest

from src.core.exceptions import ContractError, NumericalError, TrainingError
from src.core.types import AugmentationKind, MtlSampling, TaskResult, TrainMode
from src.model.encoder import FrozenEncoder, freeze_snapshot, parameter_checksum
from src.model.checkpoint import load_checkpoint
from src.numeric.optim import Adam
from src.train.trainer import MIXED_KIND, TaskPlan, Trainer, run_curriculum_cl, run_joint_mtl, train_task_cl

TWO_TASKS = ["Crop", "GaussianNoise"]
THREE_TASKS = ["Crop", "GaussianNoise", "Rotation"]


@pytest.fixture
def config(config_factory):
    return config_factory(curriculum=TWO_TASKS)


@pytest.fixture
def trainer(config, tiny_data):
    return Trainer(config, tiny_data, seed=0)


class TestTrainTask:
    def test_budget_and_loss_log(self, trainer):
        model = trainer.new_encoder()
        plan = TaskPlan(TrainMode.CL, 1, epochs=2)
        result = trainer.train_task(model, None, None, [AugmentationKind.CROP], plan)
        assert result.batches_per_epoch == 38 // 8
        assert result.steps == 2 * result.batches_per_epoch
        assert [r.step for r in result.loss_series] == list(range(1, result.steps + 1))
        assert result.kinds_drawn == ["Crop"]
        assert all(r.distill_a == 0.0 and r.distill_b == 0.0 for r in result.loss_series)
        assert all(r.total == r.ssl_term for r in result.loss_series)

    def test_parameters_change(self, trainer):
        model = trainer.new_encoder()
        before = parameter_checksum(model)
        result = trainer.train_task(model, None, None, [AugmentationKind.CROP], TaskPlan(TrainMode.CL, 1, 1))
        assert result.encoder_checksum != before
        assert result.encoder_checksum == parameter_checksum(model)

    def test_predictor_required_with_frozen_model(self, trainer):
        model = trainer.new_encoder()
        with pytest.raises(ContractError):
            trainer.train_task(model, freeze_snapshot(model), None, [AugmentationKind.CROP], TaskPlan(TrainMode.CL, 2, 1))

    def test_frozen_model_untouched_by_distillation(self, trainer):
        model = trainer.new_encoder()
        frozen = freeze_snapshot(model)
        before = parameter_checksum(frozen)
        result = trainer.train_task(
            model, frozen, trainer.new_predictor(2), [AugmentationKind.GAUSSIAN_NOISE], TaskPlan(TrainMode.CL, 2, 1)
        )
        assert parameter_checksum(frozen) == before
        assert result.frozen_checksum == before
        assert all(r.distill_a > 0.0 for r in result.loss_series)

    def test_checkpoint_written(self, trainer, tmp_path):
        model = trainer.new_encoder()
        plan = TaskPlan(TrainMode.CL, 1, 1, tmp_path / "task1.ckpt")
        result = trainer.train_task(model, None, None, [AugmentationKind.CROP], plan)
        restored, task_index = load_checkpoint(result.checkpoint)
        assert task_index == 1
        assert parameter_checksum(restored) == result.encoder_checksum

    def test_train_task_cl_wrapper(self, config, tiny_data, trainer):
        model = trainer.new_encoder()
        result = train_task_cl(model, None, None, AugmentationKind.CROP, config, tiny_data)
        assert result.mode is TrainMode.CL
        assert result.epochs == config.train.epochs_per_task


class TestCurriculum:
    def test_tasks_run_in_order_with_distillation(self, trainer, tmp_path):
        results = trainer.run_curriculum_cl(tmp_path)
        assert [r.task_index for r in results] == [1, 2]
        assert [r.kinds for r in results] == [[AugmentationKind.CROP], [AugmentationKind.GAUSSIAN_NOISE]]
        assert results[0].frozen_checksum is None
        assert results[1].frozen_checksum == results[0].encoder_checksum
        assert results[1].loss_series[0].step == results[0].steps + 1
        assert (tmp_path / "cl_task1.ckpt").exists() and (tmp_path / "cl_task2.ckpt").exists()

    def test_reproducible_for_a_seed(self, config, tiny_data):
        first = run_curriculum_cl(config, tiny_data, seed=3)
        second = run_curriculum_cl(config, tiny_data, seed=3)
        assert [r.total for r in first[1].loss_series] == [r.total for r in second[1].loss_series]
        assert first[1].encoder_checksum == second[1].encoder_checksum

    def test_seeds_differ(self, config, tiny_data):
        first = run_curriculum_cl(config, tiny_data, seed=0)
        second = run_curriculum_cl(config, tiny_data, seed=1)
        assert first[0].encoder_checksum != second[0].encoder_checksum

    def test_evaluator_sees_every_task(self, trainer):
        evaluator = MagicMock(return_value=(55.0, 50.0))
        results = trainer.run_curriculum_cl(evaluator=evaluator)
        assert evaluator.call_count == 2
        frozen, result = evaluator.call_args.args
        assert isinstance(frozen, FrozenEncoder)
        assert result is results[1]
        assert results[0].probe_accuracy == 55.0 and results[0].val_accuracy == 50.0

    def test_failure_keeps_completed_tasks(self, trainer, mocker):
        done = TaskResult(task_index=1, mode=TrainMode.CL, kinds=[AugmentationKind.CROP], steps=4)
        mocker.patch.object(trainer, "train_task", side_effect=[done, NumericalError("Non-finite values")])
        with pytest.raises(TrainingError) as exc_info:
            trainer.run_curriculum_cl()
        assert exc_info.value.task_index == 2
        assert exc_info.value.completed == [done]

    def test_optimizer_moments_cleared_at_each_task(self, config_factory, tiny_data, mocker):
        trainer = Trainer(config_factory(curriculum=THREE_TASKS), tiny_data, seed=0)
        fresh_at_first_step = []
        original_step = Adam.step

        def recording_step(optimizer):
            if not getattr(optimizer, "stepped", False):
                optimizer.stepped = True
                fresh_at_first_step.append(all(
                    p.step_count == 0 and not p.adam_m.any() and not p.adam_v.any() for p in optimizer.params
                ))
            original_step(optimizer)

        mocker.patch.object(Adam, "step", autospec=True, side_effect=recording_step)
        trainer.run_curriculum_cl()
        assert fresh_at_first_step == [True, True, True]

    @pytest.mark.slow
    def test_three_task_chain(self, config_factory, tiny_data, tmp_path):
        trainer = Trainer(config_factory(curriculum=THREE_TASKS), tiny_data, seed=0)
        results = trainer.run_curriculum_cl(tmp_path)
        assert [r.task_index for r in results] == [1, 2, 3]
        assert [r.kinds_drawn for r in results] == [["Crop"], ["GaussianNoise"], ["Rotation"]]
        assert results[0].frozen_checksum is None
        for previous, current in zip(results, results[1:]):
            assert current.frozen_checksum == previous.encoder_checksum
            assert current.loss_series[0].step == previous.loss_series[-1].step + 1
            assert all(r.distill_a > 0.0 and r.distill_b > 0.0 for r in current.loss_series)
        assert all(r.distill_a == 0.0 for r in results[0].loss_series)
        assert len({r.encoder_checksum for r in results}) == 3
        for t, result in enumerate(results, start=1):
            restored, task_index = load_checkpoint(tmp_path / f"cl_task{t}.ckpt")
            assert task_index == t
            assert parameter_checksum(restored) == result.encoder_checksum

    def test_task_count_limits_curriculum(self, trainer):
        assert len(trainer.run_curriculum_cl(task_count=1)) == 1


class TestJointTraining:
    def test_budget_matches_curriculum(self, trainer):
        cl = trainer.run_curriculum_cl()
        mtl = trainer.run_joint_mtl(2)
        assert mtl.steps == sum(r.steps for r in cl)
        assert mtl.epochs == 2 * trainer.train_config.epochs_per_task
        assert all(r.distill_a == 0.0 for r in mtl.loss_series)

    def test_single_task_prefix_matches_first_cl_task(self, trainer):
        cl = trainer.run_curriculum_cl(task_count=1)[0]
        mtl = trainer.run_joint_mtl(1)
        assert mtl.steps == cl.steps
        assert mtl.kinds_drawn == cl.kinds_drawn == ["Crop"]
        assert parameter_checksum(trainer.new_encoder()) == parameter_checksum(trainer.new_encoder())

    def test_prefix_out_of_range(self, trainer):
        with pytest.raises(ContractError):
            trainer.run_joint_mtl(3)
        with pytest.raises(ContractError):
            trainer.run_joint_mtl(0)

    def test_per_batch_draws_prefix_kinds(self, config_factory, tiny_data):
        config = config_factory(curriculum=TWO_TASKS, epochs_per_task=3)
        result = run_joint_mtl(config, tiny_data, 2)
        assert set(result.kinds_drawn) <= {"Crop", "GaussianNoise"}

    def test_per_batch_draws_are_uniform(self, trainer):
        kinds = [AugmentationKind.CROP, AugmentationKind.GAUSSIAN_NOISE, AugmentationKind.ROTATION]
        rng = np.random.default_rng(11)
        draws = 30000
        labels = [trainer._draw_kinds(kinds, MtlSampling.PER_BATCH, None, rng, 8)[1] for _ in range(draws)]
        for kind in kinds:
            assert labels.count(kind.value) / draws == pytest.approx(1 / 3, abs=0.02)

    def test_per_sample_logs_mixed_batches(self, config_factory, tiny_data):
        config = config_factory(curriculum=TWO_TASKS, mtl_sampling="per-sample")
        result = run_joint_mtl(config, tiny_data, 2)
        assert result.kinds_drawn == [MIXED_KIND]

    def test_per_epoch_keeps_kind_within_epoch(self, config_factory, tiny_data):
        config = config_factory(curriculum=TWO_TASKS, mtl_sampling="per-epoch")
        result = run_joint_mtl(config, tiny_data, 2)
        per_epoch = result.batches_per_epoch
        for start in range(0, len(result.loss_series), per_epoch):
            assert len({r.kind for r in result.loss_series[start:start + per_epoch]}) == 1

    def test_evaluator_result_recorded(self, trainer):
        result = trainer.run_joint_mtl(1, evaluator=MagicMock(return_value=(61.0, 58.0)))
        assert result.mode is TrainMode.MTL
        assert result.probe_accuracy == 61.0
