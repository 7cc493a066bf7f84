"""End-to-end runs of both training stages, inference and the studies on a tiny corpus."""

import json

import numpy as np
import pandas as pd
import pytest

from src.graph.pipeline_graph import run_pipeline
from src.metrics.evaluate import (
    ablation_study,
    evaluate,
    flow_completion_report,
    frame_count_study,
    recurrence_trace,
    restore_corpus,
    summarize_flow_report,
)
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.pipelines.inference import infer, load_multi_frame, load_single_frame
from src.pipelines.training import (
    STAGE_ONE,
    STAGE_TWO,
    IntermediateCorpus,
    StageOneSampler,
    generate_intermediate,
    stage_dir,
    train_multi_stage,
    train_single_stage,
)
from src.states.checkpoint import ModelCheckpoint
from src.states.config import config_from_string
from src.states.pipeline_state import PipelineState
from src.utils.errors import CheckpointError, ConfigError, CorpusError
from src.utils.io import write_json
from tests.conftest import TINY_INI

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def config():
    return config_from_string(TINY_INI)


@pytest.fixture(scope="module")
def trained(config, tiny_corpus, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("run")
    stage_one = train_single_stage(config, tiny_corpus, run_dir)
    generate_intermediate(config, tiny_corpus, stage_one.checkpoint, run_dir / "intermediate")
    intermediate = IntermediateCorpus(run_dir / "intermediate", tiny_corpus)
    stage_two = train_multi_stage(config, tiny_corpus, intermediate, stage_one.checkpoint, run_dir)
    return run_dir, stage_one, stage_two


# ---------------------------------------------------------------------- #
#  Training
# ---------------------------------------------------------------------- #
class TestStageOne:
    def test_checkpoint_and_curve(self, trained):
        run_dir, stage_one, _ = trained
        assert stage_one.checkpoint == stage_dir(run_dir, STAGE_ONE) / "epoch_0001"
        manifest = ModelCheckpoint.read(stage_one.checkpoint)
        assert (manifest.kind, manifest.epoch) == ("single", 1)
        assert manifest.config["train"]["neighbors"] == 2
        curve = (run_dir / "loss_stage1.csv").read_text().splitlines()
        assert curve[0].split(",") == ["epoch", "step", "attention", "flow", "fusion", "spatial", "total"]
        assert len(curve) == 2
        assert np.isfinite(stage_one.curve["total"]).all()

    def test_weights_moved(self, config, trained):
        _, stage_one, _ = trained
        fresh = SingleFrameModel(config.model).state_dict()
        trained_state = stage_one.model.state_dict()
        assert any(not np.array_equal(fresh[k], v) for k, v in trained_state.items())

    def test_sampler_is_deterministic(self, config, tiny_corpus):
        sampler = StageOneSampler(tiny_corpus, tiny_corpus.clip_ids("train"), config)
        a, b = sampler(1, 0), sampler(1, 0)
        assert (a.clip_id, a.t, a.neighbors) == (b.clip_id, b.t, b.neighbors)
        np.testing.assert_array_equal(a.target, b.target)
        assert a.target.shape == (16, 16, 3)
        assert len(a.references) == len(a.gt_flows) == len(a.neighbors)

    def test_sampler_reuses_flow_source(self, config, tiny_corpus):
        sampler = StageOneSampler(tiny_corpus, tiny_corpus.clip_ids("train"), config)
        clip = tiny_corpus.load_clip("train_0000")
        assert sampler.flow_source(clip) is sampler.flow_source(clip)

    def test_same_seed_same_curve(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, _ = trained
        rerun = train_single_stage(config, tiny_corpus, tmp_path)
        pd.testing.assert_frame_equal(rerun.curve, stage_one.curve)


class TestIntermediate:
    def test_outputs_cover_corpus(self, trained, tiny_corpus):
        run_dir, _, _ = trained
        intermediate = IntermediateCorpus(run_dir / "intermediate", tiny_corpus)
        assert intermediate.clip_ids() == tiny_corpus.clip_ids()
        outputs = intermediate.load_outputs("test_0000")
        assert outputs.shape == tiny_corpus.load_clip("test_0000").inputs.shape
        assert outputs.min() >= 0.0 and outputs.max() <= 1.0

    def test_rerun_is_bit_identical(self, config, trained, tiny_corpus, tmp_path):
        run_dir, stage_one, _ = trained
        first = run_dir / "intermediate"
        generate_intermediate(config, tiny_corpus, stage_one.checkpoint, tmp_path)
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
        for rel in files:
            assert (first / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel

    def test_unknown_version(self, tmp_path, tiny_corpus):
        write_json(tmp_path / "manifest.json", {"version": 99, "clips": []})
        with pytest.raises(CorpusError, match="version"):
            IntermediateCorpus(tmp_path, tiny_corpus)

    def test_missing_frame(self, trained, tiny_corpus, tmp_path):
        run_dir, _, _ = trained
        manifest = json.loads((run_dir / "intermediate" / "manifest.json").read_text())
        write_json(tmp_path / "manifest.json", manifest)
        with pytest.raises(CorpusError, match="missing stage-one frame"):
            IntermediateCorpus(tmp_path, tiny_corpus)


class TestStageTwo:
    def test_checkpoint(self, config, trained):
        run_dir, _, stage_two = trained
        assert stage_two.checkpoint == stage_dir(run_dir, STAGE_TWO) / "epoch_0001"
        assert ModelCheckpoint.read(stage_two.checkpoint).kind == "multi"
        assert isinstance(load_multi_frame(stage_dir(run_dir, STAGE_TWO), config), MultiFrameModel)
        assert (run_dir / "loss_stage2.csv").exists()

    def test_stage_one_checkpoint_rejected_as_stage_two(self, config, trained):
        _, stage_one, _ = trained
        with pytest.raises(CheckpointError):
            load_multi_frame(stage_one.checkpoint, config)


# ---------------------------------------------------------------------- #
#  Inference
# ---------------------------------------------------------------------- #
class TestInference:
    def test_both_stages_with_metrics(self, config, trained, tiny_corpus, tmp_path):
        run_dir, _, _ = trained
        clip_dir = tiny_corpus.root / "clips" / "test_0000"
        result = infer(config, clip_dir, tmp_path, stage_dir(run_dir, STAGE_ONE), stage_dir(run_dir, STAGE_TWO))
        assert len(list(tmp_path.glob("frame_*.png"))) == 5
        assert len(list(tmp_path.glob("frame_*.f32"))) == 5
        timing = json.loads((tmp_path / "timing.json").read_text())
        assert timing["frames"] == 5 and len(timing["stage2_ms"]) == 5
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert set(metrics["aggregates"]) >= {"psnr", "ssim", "warp_error"}
        np.testing.assert_array_equal(result.outputs[0], result.stage_one[0])

    def test_stage_one_only(self, config, trained, tiny_corpus, tmp_path):
        run_dir, _, _ = trained
        clip_dir = tiny_corpus.root / "clips" / "test_0000"
        result = infer(config, clip_dir, tmp_path, stage_dir(run_dir, STAGE_ONE), stage_one_only=True, debug_panels=True)
        np.testing.assert_array_equal(result.outputs, result.stage_one)
        assert "stage2_ms" not in result.timing
        assert (tmp_path / "debug" / "frame_00000" / "iter_0_temporal.png").exists()

    def test_stage_two_checkpoint_required(self, config, trained, tiny_corpus, tmp_path):
        run_dir, _, _ = trained
        with pytest.raises(CheckpointError):
            infer(config, tiny_corpus.root / "clips" / "test_0000", tmp_path, stage_dir(run_dir, STAGE_ONE))

    def test_missing_input_directory(self, config, trained, tmp_path):
        run_dir, _, _ = trained
        with pytest.raises(CorpusError):
            infer(config, tmp_path / "nothing", tmp_path / "out", stage_dir(run_dir, STAGE_ONE), stage_one_only=True)


# ---------------------------------------------------------------------- #
#  Evaluation and studies
# ---------------------------------------------------------------------- #
class TestEvaluation:
    def test_restore_and_score(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, stage_two = trained
        written = restore_corpus(config, tiny_corpus, stage_one.model, stage_two.model, tmp_path / "results")
        assert set(written) == {"stage1", "stage2"}
        for name, results_dir in written.items():
            report = evaluate(results_dir, tiny_corpus, config, name=name, out_dir=tmp_path)
            assert [c.clip_id for c in report.clips] == ["test_0000"]
            assert (tmp_path / f"metrics_{name}.json").exists()

    def test_missing_results(self, config, tiny_corpus, tmp_path):
        with pytest.raises(CorpusError):
            evaluate(tmp_path, tiny_corpus, config)

    def test_ablation_table(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, _ = trained
        table = ablation_study(stage_one.model, tiny_corpus, config, tmp_path, names=["full", "no_spatial"])
        assert list(table["method"]) == ["input", "full", "no_spatial"]
        assert (tmp_path / "ablations.csv").exists()

    def test_unknown_ablation(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, _ = trained
        with pytest.raises(ConfigError):
            ablation_study(stage_one.model, tiny_corpus, config, tmp_path, names=["no_gru"])

    def test_frame_count_study(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, _ = trained
        table = frame_count_study(stage_one.model, tiny_corpus, config, tmp_path)
        assert list(table["neighbors"]) == [1, 2]
        assert (tmp_path / "frame_study_summary.csv").exists()

    def test_recurrence_trace(self, config, trained, tiny_corpus, tmp_path):
        _, stage_one, _ = trained
        table, fraction = recurrence_trace(stage_one.model, tiny_corpus, config, tmp_path)
        assert set(table["iteration"]) == {1, 2}
        assert 0.0 <= fraction <= 1.0

    def test_flow_completion_report(self, config, trained, tiny_corpus):
        _, stage_one, _ = trained
        table = flow_completion_report(stage_one.model, tiny_corpus, config)
        assert len(table) == 5 * 2
        summary = summarize_flow_report(table)
        assert "outside_change" in summary


# ---------------------------------------------------------------------- #
#  Graph
# ---------------------------------------------------------------------- #
class TestPipelineGraph:
    def test_every_node_runs(self, config, tmp_path):
        final = run_pipeline(config, PipelineState(run_dir=str(tmp_path)))
        assert final.completed == ["synth", "train_single", "gen_intermediate", "train_multi", "evaluate"]
        assert set(final.metrics) == {"stage1", "stage2"}
        assert load_single_frame(final.stage1_checkpoint, config) is not None

    def test_missing_upstream_artifact(self):
        with pytest.raises(ConfigError, match="corpus_dir"):
            PipelineState(run_dir="x").require("corpus_dir")
