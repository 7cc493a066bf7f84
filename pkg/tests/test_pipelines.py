import logging
import time

import numpy as np
import pytest

from src.metrics.quality import warp_error
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.pipelines.inference import crop_to, pad_to_stride, run_stage_one, run_stage_two
from src.pipelines.multi_frame import refine_sequence
from src.pipelines.single_frame import ABLATIONS, FlowSource, neighbor_order, single_frame_restore
from src.pipelines.training import Prefetcher, random_crop, sample_rng
from src.scripts.gradcheck_suite import tiny_model_config
from src.states.config import FlowConfig
from src.utils.errors import CorpusError
from src.utils.tensors import to_array
from tests.conftest import smooth_texture

FLOW = FlowConfig(levels=2, block=8, search=3)


@pytest.fixture(scope="module")
def single_model():
    return SingleFrameModel(tiny_model_config())


@pytest.fixture(scope="module")
def multi_model():
    return MultiFrameModel(tiny_model_config())


@pytest.fixture
def clip(rng):
    return np.stack([smooth_texture(rng, size=16) for _ in range(3)])


# ---------------------------------------------------------------------- #
#  Neighbour scheduling
# ---------------------------------------------------------------------- #
class TestNeighborOrder:
    def test_alternates_outward(self):
        assert neighbor_order(3, 7, 4) == [2, 4, 1, 5]

    def test_first_frame(self):
        assert neighbor_order(0, 7, 4) == [1, 2, 3, 4]

    def test_last_frame(self):
        assert neighbor_order(6, 7, 2) == [5, 4]

    def test_short_clip(self):
        assert neighbor_order(1, 3, 4) == [0, 2]
        assert neighbor_order(0, 1, 4) == []


# ---------------------------------------------------------------------- #
#  Flow cache
# ---------------------------------------------------------------------- #
class TestFlowSource:
    def test_memoises_and_crops(self, clip):
        calls = []

        def estimator(a, b, levels, block, search):
            calls.append((levels, block, search))
            return np.zeros(a.shape[:2] + (2,), dtype=np.float32)

        flows = FlowSource(clip, FLOW, estimator=estimator)
        assert flows(0, 1).shape == (16, 16, 2)
        assert flows(0, 1, window=(2, 3, 8, 8)).shape == (8, 8, 2)
        flows(1, 0)
        assert calls == [(2, 8, 3)] * 2

    def test_keeps_only_recent_pairs(self, clip):
        calls = []

        def estimator(a, b, levels, block, search):
            calls.append(1)
            return np.zeros(a.shape[:2] + (2,), dtype=np.float32)

        flows = FlowSource(clip, FLOW, estimator=estimator, max_pairs=1)
        flows(0, 1)
        flows(1, 2)
        flows(0, 1)
        assert len(calls) == 3
        assert flows.pair.cache_info().currsize == 1


# ---------------------------------------------------------------------- #
#  Stage one
# ---------------------------------------------------------------------- #
class TestSingleFrame:
    def test_iteration_per_neighbour(self, single_model, clip):
        result = single_frame_restore(single_model, clip, 1, FlowSource(clip, FLOW), n_neighbors=4)
        assert [it.neighbor for it in result.iterations] == [0, 2]
        assert result.output.shape == (1, 3, 16, 16)
        out = result.output.numpy()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_no_neighbours_falls_back_to_spatial(self, single_model, clip, caplog):
        frames = clip[:1]
        with caplog.at_level(logging.WARNING):
            result = single_frame_restore(single_model, frames, 0, FlowSource(frames, FLOW))
        assert result.iterations == []
        assert "spatial restoration only" in caplog.text
        # the untrained spatial restorer adds nothing
        np.testing.assert_allclose(to_array(result.output), frames[0], atol=1e-6)

    @pytest.mark.parametrize("name", sorted(ABLATIONS))
    def test_ablation_variants(self, single_model, clip, name):
        ablation = ABLATIONS[name]
        result = single_frame_restore(single_model, clip, 0, FlowSource(clip, FLOW), n_neighbors=2, ablation=ablation)
        assert len(result.iterations) == 2
        last = result.iterations[-1]
        assert (last.attention_t is None) == ablation.zero_attention
        assert (last.completed_flow is None) == ablation.skip_completion
        if ablation.skip_spatial:
            np.testing.assert_array_equal(result.output.numpy(), last.temporal.numpy())

    def test_run_stage_one_pads_and_crops(self, single_model, rng):
        frames = np.stack([smooth_texture(rng, size=12) for _ in range(3)])
        run = run_stage_one(single_model, frames, FLOW, n_neighbors=2, keep_iterations=True)
        assert run.outputs.shape == frames.shape
        assert len(run.millis) == 3
        assert sorted(run.iterations) == [0, 1, 2]


# ---------------------------------------------------------------------- #
#  Stage two
# ---------------------------------------------------------------------- #
class TestRefineSequence:
    def test_first_frame_passes_through(self, multi_model, clip):
        out = refine_sequence(multi_model, clip, FLOW)
        assert out.shape == clip.shape
        np.testing.assert_array_equal(out[0], clip[0])

    def test_static_sequence_is_stable(self, multi_model, rng):
        frame = smooth_texture(rng, size=16)
        frames = np.stack([frame] * 4)
        out = refine_sequence(multi_model, frames, FLOW)
        np.testing.assert_allclose(out, frames, atol=1e-5)
        assert warp_error(out, FLOW) < 1e-4

    def test_single_frame_sequence(self, multi_model, clip):
        out = refine_sequence(multi_model, clip[:1], FLOW)
        np.testing.assert_array_equal(out, clip[:1])

    def test_run_stage_two_timing(self, multi_model, rng):
        frames = np.stack([smooth_texture(rng, size=12) for _ in range(3)])
        refined, millis = run_stage_two(multi_model, frames, FLOW)
        assert refined.shape == frames.shape
        assert len(millis) == 3 and millis[0] == 0.0


# ---------------------------------------------------------------------- #
#  Padding, cropping and loading
# ---------------------------------------------------------------------- #
class TestPadding:
    def test_pad_then_crop(self, rng):
        frames = rng.uniform(size=(2, 15, 17, 3)).astype(np.float32)
        padded, size = pad_to_stride(frames)
        assert padded.shape == (2, 16, 24, 3)
        assert size == (15, 17)
        np.testing.assert_array_equal(crop_to(padded, size), frames)

    def test_aligned_frames_untouched(self, rng):
        frames = rng.uniform(size=(1, 16, 8, 3))
        padded, size = pad_to_stride(frames)
        assert padded is frames and size == (16, 8)


class TestSampling:
    def test_sample_rng_is_deterministic(self):
        a = sample_rng(7, "stage1", 2, 5).uniform(size=4)
        b = sample_rng(7, "stage1", 2, 5).uniform(size=4)
        c = sample_rng(7, "stage2", 2, 5).uniform(size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_random_crop_fits(self, rng):
        for _ in range(20):
            crop = random_crop(rng, 20, 30, 16)
            assert 0 <= crop.y0 <= 4 and 0 <= crop.x0 <= 14
            assert crop(np.zeros((20, 30, 3))).shape == (16, 16, 3)

    def test_random_crop_too_large(self, rng):
        with pytest.raises(CorpusError):
            random_crop(rng, 12, 30, 16)


class TestPrefetcher:
    def test_preserves_order(self):
        def build(i):
            time.sleep(0.002 * (6 - i))
            return i

        assert list(Prefetcher(build, 6, workers=3, depth=3)) == list(range(6))

    def test_length_and_empty(self):
        assert len(Prefetcher(lambda i: i, 4)) == 4
        assert list(Prefetcher(lambda i: i, 0)) == []

    def test_worker_errors_surface(self):
        def build(i):
            if i == 2:
                raise RuntimeError("bad sample")
            return i

        with pytest.raises(RuntimeError, match="bad sample"):
            list(Prefetcher(build, 4))
