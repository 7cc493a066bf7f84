import numpy as np
import pytest

from src.flow.fields import warp_array
from src.states.config import SynthConfig
from src.synth.contaminant import BlobSpec, ContaminantSpec, composite, composite_contaminants, derive_gt_attention
from src.synth.corpus import Corpus, emit_corpus, generate_clip
from src.synth.scene import SceneSpec, analytic_flow, gen_background_clip, translation
from src.utils.errors import ConfigError, CorpusError, DegenerateMotionError


def small_synth(**overrides) -> SynthConfig:
    values = dict(seed=11, n_train=2, n_test=1, sizes=[16], min_frames=3, max_frames=4, flow_radius=1, workers=2)
    values.update(overrides)
    return SynthConfig(**values)


# ---------------------------------------------------------------------- #
#  Background
# ---------------------------------------------------------------------- #
class TestScene:
    def test_translation_flow_is_constant(self):
        spec = SceneSpec(height=16, width=20, n_frames=3, motions=[translation(2.0, 0.0)])
        flow = analytic_flow(spec, 0, 1)
        assert flow.shape == (16, 20, 2)
        np.testing.assert_allclose(flow[..., 0], 2.0, atol=1e-6)
        np.testing.assert_allclose(flow[..., 1], 0.0, atol=1e-6)
        np.testing.assert_allclose(analytic_flow(spec, 2, 0)[..., 0], -4.0, atol=1e-5)

    def test_flow_aligns_rendered_frames(self):
        spec = SceneSpec(height=24, width=24, n_frames=3, texture_seed=5, motions=[translation(2.0, 0.0)])
        frames, flow = gen_background_clip(spec)
        aligned = warp_array(frames[1], flow(0, 1))
        np.testing.assert_allclose(aligned[:, :-2], frames[0][:, :-2], atol=1e-5)

    def test_degenerate_motion_rejected(self):
        spec = SceneSpec(height=16, width=16, n_frames=3, motions=[[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]])
        with pytest.raises(DegenerateMotionError):
            gen_background_clip(spec)

    def test_motion_count_validated(self):
        with pytest.raises(ValueError):
            SceneSpec(height=16, width=16, n_frames=4, motions=[translation(1, 0)] * 2)


# ---------------------------------------------------------------------- #
#  Contaminants
# ---------------------------------------------------------------------- #
class TestComposite:
    def test_opaque_emissive_pixel(self):
        out = composite(np.full((1, 1, 3), 0.6), alpha=1.0, attenuation=1.0, scatter=0.3)
        np.testing.assert_allclose(out, 0.3, atol=1e-6)

    def test_half_alpha_pixel(self):
        out = composite(np.full((1, 1, 3), 0.5), alpha=0.5, attenuation=0.4, scatter=0.2)
        np.testing.assert_allclose(out, 0.5, atol=1e-6)

    def test_no_contaminant_is_identity(self, rng):
        clean = rng.uniform(size=(16, 16, 3)).astype(np.float32)
        image, alpha = composite_contaminants(clean, ContaminantSpec())
        np.testing.assert_array_equal(image, clean)
        assert not alpha.any()

    def test_range_and_untouched_background(self, rng):
        clean = rng.uniform(size=(48, 48, 3)).astype(np.float32)
        blob = BlobSpec(center=(12, 12), control_points=[(-4, -3), (5, -2), (1, 5)], sigma_b=1.0, attenuation=0.8, scatter=0.5, refraction=0.0)
        image, alpha = composite_contaminants(clean, ContaminantSpec(blobs=[blob]))
        assert image.min() >= 0.0 and image.max() <= 1.0
        outside = alpha == 0
        assert outside.any() and not outside.all()
        np.testing.assert_array_equal(image[outside], clean[outside])

    def test_drift_must_stay_below_background(self):
        blob = BlobSpec(center=(8, 8), control_points=[(0, 0), (3, 0), (0, 3)], sigma_b=1.0, attenuation=0.5, scatter=0.1, refraction=0.0)
        spec = ContaminantSpec(blobs=[blob], drift=(2.0, 0.0))
        with pytest.raises(ConfigError):
            spec.check_drift(1.0)


class TestAttentionTarget:
    def test_constant_alpha(self):
        assert not derive_gt_attention(np.zeros((4, 4))).any()
        assert derive_gt_attention(np.ones((4, 4))).all()

    def test_area_shrinks_with_threshold(self):
        from scipy import ndimage

        yy, xx = np.mgrid[0:32, 0:32]
        disk = ((yy - 16) ** 2 + (xx - 16) ** 2 <= 36).astype(float)
        alpha = ndimage.gaussian_filter(disk, 2.0)
        areas = [derive_gt_attention(alpha, tau).sum() for tau in (0.1, 0.3, 0.5, 0.7)]
        assert all(a >= b for a, b in zip(areas, areas[1:]))
        assert areas[0] > areas[-1]
        np.testing.assert_array_equal(derive_gt_attention(alpha, 0.3), alpha > 0.3)

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            derive_gt_attention(np.zeros((2, 2)), 1.0)


# ---------------------------------------------------------------------- #
#  Corpus
# ---------------------------------------------------------------------- #
class TestCorpus:
    def test_generated_clip_is_contaminated(self):
        sample = generate_clip(SynthConfig(sizes=[64], min_frames=3, max_frames=3), "train", 0)
        assert sample.inputs.shape == sample.clean.shape == (3, 64, 64, 3)
        assert 0.0 < sample.masks.mean() < 0.6
        assert np.abs(sample.inputs - sample.clean).max() > 0.05

    def test_same_seed_is_bit_identical(self, tmp_path):
        config = small_synth()
        emit_corpus(config, tmp_path / "a")
        emit_corpus(config, tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_file_counts(self, tmp_path):
        emit_corpus(small_synth(n_train=8, n_test=0, min_frames=9, max_frames=9), tmp_path, splits=("train",))
        assert len(list(tmp_path.rglob("input_*.png"))) == 72
        assert len(list(tmp_path.rglob("clean_*.png"))) == 72
        assert len(list(tmp_path.rglob("mask_*.png"))) == 72

    def test_load_round_trip(self, tmp_path):
        config = small_synth()
        emit_corpus(config, tmp_path)
        corpus = Corpus(tmp_path)
        assert corpus.clip_ids("train") == ["train_0000", "train_0001"]
        assert corpus.clip_ids("test") == ["test_0000"]
        clip = corpus.load_clip("train_0001")
        sample = generate_clip(config, "train", 1)
        np.testing.assert_array_equal(clip.inputs, sample.inputs)
        np.testing.assert_array_equal(clip.masks, sample.masks)
        np.testing.assert_allclose(clip.gt_flow(0, 1), sample.gt_flow(0, 1), atol=1e-6)
        # beyond flow_radius the flow comes from the stored scene
        np.testing.assert_allclose(clip.gt_flow(0, 2), sample.gt_flow(0, 2), atol=1e-5)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(CorpusError):
            emit_corpus(small_synth(), blocker / "corpus")

    def test_missing_files_detected(self, tmp_path):
        emit_corpus(small_synth(), tmp_path)
        next(tmp_path.rglob("clean_00000.f32")).unlink()
        with pytest.raises(CorpusError):
            Corpus(tmp_path)

    def test_clip_cache_is_bounded(self, tmp_path):
        emit_corpus(small_synth(), tmp_path)
        corpus = Corpus(tmp_path, cache_size=1)
        first = corpus.load_clip("train_0000")
        assert corpus.load_clip("train_0000") is first
        corpus.load_clip("train_0001")
        assert corpus.load_clip.cache_info().currsize == 1
        reloaded = corpus.load_clip("train_0000")
        assert reloaded is not first
        np.testing.assert_array_equal(reloaded.inputs, first.inputs)

    def test_unknown_clip(self, tmp_path):
        emit_corpus(small_synth(), tmp_path)
        with pytest.raises(CorpusError):
            Corpus(tmp_path).load_clip("train_9999")


@pytest.mark.slow
class TestCorpusStatistics:
    @pytest.fixture(scope="class")
    def samples(self):
        config = SynthConfig()
        return config, [generate_clip(config, "train", i) for i in range(32)]

    def test_mean_coverage_in_band(self, samples):
        config, clips = samples
        coverage = float(np.mean([s.masks.mean() for s in clips]))
        assert config.coverage_min <= coverage <= config.coverage_max

    def test_masks_are_nearly_static(self, samples):
        _, clips = samples
        ious = []
        for s in clips:
            masks = s.masks.astype(bool)
            for a, b in zip(masks[:-1], masks[1:]):
                ious.append((a & b).sum() / max((a | b).sum(), 1))
        assert min(ious) > 0.7
