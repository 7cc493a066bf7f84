import json

import numpy as np
import pytest

from src.metrics.quality import PSNR_CAP, psnr, ssim, warp_error, warp_error_gt
from src.metrics.report import ClipReport, FrameScore, MetricsReport, comparison_table
from src.states.config import FlowConfig
from src.synth.scene import SceneSpec, gen_background_clip, translation
from src.utils.errors import ImageTooSmallError, ShapeMismatchError
from tests.conftest import smooth_texture

FLOW = FlowConfig(levels=2, block=8, search=3)


def direct_ssim(x, y, window=8):
    """Window-by-window SSIM on the luma image."""
    luma = np.array([0.299, 0.587, 0.114])
    gx, gy = x @ luma, y @ luma
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    values = []
    for i in range(gx.shape[0] - window + 1):
        for j in range(gx.shape[1] - window + 1):
            a = gx[i:i + window, j:j + window]
            b = gy[i:i + window, j:j + window]
            cov = np.mean((a - a.mean()) * (b - b.mean()))
            num = (2 * a.mean() * b.mean() + c1) * (2 * cov + c2)
            den = (a.mean() ** 2 + b.mean() ** 2 + c1) * (a.var() + b.var() + c2)
            values.append(num / den)
    return float(np.mean(values))


# ---------------------------------------------------------------------- #
#  Frame metrics
# ---------------------------------------------------------------------- #
class TestPsnr:
    def test_identical_is_capped(self, rng):
        frame = rng.uniform(size=(8, 8, 3))
        assert psnr(frame, frame) == PSNR_CAP == 99.0

    @pytest.mark.parametrize("offset,expected", [(0.1, 20.0), (0.01, 40.0)])
    def test_constant_offset(self, offset, expected):
        x = np.full((4, 4, 3), 0.5)
        assert psnr(x + offset, x) == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_symmetric(self, rng):
        x, y = rng.uniform(size=(2, 8, 8, 3))
        assert psnr(x, y) == psnr(y, x)


class TestSsim:
    def test_identical(self, rng):
        frame = rng.uniform(size=(16, 16, 3))
        assert ssim(frame, frame) == pytest.approx(1.0)

    def test_constant_frames(self):
        frame = np.full((8, 8, 3), 0.5)
        assert ssim(frame, frame) == pytest.approx(1.0)

    def test_matches_direct_formula(self, rng):
        x = rng.uniform(size=(16, 16, 3))
        y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(direct_ssim(x, y), abs=1e-9)
        assert ssim(x, y) < 1.0

    def test_symmetric(self, rng):
        x, y = rng.uniform(size=(2, 16, 16, 3))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_frame_smaller_than_window(self):
        with pytest.raises(ImageTooSmallError):
            ssim(np.zeros((6, 6, 3)), np.zeros((6, 6, 3)))


# ---------------------------------------------------------------------- #
#  Temporal consistency
# ---------------------------------------------------------------------- #
class TestWarpError:
    def test_static_sequence(self, rng):
        frame = smooth_texture(rng, size=32)
        assert warp_error([frame] * 3, FLOW) < 1e-6

    def test_flicker_raises_error(self, rng):
        frame = smooth_texture(rng, size=32)
        noisy = np.clip(frame + rng.normal(scale=0.05, size=frame.shape), 0, 1).astype(np.float32)
        assert warp_error([frame, noisy, frame], FLOW) > warp_error([frame] * 3, FLOW)

    def test_repeated_last_frame_adds_a_zero_pair(self, rng):
        frame = smooth_texture(rng, size=32)
        frames = [np.roll(frame, k, axis=1) for k in range(3)]
        e3 = warp_error(frames, FLOW)
        assert warp_error(frames[-1:] * 2, FLOW) == 0.0
        assert warp_error(frames + frames[-1:], FLOW) == pytest.approx(e3 * 2 / 3, rel=1e-9)

    def test_needs_two_frames(self, rng):
        with pytest.raises(ValueError):
            warp_error([smooth_texture(rng, size=16)], FLOW)

    def test_ground_truth_flow_on_translation(self):
        spec = SceneSpec(height=24, width=24, n_frames=3, texture_seed=5, motions=[translation(2.0, 0.0)])
        frames, flow = gen_background_clip(spec)
        assert warp_error_gt(frames, flow) < 1e-3


# ---------------------------------------------------------------------- #
#  Reports
# ---------------------------------------------------------------------- #
def make_report(name: str, psnrs, warp: float) -> MetricsReport:
    clips = [
        ClipReport(
            clip_id=f"test_{i:04d}",
            per_frame=[FrameScore(frame=t, psnr=p, ssim=0.9) for t in range(2)],
            warp_error=warp,
        )
        for i, p in enumerate(psnrs)
    ]
    return MetricsReport(name=name, clips=clips)


class TestReports:
    def test_clip_json_omits_missing_metrics(self):
        report = ClipReport(clip_id="c", per_frame=[FrameScore(frame=0, psnr=30.0, ssim=0.8)])
        aggregates = report.to_json()["aggregates"]
        assert aggregates == {"psnr": 30.0, "ssim": 0.8}

    def test_aggregates(self):
        agg = make_report("full", [30.0, 34.0], 0.01).aggregates()
        assert agg["psnr"] == {"mean": 32.0, "std": 2.0}
        assert agg["warp_error"]["mean"] == pytest.approx(0.01)
        assert "epe" not in agg

    def test_save_writes_json_and_csv(self, tmp_path):
        path = make_report("full", [30.0, 34.0], 0.01).save(tmp_path)
        assert path == tmp_path / "metrics_full.json"
        data = json.loads(path.read_text())
        assert data["method"] == "full"
        assert len(data["clips"]) == 2
        assert (tmp_path / "metrics_full_clips.csv").exists()
        assert (tmp_path / "metrics_full_frames.csv").exists()

    def test_comparison_table(self):
        table = comparison_table([make_report("full", [32.0], 0.01), make_report("no_spatial", [28.0], 0.02)])
        assert list(table["method"]) == ["full", "no_spatial"]
        assert list(table["psnr"]) == [32.0, 28.0]

    def test_negative_warp_error_rejected(self):
        with pytest.raises(ValueError):
            ClipReport(clip_id="c", warp_error=-1.0)
