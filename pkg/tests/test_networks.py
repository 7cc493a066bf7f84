import numpy as np
import pytest

from src.autodiff import functional as F
from src.autodiff.tensor import DiffTensor
from src.networks.attention import AttentionNet, detect_attention
from src.networks.completion import FlowCompletionNet, complete_flow
from src.networks.layers import ConvGRUCell, FusionLayer
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.networks.restoration import (
    FeaturePyramidExtractor,
    RestorationNets,
    conv_gru_step,
    effective_map,
    spatial_restore,
    temporal_blend,
)
from src.scripts.gradcheck_suite import tiny_model_config
from src.utils.errors import ShapeMismatchError
from src.utils.tensors import to_array


def constant(value: float, *shape: int) -> DiffTensor:
    return DiffTensor(np.full(shape, value))


# ---------------------------------------------------------------------- #
#  Attention
# ---------------------------------------------------------------------- #
class TestAttention:
    def test_zeroed_head_gives_half(self, rng):
        net = AttentionNet(rng, (2, 2, 2))
        net.head.weight.data[:] = 0.0
        net.head.bias.data[:] = 0.0
        att = detect_attention(net, rng.uniform(size=(16, 16, 3)), rng.normal(size=(16, 16, 2)))
        assert att.shape == (1, 1, 16, 16)
        np.testing.assert_allclose(att.numpy(), 0.5, atol=1e-7)

    def test_output_in_unit_range(self, rng):
        net = AttentionNet(rng, (2, 2, 2))
        att = detect_attention(net, rng.uniform(size=(24, 16, 3)), rng.normal(size=(24, 16, 2)) * 3)
        assert att.shape == (1, 1, 24, 16)
        assert att.numpy().min() >= 0.0 and att.numpy().max() <= 1.0

    def test_resolution_mismatch(self, rng):
        net = AttentionNet(rng, (2, 2, 2))
        with pytest.raises(ShapeMismatchError):
            detect_attention(net, rng.uniform(size=(16, 16, 3)), rng.normal(size=(16, 8, 2)))


# ---------------------------------------------------------------------- #
#  Fusion layer and flow completion
# ---------------------------------------------------------------------- #
class TestFusionLayer:
    @pytest.fixture
    def layer(self, float64, rng):
        layer = FusionLayer(2, 2, rng)
        layer.gate.weight.data[:] = 0.0
        return layer

    def test_open_gate_passes_input(self, layer, rng):
        layer.gate.bias.data[:] = 20.0
        x = DiffTensor(rng.normal(size=(1, 2, 8, 8)))
        np.testing.assert_allclose(layer(x).numpy(), x.numpy(), atol=1e-6)

    def test_closed_gate_is_convolution(self, layer, rng):
        layer.gate.bias.data[:] = -20.0
        x = DiffTensor(rng.normal(size=(1, 2, 8, 8)))
        np.testing.assert_allclose(layer(x).numpy(), layer.hallucinate(x).numpy(), atol=1e-6)

    def test_strided_layer_uses_adapter(self, rng):
        layer = FusionLayer(2, 4, rng, stride=2)
        assert layer.adapter is not None
        assert layer(DiffTensor(rng.normal(size=(1, 2, 8, 8)))).shape == (1, 4, 4, 4)

    @pytest.mark.parametrize("kind", ["gated", "conv"])
    def test_ablation_kinds(self, rng, kind):
        layer = FusionLayer(2, 3, rng, kind=kind)
        assert layer.adapter is None
        assert layer(DiffTensor(rng.normal(size=(1, 2, 8, 8)))).shape == (1, 3, 8, 8)

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            FusionLayer(2, 2, rng, kind="attention")


class TestConvexUpsampleBounds:
    def test_output_within_neighbourhood_range(self, rng):
        flow = rng.normal(size=(1, 2, 4, 4))
        out = F.convex_upsample(DiffTensor(flow), DiffTensor(rng.normal(size=(1, 36, 4, 4)) * 3), factor=2).numpy() / 2
        for c in range(2):
            assert out[0, c].min() >= flow[0, c].min() - 1e-6
            assert out[0, c].max() <= flow[0, c].max() + 1e-6


class TestFlowCompletion:
    @pytest.mark.parametrize("upsampler", ["convex", "bilinear"])
    def test_untrained_net_keeps_constant_flow(self, rng, upsampler):
        net = FlowCompletionNet(rng, (2, 2, 2), (2,), upsampler=upsampler)
        flow = np.zeros((16, 24, 2), dtype=np.float32)
        flow[..., 0], flow[..., 1] = 3.0, -1.0
        out = complete_flow(net, flow, rng.uniform(size=(16, 24, 3)), rng.uniform(size=(16, 24)))
        assert out.shape == (1, 2, 16, 24)
        np.testing.assert_allclose(to_array(out), flow, atol=1e-4)

    def test_requires_stride_multiple(self, rng):
        net = FlowCompletionNet(rng, (2, 2, 2), (2,))
        with pytest.raises(ShapeMismatchError, match="multiple of 8"):
            complete_flow(net, np.zeros((12, 16, 2)), np.zeros((12, 16, 3)), np.zeros((12, 16)))

    def test_misregistered_inputs(self, rng):
        net = FlowCompletionNet(rng, (2, 2, 2), (2,))
        with pytest.raises(ShapeMismatchError):
            complete_flow(net, np.zeros((16, 16, 2)), np.zeros((16, 16, 3)), np.zeros((8, 8)))


# ---------------------------------------------------------------------- #
#  Restoration
# ---------------------------------------------------------------------- #
class TestEffectiveMap:
    def test_clean_reference(self):
        att_t = DiffTensor(np.linspace(0, 1, 16).reshape(1, 1, 4, 4))
        np.testing.assert_allclose(effective_map(att_t, constant(0.0, 1, 1, 4, 4)).numpy(), att_t.numpy())

    def test_contaminated_reference(self):
        np.testing.assert_allclose(effective_map(constant(0.7, 1, 1, 4, 4), constant(1.0, 1, 1, 4, 4)).numpy(), 0.0)

    def test_arithmetic(self):
        np.testing.assert_allclose(effective_map(constant(1.0, 1, 1, 2, 2), constant(0.25, 1, 1, 2, 2)).numpy(), 0.75)


class TestTemporalBlend:
    def test_mask_limits(self, rng):
        warped = DiffTensor(rng.uniform(size=(1, 3, 4, 4)))
        previous = DiffTensor(rng.uniform(size=(1, 3, 4, 4)))
        np.testing.assert_allclose(temporal_blend(constant(0.0, 1, 1, 4, 4), warped, previous).numpy(), previous.numpy())
        np.testing.assert_allclose(temporal_blend(constant(1.0, 1, 1, 4, 4), warped, previous).numpy(), warped.numpy())


class TestConvGRU:
    @pytest.fixture
    def gru(self, float64, rng):
        cell = ConvGRUCell(2, 3, rng)
        cell.update_gate.weight.data[:] = 0.0
        return cell

    def test_closed_update_gate_keeps_state(self, gru, rng):
        gru.update_gate.bias.data[:] = -20.0
        h = DiffTensor(rng.normal(size=(1, 2, 6, 6)))
        x = DiffTensor(rng.normal(size=(1, 3, 6, 6)))
        np.testing.assert_allclose(gru(h, x).numpy(), h.numpy(), atol=1e-6)

    def test_open_update_gate_takes_candidate(self, gru, rng):
        gru.update_gate.bias.data[:] = 20.0
        h = DiffTensor(rng.normal(size=(1, 2, 6, 6)))
        x = DiffTensor(rng.normal(size=(1, 3, 6, 6)))
        r = F.sigmoid(gru.reset_gate(F.concat_channels([h, x])))
        candidate = F.tanh(gru.candidate(F.concat_channels([F.mul(r, h), x])))
        np.testing.assert_allclose(gru(h, x).numpy(), candidate.numpy(), atol=1e-6)

    def test_state_stays_bounded(self, rng):
        cell = ConvGRUCell(2, 3, rng)
        h = DiffTensor(rng.uniform(-0.9, 0.9, size=(1, 2, 6, 6)))
        for _ in range(5):
            h = cell(h, DiffTensor(rng.normal(size=(1, 3, 6, 6)) * 5))
            assert np.abs(h.numpy()).max() <= 1.0


class TestRestorationNets:
    def test_untrained_spatial_restorer_is_identity(self, rng):
        nets = RestorationNets(rng, hidden=2, spatial_channels=(2, 2, 2))
        temporal = DiffTensor(rng.uniform(size=(1, 3, 16, 16)).astype(np.float32))
        hidden = DiffTensor(rng.normal(size=(1, 2, 8, 8)).astype(np.float32))
        np.testing.assert_array_equal(spatial_restore(nets, temporal, hidden).numpy(), temporal.numpy())

    def test_shapes(self, rng):
        nets = RestorationNets(rng, hidden=2, spatial_channels=(2, 2, 2))
        h = nets.initial_state(15, 17)
        assert h.shape == (1, 2, 8, 9)
        frame = DiffTensor(rng.uniform(size=(1, 3, 15, 17)))
        single = DiffTensor(rng.uniform(size=(1, 1, 15, 17)))
        x = nets.encode(frame, single, frame, single)
        h = conv_gru_step(nets, h, x)
        mask = nets.blend_mask(h, (15, 17))
        assert mask.shape == (1, 1, 15, 17)
        assert 0.0 <= mask.numpy().min() and mask.numpy().max() <= 1.0

    def test_feature_pyramid_levels(self, rng):
        extractor = FeaturePyramidExtractor(levels=3, channels=4)
        feats = extractor(DiffTensor(rng.uniform(size=(1, 3, 16, 16)).astype(np.float32)))
        assert [f.shape for f in feats] == [(1, 4, 16, 16), (1, 4, 8, 8), (1, 4, 4, 4)]


# ---------------------------------------------------------------------- #
#  Model bundles
# ---------------------------------------------------------------------- #
class TestModels:
    def test_stage_two_starts_from_stage_one_weights(self):
        config = tiny_model_config()
        single = SingleFrameModel(config)
        for p in single.parameters():
            p.data = p.data + 0.01
        multi = MultiFrameModel.from_single_frame(single, config)
        assert not hasattr(multi, "attention")
        state = single.state_dict()
        for name, value in multi.state_dict().items():
            np.testing.assert_array_equal(value, state[name])

    def test_fresh_models_share_initialisation(self):
        config = tiny_model_config()
        single = SingleFrameModel(config).state_dict()
        multi = MultiFrameModel(config).state_dict()
        assert set(multi) < set(single)
        for name, value in multi.items():
            np.testing.assert_array_equal(value, single[name])
