import re

import numpy as np
import pytest

from src.networks.models import MultiFrameModel, SingleFrameModel
from src.pipelines.inference import resolve_checkpoint
from src.pipelines.single_frame import FlowSource, single_frame_restore
from src.scripts.gradcheck_suite import tiny_model_config
from src.states.checkpoint import MANIFEST, PARAMS, ModelCheckpoint, architecture_hash, load_checkpoint
from src.states.config import FlowConfig
from src.utils.errors import CheckpointError
from tests.conftest import smooth_texture


@pytest.fixture
def saved(tmp_path):
    model = SingleFrameModel(tiny_model_config())
    ModelCheckpoint.save(model, tmp_path / "ckpt", kind="single", epoch=3, seed=9, config={"note": "tiny"})
    return model, tmp_path / "ckpt"


class TestRoundTrip:
    def test_weights_and_outputs_identical(self, saved, rng):
        model, ckpt_dir = saved
        other = SingleFrameModel(tiny_model_config().model_copy(update={"init_seed": 1}))
        reference = model.state_dict()
        assert any(not np.array_equal(v, reference[k]) for k, v in other.state_dict().items())
        load_checkpoint(other, ckpt_dir)
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(other.state_dict()[name], value)

        clip = np.stack([smooth_texture(rng, size=16) for _ in range(3)])
        flows = FlowSource(clip, FlowConfig(levels=2, block=8, search=3))
        a = single_frame_restore(model, clip, 1, flows, n_neighbors=2).output.numpy()
        b = single_frame_restore(other, clip, 1, flows, n_neighbors=2).output.numpy()
        np.testing.assert_array_equal(a, b)

    def test_manifest_fields(self, saved):
        model, ckpt_dir = saved
        manifest = ModelCheckpoint.read(ckpt_dir)
        assert (manifest.kind, manifest.epoch, manifest.seed) == ("single", 3, 9)
        assert manifest.config == {"note": "tiny"}
        assert manifest.architecture == architecture_hash(model)
        assert sum(p.count for p in manifest.params) == sum(p.data.size for p in model.parameters())


class TestMismatches:
    def test_other_architecture(self, saved):
        _, ckpt_dir = saved
        with pytest.raises(CheckpointError, match="different architecture"):
            load_checkpoint(MultiFrameModel(tiny_model_config()), ckpt_dir)

    def test_other_channel_layout(self, saved):
        _, ckpt_dir = saved
        wider = tiny_model_config().model_copy(update={"hidden_channels": 3})
        with pytest.raises(CheckpointError):
            load_checkpoint(SingleFrameModel(wider), ckpt_dir)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(SingleFrameModel(tiny_model_config()), tmp_path)

    def test_missing_params(self, saved):
        model, ckpt_dir = saved
        (ckpt_dir / PARAMS).unlink()
        with pytest.raises(CheckpointError, match="Missing parameter file"):
            load_checkpoint(model, ckpt_dir)

    def test_truncated_params(self, saved):
        model, ckpt_dir = saved
        data = (ckpt_dir / PARAMS).read_bytes()
        (ckpt_dir / PARAMS).write_bytes(data[:-8])
        with pytest.raises(CheckpointError, match="manifest expects"):
            load_checkpoint(model, ckpt_dir)

    def test_state_dict_mismatch(self):
        model = SingleFrameModel(tiny_model_config())
        state = model.state_dict()
        with pytest.raises(CheckpointError, match="missing"):
            model.load_state_dict({})
        name = next(iter(state))
        state[name] = state[name][..., :1]
        with pytest.raises(CheckpointError, match=re.escape(name)):
            model.load_state_dict(state)

    def test_hash_ignores_weight_values(self):
        a = architecture_hash(SingleFrameModel(tiny_model_config()))
        b = architecture_hash(SingleFrameModel(tiny_model_config().model_copy(update={"init_seed": 5})))
        assert a == b


class TestResolve:
    def test_newest_epoch(self, tmp_path):
        for epoch in (1, 2, 10):
            (tmp_path / f"epoch_{epoch:04d}").mkdir()
            (tmp_path / f"epoch_{epoch:04d}" / MANIFEST).write_text("{}")
        (tmp_path / "epoch_0011").mkdir()
        assert resolve_checkpoint(tmp_path) == tmp_path / "epoch_0010"

    def test_direct_checkpoint(self, saved):
        _, ckpt_dir = saved
        assert resolve_checkpoint(ckpt_dir) == ckpt_dir

    def test_empty_directory(self, tmp_path):
        with pytest.raises(CheckpointError):
            resolve_checkpoint(tmp_path)
