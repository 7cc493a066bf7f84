import numpy as np
import pytest
from scipy import ndimage

from src.autodiff.tensor import precision
from src.states.config import config_from_string
from src.synth.corpus import Corpus, emit_corpus

TINY_INI = """
[synth]
seed = 3
n_train = 2
n_test = 1
sizes = 32
min_frames = 5
max_frames = 5
flow_radius = 2
workers = 1

[flow]
levels = 2
block = 8
search = 3

[model]
attention_channels = 2, 2, 2
completion_channels = 2, 2, 2
spatial_channels = 2, 2, 2
dilations = 2
hidden_channels = 2
perceptual_levels = 2
perceptual_channels = 2

[train]
batch = 2
neighbors = 2
crop = 16
epochs_stage1 = 1
epochs_stage2 = 1
samples_per_epoch = 2
stage2_seq_len = 3
workers = 1
prefetch = 2

[eval]
max_neighbors = 2
frame_study_clip_len = 3
"""


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def float64():
    with precision(np.float64):
        yield


@pytest.fixture
def tiny_config():
    return config_from_string(TINY_INI)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    config = config_from_string(TINY_INI)
    root = tmp_path_factory.mktemp("corpus")
    emit_corpus(config.synth, root)
    return Corpus(root)


def smooth_texture(rng: np.random.Generator, size: int = 64, channels: int = 3, sigma: float = 2.0) -> np.ndarray:
    """Band-limited random texture in [0.1, 0.9], good for block matching."""
    noise = rng.uniform(size=(size, size, channels))
    smooth = np.stack([ndimage.gaussian_filter(noise[..., c], sigma, mode="wrap") for c in range(channels)], axis=-1)
    smooth = (smooth - smooth.min()) / (smooth.max() - smooth.min())
    return (0.1 + 0.8 * smooth).astype(np.float32)
