import numpy as np
import pytest

from aac_lwf.data.synth import SynthConfig
from aac_lwf.model import ModelConfig

TINY_MODEL = dict(d_model=8, n_temporal_blocks=1, dilation_schedule=(1,), n_tf_blocks=1, tf_channels=2,
                  n_decoder_blocks=1, n_heads=2, d_ff=16)
SMALL_MODEL = dict(d_model=16, n_temporal_blocks=2, dilation_schedule=(1, 2), n_tf_blocks=1, tf_channels=4,
                   n_decoder_blocks=1, n_heads=2, d_ff=32)
SMALL_SYNTH = SynthConfig(n_classes=4, vocab_size=16, train_clips_per_class=2, new_train_clips_per_class=3,
                          n_frames=12)


def tiny_config(vocab_size=12, **kw) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **{**TINY_MODEL, **kw})


def small_config(vocab_size, **kw) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **{**SMALL_MODEL, **kw})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_CFG_TEXT = """\
seed = 3
model.d_model = 16
model.n_temporal_blocks = 2
model.dilation_schedule = 1, 2
model.n_tf_blocks = 1
model.tf_channels = 4
model.n_decoder_blocks = 1
model.n_heads = 2
model.d_ff = 32
early_stop.max_epochs = 4
early_stop.patience = 2
continual.checkpoint_updates = 2, 4
synth.n_classes = 4
synth.vocab_size = 16
synth.train_clips_per_class = 2
synth.new_train_clips_per_class = 3
synth.n_frames = 12
"""


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
