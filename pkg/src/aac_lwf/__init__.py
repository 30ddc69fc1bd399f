"""Continual audio captioning with learning-without-forgetting distillation.

A numpy reverse-mode autodiff core, a WaveTransformer-style captioner, the
LwF adaptation loop, CIDEr-D/SPIDEr metrics and a batch command line.
"""
from .errors import (ConfigError, DataError, FormatError, InvariantError, LwfError, MismatchError,
                     NumericError, ParameterError, VocabularyError)
from .model import ModelConfig, WaveTransformer
from .trainer import (ContinualRunConfig, EarlyStopConfig, LossBreakdown, continual_run, continual_step,
                      pretrain, total_loss)

__version__ = "0.1.0"
