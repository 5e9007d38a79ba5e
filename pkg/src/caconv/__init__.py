"""Multi-label image classification with class attention and a bidirectional peephole LSTM.

Everything runs on a small reverse-mode autodiff layer over float64 numpy
arrays; see :mod:`caconv.tensor`.
"""
from .dataio import DependencySpec, Manifest, load_manifest, synth_dataset
from .dependency import cooccurrence
from .extractor import ExtractorConfig
from .metrics import evaluate
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainSchedule, train

__version__ = "0.1.0"
