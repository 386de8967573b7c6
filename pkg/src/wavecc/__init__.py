"""Learned lifting-wavelet image codec with a cross-component context model."""

from wavecc.model import ModelConfig, WaveccModel

__version__ = "0.1.0"
__all__ = ["ModelConfig", "WaveccModel", "__version__"]
