"""Prompt-conditioned segmentation with self-generated prompts and prompt-space gating."""

from .config import ModelConfig, RunConfig
from .model import Prediction, PromptSegmenter

__all__ = ["ModelConfig", "RunConfig", "Prediction", "PromptSegmenter"]
__version__ = "0.1.0"
