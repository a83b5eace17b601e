"""Multimodal (image + tabular) contrastive pretraining and evaluation."""

__version__ = "0.1.0"
