"""Person identification from body keypoint sequences with spatial and temporal transformers."""

__version__ = "0.1.0"
