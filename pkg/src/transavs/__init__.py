"""Audio-visual sounding-object segmentation on a synthetic moving-shapes corpus."""

__version__ = "0.1.0"
