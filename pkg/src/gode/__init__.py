"""Post-training graph convolution for alignment/uniformity-trained recommenders."""

__version__ = "0.1.0"
