"""Annotation-free cyst segmentation: clustering seeds, graph-cut cleanup,
and a self-teaching encoder-decoder student."""

__version__ = "0.1.0"
