"""Span-based slot labeling pretrained with a pairwise cloze objective."""

__version__ = "0.1.0"
