"""Desk-scale lab for fully few-shot class-incremental audio classification:
a toy spectrogram-transformer embedding extractor with multi-level feature
fusion, a ridge-regression classifier updated analytically across sessions,
and the episodic evaluation protocol around them."""

__version__ = "0.1.0"
