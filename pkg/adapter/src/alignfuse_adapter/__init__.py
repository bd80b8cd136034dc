"""Encoder adapter: runs ASR/speech/text encoders on recordings and writes
alignfuse interchange bundles."""

__version__ = "0.1.0"
