"""Word-level audio/text alignment, pause tokens, and gated cross-attention fusion."""

__version__ = "0.1.0"
