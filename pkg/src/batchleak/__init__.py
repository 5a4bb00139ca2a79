"""Cross-batch leakage through per-tensor dynamic activation quantization."""

__version__ = "0.1.0"
