"""Provider sidecar: serves structural/semantic embeddings and captions over
HTTP, and converts raw TVSum/SumMe annotations to normalized ground truth."""

__version__ = "0.1.0"
