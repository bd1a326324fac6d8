"""Tri-modal keyframe extraction engine.

Fuses perceptual color statistics, deep structural embeddings and semantic
caption embeddings into per-frame vectors, segments a video by density-based
clustering, and refines medoid keyframes into a concise summary.
"""

__version__ = "0.1.0"
