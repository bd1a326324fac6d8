"""Multi-modal feature fusion: z-score, concatenation, PCA to 512 dims.

PCA is fit per video on that video's sampled frames; the effective output
dimension is min(k, n - 1, 3594) for short videos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLOR_DIM = 778
STRUCTURAL_DIM = 2048
SEMANTIC_DIM = 768
FUSED_INPUT_DIM = COLOR_DIM + STRUCTURAL_DIM + SEMANTIC_DIM  # 3594
DEFAULT_PCA_K = 512


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class FusedEmbedding:
    sample_index: int
    vector: np.ndarray  # (k,)


def zscore_columns(data: np.ndarray) -> np.ndarray:
    """Per-column standardization with population sigma; constant columns map to zeros."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("expected a non-empty 2-D matrix")
    mu = data.mean(axis=0)
    sigma = data.std(axis=0)
    out = data - mu
    nonzero = sigma > 0
    out[:, nonzero] /= sigma[nonzero]
    out[:, ~nonzero] = 0.0
    return out


def concat_modalities(c: np.ndarray, i: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row-wise concatenation (color, structural, semantic) -> n x 3594."""
    c, i, t = (np.asarray(m, dtype=np.float64) for m in (c, i, t))
    if not (c.shape[0] == i.shape[0] == t.shape[0]):
        raise ValueError(
            f"row count mismatch: color={c.shape[0]}, structural={i.shape[0]}, semantic={t.shape[0]}"
        )
    expected = {"color": (c, COLOR_DIM), "structural": (i, STRUCTURAL_DIM), "semantic": (t, SEMANTIC_DIM)}
    for name, (m, dim) in expected.items():
        if m.ndim != 2 or m.shape[1] != dim:
            raise ValueError(f"{name} matrix must have {dim} columns, got shape {m.shape}")
    return np.concatenate([c, i, t], axis=1)


def pca_fit(data: np.ndarray, k: int = DEFAULT_PCA_K) -> PcaModel:
    """Top-k principal components of the row-centered data via SVD.

    Effective k is min(k, n - 1, d). Component signs are fixed so each row's
    largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if n < 2:
        raise ValueError(f"PCA requires at least 2 rows, got {n}")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    k_eff = min(k, n - 1, d)
    components = vt[:k_eff].copy()
    flip = components[np.arange(k_eff), np.argmax(np.abs(components), axis=1)] < 0
    components[flip] *= -1.0
    explained = s[:k_eff] ** 2 / (n - 1)
    return PcaModel(mean=mean, components=components, explained_variance=explained)


def pca_transform(model: PcaModel, data: np.ndarray) -> np.ndarray:
    """(data - mean) @ components.T"""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: data has {data.shape[-1]} columns, model expects {model.mean.shape[0]}"
        )
    return (data - model.mean) @ model.components.T


def fuse(
    color: np.ndarray,
    structural: np.ndarray,
    semantic: np.ndarray,
    k: int = DEFAULT_PCA_K,
    sample_indices: list[int] | None = None,
) -> tuple[list[FusedEmbedding], PcaModel]:
    """Standardize each modality, concatenate, fit PCA on this video, project.

    Returns one FusedEmbedding per input row plus the fitted model.
    """
    combined = concat_modalities(
        zscore_columns(color), zscore_columns(structural), zscore_columns(semantic)
    )
    model = pca_fit(combined, k=k)
    projected = pca_transform(model, combined)
    if sample_indices is None:
        sample_indices = list(range(projected.shape[0]))
    embeddings = [
        FusedEmbedding(sample_index=idx, vector=row) for idx, row in zip(sample_indices, projected)
    ]
    return embeddings, model


def stack_embeddings(embeddings: list[FusedEmbedding]) -> np.ndarray:
    return np.stack([e.vector for e in embeddings])


def dump_embeddings(path_prefix, matrix: np.ndarray, video_id: str) -> None:
    """Write fused embeddings as little-endian float32 with a JSON header
    {n, k, video_id}."""
    import json
    from pathlib import Path

    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D embedding matrix, got shape {matrix.shape}")
    prefix = Path(path_prefix)
    prefix.with_suffix(".bin").write_bytes(matrix.astype("<f4").tobytes())
    header = {"n": int(matrix.shape[0]), "k": int(matrix.shape[1]), "video_id": video_id}
    prefix.with_suffix(".json").write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
