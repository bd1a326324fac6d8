"""Perceptual color features in CIELAB space.

Per frame: 3 x 256-bin channel histograms, the first three color moments per
channel (mean, population variance, skewness), and a colorfulness scalar,
concatenated into a 778-dimensional vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import SampledFrame

COLOR_FEATURE_DIM = 778
HISTOGRAM_BINS = 256

# sRGB -> XYZ (D65, 2 degree observer)
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])

# CIE constants (exact rational forms)
_EPSILON = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

_CHANNEL_RANGES = ((0.0, 100.0), (-128.0, 127.0), (-128.0, 127.0))


@dataclass(frozen=True)
class LabImage:
    L: np.ndarray  # H x W, [0, 100]
    a: np.ndarray  # H x W, ~[-128, 127]
    b: np.ndarray  # H x W, ~[-128, 127]

    def channels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.L, self.a, self.b


@dataclass(frozen=True)
class ColorFeature:
    histograms: np.ndarray  # 768 = 3 channels x 256 bins
    moments: np.ndarray  # 9 = (mean, variance, skewness) per channel
    colorfulness: float
    vector: np.ndarray  # 778

    def __post_init__(self) -> None:
        if self.vector.shape != (COLOR_FEATURE_DIM,):
            raise ValueError(f"color feature must have {COLOR_FEATURE_DIM} dims")


def rgb_to_lab(frame: SampledFrame | np.ndarray) -> LabImage:
    """Convert 8-bit sRGB pixels to CIELAB (D65 white point)."""
    pixels = frame.pixels if isinstance(frame, SampledFrame) else frame
    rgb = pixels.astype(np.float64) / 255.0
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = linear @ _SRGB_TO_XYZ.T
    xyz = xyz / _D65_WHITE
    f = np.where(xyz > _EPSILON, np.cbrt(xyz), (_KAPPA * xyz + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return LabImage(L=L, a=a, b=b)


def lab_histograms(lab: LabImage, bins: int = HISTOGRAM_BINS) -> np.ndarray:
    """Normalized per-channel histograms over fixed Lab ranges.

    Out-of-range values are clamped to the edge bins; each channel histogram
    sums to 1.
    """
    if bins != HISTOGRAM_BINS:
        raise ValueError(f"bin count is fixed at {HISTOGRAM_BINS} by the 778-dim contract")
    n = lab.L.size
    if n == 0:
        raise ValueError("zero-pixel image")
    parts = []
    for channel, (lo, hi) in zip(lab.channels(), _CHANNEL_RANGES):
        idx = np.floor((channel.ravel() - lo) * bins / (hi - lo)).astype(np.int64)
        np.clip(idx, 0, bins - 1, out=idx)
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        parts.append(counts / n)
    return np.concatenate(parts)


ZERO_VARIANCE_EPS = 1e-18  # constant channels leave O(1e-28) rounding residue


def color_moments(lab: LabImage) -> np.ndarray:
    """Mean, population variance and skewness per Lab channel (9 values).

    Skewness of a (numerically) constant channel is defined as 0.
    """
    if lab.L.size == 0:
        raise ValueError("zero-pixel image")
    out = np.empty(9)
    for i, channel in enumerate(lab.channels()):
        x = channel.ravel()
        mu = x.mean()
        centered = x - mu
        var = np.mean(centered**2)
        if var > ZERO_VARIANCE_EPS:
            skew = np.mean(centered**3) / var**1.5
        else:
            skew = 0.0
        out[3 * i : 3 * i + 3] = (mu, var, skew)
    return out


def colorfulness(lab: LabImage) -> float:
    """Chroma vibrancy: sqrt(var_a + var_b) + 0.3 * sqrt(mean_a^2 + mean_b^2)."""
    if lab.a.size == 0:
        raise ValueError("zero-pixel image")
    mu_a, mu_b = lab.a.mean(), lab.b.mean()
    var_a = np.mean((lab.a - mu_a) ** 2)
    var_b = np.mean((lab.b - mu_b) ** 2)
    return float(np.sqrt(var_a + var_b) + 0.3 * np.sqrt(mu_a**2 + mu_b**2))


def color_feature(frame: SampledFrame | np.ndarray) -> ColorFeature:
    """Full 778-dim perceptual color vector for one frame.

    Order: [hist_L, hist_a, hist_b, (mean, var, skew) x (L, a, b), colorfulness].
    """
    lab = rgb_to_lab(frame)
    hists = lab_histograms(lab)
    moments = color_moments(lab)
    c = colorfulness(lab)
    vector = np.concatenate([hists, moments, [c]])
    return ColorFeature(histograms=hists, moments=moments, colorfulness=c, vector=vector)


def dump_color_features(
    path_prefix, matrix: np.ndarray, sample_indices: list[int] | None = None
) -> None:
    """Write per-frame color vectors as little-endian float32 rows plus a JSON
    index mapping sample_index to row."""
    import json
    from pathlib import Path

    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != COLOR_FEATURE_DIM:
        raise ValueError(f"expected n x {COLOR_FEATURE_DIM} matrix, got {matrix.shape}")
    if sample_indices is None:
        sample_indices = list(range(matrix.shape[0]))
    prefix = Path(path_prefix)
    prefix.with_suffix(".bin").write_bytes(matrix.astype("<f4").tobytes())
    index = {str(idx): row for row, idx in enumerate(sample_indices)}
    prefix.with_suffix(".json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
