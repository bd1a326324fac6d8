"""Keyframe quality gating and near-duplicate removal.

Quality signals: grayscale level/variance (low light), Laplacian variance and
Canny edge density (blur), histogram peak mass (uniformity), central-vs-global
intensity (saliency), and MSER+FAST text presence, which can rescue frames
that would otherwise be dropped as dark or uniform. Near-duplicates are
removed with SSIM at 128x128 grayscale.

MSER is implemented here as a per-level component tree: the bundled OpenCV
build returns no regions on clean synthetic inputs, which this detector's
fixtures depend on. FAST keypoints come from OpenCV.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .ingest import SampledFrame, to_grayscale

EIGHT_CONN = np.ones((3, 3), dtype=bool)

DROP_LOW_LIGHT = "low_light"
DROP_BLURRY = "blurry"
DROP_UNIFORM = "uniform"
DROP_NON_SALIENT = "non_salient"
DROP_NEAR_DUPLICATE = "near_duplicate"

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEDUP_SIZE = 128


@dataclass(frozen=True)
class RefineThresholds:
    low_light_mean: float = 0.08
    low_light_var: float = 0.005
    blur_laplacian: float = 1e-4
    blur_edge_density: float = 0.01
    uniform_peak_mass: float = 0.95
    saliency_min: float = 0.2
    saliency_max: float = 5.0
    dedup_ssim: float = 0.8


@dataclass(frozen=True)
class QualityReport:
    sample_index: int
    mean_gray: float
    var_gray: float
    laplacian_var: float
    edge_density: float
    hist_peak_mass: float
    saliency_ratio: float
    has_text: bool
    verdict: str  # "keep" | "drop"
    drop_reason: str | None


@dataclass(frozen=True)
class DedupDecision:
    kept: int
    dropped: int
    ssim: float


def laplacian_variance(gray: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian response over interior pixels."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 3 or g.shape[1] < 3:
        raise ValueError("image must be at least 3x3")
    resp = (
        g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * g[1:-1, 1:-1]
    )
    return float(np.mean((resp - resp.mean()) ** 2))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return k / k.sum()


def canny_edge_density(gray: np.ndarray) -> float:
    """Edge-pixel fraction from a full Canny chain.

    Gaussian 5x5 sigma=1.4 smoothing, Sobel gradients, non-maximum
    suppression, double threshold at 0.1/0.2 of the max gradient magnitude,
    and hysteresis over 8-connected weak components.
    """
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 5 or g.shape[1] < 5:
        raise ValueError("image must be at least 5x5")

    smooth = ndimage.correlate(g, _gaussian_kernel(5, 1.4), mode="reflect")
    sobel_x = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    gx = ndimage.correlate(smooth, sobel_x, mode="reflect")
    gy = ndimage.correlate(smooth, sobel_x.T, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak < 1e-12:  # flat image; anything larger is rounding residue
        return 0.0

    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    padded = np.pad(mag, 1, mode="constant")

    def shifted(dr: int, dc: int) -> np.ndarray:
        return padded[1 + dr : 1 + dr + mag.shape[0], 1 + dc : 1 + dc + mag.shape[1]]

    bins = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1), (0, -1)),
        ((angle >= 22.5) & (angle < 67.5), (1, -1), (-1, 1)),
        ((angle >= 67.5) & (angle < 112.5), (1, 0), (-1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (-1, -1), (1, 1)),
    ]
    suppressed = np.zeros_like(mag)
    for mask, (r1, c1), (r2, c2) in bins:
        keep = mask & (mag >= shifted(r1, c1)) & (mag >= shifted(r2, c2))
        suppressed[keep] = mag[keep]

    high, low = 0.2 * peak, 0.1 * peak
    strong = suppressed >= high
    weak = suppressed >= low
    if not strong.any():
        return 0.0
    components, _ = ndimage.label(weak, structure=EIGHT_CONN)
    strong_ids = np.unique(components[strong])
    edges = np.isin(components, strong_ids[strong_ids > 0])
    return float(edges.mean())


def histogram_uniformity(gray: np.ndarray) -> float:
    """Maximum bin mass of a 256-bin gray histogram; 1.0 means a single tone."""
    g = np.asarray(gray, dtype=np.float64)
    if g.size == 0:
        raise ValueError("zero-pixel image")
    idx = np.clip(np.floor(g.ravel() * 256.0).astype(np.int64), 0, 255)
    counts = np.bincount(idx, minlength=256)
    return float(counts.max() / g.size)


def center_saliency(gray: np.ndarray) -> float:
    """(mean of the central 50% crop + eps) / (global mean + eps)."""
    g = np.asarray(gray, dtype=np.float64)
    if g.size == 0:
        raise ValueError("zero-pixel image")
    h, w = g.shape
    crop = g[h // 4 : h - h // 4, w // 4 : w - w // 4]
    eps = 1e-6
    return float((crop.mean() + eps) / (g.mean() + eps))


def _mser_polarity(
    img: np.ndarray,
    delta: int,
    min_area: int,
    max_area: int,
    max_variation: float,
    min_diversity: float,
) -> list[tuple[int, int, int, int, int]]:
    """Maximally stable extremal regions of one polarity (dark regions of ``img``).

    Builds a component tree of the threshold masks (img <= level) over the
    distinct gray levels and scores each region with the two-sided size
    variation (|R(g+delta)| - |R(g-delta)|) / |R(g)|. Per evolution branch,
    local variation minima that pass the area, variation and diversity
    filters are kept. A region must have existed for at least ``delta`` gray
    levels to be stable, so hard-binary content yields no regions.
    Returns (x, y, w, h, area) records.
    """
    levels = np.unique(img)
    n_levels = len(levels)
    sizes_per_level: list[np.ndarray] = []
    parent_maps: list[np.ndarray] = []  # comp ids at level i -> comp ids at level i+1
    labels_prev: np.ndarray | None = None

    for li in range(n_levels):
        mask = img <= levels[li]
        lab, k = ndimage.label(mask)
        sizes = np.bincount(lab.ravel(), minlength=k + 1)[1:]
        sizes_per_level.append(sizes)
        if labels_prev is not None:
            nz = labels_prev > 0
            pm = np.zeros(len(sizes_per_level[li - 1]) + 1, dtype=np.int64)
            pm[labels_prev[nz]] = lab[nz]
            parent_maps.append(pm)
        labels_prev = lab

    # |R(g + delta)| = size of the containing component at the last present
    # level <= g + delta (component structure is constant between levels)
    upper_sizes: list[np.ndarray] = []
    for li in range(n_levels):
        k = len(sizes_per_level[li])
        lj = int(np.searchsorted(levels, int(levels[li]) + delta, side="right")) - 1
        amap = np.arange(k + 1)
        for step in range(li, lj):
            amap = parent_maps[step][amap]
        upper_sizes.append(sizes_per_level[lj][amap[1:] - 1].astype(np.float64))

    # branch assignment: a component continues the branch of its largest child
    # (ties toward the smaller component id); other children end their branches
    branch_of: list[np.ndarray] = []
    next_branch = 0
    for li in range(n_levels):
        k = len(sizes_per_level[li])
        b = np.full(k + 1, -1, dtype=np.int64)
        if li == 0:
            b[1:] = np.arange(k)
            next_branch = k
        else:
            pm = parent_maps[li - 1]
            prev_sizes = sizes_per_level[li - 1]
            ids = np.arange(1, len(prev_sizes) + 1)
            order = np.lexsort((-ids, prev_sizes))  # winner (largest, then smallest id) last
            best_child = np.zeros(k + 1, dtype=np.int64)
            best_child[pm[ids[order]]] = ids[order]
            cont = best_child[1:] > 0
            b[1:][cont] = branch_of[li - 1][best_child[1:][cont]]
            n_new = int((~cont).sum())
            b[1:][~cont] = next_branch + np.arange(n_new)
            next_branch += n_new
        branch_of.append(b)

    all_branch = np.concatenate([b[1:] for b in branch_of])
    all_level = np.concatenate(
        [np.full(len(sizes_per_level[li]), li, dtype=np.int64) for li in range(n_levels)]
    )
    all_comp = np.concatenate(
        [np.arange(1, len(sizes_per_level[li]) + 1, dtype=np.int64) for li in range(n_levels)]
    )
    all_size = np.concatenate(sizes_per_level).astype(np.float64)
    all_upper = np.concatenate(upper_sizes)
    all_g = levels[all_level].astype(np.int64)

    selected: dict[int, list[int]] = {}
    order = np.lexsort((all_level, all_branch))
    bounds = np.flatnonzero(np.diff(all_branch[order])) + 1
    for chunk in np.split(order, bounds):
        gs = all_g[chunk]
        ss = all_size[chunk]
        ups = all_upper[chunk]
        pos = np.searchsorted(gs, gs - delta, side="right") - 1
        old_enough = gs - delta >= gs[0]
        vs = np.where(old_enough, (ups - ss[np.maximum(pos, 0)]) / ss, np.inf)
        kept: list[int] = []
        for t in range(len(chunk)):
            if not (min_area <= ss[t] <= max_area) or not (vs[t] <= max_variation):
                continue
            if t > 0 and vs[t] > vs[t - 1]:
                continue
            if t < len(chunk) - 1 and vs[t] > vs[t + 1]:
                continue
            if kept:
                p = kept[-1]
                if (ss[t] - ss[p]) / ss[t] < min_diversity:
                    if vs[t] < vs[p]:
                        kept[-1] = t
                    continue
            kept.append(t)
        for t in kept:
            node = chunk[t]
            selected.setdefault(int(all_level[node]), []).append(int(all_comp[node]))

    regions: list[tuple[int, int, int, int, int]] = []
    for li, comps in sorted(selected.items()):
        lab, _k = ndimage.label(img <= levels[li])
        slices = ndimage.find_objects(lab)
        for c in sorted(comps):
            sl = slices[c - 1]
            y, x = sl[0].start, sl[1].start
            h, w = sl[0].stop - y, sl[1].stop - x
            regions.append((x, y, w, h, int(sizes_per_level[li][c - 1])))
    return regions


def detect_text(
    gray: np.ndarray,
    mser_delta: int = 5,
    min_area_frac: float = 0.0001,
    max_area_frac: float = 0.05,
    max_variation: float = 0.25,
    min_diversity: float = 0.2,
    aspect_range: tuple[float, float] = (0.1, 10.0),
    min_solidity: float = 0.3,
    fast_threshold: int = 20,
    min_regions: int = 3,
    min_keypoints: int = 2,
    min_area_pixels: int = 30,
) -> bool:
    """Text presence: MSER candidate regions verified by FAST keypoint counts.

    True iff at least ``min_regions`` text-like regions each contain at least
    ``min_keypoints`` keypoints. ``min_area_pixels`` floors the relative area
    bound so that sub-glyph speckle cannot qualify on small frames.
    """
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 16 or g.shape[1] < 16:
        raise ValueError("image must be at least 16x16")
    u8 = np.clip(np.round(g * 255.0), 0, 255).astype(np.uint8)
    n = u8.size
    min_area = max(min_area_pixels, int(round(min_area_frac * n)))
    max_area = max(min_area, int(round(max_area_frac * n)))

    regions = _mser_polarity(u8, mser_delta, min_area, max_area, max_variation, min_diversity)
    regions += _mser_polarity(
        255 - u8, mser_delta, min_area, max_area, max_variation, min_diversity
    )

    keypoints = cv2.FastFeatureDetector_create(threshold=fast_threshold).detect(u8, None)
    if not keypoints:
        return False
    pts = np.array([kp.pt for kp in keypoints])

    verified = 0
    seen: set[tuple[int, int, int, int]] = set()
    for x, y, w, h, area in regions:
        if w == 0 or h == 0:
            continue
        aspect = w / h
        if not (aspect_range[0] <= aspect <= aspect_range[1]):
            continue
        if area / (w * h) < min_solidity:
            continue
        box = (x, y, w, h)
        if box in seen:
            continue
        seen.add(box)
        inside = (pts[:, 0] >= x) & (pts[:, 0] < x + w) & (pts[:, 1] >= y) & (pts[:, 1] < y + h)
        if int(inside.sum()) >= min_keypoints:
            verified += 1
            if verified >= min_regions:
                return True
    return False


def quality_gate(
    frame: SampledFrame, thresholds: RefineThresholds | None = None
) -> QualityReport:
    """Score one candidate keyframe and decide keep/drop.

    Text presence overrides low-light and uniformity drops; blur and saliency
    drops stand regardless.
    """
    t = thresholds or RefineThresholds()
    gray = to_grayscale(frame)
    mean_gray = float(gray.mean())
    var_gray = float(np.mean((gray - mean_gray) ** 2))
    lap = laplacian_variance(gray)
    edges = canny_edge_density(gray)
    peak = histogram_uniformity(gray)
    saliency = center_saliency(gray)
    has_text = (
        detect_text(gray) if gray.shape[0] >= 16 and gray.shape[1] >= 16 else False
    )

    reasons = []
    if mean_gray < t.low_light_mean and var_gray < t.low_light_var:
        reasons.append(DROP_LOW_LIGHT)
    if lap < t.blur_laplacian and edges < t.blur_edge_density:
        reasons.append(DROP_BLURRY)
    if peak > t.uniform_peak_mass:
        reasons.append(DROP_UNIFORM)
    if not (t.saliency_min <= saliency <= t.saliency_max):
        reasons.append(DROP_NON_SALIENT)
    if has_text:
        reasons = [r for r in reasons if r not in (DROP_LOW_LIGHT, DROP_UNIFORM)]

    return QualityReport(
        sample_index=frame.sample_index,
        mean_gray=mean_gray,
        var_gray=var_gray,
        laplacian_var=lap,
        edge_density=edges,
        hist_peak_mass=peak,
        saliency_ratio=saliency,
        has_text=has_text,
        verdict="drop" if reasons else "keep",
        drop_reason=reasons[0] if reasons else None,
    )


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5, L = 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    pad = SSIM_WINDOW // 2

    def local_mean(x: np.ndarray) -> np.ndarray:
        return ndimage.correlate(x, kernel, mode="reflect")[pad:-pad, pad:-pad]

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())


def _dedup_gray(frame: SampledFrame) -> np.ndarray:
    gray32 = to_grayscale(frame).astype(np.float32)
    return cv2.resize(gray32, (DEDUP_SIZE, DEDUP_SIZE), interpolation=cv2.INTER_AREA).astype(
        np.float64
    )


def dedup(
    frames: list[SampledFrame],
    threshold: float = 0.8,
    sharpness: list[float] | None = None,
) -> tuple[list[SampledFrame], list[DedupDecision]]:
    """Single forward pass removing near-duplicates against the last kept frame.

    When two frames collide (SSIM >= threshold) the one with the lower
    Laplacian variance is dropped (ties drop the later frame). A replacement
    re-checks against the new predecessor so the output never contains an
    adjacent pair at or above the threshold.
    """
    if not frames:
        return [], []
    if sharpness is None:
        sharpness = [laplacian_variance(to_grayscale(f)) for f in frames]
    grays = {f.sample_index: _dedup_gray(f) for f in frames}
    sharp = {f.sample_index: s for f, s in zip(frames, sharpness)}

    kept: list[SampledFrame] = []
    decisions: list[DedupDecision] = []
    for frame in frames:
        kept.append(frame)
        while len(kept) >= 2:
            prev, cur = kept[-2], kept[-1]
            score = ssim(grays[prev.sample_index], grays[cur.sample_index])
            if score < threshold:
                break
            if sharp[cur.sample_index] > sharp[prev.sample_index]:
                winner, loser = cur, prev
            else:
                winner, loser = prev, cur
            decisions.append(
                DedupDecision(kept=winner.sample_index, dropped=loser.sample_index, ssim=score)
            )
            kept[-2:] = [winner]
    return kept, decisions
