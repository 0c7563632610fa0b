"""Confidence-map thresholding and connected-component filtering.

False detections tend to be small, roundish blobs while real roots are
long and thin, so components are scored by pixel count and by the
eccentricity of the ellipse sharing their second central moments and
filtered against configurable thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._ccl import label_equal_regions

DEFAULT_MIN_SIZE = 300
DEFAULT_MIN_ECC = 0.95


@dataclass
class ComponentStats:
    component_id: int
    size: int
    eccentricity: float
    pixels: np.ndarray  # (n, 2) rows of (row, col)


def select_threshold_for_fpr(maps: list[np.ndarray], gt_masks: list[np.ndarray],
                             target_fpr: float) -> float:
    """Smallest threshold whose pooled pixel FPR is <= target_fpr.

    FPR pools the non-root pixels of every provided map.  Binarization
    is strict (confidence > threshold), so the returned value is the
    (m+1)-th largest background confidence with m = floor(target * N).
    """
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must be in (0, 1)")
    neg = np.concatenate([
        np.asarray(cmap)[~np.asarray(mask, dtype=bool)].ravel()
        for cmap, mask in zip(maps, gt_masks)
    ])
    if neg.size == 0:
        raise ValueError("no negative pixels present")
    allowed = int(np.floor(target_fpr * neg.size))
    ordered = np.sort(neg)[::-1]
    return float(ordered[allowed])


def binarize(cmap: np.ndarray, threshold: float) -> np.ndarray:
    """Pixels strictly above the threshold."""
    return np.asarray(cmap) > threshold


def component_eccentricity(pixels: np.ndarray) -> float:
    """Eccentricity of the ellipse sharing the pixels' second moments.

    Discrete-pixel covariance, no continuous-area correction: a single
    pixel gives 0, a perfect line gives 1.
    """
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ValueError("expected a non-empty (n, 2) pixel array")
    if len(pts) == 1:
        return 0.0
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    # eigenvalues of the 2x2 covariance, lam1 >= lam2 >= 0
    tr = cov[0, 0] + cov[1, 1]
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    disc = max(tr * tr / 4.0 - det, 0.0)
    lam1 = tr / 2.0 + np.sqrt(disc)
    lam2 = max(tr / 2.0 - np.sqrt(disc), 0.0)
    if lam1 <= 0.0:
        return 0.0
    return float(np.sqrt(max(1.0 - lam2 / lam1, 0.0)))


def connected_components(mask: np.ndarray) -> list[ComponentStats]:
    """8-connected components of a binary mask with size and eccentricity."""
    m = np.asarray(mask, dtype=bool)
    values = np.where(m, 0, -1).astype(np.int64)
    comp, n_comp = label_equal_regions(values, True)
    out = []
    if n_comp == 0 or not m.any():
        return out
    flat = comp.ravel()
    fg = flat >= 0
    order = np.argsort(flat[fg], kind="stable")
    idx = np.flatnonzero(fg)[order]
    bounds = np.searchsorted(flat[idx], np.arange(n_comp + 1))
    w = m.shape[1]
    for cid in range(n_comp):
        lin = idx[bounds[cid]:bounds[cid + 1]]
        pix = np.column_stack(np.divmod(lin, w))
        out.append(ComponentStats(
            component_id=cid, size=len(pix),
            eccentricity=component_eccentricity(pix), pixels=pix))
    return out


def filter_components(mask: np.ndarray, min_size: float = DEFAULT_MIN_SIZE,
                      min_ecc: float = DEFAULT_MIN_ECC,
                      mode: str = "or") -> np.ndarray:
    """Remove components failing the size / eccentricity thresholds.

    mode 'or' removes a component when size < min_size OR eccentricity
    < min_ecc (each criterion usable independently by zeroing the
    other); mode 'and' removes only components failing both.
    """
    if mode not in ("or", "and"):
        raise ValueError("mode must be 'or' or 'and'")
    m = np.asarray(mask, dtype=bool)
    out = m.copy()
    for comp in connected_components(m):
        small = comp.size < min_size
        round_ = comp.eccentricity < min_ecc
        drop = (small or round_) if mode == "or" else (small and round_)
        if drop:
            out[comp.pixels[:, 0], comp.pixels[:, 1]] = False
    return out
