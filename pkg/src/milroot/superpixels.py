"""SLIC oversegmentation into spatially connected, color-uniform groups.

Localized k-means in (L, a, b, row, col) space with the spatial axes
weighted by compactness/S, S = sqrt(HW/K0).  Seeds start on a regular
grid, are nudged to the lowest-gradient pixel of their 3x3 neighborhood
(ties keep the seed in place), and each center only competes for pixels
inside a 2S x 2S window.  A connectivity pass then absorbs fragments
smaller than S^2/4 into their largest adjacent superpixel.

Everything is deterministic: ties in assignment go to the lowest center
index, and final ids follow raster order of each superpixel's first
pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from PIL import Image

from ._ccl import label_equal_regions
from .raster import rgb_to_lab, validate_image


@dataclass
class SlicParams:
    target_count: int
    compactness: float = 10.0
    max_iters: int = 10

    def validate(self, n_pixels: int) -> None:
        if not 1 <= self.target_count <= n_pixels:
            raise ValueError(
                f"target_count must be in [1, {n_pixels}], got {self.target_count}"
            )
        if self.compactness <= 0:
            raise ValueError("compactness must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # (H, W) int ids, gapless 0..count-1
    count: int
    image_id: str | None = None

    @cached_property
    def members(self) -> list[np.ndarray]:
        """Per-superpixel (n_i, 2) arrays of (row, col) pixels."""
        flat = self.labels.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.count + 1))
        h, w = self.labels.shape
        rows, cols = np.divmod(order, w)
        return [
            np.column_stack((rows[bounds[i]:bounds[i + 1]],
                             cols[bounds[i]:bounds[i + 1]]))
            for i in range(self.count)
        ]


def _seed_grid(h: int, w: int, k0: int) -> np.ndarray:
    """Regular grid of about k0 seeds, aspect-matched to the image."""
    ny = int(round(np.sqrt(k0 * h / w))) if w else 1
    ny = min(max(ny, 1), h)
    nx = min(max(int(round(k0 / ny)), 1), w)
    rows = (np.arange(ny) + 0.5) * h / ny
    cols = (np.arange(nx) + 0.5) * w / nx
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.column_stack((rr.ravel(), cc.ravel()))


def _gradient_map(lab: np.ndarray) -> np.ndarray:
    padded = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return (dx**2).sum(axis=2) + (dy**2).sum(axis=2)


def _perturb_seeds(seeds: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Move each seed to the lowest-gradient pixel of its 3x3 neighborhood.

    A strict improvement is required, so seeds on flat gradient stay put
    (this keeps seeds distinct when K0 equals the pixel count).
    """
    h, w = grad.shape
    out = np.empty((len(seeds), 2), dtype=np.int64)
    for i, (sy, sx) in enumerate(seeds):
        r = min(max(int(round(sy - 0.5)), 0), h - 1)
        c = min(max(int(round(sx - 0.5)), 0), w - 1)
        r0, r1 = max(r - 1, 0), min(r + 2, h)
        c0, c1 = max(c - 1, 0), min(c + 2, w)
        window = grad[r0:r1, c0:c1]
        best = np.unravel_index(np.argmin(window), window.shape)
        if window[best] < grad[r, c]:
            r, c = r0 + best[0], c0 + best[1]
        out[i] = (r, c)
    return out


def _enforce_connectivity(labels: np.ndarray, min_size: float) -> tuple[np.ndarray, int]:
    """Absorb 4-connected fragments smaller than min_size into their
    largest adjacent superpixel; relabel densely in raster order."""
    comp, n_comp = label_equal_regions(labels.astype(np.int64), False)
    if n_comp == 1:
        return np.zeros_like(labels), 1

    sizes = np.bincount(comp.ravel(), minlength=n_comp).astype(np.int64)
    # adjacency over original components
    pairs = set()
    a, b = comp[:, :-1], comp[:, 1:]
    for x, y in zip(a[a != b], b[a != b]):
        pairs.add((int(x), int(y)))
    a, b = comp[:-1, :], comp[1:, :]
    for x, y in zip(a[a != b], b[a != b]):
        pairs.add((int(x), int(y)))
    neighbors: list[set[int]] = [set() for _ in range(n_comp)]
    for x, y in pairs:
        neighbors[x].add(y)
        neighbors[y].add(x)

    parent = np.arange(n_comp)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    changed = True
    while changed:
        changed = False
        for cid in range(n_comp):
            root = find(cid)
            if sizes[root] >= min_size:
                continue
            nbr_roots = {find(n) for n in neighbors[cid]} - {root}
            if not nbr_roots:
                continue
            # largest neighbor; ties resolved toward the lowest id
            target = min(nbr_roots, key=lambda r: (-sizes[r], r))
            low, high = min(root, target), max(root, target)
            parent[high] = low
            sizes[low] += sizes[high]
            changed = True

    roots = np.array([find(c) for c in range(n_comp)])
    final = np.full(n_comp, -1, dtype=np.int64)
    next_id = 0
    root_of_pixel = roots[comp.ravel()]
    for r in root_of_pixel:
        if final[r] == -1:
            final[r] = next_id
            next_id += 1
    return final[root_of_pixel].reshape(labels.shape), next_id


def slic_segment(image: np.ndarray, params: SlicParams,
                 lab: np.ndarray | None = None,
                 image_id: str | None = None) -> SuperpixelMap:
    """Oversegment an image into roughly equal, connected superpixels."""
    arr = validate_image(image)
    h, w = arr.shape[:2]
    params.validate(h * w)
    if lab is None:
        lab = rgb_to_lab(arr)

    k0 = params.target_count
    s = np.sqrt(h * w / k0)
    spatial_w = (params.compactness / s) ** 2

    seeds = _perturb_seeds(_seed_grid(h, w, k0), _gradient_map(lab))
    k = len(seeds)
    centers_lab = lab[seeds[:, 0], seeds[:, 1]].astype(np.float64)
    centers_pos = seeds.astype(np.float64)

    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    labels = np.full((h, w), -1, dtype=np.int64)
    prev = None

    for _ in range(params.max_iters):
        dist = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(k):
            cy, cx = centers_pos[ci]
            r0, r1 = max(int(np.floor(cy - s)), 0), min(int(np.ceil(cy + s)) + 1, h)
            c0, c1 = max(int(np.floor(cx - s)), 0), min(int(np.ceil(cx + s)) + 1, w)
            if r0 >= r1 or c0 >= c1:
                continue
            d_lab = ((lab[r0:r1, c0:c1] - centers_lab[ci]) ** 2).sum(axis=2)
            d_sp = (rows[r0:r1, None] - cy) ** 2 + (cols[None, c0:c1] - cx) ** 2
            d = d_lab + spatial_w * d_sp
            window = dist[r0:r1, c0:c1]
            better = d < window
            window[better] = d[better]
            labels[r0:r1, c0:c1][better] = ci

        if np.any(labels < 0):
            # window misses are rare; fall back to full-image distance
            miss = np.argwhere(labels < 0)
            for r, c in miss:
                d = ((centers_lab - lab[r, c]) ** 2).sum(axis=1) + spatial_w * (
                    (centers_pos[:, 0] - r) ** 2 + (centers_pos[:, 1] - c) ** 2
                )
                labels[r, c] = int(np.argmin(d))

        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels.copy()

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        occupied = counts > 0
        for ch in range(3):
            sums = np.bincount(flat, weights=lab[..., ch].ravel(), minlength=k)
            centers_lab[occupied, ch] = sums[occupied] / counts[occupied]
        rsum = np.bincount(flat, weights=np.broadcast_to(rows[:, None], (h, w)).ravel(),
                           minlength=k)
        csum = np.bincount(flat, weights=np.broadcast_to(cols[None, :], (h, w)).ravel(),
                           minlength=k)
        centers_pos[occupied, 0] = rsum[occupied] / counts[occupied]
        centers_pos[occupied, 1] = csum[occupied] / counts[occupied]

    final, count = _enforce_connectivity(labels, s * s / 4.0)
    return SuperpixelMap(labels=final, count=count, image_id=image_id)


def export_label_png(spmap: SuperpixelMap, path) -> None:
    """Debug export of the label map as 16-bit grayscale PNG."""
    if spmap.count > 65535:
        raise ValueError("too many superpixels for 16-bit export")
    Image.fromarray(spmap.labels.astype(np.uint16), mode="I;16").save(path, "PNG")


def export_boundary_png(image: np.ndarray, spmap: SuperpixelMap, path) -> None:
    """Debug export of superpixel boundaries drawn in yellow over the image."""
    arr = np.clip(validate_image(image), 0, 255).astype(np.uint8).copy()
    lbl = spmap.labels
    edge = np.zeros(lbl.shape, dtype=bool)
    edge[:, 1:] |= lbl[:, 1:] != lbl[:, :-1]
    edge[1:, :] |= lbl[1:, :] != lbl[:-1, :]
    arr[edge] = (255, 255, 0)
    Image.fromarray(arr, mode="RGB").save(path, "PNG")
