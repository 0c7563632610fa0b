"""Seeded synthetic minirhizotron-style imagery with pixel ground truth.

Soil is a brownish low-frequency texture plus per-pixel noise, column-
mean-centered per band so that the per-column stripe offsets added on
top are the image's only systematic column structure (a rootless image
with stripe amplitude 0 is exactly destripe-invariant).  Roots are
gently curving random-walk strokes, brighter and less saturated than
the surrounding soil, painted before the stripes so destriping acts on
them the same way it does on real imagery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bags import ManifestEntry, save_manifest
from .raster import save_mask_png, save_png
from .seeds import derive_seed

# per-channel brightness gains relative to brightness_offset.  Roots are
# pale yellow-white, debris blue-gray: both brighter than soil in every
# band but spectrally separable, as young roots and pebbles are in
# practice.
_ROOT_GAIN = np.array([1.30, 1.22, 1.06])
_DEBRIS_GAIN = np.array([0.95, 1.10, 1.50])


@dataclass
class SynthParams:
    height: int = 128
    width: int = 128
    n_roots: int = 2
    root_width: tuple = (3, 5)           # px, inclusive
    root_length: tuple | None = None     # px; default (0.5, 1.2) * min side
    curvature: float = 0.04              # heading drift sigma, rad/step
    brightness_offset: float = 60.0
    # per-root contrast spread: older/deeper roots are dimmer; the mean
    # stays at 1 so roots still beat soil by >= brightness_offset
    root_contrast: tuple = (0.70, 1.30)
    soil_texture: float = 14.0           # low-frequency amplitude
    stripe_amplitude: float = 10.0
    noise_sigma: float = 7.0
    # bright non-root debris ("speckle"): present in every image so that
    # per-image dynamic range does not leak the bag label, and so the
    # post-processing filters have round false-positive blobs to remove
    n_debris: tuple = (3, 8)             # count range, inclusive
    debris_radius: tuple = (1.5, 4.5)
    debris_brightness: tuple = (0.8, 1.3)  # relative to brightness_offset
    seed: int = 0

    def validate(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("image sides must be >= 32")
        if self.root_width[0] < 1:
            raise ValueError("root width must be >= 1")
        if min(self.stripe_amplitude, self.noise_sigma, self.soil_texture) < 0:
            raise ValueError("amplitudes must be >= 0")

    def lengths(self) -> tuple:
        if self.root_length is not None:
            return self.root_length
        side = min(self.height, self.width)
        return (0.5 * side, 1.2 * side)


def _smooth_field(rng, h, w, cell=16):
    """Bounded low-frequency noise in [-1, 1]: bilinear over a coarse lattice."""
    ny, nx = h // cell + 2, w // cell + 2
    nodes = rng.uniform(-1.0, 1.0, (ny, nx))
    ry = np.arange(h) / cell
    rx = np.arange(w) / cell
    iy, fy = ry.astype(int), ry % 1.0
    ix, fx = rx.astype(int), rx % 1.0
    top = nodes[iy][:, ix] * (1 - fx) + nodes[iy][:, ix + 1] * fx
    bot = nodes[iy + 1][:, ix] * (1 - fx) + nodes[iy + 1][:, ix + 1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def _disk_offsets(width: float) -> np.ndarray:
    r = width / 2.0
    lim = int(np.ceil(r))
    dy, dx = np.mgrid[-lim:lim + 1, -lim:lim + 1]
    keep = dy * dy + dx * dx < r * r + 0.25
    return np.column_stack((dy[keep], dx[keep]))


def _walk_root(rng, h, w, width, length, curvature, blocked):
    """Rasterize one random-walk stroke; returns its pixel mask or None.

    Starts are rejected (up to 40 tries) when the stroke would touch an
    already-painted root, keeping ground-truth components separate.
    Headings avoid the near-vertical cone: a column-aligned root would
    dominate its own column means and be flattened by destriping, which
    matches scanner physics but makes a bag's label unlearnable.
    """
    offs = _disk_offsets(width)
    for _ in range(40):
        r = rng.uniform(width, h - width)
        c = rng.uniform(width, w - width)
        heading = rng.uniform(0, 2 * np.pi)
        while abs(np.sin(heading)) > 0.94:
            heading = rng.uniform(0, 2 * np.pi)
        steps = int(length)
        mask = np.zeros((h, w), dtype=bool)
        for _step in range(steps):
            pr, pc = int(round(r)), int(round(c))
            pix_r = np.clip(offs[:, 0] + pr, 0, h - 1)
            pix_c = np.clip(offs[:, 1] + pc, 0, w - 1)
            mask[pix_r, pix_c] = True
            heading += rng.normal(0.0, curvature)
            r += np.sin(heading)
            c += np.cos(heading)
            if not (-width <= r < h + width and -width <= c < w + width):
                break
        if not (mask & blocked).any():
            return mask
    return None


def generate_image(params: SynthParams):
    """Render one image; returns (image, gt_mask, bag_label)."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    h, w = params.height, params.width

    # brownish per-image base color, R > G > B; the per-image range mimics
    # soil appearance changing from tube to tube, and the ratios keep soil
    # chroma (LAB a of roughly 12..25) clear of the a-channel decade edge
    base_r = rng.uniform(95, 128)
    base = np.array([base_r, base_r * rng.uniform(0.72, 0.84), 0.0])
    base[2] = base[1] * rng.uniform(0.60, 0.72)

    tex_shared = _smooth_field(rng, h, w)
    soil = np.empty((h, w, 3))
    for ch in range(3):
        tex_ch = _smooth_field(rng, h, w)
        tex = params.soil_texture * (0.7 * tex_shared + 0.3 * tex_ch)
        noise = np.clip(rng.normal(0.0, params.noise_sigma, (h, w)),
                        -4 * params.noise_sigma, 4 * params.noise_sigma)
        soil[..., ch] = base[ch] + tex + noise
    # column-mean-center each band: stripes below become the only column structure
    soil += soil.mean(axis=(0, 1), keepdims=True) - soil.mean(axis=0, keepdims=True)

    image = soil.copy()
    gt = np.zeros((h, w), dtype=bool)
    lo, hi = params.lengths()
    # 3 px clearance keeps ground-truth root components disjoint
    from scipy.ndimage import binary_dilation

    for _ in range(params.n_roots):
        width = rng.uniform(params.root_width[0], params.root_width[1])
        length = rng.uniform(lo, hi)
        contrast = rng.uniform(*params.root_contrast)
        blocked = binary_dilation(gt, iterations=3) if gt.any() else gt
        mask = _walk_root(rng, h, w, width, length, params.curvature, blocked)
        if mask is None:
            continue
        lift = params.brightness_offset * contrast * _ROOT_GAIN
        image[mask] = image[mask] + lift
        gt |= mask

    # debris blobs: bright ellipses of mild aspect (eccentricity stays
    # well under the root range), never overlapping root pixels.  The
    # first one is a strong superpixel-sized "pebble" present in every
    # image: it pins each band's per-image dynamic range to the same
    # decade regardless of the bag label, which keeps the per-image
    # order-of-magnitude feature scales comparable across the corpus.
    n_debris = int(rng.integers(params.n_debris[0], params.n_debris[1] + 1))
    yy, xx = np.mgrid[0:h, 0:w]
    occupied = binary_dilation(gt, iterations=3) if gt.any() else gt
    for k in range(n_debris):
        if k == 0:
            radius = rng.uniform(4.0, 5.0)
            aspect = rng.uniform(1.4, 1.8)
            strength = rng.uniform(1.35, 1.45)
            gain = _DEBRIS_GAIN
        else:
            radius = rng.uniform(*params.debris_radius)
            aspect = rng.uniform(1.0, 2.0)
            strength = rng.uniform(*params.debris_brightness)
            gain = _DEBRIS_GAIN
        for _try in range(30):
            angle = rng.uniform(0, np.pi)
            cy = rng.uniform(radius * aspect, h - radius * aspect)
            cx = rng.uniform(radius * aspect, w - radius * aspect)
            dy, dx = yy - cy, xx - cx
            u = dy * np.cos(angle) + dx * np.sin(angle)
            v = -dy * np.sin(angle) + dx * np.cos(angle)
            blob = (u / (radius * aspect)) ** 2 + (v / radius) ** 2 < 1.0
            if not (blob & occupied).any():
                lift = params.brightness_offset * strength
                image[blob] = image[blob] + lift * gain
                occupied = occupied | blob
                break

    stripes = rng.uniform(-params.stripe_amplitude, params.stripe_amplitude,
                          (1, w, 3))
    image += stripes
    np.clip(image, 0.0, 255.0, out=image)
    return image, gt, int(params.n_roots > 0)


def generate_dataset(out_dir, n_images: int, positive_fraction: float = 0.5,
                     base: SynthParams | None = None, seed: int = 0,
                     max_roots: int = 3) -> Path:
    """Write a PNG image/mask corpus plus its bag manifest; returns the
    manifest path.  Image k is positive iff k < round(n * fraction)."""
    base = base or SynthParams()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    n_pos = int(round(n_images * positive_fraction))

    entries = []
    for k in range(n_images):
        img_seed = derive_seed(seed, "image", k)
        rng = np.random.default_rng(derive_seed(seed, "roots", k))
        n_roots = int(rng.integers(1, max_roots + 1)) if k < n_pos else 0
        params = replace(base, n_roots=n_roots, seed=img_seed)
        image, gt, label = generate_image(params)
        img_path = out / "images" / f"img_{k:03d}.png"
        mask_path = out / "masks" / f"img_{k:03d}_mask.png"
        save_png(image, img_path)
        save_mask_png(gt, mask_path)
        entries.append(ManifestEntry(image=str(img_path), label=label,
                                     mask=str(mask_path)))

    manifest_path = out / "manifest.json"
    save_manifest(entries, manifest_path)
    split_manifests(entries, out)
    with open(out / "params.json", "w") as fh:
        json.dump({"seed": seed, "n_images": n_images,
                   "positive_fraction": positive_fraction,
                   "max_roots": max_roots}, fh, indent=2)
    return manifest_path


def split_manifests(entries, out_dir, train_fraction: float = 0.5):
    """Write class-balanced train/eval manifests (first share of each
    class trains, the rest is the held-out pixel-evaluation set)."""
    out = Path(out_dir)
    train, evald = [], []
    for label in (1, 0):
        group = [e for e in entries if e.label == label]
        k = int(round(len(group) * train_fraction))
        train.extend(group[:k])
        evald.extend(group[k:])
    train_path = out / "train_manifest.json"
    eval_path = out / "eval_manifest.json"
    save_manifest(train, train_path)
    save_manifest(evald, eval_path)
    return train_path, eval_path
