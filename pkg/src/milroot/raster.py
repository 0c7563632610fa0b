"""Image model, column destriping and RGB-to-LAB conversion.

Images are float64 arrays of shape (H, W, 3) on a [0, 255] intensity
scale.  Integer inputs are promoted to float64 on load; destriped values
may leave [0, 255] and are only clamped when exported to 8-bit PNG.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

# sRGB -> CIEXYZ (D65 white, 2 degree observer)
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# Row sums of _RGB2XYZ: equal-channel pixels map exactly onto the white axis.
_WHITE_D65 = _RGB2XYZ.sum(axis=1)

_LAB_DELTA = 6.0 / 29.0


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) finite-float contract and return the array as float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have at least one row and one column")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def destripe(image: np.ndarray) -> np.ndarray:
    """Remove per-column offsets: subtract each column's mean, add back the band mean.

    Output values are intentionally not clamped to [0, 255]; clamping is
    deferred to export so band statistics stay unbiased.
    """
    arr = validate_image(image)
    col_mean = arr.mean(axis=0, keepdims=True)          # (1, W, 3)
    band_mean = arr.mean(axis=(0, 1), keepdims=True)    # (1, 1, 3)
    return arr - col_mean + band_mean


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Convert an sRGB image on the [0, 255] scale to CIELAB (D65).

    Values outside [0, 255] (e.g. from destriping) are clamped before
    conversion.  Returns an array of the same shape with L in [0, 100]
    and a, b roughly in [-128, 127].
    """
    arr = validate_image(image)
    srgb = np.clip(arr, 0.0, 255.0) / 255.0

    linear = np.where(
        srgb <= 0.04045,
        srgb / 12.92,
        ((srgb + 0.055) / 1.055) ** 2.4,
    )
    xyz = linear @ _RGB2XYZ.T
    xyz_n = xyz / _WHITE_D65

    f = np.where(
        xyz_n > _LAB_DELTA**3,
        np.cbrt(xyz_n),
        xyz_n / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0,
    )
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

    lab = np.empty_like(arr)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG or JPEG as a float64 (H, W, 3) image."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float64)


def save_png(image: np.ndarray, path) -> None:
    """Write an image as 8-bit PNG, clamping to [0, 255] and rounding."""
    arr = validate_image(image)
    out = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(out, mode="RGB").save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a binary mask as an 8-bit PNG with values 0/255."""
    out = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    """Read a mask PNG; any nonzero pixel counts as foreground."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr > 0
