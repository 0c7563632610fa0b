"""Per-superpixel statistical features and order-of-magnitude scaling.

Each superpixel yields an 18-dimensional vector: the mean, population
variance and histogram entropy of every band, first in RGB and then in
LAB.  The order is fixed by FEATURE_NAMES and shared by every module
that touches instances (training, prediction, signature reports).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_NAMES = (
    "mean-R", "mean-G", "mean-B", "mean-L", "mean-a", "mean-b",
    "var-R", "var-G", "var-B", "var-L", "var-a", "var-b",
    "H-R", "H-G", "H-B", "H-L", "H-a", "H-b",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
N_FEATURES = len(FEATURE_NAMES)

# Named subsets used by the feature-sensitivity experiments.  "core9"
# reads the duplicated var-B of the published 9-feature list as var-G.
FEATURE_SUBSETS = {
    "all18": tuple(range(N_FEATURES)),
    "no-mean-b": tuple(i for i, n in enumerate(FEATURE_NAMES) if n != "mean-b"),
    "core9": tuple(
        FEATURE_INDEX[n]
        for n in ("mean-R", "mean-G", "mean-B", "mean-L",
                  "var-R", "var-G", "var-B", "H-a", "H-b")
    ),
}


@dataclass
class Instance:
    """One superpixel's feature vector plus provenance.

    ``vector`` holds the (possibly scaled) 18 features; ``raw_mean_g``
    keeps the pre-scaling mean green intensity needed by the bag
    downsampler.
    """

    vector: np.ndarray
    superpixel_id: int
    source_image: str
    raw_mean_g: float


@dataclass
class FeatureScale:
    """Per-image power-of-ten divisors, one per feature."""

    scales: np.ndarray  # (18,), each a positive power of ten

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=np.float64)


def _band_entropy(mapped: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin histogram of [0,255]-mapped values."""
    bins = np.clip(np.floor(mapped), 0, 255).astype(np.intp)
    counts = np.bincount(bins, minlength=256)
    p = counts[counts > 0] / bins.size
    return float(-(p * np.log2(p)).sum())


def extract_features(image: np.ndarray, lab: np.ndarray, spmap) -> list[Instance]:
    """Compute one 18-dim Instance per superpixel of ``spmap``.

    ``image`` is the (destriped) RGB raster and ``lab`` its LAB
    conversion; both (H, W, 3).  Means and variances use the raw band
    values; entropies use 256 bins over the bands affinely mapped to
    [0, 255] (RGB as-is, L x 2.55, a and b + 128).
    """
    labels = spmap.labels
    k = spmap.count
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(k + 1))

    rgb = image.reshape(-1, 3)
    lab_flat = lab.reshape(-1, 3)
    bands = np.concatenate([rgb, lab_flat], axis=1)  # (N, 6): R G B L a b
    mapped = np.concatenate(
        [
            rgb,
            lab_flat[:, :1] * 2.55,
            lab_flat[:, 1:] + 128.0,
        ],
        axis=1,
    )

    name = str(spmap.image_id) if getattr(spmap, "image_id", None) is not None else ""
    instances = []
    for sid in range(k):
        idx = order[bounds[sid]:bounds[sid + 1]]
        vals = bands[idx]  # (n, 6)
        mean = vals.mean(axis=0)
        var = vals.var(axis=0)  # population variance: 1-pixel superpixels stay defined
        ent = np.array([_band_entropy(mapped[idx, b]) for b in range(6)])
        vec = np.concatenate([mean, var, ent])
        instances.append(
            Instance(vector=vec, superpixel_id=sid, source_image=name,
                     raw_mean_g=float(mean[1]))
        )
    return instances


def power_of_ten_scale(max_abs: float) -> float:
    """Smallest power of ten >= max_abs; 1.0 for a zero column."""
    if max_abs == 0.0:
        return 1.0
    e = int(np.ceil(np.log10(max_abs)))
    # guard against log10 rounding on exact powers of ten
    while 10.0 ** (e - 1) >= max_abs:
        e -= 1
    while 10.0 ** e < max_abs:
        e += 1
    return 10.0 ** e


def scale_features(instances: list[Instance]) -> tuple[list[Instance], FeatureScale]:
    """Scale one image's instances by each feature's order of magnitude.

    Divides feature i by 10^ceil(log10(max |feature i|)) computed over
    the image's instances, so scaled magnitudes lie in [0, 1].  Returns
    new instances plus the FeatureScale used.
    """
    if not instances:
        raise ValueError("cannot scale an empty instance list")
    mat = np.stack([inst.vector for inst in instances])
    max_abs = np.abs(mat).max(axis=0)
    scales = np.array([power_of_ten_scale(m) for m in max_abs])
    scaled = [
        Instance(vector=inst.vector / scales, superpixel_id=inst.superpixel_id,
                 source_image=inst.source_image, raw_mean_g=inst.raw_mean_g)
        for inst in instances
    ]
    return scaled, FeatureScale(scales=scales)


def instances_to_csv(instances: list[Instance], path) -> None:
    """Dump instances as CSV (image id, superpixel id, 18 features)."""
    with open(path, "w") as fh:
        fh.write("image,superpixel," + ",".join(FEATURE_NAMES) + "\n")
        for inst in instances:
            feats = ",".join(repr(float(v)) for v in inst.vector)
            fh.write(f"{inst.source_image},{inst.superpixel_id},{feats}\n")
