"""Bag construction at three label granularities plus green-histogram
downsampling.

A bag is a labeled multiset of scaled instances.  Image-level bags carry
the image label; instance-level and small-bag granularities need a
ground-truth pixel mask to label superpixels (a superpixel counts as
root when at least half of its pixels fall inside the mask).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import Instance
from .superpixels import SlicParams, SuperpixelMap, slic_segment

GREEN_BINS = 200
ROOT_OVERLAP = 0.5  # fraction of member pixels inside the mask that makes a superpixel "root"


@dataclass
class Bag:
    id: str
    label: int  # 1 = contains root, 0 = root-free
    instances: list[Instance]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"bag label must be 0 or 1, got {self.label}")
        if not self.instances:
            raise ValueError("bags must be non-empty")


@dataclass
class BagMode:
    """One of 'image', 'small-bag' or 'instance' granularity."""

    kind: str = "image"
    group_size: int = 10          # small-bag: target instances per bag
    samples_per_class: int = 1000  # instance mode: per-image cap per class
    bags_per_class: int = 100      # small-bag mode: per-image cap per class

    def __post_init__(self):
        if self.kind not in ("image", "small-bag", "instance"):
            raise ValueError(f"unknown bag mode {self.kind!r}")
        if self.kind == "small-bag" and self.group_size < 2:
            raise ValueError("small-bag mode needs group_size >= 2")


def downsample_bag(bag: Bag, rng_seed: int) -> Bag:
    """Keep one instance per occupied bin of a 200-bin green histogram.

    Bins span [0, 255] over the raw (pre-scaling) mean green value; the
    kept instance per bin is chosen uniformly at random.  Raises the
    target-to-background ratio in positive bags while capping bag size
    at 200.
    """
    rng = np.random.default_rng(rng_seed)
    greens = np.array([inst.raw_mean_g for inst in bag.instances])
    bins = np.clip((greens / 255.0 * GREEN_BINS).astype(np.int64), 0, GREEN_BINS - 1)
    kept = []
    for b in np.unique(bins):
        members = np.flatnonzero(bins == b)
        kept.append(bag.instances[members[rng.integers(len(members))]])
    return Bag(id=bag.id, label=bag.label, instances=kept)


def superpixel_root_flags(spmap: SuperpixelMap, gt_mask: np.ndarray) -> np.ndarray:
    """Boolean per-superpixel root labels from a pixel mask (majority rule)."""
    mask = np.asarray(gt_mask, dtype=bool)
    if mask.shape != spmap.labels.shape:
        raise ValueError("mask shape does not match superpixel map")
    flat = spmap.labels.ravel()
    inside = np.bincount(flat, weights=mask.ravel().astype(np.float64),
                         minlength=spmap.count)
    total = np.bincount(flat, minlength=spmap.count)
    return inside / total >= ROOT_OVERLAP


def regroup_bags(instances: list[Instance], spmap: SuperpixelMap,
                 gt_mask: np.ndarray | None, mode: BagMode, rng_seed: int,
                 image_label: int = 1, image_id: str = "img",
                 image: np.ndarray | None = None) -> list[Bag]:
    """Build bags for one image at the requested granularity.

    image mode     -> a single bag labeled ``image_label``.
    instance mode  -> singleton bags sampled per class, labeled by the
                      superpixel's overlap with the mask.
    small-bag mode -> a coarse SLIC pass groups ~group_size adjacent
                      superpixels; a group is positive iff it contains a
                      root superpixel.  Requires ``image`` for the
                      coarse segmentation.
    """
    if mode.kind == "image":
        return [Bag(id=image_id, label=image_label, instances=list(instances))]

    if gt_mask is None:
        raise ValueError("mask required")
    flags = superpixel_root_flags(spmap, gt_mask)
    rng = np.random.default_rng(rng_seed)

    if mode.kind == "instance":
        root_ids = np.flatnonzero(flags)
        soil_ids = np.flatnonzero(~flags)
        picks = []
        for ids in (root_ids, soil_ids):
            n = min(len(ids), mode.samples_per_class)
            if n:
                picks.extend(ids[np.sort(rng.choice(len(ids), size=n, replace=False))])
        return [
            Bag(id=f"{image_id}:sp{sid}", label=int(flags[sid]),
                instances=[instances[sid]])
            for sid in picks
        ]

    # small-bag: assign each fine superpixel to the coarse region holding
    # the majority of its pixels
    if image is None:
        raise ValueError("small-bag mode needs the source image for coarse SLIC")
    coarse_count = max(1, spmap.count // mode.group_size)
    coarse = slic_segment(image, SlicParams(target_count=coarse_count),
                          image_id=f"{image_id}:coarse")
    groups: dict[int, list[int]] = {}
    for sid in range(spmap.count):
        pix = spmap.members[sid]
        votes = np.bincount(coarse.labels[pix[:, 0], pix[:, 1]])
        groups.setdefault(int(np.argmax(votes)), []).append(sid)

    pos_bags, neg_bags = [], []
    for gid in sorted(groups):
        sids = groups[gid]
        label = int(any(flags[s] for s in sids))
        bag = Bag(id=f"{image_id}:g{gid}", label=label,
                  instances=[instances[s] for s in sids])
        (pos_bags if label else neg_bags).append(bag)
    picked = []
    for bag_list in (pos_bags, neg_bags):
        n = min(len(bag_list), mode.bags_per_class)
        if n:
            idx = np.sort(rng.choice(len(bag_list), size=n, replace=False))
            picked.extend(bag_list[i] for i in idx)
    return picked


# ---------------------------------------------------------------------------
# bag manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    image: str
    label: int
    mask: str | None = None


def load_manifest(path) -> list[ManifestEntry]:
    """Read a bag manifest: [{"image": path, "label": 0|1, "mask": path|null}]."""
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    entries = []
    for rec in raw:
        label = int(rec["label"])
        if label not in (0, 1):
            raise ValueError(f"manifest label must be 0 or 1, got {label}")
        entries.append(ManifestEntry(image=rec["image"], label=label,
                                     mask=rec.get("mask")))
    return entries


def save_manifest(entries: list[ManifestEntry], path) -> None:
    records = [
        {"image": e.image, "label": e.label, "mask": e.mask} for e in entries
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")
