"""Model persistence (tagged-union JSON) and the CMAP confidence-map
binary format.

Model files carry the algorithm tag, hyperparameters, seed, feature
mask and the payload needed to reproduce predictions bit-exactly:
signature + whitener for ACE, support vectors / alphas / bias / kernel
for SVMs, full tree arrays for forests.  CMAP files are
"CMAP" + version byte + u32le width + u32le height + row-major f64le.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FEATURE_SUBSETS, N_FEATURES
from .learners import ForestModel, Kernel, SvmModel, Tree, forest_predict, svm_decision
from .mil import AceModel, ace_confidence

CMAP_MAGIC = b"CMAP"
CMAP_VERSION = 1

SCALES_POLICY = "per-image-power-of-ten"


@dataclass
class TrainedModel:
    """Tagged union of the three model payloads plus training metadata."""

    algo: str                     # miace | misvm | miforests | svm | rf
    model: AceModel | SvmModel | ForestModel
    feature_mask: tuple           # indices into the 18-feature vector
    seed: int
    params: dict = field(default_factory=dict)
    scales_policy: str = SCALES_POLICY

    def __post_init__(self):
        dim = _model_dim(self.model)
        if len(self.feature_mask) != dim:
            raise ValueError(
                f"feature mask length {len(self.feature_mask)} does not match "
                f"model dimensionality {dim}")

    def confidences(self, vectors: np.ndarray) -> np.ndarray:
        """Per-instance confidences from full 18-dim scaled vectors."""
        X = np.asarray(vectors, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] == N_FEATURES and len(self.feature_mask) != N_FEATURES:
            X = X[:, list(self.feature_mask)]
        if isinstance(self.model, AceModel):
            return np.asarray(ace_confidence(self.model, X))
        if isinstance(self.model, SvmModel):
            return np.asarray(svm_decision(self.model, X))
        return np.asarray(forest_predict(self.model, X))


def _model_dim(model) -> int:
    if isinstance(model, AceModel):
        return len(model.signature)
    if isinstance(model, SvmModel):
        return model.support_vectors.shape[1]
    return model.n_features


def resolve_feature_mask(spec) -> tuple:
    """Accept a named subset or an explicit index list."""
    if spec is None:
        return FEATURE_SUBSETS["all18"]
    if isinstance(spec, str):
        try:
            return FEATURE_SUBSETS[spec]
        except KeyError:
            raise ValueError(
                f"unknown feature subset {spec!r}; known: {sorted(FEATURE_SUBSETS)}")
    mask = tuple(int(i) for i in spec)
    if any(not 0 <= i < N_FEATURES for i in mask):
        raise ValueError("feature indices must be in [0, 18)")
    if len(set(mask)) != len(mask):
        raise ValueError("feature mask contains duplicates")
    return mask


def _payload(model) -> dict:
    if isinstance(model, AceModel):
        return {
            "kind": "ace",
            "signature": model.signature.tolist(),
            "background_mean": model.background_mean.tolist(),
            "whitener": model.whitener.tolist(),
            "regularizer": model.regularizer,
        }
    if isinstance(model, SvmModel):
        return {
            "kind": "svm",
            "support_vectors": model.support_vectors.tolist(),
            "alphas": model.alphas.tolist(),
            "bias": model.bias,
            "kernel": {"name": model.kernel.name, "gamma": model.kernel.gamma},
            "C": model.C,
        }
    if isinstance(model, ForestModel):
        return {
            "kind": "forest",
            "n_features": model.n_features,
            "x_d": model.x_d,
            "seed": model.seed,
            "bootstrap": model.bootstrap,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in model.trees
            ],
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _unpayload(data: dict):
    kind = data["kind"]
    if kind == "ace":
        return AceModel(
            signature=np.array(data["signature"], dtype=np.float64),
            background_mean=np.array(data["background_mean"], dtype=np.float64),
            whitener=np.array(data["whitener"], dtype=np.float64),
            regularizer=float(data["regularizer"]),
        )
    if kind == "svm":
        return SvmModel(
            support_vectors=np.array(data["support_vectors"], dtype=np.float64),
            alphas=np.array(data["alphas"], dtype=np.float64),
            bias=float(data["bias"]),
            kernel=Kernel(data["kernel"]["name"], data["kernel"]["gamma"]),
            C=float(data["C"]),
        )
    if kind == "forest":
        trees = [
            Tree(
                feature=np.array(t["feature"], dtype=np.int32),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int32),
                right=np.array(t["right"], dtype=np.int32),
                value=np.array(t["value"], dtype=np.float64),
            )
            for t in data["trees"]
        ]
        return ForestModel(trees=trees, n_features=int(data["n_features"]),
                           x_d=int(data["x_d"]), seed=int(data["seed"]),
                           bootstrap=bool(data["bootstrap"]))
    raise ValueError(f"unknown model payload kind {kind!r}")


def save_model(tm: TrainedModel, path) -> None:
    doc = {
        "format": "milroot-model",
        "version": 1,
        "algo": tm.algo,
        "seed": tm.seed,
        "params": tm.params,
        "feature_mask": list(tm.feature_mask),
        "scales_policy": tm.scales_policy,
        "payload": _payload(tm.model),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "milroot-model":
        raise ValueError(f"{path}: not a milroot model file")
    return TrainedModel(
        algo=doc["algo"],
        model=_unpayload(doc["payload"]),
        feature_mask=tuple(doc["feature_mask"]),
        seed=int(doc["seed"]),
        params=doc.get("params", {}),
        scales_policy=doc.get("scales_policy", SCALES_POLICY),
    )


def save_cmap(cmap: np.ndarray, path) -> None:
    arr = np.asarray(cmap, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("confidence maps are 2-D")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(CMAP_MAGIC)
        fh.write(struct.pack("<B", CMAP_VERSION))
        fh.write(struct.pack("<II", w, h))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def load_cmap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CMAP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != CMAP_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(8 * w * h), dtype="<f8")
    if data.size != w * h:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(h, w).astype(np.float64)
