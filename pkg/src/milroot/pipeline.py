"""End-to-end experiment orchestration.

One experiment = preprocess -> superpixels -> features (once per image)
then, per run: bag construction (re-drawn), training, prediction,
post-processing and ROC evaluation, finishing with a Table-style
aggregate CSV and figures.  Runs are seeded from (base_seed, run,
stage) so every stage is independently reproducible; with workers > 1
runs execute in forked processes after the shared featurization.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bags import Bag, BagMode, ManifestEntry, downsample_bag, load_manifest, regroup_bags
from .evaluation import (
    FPR_GRID,
    RocCurve,
    aggregate_runs,
    aggregate_to_csv,
    roc_curve,
    roc_to_csv,
    tpr_at_fpr,
)
from .features import FEATURE_NAMES, Instance, extract_features, scale_features
from .learners import Kernel, forest_train, smo_train
from .mil import (
    AnnealSchedule,
    MilTrainInfo,
    miace_train,
    miforests_train,
    misvm_train,
    report_signature,
    signature_csv,
)
from .modelio import TrainedModel, resolve_feature_mask, save_cmap, save_model
from .postproc import binarize, filter_components, select_threshold_for_fpr
from .raster import destripe, load_mask_png, load_png, rgb_to_lab
from .seeds import derive_seed
from .superpixels import SlicParams, SuperpixelMap, slic_segment

ALGORITHMS = ("miace", "misvm", "miforests", "svm", "rf")


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that produced it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    manifest: str = ""
    eval_manifest: str = ""       # empty -> evaluate on the training images
    out_dir: str = ""
    algorithms: tuple = ("miace", "misvm")
    runs: int = 1
    base_seed: int = 0
    workers: int = 0              # 0 -> MILROOT_WORKERS or 1

    superpixel_size: int = 100    # target pixels per superpixel
    compactness: float = 10.0
    slic_iters: int = 10

    feature_mask: object = "all18"

    bag_mode: str = "image"
    group_size: int = 10
    samples_per_class: int = 1000
    bags_per_class: int = 100
    downsample: bool = True

    svm_c: float = 10.0
    svm_gamma: float = 1.0
    trees: int = 100
    x_d: int = 4
    anneal_t0: float = 1.0
    anneal_cooling: float = 0.5
    anneal_steps: int = 10

    target_fprs: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)
    min_size: float = 300.0
    min_ecc: float = 0.95
    filter_mode: str = "or"
    postproc_fpr: float = 0.03    # operating point for the filter metrics

    def resolved_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get("MILROOT_WORKERS", "")
        return max(1, int(env)) if env.isdigit() and env else 1

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=list)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for key in ("algorithms", "target_fprs"):
            setattr(cfg, key, tuple(getattr(cfg, key)))
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ImageData:
    """Per-image products of the deterministic (run-independent) stages."""

    entry: ManifestEntry
    stem: str
    image: np.ndarray                 # destriped, float64
    spmap: SuperpixelMap
    instances: list[Instance]         # scaled, 18-dim
    gt_mask: np.ndarray | None


def featurize_entry(entry: ManifestEntry, config: PipelineConfig,
                    stem: str) -> ImageData:
    try:
        raw = load_png(entry.image)
    except Exception as exc:
        raise StageError("preprocess", f"cannot read {entry.image}: {exc}")
    image = destripe(raw)
    lab = rgb_to_lab(image)
    n_pixels = image.shape[0] * image.shape[1]
    params = SlicParams(
        target_count=max(1, n_pixels // config.superpixel_size),
        compactness=config.compactness,
        max_iters=config.slic_iters,
    )
    spmap = slic_segment(image, params, lab=lab, image_id=stem)
    instances = extract_features(image, lab, spmap)
    scaled, _ = scale_features(instances)
    gt = load_mask_png(entry.mask) if entry.mask else None
    return ImageData(entry=entry, stem=stem, image=image, spmap=spmap,
                     instances=scaled, gt_mask=gt)


def featurize_manifest(manifest_path, config: PipelineConfig) -> list[ImageData]:
    entries = load_manifest(manifest_path)
    if not entries:
        raise StageError("preprocess", "manifest is empty")
    return [
        featurize_entry(entry, config, Path(entry.image).stem)
        for entry in entries
    ]


def build_run_bags(data: list[ImageData], config: PipelineConfig,
                   run: int) -> list[Bag]:
    mode = BagMode(kind=config.bag_mode, group_size=config.group_size,
                   samples_per_class=config.samples_per_class,
                   bags_per_class=config.bags_per_class)
    bags: list[Bag] = []
    for k, d in enumerate(data):
        if mode.kind != "image" and d.gt_mask is None:
            raise StageError("bags", "mask required")
        img_bags = regroup_bags(
            d.instances, d.spmap, d.gt_mask, mode,
            rng_seed=derive_seed(config.base_seed, "bags", run, k),
            image_label=d.entry.label, image_id=d.stem, image=d.image)
        if mode.kind == "image" and config.downsample:
            img_bags = [
                downsample_bag(b, derive_seed(config.base_seed, "downsample", run, k))
                for b in img_bags
            ]
        bags.extend(img_bags)
    return bags


def _mask_bags(bags: list[Bag], mask: tuple) -> list[Bag]:
    if list(mask) == list(range(18)):
        return bags
    idx = list(mask)
    return [
        Bag(id=b.id, label=b.label, instances=[
            Instance(vector=inst.vector[idx], superpixel_id=inst.superpixel_id,
                     source_image=inst.source_image, raw_mean_g=inst.raw_mean_g)
            for inst in b.instances
        ])
        for b in bags
    ]


def train_algorithm(algo: str, bags: list[Bag], config: PipelineConfig,
                    run: int) -> tuple[TrainedModel, MilTrainInfo | None]:
    mask = resolve_feature_mask(config.feature_mask)
    masked = _mask_bags(bags, mask)
    seed = derive_seed(config.base_seed, "train", run, algo)
    params: dict = {}
    info = None
    try:
        if algo == "miace":
            model, info = miace_train(masked)
        elif algo == "misvm":
            model, info = misvm_train(masked, C=config.svm_c,
                                      gamma=config.svm_gamma, seed=seed)
            params = {"C": config.svm_c, "gamma": config.svm_gamma}
        elif algo == "miforests":
            sched = AnnealSchedule(config.anneal_t0, config.anneal_cooling,
                                   config.anneal_steps)
            model, info = miforests_train(masked, t=config.trees, x_d=config.x_d,
                                          seed=seed, schedule=sched)
            params = {"t": config.trees, "x_d": config.x_d,
                      "schedule": [sched.t_initial, sched.cooling, sched.steps]}
        elif algo in ("svm", "rf"):
            # non-MIL baselines: every instance inherits its bag's label
            X = np.vstack([inst.vector for b in masked for inst in b.instances])
            y = np.concatenate([
                np.full(len(b.instances), b.label) for b in masked
            ])
            if algo == "svm":
                model = smo_train(X, np.where(y > 0, 1.0, -1.0), C=config.svm_c,
                                  kernel=Kernel("rbf", config.svm_gamma), seed=seed)
                params = {"C": config.svm_c, "gamma": config.svm_gamma}
            else:
                model = forest_train(X, y, t=config.trees, x_d=config.x_d,
                                     seed=seed)
                params = {"t": config.trees, "x_d": config.x_d}
        else:
            raise StageError("train", f"unknown algorithm {algo!r}")
    except StageError:
        raise
    except ValueError as exc:
        raise StageError("train", f"{algo}: {exc}")
    return TrainedModel(algo=algo, model=model, feature_mask=mask, seed=seed,
                        params=params), info


def predict_confidence_map(tm: TrainedModel, d: ImageData) -> np.ndarray:
    vectors = np.stack([inst.vector for inst in d.instances])
    conf = tm.confidences(vectors)
    return conf[d.spmap.labels]


def pooled_roc(cmaps: list[np.ndarray], masks: list[np.ndarray]) -> RocCurve:
    conf = np.concatenate([m.ravel() for m in cmaps])
    gt = np.concatenate([np.asarray(g, dtype=bool).ravel() for g in masks])
    return roc_curve(conf, gt)


def postproc_metrics(cmaps: list[np.ndarray], masks: list[np.ndarray],
                     config: PipelineConfig, target_fpr: float) -> dict:
    """Operating-point TPR/FPR before and after component filtering."""
    theta = select_threshold_for_fpr(cmaps, masks, target_fpr)
    raw_tp = raw_fp = flt_tp = flt_fp = n_pos = n_neg = 0
    for cmap, gt in zip(cmaps, masks):
        gt = np.asarray(gt, dtype=bool)
        pred = binarize(cmap, theta)
        filtered = filter_components(pred, config.min_size, config.min_ecc,
                                     config.filter_mode)
        raw_tp += int((pred & gt).sum())
        raw_fp += int((pred & ~gt).sum())
        flt_tp += int((filtered & gt).sum())
        flt_fp += int((filtered & ~gt).sum())
        n_pos += int(gt.sum())
        n_neg += int((~gt).sum())
    return {
        "threshold": theta,
        "raw_tpr": raw_tp / n_pos if n_pos else 0.0,
        "raw_fpr": raw_fp / n_neg if n_neg else 0.0,
        "filtered_tpr": flt_tp / n_pos if n_pos else 0.0,
        "filtered_fpr": flt_fp / n_neg if n_neg else 0.0,
    }


def execute_run(data: list[ImageData], config: PipelineConfig, run: int,
                out_dir: Path, save_artifacts: bool = True,
                eval_data: list[ImageData] | None = None) -> dict:
    """Train every configured algorithm for one run and evaluate it."""
    run_dir = out_dir / f"run_{run:03d}"
    if save_artifacts:
        (run_dir / "cmaps").mkdir(parents=True, exist_ok=True)

    eval_pool = eval_data if eval_data is not None else data
    eval_data = [d for d in eval_pool if d.gt_mask is not None]
    if not eval_data:
        raise StageError("eval", "mask required for pixel-level evaluation")

    bags = build_run_bags(data, config, run)
    result: dict = {"run": run, "curves": {}, "signature": None,
                    "postproc": {}, "cmaps": {}}
    for algo in config.algorithms:
        tm, info = train_algorithm(algo, bags, config, run)
        if save_artifacts:
            save_model(tm, run_dir / f"model_{algo}.json")
        cmaps = []
        for d in eval_data:
            cmap = predict_confidence_map(tm, d)
            cmaps.append(cmap)
            if save_artifacts:
                save_cmap(cmap, run_dir / "cmaps" / f"{d.stem}_{algo}.cmap")
        masks = [d.gt_mask for d in eval_data]
        try:
            curve = pooled_roc(cmaps, masks)
        except ValueError as exc:
            raise StageError("eval", str(exc))
        result["curves"][algo] = curve
        result["cmaps"][algo] = cmaps
        result["postproc"][algo] = postproc_metrics(cmaps, masks, config,
                                                    config.postproc_fpr)
        if save_artifacts:
            roc_to_csv(curve, run_dir / f"roc_{algo}.csv")
        if algo == "miace":
            result["signature"] = [v for _, v in report_signature(tm.model)]
    return result


_FORK_STATE: dict = {}


def _forked_run(args):
    run, save = args
    return execute_run(_FORK_STATE["data"], _FORK_STATE["config"], run,
                       _FORK_STATE["out"], save,
                       eval_data=_FORK_STATE["eval_data"])


def run_experiment(config: PipelineConfig,
                   data: list[ImageData] | None = None,
                   eval_data: list[ImageData] | None = None,
                   save_artifacts: bool = True) -> dict:
    """Execute the full multi-run experiment; returns per-run results.

    Bags come from config.manifest; pixel evaluation uses
    config.eval_manifest when set (held-out protocol), otherwise the
    training images.  Artifacts land under config.out_dir; a
    ``.partial`` marker is left behind when an experiment aborts
    mid-way.
    """
    if config.runs < 1:
        raise StageError("config", "runs must be >= 1")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".partial"
    marker.touch()

    try:
        if data is None:
            data = featurize_manifest(config.manifest, config)
        if eval_data is None and config.eval_manifest:
            if config.eval_manifest == config.manifest:
                eval_data = data
            else:
                eval_data = featurize_manifest(config.eval_manifest, config)

        workers = config.resolved_workers()
        run_indices = list(range(config.runs))
        if workers > 1 and config.runs > 1:
            import multiprocessing as mp

            _FORK_STATE.update(data=data, config=config, out=out,
                               eval_data=eval_data)
            try:
                with mp.get_context("fork").Pool(min(workers, config.runs)) as pool:
                    results = pool.map(
                        _forked_run, [(r, save_artifacts) for r in run_indices])
            finally:
                _FORK_STATE.clear()
        else:
            results = [
                execute_run(data, config, r, out, save_artifacts,
                            eval_data=eval_data)
                for r in run_indices
            ]

        results.sort(key=lambda r: r["run"])
        curves_by_algo = {
            algo: [r["curves"][algo] for r in results]
            for algo in config.algorithms
        }

        if save_artifacts:
            config.to_json(out / "config.json")
            if config.runs >= 2:
                agg = aggregate_runs(curves_by_algo)
                aggregate_to_csv(agg, out / "aggregate.csv")
            _write_postproc_csv(results, config, out / "postproc.csv")
            from . import plots

            for algo in config.algorithms:
                plots.plot_roc_runs(curves_by_algo[algo], algo,
                                    out / f"roc_{algo}.png")
            plots.plot_roc_comparison(curves_by_algo, out / "roc_comparison.png")
            signatures = [r["signature"] for r in results if r["signature"]]
            if signatures:
                sig = np.array(signatures)
                named = [list(zip(FEATURE_NAMES, row)) for row in sig]
                signature_csv(named, out / "signatures_miace.csv")
                plots.plot_signatures(sig, out / "signatures_miace.png")
    except Exception:
        raise
    else:
        marker.unlink(missing_ok=True)
    return {"runs": results, "curves": curves_by_algo}


def _write_postproc_csv(results: list[dict], config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write("run,algorithm,target_fpr,threshold,raw_tpr,raw_fpr,"
                 "filtered_tpr,filtered_fpr\n")
        for r in results:
            for algo in config.algorithms:
                p = r["postproc"][algo]
                fh.write(
                    f"{r['run']},{algo},{config.postproc_fpr!r},{p['threshold']!r},"
                    f"{p['raw_tpr']!r},{p['raw_fpr']!r},{p['filtered_tpr']!r},"
                    f"{p['filtered_fpr']!r}\n")


# ---------------------------------------------------------------------------
# hyperparameter sweep (miSVM F-score grid)
# ---------------------------------------------------------------------------

def default_sweep_grid():
    """The published tuning grid: 5 gamma x 6 C values (exponent step 4)."""
    gammas = [2.0 ** e for e in range(-15, 4, 4)]
    cs = [2.0 ** e for e in range(-5, 16, 4)]
    return gammas, cs


def sweep_misvm(config: PipelineConfig, val_manifest: str | None = None,
                gammas=None, cs=None, target_fpr: float = 0.03) -> dict:
    """Train miSVM per grid cell, score pixel F1 on the validation set at
    the target-FPR threshold, and flag the argmax cell."""
    g_list, c_list = default_sweep_grid()
    gammas = list(gammas) if gammas is not None else g_list
    cs = list(cs) if cs is not None else c_list

    train_data = featurize_manifest(config.manifest, config)
    val_data = (featurize_manifest(val_manifest, config)
                if val_manifest and val_manifest != config.manifest
                else train_data)
    val_eval = [d for d in val_data if d.gt_mask is not None]
    if not val_eval:
        raise StageError("sweep", "mask required on the validation set")

    bags = build_run_bags(train_data, config, run=0)
    cells = []
    best = (-1.0, None)
    for c in cs:
        for gamma in gammas:
            cell_cfg = replace(config, svm_c=c, svm_gamma=gamma)
            tm, _ = train_algorithm("misvm", bags, cell_cfg, run=0)
            cmaps = [predict_confidence_map(tm, d) for d in val_eval]
            masks = [d.gt_mask for d in val_eval]
            theta = select_threshold_for_fpr(cmaps, masks, target_fpr)
            from .evaluation import f_score

            scores = [
                f_score(binarize(cm, theta), gt) for cm, gt in zip(cmaps, masks)
            ]
            tp = sum(int((binarize(cm, theta) & np.asarray(gt, bool)).sum())
                     for cm, gt in zip(cmaps, masks))
            fp = sum(int((binarize(cm, theta) & ~np.asarray(gt, bool)).sum())
                     for cm, gt in zip(cmaps, masks))
            fn = sum(int((~binarize(cm, theta) & np.asarray(gt, bool)).sum())
                     for cm, gt in zip(cmaps, masks))
            pooled_f = 2.0 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
            cells.append({"C": c, "gamma": gamma, "f_score": pooled_f})
            if pooled_f > best[0]:
                best = (pooled_f, (c, gamma))
    for cell in cells:
        cell["best"] = int((cell["C"], cell["gamma"]) == best[1])
    return {"cells": cells, "best": best[1], "target_fpr": target_fpr}


def sweep_to_csv(sweep: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write("C,gamma,f_score,best\n")
        for cell in sweep["cells"]:
            fh.write(f"{cell['C']!r},{cell['gamma']!r},{cell['f_score']!r},"
                     f"{cell['best']}\n")
