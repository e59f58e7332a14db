"""Frequency-specific supervised tasks built from spectral bins."""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .graph import Graph
from .spectral import FrequencyRanges, SpectralBins
from .theory import NCLMatrix, discretize

BENCH_FRACTIONS = (0.6, 0.2, 0.2)
# 4:1:1 ratio; the listed 80/20/20 split does not sum to one
REGRESSION_FRACTIONS = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0)


class TaskError(ValueError):
    pass


class DegenerateTaskWarning(UserWarning):
    """All nodes share a single class label."""


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return int(self.train.sum()), int(self.val.sum()), int(self.test.sum())


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


@dataclass(frozen=True, eq=False)
class RegressionTask:
    features: np.ndarray
    target: np.ndarray
    feature_stats: Standardization
    target_stats: Standardization
    masks: SplitMasks
    input_range: tuple
    target_range: str
    raw_features: np.ndarray
    raw_target: np.ndarray

    loss_kind = "mse"

    @property
    def out_dim(self) -> int:
        return 1

    @property
    def y(self) -> np.ndarray:
        return self.target[:, None]


@dataclass(frozen=True, eq=False)
class ClassificationTask:
    features: np.ndarray
    labels: NCLMatrix
    bin_index: int
    masks: SplitMasks
    mode: str
    degenerate: bool = False
    feature_stats: Standardization | None = field(default=None, repr=False)

    loss_kind = "ce"

    @property
    def out_dim(self) -> int:
        return self.labels.num_classes

    @property
    def y(self) -> np.ndarray:
        return self.labels.labels


Task = Union[RegressionTask, ClassificationTask]


def make_splits(n: int, fractions: Sequence[float] = BENCH_FRACTIONS, seed: int = 0) -> SplitMasks:
    """Seeded node permutation cut by floor(train*n) and floor(val*n)."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise TaskError(f"split fractions must be three positive numbers summing to 1, got {fr}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fr[0] * n + 1e-9))
    n_val = int(np.floor(fr[1] * n + 1e-9))
    masks = []
    for lo, hi in ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)):
        m = np.zeros(n, dtype=bool)
        m[perm[lo:hi]] = True
        m.flags.writeable = False
        masks.append(m)
    if any(not m.any() for m in masks):
        raise TaskError(f"split of {n} nodes by {fr} leaves an empty mask")
    return SplitMasks(*masks, seed=seed)


def standardize(x, constant: str = "error") -> tuple[np.ndarray, Standardization]:
    """Zero mean, unit population standard deviation, per column over all nodes.

    ``constant="zero"`` centres near-constant columns instead of raising
    (they become all-zero with scale 1).
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    flat = scale <= 1e-12
    if np.any(flat):
        if constant != "zero":
            raise TaskError("cannot standardize a near-constant column")
        scale = np.where(flat, 1.0, scale)
    return (x - mean) / scale, Standardization(mean, scale)


def destandardize(z, stats: Standardization) -> np.ndarray:
    return stats.invert(np.asarray(z, dtype=np.float64))


def _range_tags(tags) -> tuple:
    if isinstance(tags, str):
        return (tags,)
    return tuple(tags)


def make_regression_task(
    bins: SpectralBins,
    ranges: FrequencyRanges,
    input_range,
    target_range: str,
    seed: int = 0,
    fractions: Sequence[float] = REGRESSION_FRACTIONS,
) -> RegressionTask:
    """Target: mean of the target range's bin means. Features: the input range's bin means."""
    inputs = _range_tags(input_range)
    if target_range in inputs:
        raise TaskError("input and target frequency ranges must be disjoint")
    target_bins = ranges[target_range]
    input_bins = [b for tag in inputs for b in ranges[tag]]
    if not target_bins or not input_bins:
        raise TaskError("empty frequency range")
    raw_x = np.stack([bins.bin_mean[b] for b in input_bins], axis=1)
    raw_y = np.mean([bins.bin_mean[b] for b in target_bins], axis=0)
    x, xs = standardize(raw_x)
    y, ys = standardize(raw_y)
    masks = make_splits(raw_x.shape[0], fractions, seed)
    return RegressionTask(
        features=x,
        target=y,
        feature_stats=xs,
        target_stats=ys,
        masks=masks,
        input_range=inputs,
        target_range=target_range,
        raw_features=raw_x,
        raw_target=raw_y,
    )


def make_classification_task(
    g: Graph,
    bins: SpectralBins,
    bin_index: int,
    num_classes: int = 5,
    seed: int = 0,
    mode: str = "maxabs_rescale",
    fractions: Sequence[float] = BENCH_FRACTIONS,
) -> ClassificationTask:
    """Labels from discretizing the bin's mean eigenvector; graph features as input.

    Graphs without features get one-hot identity features.
    """
    if not 0 <= bin_index < bins.num_bins or bins.is_empty(bin_index):
        raise TaskError(f"bin {bin_index} is empty or out of range")
    labels = discretize(bins.bin_mean[bin_index], num_classes, mode)
    degenerate = np.unique(labels.labels).size < 2
    if degenerate:
        warnings.warn(
            f"bin {bin_index}: every node falls into one class", DegenerateTaskWarning, stacklevel=2
        )
    raw = g.features if g.features is not None else np.eye(g.n)
    x, stats = standardize(raw, constant="zero")
    return ClassificationTask(
        features=x,
        labels=labels,
        bin_index=int(bin_index),
        masks=make_splits(g.n, fractions, seed),
        mode=mode,
        degenerate=bool(degenerate),
        feature_stats=stats,
    )


def _stats_json(s: Standardization) -> dict:
    return {"mean": np.atleast_1d(s.mean).tolist(), "scale": np.atleast_1d(s.scale).tolist()}


def task_manifest(task: Task, graph: Graph) -> dict:
    """JSON-ready description sufficient to regenerate ``task``."""
    m = task.masks
    out = {
        "graph_hash": graph.fingerprint(),
        "seed": m.seed,
        "mask_sizes": list(m.sizes()),
        "mask_fractions": [s / graph.n for s in m.sizes()],
    }
    if isinstance(task, ClassificationTask):
        out.update(
            kind="classification",
            bin_index=task.bin_index,
            num_classes=task.labels.num_classes,
            mode=task.mode,
            degenerate=task.degenerate,
            label_counts=np.bincount(task.labels.labels, minlength=task.labels.num_classes).tolist(),
            feature_stats=_stats_json(task.feature_stats),
        )
    else:
        out.update(
            kind="regression",
            input_range=list(task.input_range),
            target_range=task.target_range,
            feature_stats=_stats_json(task.feature_stats),
            target_stats=_stats_json(task.target_stats),
        )
    body = json.dumps(out, sort_keys=True).encode()
    out["manifest_hash"] = hashlib.sha256(body).hexdigest()
    return out
