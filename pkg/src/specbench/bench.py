"""The benchmark protocol: per-bin sweeps, accuracy curves, AUAC and rankings."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .graph import Graph
from .models import (
    MAIN_LAYERS,
    MAIN_TRAIN,
    PRELIM_LAYERS,
    PRELIM_TRAIN,
    ModelConfig,
    Propagation,
    TrainConfig,
    evaluate,
    predict,
    train,
)
from .spectral import (
    SpectralBasis,
    SpectralBins,
    FrequencyRanges,
    bin_eigenvectors,
    binned_energy,
    energy_distribution,
    frequency_thirds,
    graph_basis,
    split_thirds,
)
from .tasks import BENCH_FRACTIONS, DegenerateTaskWarning, make_classification_task, make_regression_task
from .theory import NCLMatrix, discretize

SCHEMA_VERSION = 1
RANGES = ("full", "low", "mid", "high")


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    bin_width: float = 0.1
    num_classes: int = 5
    mode: str = "maxabs_rescale"
    fractions: tuple = BENCH_FRACTIONS
    runs: int = 3
    base_seed: int = 0
    layers: int = MAIN_LAYERS
    hidden: int = 64
    cheb_order: int = 2
    train: TrainConfig = MAIN_TRAIN

    def to_json(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    def digest(self) -> str:
        return config_hash(self.to_json())


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 63-bit seed from ``base_seed`` and any JSON-serializable keys."""
    h = hashlib.sha256(json.dumps([int(base_seed), *parts]).encode()).digest()
    return int.from_bytes(h[:8], "little") & (2**63 - 1)


# --- spectral preparation ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class PreparedDataset:
    name: str
    graph: Graph
    basis: SpectralBasis
    bins: SpectralBins
    ranges: Optional[FrequencyRanges]

    def range_of(self, b: int) -> Optional[str]:
        if self.ranges is None:
            return None
        for tag in ("low", "mid", "high"):
            if b in self.ranges[tag]:
                return tag
        return None


def prepare(name: str, graph: Graph, bin_width: float = 0.1) -> PreparedDataset:
    basis = graph_basis(graph)
    bins = bin_eigenvectors(basis, bin_width)
    ranges = frequency_thirds(bins) if bins.nonempty().size >= 3 else None
    return PreparedDataset(name, graph, basis, bins, ranges)


# --- sweep ------------------------------------------------------------------

def _bin_labels(ds: PreparedDataset, b: int, protocol: ProtocolConfig) -> NCLMatrix:
    return discretize(ds.bins.bin_mean[b], protocol.num_classes, protocol.mode)


def _run_cell(ds: PreparedDataset, prop: Propagation, model: str, b: int, run: int,
              protocol: ProtocolConfig) -> dict:
    split_seed = derive_seed(protocol.base_seed, "split", b, run)
    seed = derive_seed(protocol.base_seed, model, b, run)
    rec = {
        "kind": "result",
        "dataset": ds.name,
        "model": model,
        "layers": protocol.layers,
        "bin_index": int(b),
        "bin_center": float(ds.bins.centers[b]),
        "frequency_range": ds.range_of(b),
        "run": run,
        "seed": seed,
        "split_seed": split_seed,
        "test_accuracy": None,
        "flags": [],
        "config_hash": protocol.digest(),
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTaskWarning)
            task = make_classification_task(
                ds.graph, ds.bins, b, protocol.num_classes, split_seed, protocol.mode, protocol.fractions
            )
        cfg = ModelConfig(
            model, task.features.shape[1], task.out_dim, protocol.layers, protocol.hidden, protocol.cheb_order
        )
        result = train(cfg, prop, task, protocol.train, seed)
        rec["test_accuracy"] = evaluate(cfg, result.params, prop, task, task.masks.test)
    except Exception as exc:  # one failed cell must not sink the sweep
        rec["flags"] = [f"failed: {type(exc).__name__}: {exc}"]
    return rec


def _skip_record(ds: PreparedDataset, model: str, b: int, protocol: ProtocolConfig) -> dict:
    return {
        "kind": "result",
        "dataset": ds.name,
        "model": model,
        "layers": protocol.layers,
        "bin_index": int(b),
        "bin_center": float(ds.bins.centers[b]),
        "frequency_range": ds.range_of(b),
        "run": None,
        "seed": None,
        "split_seed": None,
        "test_accuracy": None,
        "flags": ["degenerate"],
        "config_hash": protocol.digest(),
    }


_WORKER: dict = {}


def _worker_init(datasets, protocol):
    _WORKER["datasets"] = {d.name: d for d in datasets}
    _WORKER["props"] = {d.name: Propagation(d.graph) for d in datasets}
    _WORKER["protocol"] = protocol


def _worker_cell(args):
    name, model, b, run = args
    return _run_cell(
        _WORKER["datasets"][name], _WORKER["props"][name], model, b, run, _WORKER["protocol"]
    )


def plan_cells(datasets: Sequence[PreparedDataset], models: Sequence[str], protocol: ProtocolConfig):
    """Ordered cells; skip records stand in for degenerate bins."""
    out = []
    for ds in datasets:
        for model in models:
            for b in ds.bins.nonempty():
                b = int(b)
                if np.unique(_bin_labels(ds, b, protocol).labels).size < 2:
                    out.append(("skip", ds, model, b, None))
                    continue
                for run in range(protocol.runs):
                    out.append(("run", ds, model, b, run))
    return out


def run_benchmark(
    datasets: Sequence[PreparedDataset],
    models: Sequence[str],
    protocol: ProtocolConfig = ProtocolConfig(),
    workers: int = 1,
    on_record=None,
) -> list[dict]:
    """Train and test every (dataset, model, non-empty bin, run) cell.

    Records come back in plan order whatever ``workers`` is, so the output
    is identical for sequential and parallel runs.
    """
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise BenchError("dataset names must be unique")
    cells = plan_cells(datasets, models, protocol)
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    if workers <= 1:
        props = {d.name: Propagation(d.graph) for d in datasets}
        for kind, ds, model, b, run in cells:
            if kind == "skip":
                emit(_skip_record(ds, model, b, protocol))
            else:
                emit(_run_cell(ds, props[ds.name], model, b, run, protocol))
        return records

    jobs = [(ds.name, model, b, run) for kind, ds, model, b, run in cells if kind == "run"]
    with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(list(datasets), protocol)) as ex:
        done = iter(ex.map(_worker_cell, jobs, chunksize=1))
        for kind, ds, model, b, run in cells:
            emit(_skip_record(ds, model, b, protocol) if kind == "skip" else next(done))
    return records


# --- results store ------------------------------------------------------------

def store_header(protocol: ProtocolConfig, datasets: Sequence[PreparedDataset], models: Sequence[str],
                 extra: Optional[dict] = None) -> dict:
    head = {
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config_hash": protocol.digest(),
        "protocol": protocol.to_json(),
        "models": list(models),
        "datasets": {d.name: d.graph.fingerprint() for d in datasets},
    }
    if extra:
        head.update(extra)
    return head


def dump_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=False)


class ResultsStore:
    """Append-only JSON-lines file; the first line is a header record."""

    def __init__(self, path):
        self.path = Path(path)

    def create(self, header: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(dump_record(header) + "\n")

    def append(self, rec: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(dump_record(rec) + "\n")

    def read(self) -> tuple[dict, list[dict]]:
        if not self.path.exists():
            raise BenchError(f"no results store at {self.path}")
        lines = [json.loads(s) for s in self.path.read_text().splitlines() if s.strip()]
        if not lines:
            raise BenchError(f"{self.path}: no records")
        if lines[0].get("kind") != "header":
            raise BenchError(f"{self.path}: missing header record")
        header = lines[0]
        if header.get("schema_version") != SCHEMA_VERSION:
            raise BenchError(
                f"{self.path}: schema version {header.get('schema_version')} != {SCHEMA_VERSION}"
            )
        return header, lines[1:]


# --- curves and scores ----------------------------------------------------------

@dataclass(frozen=True)
class AccuracyCurve:
    dataset: str
    model: str
    bin_indices: tuple
    bin_centers: tuple
    mean_acc: tuple
    std_acc: tuple
    runs: int
    ranges: tuple = ()
    gaps: tuple = ()
    layers: Optional[int] = None

    def __len__(self) -> int:
        return len(self.bin_centers)

    def segments(self) -> list[list[int]]:
        """Point indices grouped so that no degenerate bin falls inside a group."""
        segs: list[list[int]] = []
        for i, b in enumerate(self.bin_indices):
            if segs and not any(self.bin_indices[i - 1] < g < b for g in self.gaps):
                segs[-1].append(i)
            else:
                segs.append([i])
        return segs


def accuracy_curve(records: Iterable[dict], model: str, dataset: str,
                   layers: Optional[int] = None) -> AccuracyCurve:
    """Per-bin mean and population std of test accuracy; degenerate bins become gaps."""
    by_bin: dict = defaultdict(list)
    centers, tags, gaps = {}, {}, set()
    for r in records:
        if r.get("kind", "result") != "result" or r["model"] != model or r["dataset"] != dataset:
            continue
        if layers is not None and r.get("layers") != layers:
            continue
        b = r["bin_index"]
        if "degenerate" in r["flags"]:
            gaps.add(b)
            continue
        if r["flags"] or r["test_accuracy"] is None:
            continue
        by_bin[b].append(r["test_accuracy"])
        centers[b] = r["bin_center"]
        tags[b] = r.get("frequency_range")
    if not by_bin:
        raise BenchError(f"no valid bins for model {model!r} on dataset {dataset!r}")
    order = sorted(by_bin)
    acc = [np.asarray(by_bin[b], dtype=np.float64) for b in order]
    return AccuracyCurve(
        dataset=dataset,
        model=model,
        bin_indices=tuple(order),
        bin_centers=tuple(centers[b] for b in order),
        mean_acc=tuple(float(a.mean()) for a in acc),
        std_acc=tuple(float(a.std()) for a in acc),
        runs=min(a.size for a in acc),
        ranges=tuple(tags[b] for b in order),
        gaps=tuple(sorted(gaps)),
        layers=layers,
    )


@dataclass(frozen=True)
class AUACScore:
    value: float
    range: str
    model: str
    dataset: str


def _select(curve: AccuracyCurve, rng) -> list[int]:
    if rng == "full":
        return list(range(len(curve)))
    if rng in ("low", "mid", "high"):
        if any(t is None for t in curve.ranges) or not curve.ranges:
            # no spectral tags recorded: split the curve's own points
            low, mid, high = split_thirds(list(range(len(curve))))
            return list({"low": low, "mid": mid, "high": high}[rng])
        return [i for i, t in enumerate(curve.ranges) if t == rng]
    lo, hi = rng
    return [i for i, c in enumerate(curve.bin_centers) if lo <= c <= hi]


def normalized_auac(curve: AccuracyCurve, rng="full") -> AUACScore:
    """Trapezoid area under the curve over the selected centers, divided by the
    area of the constant-1 curve over the same centers.

    ``rng`` is ``"full"``, ``"low"``, ``"mid"``, ``"high"`` or a (lo, hi)
    frequency interval.
    """
    idx = _select(curve, rng)
    if len(idx) < 2:
        raise BenchError(f"need at least 2 curve points in range {rng!r}, have {len(idx)}")
    x = np.asarray([curve.bin_centers[i] for i in idx], dtype=np.float64)
    y = np.asarray([curve.mean_acc[i] for i in idx], dtype=np.float64)
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    total = math.fsum(w)
    if total <= 0:
        raise BenchError("selected curve points share one abscissa")
    # weighted mean written relative to y[0] so constant curves come back exactly
    value = float(y[0] + math.fsum(w * (y - y[0])) / total)
    value = min(max(value, float(y.min())), float(y.max()))
    tag = rng if isinstance(rng, str) else f"{rng[0]:g}-{rng[1]:g}"
    return AUACScore(value, tag, curve.model, curve.dataset)


def is_v_shaped(curve: AccuracyCurve, margin: float = 0.05) -> bool:
    """Either spectral end beats the worst middle-third bin by ``margin``."""
    mid = _select(curve, "mid")
    if not mid:
        raise BenchError("curve has no middle-third points")
    ends = max(curve.mean_acc[0], curve.mean_acc[-1])
    return bool(ends >= min(curve.mean_acc[i] for i in mid) + margin)


@dataclass(frozen=True)
class RankingTable:
    models: tuple
    datasets: tuple
    ranks: Mapping  # dataset -> {model: rank}
    avg_rank: Mapping
    std_rank: Mapping

    def order(self, dataset: Optional[str] = None) -> list[str]:
        """Models best first, by dataset rank or by average rank (name breaks ties)."""
        key = self.ranks[dataset] if dataset is not None else self.avg_rank
        return sorted(self.models, key=lambda m: (key[m], m))


def rank_models(scores: Iterable[AUACScore]) -> RankingTable:
    """Rank 1 = highest score per dataset; ties share the mean position."""
    table: dict = defaultdict(dict)
    for s in scores:
        table[s.dataset][s.model] = s.value
    if not table:
        raise BenchError("no scores to rank")
    models = sorted({m for row in table.values() for m in row})
    datasets = sorted(table)
    ranks = {}
    for d in datasets:
        missing = [m for m in models if m not in table[d]]
        if missing:
            raise BenchError(f"dataset {d!r} has no score for {missing}")
        r = rankdata([-table[d][m] for m in models], method="average")
        ranks[d] = {m: float(x) for m, x in zip(models, r)}
    avg = {m: float(np.mean([ranks[d][m] for d in datasets])) for m in models}
    std = {m: float(np.std([ranks[d][m] for d in datasets])) for m in models}
    return RankingTable(tuple(models), tuple(datasets), ranks, avg, std)


def kendall_tau_distance(r1: Sequence, r2: Sequence) -> int:
    """Number of item pairs ordered differently by two rankings (merge-sort count)."""
    r1, r2 = list(r1), list(r2)
    if len(set(r1)) != len(r1) or len(set(r2)) != len(r2):
        raise BenchError("rankings must not repeat items")
    if set(r1) != set(r2):
        raise BenchError("rankings must cover the same items")
    pos = {item: i for i, item in enumerate(r2)}
    seq = [pos[item] for item in r1]

    def count(a: list) -> tuple[list, int]:
        if len(a) <= 1:
            return a, 0
        mid = len(a) // 2
        left, x = count(a[:mid])
        right, y = count(a[mid:])
        merged, inv, i, j = [], x + y, 0, 0
        while i < len(left) and j < len(right):
            if left[i] <= right[j]:
                merged.append(left[i])
                i += 1
            else:
                merged.append(right[j])
                inv += len(left) - i
                j += 1
        merged += left[i:] + right[j:]
        return merged, inv

    return count(seq)[1]


def normalized_kendall_tau_distance(r1: Sequence, r2: Sequence) -> float:
    m = len(r1)
    if m < 2:
        return 0.0
    return kendall_tau_distance(r1, r2) / (m * (m - 1) / 2)


# --- case study ------------------------------------------------------------------

def dominant_label_third(ds: PreparedDataset, labels: np.ndarray, train_mask: np.ndarray,
                         num_classes: Optional[int] = None) -> str:
    """Frequency third holding most binned energy of the training-node label signal.

    Each class column of the one-hot label matrix (zero outside the train
    mask) contributes its binned energy distribution; the third with the
    largest summed energy wins.
    """
    if ds.ranges is None:
        raise BenchError("dataset has fewer than 3 non-empty bins")
    labels = np.asarray(labels)
    k = int(num_classes or labels.max() + 1)
    total = np.zeros(ds.bins.num_bins)
    for c in range(k):
        col = ((labels == c) & train_mask).astype(np.float64)
        if col.any():
            total += binned_energy(energy_distribution(col, ds.basis), ds.basis, ds.bins)
    mass = {tag: float(total[list(ds.ranges[tag])].sum()) for tag in ("low", "mid", "high")}
    return max(("low", "mid", "high"), key=lambda t: (mass[t], -("low", "mid", "high").index(t)))


# --- frequency recovery ----------------------------------------------------------

@dataclass(frozen=True)
class EnergyComparison:
    bin_centers: tuple
    input: tuple
    target: tuple
    output: tuple
    ranges: dict
    tags: dict = field(default_factory=dict)

    def range_mass(self, series: str, tag: str) -> float:
        vals = getattr(self, series)
        return math.fsum(vals[b] for b in self.ranges[tag])

    def to_json(self) -> dict:
        d = asdict(self)
        d["masses"] = {
            s: {t: self.range_mass(s, t) for t in ("low", "mid", "high")}
            for s in ("input", "target", "output")
        }
        return d


DIRECTIONS = {"low->high": (("low",), "high"), "high->low": (("high",), "low")}


def run_frequency_recovery(
    graph: Graph,
    model: str = "gcn",
    direction: str = "low->high",
    train_config: TrainConfig = PRELIM_TRAIN,
    layers: int = PRELIM_LAYERS,
    hidden: int = 64,
    bin_width: float = 0.1,
    seed: int = 0,
    dataset: Optional[PreparedDataset] = None,
) -> EnergyComparison:
    """Regress a target from one frequency third using inputs from another.

    Returns binned energies of the mean input column, the target, and the
    destandardized model output over all nodes.
    """
    if direction not in DIRECTIONS:
        raise BenchError(f"direction must be one of {sorted(DIRECTIONS)}")
    ds = dataset or prepare(graph.name, graph, bin_width)
    if ds.ranges is None:
        raise BenchError("frequency recovery needs at least 3 non-empty bins")
    inputs, target = DIRECTIONS[direction]
    task = make_regression_task(ds.bins, ds.ranges, inputs, target, derive_seed(seed, "split"))
    cfg = ModelConfig(model, task.features.shape[1], 1, layers, hidden)
    prop = Propagation(ds.graph)
    result = train(cfg, prop, task, train_config, derive_seed(seed, model, direction))
    out = task.target_stats.invert(predict(cfg, result.params, prop, task.features)[:, 0])

    def be(v):
        return tuple(float(x) for x in binned_energy(energy_distribution(v, ds.basis), ds.basis, ds.bins))

    return EnergyComparison(
        bin_centers=tuple(float(c) for c in ds.bins.centers),
        input=be(task.raw_features.mean(axis=1)),
        target=be(task.raw_target),
        output=be(out),
        ranges=ds.ranges.as_dict(),
        tags={
            "dataset": ds.name,
            "model": model,
            "direction": direction,
            "layers": layers,
            "epochs": train_config.epochs,
            "seed": seed,
            "final_train_loss": result.losses[-1] if result.losses else None,
            "test_mse": evaluate(cfg, result.params, prop, task, task.masks.test),
        },
    )


# --- parameter study ---------------------------------------------------------------

def run_parameter_study(
    datasets: Sequence[PreparedDataset],
    models: Sequence[str],
    depths: Sequence[int] = (2, 3, 4),
    protocol: ProtocolConfig = ProtocolConfig(),
    workers: int = 1,
) -> tuple[dict, list[dict]]:
    """Repeat the sweep per depth; returns ({depth: [curves]}, all records)."""
    curves: dict = {}
    records: list[dict] = []
    for depth in depths:
        recs = run_benchmark(datasets, models, replace(protocol, layers=int(depth)), workers)
        records += recs
        curves[int(depth)] = [
            accuracy_curve(recs, m, d.name, layers=int(depth)) for d in datasets for m in models
        ]
    return curves, records
