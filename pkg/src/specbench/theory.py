"""Discretization of node signals into class labels and its deviation bounds.

The functions here check, by sampling, that replacing a Laplacian
eigenvector with any unit vector sharing its class-label matrix moves the
energy distribution by a bounded amount.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralBasis, energy_distribution

MODES = ("maxabs_rescale", "paper_literal")


class DiscretizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NCLMatrix:
    """Node-class-label matrix: integer labels plus their one-hot form."""

    labels: np.ndarray
    num_classes: int

    @property
    def onehot(self) -> np.ndarray:
        m = np.zeros((self.labels.shape[0], self.num_classes))
        m[np.arange(self.labels.shape[0]), self.labels] = 1.0
        return m

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, NCLMatrix)
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class DeviationBound:
    n: int
    k: int
    paper_bound: float
    euclidean_bound: float


def class_edges(num_classes: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, num_classes + 1)


def _assign(v: np.ndarray, num_classes: int) -> np.ndarray:
    edges = class_edges(num_classes)
    labels = np.searchsorted(edges, v, side="right") - 1
    return np.clip(labels, 0, num_classes - 1).astype(np.int64)


def discretize(v, num_classes: int = 5, mode: str = "maxabs_rescale") -> NCLMatrix:
    """Split [-1, 1] into ``num_classes`` equal intervals and label each entry.

    Intervals are half-open except the last, which includes 1. In
    ``maxabs_rescale`` mode the vector is first divided by its largest
    absolute entry.
    """
    if num_classes < 2:
        raise DiscretizationError(f"need at least 2 classes, got {num_classes}")
    if mode not in MODES:
        raise DiscretizationError(f"unknown discretization mode {mode!r}")
    v = np.asarray(v, dtype=np.float64)
    if mode == "maxabs_rescale":
        scale = float(np.max(np.abs(v))) if v.size else 0.0
        if scale == 0.0:
            raise DiscretizationError("cannot rescale a zero vector")
        v = v / scale
    elif v.size and (v.min() < -1.0 or v.max() > 1.0):
        raise DiscretizationError("entries must lie in [-1, 1] in paper_literal mode")
    return NCLMatrix(_assign(v, num_classes), int(num_classes))


def lipschitz_gap(v1, v2, basis: SpectralBasis) -> tuple[float, float]:
    """Both sides of ``||e(v1) - e(v2)|| <= 2 ||v1 - v2||`` for unit vectors."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    for v in (v1, v2):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError("lipschitz_gap expects unit vectors")
    lhs = float(np.linalg.norm(energy_distribution(v1, basis) - energy_distribution(v2, basis)))
    rhs = 2.0 * float(np.linalg.norm(v1 - v2))
    return lhs, rhs


def paper_bound(n: int, k: int) -> float:
    return 2.0 * (4.0 * n / k**2) ** (1.0 / n)


def euclidean_bound(n: int, k: int) -> float:
    # Lipschitz constant 2 times the side-(2/k) hypercube diagonal
    return 4.0 * math.sqrt(n) / k


def ncl_deviation_bound(n: int, k: int) -> DeviationBound:
    if n < 2 or k < 1:
        raise ValueError(f"need n >= 2 and k >= 1, got n={n}, k={k}")
    return DeviationBound(n, k, paper_bound(n, k), euclidean_bound(n, k))


def min_segments_for_tolerance(n: int, eps: float) -> int:
    """Smallest segment count ``k`` with ``paper_bound(n, k) <= eps``."""
    if eps <= 0:
        raise ValueError("tolerance must be positive")
    log_k = math.log(2.0) + 0.5 * math.log(n) + 0.5 * n * math.log(2.0 / eps)
    if log_k > math.log(2**63 - 1):
        raise OverflowError(f"segment count for n={n}, eps={eps} exceeds a 64-bit integer")
    k = max(1, math.ceil(math.exp(log_k)))
    # the closed form is evaluated in floating point; settle k exactly
    while k > 1 and paper_bound(n, k - 1) <= eps:
        k -= 1
    while paper_bound(n, k) > eps:
        k += 1
    if k > 2**63 - 1:
        raise OverflowError(f"segment count for n={n}, eps={eps} exceeds a 64-bit integer")
    return k


def max_angle_bound(n: int, k: int) -> float:
    """Chord-angle expression from the centre-angle argument."""
    return 2.0 * math.asin(min(1.0, 0.5 * (1.0 / n) ** (1.0 / n) * (2.0 / k) ** (2.0 / n)))


def k0_expressions(n: int) -> dict:
    """The two threshold expressions for the angular-variation result."""
    c = math.pi * math.exp(1.0 / math.e)
    return {
        "k0_statement": 2.0 * (2.0 / c) ** (n / 2.0),
        "k0_proof": 2.0 * (c / 2.0) ** (n / 2.0),
    }


@dataclass(frozen=True)
class OracleResult:
    max_observed_deviation: float
    max_observed_angle: float
    accepted: int
    proposed: int


def edf_deviation_oracle(
    v,
    k: int,
    basis: SpectralBasis,
    samples: int = 1000,
    seed: int = 0,
    radius: float = 1.0,
    max_proposals: int = 2_000_000,
) -> OracleResult:
    """Sample unit vectors sharing ``v``'s label matrix and measure the spread.

    Each proposal moves ``v`` towards a uniform point of its label cell by a
    step fraction drawn uniformly from (0, radius], then renormalizes; it is
    kept only if the label matrix is unchanged (labels use ``k`` classes,
    paper-literal). Mixing step lengths keeps acceptance workable in thin
    cells while long steps still reach the far side of the cell.
    """
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("oracle expects a unit vector")
    ref = discretize(v, k, "paper_literal")
    edges = class_edges(k)
    lo, hi = edges[ref.labels], edges[ref.labels + 1]
    e_ref = energy_distribution(v, basis)
    rng = np.random.default_rng(seed)

    max_dev = 0.0
    max_ang = 0.0
    accepted = proposed = 0
    batch = max(64, samples)
    while accepted < samples and proposed < max_proposals:
        x = lo + (hi - lo) * rng.random((batch, v.size))
        step = radius * (1.0 - rng.random((batch, 1)))
        p = v + step * (x - v)
        norms = np.linalg.norm(p, axis=1, keepdims=True)
        u = p / norms
        proposed += batch
        ok = np.all(_assign(u, k) == ref.labels, axis=1)
        for row in u[ok][: samples - accepted]:
            dev = float(np.linalg.norm(energy_distribution(row, basis) - e_ref))
            ang = 2.0 * math.asin(min(1.0, 0.5 * float(np.linalg.norm(row - v))))
            max_dev = max(max_dev, dev)
            max_ang = max(max_ang, ang)
            accepted += 1
    if accepted < min(10, samples):
        raise RuntimeError(
            f"only {accepted} of {proposed} proposals stayed in the label cell; "
            "cell-sphere intersection too thin"
        )
    return OracleResult(max_dev, max_ang, accepted, proposed)


def theory_report(n: int, k: int, basis: SpectralBasis, samples: int = 1000, seed: int = 0,
                  eigen_indices=None) -> dict:
    """Run the oracle on eigenvectors of ``basis`` and collect the bounds."""
    bound = ncl_deviation_bound(n, k)
    idx = range(basis.n) if eigen_indices is None else eigen_indices
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(basis.n)
    max_dev = max_ang = 0.0
    accepted = proposed = 0
    for i in idx:
        child_seed = int(children[i].generate_state(1)[0])
        r = edf_deviation_oracle(basis.eigenvectors[:, i], k, basis, samples, child_seed)
        max_dev = max(max_dev, r.max_observed_deviation)
        max_ang = max(max_ang, r.max_observed_angle)
        accepted += r.accepted
        proposed += r.proposed
    return {
        "n": n,
        "k": k,
        "paper_bound": bound.paper_bound,
        "euclidean_bound": bound.euclidean_bound,
        "angle_bound": max_angle_bound(n, k),
        **k0_expressions(n),
        "max_observed_deviation": max_dev,
        "max_observed_angle": max_ang,
        "eigenvectors_tested": len(list(idx)),
        "samples_per_eigenvector": samples,
        "accepted": accepted,
        "proposed": proposed,
        "seed": seed,
        "holds_paper_bound": max_dev <= bound.paper_bound,
        "holds_euclidean_bound": max_dev <= bound.euclidean_bound,
    }
