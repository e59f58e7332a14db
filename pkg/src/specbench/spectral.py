"""Laplacian eigendecomposition, frequency binning and energy distributions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import MAX_DENSE_NODES, Graph, GraphError, normalized_laplacian

SIGN_CONVENTION_VERSION = 1
# eigenvalues this close to a bin edge are snapped onto it before binning
EDGE_SNAP_TOL = 1e-9


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return int(self.eigenvalues.shape[0])


@dataclass(frozen=True, eq=False)
class SpectralBins:
    """Fixed-width bins over [0, 2].

    ``membership[i]`` is the bin of eigenvalue ``i``. ``bin_mean[b]`` is the
    mean eigenvector of bin ``b`` or ``None`` when the bin is empty.
    """

    width: float
    edges: np.ndarray
    membership: np.ndarray
    counts: np.ndarray
    bin_mean: tuple

    @property
    def num_bins(self) -> int:
        return int(self.counts.shape[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def nonempty(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)

    def is_empty(self, b: int) -> bool:
        return self.counts[b] == 0


@dataclass(frozen=True)
class FrequencyRanges:
    low: tuple
    mid: tuple
    high: tuple

    def __getitem__(self, tag: str) -> tuple:
        if tag not in ("low", "mid", "high"):
            raise KeyError(f"unknown frequency range {tag!r}")
        return getattr(self, tag)

    def as_dict(self) -> dict:
        return {"low": list(self.low), "mid": list(self.mid), "high": list(self.high)}


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # argmax returns the first maximal index, giving the lowest-index tie break
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs[None, :]


def eigendecompose(lap: np.ndarray) -> SpectralBasis:
    """Full symmetric eigendecomposition with a deterministic sign per column.

    Each eigenvector's largest-magnitude entry is made positive.
    """
    lap = np.asarray(lap, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {lap.shape}")
    if lap.shape[0] > MAX_DENSE_NODES:
        raise GraphError(f"dense eigendecomposition capped at {MAX_DENSE_NODES} nodes")
    try:
        w, u = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        asym = float(np.max(np.abs(lap - lap.T)))
        raise SpectralError(
            f"eigensolver failed on {lap.shape[0]}x{lap.shape[0]} matrix "
            f"(max asymmetry {asym:.3e}, finite={bool(np.isfinite(lap).all())}): {exc}"
        ) from exc
    u = _fix_signs(u)
    w.flags.writeable = False
    u.flags.writeable = False
    return SpectralBasis(w, u)


def graph_basis(g: Graph) -> SpectralBasis:
    return eigendecompose(normalized_laplacian(g))


def bin_eigenvectors(basis: SpectralBasis, width: float = 0.1) -> SpectralBins:
    """Group eigenvectors into ``[edge_k, edge_k+1)`` bins, last bin closed."""
    if not 0.0 < width <= 2.0:
        raise SpectralError(f"bin width must lie in (0, 2], got {width}")
    nbins = max(1, math.ceil(2.0 / width - 1e-9))
    edges = width * np.arange(nbins + 1, dtype=np.float64)
    lam = basis.eigenvalues.copy()
    nearest = np.clip(np.rint(lam / width), 0, nbins)
    snap = np.abs(lam - edges[nearest.astype(int)]) <= EDGE_SNAP_TOL
    lam[snap] = edges[nearest[snap].astype(int)]
    member = np.clip(np.searchsorted(edges, lam, side="right") - 1, 0, nbins - 1)
    counts = np.bincount(member, minlength=nbins)
    means = []
    for b in range(nbins):
        cols = np.flatnonzero(member == b)
        if cols.size:
            m = basis.eigenvectors[:, cols].mean(axis=1)
            m.flags.writeable = False
            means.append(m)
        else:
            means.append(None)
    edges.flags.writeable = False
    member.flags.writeable = False
    counts.flags.writeable = False
    return SpectralBins(float(width), edges, member, counts, tuple(means))


def split_thirds(items: Sequence) -> tuple[tuple, tuple, tuple]:
    """Split into three contiguous groups; the remainder goes to the last groups."""
    c = len(items)
    base, r = divmod(c, 3)
    sizes = [base + (1 if g >= 3 - r else 0) for g in range(3)]
    out, start = [], 0
    for s in sizes:
        out.append(tuple(items[start:start + s]))
        start += s
    return out[0], out[1], out[2]


def frequency_thirds(bins: SpectralBins) -> FrequencyRanges:
    ne = [int(b) for b in bins.nonempty()]
    if len(ne) < 3:
        raise SpectralError(f"need at least 3 non-empty bins, have {len(ne)}")
    return FrequencyRanges(*split_thirds(ne))


def energy_distribution(v: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Squared eigenbasis coefficients of ``v`` divided by ``||v||^2``."""
    v = np.asarray(v, dtype=np.float64)
    norm2 = float(v @ v)
    if norm2 <= 1e-24:
        raise SpectralError("energy distribution undefined for a near-zero vector")
    c = basis.eigenvectors.T @ v
    return (c * c) / norm2


def binned_energy(e: np.ndarray, basis: SpectralBasis, bins: SpectralBins) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (basis.n,) or bins.membership.shape != (basis.n,):
        raise SpectralError("energy vector, basis and bins disagree on dimension")
    return np.bincount(bins.membership, weights=e, minlength=bins.num_bins)


def range_energy(per_bin: np.ndarray, bin_ids: Iterable[int]) -> float:
    return float(np.sum(per_bin[list(bin_ids)]))


# --- basis cache -----------------------------------------------------------

def save_basis(basis: SpectralBasis, graph: Graph, path) -> None:
    """Store a basis with the structural hash of the graph it came from."""
    path = Path(path)
    meta = {
        "graph_hash": graph.fingerprint(include_features=False),
        "sign_convention_version": SIGN_CONVENTION_VERSION,
        "n": basis.n,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            eigenvalues=basis.eigenvalues,
            eigenvectors=basis.eigenvectors,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        )


def load_basis(path, graph: Graph) -> SpectralBasis:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        w, u = z["eigenvalues"], z["eigenvectors"]
    expected = graph.fingerprint(include_features=False)
    if meta.get("graph_hash") != expected:
        raise SpectralError("basis cache was computed for a different graph")
    if meta.get("sign_convention_version") != SIGN_CONVENTION_VERSION:
        raise SpectralError(
            f"basis cache sign convention {meta.get('sign_convention_version')} "
            f"!= {SIGN_CONVENTION_VERSION}"
        )
    w.flags.writeable = False
    u.flags.writeable = False
    return SpectralBasis(w, u)
