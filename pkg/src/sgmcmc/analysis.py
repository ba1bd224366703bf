"""Reference densities, diagnostics and CSV output.

All functions here are deterministic given their inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .targets import TargetModel

__all__ = [
    "KL_SMOOTHING",
    "CoverageError",
    "ReferenceDensity",
    "SummaryRow",
    "format_value",
    "hitting_time",
    "kl_estimate",
    "mode_mass",
    "replicate_variance",
    "round_trip_summary",
    "write_csv",
    "write_summary_csv",
]

KL_SMOOTHING = 1e-8


class CoverageError(ValueError):
    """Samples fall outside the grid of a reference density."""


@dataclass(frozen=True)
class ReferenceDensity:
    """A density discretised on a regular grid of cells.

    ``edges`` holds one array of cell edges per dimension and ``density`` the
    normalised density at the cell centres, so ``cell_mass`` sums to one.
    ``normalization`` is the integral of the unnormalised density that was
    divided out.
    """

    edges: tuple
    density: np.ndarray
    normalization: float

    def __post_init__(self) -> None:
        if np.any(self.density < 0):
            raise ValueError("density must be non-negative")
        if abs(self.cell_mass.sum() - 1.0) > 1e-6:
            raise ValueError("reference density is not normalised")

    @property
    def cell_volume(self) -> float:
        return float(np.prod([e[1] - e[0] for e in self.edges]))

    @property
    def cell_mass(self) -> np.ndarray:
        return self.density * self.cell_volume

    @property
    def centres(self) -> tuple:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @classmethod
    def from_model(
        cls,
        model: TargetModel,
        tau: float = 1.0,
        bounds: Sequence[tuple[float, float]] = ((-4.0, 4.0), (-4.0, 4.0)),
        cells: int = 200,
    ) -> "ReferenceDensity":
        """Discretise ``exp(-U / tau)`` on ``cells`` cells per axis over ``bounds``."""
        if len(bounds) != model.domain_dim:
            raise ValueError("one (low, high) pair per dimension is required")
        edges = tuple(np.linspace(lo, hi, cells + 1) for lo, hi in bounds)
        mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
        mesh = np.meshgrid(*mids, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        logd = -model.energy(pts) / tau
        top = logd.max()
        raw = np.exp(logd - top).reshape((cells,) * model.domain_dim)
        vol = float(np.prod([e[1] - e[0] for e in edges]))
        z = raw.sum() * vol
        return cls(edges, raw / z, float(z * math.exp(top)))


def mode_mass(samples, boundaries: Sequence[float]) -> np.ndarray:
    """Fraction of one-dimensional samples in each cell cut by ``boundaries``.

    Cell ``i`` holds values in ``[b_{i-1}, b_i)`` with open outer ends.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    b = np.asarray(boundaries, dtype=float)
    if np.any(np.diff(b) <= 0):
        raise ValueError("boundaries must be strictly increasing")
    cell = np.searchsorted(b, x, side="right")
    return np.bincount(cell, minlength=b.size + 1) / x.size


def kl_estimate(samples, reference: ReferenceDensity, max_outside: float = 0.0) -> float:
    """KL divergence of the sample histogram from ``reference`` on its grid.

    Both the empirical cell frequencies and the reference cell masses get
    ``KL_SMOOTHING`` added per cell and are renormalised.  Raises
    :class:`CoverageError` when more than ``max_outside`` of the samples lie
    outside the grid; the tolerated ones are discarded.
    """
    x = np.asarray(samples, dtype=float)
    d = len(reference.edges)
    x = x.reshape(-1, d)
    if x.shape[0] == 0:
        raise ValueError("no samples")
    inside = np.ones(x.shape[0], dtype=bool)
    for j, e in enumerate(reference.edges):
        inside &= (x[:, j] >= e[0]) & (x[:, j] <= e[-1])
    outside = 1.0 - inside.mean()
    if outside > max_outside:
        raise CoverageError(f"{outside:.2%} of the samples lie outside the reference grid")
    hist, _ = np.histogramdd(x[inside], bins=reference.edges)
    p = hist / hist.sum() + KL_SMOOTHING
    p /= p.sum()
    q = reference.cell_mass + KL_SMOOTHING
    q /= q.sum()
    return float(max(0.0, np.sum(p * np.log(p / q))))


def hitting_time(energies, u_min: float, rho: float) -> Optional[int]:
    """First index with energy at or below ``u_min + rho``; ``None`` if never."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    e = np.asarray(energies, dtype=float).ravel()
    hits = np.flatnonzero(e <= u_min + rho)
    return int(hits[0]) if hits.size else None


def replicate_variance(values) -> float:
    """Unbiased variance across replications (axis 0), averaged over components."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 0 or v.shape[0] < 2:
        raise ValueError("need at least two replications")
    return float(np.mean(v.reshape(v.shape[0], -1).var(axis=0, ddof=1)))


def round_trip_summary(counts, iterations: int) -> dict:
    """Total round trips and the rate per 1000 iterations from per-particle counts."""
    c = np.asarray(counts)
    total = int(c.sum())
    return {"round_trips": total, "per_1000_iterations": 1000.0 * total / max(iterations, 1)}


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    """Stable text for CSV cells: ``repr`` for floats, ``str`` otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a CSV with a header row and ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


@dataclass(frozen=True)
class SummaryRow:
    metric: str
    value: float
    stderr: Optional[float] = None
    replications: int = 1


def write_summary_csv(path, rows: Iterable[SummaryRow]) -> Path:
    return write_csv(
        path,
        ["metric", "value", "stderr", "replications"],
        ((r.metric, r.value, r.stderr, r.replications) for r in rows),
    )
