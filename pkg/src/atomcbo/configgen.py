"""
Random initial configurations and distance-distribution fitting.

Configurations are drawn by sequential rejection in a square box; the
distribution of their pairwise distances is summarized by a Gaussian
kernel density estimate, and the box parameters that best reproduce a
target distance density are found by a grid search on the
Kullback-Leibler divergence.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .hardware import Configuration

__all__ = [
    "BoxSampler",
    "DistanceDensity",
    "FitResult",
    "InfeasibleBox",
    "sample_configuration",
    "sample_configurations",
    "sample_distances",
    "pairwise_distances",
    "silverman_bandwidth",
    "estimate_density",
    "kl_divergence",
    "fit_box",
    "DEFAULT_R_MIN",
    "DEFAULT_R_MAX",
]

DEFAULT_R_MIN = 1.0
DEFAULT_R_MAX = 2.5
DENSITY_FLOOR = 1e-12
MIN_BANDWIDTH = 1e-3


class InfeasibleBox(RuntimeError):
    """An atom could not be placed within the resample budget."""


@dataclass(frozen=True)
class BoxSampler:
    """Atoms uniform in ``[-r_max, r_max]^2`` at least ``r_min`` apart."""

    r_max: float = DEFAULT_R_MAX
    r_min: float = DEFAULT_R_MIN
    m: int = 3
    max_resamples: int = 10_000

    def __post_init__(self):
        if not self.r_max > 0 or self.r_min < 0:
            raise ValueError("need r_max > 0 and r_min >= 0")
        if self.m >= 2 and self.r_min >= 2 * math.sqrt(2) * self.r_max:
            raise ValueError("r_min exceeds the box diagonal; no placement is possible")
        if self.m < 1 or self.max_resamples < 1:
            raise ValueError("need m >= 1 and max_resamples >= 1")


def sample_configurations(s: BoxSampler, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent configurations as an ``(n, m, 2)`` array.

    Every configuration is built atom by atom: the first atom is uniform in
    the box, each later atom is redrawn until it lies at least ``r_min``
    from all previously placed atoms. Configurations are processed in
    parallel, which does not change their distribution.
    """
    out = np.empty((n, s.m, 2))
    if n == 0:
        return out
    out[:, 0] = rng.uniform(-s.r_max, s.r_max, size=(n, 2))
    for atom in range(1, s.m):
        pending = np.arange(n)
        for _ in range(s.max_resamples):
            cand = rng.uniform(-s.r_max, s.r_max, size=(pending.size, 2))
            dist = np.linalg.norm(out[pending, :atom] - cand[:, None, :], axis=-1)
            ok = np.all(dist >= s.r_min, axis=1)
            out[pending[ok], atom] = cand[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
        else:
            raise InfeasibleBox(
                f"atom {atom} could not be placed after {s.max_resamples} draws "
                f"(r_min={s.r_min}, r_max={s.r_max}, m={s.m})"
            )
    return out


def sample_configuration(s: BoxSampler, rng: np.random.Generator) -> Configuration:
    return Configuration(sample_configurations(s, 1, rng)[0])


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Pairwise ``i < j`` distances of one ``(m, 2)`` or many ``(n, m, 2)`` configurations."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 2:
        positions = positions[None]
    m = positions.shape[1]
    i, j = np.triu_indices(m, k=1)
    return np.linalg.norm(positions[:, i] - positions[:, j], axis=-1).ravel()


def sample_distances(s: BoxSampler, n_distances: int, rng: np.random.Generator) -> np.ndarray:
    """At least ``n_distances`` pooled pairwise distances from fresh configurations."""
    pairs = s.m * (s.m - 1) // 2
    if pairs == 0:
        raise ValueError("a single atom has no pairwise distances")
    n_configs = -(-n_distances // pairs)
    return pairwise_distances(sample_configurations(s, n_configs, rng))


def silverman_bandwidth(samples: np.ndarray) -> float:
    """``0.9 min(std, IQR / 1.34) n^(-1/5)``, floored for degenerate samples."""
    samples = np.asarray(samples, dtype=float)
    std = np.std(samples, ddof=1) if samples.size > 1 else 0.0
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) or std
    h = 0.9 * spread * samples.size ** (-0.2)
    return float(max(h, MIN_BANDWIDTH * max(1.0, float(np.mean(np.abs(samples))))))


@dataclass(frozen=True, eq=False)
class DistanceDensity:
    """Kernel density estimate of positive distances on a uniform grid.

    The Gaussian kernel is reflected at zero so no mass leaks onto negative
    distances.
    """

    samples: np.ndarray
    bandwidth: float
    grid: np.ndarray
    density: np.ndarray
    kernel: str = "gaussian-reflected"
    bandwidth_rule: str = "silverman"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return _reflected_kde(self.samples, self.bandwidth, np.asarray(x, dtype=float))

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["distance", "density"])
            writer.writerows(zip(self.grid.tolist(), self.density.tolist()))


def _reflected_kde(samples: np.ndarray, h: float, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    norm = 1.0 / (samples.size * h * math.sqrt(2 * math.pi))
    for start in range(0, samples.size, chunk):
        s = samples[start:start + chunk]
        u = (x[:, None] - s[None, :]) / h
        v = (x[:, None] + s[None, :]) / h
        out += np.exp(-0.5 * u * u).sum(axis=1) + np.exp(-0.5 * v * v).sum(axis=1)
    out *= norm
    out[x < 0] = 0.0
    return out


def estimate_density(distances: Sequence[float], bandwidth: float | None = None,
                     grid_points: int | None = None,
                     grid_max: float | None = None) -> DistanceDensity:
    """Gaussian KDE of distances on ``[0, max + 3 h]`` (or ``[0, grid_max]``).

    By default the grid has at least 256 points and a spacing of at most a
    quarter bandwidth (capped at 20000 points).
    """
    samples = np.sort(np.asarray(distances, dtype=float).ravel())
    if samples.size < 2:
        raise ValueError("need at least two distance samples")
    if np.any(samples <= 0) or not np.all(np.isfinite(samples)):
        raise ValueError("distances must be positive and finite")
    h = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    upper = samples[-1] + 3 * h if grid_max is None else grid_max
    if grid_points is None:
        grid_points = int(min(20_000, max(256, math.ceil(4 * upper / h) + 1)))
    grid = np.linspace(0.0, upper, grid_points)
    return DistanceDensity(samples, h, grid, _reflected_kde(samples, h, grid))


def kl_divergence(p: np.ndarray, q: np.ndarray, grid: np.ndarray) -> float:
    """``int p log(p / q)`` by the trapezoid rule, both floored at 1e-12."""
    p = np.maximum(np.asarray(p, dtype=float), DENSITY_FLOOR)
    q = np.maximum(np.asarray(q, dtype=float), DENSITY_FLOOR)
    return float(np.trapezoid(p * np.log(p / q), grid))


@dataclass(frozen=True)
class FitResult:
    sampler: BoxSampler
    kl: float
    table: np.ndarray = field(repr=False)  # rows: r_min, r_max, kl (nan if infeasible)

    def to_dict(self) -> dict:
        return {"r_min": self.sampler.r_min, "r_max": self.sampler.r_max, "kl": self.kl,
                "kernel": "gaussian-reflected", "bandwidth_rule": "silverman"}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def candidate_density(target: DistanceDensity, sampler: BoxSampler, n_distances: int,
                      seed: int) -> np.ndarray:
    """Density induced by ``sampler`` on the target's grid."""
    samples = sample_distances(sampler, n_distances, np.random.default_rng(seed))
    samples = samples[samples > 0]
    return _reflected_kde(samples, silverman_bandwidth(samples), target.grid)


def fit_box(
    target: DistanceDensity,
    m: int,
    r_min_grid: Sequence[float] | None = None,
    r_max_grid: Sequence[float] | None = None,
    n_distances: int = 20_000,
    seed: int = 0,
    max_resamples: int = 1000,
) -> FitResult:
    """Box parameters whose distance density is closest to ``target``.

    Every ``(r_min, r_max)`` grid pair is scored by ``KL(target || candidate)``
    with the candidate density estimated from ``n_distances`` Monte Carlo
    distances drawn with the same ``seed``. Pairs that cannot be sampled
    are skipped. Ties go to the smaller ``r_max``.
    """
    if m < 2:
        raise ValueError("fitting needs at least two atoms")
    r_min_grid = np.linspace(0.2, 2.0, 20) if r_min_grid is None else np.asarray(r_min_grid, float)
    r_max_grid = np.linspace(0.5, 4.0, 20) if r_max_grid is None else np.asarray(r_max_grid, float)
    rows = []
    best = None
    for r_max in r_max_grid:
        for r_min in r_min_grid:
            try:
                sampler = BoxSampler(float(r_max), float(r_min), m, max_resamples)
                q = candidate_density(target, sampler, n_distances, seed)
            except (ValueError, InfeasibleBox):
                rows.append((r_min, r_max, np.nan))
                continue
            kl = kl_divergence(target.density, q, target.grid)
            rows.append((r_min, r_max, kl))
            key = (kl, sampler.r_max, sampler.r_min)
            if best is None or key < best[0]:
                best = (key, sampler)
    if best is None:
        raise InfeasibleBox("no feasible (r_min, r_max) pair on the search grid")
    (kl, _, _), sampler = best
    return FitResult(_with_resamples(sampler), kl, np.array(rows))


def _with_resamples(s: BoxSampler, max_resamples: int = 10_000) -> BoxSampler:
    return BoxSampler(s.r_max, s.r_min, s.m, max_resamples)
