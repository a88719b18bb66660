"""Empirical probability measures and the Wasserstein-1 distance."""

from __future__ import annotations

import math

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .hgroup import canonical, euclidean_distance_matrix, torus_distance_matrix

__all__ = ["EmpiricalMeasure", "wasserstein1", "resample", "second_moment", "MAX_ASSIGNMENT_ATOMS"]

MAX_ASSIGNMENT_ATOMS = 512


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted cloud of atoms in ℍ¹.

    In periodic mode the samples are stored as their canonical cell
    representatives, which identifies the measure with one on the torus.
    """

    samples: np.ndarray
    weights: np.ndarray = field(default=None)
    periodic: bool = False

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.shape[-1] != 3 or s.ndim != 2:
            raise ValueError(f"samples must have shape (N, 3), got {s.shape}")
        if s.shape[0] == 0:
            raise ValueError("empty measure")
        if self.weights is None:
            w = np.full(s.shape[0], 1.0 / s.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (s.shape[0],):
                raise ValueError("weights must have one entry per sample")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if self.periodic:
            s = canonical(s)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples


def resample(mu: EmpiricalMeasure, N: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """Systematic resampling to ``N`` atoms of weight ``1/N``.

    The source order is kept, so two measures with aligned atoms resampled
    with the same generator state keep their atoms aligned.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    u = (rng.random() + np.arange(N)) / N
    cdf = np.cumsum(mu.weights)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, len(mu) - 1)
    return EmpiricalMeasure(mu.samples[idx], None, mu.periodic)


def _cost_matrix(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    if metric == "torus":
        return torus_distance_matrix(a, b)
    if metric == "euclidean":
        return euclidean_distance_matrix(a, b)
    raise ValueError(f"unknown metric {metric!r}")


def wasserstein1(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: str = "torus",
    max_atoms: int = MAX_ASSIGNMENT_ATOMS,
    rng: np.random.Generator | None = None,
) -> float:
    """Exact optimal-assignment Wasserstein-1 distance between two clouds.

    Clouds with uniform weights and a common size up to ``max_atoms`` are
    compared directly; anything else is first resampled to a common size
    ``min(max(len), max_atoms)``. Both resamplings share one uniform offset,
    so index-aligned clouds stay aligned.
    """
    if len(mu) == 0 or len(nu) == 0:
        raise ValueError("empty measure")
    if not (mu.uniform and nu.uniform and len(mu) == len(nu) and len(mu) <= max_atoms):
        n = min(max(len(mu), len(nu)), max_atoms)
        if rng is None:
            rng = np.random.default_rng(0)
        offset = rng.random()
        mu = resample(mu, n, _FixedOffset(offset))
        nu = resample(nu, n, _FixedOffset(offset))
    cost = _cost_matrix(mu.samples, nu.samples, metric)
    rows, cols = linear_sum_assignment(cost)
    # correctly rounded sum, so the result does not depend on argument order
    return math.fsum(cost[rows, cols]) / len(rows)


class _FixedOffset:
    """Stand-in generator returning a fixed uniform draw."""

    def __init__(self, value: float):
        self.value = value

    def random(self) -> float:
        return self.value


def second_moment(mu: EmpiricalMeasure) -> float:
    """Euclidean second moment ``Σ w |x|²``."""
    return float(mu.weights @ np.sum(mu.samples**2, axis=1))
