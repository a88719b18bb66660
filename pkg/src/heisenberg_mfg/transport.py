"""Lagrangian transport of the population along the optimal synthesis.

Particles drawn from ``m0`` follow the feedback ``α = -D_H u`` with the
field frozen over each time step, so every step is an exact horizontal leg
``x ⊕ (α1 h, α2 h, 0)``. The measure flow is the push-forward of the
empirical path measure by the evaluation maps. The viscous variant adds
``√(2σ) B(x) dW`` with a two-dimensional Brownian motion, which in these
coordinates is again a left translation by the horizontal increment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coupling import CouplingField, CouplingOperator, GaugeKernel, h_convolve_measure
from .hgroup import canonical, psi_N
from .measures import EmpiricalMeasure, wasserstein1

__all__ = [
    "PathEnsemble",
    "MeasureFlow",
    "BoxExitError",
    "TestFunction",
    "DensitySnapshot",
    "horizontal_step",
    "push_forward",
    "sde_step_ensemble",
    "sde_ensemble",
    "step_rng",
    "weak_residual",
    "weak_residual_series",
    "default_test_functions",
    "holder_quarter_check",
    "density_snapshot",
]

MAX_EXIT_FRACTION = 1e-3


class BoxExitError(RuntimeError):
    """Too many particles left the computational box."""


@dataclass
class PathEnsemble:
    """Per-particle arcs on the time grid with their realized controls."""

    times: np.ndarray
    paths: np.ndarray  # (N, K+1, 3), unwrapped
    controls: np.ndarray  # (N, K, 2 or 3)
    eps: float = 0.0
    costs: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    @property
    def starts(self) -> np.ndarray:
        return self.paths[:, 0]

    def snapshot(self, k: int, periodic: bool) -> EmpiricalMeasure:
        """``e_t # η`` at grid time ``k``."""
        return EmpiricalMeasure(self.paths[:, k], None, periodic)


@dataclass
class MeasureFlow:
    """Uniform-weight particle snapshots on a time grid."""

    times: np.ndarray
    samples: np.ndarray  # (S, N, 3); canonical representatives in periodic mode
    periodic: bool
    exits: int = 0

    def __post_init__(self):
        if self.periodic:
            self.samples = canonical(self.samples)

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.samples[k], None, self.periodic)

    def mass(self, k: int) -> float:
        return self[k].mass

    def subset(self, idx: Sequence[int]) -> "MeasureFlow":
        idx = np.asarray(idx)
        return MeasureFlow(self.times[idx], self.samples[idx], self.periodic, self.exits)

    @classmethod
    def from_ensemble(cls, ens: PathEnsemble, periodic: bool, exits: int = 0) -> "MeasureFlow":
        return cls(ens.times.copy(), np.swapaxes(ens.paths, 0, 1).copy(), periodic, exits)


def horizontal_step(x, d, eps: float = 0.0, trunc: float | None = None) -> np.ndarray:
    """Move ``x`` by the control increment ``d`` (already multiplied by the step).

    ``x ⊕ (d1, d2, 0)`` plus ``ε d3`` vertically when ``d`` has three
    components. With ``trunc = N`` the vertical coefficients ``-x2, x1`` are
    replaced by ``-ψ_N(x2), ψ_N(x1)``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if trunc is None:
        c1, c2 = x[..., 0], x[..., 1]
    else:
        c1, c2 = psi_N(x[..., 0], trunc), psi_N(x[..., 1], trunc)
    x3 = x[..., 2] + c1 * d[..., 1] - c2 * d[..., 0]
    if d.shape[-1] == 3 and eps != 0.0:
        x3 = x3 + eps * d[..., 2]
    return np.stack([x[..., 0] + d[..., 0], x[..., 1] + d[..., 1], x3], axis=-1)


def _count_exits(u, paths: np.ndarray) -> int:
    if u.mode == "periodic":
        return 0
    inside = u.in_box(paths)
    return int(np.sum(~np.all(inside, axis=1)))


def push_forward(
    u,
    m0=None,
    N: int | None = None,
    eps: float | None = None,
    *,
    starts: np.ndarray | None = None,
    seed: int = 0,
    trunc: float | None = None,
    max_exit_fraction: float = MAX_EXIT_FRACTION,
) -> tuple[PathEnsemble, MeasureFlow]:
    """Transport ``N`` particles from ``m0`` (or the given ``starts``) along the synthesis.

    Step ``k`` uses the feedback computed from value slice ``k+1``, which is
    the slice the backward scheme minimized against at time ``t_k``.
    """
    eps = u.eps if eps is None else eps
    if starts is None:
        if m0 is None or N is None:
            raise ValueError("need either starts or m0 and N")
        starts = m0.sample(N, np.random.default_rng(seed))
    x = np.array(starts, dtype=float)
    M, h = u.M, u.h
    dim = 3 if eps != 0.0 else 2
    paths = np.empty((x.shape[0], M + 1, 3))
    controls = np.empty((x.shape[0], M, dim))
    paths[:, 0] = x
    for k in range(M):
        a = u.feedback(x, eps=eps, k=k + 1)
        controls[:, k] = a
        x = horizontal_step(x, a * h, eps, trunc)
        paths[:, k + 1] = x
    exits = _count_exits(u, paths)
    if exits > max_exit_fraction * x.shape[0]:
        raise BoxExitError(f"{exits} of {x.shape[0]} particles left the box")
    ens = PathEnsemble(u.times.copy(), paths, controls, eps)
    return ens, MeasureFlow.from_ensemble(ens, u.mode == "periodic", exits)


def step_rng(seed: int, k: int) -> np.random.Generator:
    """Counter-based generator for time step ``k`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k])))


def sde_step_ensemble(
    u,
    sigma: float,
    particles,
    dt: float,
    rng: np.random.Generator,
    *,
    k: int | None = None,
    eps: float | None = None,
    drift: np.ndarray | None = None,
    trunc: float | None = None,
) -> np.ndarray:
    """One Euler-Maruyama step ``Y ⊕ (α dt + √(2σ dt) ξ, 0)``.

    The drift control ``α`` is ``drift`` when given, otherwise the feedback
    of value slice ``k`` (``u=None`` means no drift). The noise ``ξ`` is a
    standard normal with as many components as the control. At ``σ = 0`` no
    noise is drawn and the step is the deterministic one bit for bit.
    """
    if sigma < 0 or not dt > 0:
        raise ValueError("need sigma >= 0 and dt > 0")
    x = np.asarray(particles, dtype=float)
    if eps is None:
        eps = 0.0 if u is None else u.eps
    dim = 3 if eps != 0.0 else 2
    if drift is not None:
        a = np.asarray(drift, dtype=float)
    elif u is not None:
        a = u.feedback(x, eps=eps, k=u.M if k is None else k)
    else:
        a = np.zeros(x.shape[:-1] + (dim,))
    d = a * dt
    if sigma > 0:
        d = d + np.sqrt(2.0 * sigma * dt) * rng.standard_normal(d.shape)
    return horizontal_step(x, d, eps, trunc)


def sde_ensemble(
    u,
    starts: np.ndarray,
    sigma: float,
    seed: int = 0,
    *,
    eps: float | None = None,
    trunc: float | None = None,
    zero_drift: bool = False,
) -> tuple[np.ndarray, MeasureFlow]:
    """Viscous particle system on the grid of ``u``; returns paths and the flow."""
    x = np.array(starts, dtype=float)
    M, h = u.M, u.h
    paths = np.empty((x.shape[0], M + 1, 3))
    paths[:, 0] = x
    eps_ = u.eps if eps is None else eps
    dim = 3 if eps_ != 0.0 else 2
    for k in range(M):
        drift = np.zeros(x.shape[:-1] + (dim,)) if zero_drift else None
        x = sde_step_ensemble(u, sigma, x, h, step_rng(seed, k), k=k + 1, eps=eps_,
                              drift=drift, trunc=trunc)
        paths[:, k + 1] = x
    exits = _count_exits(u, paths)
    flow = MeasureFlow(u.times.copy(), np.swapaxes(paths, 0, 1).copy(), u.mode == "periodic", exits)
    return paths, flow


@dataclass(frozen=True)
class TestFunction:
    """Smooth observable with its horizontal gradient."""

    __test__ = False  # not a pytest class despite the name

    name: str
    value: Callable
    hgrad: Callable


def _trig_test_functions() -> list[TestFunction]:
    tp = 2.0 * np.pi

    def c1(x):
        return np.cos(tp * np.asarray(x)[..., 0])

    def c1g(x):
        x = np.asarray(x)
        return np.stack([-tp * np.sin(tp * x[..., 0]), np.zeros(x.shape[:-1])], axis=-1)

    def s2(x):
        return np.sin(tp * np.asarray(x)[..., 1])

    def s2g(x):
        x = np.asarray(x)
        return np.stack([np.zeros(x.shape[:-1]), tp * np.cos(tp * x[..., 1])], axis=-1)

    return [TestFunction("cos_x1", c1, c1g), TestFunction("sin_x2", s2, s2g)]


def default_test_functions() -> list[TestFunction]:
    """``cos 2πx1``, ``sin 2πx2`` and a periodized gauge bump depending on all coordinates.

    The bump is scaled to unit peak so that the three residuals are comparable.
    """
    k = GaugeKernel(0.3)
    centre = EmpiricalMeasure(np.array([[0.5, 0.5, 0.5]]), periodic=True)
    bump = CouplingField(CouplingOperator(k, "periodic", 1.0 / k.normalization), centre)
    return _trig_test_functions() + [TestFunction("gauge_bump", bump, bump.horizontal_grad)]


def weak_residual_series(
    flow: MeasureFlow, u, test_fns: Sequence[TestFunction] | None = None
) -> np.ndarray:
    """Residuals of ``d/dt ∫ζ dm = -∫ D_H u · D_H ζ dm`` at each time midpoint.

    Returns an array of shape ``(len(test_fns), S-1)``. The time derivative
    is the difference quotient between consecutive snapshots and the right
    side is the average of its values at both ends. Snapshot times must be
    the value-grid times.
    """
    if test_fns is None:
        test_fns = default_test_functions()
    if len(flow) != u.M + 1 or not np.allclose(flow.times, u.times):
        raise ValueError("flow snapshots must sit on the value-grid times")
    h = u.h
    S = len(flow)
    grads = [u.horizontal_gradient(flow.samples[k], k) for k in range(S)]
    out = np.empty((len(test_fns), S - 1))
    for i, z in enumerate(test_fns):
        Z = np.array([np.mean(z.value(flow.samples[k])) for k in range(S)])
        A = np.array([np.mean(np.sum(grads[k] * z.hgrad(flow.samples[k]), axis=-1)) for k in range(S)])
        out[i] = np.abs(np.diff(Z) / h + 0.5 * (A[:-1] + A[1:]))
    return out


def weak_residual(flow: MeasureFlow, u, test_fns: Sequence[TestFunction] | None = None) -> float:
    """Max over test functions and time midpoints of the weak-form residual."""
    return float(weak_residual_series(flow, u, test_fns).max())


def holder_quarter_check(
    flow: MeasureFlow, n_times: int = 9, max_atoms: int = 512, metric: str | None = None
) -> float:
    """Smallest ``C`` with ``d1(m_s, m_t) <= C (t - s)^{1/4}`` over snapshot pairs.

    Uses ``n_times`` evenly spaced snapshots of the flow (at least 8 are
    required) and the exact assignment distance.
    """
    if len(flow) < 8 or n_times < 8:
        raise ValueError("need at least 8 snapshots")
    metric = metric or ("torus" if flow.periodic else "euclidean")
    idx = np.unique(np.rint(np.linspace(0, len(flow) - 1, min(n_times, len(flow)))).astype(int))
    C = 0.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            s, t = flow.times[idx[a]], flow.times[idx[b]]
            d = wasserstein1(flow[idx[a]], flow[idx[b]], metric, max_atoms)
            C = max(C, d / (t - s) ** 0.25)
    return C


@dataclass(frozen=True)
class DensitySnapshot:
    edges: tuple
    mass: np.ndarray
    density: np.ndarray
    centers: np.ndarray = field(repr=False, default=None)


def density_snapshot(
    mu: EmpiricalMeasure,
    bins: int | Sequence[int] = 8,
    kernel: GaugeKernel | None = None,
    lower: Sequence[float] | None = None,
    upper: Sequence[float] | None = None,
) -> DensitySnapshot:
    """Histogram (or gauge-kernel smoothing) of a particle cloud on a regular grid.

    Periodic clouds use the unit cell; otherwise ``lower``/``upper`` (default:
    the bounding box of the samples). ``mass`` holds bin masses, which sum to
    one for the histogram; ``density`` divides by the bin volume.
    """
    nb = np.broadcast_to(np.asarray(bins), (3,)).astype(int)
    if np.any(nb < 1):
        raise ValueError("need at least one bin per axis")
    if mu.periodic:
        lo, hi = np.zeros(3), np.ones(3)
    else:
        lo = np.asarray(lower if lower is not None else mu.samples.min(axis=0), dtype=float)
        hi = np.asarray(upper if upper is not None else mu.samples.max(axis=0), dtype=float)
        hi = np.where(hi > lo, hi, lo + 1.0)
    edges = tuple(np.linspace(lo[i], hi[i], nb[i] + 1) for i in range(3))
    vol = float(np.prod((hi - lo) / nb))
    mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
    centers = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)
    if kernel is None:
        pts = np.clip(mu.samples, lo, np.nextafter(hi, -np.inf))
        mass, _ = np.histogramdd(pts, bins=edges, weights=mu.weights)
        return DensitySnapshot(edges, mass, mass / vol, centers)
    dens = h_convolve_measure(kernel, mu, centers)
    return DensitySnapshot(edges, dens * vol, dens, centers)
