"""Fixed-point driver for the equilibrium and its mild-solution certificate.

Each iteration freezes the current measure flow, computes the couplings,
solves the Hamilton-Jacobi equation backwards, transports the initial
particles along the optimal synthesis (the best response) and mixes the
response into the current flow. Mixing replaces the arcs of a fraction
``θ_k`` of the particles by their best-response arcs, taking the same share
from every earlier response, so every iterate is a uniform path measure whose
initial marginal is the same sample of ``m0``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .config import RunConfig
from .coupling import (
    CouplingField,
    CouplingOperator,
    GaugeKernel,
    default_initial_density,
    weighted_convolution,
)
from .hjb import (
    HJBConfig,
    ValueGrid,
    estimate_lipschitz,
    estimate_semiconcavity,
    lattice_points,
    solve_hjb,
)
from .measures import EmpiricalMeasure, wasserstein1
from .transport import MeasureFlow, PathEnsemble, holder_quarter_check, push_forward

__all__ = [
    "SCHEMA_VERSION",
    "SnapshotCoupling",
    "GapStats",
    "EquilibriumReport",
    "solve_equilibrium",
    "certify_mild",
    "flow_distances",
    "hjb_config",
    "initial_density",
    "coupling_operators",
    "snapshot_residual",
    "residuals_from_history",
]

SCHEMA_VERSION = 1


def hjb_config(cfg: RunConfig) -> HJBConfig:
    return HJBConfig(
        mode=cfg.grid_mode,
        n=cfg.n,
        M=cfg.M,
        T=cfg.T,
        eps=cfg.eps,
        control_bound=cfg.control_bound,
        n_directions=cfg.n_directions,
        radii=cfg.radii,
        lower=cfg.box_lower,
        upper=cfg.box_upper,
    )


def initial_density(cfg: RunConfig):
    which = cfg.mode if cfg.m0 == "default" else cfg.m0
    return default_initial_density(which, cfg.seed)


def coupling_operators(cfg: RunConfig) -> tuple[CouplingOperator, CouplingOperator]:
    k = GaugeKernel(cfg.kernel_eps, cfg.kernel_scaling)
    mode = "periodic" if cfg.periodic_coupling else "nonperiodic"
    return CouplingOperator(k, mode, cfg.strength_F), CouplingOperator(k, mode, cfg.strength_G)


class SnapshotCoupling:
    """Running cost ``F[m_t](x)`` from measure snapshots, linear in time between them."""

    def __init__(self, op: CouplingOperator, times: np.ndarray, clouds: list[np.ndarray]):
        self.op = op
        self.times = np.asarray(times, dtype=float)
        self.fields = [
            CouplingField(op, EmpiricalMeasure(c, None, op.periodic)) for c in clouds
        ]
        self._lattice_cache: dict = {}

    def _bracket(self, t: float) -> tuple[int, float]:
        s = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        w = (t - self.times[s]) / (self.times[s + 1] - self.times[s])
        return int(s), float(np.clip(w, 0.0, 1.0))

    def __call__(self, x, t: float) -> np.ndarray:
        if self.op.strength == 0:
            return np.zeros(np.shape(x)[:-1])
        s, w = self._bracket(t)
        v = self.fields[s](x)
        if w == 0.0:
            return v
        return (1.0 - w) * v + w * self.fields[s + 1](x)

    def snapshot_lattice(self, lattice: np.ndarray) -> np.ndarray:
        key = lattice.shape
        if key not in self._lattice_cache:
            self._lattice_cache[key] = np.stack([f(lattice) for f in self.fields])
        return self._lattice_cache[key]

    def set_snapshot_lattice(self, lattice: np.ndarray, values: np.ndarray) -> None:
        self._lattice_cache[lattice.shape] = values

    def on_lattice(self, lattice: np.ndarray, times: np.ndarray) -> np.ndarray:
        snaps = self.snapshot_lattice(lattice)
        out = np.empty((len(times),) + snaps.shape[1:])
        for i, t in enumerate(times):
            s, w = self._bracket(t)
            out[i] = snaps[s] if w == 0.0 else (1.0 - w) * snaps[s] + w * snaps[s + 1]
        return out


@dataclass
class GapStats:
    mean: float
    p95: float
    max: float
    min: float
    gaps: np.ndarray = field(repr=False)

    def passes(self, floor: float, ceiling: float) -> bool:
        return self.min >= floor and self.p95 <= ceiling


def certify_mild(
    ensemble: PathEnsemble,
    u: ValueGrid,
    F_t: Callable | None,
    G: Callable | None,
    idx: np.ndarray | None = None,
) -> GapStats:
    """Gaps ``J(γ_i, α_i) - u(x_i, 0)`` along realized arcs.

    ``J`` is the discrete cost of the realized piecewise-constant control:
    kinetic term, trapezoid rule for the running cost, terminal cost.
    """
    if len(ensemble.times) != u.M + 1 or not np.allclose(ensemble.times, u.times):
        raise ValueError("ensemble and value grid use different time grids")
    idx = np.arange(ensemble.N) if idx is None else np.asarray(idx)
    paths = ensemble.paths[idx]
    ctrl = ensemble.controls[idx]
    h = u.h
    J = 0.5 * h * np.sum(ctrl**2, axis=(1, 2))
    if F_t is not None:
        fv = np.stack([np.asarray(F_t(paths[:, k], t)) for k, t in enumerate(u.times)], axis=1)
        J += h * (fv.sum(axis=1) - 0.5 * (fv[:, 0] + fv[:, -1]))
    if G is not None:
        J += np.asarray(G(paths[:, -1]))
    gaps = J - u.interpolate(paths[:, 0], 0)
    return GapStats(
        float(gaps.mean()), float(np.percentile(gaps, 95)), float(gaps.max()),
        float(gaps.min()), gaps,
    )


def flow_distances(
    a: MeasureFlow, b: MeasureFlow, idx=None, max_atoms: int = 512, metric: str | None = None
) -> np.ndarray:
    """``d1`` between two flows at each selected snapshot index."""
    metric = metric or ("torus" if (a.periodic or b.periodic) else "euclidean")
    idx = range(len(a)) if idx is None else idx
    return np.array([wasserstein1(a[k], b[k], metric, max_atoms) for k in idx])


@dataclass
class EquilibriumReport:
    config: RunConfig
    residuals: list
    converged: bool
    u: ValueGrid
    flow: MeasureFlow
    ensemble: PathEnsemble
    response: PathEnsemble
    gaps: GapStats
    holder_C: float
    lipschitz: tuple
    semiconcavity: float
    exits: int
    snapshot_index: np.ndarray
    F: SnapshotCoupling = field(repr=False, default=None)
    G: CouplingField = field(repr=False, default=None)
    history: np.ndarray = field(repr=False, default=None)
    schema_version: int = SCHEMA_VERSION

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def monotone(self) -> bool:
        r = np.asarray(self.residuals)
        return bool(np.all(np.diff(r) <= 0))

    @property
    def certified(self) -> bool:
        return self.gaps.passes(self.config.gap_floor, self.config.eps_mild)

    def summary(self) -> dict:
        """Flat key-value view of the report; deterministic given the config."""
        out = {"schema_version": self.schema_version}
        for k, v in asdict(self.config).items():
            out[f"config.{k}"] = v
        out.update(
            {
                "iterations": self.iterations,
                "converged": self.converged,
                "residual_final": self.residuals[-1],
                "residual_monotone": self.monotone,
                "gap_mean": self.gaps.mean,
                "gap_p95": self.gaps.p95,
                "gap_max": self.gaps.max,
                "gap_min": self.gaps.min,
                "certified": self.certified,
                "holder_C": self.holder_C,
                "lipschitz_x": self.lipschitz[0],
                "lipschitz_t": self.lipschitz[1],
                "semiconcavity": self.semiconcavity,
                "exits": self.exits,
                "u_digest": hashlib.sha256(self.u.values.tobytes()).hexdigest(),
                "flow_digest": hashlib.sha256(self.flow.samples.tobytes()).hexdigest(),
            }
        )
        return out


def _subsample(n: int, k: int) -> np.ndarray:
    """``k`` evenly spread indices out of ``n`` (all of them when ``k >= n``)."""
    if k >= n:
        return np.arange(n)
    return np.floor((np.arange(k) + 0.5) * n / k).astype(int)


def _replacement(group: np.ndarray, n_rep: int, rng: np.random.Generator) -> np.ndarray:
    """Indices to hand over to the newest best response.

    Every current group (particles following the same earlier best response)
    gives up a share proportional to its size, so the particle system keeps
    the group proportions of the mixed flow. Largest remainders settle the
    rounding. Members are drawn by a seeded permutation: a regular stride
    would alias with the evenly spaced subsamples used for the coupling and
    the metric.
    """
    labels, counts = np.unique(group, return_counts=True)
    n = group.size
    quota = counts * n_rep / n
    take = np.floor(quota).astype(int)
    short = n_rep - take.sum()
    if short > 0:
        order = np.lexsort((labels, -(quota - take)))
        take[order[:short]] += 1
    out = [rng.permutation(np.flatnonzero(group == g))[:t] for g, t in zip(labels, take) if t]
    return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=int)


class _LatticeConvolutions:
    """Lattice samples of snapshot convolutions, updated only where atoms moved."""

    def __init__(self, op: CouplingOperator, lattice: np.ndarray):
        self.op = op
        self.lattice = lattice
        self.atoms: list | None = None
        self.values: list | None = None

    def _conv(self, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return weighted_convolution(self.op.kernel, atoms, weights, self.lattice, self.op.periodic)

    def update(self, clouds: list[np.ndarray]) -> np.ndarray:
        if self.op.strength == 0:
            return np.zeros((len(clouds),) + self.lattice.shape[:-1])
        n = clouds[0].shape[0]
        w = np.full(n, 1.0 / n)
        if self.atoms is None:
            self.values = [self._conv(c, w) for c in clouds]
        else:
            for s, c in enumerate(clouds):
                moved = np.any(c != self.atoms[s], axis=1)
                if moved.any():
                    both = np.concatenate([c[moved], self.atoms[s][moved]])
                    wm = np.concatenate([w[moved], -w[moved]])
                    self.values[s] = self.values[s] + self._conv(both, wm)
        self.atoms = [c.copy() for c in clouds]
        return self.op.strength * np.stack(self.values)


def snapshot_residual(new: np.ndarray, old: np.ndarray, periodic: bool, max_atoms: int) -> float:
    """``max_t d1`` between two iterates given as ``(snapshots, atoms, 3)`` arrays."""
    metric = "torus" if periodic else "euclidean"
    r = 0.0
    for a, b in zip(new, old):
        d = wasserstein1(EmpiricalMeasure(a, None, periodic), EmpiricalMeasure(b, None, periodic),
                         metric, max_atoms)
        r = max(r, d)
    return r


def residuals_from_history(history: np.ndarray, periodic: bool, max_atoms: int = 512) -> list[float]:
    """Recompute every ``r_k`` from the archived iterates ``history[0..K]``."""
    return [snapshot_residual(history[k], history[k - 1], periodic, max_atoms)
            for k in range(1, len(history))]


def solve_equilibrium(cfg: RunConfig, progress: Callable | None = None) -> EquilibriumReport:
    """Damped best-response iteration on measure flows, then certification.

    ``progress(k, r_k)`` is called after every iteration when given.
    """
    hcfg = hjb_config(cfg)
    m0 = initial_density(cfg)
    starts = m0.sample(cfg.N, np.random.default_rng(cfg.seed))
    periodic = cfg.mode == "periodic"
    opF, opG = coupling_operators(cfg)
    snap = np.rint(np.linspace(0, cfg.M, cfg.n_snapshots)).astype(int)
    times = np.linspace(0.0, cfg.T, cfg.M + 1)
    c_idx = _subsample(cfg.N, cfg.coupling_atoms)
    m_idx = _subsample(cfg.N, cfg.metric_atoms)
    lattice = lattice_points(hcfg)
    lat_F = _LatticeConvolutions(opF, lattice)
    paths = np.repeat(starts[:, None, :], cfg.M + 1, axis=1)
    dim = 3 if cfg.eps != 0.0 else 2
    controls = np.zeros((cfg.N, cfg.M, dim))
    group = np.zeros(cfg.N, dtype=int)
    residuals: list[float] = []
    # metric subsample of every iterate at the snapshot times
    history = [paths[m_idx][:, snap].swapaxes(0, 1).copy()]
    converged = False
    u = ens = F = G = None
    for k in range(1, cfg.max_iters + 1):
        clouds = [paths[c_idx, s] for s in snap]
        F = SnapshotCoupling(opF, times[snap], clouds)
        F.set_snapshot_lattice(lattice, lat_F.update(clouds))
        G = CouplingField(opG, EmpiricalMeasure(clouds[-1], None, opG.periodic))
        if opF.strength != 0 and opG.kernel == opF.kernel and opG.mode == opF.mode:
            # same convolution as the last running-cost snapshot, rescaled
            G_lat = F.snapshot_lattice(lattice)[-1] * (opG.strength / opF.strength)
        else:
            G_lat = G
        u = solve_hjb(F, G_lat, hcfg)
        ens, _ = push_forward(u, starts=starts, trunc=cfg.N_trunc)
        theta = 1.0 / k if cfg.schedule == "fictitious" else (1.0 if k == 1 else cfg.damping)
        n_rep = int(round(theta * cfg.N))
        pick = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, k, 1])))
        rep = _replacement(group, n_rep, pick)
        new_paths = paths.copy()
        new_paths[rep] = ens.paths[rep]
        controls[rep] = ens.controls[rep]
        group[rep] = k
        history.append(new_paths[m_idx][:, snap].swapaxes(0, 1).copy())
        r = snapshot_residual(history[-1], history[-2], periodic, cfg.metric_atoms)
        paths = new_paths
        residuals.append(r)
        if progress is not None:
            progress(k, r)
        if r <= cfg.tol_fp:
            converged = True
            break

    exits = 0 if periodic else int(np.sum(~np.all(u.in_box(paths), axis=1)))
    flow = MeasureFlow(times, np.swapaxes(paths, 0, 1).copy(), periodic, exits)
    ensemble = PathEnsemble(times, paths, controls, cfg.eps)
    cert_idx = _subsample(cfg.N, cfg.certify_particles)
    gaps = certify_mild(ens, u, F, G, cert_idx)
    holder = holder_quarter_check(flow, n_times=max(cfg.n_snapshots, 8), max_atoms=cfg.metric_atoms)
    return EquilibriumReport(
        config=cfg,
        residuals=residuals,
        converged=converged,
        u=u,
        flow=flow,
        ensemble=ensemble,
        response=ens,
        gaps=gaps,
        holder_C=holder,
        lipschitz=estimate_lipschitz(u),
        semiconcavity=estimate_semiconcavity(u, 0),
        exits=flow.exits,
        snapshot_index=snap,
        F=F,
        G=G,
        history=np.stack(history),
    )
