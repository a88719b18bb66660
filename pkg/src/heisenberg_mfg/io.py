"""File outputs: summary key-value text, CSV artifacts and value-grid archives."""

from __future__ import annotations

import ast
import csv
import os
from typing import Iterable

import numpy as np

from .hjb import HJBConfig, ValueGrid
from .measures import EmpiricalMeasure
from .transport import MeasureFlow, PathEnsemble, density_snapshot

__all__ = [
    "write_summary",
    "read_summary",
    "write_rows",
    "write_flow_snapshots",
    "write_ensemble",
    "write_grid_csv",
    "save_value_grid",
    "load_value_grid",
    "read_samples",
    "write_samples",
    "write_report",
]


def write_summary(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in data.items():
            fh.write(f"{k} = {v!r}\n")


def read_summary(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" not in line:
                continue
            k, v = line.split("=", 1)
            try:
                out[k.strip()] = ast.literal_eval(v.strip())
            except (ValueError, SyntaxError):
                out[k.strip()] = v.strip()
    return out


def write_rows(path: str, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_samples(path: str, samples: np.ndarray) -> None:
    write_rows(path, ["x1", "x2", "x3"], np.asarray(samples, dtype=float))


def read_samples(path: str) -> np.ndarray:
    """Read an ``x1,x2,x3`` CSV (header optional) into an ``(N, 3)`` array."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=None, dtype=float)
    except OSError as exc:
        raise ValueError(f"cannot read samples: {exc}") from exc
    data = np.atleast_2d(data)
    data = data[~np.all(np.isnan(data), axis=1)]
    if data.ndim != 2 or data.shape[1] != 3 or np.isnan(data).any():
        raise ValueError(f"{path}: expected three numeric columns")
    return data


def write_flow_snapshots(flow: MeasureFlow, idx, outdir: str, bins: int = 8) -> list[str]:
    """One density CSV per selected snapshot: bin centre, mass and density."""
    names = []
    for k in idx:
        snap = density_snapshot(flow[k], bins)
        c = snap.centers.reshape(-1, 3)
        rows = np.column_stack([c, snap.mass.ravel(), snap.density.ravel()])
        name = os.path.join(outdir, f"flow_t{k:04d}.csv")
        write_rows(name, ["x1", "x2", "x3", "mass", "density"], rows)
        names.append(name)
    return names


def write_ensemble(ens: PathEnsemble, path: str, n_particles: int | None = None) -> None:
    """Trajectory dump with columns ``particle, t, x1, x2, x3``."""
    n = ens.N if n_particles is None else min(n_particles, ens.N)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", "t", "x1", "x2", "x3"])
        for i in range(n):
            for k, t in enumerate(ens.times):
                x = ens.paths[i, k]
                w.writerow([i, repr(float(t)), repr(float(x[0])), repr(float(x[1])), repr(float(x[2]))])


def write_grid_csv(u: ValueGrid, path: str, slices=None) -> None:
    """Grid snapshot rows ``x1, x2, x3, t, u`` for the selected time slices."""
    slices = [0, u.M // 2, u.M] if slices is None else slices
    lat = u.lattice().reshape(-1, 3)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "x3", "t", "u"])
        for k in slices:
            t = u.times[k]
            for x, v in zip(lat, u.values[k].ravel()):
                w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(x[2])), repr(float(t)),
                            repr(float(v))])


def save_value_grid(u: ValueGrid, path: str) -> None:
    c = u.cfg
    np.savez_compressed(
        path,
        values=u.values,
        wrap=u.wrap,
        mode=c.mode,
        n=np.asarray(c.n),
        M=c.M,
        T=c.T,
        eps=c.eps,
        control_bound=c.control_bound,
        n_directions=c.n_directions,
        radii=np.asarray(c.radii),
        vertical=np.asarray(c.vertical),
        lower=np.asarray(c.lower),
        upper=np.asarray(c.upper),
    )


def load_value_grid(path: str) -> ValueGrid:
    try:
        d = np.load(path)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read value grid: {exc}") from exc
    cfg = HJBConfig(
        mode=str(d["mode"]),
        n=tuple(int(v) for v in d["n"]),
        M=int(d["M"]),
        T=float(d["T"]),
        eps=float(d["eps"]),
        control_bound=float(d["control_bound"]),
        n_directions=int(d["n_directions"]),
        radii=tuple(float(v) for v in d["radii"]),
        vertical=tuple(float(v) for v in d["vertical"]),
        lower=tuple(float(v) for v in d["lower"]),
        upper=tuple(float(v) for v in d["upper"]),
    )
    return ValueGrid(cfg, d["values"], int(d["wrap"]))


def write_report(report, outdir: str) -> None:
    """Summary, residuals, archived iterates, density snapshots, trajectories and diagnostics."""
    os.makedirs(outdir, exist_ok=True)
    write_summary(report.summary(), os.path.join(outdir, "summary.txt"))
    write_rows(
        os.path.join(outdir, "residuals.csv"),
        ["iter", "r_k"],
        [(i + 1, r) for i, r in enumerate(report.residuals)],
    )
    np.savez_compressed(
        os.path.join(outdir, "snapshots.npz"),
        history=report.history,
        snapshot_index=report.snapshot_index,
        periodic=report.flow.periodic,
        metric_atoms=report.config.metric_atoms,
    )
    write_flow_snapshots(report.flow, report.snapshot_index, outdir)
    write_ensemble(report.ensemble, os.path.join(outdir, "ensemble.csv"),
                   report.config.dump_particles)
    diag = [
        ("lipschitz_x", report.lipschitz[0]),
        ("lipschitz_t", report.lipschitz[1]),
        ("semiconcavity", report.semiconcavity),
        ("holder_C", report.holder_C),
        ("gap_mean", report.gaps.mean),
        ("gap_p95", report.gaps.p95),
        ("gap_max", report.gaps.max),
        ("gap_min", report.gaps.min),
        ("exits", report.exits),
    ]
    write_rows(os.path.join(outdir, "diagnostics.csv"), ["name", "value"], diag)
