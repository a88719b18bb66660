"""Command-line interface: ``heisenberg-mfg <command> [--config FILE] [--set key=value ...]``.

Commands
    solve        full equilibrium run, writes the report and CSV artifacts
    hjb          one HJB solve against a frozen measure (samples CSV)
    transport    push-forward of m0 along the synthesis of a saved value grid
    sde          viscous particle ensembles for every sigma of the config
    verify       group and convolution identity suites
    wasserstein  d1 between two sample files

Exit codes: 0 success, 1 configuration or input error, 2 a check or
certification failed beyond its tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, config_to_text, load_config
from .coupling import CouplingField
from .equilibrium import coupling_operators, hjb_config, initial_density, solve_equilibrium
from .hjb import lattice_points, solve_hjb
from .io import (
    load_value_grid,
    read_samples,
    save_value_grid,
    write_ensemble,
    write_flow_snapshots,
    write_grid_csv,
    write_report,
    write_rows,
    write_summary,
)
from .measures import EmpiricalMeasure, wasserstein1
from .transport import BoxExitError, holder_quarter_check, push_forward, sde_ensemble, weak_residual
from .verify import run_all

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heisenberg-mfg", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="key-value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
        if out:
            sp.add_argument("--out", default="out", help="output directory (default: out)")
        return sp

    common(sub.add_parser("solve", help="equilibrium run"))
    sp = common(sub.add_parser("hjb", help="single HJB solve"))
    sp.add_argument("--measure", help="samples CSV frozen in time (default: m0 samples)")
    sp = common(sub.add_parser("transport", help="push-forward under a saved grid"))
    sp.add_argument("--grid", required=True, help="value grid .npz written by `hjb`")
    sp = common(sub.add_parser("sde", help="viscous ensembles"))
    sp.add_argument("--grid", help="value grid .npz (default: no drift)")
    sub.add_parser("verify", help="identity suites")
    sp = common(sub.add_parser("wasserstein", help="d1 between two sample files"), out=False)
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--metric", choices=("torus", "euclidean"), help="default from the config mode")
    return p


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args.set))


def _cmd_solve(args, cfg: RunConfig) -> int:
    def progress(k, r):
        print(f"iter {k:3d}  r_k = {r:.6e}", flush=True)

    rep = solve_equilibrium(cfg, progress)
    write_report(rep, args.out)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    s = rep.summary()
    for key in ("iterations", "converged", "residual_final", "residual_monotone",
                "gap_min", "gap_p95", "certified"):
        print(f"{key} = {s[key]}")
    return EXIT_OK if rep.certified else EXIT_CHECK


def _cmd_hjb(args, cfg: RunConfig) -> int:
    hcfg = hjb_config(cfg)
    if args.measure:
        atoms = read_samples(args.measure)
    else:
        atoms = initial_density(cfg).sample(cfg.coupling_atoms, np.random.default_rng(cfg.seed))
    opF, opG = coupling_operators(cfg)
    mu = EmpiricalMeasure(atoms, None, opF.periodic)
    lat = lattice_points(hcfg)
    F = CouplingField(opF, mu)(lat)
    G = CouplingField(opG, mu)(lat)
    u = solve_hjb(F, G, hcfg)
    os.makedirs(args.out, exist_ok=True)
    save_value_grid(u, os.path.join(args.out, "grid.npz"))
    write_grid_csv(u, os.path.join(args.out, "grid.csv"))
    print(f"u(.,0): min {u.values[0].min():.6e}  max {u.values[0].max():.6e}")
    return EXIT_OK


def _cmd_transport(args, cfg: RunConfig) -> int:
    u = load_value_grid(args.grid)
    starts = initial_density(cfg).sample(cfg.N, np.random.default_rng(cfg.seed))
    try:
        ens, flow = push_forward(u, starts=starts, trunc=cfg.N_trunc)
    except BoxExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    os.makedirs(args.out, exist_ok=True)
    write_ensemble(ens, os.path.join(args.out, "ensemble.csv"), cfg.dump_particles)
    snaps = np.rint(np.linspace(0, u.M, min(cfg.n_snapshots, u.M + 1))).astype(int)
    write_flow_snapshots(flow, snaps, args.out)
    res = weak_residual(flow, u) if flow.periodic else float("nan")
    write_summary({"weak_residual": res, "exits": flow.exits, "N": ens.N}, os.path.join(args.out, "summary.txt"))
    print(f"weak residual {res:.3e}, exits {flow.exits}")
    return EXIT_OK


def _cmd_sde(args, cfg: RunConfig) -> int:
    if args.grid:
        u = load_value_grid(args.grid)
    else:
        u = solve_hjb(None, None, hjb_config(cfg))
    starts = initial_density(cfg).sample(cfg.N, np.random.default_rng(cfg.seed))
    rows = []
    for sigma in cfg.sigmas:
        _, flow = sde_ensemble(u, starts, sigma, cfg.seed, trunc=cfg.N_trunc)
        C = holder_quarter_check(flow, max(cfg.n_snapshots, 8), cfg.metric_atoms)
        rows.append((sigma, C, flow.exits))
        print(f"sigma {sigma:g}: Holder-1/4 constant {C:.4f}, exits {flow.exits}")
    os.makedirs(args.out, exist_ok=True)
    write_rows(os.path.join(args.out, "sde.csv"), ["sigma", "holder_C", "exits"], rows)
    return EXIT_OK


def _cmd_verify(args) -> int:
    checks = run_all()
    for c in checks:
        print(c.line())
    n_ok = sum(c.passed for c in checks)
    print(f"{n_ok}/{len(checks)} checks passed")
    return EXIT_OK if n_ok == len(checks) else EXIT_CHECK


def _cmd_wasserstein(args, cfg: RunConfig) -> int:
    periodic = cfg.mode == "periodic"
    metric = args.metric or ("torus" if periodic else "euclidean")
    a = EmpiricalMeasure(read_samples(args.a), None, metric == "torus")
    b = EmpiricalMeasure(read_samples(args.b), None, metric == "torus")
    d = wasserstein1(a, b, metric, cfg.metric_atoms, np.random.default_rng(cfg.seed))
    print(repr(float(d)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        return _cmd_verify(args)
    try:
        cfg = _config(args)
        handler = {
            "solve": _cmd_solve,
            "hjb": _cmd_hjb,
            "transport": _cmd_transport,
            "sde": _cmd_sde,
            "wasserstein": _cmd_wasserstein,
        }[args.command]
        return handler(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
