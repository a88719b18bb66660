"""Run configuration: a flat key-value file with dotted namespaces.

Example::

    mode = periodic
    grid.n = (32, 32, 32)
    grid.M = 64
    coupling.strength_F = 0.1
    fixed_point.max_iters = 30

Values are Python literals (numbers, strings, tuples); bare words are read
as strings. Lines starting with ``#`` or ``;`` are comments.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import asdict, dataclass, fields, replace

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "config_to_text", "KEY_MAP"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "periodic"
    T: float = 1.0
    n: tuple = (32, 32, 32)
    M: int = 64
    N: int = 4096
    kernel_eps: float = 0.35
    kernel_scaling: str = "dilation"
    strength_F: float = 0.1
    strength_G: float = 0.1
    coupling_periodic: bool | None = None
    coupling_atoms: int = 512
    m0: str = "default"
    eps: float = 0.0
    N_trunc: float | None = None
    box_lower: tuple = (-3.0, -3.0, -6.0)
    box_upper: tuple = (3.0, 3.0, 6.0)
    control_bound: float = 1.0
    n_directions: int = 32
    radii: tuple = (0.125, 0.25, 0.5, 1.0)
    sigmas: tuple = (0.0, 0.05, 0.2)
    max_iters: int = 30
    schedule: str = "fictitious"
    damping: float = 0.5
    tol_fp: float = 1e-2
    n_snapshots: int = 9
    metric_atoms: int = 512
    certify_particles: int = 512
    eps_mild: float = 5e-2
    gap_floor: float = -2e-2
    dump_particles: int = 256
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.mode in ("periodic", "nonperiodic"), f"unknown mode {self.mode!r}")
        need(self.T > 0, "T must be positive")
        need(len(self.n) == 3 and min(self.n) >= 2, "grid.n needs three sizes >= 2")
        need(self.M >= 1 and self.N >= 1, "M and N must be positive")
        need(self.kernel_eps > 0, "kernel width must be positive")
        need(self.kernel_scaling in ("dilation", "euclidean"), "unknown kernel scaling")
        need(self.m0 in ("default", "periodic", "nonperiodic"), f"unknown m0 {self.m0!r}")
        if self.mode == "periodic":
            need(self.eps == 0.0, "periodic mode requires eps = 0")
            need(self.m0 != "nonperiodic", "periodic mode needs a periodic m0")
        else:
            need(self.eps > 0, "non-periodic mode requires eps > 0")
            need(all(u > l for l, u in zip(self.box_lower, self.box_upper)), "empty box")
        need(self.N_trunc is None or self.N_trunc > 0, "N_trunc must be positive")
        need(self.control_bound > 0, "control bound must be positive")
        need(all(s >= 0 for s in self.sigmas), "sigmas must be nonnegative")
        need(self.max_iters >= 1, "max_iters must be at least 1")
        need(self.schedule in ("fictitious", "damped"), f"unknown schedule {self.schedule!r}")
        need(0 < self.damping <= 1, "damping must lie in (0, 1]")
        need(self.tol_fp > 0, "tol_fp must be positive")
        need(self.n_snapshots >= 2, "need at least two snapshots")
        need(self.M % (self.n_snapshots - 1) == 0, "M must be a multiple of n_snapshots - 1")
        need(self.coupling_atoms >= 1 and self.metric_atoms >= 1, "atom counts must be positive")

    @property
    def grid_mode(self) -> str:
        return "periodic" if self.mode == "periodic" else "box"

    @property
    def periodic_coupling(self) -> bool:
        if self.coupling_periodic is None:
            return self.mode == "periodic"
        return bool(self.coupling_periodic)

    def with_(self, **kw) -> "RunConfig":
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# file key -> RunConfig field
KEY_MAP = {
    "mode": "mode",
    "T": "T",
    "seed": "seed",
    "grid.n": "n",
    "grid.M": "M",
    "grid.box_lower": "box_lower",
    "grid.box_upper": "box_upper",
    "particles.N": "N",
    "particles.m0": "m0",
    "particles.dump": "dump_particles",
    "coupling.kernel_eps": "kernel_eps",
    "coupling.kernel_scaling": "kernel_scaling",
    "coupling.strength_F": "strength_F",
    "coupling.strength_G": "strength_G",
    "coupling.periodic": "coupling_periodic",
    "coupling.atoms": "coupling_atoms",
    "regularization.eps": "eps",
    "regularization.N_trunc": "N_trunc",
    "control.bound": "control_bound",
    "control.n_directions": "n_directions",
    "control.radii": "radii",
    "sde.sigmas": "sigmas",
    "fixed_point.max_iters": "max_iters",
    "fixed_point.schedule": "schedule",
    "fixed_point.damping": "damping",
    "fixed_point.tol": "tol_fp",
    "fixed_point.snapshots": "n_snapshots",
    "metric.atoms": "metric_atoms",
    "certify.particles": "certify_particles",
    "certify.eps_mild": "eps_mild",
    "certify.gap_floor": "gap_floor",
}


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def _coerce(name: str, value):
    default = next(f for f in fields(RunConfig) if f.name == name).default
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            value = (value,)
        return tuple(value)
    if isinstance(default, bool) or name == "coupling_periodic":
        if isinstance(value, str):
            low = value.lower()
            if low in ("none", ""):
                return None
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ConfigError(f"{name}: expected a boolean, got {value!r}")
            return low in ("true", "yes", "1")
        return value if value is None else bool(value)
    if isinstance(default, float) or name == "N_trunc":
        if value is None or (isinstance(value, str) and value.lower() == "none"):
            if name == "N_trunc":
                return None
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: expected a number, got {value!r}") from exc
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    return str(value)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from file text plus ``key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    raw = dict(parser["run"])
    raw.update(overrides or {})
    kwargs = {}
    for key, val in raw.items():
        if key not in KEY_MAP:
            raise ConfigError(f"unknown configuration key {key!r}")
        name = KEY_MAP[key]
        kwargs[name] = _coerce(name, _literal(val) if isinstance(val, str) else val)
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration file: {exc}") from exc
    return parse_config(text, overrides)


def config_to_text(cfg: RunConfig) -> str:
    """Serialize to the file format; ``parse_config`` reads it back unchanged."""
    inv = {v: k for k, v in KEY_MAP.items()}
    data = asdict(cfg)
    return "".join(f"{inv[name]} = {data[name]!r}\n" for name in (f.name for f in fields(cfg)))
