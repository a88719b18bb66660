"""Semi-Lagrangian solver for the noncoercive Hamilton-Jacobi equation.

The backward sweep realizes the dynamic programming principle on a lattice:

    u_k(x) = min_a  h (½|a|² + F(x, t_k)) + u_{k+1}(x ⊕ (a1 h, a2 h, 0) + ε a3 h e3)

over a finite control set, with trilinear interpolation of ``u_{k+1}``. In
periodic mode the interpolant reduces its argument to the cell through the
pavage, and lattice neighbours across a face are fetched from their sheared
images, so the interpolant is exactly invariant under integer left
translations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit, prange

from .hgroup import group_mul

__all__ = [
    "HJBConfig",
    "ValueGrid",
    "solve_hjb",
    "control_set",
    "lattice_points",
    "lattice_spacing",
    "check_periodicity",
    "estimate_lipschitz",
    "estimate_semiconcavity",
]

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

WRAP_PAVAGE = 0
WRAP_EUCLIDEAN = 1
WRAP_CLAMP = 2


@dataclass(frozen=True)
class HJBConfig:
    """Lattice and control-set parameters.

    ``radii`` are fractions of ``control_bound``; they are spaced
    geometrically because optimal controls of weakly coupled games are
    small. ``vertical`` lists the third control component values (as
    fractions of the smallest radius times the bound) used when ``eps > 0``.
    """

    mode: str = "periodic"
    n: tuple = (32, 32, 32)
    M: int = 64
    T: float = 1.0
    eps: float = 0.0
    control_bound: float = 1.0
    n_directions: int = 32
    radii: tuple = (0.125, 0.25, 0.5, 1.0)
    vertical: tuple = (-1.0, 1.0)
    lower: tuple = (-3.0, -3.0, -6.0)
    upper: tuple = (3.0, 3.0, 6.0)

    def __post_init__(self):
        if self.mode not in ("periodic", "box"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        n = tuple(int(v) for v in self.n)
        if len(n) != 3 or min(n) < 2:
            raise ValueError("lattice needs three dimensions of at least 2 nodes")
        object.__setattr__(self, "n", n)
        if self.mode == "periodic":
            if n[2] % n[0] or n[2] % n[1]:
                raise ValueError("periodic lattice needs n3 divisible by n1 and n2")
            if self.eps != 0.0:
                raise ValueError("periodic mode uses the intrinsic dynamics (eps = 0)")
        if self.M < 1 or not self.T > 0:
            raise ValueError("need M >= 1 and T > 0")
        if self.eps < 0 or self.control_bound <= 0:
            raise ValueError("eps must be nonnegative and control_bound positive")
        if self.mode == "box" and not all(u > l for l, u in zip(self.lower, self.upper)):
            raise ValueError("box upper corner must exceed the lower corner")
        step = self.control_bound * self.T / self.M
        if step > 0.5 * self.extent_min:
            raise ValueError(
                f"control_bound*h = {step:.3g} exceeds half the lattice extent {self.extent_min:.3g}"
            )

    @property
    def h(self) -> float:
        return self.T / self.M

    @property
    def extent_min(self) -> float:
        if self.mode == "periodic":
            return 1.0
        return float(min(u - l for l, u in zip(self.lower, self.upper)))


def control_set(cfg: HJBConfig, k: int) -> np.ndarray:
    """Controls tried at backward step ``k``: rings of directions plus 0.

    The directions rotate by a golden-ratio fraction of the angular spacing
    from one step to the next.
    """
    nd = cfg.n_directions
    offset = ((k * GOLDEN) % 1.0) * 2.0 * np.pi / nd
    ang = offset + 2.0 * np.pi * np.arange(nd) / nd
    rings = [np.zeros((1, 2))]
    for r in cfg.radii:
        rad = r * cfg.control_bound
        rings.append(np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1))
    horiz = np.concatenate(rings)
    if cfg.eps == 0.0:
        return np.concatenate([horiz, np.zeros((len(horiz), 1))], axis=1)
    vmag = min(cfg.radii) * cfg.control_bound
    verts = [0.0] + [v * vmag for v in cfg.vertical]
    return np.concatenate(
        [np.concatenate([horiz, np.full((len(horiz), 1), v)], axis=1) for v in verts]
    )


@njit(cache=True, inline="always")
def _corner(vals, I, J, K, n1, n2, n3, r1, r2, wrap):
    if wrap == WRAP_PAVAGE:
        z1 = I // n1
        z2 = J // n2
        i = I - z1 * n1
        j = J - z2 * n2
        kk = (K + z2 * i * r1 - z1 * j * r2) % n3
        return vals[i, j, kk]
    if wrap == WRAP_EUCLIDEAN:
        return vals[I % n1, J % n2, K % n3]
    I = min(max(I, 0), n1 - 1)
    J = min(max(J, 0), n2 - 1)
    K = min(max(K, 0), n3 - 1)
    return vals[I, J, K]


@njit(cache=True)
def _interp_one(vals, y1, y2, y3, lo1, lo2, lo3, d1, d2, d3, wrap):
    n1, n2, n3 = vals.shape
    r1 = n3 // n1
    r2 = n3 // n2
    if wrap == WRAP_PAVAGE:
        z1 = np.floor(y1)
        z2 = np.floor(y2)
        q1 = y1 - z1
        q2 = y2 - z2
        q3 = y3 + z2 * q1 - z1 * q2
        q3 = q3 - np.floor(q3)
        s1 = q1 * n1
        s2 = q2 * n2
        s3 = q3 * n3
    else:
        s1 = (y1 - lo1) / d1
        s2 = (y2 - lo2) / d2
        s3 = (y3 - lo3) / d3
        if wrap == WRAP_CLAMP:
            s1 = min(max(s1, 0.0), n1 - 1.0)
            s2 = min(max(s2, 0.0), n2 - 1.0)
            s3 = min(max(s3, 0.0), n3 - 1.0)
    i0 = int(np.floor(s1))
    j0 = int(np.floor(s2))
    k0 = int(np.floor(s3))
    if wrap == WRAP_CLAMP:
        i0 = min(i0, n1 - 2)
        j0 = min(j0, n2 - 2)
        k0 = min(k0, n3 - 2)
    f1 = s1 - i0
    f2 = s2 - j0
    f3 = s3 - k0
    if i0 < n1 - 1 and j0 < n2 - 1 and k0 < n3 - 1 and i0 >= 0 and j0 >= 0 and k0 >= 0:
        # all eight corners inside the stored block
        g1 = 1.0 - f1
        g2 = 1.0 - f2
        g3 = 1.0 - f3
        c00 = vals[i0, j0, k0] * g3 + vals[i0, j0, k0 + 1] * f3
        c01 = vals[i0, j0 + 1, k0] * g3 + vals[i0, j0 + 1, k0 + 1] * f3
        c10 = vals[i0 + 1, j0, k0] * g3 + vals[i0 + 1, j0, k0 + 1] * f3
        c11 = vals[i0 + 1, j0 + 1, k0] * g3 + vals[i0 + 1, j0 + 1, k0 + 1] * f3
        return g1 * (g2 * c00 + f2 * c01) + f1 * (g2 * c10 + f2 * c11)
    acc = 0.0
    for a in range(2):
        w1 = f1 if a else 1.0 - f1
        for b in range(2):
            w2 = f2 if b else 1.0 - f2
            for c in range(2):
                w3 = f3 if c else 1.0 - f3
                acc += w1 * w2 * w3 * _corner(vals, i0 + a, j0 + b, k0 + c, n1, n2, n3, r1, r2, wrap)
    return acc


@njit(cache=True)
def _interp_many(vals, pts, lo1, lo2, lo3, d1, d2, d3, wrap):
    out = np.empty(pts.shape[0])
    for p in range(pts.shape[0]):
        out[p] = _interp_one(vals, pts[p, 0], pts[p, 1], pts[p, 2], lo1, lo2, lo3, d1, d2, d3, wrap)
    return out


@njit(cache=True, parallel=True)
def _sl_step(nxt, fk, lattice, controls, h, eps, lo1, lo2, lo3, d1, d2, d3, wrap):
    # lattice nodes are independent, so the result does not depend on the thread count
    n1, n2, n3 = nxt.shape
    out = np.empty_like(nxt)
    nc = controls.shape[0]
    for i in prange(n1):
        for j in range(n2):
            for k in range(n3):
                x1 = lattice[i, j, k, 0]
                x2 = lattice[i, j, k, 1]
                x3 = lattice[i, j, k, 2]
                best = np.inf
                for c in range(nc):
                    a1 = controls[c, 0]
                    a2 = controls[c, 1]
                    a3 = controls[c, 2]
                    e1 = a1 * h
                    e2 = a2 * h
                    y3 = x3 + x1 * e2 - x2 * e1 + eps * a3 * h
                    v = 0.5 * h * (a1 * a1 + a2 * a2 + a3 * a3) + _interp_one(
                        nxt, x1 + e1, x2 + e2, y3, lo1, lo2, lo3, d1, d2, d3, wrap
                    )
                    if v < best:
                        best = v
                out[i, j, k] = best + h * fk[i, j, k]
    return out


@dataclass
class ValueGrid:
    """Value function on a space-time lattice with group-aware interpolation."""

    cfg: HJBConfig
    values: np.ndarray
    wrap: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.wrap == -1:
            self.wrap = WRAP_PAVAGE if self.cfg.mode == "periodic" else WRAP_CLAMP
        expect = (self.cfg.M + 1,) + self.cfg.n
        if self.values.shape != expect:
            raise ValueError(f"values must have shape {expect}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value grid contains non-finite entries")

    @property
    def mode(self) -> str:
        return self.cfg.mode

    @property
    def eps(self) -> float:
        return self.cfg.eps

    @property
    def M(self) -> int:
        return self.cfg.M

    @property
    def h(self) -> float:
        return self.cfg.h

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.cfg.T, self.cfg.M + 1)

    @property
    def spacing(self) -> np.ndarray:
        return lattice_spacing(self.cfg)

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(3) if self.cfg.mode == "periodic" else np.asarray(self.cfg.lower, float)

    def lattice(self) -> np.ndarray:
        return lattice_points(self.cfg)

    def in_box(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "periodic":
            return np.ones(x.shape[:-1], dtype=bool)
        lo = np.asarray(self.cfg.lower)
        hi = np.asarray(self.cfg.upper)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def interpolate(self, x, k: int) -> np.ndarray:
        """Trilinear interpolant of time slice ``k`` at points ``x``."""
        return _interp_array(self.values[k], x, self.origin, self.spacing, self.wrap)

    def __call__(self, x, t: float) -> np.ndarray:
        """Value at ``(x, t)``, linear in time between slices."""
        s = np.clip(t / self.h, 0.0, self.M)
        k0 = min(int(np.floor(s)), self.M - 1)
        w = s - k0
        v0 = self.interpolate(x, k0)
        if w == 0.0:
            return v0
        return (1.0 - w) * v0 + w * self.interpolate(x, k0 + 1)

    def horizontal_gradient(self, x, k: int, step: float | None = None) -> np.ndarray:
        """``(X1 u_k, X2 u_k)`` by central differences of the interpolant along group translates."""
        step = float(np.min(self.spacing[:2])) if step is None else step
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2,))
        for i in range(2):
            e = np.zeros(3)
            e[i] = step
            out[..., i] = (self.interpolate(group_mul(x, e), k) - self.interpolate(group_mul(x, -e), k)) / (
                2 * step
            )
        return out

    def vertical_derivative(self, x, k: int, step: float | None = None) -> np.ndarray:
        step = float(self.spacing[2]) if step is None else step
        x = np.asarray(x, dtype=float)
        e = np.array([0.0, 0.0, step])
        return (self.interpolate(x + e, k) - self.interpolate(x - e, k)) / (2 * step)

    def feedback(self, x, t: float | None = None, eps: float | None = None, k: int | None = None):
        """Feedback control ``-D_H u`` (with ``-ε ∂3 u`` appended when ``eps > 0``).

        ``k`` selects a slice directly; otherwise the slice nearest to ``t``
        is used. The result is clipped to the control bound in sup norm.
        """
        eps = self.eps if eps is None else eps
        if k is None:
            k = int(np.clip(np.rint(t / self.h), 0, self.M))
        a = -self.horizontal_gradient(x, k)
        if eps != 0.0:
            a3 = -eps * self.vertical_derivative(x, k)
            a = np.concatenate([a, a3[..., None]], axis=-1)
        b = self.cfg.control_bound
        return np.clip(a, -b, b)


def lattice_spacing(cfg: HJBConfig) -> np.ndarray:
    n = np.asarray(cfg.n, dtype=float)
    if cfg.mode == "periodic":
        return 1.0 / n
    return (np.asarray(cfg.upper, float) - np.asarray(cfg.lower, float)) / (n - 1)


def lattice_points(cfg: HJBConfig) -> np.ndarray:
    if cfg.mode == "periodic":
        axes = [np.arange(m) / m for m in cfg.n]
    else:
        axes = [np.linspace(lo, hi, m) for lo, hi, m in zip(cfg.lower, cfg.upper, cfg.n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _interp_array(vals, x, origin, spacing, wrap):
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    flat = np.ascontiguousarray(x.reshape(-1, 3))
    out = _interp_many(
        vals, flat, origin[0], origin[1], origin[2], spacing[0], spacing[1], spacing[2], wrap
    )
    return out.reshape(shape)


def _field_on_lattice(F, cfg: HJBConfig, lattice: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Lattice samples of a running cost given as an array, a grid provider or a callable."""
    shape = (cfg.M + 1,) + cfg.n
    if F is None:
        return np.zeros(shape)
    if isinstance(F, np.ndarray):
        arr = np.broadcast_to(F, shape) if F.shape != shape else F
        return np.asarray(arr, dtype=float)
    if hasattr(F, "on_lattice"):
        return np.asarray(F.on_lattice(lattice, times), dtype=float)
    return np.stack([np.asarray(F(lattice, t), dtype=float) for t in times])


def solve_hjb(F_t, G, cfg: HJBConfig, wrap: int | None = None) -> ValueGrid:
    """Backward semi-Lagrangian sweep from ``u(·, T) = G``.

    ``F_t`` is ``None``, a callable ``F(x, t)``, an object with an
    ``on_lattice(points, times)`` method or an array of lattice samples of
    shape ``(M+1, n1, n2, n3)``. ``G`` is ``None``, a callable ``G(x)`` or
    an array of shape ``(n1, n2, n3)``. ``wrap`` overrides the interpolation
    boundary rule (used to build negative controls in tests).
    """
    lattice = lattice_points(cfg)
    times = np.linspace(0.0, cfg.T, cfg.M + 1)
    Fv = _field_on_lattice(F_t, cfg, lattice, times)
    if G is None:
        Gv = np.zeros(cfg.n)
    elif isinstance(G, np.ndarray):
        Gv = np.asarray(np.broadcast_to(G, cfg.n), dtype=float)
    else:
        Gv = np.asarray(G(lattice), dtype=float)
    if wrap is None:
        wrap = WRAP_PAVAGE if cfg.mode == "periodic" else WRAP_CLAMP
    origin = np.zeros(3) if cfg.mode == "periodic" else np.asarray(cfg.lower, float)
    sp = lattice_spacing(cfg)
    values = np.empty((cfg.M + 1,) + cfg.n)
    values[cfg.M] = Gv
    lat = np.ascontiguousarray(lattice)
    for k in range(cfg.M - 1, -1, -1):
        ctrl = np.ascontiguousarray(control_set(cfg, k))
        values[k] = _sl_step(
            values[k + 1], np.ascontiguousarray(Fv[k]), lat, ctrl, cfg.h, cfg.eps,
            origin[0], origin[1], origin[2], sp[0], sp[1], sp[2], wrap,
        )
    return ValueGrid(cfg, values, wrap, {"F_lattice": Fv})


def check_periodicity(u: ValueGrid, n_samples: int = 200, seed: int = 0) -> float:
    """Max of ``|u(z ⊕ x, t) - u(x, t)|`` over sampled points, slices and ``z ∈ {-1,0,1}³``."""
    if u.mode != "periodic":
        raise ValueError("periodicity check needs a periodic grid")
    rng = np.random.default_rng(seed)
    x = rng.random((n_samples, 3))
    zs = np.stack(np.meshgrid(*[np.arange(-1, 2)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    slices = np.unique(np.linspace(0, u.M, min(u.M + 1, 5)).astype(int))
    worst = 0.0
    for k in slices:
        base = u.interpolate(x, k)
        for z in zs:
            moved = u.interpolate(group_mul(z.astype(float), x), k)
            worst = max(worst, float(np.max(np.abs(moved - base))))
    return worst


def _shifted(u: ValueGrid, v: np.ndarray, axis: int, dist: float) -> np.ndarray:
    """Interpolated values of slice ``v`` at every lattice node moved by ``dist`` along ``axis``.

    In periodic mode the moved nodes are reduced through the pavage, so the
    shift crosses cell faces correctly.
    """
    lat = u.lattice()
    e = np.zeros(3)
    e[axis] = dist
    return _interp_array(v, lat + e, u.origin, u.spacing, u.wrap)


def _inside(u: ValueGrid, axis: int, dist: float) -> np.ndarray:
    if u.mode == "periodic":
        return np.ones(u.cfg.n, dtype=bool)
    c = u.lattice()[..., axis]
    return (c - dist >= u.cfg.lower[axis] - 1e-12) & (c + dist <= u.cfg.upper[axis] + 1e-12)


def estimate_lipschitz(u: ValueGrid) -> tuple[float, float]:
    """Largest lattice difference quotients in space and in time.

    In box mode the time quotient is divided by ``1 + x1² + x2²`` before the
    maximum, matching the growth allowed away from the vertical axis.
    """
    Lx = 0.0
    for k in range(u.M + 1):
        v = u.values[k]
        for axis in range(3):
            d = float(u.spacing[axis])
            q = np.abs(_shifted(u, v, axis, d) - v) / d
            Lx = max(Lx, float(q[_inside(u, axis, d)].max()))
    dt = np.abs(np.diff(u.values, axis=0)) / u.h
    if u.mode != "periodic":
        lat = u.lattice()
        dt = dt / (1.0 + lat[..., 0] ** 2 + lat[..., 1] ** 2)
    return Lx, float(dt.max())


def estimate_semiconcavity(u: ValueGrid, t: float | int = 0, h: float | None = None) -> float:
    """Largest axis second difference ``[u(x+he) + u(x-he) - 2u(x)]/h²`` at one time.

    ``t`` is a time in ``[0, T]`` (float) or a slice index (int). The
    stencil ``h`` is a physical length; by default it is the whole number of
    lattice steps closest to 1/16 of each axis extent. Quotients at the lattice scale mostly measure
    interpolation ripples of the scheme, whereas a fixed stencil gives an
    estimate that settles under refinement.
    """
    k = t if isinstance(t, (int, np.integer)) else int(np.clip(np.rint(t / u.h), 0, u.M))
    if h is not None and not h > 0:
        raise ValueError("stencil must be positive")
    v = u.values[k]
    worst = -np.inf
    for axis in range(3):
        hs = _default_stencil(u, axis) if h is None else h
        d2 = (_shifted(u, v, axis, hs) + _shifted(u, v, axis, -hs) - 2.0 * v) / (hs * hs)
        worst = max(worst, float(d2[_inside(u, axis, hs)].max()))
    return worst


def _default_stencil(u: ValueGrid, axis: int) -> float:
    # a whole number of lattice steps close to 1/16 of the axis extent
    intervals = u.cfg.n[axis] if u.mode == "periodic" else u.cfg.n[axis] - 1
    return max(1, round(intervals / 16)) * float(u.spacing[axis])
