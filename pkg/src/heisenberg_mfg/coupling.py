"""Regularizing kernels, Heisenberg convolution and the coupling operators.

The kernel is ``ρ_ε(x) = C(ε) exp(-‖δ_{1/ε} x‖⁴)``. Convolutions use the
left difference ``y^{-1} ⊕ x``,

    (μ ∗ ρ)(x) = Σ_i w_i ρ(y_i^{-1} ⊕ x),

which commutes with left translations, so horizontal derivatives of the
convolution are convolutions with the horizontal derivatives of the kernel
and periodic measures give periodic fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit
from scipy import integrate

from .hgroup import canonical, gauge_norm, group_mul
from .measures import EmpiricalMeasure

__all__ = [
    "GaugeKernel",
    "CouplingOperator",
    "CouplingField",
    "InitialDensity",
    "kernel_eval",
    "kernel_horizontal_gradient",
    "h_convolve_measure",
    "weighted_convolution",
    "coupling_F",
    "coupling_G",
    "periodized_kernel_matrix",
    "cell_midpoints",
    "jensen_convolution_check",
    "default_initial_density",
]

# exp(-TAIL) is below double-precision resolution relative to the peak
_TAIL = 39.0
_UNIT_INTEGRAL = np.pi**2 / 2.0  # ∫ exp(-(r⁴ + x3²)) dx over R³


@dataclass(frozen=True)
class GaugeKernel:
    """Normalized quartic-exponential kernel of width ``eps``.

    ``scaling="dilation"`` reads ``x/ε`` as the intrinsic dilation
    ``δ_{1/ε}``; ``scaling="euclidean"`` divides all three coordinates by ε.
    """

    eps: float
    scaling: str = "dilation"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"kernel width must be positive, got {self.eps}")
        if self.scaling not in ("dilation", "euclidean"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    @property
    def normalization(self) -> float:
        # substituting x = δ_ε y (Jacobian ε⁴) or x = ε y (Jacobian ε³)
        power = 4 if self.scaling == "dilation" else 3
        return 1.0 / (_UNIT_INTEGRAL * self.eps**power)

    @property
    def _inv3(self) -> float:
        # coefficient of x3² inside the exponent
        return self.eps**-4 if self.scaling == "dilation" else self.eps**-2

    @property
    def support_radius(self) -> tuple[float, float]:
        """Horizontal radius and vertical half-height beyond which ρ/C(ε) < e^{-39}."""
        rh = self.eps * _TAIL**0.25
        r3 = np.sqrt(_TAIL / self._inv3)
        return rh, r3

    def exponent(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        r2 = a[..., 0] ** 2 + a[..., 1] ** 2
        return r2 * r2 / self.eps**4 + a[..., 2] ** 2 * self._inv3

    def normalization_quadrature(self, box: float = 6.0) -> float:
        """``C(ε)`` from adaptive quadrature of the unnormalized kernel.

        Integrates over ``[-box ε, box ε]² × [-h3, h3]`` with ``h3 = box² ε²``
        (dilation) or ``box ε`` (Euclidean scaling), using the evenness of the
        kernel in each coordinate to reduce to one octant.
        """
        rh = box * self.eps
        h3 = box**2 * self.eps**2 if self.scaling == "dilation" else box * self.eps
        e4 = self.eps**4
        inv3 = self._inv3

        def integrand(x3, x2, x1):
            r2 = x1 * x1 + x2 * x2
            return np.exp(-(r2 * r2 / e4 + x3 * x3 * inv3))

        val, _ = integrate.tplquad(integrand, 0.0, rh, 0.0, rh, 0.0, h3, epsabs=0.0, epsrel=1e-8)
        return 1.0 / (8.0 * val)


def kernel_eval(k: GaugeKernel, a) -> np.ndarray:
    return k.normalization * np.exp(-k.exponent(a))


def kernel_horizontal_gradient(k: GaugeKernel, a) -> np.ndarray:
    """Analytic ``(X1 ρ, X2 ρ)`` of the kernel at ``a``."""
    a = np.asarray(a, dtype=float)
    rho = kernel_eval(k, a)
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    r2 = a1 * a1 + a2 * a2
    d1 = 4.0 * a1 * r2 / k.eps**4
    d2 = 4.0 * a2 * r2 / k.eps**4
    d3 = 2.0 * a3 * k._inv3
    return np.stack([-rho * (d1 - a2 * d3), -rho * (d2 + a1 * d3)], axis=-1)


@njit(cache=True)
def _convolve(points, atoms, weights, e4, inv3, rh, r3, periodic, want_grad):
    n = points.shape[0]
    val = np.zeros(n)
    grad = np.zeros((n, 3)) if want_grad else np.zeros((1, 3))
    for i in range(n):
        x1 = points[i, 0]
        x2 = points[i, 1]
        x3 = points[i, 2]
        acc = 0.0
        g1 = 0.0
        g2 = 0.0
        g3 = 0.0
        for j in range(atoms.shape[0]):
            y1 = atoms[j, 0]
            y2 = atoms[j, 1]
            y3 = atoms[j, 2]
            wj = weights[j]
            if periodic:
                z1lo = int(np.ceil(x1 - y1 - rh))
                z1hi = int(np.floor(x1 - y1 + rh))
                z2lo = int(np.ceil(x2 - y2 - rh))
                z2hi = int(np.floor(x2 - y2 + rh))
            else:
                z1lo = 0
                z1hi = 0
                z2lo = 0
                z2hi = 0
            for z1 in range(z1lo, z1hi + 1):
                p1 = z1 + y1
                w1 = x1 - p1
                for z2 in range(z2lo, z2hi + 1):
                    p2 = z2 + y2
                    w2 = x2 - p2
                    r2 = w1 * w1 + w2 * w2
                    # p = z ⊕ y without its z3 part; w = p^{-1} ⊕ x
                    p3 = y3 - z2 * y1 + z1 * y2
                    c0 = x3 - p3 + p2 * x1 - p1 * x2
                    if periodic:
                        z3lo = int(np.ceil(c0 - r3))
                        z3hi = int(np.floor(c0 + r3))
                    else:
                        z3lo = 0
                        z3hi = 0
                    for z3 in range(z3lo, z3hi + 1):
                        w3 = c0 - z3
                        s = r2 * r2 / e4 + w3 * w3 * inv3
                        if s > 45.0:
                            continue
                        rho = wj * np.exp(-s)
                        acc += rho
                        if want_grad:
                            d1 = -rho * 4.0 * w1 * r2 / e4
                            d2 = -rho * 4.0 * w2 * r2 / e4
                            d3 = -rho * 2.0 * w3 * inv3
                            g1 += d1 + p2 * d3
                            g2 += d2 - p1 * d3
                            g3 += d3
        val[i] = acc
        if want_grad:
            grad[i, 0] = g1
            grad[i, 1] = g2
            grad[i, 2] = g3
    return val, grad


def _run_convolution(k: GaugeKernel, atoms, weights, points, periodic: bool, want_grad: bool):
    pts = np.asarray(points, dtype=float)
    shape = pts.shape[:-1]
    flat = np.ascontiguousarray(pts.reshape(-1, 3))
    rh, r3 = k.support_radius
    val, grad = _convolve(
        flat,
        np.ascontiguousarray(atoms, dtype=float),
        np.ascontiguousarray(weights, dtype=float),
        k.eps**4,
        k._inv3,
        rh,
        r3,
        periodic,
        want_grad,
    )
    val = val.reshape(shape) * k.normalization
    if not want_grad:
        return val, None
    return val, grad.reshape(shape + (3,)) * k.normalization


def weighted_convolution(k: GaugeKernel, atoms, weights, points, periodic: bool) -> np.ndarray:
    """``Σ_i w_i ρ(y_i^{-1} ⊕ x)`` for arbitrary real weights (used for incremental updates)."""
    val, _ = _run_convolution(k, np.asarray(atoms, float), np.asarray(weights, float), points,
                              periodic, False)
    return val


def h_convolve_measure(k: GaugeKernel, mu: EmpiricalMeasure, a, periodic: bool | None = None):
    """``(μ ∗ ρ)(a)``; in periodic mode μ is extended to all integer translates.

    The periodic sum visits every translate ``z ⊕ y_i`` whose kernel value is
    above ``e^{-45}`` times the peak, so it is exact to double precision
    regardless of the kernel width.
    """
    if len(mu) == 0:
        raise ValueError("empty measure")
    if periodic is None:
        periodic = mu.periodic
    val, _ = _run_convolution(k, mu.samples, mu.weights, a, periodic, False)
    return val


@dataclass(frozen=True)
class CouplingOperator:
    kernel: GaugeKernel
    mode: str = "periodic"
    strength: float = 1.0

    def __post_init__(self):
        if self.mode not in ("periodic", "nonperiodic"):
            raise ValueError(f"unknown coupling mode {self.mode!r}")

    @property
    def periodic(self) -> bool:
        return self.mode == "periodic"


class CouplingField:
    """The scalar field ``x ↦ strength · (μ ∗ ρ)(x)`` for a frozen measure."""

    def __init__(self, op: CouplingOperator, mu: EmpiricalMeasure):
        self.op = op
        self.atoms = np.ascontiguousarray(mu.samples)
        self.weights = np.ascontiguousarray(mu.weights)

    def __call__(self, x) -> np.ndarray:
        if self.op.strength == 0:
            return np.zeros(np.shape(x)[:-1])
        val, _ = _run_convolution(
            self.op.kernel, self.atoms, self.weights, x, self.op.periodic, False
        )
        return self.op.strength * val

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Value and Euclidean gradient, both from the analytic kernel."""
        if self.op.strength == 0:
            shape = np.shape(x)[:-1]
            return np.zeros(shape), np.zeros(shape + (3,))
        val, grad = _run_convolution(
            self.op.kernel, self.atoms, self.weights, x, self.op.periodic, True
        )
        return self.op.strength * val, self.op.strength * grad

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def horizontal_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.grad(x)
        return np.stack(
            [g[..., 0] - x[..., 1] * g[..., 2], g[..., 1] + x[..., 0] * g[..., 2]], axis=-1
        )


def coupling_F(op: CouplingOperator, mu: EmpiricalMeasure) -> CouplingField:
    """Running-cost coupling ``F[μ]``."""
    return CouplingField(op, mu)


def coupling_G(op: CouplingOperator, mu: EmpiricalMeasure) -> CouplingField:
    """Terminal-cost coupling ``G[μ]``; same construction as ``F`` with its own operator."""
    return CouplingField(op, mu)


@njit(cache=True)
def _kernel_matrix(targets, sources, e4, inv3, rh, r3):
    nt = targets.shape[0]
    ns = sources.shape[0]
    out = np.zeros((nt, ns))
    for i in range(nt):
        x1 = targets[i, 0]
        x2 = targets[i, 1]
        x3 = targets[i, 2]
        for j in range(ns):
            y1 = sources[j, 0]
            y2 = sources[j, 1]
            y3 = sources[j, 2]
            acc = 0.0
            for z1 in range(int(np.ceil(x1 - y1 - rh)), int(np.floor(x1 - y1 + rh)) + 1):
                p1 = z1 + y1
                w1 = x1 - p1
                for z2 in range(int(np.ceil(x2 - y2 - rh)), int(np.floor(x2 - y2 + rh)) + 1):
                    p2 = z2 + y2
                    w2 = x2 - p2
                    r2 = w1 * w1 + w2 * w2
                    c0 = x3 - (y3 - z2 * y1 + z1 * y2) + p2 * x1 - p1 * x2
                    for z3 in range(int(np.ceil(c0 - r3)), int(np.floor(c0 + r3)) + 1):
                        w3 = c0 - z3
                        acc += np.exp(-(r2 * r2 / e4 + w3 * w3 * inv3))
            out[i, j] = acc
    return out


def periodized_kernel_matrix(k: GaugeKernel, targets, sources) -> np.ndarray:
    """Matrix of ``Σ_z ρ((z ⊕ y_j)^{-1} ⊕ x_i)`` over target/source pairs."""
    rh, r3 = k.support_radius
    mat = _kernel_matrix(
        np.ascontiguousarray(targets, dtype=float),
        np.ascontiguousarray(sources, dtype=float),
        k.eps**4,
        k._inv3,
        rh,
        r3,
    )
    return mat * k.normalization


def cell_midpoints(n: int) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n
    g = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def jensen_convolution_check(
    E_over_m: Callable, m: Callable, k: GaugeKernel, p: float, n: int = 16
) -> tuple[float, float]:
    """Both sides of ``∫|E∗ρ / m∗ρ|^p (m∗ρ) ≤ ∫|E/m|^p dm`` on one cell.

    Quadrature uses ``n³`` cell midpoints. The discrete kernel is rescaled so
    that each source column carries unit mass over the cell, as the continuous
    periodized kernel does; the discrete inequality then follows from Jensen's
    inequality point by point.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    x = cell_midpoints(n)
    dv = 1.0 / n**3
    mv = np.asarray(m(x), dtype=float)
    if np.any(mv <= 0):
        raise ValueError("density must be positive")
    ratio = np.asarray(E_over_m(x), dtype=float)
    if ratio.ndim == 1:
        ratio = ratio[:, None]
    E = ratio * mv[:, None]
    K = periodized_kernel_matrix(k, x, x)
    K /= K.sum(axis=0, keepdims=True) * dv
    m_s = K @ (mv * dv)
    E_s = K @ (E * dv)
    lhs = float(np.sum(np.linalg.norm(E_s / m_s[:, None], axis=1) ** p * m_s) * dv)
    rhs = float(np.sum(np.linalg.norm(ratio, axis=1) ** p * mv) * dv)
    return lhs, rhs


class InitialDensity:
    """Initial distribution of players with a density and a seeded sampler."""

    def __init__(self, mode: str, pdf: Callable, sampler: Callable, seed: int = 0):
        if mode not in ("periodic", "nonperiodic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.pdf = pdf
        self._sampler = sampler
        self.seed = seed

    @property
    def periodic(self) -> bool:
        return self.mode == "periodic"

    def __call__(self, x) -> np.ndarray:
        return self.pdf(x)

    def sample(self, N: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            rng = np.random.default_rng(self.seed)
        pts = self._sampler(N, rng)
        return canonical(pts) if self.periodic else pts


def _cosine_factor(x):
    return 1.0 + 0.5 * np.cos(2.0 * np.pi * x)


def _sample_cosine(n, rng):
    out = np.empty(0)
    while out.size < n:
        x = rng.random(2 * n)
        keep = rng.random(2 * n) * 1.5 < _cosine_factor(x)
        out = np.concatenate([out, x[keep]])
    return out[:n]


def _sample_standard_kernel(n, rng):
    # density ∝ exp(-r⁴ - x3²): r² and x3 are half-normal/normal with variance 1/2
    s = np.abs(rng.normal(scale=np.sqrt(0.5), size=n))
    theta = rng.random(n) * 2.0 * np.pi
    r = np.sqrt(s)
    x3 = rng.normal(scale=np.sqrt(0.5), size=n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), x3], axis=-1)


def _periodic_default(bump_center=(0.5, 0.5, 0.5), bump_width=0.45, seed=0):
    bump = GaugeKernel(bump_width)
    center = EmpiricalMeasure(np.array([bump_center]), periodic=True)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        q = canonical(x)
        product = _cosine_factor(q[..., 0]) * _cosine_factor(q[..., 1])
        return 0.5 * product + 0.5 * h_convolve_measure(bump, center, x, periodic=True)

    def sampler(n, rng):
        from_bump = rng.random(n) < 0.5
        nb = int(from_bump.sum())
        out = np.empty((n, 3))
        na = n - nb
        out[~from_bump, 0] = _sample_cosine(na, rng)
        out[~from_bump, 1] = _sample_cosine(na, rng)
        out[~from_bump, 2] = rng.random(na)
        z = _sample_standard_kernel(nb, rng) * np.array([bump_width, bump_width, bump_width**2])
        out[from_bump] = group_mul(np.asarray(bump_center, dtype=float), z)
        return out

    return InitialDensity("periodic", pdf, sampler, seed)


def _nonperiodic_default(radius=0.5, seed=0):
    c = 5.0 / (_UNIT_INTEGRAL * radius**4)

    def pdf(x):
        return c * np.clip(1.0 - gauge_norm(x) / radius, 0.0, None)

    def sampler(n, rng):
        out = np.empty((0, 3))
        scale = np.array([radius, radius, radius**2])
        while out.shape[0] < n:
            x = (2.0 * rng.random((4 * n, 3)) - 1.0) * scale
            keep = rng.random(4 * n) * c < pdf(x)
            out = np.concatenate([out, x[keep]])
        return out[:n]

    return InitialDensity("nonperiodic", pdf, sampler, seed)


def default_initial_density(mode: str = "periodic", seed: int = 0) -> InitialDensity:
    """Default ``m0``.

    Periodic: an equal mixture of ``(1 + ½cos 2πx1)(1 + ½cos 2πx2)`` and a
    periodized kernel bump of width 0.45 centred in the cell; smooth, positive
    and continuous across the sheared faces of the cell.
    Non-periodic: the cone ``(1 - ‖x‖/½)_+`` normalized to unit mass.
    """
    if mode == "periodic":
        return _periodic_default(seed=seed)
    if mode == "nonperiodic":
        return _nonperiodic_default(seed=seed)
    raise ValueError(f"unknown mode {mode!r}")
