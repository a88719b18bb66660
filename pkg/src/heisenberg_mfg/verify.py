"""Identity suites for the group geometry and the convolution coupling.

Each check returns a :class:`Check` with the worst observed error and the
tolerance it was held to. ``run_all`` is what ``heisenberg-mfg verify`` prints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .coupling import (
    CouplingField,
    CouplingOperator,
    GaugeKernel,
    cell_midpoints,
    h_convolve_measure,
    jensen_convolution_check,
    kernel_eval,
    kernel_horizontal_gradient,
)
from .hgroup import (
    dilate,
    gauge_norm,
    group_inv,
    group_mul,
    h_distance,
    horizontal_gradient_fd,
    horizontal_laplacian_fd,
    pavage,
    torus_distance,
)
from .measures import EmpiricalMeasure

__all__ = [
    "Check",
    "gauge_sq_hgrad",
    "gauge_sq_hgrad_norm2",
    "gauge_sq_x1x1",
    "gauge_sq_hlaplacian",
    "hgroup_suite",
    "coupling_suite",
    "run_all",
]


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.suite:9s} {self.name:38s} err={self.error:.3e}  tol={self.tol:.1e}"


# closed forms for the horizontal derivatives of N(x) = ‖x‖² (squared gauge norm)


def _sq(x):
    r = x[..., 0] ** 2 + x[..., 1] ** 2
    return r, gauge_norm(x) ** 2


def gauge_sq_hgrad(x) -> np.ndarray:
    """``(X1 N, X2 N)`` for ``N = ‖x‖²``."""
    x = np.asarray(x, dtype=float)
    r, n2 = _sq(x)
    g1 = (2 * x[..., 0] * r - x[..., 1] * x[..., 2]) / n2
    g2 = (2 * x[..., 1] * r + x[..., 0] * x[..., 2]) / n2
    return np.stack([g1, g2], axis=-1)


def gauge_sq_hgrad_norm2(x) -> np.ndarray:
    """``|D_H N|² = (4 r³ + r x3²) / ‖x‖⁴`` with ``r = x1² + x2²``."""
    x = np.asarray(x, dtype=float)
    r, n2 = _sq(x)
    return (4 * r**3 + r * x[..., 2] ** 2) / n2**2


def gauge_sq_x1x1(x) -> np.ndarray:
    """``X1² N = (6 x1² + 3 x2²)/‖x‖² − (X1 N)²/‖x‖²``."""
    x = np.asarray(x, dtype=float)
    _, n2 = _sq(x)
    g1 = gauge_sq_hgrad(x)[..., 0]
    return (6 * x[..., 0] ** 2 + 3 * x[..., 1] ** 2) / n2 - g1**2 / n2


def gauge_sq_hlaplacian(x) -> np.ndarray:
    """``Δ_H N = 9 r/‖x‖² − |D_H N|²/‖x‖²``."""
    x = np.asarray(x, dtype=float)
    r, n2 = _sq(x)
    return 9 * r / n2 - gauge_sq_hgrad_norm2(x) / n2


def _gauge_sq(x):
    return gauge_norm(x) ** 2


def _nonzero_points(rng, n, lo=-2.0, hi=2.0, floor=0.3):
    out = rng.uniform(lo, hi, (4 * n, 3))
    out = out[gauge_norm(out) > floor]
    return out[:n]


def hgroup_suite(n: int = 10_000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    s = "hgroup"
    a, b, c = (rng.uniform(-3, 3, (n, 3)) for _ in range(3))
    out = []
    lhs = group_mul(group_mul(a, b), c)
    rhs = group_mul(a, group_mul(b, c))
    out.append(Check(s, "associativity", float(np.max(np.abs(lhs - rhs))), 1e-12))
    out.append(Check(s, "inverse", float(np.max(np.abs(group_mul(a, group_inv(a))))), 1e-12))
    d0 = h_distance(a, b)
    d1 = h_distance(group_mul(c, a), group_mul(c, b))
    out.append(Check(s, "left invariance of d_H", float(np.max(np.abs(d1 - d0))), 1e-12))
    lam = rng.uniform(0.1, 5.0, n)
    dil = np.array([dilate(l, p) for l, p in zip(lam, a)])
    hom = gauge_norm(dil) - lam * gauge_norm(a)
    out.append(Check(s, "dilation homogeneity", float(np.max(np.abs(hom))), 1e-12))

    z, q = pavage(a)
    err = np.max(np.abs(group_mul(z.astype(float), q) - a))
    bad_cell = float(np.any((q < 0) | (q >= 1)))
    out.append(Check(s, "pavage round trip", max(float(err), bad_cell), 1e-12))
    zz = rng.integers(-3, 4, (n, 3)).astype(float)
    q2 = pavage(group_mul(zz, a)).q
    dq = np.abs(q2 - q)
    dq = np.minimum(dq, 1.0 - dq)  # a wrap at exactly an integer face is the same class
    out.append(Check(s, "pavage translation invariance", float(np.max(dq)), 1e-12))

    x = _nonzero_points(rng, 100)
    h = 1e-4
    fd = horizontal_gradient_fd(_gauge_sq, x, h)
    out.append(Check(s, "X N closed form vs FD", float(np.max(np.abs(fd - gauge_sq_hgrad(x)))), 1e-5))
    e = np.abs(np.sum(fd**2, axis=-1) - gauge_sq_hgrad_norm2(x))
    out.append(Check(s, "|D_H N|^2 closed form vs FD", float(np.max(e)), 1e-5))
    e1 = np.array([h, 0.0, 0.0])
    x11 = (_gauge_sq(group_mul(x, e1)) + _gauge_sq(group_mul(x, -e1)) - 2 * _gauge_sq(x)) / h**2
    out.append(Check(s, "X1^2 N closed form vs FD", float(np.max(np.abs(x11 - gauge_sq_x1x1(x)))), 1e-5))
    lap = horizontal_laplacian_fd(_gauge_sq, x, h)
    out.append(Check(s, "Delta_H N closed form vs FD", float(np.max(np.abs(lap - gauge_sq_hlaplacian(x)))), 1e-5))

    # [X1, X2] f = 2 ∂3 f, tested on f = x1 x3 where it equals 2 x1
    def x2f(y):
        return horizontal_gradient_fd(lambda w: w[..., 0] * w[..., 2], y, 1e-4)[..., 1]

    def x1f(y):
        return horizontal_gradient_fd(lambda w: w[..., 0] * w[..., 2], y, 1e-4)[..., 0]

    comm = horizontal_gradient_fd(x2f, x, 1e-3)[..., 0] - horizontal_gradient_fd(x1f, x, 1e-3)[..., 1]
    out.append(Check(s, "commutator [X1,X2] = 2 d3", float(np.max(np.abs(comm - 2 * x[:, 0]))), 1e-5))

    p, r = rng.uniform(-2, 2, (n, 3)), rng.uniform(-2, 2, (n, 3))
    eu = np.linalg.norm(p - r, axis=1)
    bound = eu + (1 + np.sqrt(np.abs(p[:, 0])) + np.sqrt(np.abs(p[:, 1]))) * np.sqrt(eu)
    excess = float(max(np.max(h_distance(p, r) - bound), 0.0))
    out.append(Check(s, "gauge vs Euclidean distance bound", excess, 0.0))

    qa = rng.uniform(0, 1, (200, 3))
    qb = rng.uniform(0, 1, (200, 3))
    window = np.array(list(itertools.product(range(-3, 4), repeat=3)), dtype=float)
    brute = np.min(h_distance(qa[:, None, :], group_mul(window[None], qb[:, None, :])), axis=1)
    td = torus_distance(qa, qb)
    out.append(Check(s, "torus window vs 7^3 brute force", float(max(np.max(td - brute), 0.0)), 1e-12))
    return out


def _conv_quadrature(k: GaugeKernel, n: int = 48):
    """Trapezoid nodes and weights of ``ρ(v) dv`` over its effective support."""
    L1 = 2.6 * k.eps
    L3 = 1.5 * 2.6**2 * (k.eps**2 if k.scaling == "dilation" else k.eps)
    g1 = np.linspace(-L1, L1, n)
    g3 = np.linspace(-L3, L3, n)
    v = np.stack(np.meshgrid(g1, g1, g3, indexing="ij"), axis=-1).reshape(-1, 3)
    w = kernel_eval(k, v) * (g1[1] - g1[0]) ** 2 * (g3[1] - g3[0])
    return v, w


def coupling_suite(seed: int = 0, n_jensen: int = 50) -> list[Check]:
    rng = np.random.default_rng(seed)
    s = "coupling"
    out = []
    for eps in (0.2, 0.35):
        k = GaugeKernel(eps)
        # unit mass: quadrature of the normalized kernel is C_analytic / C_quadrature
        mass = k.normalization / k.normalization_quadrature()
        out.append(Check(s, f"kernel unit mass (eps={eps})", abs(mass - 1.0), 1e-3))

    k = GaugeKernel(0.35)
    atoms = rng.uniform(0, 1, (64, 3))
    mu = EmpiricalMeasure(atoms, None, periodic=True)
    x = rng.uniform(-1, 2, (200, 3))
    z = rng.integers(-2, 3, (200, 3)).astype(float)
    base = h_convolve_measure(k, mu, x, periodic=True)
    moved = h_convolve_measure(k, mu, group_mul(z, x), periodic=True)
    out.append(Check(s, "convolution periodicity", float(np.max(np.abs(moved - base))), 1e-12))
    # strict positivity: report how far the minimum is from being > 0
    out.append(Check(s, "convolution positivity", max(-float(np.min(base)), 0.0) + float(np.min(base) <= 0), 0.0))

    # commutation psi*rho = rho*psi for psi invariant under rotations of (x1, x2)
    v, w = _conv_quadrature(k)
    vi = group_inv(v)

    def psi(y):
        return np.exp(-(y[..., 0] ** 2 + y[..., 1] ** 2) - 0.5 * y[..., 2] ** 2)

    xs = rng.uniform(-1, 1, (10, 3))
    left = np.array([np.sum(w * psi(group_mul(p, vi))) for p in xs])
    right = np.array([np.sum(w * psi(group_mul(vi, p))) for p in xs])
    out.append(Check(s, "commutation (rotation-invariant psi)", float(np.max(np.abs(left - right))), 1e-6))

    # X_i(psi * rho) = psi * X_i rho, FD of the convolution vs analytic kernel derivative
    xs = rng.uniform(0, 1, (50, 3))
    op = CouplingOperator(k, "periodic", 1.0)
    fld = CouplingField(op, mu)
    fd = horizontal_gradient_fd(fld, xs, 1e-4)
    an = fld.horizontal_grad(xs)
    out.append(Check(s, "derivative-convolution commutation", float(np.max(np.abs(fd - an))), 1e-4))

    # uniform measure on the cell convolves to a constant
    u = EmpiricalMeasure(cell_midpoints(24), None, periodic=True)
    vals = h_convolve_measure(k, u, rng.uniform(0, 1, (100, 3)), periodic=True)
    out.append(Check(s, "uniform measure -> constant field", float(np.ptp(vals)), 1e-3))

    # Jensen inequality for the convolution: lhs <= rhs + 1e-6
    worst = -np.inf
    kj = GaugeKernel(0.3)
    for i in range(n_jensen):
        c = rng.normal(size=(3, 2))
        ph = rng.uniform(0, 2 * np.pi, (3, 2))
        amp = rng.uniform(0.1, 0.6)

        def m(y, c=c, amp=amp):
            return 1 + amp * np.cos(2 * np.pi * y[..., 0] + c[0, 0]) * np.cos(2 * np.pi * y[..., 1] + c[1, 0])

        def ratio(y, c=c, ph=ph):
            a1 = c[0, 0] + np.sin(2 * np.pi * y[..., 0] + ph[0, 0]) * c[1, 1]
            a2 = c[0, 1] + np.cos(2 * np.pi * y[..., 1] + ph[1, 1]) * c[2, 0]
            return np.stack([a1, a2], axis=-1)

        for p in (1.0, 2.0):
            lhs, rhs = jensen_convolution_check(ratio, m, kj, p, n=10)
            worst = max(worst, lhs - rhs)
    out.append(Check(s, "convolution Jensen inequality", max(worst, 0.0), 1e-6))

    kg = GaugeKernel(0.3)
    y = rng.uniform(-0.6, 0.6, (100, 3))
    fd = horizontal_gradient_fd(lambda t: kernel_eval(kg, t), y, 1e-5)
    out.append(Check(s, "kernel gradient vs FD (relative)",
                     float(np.max(np.abs(fd - kernel_horizontal_gradient(kg, y)))) / kg.normalization, 1e-6))
    return out


def run_all(seed: int = 0) -> list[Check]:
    return hgroup_suite(seed=seed) + coupling_suite(seed=seed)
