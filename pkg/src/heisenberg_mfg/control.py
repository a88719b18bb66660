"""Horizontal dynamics, costs, the Pontryagin system and trajectory optimization.

A control ``α`` steers the state along ``x' = B(x) α`` (intrinsic mode, two
components) or ``x' = B^ε(x) α`` (regularized mode, three components). For a
constant horizontal control the trajectory is a left translate of a straight
segment, ``x(s) = x(0) ⊕ (α1 s, α2 s, 0)``, which gives an exact update for
piecewise-constant controls.

Costates follow the convention ``p(T) = -Dg(x(T))`` and ``α = p B(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares, minimize

__all__ = [
    "ControlPath",
    "Trajectory",
    "Costate",
    "ShootingResult",
    "DirectResult",
    "exact_step",
    "integrate_trajectory",
    "cost",
    "pmp_rhs",
    "pmp_shoot",
    "direct_optimize",
    "discrete_pmp_residual",
    "synthesis_field",
    "fd_gradient",
]


@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control on a uniform grid of ``K`` steps over ``[t0, T]``."""

    t0: float
    T: float
    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] < 1 or v.shape[1] not in (2, 3):
            raise ValueError(f"control values must have shape (K, 2) or (K, 3), got {v.shape}")
        if not self.T > self.t0:
            raise ValueError("final time must exceed initial time")
        if self.bound is not None and np.max(np.abs(v)) > self.bound * (1 + 1e-12):
            raise ValueError("control exceeds its bound")
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.K + 1)

    def refine(self, factor: int) -> "ControlPath":
        """Same control on a grid ``factor`` times finer."""
        return ControlPath(self.t0, self.T, np.repeat(self.values, factor, axis=0), self.bound)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: ControlPath | None = None


@dataclass(frozen=True)
class Costate:
    times: np.ndarray
    p: np.ndarray


def exact_step(x, a, h: float, eps: float = 0.0) -> np.ndarray:
    """State after a leg of length ``h`` under constant control ``a``.

    Broadcasts over leading axes of ``x`` and ``a``. The horizontal part is
    the left translation ``x ⊕ (a1 h, a2 h, 0)``; a third control component
    adds ``ε a3 h`` to the vertical coordinate.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    d1 = a[..., 0] * h
    d2 = a[..., 1] * h
    x3 = x[..., 2] + x[..., 0] * d2 - x[..., 1] * d1
    if a.shape[-1] == 3 and eps != 0.0:
        x3 = x3 + eps * a[..., 2] * h
    return np.stack([x[..., 0] + d1, x[..., 1] + d2, x3], axis=-1)


def integrate_trajectory(x0, alpha: ControlPath, eps: float = 0.0) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,):
        raise ValueError("start point must be a single point of shape (3,)")
    states = np.empty((alpha.K + 1, 3))
    states[0] = x0
    for k in range(alpha.K):
        states[k + 1] = exact_step(states[k], alpha.values[k], alpha.h, eps)
    return Trajectory(alpha.times, states, alpha)


def _eval_time_field(f: Callable | None, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros(len(times))
    return np.array([float(f(x[k], times[k])) for k in range(len(times))])


def cost(traj: Trajectory, alpha: ControlPath, f: Callable | None, g: Callable | None) -> float:
    """``Σ h ½|α_k|²`` plus the trapezoid rule for ``∫ f(x(s), s) ds`` plus ``g(x(T))``."""
    if len(traj.times) != alpha.K + 1:
        raise ValueError("trajectory and control grids differ")
    h = alpha.h
    kinetic = 0.5 * h * float(np.sum(alpha.values**2))
    fv = _eval_time_field(f, traj.states, traj.times)
    running = h * (fv.sum() - 0.5 * (fv[0] + fv[-1]))
    terminal = 0.0 if g is None else float(g(traj.states[-1]))
    return kinetic + running + terminal


def pmp_rhs(x, p, grad_f, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the state/costate system for ``α = p B^ε(x)``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    gf = np.asarray(grad_f, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    p1, p2, p3 = p[..., 0], p[..., 1], p[..., 2]
    a1 = p1 - x2 * p3
    a2 = p2 + x1 * p3
    dx = np.stack([a1, a2, (x1 * x1 + x2 * x2 + eps * eps) * p3 + x1 * p2 - x2 * p1], axis=-1)
    dp = np.stack([-a2 * p3 + gf[..., 0], a1 * p3 + gf[..., 1], gf[..., 2]], axis=-1)
    return dx, dp


def feedback_control(x, p, eps: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    a = [p[..., 0] - x[..., 1] * p[..., 2], p[..., 1] + x[..., 0] * p[..., 2]]
    if eps != 0.0:
        a.append(eps * p[..., 2])
    return np.stack(a, axis=-1)


def fd_gradient(f: Callable, x, h: float = 1e-6, *args) -> np.ndarray:
    """Central-difference Euclidean gradient of a scalar field, vectorized over points."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[..., i] = (np.asarray(f(x + e, *args)) - np.asarray(f(x - e, *args))) / (2 * h)
    return out


@dataclass(frozen=True)
class ShootingResult:
    trajectory: Trajectory
    costate: Costate
    controls: np.ndarray
    residual: float
    converged: bool
    value: float
    p0: np.ndarray


def _rk4_flow(x0, p0, t0, T, n, f_grad, f, eps):
    """Integrate states, costates and running cost with the classic RK4 scheme."""
    h = (T - t0) / n

    def rhs(t, y):
        x, p = y[:3], y[3:6]
        gf = np.zeros(3) if f_grad is None else np.asarray(f_grad(x, t), dtype=float)
        dx, dp = pmp_rhs(x, p, gf, eps)
        a = feedback_control(x, p, eps)
        run = 0.5 * float(a @ a) + (0.0 if f is None else float(f(x, t)))
        return np.concatenate([dx, dp, [run]])

    y = np.concatenate([x0, p0, [0.0]])
    ys = np.empty((n + 1, 7))
    ys[0] = y
    t = t0
    for i in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * h
        ys[i + 1] = y
    return ys


def pmp_shoot(
    x0,
    t0: float,
    p_guess,
    f_grad: Callable | None,
    g: Callable | None,
    eps: float = 0.0,
    *,
    T: float = 1.0,
    K: int = 64,
    substeps: int = 4,
    f: Callable | None = None,
    g_grad: Callable | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> ShootingResult:
    """Solve the two-point boundary problem by shooting on the initial costate.

    ``f_grad(x, t)`` returns the Euclidean gradient of the running cost and
    ``f(x, t)`` its value (only used for the reported cost). The terminal
    gradient defaults to central differences of ``g``. Levenberg-Marquardt
    drives ``p(T) + Dg(x(T))`` to zero; a failure is reported through
    ``converged`` rather than raised.
    """
    x0 = np.asarray(x0, dtype=float)
    n = K * substeps
    if g is None:
        dg = lambda x: np.zeros(3)  # noqa: E731
    elif g_grad is not None:
        dg = lambda x: np.asarray(g_grad(x), dtype=float)  # noqa: E731
    else:
        dg = lambda x: fd_gradient(g, x)  # noqa: E731

    def residual(p0):
        ys = _rk4_flow(x0, p0, t0, T, n, f_grad, f, eps)
        return ys[-1, 3:6] + dg(ys[-1, :3])

    p0 = np.asarray(p_guess, dtype=float)
    r0 = residual(p0)
    if np.linalg.norm(r0) > tol:
        sol = least_squares(residual, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_iter)
        p0 = sol.x
    ys = _rk4_flow(x0, p0, t0, T, n, f_grad, f, eps)
    res = float(np.linalg.norm(ys[-1, 3:6] + dg(ys[-1, :3])))
    sub = ys[::substeps]
    times = np.linspace(t0, T, K + 1)
    states = sub[:, :3]
    p = sub[:, 3:6]
    value = float(ys[-1, 6]) + (0.0 if g is None else float(g(ys[-1, :3])))
    return ShootingResult(
        trajectory=Trajectory(times, states),
        costate=Costate(times, p),
        controls=feedback_control(states, p, eps),
        residual=res,
        converged=res <= max(tol, 1e-8),
        value=value,
        p0=p0,
    )


@dataclass(frozen=True)
class DirectResult:
    path: ControlPath
    trajectory: Trajectory
    value: float
    costate: Costate
    start_values: np.ndarray
    history: list = field(default_factory=list)

    @property
    def spread(self) -> float:
        """Range of the local optima found by the different starts."""
        return float(self.start_values.max() - self.start_values.min())


def _rollout(x0, a, h, eps):
    K = a.shape[0]
    xs = np.empty((K + 1, 3))
    xs[0] = x0
    for k in range(K):
        xs[k + 1] = exact_step(xs[k], a[k], h, eps)
    return xs


def direct_optimize(
    x0,
    t0: float,
    f: Callable | None,
    g: Callable | None,
    eps: float = 0.0,
    K: int = 64,
    bound: float = 4.0,
    *,
    T: float = 1.0,
    f_grad: Callable | None = None,
    g_grad: Callable | None = None,
    n_starts: int = 8,
    seed: int = 0,
    init: np.ndarray | None = None,
    vectorized: bool = False,
) -> DirectResult:
    """Minimize the discrete cost over piecewise-constant controls in ``[-bound, bound]``.

    The cost is the one of :func:`cost`. Its exact gradient with respect to
    all controls comes from the discrete adjoint recursion, and a bounded
    quasi-Newton method does the descent. Start 0 is the zero control (or
    ``init``), the others are seeded random controls; the best result wins.
    ``g(x)`` must accept arrays of points. With ``vectorized=True``,
    ``f(xs, ts)`` and ``f_grad(xs, ts)`` are called once on the whole
    trajectory with matching arrays of times.
    """
    x0 = np.asarray(x0, dtype=float)
    if not bound > 0:
        raise ValueError("control bound must be positive")
    if not T > t0:
        raise ValueError("final time must exceed initial time")
    dim = 3 if eps != 0.0 else 2
    h = (T - t0) / K
    times = np.linspace(t0, T, K + 1)
    wts = np.full(K + 1, h)
    wts[0] = wts[-1] = h / 2

    def fvals(xs):
        if f is None:
            return np.zeros(K + 1), np.zeros((K + 1, 3))
        if vectorized:
            return np.asarray(f(xs, times), dtype=float), np.asarray(f_grad(xs, times), dtype=float)
        v = np.array([float(f(xs[k], times[k])) for k in range(K + 1)])
        if f_grad is not None:
            gr = np.array([f_grad(xs[k], times[k]) for k in range(K + 1)], dtype=float)
        else:
            gr = np.array([fd_gradient(f, xs[k], 1e-6, times[k]) for k in range(K + 1)])
        return v, gr

    def gvals(x):
        if g is None:
            return 0.0, np.zeros(3)
        gg = g_grad(x) if g_grad is not None else fd_gradient(g, x)
        return float(g(x)), np.asarray(gg, dtype=float)

    def objective(flat):
        a = flat.reshape(K, dim)
        xs = _rollout(x0, a, h, eps)
        fv, fg = fvals(xs)
        gv, gg = gvals(xs[-1])
        J = 0.5 * h * float(np.sum(a * a)) + float(wts @ fv) + gv
        c = wts[:, None] * fg
        c[-1] += gg
        lam = np.empty((K + 1, 3))
        lam[K] = c[K]
        grad = np.empty((K, dim))
        for k in range(K - 1, -1, -1):
            l1, l2, l3 = lam[k + 1]
            x1, x2 = xs[k, 0], xs[k, 1]
            grad[k, 0] = h * (a[k, 0] + l1 - x2 * l3)
            grad[k, 1] = h * (a[k, 1] + l2 + x1 * l3)
            if dim == 3:
                grad[k, 2] = h * (a[k, 2] + eps * l3)
            lam[k] = c[k] + np.array([l1 + h * a[k, 1] * l3, l2 - h * a[k, 0] * l3, l3])
        return J, grad.ravel(), lam, xs

    rng = np.random.default_rng(seed)
    starts = [np.zeros((K, dim)) if init is None else np.asarray(init, dtype=float).reshape(K, dim)]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(-0.25 * bound, 0.25 * bound, size=(K, dim)))
    bounds = [(-bound, bound)] * (K * dim)

    best = None
    best_hist = None
    values = []
    for a0 in starts:
        hist = []
        res = minimize(
            lambda v: objective(v)[:2],
            a0.ravel(),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=lambda v: hist.append(objective(v)[0]),
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11, "maxcor": 30},
        )
        values.append(float(res.fun))
        if best is None or res.fun < best.fun:
            best, best_hist = res, hist
    a = best.x.reshape(K, dim)
    J, _, lam, xs = objective(best.x)
    path = ControlPath(t0, T, a, bound)
    return DirectResult(
        path=path,
        trajectory=Trajectory(times, xs, path),
        value=float(J),
        costate=Costate(times, -lam),
        start_values=np.array(values),
        history=best_hist,
    )


def discrete_pmp_residual(res: DirectResult, f_grad: Callable | None, eps: float = 0.0) -> float:
    """Max deviation of the reconstructed costate from the continuous costate equation.

    Compares ``(p_{k+1} - p_k)/h`` with the right-hand side evaluated at
    ``(x_k, p_k)``; for an optimal discrete control this is O(h). The
    first step is skipped because the trapezoid rule gives the initial
    running-cost node half weight.
    """
    xs = res.trajectory.states
    p = res.costate.p
    times = res.trajectory.times
    h = times[1] - times[0]
    worst = 0.0
    for k in range(1, len(times) - 1):
        gf = np.zeros(3) if f_grad is None else np.asarray(f_grad(xs[k], times[k]), dtype=float)
        _, dp = pmp_rhs(xs[k], p[k], gf, eps)
        worst = max(worst, float(np.max(np.abs((p[k + 1] - p[k]) / h - dp))))
    return worst


def synthesis_field(u, a, t: float, eps: float | None = None) -> np.ndarray:
    """Optimal feedback velocity ``-D_H u B^T`` (or ``-Du B^ε (B^ε)^T``) from a value grid."""
    eps = u.eps if eps is None else eps
    a = np.asarray(a, dtype=float)
    if not np.all(u.in_box(a)):
        raise ValueError("synthesis evaluated outside the value grid box")
    alpha = u.feedback(a, t, eps=eps)
    out = exact_step(np.zeros(a.shape), alpha, 1.0, eps)
    # exact_step from the origin gives (α1, α2, εα3); add the x-dependent vertical part
    out[..., 2] += a[..., 0] * alpha[..., 1] - a[..., 1] * alpha[..., 0]
    return out
