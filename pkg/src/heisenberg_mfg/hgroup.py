"""Algebra and geometry of the first Heisenberg group.

Points are numpy arrays whose trailing axis holds the three coordinates
``(x1, x2, x3)``; every function broadcasts over leading axes. The group law
is

    x ⊕ y = (x1 + y1, x2 + y2, x3 + y3 - x2*y1 + x1*y2),

the horizontal fields are ``X1 = ∂1 - x2 ∂3`` and ``X2 = ∂2 + x1 ∂3`` and the
periodicity cell is ``Q = [0, 1)^3`` tiled by left translations with integer
points.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
from numba import njit

__all__ = [
    "PavageDecomposition",
    "group_mul",
    "group_inv",
    "group_minus",
    "dilate",
    "gauge_norm",
    "h_distance",
    "pavage",
    "canonical",
    "torus_distance",
    "torus_distance_matrix",
    "euclidean_distance_matrix",
    "matrix_B",
    "matrix_B_eps",
    "psi_N",
    "matrix_B_trunc",
    "horizontal_gradient_fd",
    "horizontal_laplacian_fd",
    "horizontal_divergence_fd",
]

ORIGIN = np.zeros(3)
_E1 = np.array([1.0, 0.0, 0.0])
_E2 = np.array([0.0, 1.0, 0.0])


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != 3:
        raise ValueError(f"expected trailing axis of length 3, got shape {a.shape}")
    return a


def group_mul(a, b) -> np.ndarray:
    """Group product ``a ⊕ b``."""
    a = _as_points(a)
    b = _as_points(b)
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 + b1, a2 + b2, a3 + b3 - a2 * b1 + a1 * b2], axis=-1)


def group_inv(a) -> np.ndarray:
    return -_as_points(a)


def group_minus(a, b) -> np.ndarray:
    """``a ⊖ b = a ⊕ b^{-1}``."""
    return group_mul(a, group_inv(b))


def dilate(lam: float, a) -> np.ndarray:
    """Intrinsic dilation ``(λ a1, λ a2, λ² a3)``."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    a = _as_points(a)
    return a * np.array([lam, lam, lam * lam])


def gauge_norm(a) -> np.ndarray:
    a = _as_points(a)
    r2 = a[..., 0] ** 2 + a[..., 1] ** 2
    return np.sqrt(np.sqrt(r2 * r2 + a[..., 2] ** 2))


def h_distance(a, b) -> np.ndarray:
    """Gauge distance ``‖b^{-1} ⊕ a‖``.

    The difference is taken on the left so that the distance is invariant under
    left translations, ``d(z ⊕ a, z ⊕ b) = d(a, b)``. Since the gauge norm is
    invariant under inversion this is also ``‖a^{-1} ⊕ b‖``.
    """
    return gauge_norm(group_mul(group_inv(b), a))


class PavageDecomposition(NamedTuple):
    """Unique splitting ``x = z ⊕ q`` with ``z`` integral and ``q ∈ [0, 1)^3``."""

    z: np.ndarray
    q: np.ndarray


def pavage(a) -> PavageDecomposition:
    a = _as_points(a)
    z1 = np.floor(a[..., 0])
    z2 = np.floor(a[..., 1])
    q1 = a[..., 0] - z1
    q2 = a[..., 1] - z2
    # rounding can push a fractional part onto 1.0 for tiny negative inputs
    hi1 = q1 >= 1.0
    hi2 = q2 >= 1.0
    q1 = np.where(hi1, 0.0, q1)
    z1 = np.where(hi1, z1 + 1.0, z1)
    q2 = np.where(hi2, 0.0, q2)
    z2 = np.where(hi2, z2 + 1.0, z2)
    s3 = a[..., 2] + z2 * q1 - z1 * q2
    z3 = np.floor(s3)
    q3 = s3 - z3
    hi3 = q3 >= 1.0
    q3 = np.where(hi3, 0.0, q3)
    z3 = np.where(hi3, z3 + 1.0, z3)
    z = np.stack([z1, z2, z3], axis=-1).astype(np.int64)
    q = np.stack([q1, q2, q3], axis=-1)
    return PavageDecomposition(z, q)


def canonical(a) -> np.ndarray:
    """Representative of ``a`` in the periodicity cell."""
    return pavage(a).q


@njit(cache=True, inline="always")
def _torus_dist_canonical(a1, a2, a3, b1, b2, b3):
    # min over z1, z2 in {-2..2}; for fixed (z1, z2) the best integer z3 is
    # the one nearest to the fractional offset of the third coordinate
    if (a1, a2, a3) > (b1, b2, b3):
        # fixed argument order keeps the rounded result exactly symmetric
        a1, a2, a3, b1, b2, b3 = b1, b2, b3, a1, a2, a3
    best = np.inf
    for z1 in range(-2, 3):
        for z2 in range(-2, 3):
            p1 = b1 + z1
            p2 = b2 + z2
            w1 = p1 - a1
            w2 = p2 - a2
            # third coordinate of a^{-1} ⊕ (z ⊕ b) without the z3 term
            c = b3 - z2 * b1 + z1 * b2 - a3 + a2 * p1 - a1 * p2
            w3 = c - np.floor(c + 0.5)
            r2 = w1 * w1 + w2 * w2
            d = np.sqrt(np.sqrt(r2 * r2 + w3 * w3))
            if d < best:
                best = d
    return best


@njit(cache=True)
def _torus_distance_pairs(a, b):
    n = a.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _torus_dist_canonical(a[i, 0], a[i, 1], a[i, 2], b[i, 0], b[i, 1], b[i, 2])
    return out


@njit(cache=True)
def _torus_distance_matrix(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = _torus_dist_canonical(a[i, 0], a[i, 1], a[i, 2], b[j, 0], b[j, 1], b[j, 2])
    return out


def torus_distance(a, b) -> np.ndarray:
    """Distance on the Heisenberg torus.

    Both arguments are canonicalized first; the infimum over representatives
    is then taken over translates ``z ⊕ b`` with ``z1, z2 ∈ {-2, ..., 2}``
    and the optimal integer ``z3`` for each pair, which contains the
    ``{-2, ..., 2}^3`` window.
    """
    qa = canonical(a)
    qb = canonical(b)
    qa, qb = np.broadcast_arrays(qa, qb)
    shape = qa.shape[:-1]
    out = _torus_distance_pairs(
        np.ascontiguousarray(qa.reshape(-1, 3)), np.ascontiguousarray(qb.reshape(-1, 3))
    )
    return out.reshape(shape)


def torus_distance_matrix(a, b) -> np.ndarray:
    """Pairwise torus distances between two point sets, shape ``(len(a), len(b))``."""
    qa = np.ascontiguousarray(canonical(np.atleast_2d(a)))
    qb = np.ascontiguousarray(canonical(np.atleast_2d(b)))
    return _torus_distance_matrix(qa, qb)


def euclidean_distance_matrix(a, b) -> np.ndarray:
    a = np.atleast_2d(_as_points(a))
    b = np.atleast_2d(_as_points(b))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def matrix_B(a) -> np.ndarray:
    """3×2 matrix whose columns are ``X1(a)`` and ``X2(a)``."""
    a = _as_points(a)
    out = np.zeros(a.shape[:-1] + (3, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def matrix_B_eps(a, eps: float) -> np.ndarray:
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    a = _as_points(a)
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., :, :2] = matrix_B(a)
    out[..., 2, 2] = eps
    return out


def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def psi_N(xi, N: float) -> np.ndarray:
    """C² cutoff equal to ``xi`` on ``[-N, N]`` and to zero outside ``[-2N, 2N]``.

    Between ``N`` and ``2N`` the identity is multiplied by ``1 - S`` with ``S``
    the quintic smoothstep, whose first two derivatives vanish at both ends.
    """
    if not N > 0:
        raise ValueError(f"truncation level must be positive, got {N}")
    xi = np.asarray(xi, dtype=float)
    s = (np.abs(xi) - N) / N
    return xi * (1.0 - _smoothstep5(s))


def matrix_B_trunc(a, eps: float, N: float) -> np.ndarray:
    if not eps > 0:
        raise ValueError(f"eps must be positive for the truncated matrix, got {eps}")
    a = _as_points(a)
    out = matrix_B_eps(a, eps)
    out[..., 2, 0] = -psi_N(a[..., 1], N)
    out[..., 2, 1] = psi_N(a[..., 0], N)
    return out


def _check_step(h: float) -> None:
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")


def _xderiv(f: Callable, a: np.ndarray, e: np.ndarray, h: float) -> np.ndarray:
    return (f(group_mul(a, h * e)) - f(group_mul(a, -h * e))) / (2.0 * h)


def horizontal_gradient_fd(
    f: Callable, a, h: float = 1e-4, richardson: bool = False
) -> np.ndarray:
    """Horizontal gradient ``(X1 f, X2 f)`` by group-translated central differences.

    ``a ⊕ (±h, 0, 0)`` moves exactly along the integral curve of ``X1``, so the
    only error is the usual O(h²) of a central difference. With
    ``richardson=True`` the h and h/2 estimates are combined to O(h⁴).
    """
    _check_step(h)
    a = _as_points(a)

    def grad(step):
        return np.stack([_xderiv(f, a, _E1, step), _xderiv(f, a, _E2, step)], axis=-1)

    if not richardson:
        return grad(h)
    return (4.0 * grad(h / 2) - grad(h)) / 3.0


def horizontal_laplacian_fd(f: Callable, a, h: float = 1e-4) -> np.ndarray:
    """``X1² f + X2² f`` by second central differences along both horizontal lines."""
    _check_step(h)
    a = _as_points(a)
    fa = f(a)
    total = 0.0
    for e in (_E1, _E2):
        total = total + f(group_mul(a, h * e)) + f(group_mul(a, -h * e)) - 2.0 * fa
    return total / (h * h)


def horizontal_divergence_fd(v: Callable, a, h: float = 1e-4) -> np.ndarray:
    """``X1 v1 + X2 v2`` for a horizontal field ``v`` returning arrays ``(..., 2)``."""
    _check_step(h)
    a = _as_points(a)
    d1 = (v(group_mul(a, h * _E1))[..., 0] - v(group_mul(a, -h * _E1))[..., 0]) / (2 * h)
    d2 = (v(group_mul(a, h * _E2))[..., 1] - v(group_mul(a, -h * _E2))[..., 1]) / (2 * h)
    return d1 + d2
