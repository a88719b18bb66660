"""Shared fixtures and strategies for the test suite."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from heisenberg_mfg.coupling import (
    CouplingField,
    CouplingOperator,
    GaugeKernel,
    default_initial_density,
)
from heisenberg_mfg.measures import EmpiricalMeasure

TWO_PI = 2 * np.pi
PYTEST_CONFIG = None  # set by conftest, used to print acceptance lines live

coord = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
point = st.tuples(coord, coord, coord).map(lambda t: np.array(t))
unit = st.floats(0.0, 0.999999, allow_nan=False)
cell_point = st.tuples(unit, unit, unit).map(lambda t: np.array(t))
integer_point = st.tuples(*[st.integers(-3, 3)] * 3).map(lambda t: np.array(t, dtype=float))


def coupled_field(strength: float = 0.1, eps: float = 0.35, atoms: int = 512, seed: int = 0):
    """Running cost of the default periodic game frozen at the initial density."""
    m0 = default_initial_density("periodic")
    mu = EmpiricalMeasure(m0.sample(atoms, np.random.default_rng(seed)), periodic=True)
    return CouplingField(CouplingOperator(GaugeKernel(eps), "periodic", strength), mu)


class SmoothInstance:
    """Random smooth decoupled control problem ``(f, g)`` with exact gradients."""

    def __init__(self, seed: int, amp: float = 0.15):
        r = np.random.default_rng(seed)
        self.c = r.uniform(-amp, amp, 4)
        self.ph = r.uniform(0, TWO_PI, 4)
        self.q = r.uniform(0.05, 0.2)
        self.centre = r.uniform(-0.5, 0.5, 3)

    def f(self, x, t):
        x = np.asarray(x, dtype=float)
        c, ph = self.c, self.ph
        return (c[0] * np.cos(TWO_PI * x[..., 0] + ph[0]) * (1 + 0.5 * t)
                + c[1] * np.sin(TWO_PI * x[..., 1] + ph[1])
                + c[2] * np.cos(np.pi * x[..., 2] + ph[2]))

    def f_grad(self, x, t):
        x = np.asarray(x, dtype=float)
        c, ph = self.c, self.ph
        return np.stack([
            -c[0] * TWO_PI * np.sin(TWO_PI * x[..., 0] + ph[0]) * (1 + 0.5 * np.asarray(t)),
            c[1] * TWO_PI * np.cos(TWO_PI * x[..., 1] + ph[1]),
            -c[2] * np.pi * np.sin(np.pi * x[..., 2] + ph[2]),
        ], axis=-1)

    def g(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.centre
        return self.q * np.sum(d * d, axis=-1) + self.c[3] * np.sin(TWO_PI * x[..., 0] + self.ph[3])

    def g_grad(self, x):
        x = np.asarray(x, dtype=float)
        out = 2 * self.q * (x - self.centre)
        out[..., 0] += self.c[3] * TWO_PI * np.cos(TWO_PI * x[..., 0] + self.ph[3])
        return out


class PeriodicInstance:
    """Smooth running and terminal costs invariant under the integer translates."""

    def __init__(self, amp: float = 1.0):
        self.amp = amp
        op = CouplingOperator(GaugeKernel(0.3), "periodic", 0.01 * amp)
        self.bump = CouplingField(op, EmpiricalMeasure(np.array([[0.3, 0.6, 0.5]]), periodic=True))

    def f(self, x, t):
        x = np.asarray(x, dtype=float)
        return self.amp * (0.1 * np.cos(TWO_PI * x[..., 0]) * (1 + 0.5 * t) + 0.1 * np.sin(TWO_PI * x[..., 1]))

    def f_grad(self, x, t):
        x = np.asarray(x, dtype=float)
        return self.amp * np.stack([
            -0.1 * TWO_PI * np.sin(TWO_PI * x[..., 0]) * (1 + 0.5 * np.asarray(t)),
            0.1 * TWO_PI * np.cos(TWO_PI * x[..., 1]),
            np.zeros(x.shape[:-1]),
        ], axis=-1)

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return self.amp * 0.1 * np.sin(TWO_PI * x[..., 0]) + self.bump(x)

    def g_grad(self, x):
        x = np.asarray(x, dtype=float)
        out = self.bump.grad(x)
        out[..., 0] += self.amp * 0.1 * TWO_PI * np.cos(TWO_PI * x[..., 0])
        return out
