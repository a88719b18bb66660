"""Compare the grid value function with single-trajectory optimization.

Solves the Hamilton-Jacobi equation for a frozen coupling on a coarse torus
lattice, then optimizes trajectories from a few starting points directly and
by shooting. The three numbers per point should agree to within the lattice
error.
"""

import numpy as np

from heisenberg_mfg.coupling import CouplingField, CouplingOperator, GaugeKernel, default_initial_density
from heisenberg_mfg.control import direct_optimize, pmp_shoot
from heisenberg_mfg.hjb import HJBConfig, lattice_points, solve_hjb
from heisenberg_mfg.measures import EmpiricalMeasure

m0 = default_initial_density("periodic")
mu = EmpiricalMeasure(m0.sample(256, np.random.default_rng(0)), periodic=True)
F = CouplingField(CouplingOperator(GaugeKernel(0.35), "periodic", 0.1), mu)

cfg = HJBConfig(n=(16, 16, 16), M=32)
Fl = F(lattice_points(cfg))
u = solve_hjb(np.broadcast_to(Fl, (cfg.M + 1,) + Fl.shape), Fl, cfg)


def f(x, t):
    return F(x)


def f_grad(x, t):
    return F.grad(x)


rng = np.random.default_rng(1)
print(f"{'x0':>26s} {'grid':>9s} {'direct':>9s} {'shooting':>9s}")
for _ in range(5):
    x0 = rng.random(3)
    d = direct_optimize(x0, 0.0, f, F, K=cfg.M, f_grad=f_grad, g_grad=F.grad, vectorized=True)
    s = pmp_shoot(x0, 0.0, d.costate.p[0], f_grad, F, K=cfg.M, f=f, g_grad=F.grad)
    grid = u.interpolate(x0[None], 0)[0]
    print(f"{np.array2string(x0, precision=3):>26s} {grid:9.5f} {d.value:9.5f} {s.value:9.5f}")
