import numpy as np
import pytest
from hypothesis import given, settings

from helpers import PeriodicInstance, cell_point, coupled_field, integer_point
from heisenberg_mfg.control import direct_optimize, exact_step
from heisenberg_mfg.hgroup import group_mul
from heisenberg_mfg.hjb import (
    WRAP_EUCLIDEAN,
    HJBConfig,
    ValueGrid,
    check_periodicity,
    control_set,
    estimate_lipschitz,
    estimate_semiconcavity,
    lattice_points,
    lattice_spacing,
    solve_hjb,
)

BOX = dict(mode="box", lower=(-1.0, -1.0, -1.0), upper=(1.0, 1.0, 1.0))


def _box_grid(fn, n=17, M=4, T=1.0):
    """Value grid whose every slice is ``fn(x, t)`` sampled on a box lattice."""
    cfg = HJBConfig(n=(n, n, n), M=M, T=T, control_bound=1.0, **BOX)
    lat = lattice_points(cfg)
    times = np.linspace(0, T, M + 1)
    return ValueGrid(cfg, np.stack([fn(lat, t) for t in times]))


@pytest.fixture(scope="module")
def coupled_solution():
    F = coupled_field()
    cfg = HJBConfig(n=(16, 16, 16), M=16)
    lat = lattice_points(cfg)
    Fl = F(lat)
    return solve_hjb(np.broadcast_to(Fl, (cfg.M + 1,) + Fl.shape), Fl, cfg), Fl


def test_config_validation():
    with pytest.raises(ValueError):
        HJBConfig(mode="sphere")
    with pytest.raises(ValueError):
        HJBConfig(n=(16, 16, 24))
    with pytest.raises(ValueError):
        HJBConfig(eps=0.1)
    with pytest.raises(ValueError):
        HJBConfig(M=0)
    with pytest.raises(ValueError):
        HJBConfig(mode="box", lower=(0, 0, 0), upper=(1, -1, 1))
    with pytest.raises(ValueError):
        # one time step would leave the cell
        HJBConfig(M=1, control_bound=1.0)
    HJBConfig(mode="box", eps=0.1, **{k: v for k, v in BOX.items() if k != "mode"})


def test_control_set_shape_and_rotation():
    cfg = HJBConfig()
    c0, c1 = control_set(cfg, 0), control_set(cfg, 1)
    assert c0.shape == (1 + 4 * 32, 3)
    assert np.all(c0[0] == 0)
    assert np.max(np.linalg.norm(c0, axis=1)) == pytest.approx(cfg.control_bound)
    assert np.all(c0[:, 2] == 0)
    assert not np.allclose(c0, c1)
    ce = control_set(HJBConfig(eps=0.2, **BOX), 0)
    assert ce.shape == (3 * (1 + 4 * 32), 3)
    assert set(np.unique(ce[:, 2])) == {-0.125, 0.0, 0.125}


def test_lattice_layout():
    cfg = HJBConfig(n=(4, 4, 8))
    lat = lattice_points(cfg)
    np.testing.assert_allclose(lattice_spacing(cfg), [0.25, 0.25, 0.125])
    assert lat.shape == (4, 4, 8, 3)
    assert lat.min() == 0 and lat[..., 2].max() == 0.875
    box = HJBConfig(n=(5, 5, 5), **BOX)
    assert lattice_points(box)[-1, -1, -1].tolist() == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("mode", ["periodic", "box"])
def test_constant_solution(mode):
    cfg = HJBConfig(n=(8, 8, 8), M=8, **(BOX if mode == "box" else {}))
    u = solve_hjb(None, np.full(cfg.n, 2.5), cfg)
    assert np.max(np.abs(u.values - 2.5)) <= 1e-10


@pytest.mark.parametrize("mode", ["periodic", "box"])
def test_time_to_go_solution(mode):
    cfg = HJBConfig(n=(8, 8, 8), M=8, T=2.0, **(BOX if mode == "box" else {}))
    u = solve_hjb(lambda x, t: np.ones(x.shape[:-1]), None, cfg)
    expect = (cfg.T - u.times)[:, None, None, None]
    assert np.max(np.abs(u.values - expect)) <= 1e-10
    # array and callable inputs agree
    v = solve_hjb(np.ones((cfg.M + 1,) + cfg.n), np.zeros(cfg.n), cfg)
    np.testing.assert_array_equal(u.values, v.values)


def test_sweep_is_the_discrete_dynamic_programming_step():
    inst = PeriodicInstance()
    cfg = HJBConfig(n=(8, 8, 8), M=8)
    u = solve_hjb(inst.f, inst.g, cfg)
    lat = lattice_points(cfg)
    r = np.random.default_rng(0)
    for _ in range(20):
        k = int(r.integers(0, cfg.M))
        idx = tuple(r.integers(0, 8, 3))
        x = lat[idx]
        a = control_set(cfg, k)
        moved = exact_step(np.broadcast_to(x, a.shape), a[:, :2], cfg.h)
        cand = 0.5 * cfg.h * np.sum(a * a, axis=1) + u.interpolate(moved, k + 1)
        expect = cand.min() + cfg.h * inst.f(x, u.times[k])
        assert u.values[(k,) + idx] == pytest.approx(expect, abs=1e-13)


def test_comparison_and_constant_shift():
    inst = PeriodicInstance()
    cfg = HJBConfig(n=(8, 8, 8), M=8)
    lo = solve_hjb(inst.f, inst.g, cfg)
    hi = solve_hjb(inst.f, lambda x: inst.g(x) + 0.05 * np.cos(2 * np.pi * x[..., 1]) ** 2, cfg)
    assert np.all(hi.values >= lo.values - 1e-14)
    up = solve_hjb(inst.f, lambda x: inst.g(x) + 0.3, cfg)
    np.testing.assert_allclose(up.values, lo.values + 0.3, atol=1e-12)


def test_periodicity_and_euclidean_negative_control(coupled_solution):
    u, Fl = coupled_solution
    assert check_periodicity(u) <= 1e-8
    # wrapping faces as if the cell were a Euclidean torus breaks the invariance
    bad = solve_hjb(np.broadcast_to(Fl, (u.M + 1,) + Fl.shape), Fl, u.cfg, wrap=WRAP_EUCLIDEAN)
    assert check_periodicity(bad) > 1e-3


@settings(max_examples=50, deadline=None)
@given(cell_point, integer_point)
def test_interpolant_translation_invariant(x, z):
    inst = PeriodicInstance()
    cfg = HJBConfig(n=(8, 8, 8), M=2)
    u = ValueGrid(cfg, np.stack([inst.g(lattice_points(cfg))] * 3))
    a = u.interpolate(x[None], 0)
    b = u.interpolate(group_mul(z, x)[None], 0)
    assert abs(a[0] - b[0]) <= 1e-12


def test_interpolation_exact_on_nodes_and_linear_functions():
    u = _box_grid(lambda x, t: 0.3 * x[..., 0] - 2 * x[..., 1] + x[..., 2] + t)
    r = np.random.default_rng(1)
    x = r.uniform(-1, 1, (100, 3))
    np.testing.assert_allclose(u.interpolate(x, 2), 0.3 * x[:, 0] - 2 * x[:, 1] + x[:, 2] + 0.5, atol=1e-13)
    np.testing.assert_allclose(u(x, 0.625), u.interpolate(x, 2) + 0.125, atol=1e-13)
    inst = PeriodicInstance()
    cfg = HJBConfig(n=(8, 8, 8), M=2)
    lat = lattice_points(cfg)
    g = ValueGrid(cfg, np.stack([inst.g(lat)] * 3))
    np.testing.assert_allclose(g.interpolate(lat, 1), inst.g(lat), atol=1e-13)


def test_value_grid_rejects_bad_values():
    cfg = HJBConfig(n=(4, 4, 4), M=2)
    with pytest.raises(ValueError):
        ValueGrid(cfg, np.zeros((2, 4, 4, 4)))
    v = np.zeros((3, 4, 4, 4))
    v[1, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ValueGrid(cfg, v)


def test_lipschitz_estimates_of_known_functions():
    u = _box_grid(lambda x, t: 3 * x[..., 0] + 0.5 * x[..., 1] + 0 * t)
    Lx, Lt = estimate_lipschitz(u)
    assert Lx == pytest.approx(3.0, abs=1e-12) and Lt == pytest.approx(0.0, abs=1e-12)
    cfg = HJBConfig(n=(8, 8, 8), M=4)
    v = ValueGrid(cfg, np.stack([np.full(cfg.n, 2 * t) for t in np.linspace(0, 1, 5)]))
    Lx, Lt = estimate_lipschitz(v)
    assert Lx == pytest.approx(0.0, abs=1e-12) and Lt == pytest.approx(2.0, abs=1e-12)


def test_semiconcavity_of_known_functions():
    quad = _box_grid(lambda x, t: -np.sum(x**2, axis=-1) + 0 * t)
    assert estimate_semiconcavity(quad, 0) == pytest.approx(-2.0, abs=1e-10)
    assert estimate_semiconcavity(quad, 0.5, h=0.25) == pytest.approx(-2.0, abs=1e-10)
    # a convex kink is not semiconcave: the quotient grows like 2/h
    kink = _box_grid(lambda x, t: np.abs(x[..., 0]) + 0 * t)
    h = 0.125
    assert estimate_semiconcavity(kink, 0, h=h) == pytest.approx(2 / h, rel=1e-10)
    assert estimate_semiconcavity(kink, 0, h=h / 2) == pytest.approx(4 / h, rel=1e-10)
    concave_kink = _box_grid(lambda x, t: -np.abs(x[..., 0]) + 0 * t)
    assert estimate_semiconcavity(concave_kink, 0) <= 1e-12
    with pytest.raises(ValueError):
        estimate_semiconcavity(quad, 0, h=0.0)


def test_coupled_solution_regularity(coupled_solution):
    u, _ = coupled_solution
    Lx, Lt = estimate_lipschitz(u)
    assert 0 < Lx < 5 and 0 < Lt < 5
    assert estimate_semiconcavity(u, 0) < 50
    # the terminal slice is the terminal cost itself
    np.testing.assert_array_equal(u.values[-1], coupled_solution[1])


def test_grid_value_close_to_trajectory_optimum_coarse():
    inst = PeriodicInstance()
    cfg = HJBConfig(n=(16, 16, 16), M=32)
    u = solve_hjb(inst.f, inst.g, cfg)
    r = np.random.default_rng(2)
    errs = []
    for _ in range(8):
        x, k = r.random(3), int(r.integers(0, cfg.M))
        d = direct_optimize(x, k * cfg.h, inst.f, inst.g, K=cfg.M - k, f_grad=inst.f_grad,
                            g_grad=inst.g_grad, n_starts=2)
        errs.append(u.interpolate(x[None], k)[0] - d.value)
    # the coarse lattice is within a few hundredths of the oracle
    assert np.max(np.abs(errs)) < 4e-2


def test_box_mode_with_vertical_control():
    cfg = HJBConfig(n=(9, 9, 9), M=8, eps=0.5, **BOX)
    # terminal cost pulls the vertical coordinate down; ε-controls act on x3 directly
    u = solve_hjb(None, lambda x: x[..., 2], cfg)
    u0 = solve_hjb(None, lambda x: x[..., 2], HJBConfig(n=(9, 9, 9), M=8, **BOX))
    centre = np.array([[0.0, 0.0, 0.0]])
    assert u.interpolate(centre, 0)[0] < u0.interpolate(centre, 0)[0] <= 0.0 + 1e-12
