import numpy as np
import pytest

from helpers import coupled_field
from heisenberg_mfg.coupling import GaugeKernel, default_initial_density
from heisenberg_mfg.hgroup import canonical, group_mul, h_distance, torus_distance
from heisenberg_mfg.hjb import HJBConfig, ValueGrid, lattice_points, solve_hjb
from heisenberg_mfg.measures import EmpiricalMeasure, wasserstein1
from heisenberg_mfg.transport import (
    BoxExitError,
    MeasureFlow,
    TestFunction,
    density_snapshot,
    holder_quarter_check,
    horizontal_step,
    push_forward,
    sde_ensemble,
    sde_step_ensemble,
    step_rng,
    weak_residual,
    weak_residual_series,
)


@pytest.fixture(scope="module")
def coupled_grid():
    F = coupled_field()
    cfg = HJBConfig(n=(16, 16, 16), M=16)
    Fl = F(lattice_points(cfg))
    return solve_hjb(np.broadcast_to(Fl, (cfg.M + 1,) + Fl.shape), Fl, cfg)


@pytest.fixture(scope="module")
def starts():
    return default_initial_density("periodic").sample(2048, np.random.default_rng(0))


@pytest.fixture(scope="module")
def vertical_grid():
    cfg = HJBConfig(n=(9, 9, 9), M=8, control_bound=2.0, mode="box", lower=(-2, -2, -2), upper=(2, 2, 2))
    vals = np.broadcast_to(lattice_points(cfg)[..., 2], (cfg.M + 1,) + cfg.n).copy()
    return ValueGrid(cfg, vals)


def _static_grid(M=8):
    cfg = HJBConfig(n=(8, 8, 8), M=M)
    return ValueGrid(cfg, np.zeros((M + 1,) + cfg.n))


def test_horizontal_step_matches_group_law():
    r = np.random.default_rng(0)
    x, d = r.normal(size=(20, 3)), r.normal(size=(20, 2))
    np.testing.assert_allclose(horizontal_step(x, d), group_mul(x, np.c_[d, np.zeros(20)]), atol=1e-14)
    # far from the axis the truncated coefficients stop growing
    far = np.array([[50.0, -40.0, 0.0]])
    step = horizontal_step(far, np.array([[0.1, 0.1]]), trunc=2.0)
    assert abs(step[0, 2]) < 1.0


def test_static_flow(starts):
    u = _static_grid()
    ens, flow = push_forward(u, starts=starts)
    for k in range(len(flow)):
        np.testing.assert_array_equal(flow.samples[k], canonical(starts))
        assert flow.mass(k) == pytest.approx(1.0, abs=1e-12)
    assert np.all(ens.controls == 0)
    assert holder_quarter_check(flow) == 0.0
    assert weak_residual(flow, u) == 0.0


def test_push_forward_needs_a_source():
    with pytest.raises(ValueError):
        push_forward(_static_grid())
    m0 = default_initial_density("periodic")
    ens, _ = push_forward(_static_grid(), m0, 64, seed=3)
    np.testing.assert_array_equal(ens.starts, m0.sample(64, np.random.default_rng(3)))


def test_vertical_fixture_first_step(vertical_grid):
    ens, flow = push_forward(vertical_grid, starts=np.array([[0.0, 1.0, 0.0]]))
    np.testing.assert_allclose(ens.controls[0, 0], [1.0, 0.0], atol=1e-12)
    h = vertical_grid.h
    np.testing.assert_allclose(ens.paths[0, 1], [h, 1.0, -h], atol=1e-12)
    assert flow.exits == 0 and not flow.periodic


def test_superposition_identity_and_exact_steps(coupled_grid, starts):
    ens, flow = push_forward(coupled_grid, starts=starts)
    for k in range(len(flow)):
        np.testing.assert_array_equal(flow.samples[k], ens.snapshot(k, True).samples)
    assert np.all(np.isfinite(ens.paths))
    # every arc is the exact leg of its recorded control
    steps = horizontal_step(ens.paths[:, :-1], ens.controls * coupled_grid.h)
    np.testing.assert_array_equal(steps, ens.paths[:, 1:])
    assert np.max(np.abs(ens.controls)) <= coupled_grid.cfg.control_bound


def test_box_exits_counted_and_fatal():
    cfg = HJBConfig(n=(9, 9, 9), M=8, control_bound=1.0, mode="box", lower=(-1, -1, -1), upper=(1, 1, 1))
    # the value falls to the right, so every particle drifts out through x1 = 1
    u = solve_hjb(None, lambda x: -2 * x[..., 0], cfg)
    starts = np.tile([0.5, 0.0, 0.0], (100, 1))
    with pytest.raises(BoxExitError):
        push_forward(u, starts=starts)
    ens, flow = push_forward(u, starts=starts, max_exit_fraction=1.0)
    assert flow.exits == 100
    inside = np.tile([-0.9, 0.0, 0.0], (100, 1))
    assert push_forward(u, starts=inside)[1].exits == 0


def test_weak_residual_trivial_cases(coupled_grid, starts):
    _, flow = push_forward(coupled_grid, starts=starts)
    one = TestFunction("one", lambda x: np.ones(x.shape[:-1]), lambda x: np.zeros(x.shape[:-1] + (2,)))
    assert weak_residual(flow, coupled_grid, [one]) == 0.0
    r = weak_residual_series(flow, coupled_grid)
    assert r.shape == (3, coupled_grid.M)
    assert r.max() < 0.1
    with pytest.raises(ValueError):
        weak_residual(flow.subset([0, 2, 4]), coupled_grid)


def test_weak_residual_detects_a_wrong_flow(coupled_grid, starts):
    _, flow = push_forward(coupled_grid, starts=starts)
    good = weak_residual(flow, coupled_grid)
    # reversing time gives a flow that does not solve the continuity equation
    rev = MeasureFlow(flow.times, flow.samples[::-1].copy(), True)
    assert weak_residual(rev, coupled_grid) > 5 * good


def test_zero_noise_is_deterministic_bitwise(coupled_grid, starts):
    ens, flow = push_forward(coupled_grid, starts=starts)
    paths, sflow = sde_ensemble(coupled_grid, starts, 0.0, seed=4)
    np.testing.assert_array_equal(paths, ens.paths)
    np.testing.assert_array_equal(sflow.samples, flow.samples)


def test_sde_rejects_bad_parameters():
    with pytest.raises(ValueError):
        sde_step_ensemble(None, -0.1, np.zeros((2, 3)), 0.1, step_rng(0, 0))
    with pytest.raises(ValueError):
        sde_step_ensemble(None, 0.1, np.zeros((2, 3)), 0.0, step_rng(0, 0))


def test_diffusion_variance():
    sigma, dt, steps = 0.5, 0.05, 10
    x = np.zeros((100_000, 3))
    for k in range(steps):
        x = sde_step_ensemble(None, sigma, x, dt, step_rng(11, k))
    t = dt * steps
    for i in range(2):
        v = x[:, i].var()
        # standard error of a sample variance of a Gaussian
        se = 2 * sigma * t * np.sqrt(2 / (x.shape[0] - 1))
        assert abs(v - 2 * sigma * t) <= 3 * se


def test_sde_streams_are_reproducible_and_distinct():
    x = np.zeros((10, 3))
    a = sde_step_ensemble(None, 0.1, x, 0.1, step_rng(5, 2))
    b = sde_step_ensemble(None, 0.1, x, 0.1, step_rng(5, 2))
    c = sde_step_ensemble(None, 0.1, x, 0.1, step_rng(5, 3))
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_sde_translation_covariance(coupled_grid, starts):
    z = np.array([1.0, -2.0, 3.0])
    x = starts[:200]
    for k in range(4):
        a = sde_step_ensemble(coupled_grid, 0.2, x, coupled_grid.h, step_rng(7, k), k=k + 1)
        b = sde_step_ensemble(coupled_grid, 0.2, group_mul(z, x), coupled_grid.h, step_rng(7, k), k=k + 1)
        np.testing.assert_allclose(b, group_mul(z, a), atol=1e-12)
        x = a


def test_holder_constant_bounded_by_identity_coupling(coupled_grid, starts):
    _, flow = push_forward(coupled_grid, starts=starts[:256])
    C = holder_quarter_check(flow, n_times=9)
    idx = np.unique(np.rint(np.linspace(0, len(flow) - 1, 9)).astype(int))
    bound = 0.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            s, t = flow.times[idx[a]], flow.times[idx[b]]
            cost = np.mean(torus_distance(flow.samples[idx[a]], flow.samples[idx[b]]))
            bound = max(bound, cost / (t - s) ** 0.25)
    assert 0 < C <= bound + 1e-12
    with pytest.raises(ValueError):
        holder_quarter_check(flow.subset(range(5)))


def test_vanishing_viscosity_coherence(coupled_grid):
    x0 = default_initial_density("periodic").sample(8192, np.random.default_rng(1))
    _, det = sde_ensemble(coupled_grid, x0, 0.0)
    k = coupled_grid.M // 2
    d = []
    for sigma in (0.2, 0.1, 0.05, 0.02):
        _, fl = sde_ensemble(coupled_grid, x0, sigma, seed=2)
        d.append(wasserstein1(fl[k], det[k]))
    assert all(a > b for a, b in zip(d, d[1:]))


def test_density_snapshot():
    r = np.random.default_rng(3)
    N, B = 64_000, 4
    mu = EmpiricalMeasure(r.random((N, 3)), periodic=True)
    snap = density_snapshot(mu, B)
    assert snap.mass.sum() == pytest.approx(1.0, abs=1e-12)
    counts = snap.mass * N
    expect = N / B**3
    assert np.max(np.abs(counts - expect)) <= 4.5 * np.sqrt(expect)
    one = density_snapshot(EmpiricalMeasure(np.array([[0.3, 0.3, 0.9]]), periodic=True), 4)
    assert np.count_nonzero(one.mass) == 1 and one.mass[1, 1, 3] == 1.0
    free = density_snapshot(EmpiricalMeasure(r.normal(size=(500, 3))), (3, 4, 5))
    assert free.mass.shape == (3, 4, 5) and free.mass.sum() == pytest.approx(1.0, abs=1e-12)
    smooth = density_snapshot(mu, 4, kernel=GaugeKernel(0.35))
    assert np.ptp(smooth.density) < 0.2
    with pytest.raises(ValueError):
        density_snapshot(mu, 0)


def test_density_bounded_along_coupled_flow(coupled_grid, starts):
    _, flow = push_forward(coupled_grid, starts=starts)
    peaks = [density_snapshot(flow[k], 4).density.max() for k in range(len(flow))]
    assert max(peaks) < 3 * peaks[0]


def test_gauge_distance_of_horizontal_leg_is_its_length():
    # sanity for the Lipschitz-in-time bound: a straight horizontal leg has gauge length |a| h
    x = np.random.default_rng(4).normal(size=(10, 3))
    a = np.random.default_rng(5).normal(size=(10, 2))
    y = horizontal_step(x, a * 0.1)
    np.testing.assert_allclose(h_distance(y, x), 0.1 * np.linalg.norm(a, axis=1), rtol=1e-12)
