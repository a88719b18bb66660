import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisenberg_mfg.config import RunConfig
from heisenberg_mfg.coupling import CouplingField, weighted_convolution
from heisenberg_mfg.equilibrium import (
    GapStats,
    SnapshotCoupling,
    _LatticeConvolutions,
    _replacement,
    _subsample,
    certify_mild,
    coupling_operators,
    flow_distances,
    hjb_config,
    residuals_from_history,
    solve_equilibrium,
)
from heisenberg_mfg.hjb import HJBConfig, ValueGrid, lattice_points
from heisenberg_mfg.measures import EmpiricalMeasure
from heisenberg_mfg.transport import horizontal_step, push_forward

SMALL = RunConfig(n=(8, 8, 8), M=8, N=512, n_snapshots=5, coupling_atoms=128, metric_atoms=128,
                  certify_particles=128, max_iters=4)


@pytest.fixture(scope="module")
def coupled_run():
    return solve_equilibrium(dataclasses.replace(SMALL, strength_F=0.5, strength_G=0.5))


def test_subsample():
    assert _subsample(10, 20).tolist() == list(range(10))
    idx = _subsample(1000, 64)
    assert len(np.unique(idx)) == 64 and idx.min() >= 0 and idx.max() < 1000
    assert np.ptp(np.diff(idx)) <= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=300), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_replacement_keeps_group_proportions(labels, frac, seed):
    group = np.asarray(labels)
    n_rep = int(round(frac * group.size))
    rep = _replacement(group, n_rep, np.random.default_rng(seed))
    assert rep.size == n_rep and np.unique(rep).size == n_rep
    assert np.all(np.diff(rep) > 0)
    for g in np.unique(group):
        size = np.sum(group == g)
        taken = np.sum(group[rep] == g)
        # the share of every group is its quota rounded one way or the other
        assert abs(taken - size * n_rep / group.size) < 1.0 + 1e-9
    again = _replacement(group, n_rep, np.random.default_rng(seed))
    np.testing.assert_array_equal(rep, again)


def test_snapshot_coupling_time_interpolation():
    cfg = RunConfig(strength_F=0.7)
    opF, _ = coupling_operators(cfg)
    r = np.random.default_rng(0)
    clouds = [r.random((40, 3)) for _ in range(3)]
    F = SnapshotCoupling(opF, np.array([0.0, 0.5, 1.0]), clouds)
    x = r.random((25, 3))
    fields = [CouplingField(opF, EmpiricalMeasure(c, None, True))(x) for c in clouds]
    np.testing.assert_allclose(F(x, 0.5), fields[1], rtol=1e-14)
    np.testing.assert_allclose(F(x, 0.75), 0.5 * (fields[1] + fields[2]), rtol=1e-13)
    np.testing.assert_allclose(F(x, 1.0), fields[2], rtol=1e-14)
    lat = lattice_points(HJBConfig(n=(4, 4, 4), M=4))
    on = F.on_lattice(lat, np.linspace(0, 1, 5))
    np.testing.assert_allclose(on[1], F(lat, 0.25), rtol=1e-13)


def test_incremental_lattice_convolution_matches_full():
    opF, _ = coupling_operators(RunConfig(strength_F=0.3))
    lat = lattice_points(HJBConfig(n=(6, 6, 6), M=4))
    r = np.random.default_rng(1)
    clouds = [r.random((60, 3)) for _ in range(2)]
    inc = _LatticeConvolutions(opF, lat)
    inc.update(clouds)
    moved = [c.copy() for c in clouds]
    moved[0][::7] = r.random((9, 3))
    got = inc.update(moved)
    w = np.full(60, 1 / 60)
    full = np.stack([0.3 * weighted_convolution(opF.kernel, c, w, lat, True) for c in moved])
    np.testing.assert_allclose(got, full, atol=1e-13)


def test_certify_mild_known_gaps():
    cfg = HJBConfig(n=(8, 8, 8), M=4)
    u = ValueGrid(cfg, np.zeros((5,) + cfg.n))
    starts = np.random.default_rng(2).random((30, 3))
    ens, _ = push_forward(u, starts=starts)
    g = certify_mild(ens, u, lambda x, t: np.full(x.shape[:-1], 2.0), lambda x: np.ones(x.shape[:-1]))
    # J = ∫ 2 dt + 1 = 3 along static arcs, against a zero value
    np.testing.assert_allclose(g.gaps, 3.0, rtol=1e-14)
    assert g.passes(-1.0, 3.0 + 1e-12) and not g.passes(-1.0, 2.0)
    bad = ValueGrid(HJBConfig(n=(8, 8, 8), M=8), np.zeros((9, 8, 8, 8)))
    with pytest.raises(ValueError):
        certify_mild(ens, bad, None, None)


def test_decoupled_problem_is_solved_in_one_step():
    rep = solve_equilibrium(dataclasses.replace(SMALL, strength_F=0.0, strength_G=0.0))
    assert rep.residuals == [0.0] and rep.converged
    assert max(abs(rep.gaps.max), abs(rep.gaps.min)) <= 1e-10
    assert np.all(rep.ensemble.controls == 0) and rep.certified
    np.testing.assert_array_equal(rep.u.values, 0.0)


def test_coupled_run_bookkeeping(coupled_run):
    rep = coupled_run
    assert 1 <= rep.iterations <= SMALL.max_iters
    assert rep.history.shape == (rep.iterations + 1, SMALL.n_snapshots, SMALL.metric_atoms, 3)
    assert residuals_from_history(rep.history, True, SMALL.metric_atoms) == rep.residuals
    assert rep.converged == (rep.residuals[-1] <= SMALL.tol_fp)
    # the first response moves the flow, and the initial marginal never changes
    assert rep.residuals[0] > 0
    np.testing.assert_array_equal(rep.flow.samples[0], rep.response.paths[:, 0])
    assert rep.snapshot_index.tolist() == [0, 2, 4, 6, 8]
    s = rep.summary()
    assert s["iterations"] == rep.iterations and s["config.N"] == SMALL.N
    assert s["residual_monotone"] == bool(np.all(np.diff(rep.residuals) <= 0))
    assert flow_distances(rep.flow, rep.flow).max() == 0.0


def test_every_arc_is_a_best_response_arc(coupled_run):
    rep = coupled_run
    # each particle carries the arc of one of the computed responses, so its
    # controls rebuild its path through the exact horizontal legs
    p = rep.ensemble.paths
    steps = horizontal_step(p[:, :-1], rep.ensemble.controls * rep.u.h)
    np.testing.assert_array_equal(steps, p[:, 1:])


def test_run_is_reproducible(coupled_run):
    again = solve_equilibrium(dataclasses.replace(SMALL, strength_F=0.5, strength_G=0.5))
    assert again.summary() == coupled_run.summary()


def test_hjb_config_mapping():
    cfg = RunConfig(mode="nonperiodic", eps=0.05, n=(9, 9, 17), M=16)
    h = hjb_config(cfg)
    assert h.mode == "box" and h.eps == 0.05 and h.n == (9, 9, 17) and h.lower == cfg.box_lower
    assert isinstance(GapStats(0, 0, 0, 0, np.zeros(1)).passes(-1, 1), bool)
