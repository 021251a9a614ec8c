"""Acceptance gate: one test per shipped guarantee, tolerances pinned.

Each test carries @pytest.mark.acceptance(n, label) so the run ends with
a per-criterion pass/fail table (see conftest). Instances are frozen:
the expressions and seeds below were chosen once, from parameter scans
kept out of the test suite, and the asserted bounds carry the margins
those scans measured. Nothing here should be loosened to make a failure
go away without understanding which guarantee broke.
"""

import time

import numpy as np
import pytest

import oracles
from geosink.cli import bench_sphere_apply, bench_torus_apply, fit_loglog_slope
from geosink.measures import discretize_torus
from geosink.parabolic import (
    c_transform,
    circle_ot_oracle,
    exp_convergence_fit,
    ma_residual,
    solve_parabolic,
)
from geosink.phase import shifted_lattice_check, stationary_phase_check
from geosink.sinkhorn import (
    entropic_cost,
    hilbert_distance,
    initial_state,
    marginal_errors,
    plan_row,
    run_until,
    sinkhorn_step,
)
from geosink.sphere import (
    SphereDenseApplicator,
    SphereKernelSpec,
    SphereSHTApplicator,
    SphericalGrid,
    antenna_kernel_apply,
    antenna_kernel_matrix,
)
from geosink.torus import (
    TorusGrid,
    TorusKernelSpec,
    TorusLatticeApplicator,
    fft_apply,
    torus_cost_matrix,
)

SMOOTH_F = "3*(1-cos(2*pi*x1))"
SMOOTH_G = "3*(1-cos(2*pi*(x1-0.375)))"
MILD_F = "0.3*(1-cos(2*pi*x1))"
MILD_G = "0.3*(1-cos(2*pi*(x1-0.25)))"
PEAKED_F = "6*(1-cos(2*pi*x1))"
PEAKED_G = "6*(1-cos(2*pi*(x1-0.25)))"


def _torus_solve(f, g, k, tol, A=2.0, m_max=None):
    p = discretize_torus(f, k, 1).weights
    q = discretize_torus(g, k, 1).weights
    grid = TorusGrid(1, k)
    app = TorusLatticeApplicator(
        grid, TorusKernelSpec("gaussian", k=k), p, q, mode="fft"
    )
    state = run_until(initial_state(app), app, tol=tol, A=A, m_max=m_max)
    return state, app


def _random_weights(rng, n):
    w = rng.random(n) + 0.1
    return w / w.sum()


@pytest.mark.acceptance(1, "smooth torus instance meets 1e-9 marginals inside 1s")
def test_smooth_instance_fast_and_accurate():
    t0 = time.perf_counter()
    state, app = _torus_solve(SMOOTH_F, SMOOTH_G, k=32, tol=1e-9)
    e_row, e_col = marginal_errors(state, app)
    wall = time.perf_counter() - t0
    assert e_row <= 1e-9
    assert e_col <= 1e-9
    assert wall < 1.0


@pytest.mark.acceptance(2, "energy never increases along randomized runs")
def test_energy_monotone_on_random_instances():
    rng = np.random.default_rng(20260817)
    checked = 0

    def assert_descent(state):
        F = np.array([r.F for r in state.trace])
        assert F.size >= 2
        assert np.all(np.diff(F) <= 1e-12)

    for n, k in ((1, 4), (1, 8), (1, 16), (2, 4), (2, 8)):
        grid = TorusGrid(n, k)
        spec = TorusKernelSpec("gaussian", k=k)
        for _ in range(8):
            p = _random_weights(rng, grid.size)
            q = _random_weights(rng, grid.size)
            app = TorusLatticeApplicator(grid, spec, p, q, mode="fft")
            assert_descent(run_until(initial_state(app), app, tol=0.0, m_max=25))
            checked += 1

    for W in (4, 6, 8):
        grid = SphericalGrid(W)
        for k in (2, 4):
            spec = SphereKernelSpec("heat", k=k)
            for _ in range(12):
                p = _random_weights(rng, grid.size)
                q = _random_weights(rng, grid.size)
                app = SphereSHTApplicator(grid, spec, p, q)
                assert_descent(run_until(initial_state(app), app, tol=0.0, m_max=25))
                checked += 1

    assert checked >= 100


@pytest.mark.acceptance(3, "potentials refine at first order toward the fine grid")
def test_mesh_refinement_first_order():
    t0 = time.perf_counter()
    pots = {}
    for k in (16, 32, 64, 128, 256):
        state, _ = _torus_solve(SMOOTH_F, SMOOTH_G, k, tol=1e-13, A=12.0)
        pots[k] = state.u.values
    errs = [
        hilbert_distance(pots[k], pots[256][:: 256 // k]) for k in (16, 32, 64, 128)
    ]
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    in_band = [1.6 <= r <= 2.6 for r in ratios]
    assert any(a and b for a, b in zip(in_band, in_band[1:])), ratios
    assert time.perf_counter() - t0 < 120.0


@pytest.mark.acceptance(4, "iterate ceil(t k) tracks the parabolic flow at first order")
@pytest.mark.slow
def test_fixed_time_iterate_matches_pde():
    t0 = time.perf_counter()
    t_phys, k_grid = 0.5, 512
    grid = TorusGrid(1, k_grid)
    traj = solve_parabolic(
        np.zeros(k_grid), MILD_F, MILD_G, t_phys, grid, record_times=[t_phys]
    )
    u_pde = traj[-1].u
    diffs = {}
    for k in (32, 64, 128):
        m = int(np.ceil(t_phys * k))
        state, _ = _torus_solve(MILD_F, MILD_G, k, tol=0.0, m_max=m)
        assert state.m == m
        diffs[k] = hilbert_distance(state.u.values, u_pde[:: k_grid // k])
    r1 = diffs[32] / diffs[64]
    r2 = diffs[64] / diffs[128]
    assert 1.5 <= r1 <= 2.8, (r1, diffs)
    assert 1.5 <= r2 <= 2.8, (r2, diffs)
    assert time.perf_counter() - t0 < 600.0


@pytest.mark.acceptance(5, "fast kernel application matches the dense route")
def test_fast_backends_match_dense():
    rng = np.random.default_rng(11)

    # torus: FFT application against the explicit circulant, N <= 256
    for n, k in ((1, 16), (1, 64), (1, 256), (2, 16)):
        grid = TorusGrid(n, k)
        spec = TorusKernelSpec("gaussian", k=k)
        profile = np.exp(spec.log_cost_profile(grid))
        prof = profile.reshape(grid.shape)
        K = np.empty((grid.size, grid.size))
        for j in range(grid.size):
            shift = np.unravel_index(j, grid.shape)
            K[:, j] = np.roll(prof, shift, axis=tuple(range(n))).ravel()
        w = rng.random(grid.size) + 0.1
        fast = fft_apply(profile, w)
        dense = K @ w
        rel = np.abs(fast - dense).max() / np.abs(dense).max()
        assert rel <= 1e-10, (n, k, rel)

    # sphere: SHT backend against the dense log-domain backend at W=8,
    # per application and then along full iterates
    grid = SphericalGrid(8)
    p = _random_weights(rng, grid.size)
    q = _random_weights(rng, grid.size)
    spec = SphereKernelSpec("heat", k=4)
    sht = SphereSHTApplicator(grid, spec, p, q)
    dense = SphereDenseApplicator(grid, spec, p, q)
    u = 0.05 * rng.standard_normal(grid.size)
    assert np.abs(sht.softmin_to_target(u) - dense.softmin_to_target(u)).max() <= 1e-8
    assert np.abs(sht.softmin_to_source(u) - dense.softmin_to_source(u)).max() <= 1e-8

    s1, s2 = initial_state(sht), initial_state(dense)
    for _ in range(40):
        s1 = sinkhorn_step(s1, sht)
        s2 = sinkhorn_step(s2, dense)
        assert np.abs(s1.u.values - s2.u.values).max() <= 1e-8
        assert np.abs(s1.v.values - s2.v.values).max() <= 1e-8


@pytest.mark.acceptance(6, "per-application wall time scales quasi-linearly")
@pytest.mark.slow
def test_application_time_slopes():
    torus_pairs = bench_torus_apply([2**e for e in range(10, 17)])
    torus_slope = fit_loglog_slope(torus_pairs)
    assert 1.0 <= torus_slope <= 1.3, (torus_slope, torus_pairs)

    sphere_pairs = bench_sphere_apply([16, 23, 32, 45, 64])
    sphere_slope = fit_loglog_slope(sphere_pairs)
    assert 1.35 <= sphere_slope <= 1.7, (sphere_slope, sphere_pairs)


@pytest.mark.acceptance(7, "lattice sums follow the stationary phase law")
def test_stationary_phase_rates():
    def alpha(pts):
        x = np.atleast_2d(pts)[:, 0]
        return (1.0 - np.cos(2.0 * np.pi * x)) / (4.0 * np.pi**2)

    def one(pts):
        return np.ones(np.atleast_2d(pts).shape[0])

    ks = (64, 128, 256)
    errs = [stationary_phase_check(alpha, one, [0.0], k)["err"] for k in ks]

    # the scaled error err(k) * k stays bounded by its first value
    c_on = errs[0] * ks[0]
    for k, e in zip(ks[1:], errs[1:]):
        assert e * k <= 1.15 * c_on, (k, e * k, c_on)

    for i in range(len(ks) - 1):
        ratio = errs[i] / errs[i + 1]
        assert 1.5 <= ratio <= 2.8, (ks[i], ratio)

    # shifting the lattice off the minimizer keeps the same first-order law
    for k in ks:
        e_off = shifted_lattice_check(
            lambda pts, k=k: alpha(np.atleast_2d(pts) - 0.5 / k), one, [0.5 / k], k
        )["err"]
        assert e_off * k <= 2.0 * c_on, (k, e_off * k, c_on)


@pytest.mark.acceptance(8, "entropic value sits log(k)/k-close to the circle optimum")
def test_entropic_value_near_circle_oracle():
    for k in (32, 64, 128):
        state, app = _torus_solve(SMOOTH_F, SMOOTH_G, k, tol=1e-12, A=12.0)
        value = entropic_cost(state, app)
        p = discretize_torus(SMOOTH_F, k, 1).weights
        q = discretize_torus(SMOOTH_G, k, 1).weights
        exact = circle_ot_oracle(p, q)["cost"]
        assert abs(value - exact) <= 5.0 * np.log(k) / k, (k, value, exact)


@pytest.mark.acceptance(9, "plan mass concentrates on the oracle-optimal graph")
def test_plan_concentrates_on_optimal_graph():
    k = 64
    p = discretize_torus(PEAKED_F, k, 1).weights
    q = discretize_torus(PEAKED_G, k, 1).weights
    state, app = _torus_solve(PEAKED_F, PEAKED_G, k, tol=1e-12, A=12.0)

    pairs = circle_ot_oracle(p, q)["pairs"]
    graph = np.array([(i / k, j / k) for i, j, _ in pairs])
    ys = np.arange(k) / k
    dy = np.abs(ys[:, None] - graph[None, :, 1])
    dy = np.minimum(dy, 1.0 - dy)

    far_mass = 0.0
    for i in range(k):
        dx = np.abs(i / k - graph[:, 0])
        dx = np.minimum(dx, 1.0 - dx)
        dist = np.sqrt(dx[None, :] ** 2 + dy**2).min(axis=1)
        row = plan_row(state, app, i)
        far_mass += row[dist >= 0.2].sum()
    assert far_mass <= 0.01, far_mass


@pytest.mark.acceptance(10, "antenna kernel application is exact and degree-stable")
def test_antenna_kernel_exact_and_stable():
    rng = np.random.default_rng(7)
    k = 8
    grid = SphericalGrid(2 * k)
    values = rng.standard_normal(grid.size)

    dense = antenna_kernel_matrix(grid, k) @ values
    fast = antenna_kernel_apply(grid, values, k)
    assert np.abs(fast - dense).max() <= 1e-8

    # the expansion carries zero weight above degree k, so padding the
    # multiplier tail must not move a single bit
    padded = antenna_kernel_apply(grid, values, k, degree=k + 4)
    assert np.abs(fast - padded).max() <= 1e-12

    p = grid.node_weights.copy()
    sht = SphereSHTApplicator(grid, SphereKernelSpec("antenna", k), p, p)
    dn = SphereDenseApplicator(grid, SphereKernelSpec("antenna", k), p, p)
    u = 0.05 * rng.standard_normal(grid.size)
    assert np.abs(sht.softmin_to_target(u) - dn.softmin_to_target(u)).max() <= 1e-8


@pytest.mark.acceptance(11, "c-transform involution identities hold exactly")
def test_c_transform_involution_identities():
    rng = np.random.default_rng(20260817)
    k = 64
    pts = TorusGrid(1, k).points()
    cost = torus_cost_matrix(pts, pts)
    for _ in range(1000):
        # dyadic entries on the power-of-two lattice keep every float
        # subtraction exact, so both identities hold bitwise
        u = rng.integers(-512, 513, size=k) / 256.0
        uc = c_transform(u, cost)
        ucc = c_transform(uc, cost)
        uccc = c_transform(ucc, cost)
        assert np.array_equal(uccc, uc)
        assert np.all(ucc <= u)


@pytest.mark.acceptance(12, "long-run parabolic flow solves the equation, rate stable")
@pytest.mark.slow
def test_parabolic_longrun_residual_and_rate():
    k_grid, horizon = 256, 6.0
    grid = TorusGrid(1, k_grid)
    records = list(np.linspace(0.5, horizon, 12))

    rates = []
    for halving in (1, 2):
        dt = 0.2 * grid.spacing**2 / halving
        traj = solve_parabolic(
            np.zeros(k_grid), MILD_F, MILD_G, horizon, grid,
            dt=dt, record_times=records,
        )
        resid = ma_residual(traj[-1].u, MILD_F, MILD_G, grid)
        assert resid <= 1e-2, (halving, resid)
        rates.append(exp_convergence_fit(traj)["rate"])

    assert rates[0] > 0.0 and rates[1] > 0.0
    assert abs(rates[1] - rates[0]) <= 0.10 * rates[0], rates
