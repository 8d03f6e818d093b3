import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from ontosim import rng
from ontosim.grw import (LAMBDA_SI, CollapseParams, FlashHistory, apply_collapse, collapse_center_density,
                         draw_jump_schedule, localization_amplitude, run_grw, sample_collapse_centers,
                         tail_mass)
from ontosim.numerics import (NumericalError, WaveFunction, build_grid,
                              evolve_schrodinger, integrate, normalize, probability_density)
from ontosim.scenarios import gaussian_packet, pointer_state
from ontosim.stats import chi_square_counts


def uniform_state(grid):
    return normalize(WaveFunction(grid, np.ones(grid.shape, dtype=complex)))


def two_bump(grid, d, b, w_plus):
    x = grid.coords
    g = lambda c: (2 * math.pi * b**2) ** -0.25 * np.exp(-(x - c) ** 2 / (4 * b**2))
    return normalize(WaveFunction(grid, math.sqrt(w_plus) * g(d) + math.sqrt(1 - w_plus) * g(-d)))


# parameters and schedule ------------------------------------------------------

def test_params_validation(grid1d):
    with pytest.raises(ValueError):
        CollapseParams(0.0, 1.0)
    with pytest.raises(ValueError):
        CollapseParams(1.0, -1.0)
    with pytest.raises(ValueError):
        CollapseParams(1.0, grid1d.spacing).check_resolvable(grid1d)
    CollapseParams(1.0, 2 * grid1d.spacing).check_resolvable(grid1d)


def test_si_rate_gives_no_events():
    assert draw_jump_schedule(1, LAMBDA_SI, 1e3, 0) == []


def test_zero_horizon_empty():
    assert draw_jump_schedule(3, 5.0, 0.0, 1) == []


def test_schedule_validation():
    with pytest.raises(ValueError):
        draw_jump_schedule(0, 1.0, 1.0, 0)
    with pytest.raises(ValueError):
        draw_jump_schedule(1, 0.0, 1.0, 0)


def test_schedule_poisson_mean_and_uniform_index():
    counts, index_counts = [], np.zeros(4)
    for seed in range(400):
        sched = draw_jump_schedule(4, 25.0, 1.0, seed)
        counts.append(len(sched))
        for _, k in sched:
            index_counts[k] += 1
    assert abs(np.mean(counts) - 100) < 3 * math.sqrt(100)
    assert abs(np.mean(counts) - 100) < 3 * math.sqrt(100 / 400)
    res = chi_square_counts(index_counts, np.full(4, index_counts.sum() / 4))
    assert res.pvalue > 0.01


def test_lambda_scaling_doubles_count():
    a = np.mean([len(draw_jump_schedule(2, 5.0, 1.0, s)) for s in range(200)])
    b = np.mean([len(draw_jump_schedule(2, 10.0, 1.0, s)) for s in range(200)])
    se = math.sqrt(10 / 200 * 4 + 20 / 200)  # sd of b - 2a
    assert abs(b - 2 * a) < 3 * se


@given(st.integers(1, 5), st.floats(0.1, 50), st.floats(0.01, 3), st.integers(0, 2**32))
def test_schedule_sorted_reproducible(n, lam, T, seed):
    s1 = draw_jump_schedule(n, lam, T, seed)
    assert s1 == draw_jump_schedule(n, lam, T, seed)
    times = [t for t, _ in s1]
    assert times == sorted(times)
    assert all(0 <= t <= T and 0 <= k < n for t, k in s1)


# centre density ---------------------------------------------------------------

def test_center_density_normalized(packet):
    p = collapse_center_density(packet, 0, 1.0)
    assert abs(integrate(p, packet.grid) - 1) < 1e-6


def test_center_density_near_delta(grid1d):
    amps = np.zeros(grid1d.shape, dtype=complex)
    amps[160] = 1
    psi = normalize(WaveFunction(grid1d, amps))
    sigma = 2.0
    x0 = grid1d.coords[160]
    p = collapse_center_density(psi, 0, sigma)
    expected = np.exp(-(grid1d.coords - x0) ** 2 / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)
    assert np.max(np.abs(p - expected)) < 1e-3


def test_center_density_matches_quadrature(grid1d):
    psi = gaussian_packet(grid1d, 1.0, 0.5, 0.7)
    sigma = 0.8
    x = grid1d.coords
    rho = probability_density(psi)
    direct = np.array([np.sum(rho * np.exp(-(x - c) ** 2 / (2 * sigma**2))) for c in x])
    direct *= grid1d.spacing / math.sqrt(2 * math.pi * sigma**2)
    np.testing.assert_allclose(collapse_center_density(psi, 0, sigma), direct, atol=1e-12)


def test_center_density_even(grid1d):
    psi = two_bump(grid1d, 4.0, 0.6, 0.5)
    p = collapse_center_density(psi, 0, 1.0)
    mirror = p[(-np.arange(grid1d.points)) % grid1d.points]
    assert np.max(np.abs(p - mirror)) < 1e-10


def test_center_density_branch_weights(grid1d):
    psi = two_bump(grid1d, 6.0, 0.5, 0.3)
    p = collapse_center_density(psi, 0, 0.8)
    x = grid1d.coords
    assert abs(integrate(np.where(x > 0, p, 0), grid1d) - 0.3) < 1e-3
    assert abs(integrate(np.where(x < 0, p, 0), grid1d) - 0.7) < 1e-3


def test_center_density_unresolvable(packet):
    with pytest.raises(ValueError):
        collapse_center_density(packet, 0, packet.grid.spacing)


def test_center_density_two_particle_marginal():
    g = build_grid(2, 16.0, 128, [(0, "x"), (1, "x")])
    psi = pointer_state(g, 4.0, 0.5, 1.0, 0.3)
    p0 = collapse_center_density(psi, 0, 1.0)
    assert p0.shape == (128,)
    x = g.coords
    assert abs(integrate(np.where(x > 0, p0, 0), g) - 0.3) < 1e-3


def test_sampled_centers_chi_square(grid1d):
    psi = two_bump(grid1d, 4.0, 0.6, 0.4)
    sigma = 1.0
    gen = rng.stream(17, "test/centers")
    centers = sample_collapse_centers(psi, 0, sigma, 10_000, gen)[:, 0]
    p = collapse_center_density(psi, 0, sigma)
    edges = np.append(grid1d.coords, grid1d.extent) - 0.5 * grid1d.spacing
    centers = np.where(centers >= edges[-1], centers - 2 * grid1d.extent, centers)
    observed, _ = np.histogram(centers, bins=edges)
    expected = p / p.sum() * len(centers)
    assert chi_square_counts(observed, expected).pvalue > 0.01


# collapse map ------------------------------------------------------------------

def test_collapse_uniform_gives_gaussian(grid1d):
    sigma, x0 = 1.5, 2.34
    out = apply_collapse(uniform_state(grid1d), 0, [x0], sigma)
    expected = np.exp(-(grid1d.coords - x0) ** 2 / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)
    assert np.max(np.abs(probability_density(out) - expected)) < 1e-8
    assert abs(out.norm() - 1) < 1e-12


def test_collapse_twice_narrows(grid1d):
    sigma, x0 = 1.5, -1.0
    once = apply_collapse(uniform_state(grid1d), 0, [x0], sigma)
    twice = apply_collapse(once, 0, [x0], sigma)
    s2 = sigma / math.sqrt(2)
    expected = np.exp(-(grid1d.coords - x0) ** 2 / (2 * s2**2)) / math.sqrt(2 * math.pi * s2**2)
    assert np.max(np.abs(probability_density(twice) - expected)) < 1e-8
    assert abs(twice.norm() - 1) < 1e-12


def test_two_bump_suppression(grid1d):
    d, b, sigma = 5.0, 0.4, 1.0
    psi = two_bump(grid1d, d, b, 0.5)
    out = apply_collapse(psi, 0, [d], sigma)
    x = grid1d.coords
    near = integrate(np.where(np.abs(x - d) < d / 2, probability_density(out), 0), grid1d)
    assert near >= 1 - 1e-6
    # amplitude ratio far/near changes by exactly exp(-(2d)^2 / (4 sigma^2))
    i_near, i_far = np.argmin(np.abs(x - d)), np.argmin(np.abs(x + d))
    before = abs(psi.amplitudes[i_far] / psi.amplitudes[i_near])
    after = abs(out.amplitudes[i_far] / out.amplitudes[i_near])
    assert abs(after / before / math.exp(-(2 * d) ** 2 / (4 * sigma**2)) - 1) < 1e-10


def test_norm_guard(grid1d):
    amps = np.zeros(grid1d.shape, dtype=complex)
    amps[10] = 1
    psi = normalize(WaveFunction(grid1d, amps))
    with pytest.raises(NumericalError):
        apply_collapse(psi, 0, [10.0], 0.4)


def test_collapse_center_validation(packet):
    with pytest.raises(ValueError):
        localization_amplitude(packet.grid, 0, [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        localization_amplitude(packet.grid, 0, [25.0], 1.0)


def test_collapse_two_particle_only_touches_owner():
    g = build_grid(2, 16.0, 64, [(0, "x"), (1, "x")])
    psi = pointer_state(g, 4.0, 0.5, 1.0, 0.5)
    out = apply_collapse(psi, 0, [4.0], 1.0)
    x = g.coords
    rho = probability_density(out)
    assert integrate(np.where(x[:, None] < 0, rho, 0), g) < 1e-6
    # pointer marginal unchanged
    np.testing.assert_allclose(rho.sum(axis=0) * g.spacing, probability_density(psi).sum(axis=0) * g.spacing,
                               atol=1e-9)


@given(st.floats(-10, 10), st.floats(0.7, 3.0), st.floats(-5, 5))
def test_collapse_norm_property(center, sigma, x0):
    g = build_grid(1, 20.0, 128, [(0, "x")])
    psi = gaussian_packet(g, x0, 1.0, 1.5)
    out = apply_collapse(psi, 0, [center], sigma)
    assert abs(out.norm() - 1) < 1e-12


# tails ---------------------------------------------------------------------------

def test_tail_mass_three_sigma(grid1d):
    sigma = 1.0
    out = apply_collapse(uniform_state(grid1d), 0, [0.0], sigma)
    assert abs(tail_mass(out, [0.0], 3 * sigma) - special.erfc(3 / math.sqrt(2))) < 1e-3
    assert tail_mass(out, [0.0], 5 * sigma) > 0


def test_tail_mass_limits(packet):
    assert tail_mass(packet, [0.0], 0.0) == 1.0
    assert tail_mass(packet, [0.0], packet.grid.extent) < 1e-8


def test_tail_mass_two_dims():
    g = build_grid(2, 8.0, 64, [(0, "x"), (0, "y")])
    psi = gaussian_packet(g, 0.0, 0.0, 1.0)
    # |psi|^2 is a 2D standard normal: P(r > R) = exp(-R^2 / 2)
    assert abs(tail_mass(psi, [0.0, 0.0], 2.0) - math.exp(-2.0)) < 0.02


def test_tails_positive_after_many_collapses(grid1d):
    gen = rng.stream(3, "test/tails")
    psi = gaussian_packet(grid1d, 0.0, 0.0, 3.0)
    for _ in range(6):
        c = sample_collapse_centers(psi, 0, 1.0, 1, gen)[0]
        psi = apply_collapse(psi, 0, c, 1.0)
        assert tail_mass(psi, c, 5.0) > 1e-300


# run_grw ---------------------------------------------------------------------------

def test_no_jumps_is_pure_schrodinger(packet, free1):
    params = CollapseParams(1e-12, 1.0)
    psi_T, hist = run_grw(packet, free1, params, 2.0, 5, 0.01)
    assert len(hist) == 0
    assert np.array_equal(psi_T.amplitudes, evolve_schrodinger(packet, free1, 0.01, 200).amplitudes)


def test_run_grw_events(packet, free1):
    params = CollapseParams(10.0, 1.0)
    psi_T, hist = run_grw(packet, free1, params, 1.0, 8, 0.01)
    hist.validate()
    assert len(hist) == len(draw_jump_schedule(1, 10.0, 1.0, 8))
    for e in hist:
        assert e.applied_time >= e.time - 1e-12 and e.applied_time < e.time + 0.01 + 1e-12
        assert abs(e.post_norm - 1) < 1e-12
        assert packet.grid.contains(np.array(e.center)[None])[0]
    assert abs(psi_T.norm() - 1) < 1e-9


def test_run_grw_deterministic(packet, free1):
    params = CollapseParams(10.0, 1.0)
    a_psi, a = run_grw(packet, free1, params, 1.0, 8, 0.01)
    b_psi, b = run_grw(packet, free1, params, 1.0, 8, 0.01)
    assert a.events == b.events
    assert np.array_equal(a_psi.amplitudes, b_psi.amplitudes)


def test_forced_hit_and_callbacks(packet, free1):
    seen, steps = [], []
    params = CollapseParams(1e-9, 1.0)
    _, hist = run_grw(packet, free1, params, 0.5, 1, 0.01, forced=[(0.255, 0)],
                      on_step=lambda t, psi: steps.append(t),
                      on_collapse=lambda e, before, after: seen.append((e, before.time, after.norm())))
    assert len(hist) == 1 and hist.events[0].forced
    assert math.isclose(hist.events[0].applied_time, 0.26)
    assert len(seen) == 1 and abs(seen[0][2] - 1) < 1e-12
    assert len(steps) == 51


def test_forced_hit_validation(packet, free1):
    with pytest.raises(ValueError):
        run_grw(packet, free1, CollapseParams(1.0, 1.0), 0.5, 1, 0.01, forced=[(2.0, 0)])
    with pytest.raises(ValueError):
        run_grw(packet, free1, CollapseParams(1.0, 1.0), 0.5, 1, 0.01, forced=[(0.1, 3)])


def test_history_validation():
    from ontosim.grw import CollapseEvent
    e1 = CollapseEvent(0.2, 0, (0.0,), 1.0, 1.0)
    e2 = CollapseEvent(0.1, 0, (0.0,), 1.0, 1.0)
    with pytest.raises(ValueError):
        FlashHistory([e1, e2]).validate()


def test_poisson_counts_in_runs(packet, free1):
    params = CollapseParams(20.0, 1.0)
    counts = [len(run_grw(packet, free1, params, 0.5, s, 0.01)[1]) for s in range(60)]
    mean = np.mean(counts)
    assert abs(mean - 10) < 3 * math.sqrt(10 / 60)
