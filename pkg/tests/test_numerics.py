import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ontosim.numerics import (HamiltonianParams, NumericalError, PotentialSpec, SplitStepPropagator,
                              WaveFunction, build_grid, evolve_schrodinger, expected_energy, integrate,
                              marginal_density, max_stable_dt, normalize, probability_density)
from ontosim.scenarios import gaussian_packet

from conftest import gaussian_width


# grids ------------------------------------------------------------------------

def test_build_grid_spacing():
    g = build_grid(1, 20.0, 256, [("p0", "x")])
    assert g.spacing == 0.15625
    assert g.spacing * g.points == 2 * g.extent
    assert g.coords[0] == -20.0 and g.coords[-1] == 20.0 - g.spacing


def test_two_particle_layout():
    g = build_grid(2, 10.0, 128, [("p0", "x"), ("p1", "x")])
    assert g.n_particles == 2
    assert g.shape == (128, 128)
    assert g.particle_axes(0) == (0,) and g.particle_axes(1) == (1,)
    assert g.spatial_axes(1) == ("x",)


@pytest.mark.parametrize("points", [100, 8, 255, 0])
def test_rejects_bad_point_counts(points):
    with pytest.raises(ValueError):
        build_grid(1, 20.0, points, [("p0", "x")])


def test_rejects_too_many_axes():
    with pytest.raises(ValueError):
        build_grid(4, 5.0, 16, [(0, "x"), (1, "x"), (2, "x"), (3, "x")])


@pytest.mark.parametrize("layout", [
    [(0, "x"), (0, "x")],          # same axis twice
    [(1, "x")],                    # particle 0 owns nothing
    [(0, "w")],                    # unknown spatial axis
])
def test_rejects_inconsistent_layout(layout):
    with pytest.raises(ValueError):
        build_grid(len(layout), 5.0, 16, layout)


def test_rejects_bad_extent():
    with pytest.raises(ValueError):
        build_grid(1, 0.0, 16, [(0, "x")])


@given(st.floats(-50, 50))
def test_wrap_lands_inside(x):
    g = build_grid(1, 5.0, 16, [(0, "x")])
    w = g.wrap(np.array([[x]]))
    assert g.contains(w).all()
    assert math.isclose(math.remainder(w[0, 0] - x, 10.0), 0.0, abs_tol=1e-9)


# normalization and densities -------------------------------------------------

def test_uniform_normalization(grid1d):
    psi = normalize(WaveFunction(grid1d, np.full(grid1d.shape, 3.0 + 0j)))
    np.testing.assert_allclose(psi.amplitudes, 1.0 / math.sqrt(grid1d.points * grid1d.spacing), rtol=1e-14)
    assert abs(psi.norm() - 1) < 1e-12


def test_normalize_idempotent(packet):
    again = normalize(packet)
    np.testing.assert_allclose(again.amplitudes, packet.amplitudes, atol=1e-12)


def test_normalize_zero_state(grid1d):
    with pytest.raises(NumericalError):
        normalize(WaveFunction(grid1d, np.zeros(grid1d.shape)))


@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                min_size=16, max_size=16).filter(lambda v: sum(abs(c) for c in v) > 1e-3),
       st.floats(0.1, 10))
def test_normalize_scales_by_positive_real(values, scale):
    g = build_grid(1, 3.0, 16, [(0, "x")])
    psi = WaveFunction(g, np.array(values) * scale)
    out = normalize(psi)
    assert abs(out.norm() - 1) < 1e-12
    ratio = out.amplitudes[np.abs(psi.amplitudes) > 0] / psi.amplitudes[np.abs(psi.amplitudes) > 0]
    np.testing.assert_allclose(ratio, ratio[0].real, rtol=1e-12)


def test_non_finite_rejected(grid1d):
    a = np.ones(grid1d.shape, dtype=complex)
    a[3] = np.nan
    with pytest.raises(NumericalError):
        WaveFunction(grid1d, a)


def test_amplitudes_read_only(packet):
    with pytest.raises(ValueError):
        packet.amplitudes[0] = 1.0


def test_density_of_gaussian(packet):
    rho = probability_density(packet)
    x = packet.grid.coords
    np.testing.assert_allclose(rho, np.exp(-x**2 / 2) / math.sqrt(2 * math.pi), atol=1e-12)
    assert abs(integrate(rho, packet.grid) - 1) < 1e-9


def test_two_bump_masses(grid1d):
    x = grid1d.coords
    cp, cm = math.sqrt(0.3), math.sqrt(0.7)
    g = lambda c: (2 * math.pi * 0.25) ** -0.25 * np.exp(-(x - c) ** 2 / (4 * 0.25))
    psi = WaveFunction(grid1d, cp * g(6.0) + cm * g(-6.0))
    rho = probability_density(psi)
    right = integrate(np.where(x > 0, rho, 0), grid1d)
    left = integrate(np.where(x < 0, rho, 0), grid1d)
    assert abs(right - 0.3) < 1e-9 and abs(left - 0.7) < 1e-9


def test_marginal_single_particle(packet):
    np.testing.assert_array_equal(marginal_density(packet, 0), probability_density(packet))


def test_marginal_product_state():
    g = build_grid(2, 10.0, 64, [(0, "x"), (1, "x")])
    x = g.coords
    f = np.exp(-(x - 1) ** 2) * (1 + 0.5j * x)
    h = np.exp(-(x + 2) ** 2 / 3)
    psi = normalize(WaveFunction(g, np.outer(f, h)))
    expected = np.abs(f) ** 2 / integrate(np.abs(f) ** 2, g)
    np.testing.assert_allclose(marginal_density(psi, 0), expected, atol=1e-12)
    assert abs(integrate(marginal_density(psi, 1), g) - 1) < 1e-9


def test_marginal_entangled_bimodal():
    g = build_grid(2, 10.0, 64, [(0, "x"), (1, "x")])
    x = g.coords
    a = lambda c: np.exp(-(x - c) ** 2)
    psi = normalize(WaveFunction(g, np.outer(a(4), a(-4)) + np.outer(a(-4), a(4))))
    m = marginal_density(psi, 0)
    right = integrate(np.where(x > 0, m, 0), g)
    assert abs(right - 0.5) < 1e-9
    np.testing.assert_allclose(m, m[::-1][np.r_[-1, :63]], atol=1e-12)  # even about x = 0 on the grid


def test_marginal_spatial_axis_order():
    g = build_grid(3, 5.0, 16, [(1, "x"), (0, "y"), (0, "x")])
    rng = np.random.default_rng(0)
    psi = normalize(WaveFunction(g, rng.normal(size=g.shape) + 0j))
    m0 = marginal_density(psi, 0)
    # particle 0 owns grid axes 2 (x) and 1 (y); result is indexed (x, y)
    direct = probability_density(psi).sum(axis=0) * g.spacing
    np.testing.assert_allclose(m0, direct.T, rtol=1e-12)


def test_marginal_invalid_particle(packet):
    with pytest.raises(ValueError):
        marginal_density(packet, 1)


# potentials -------------------------------------------------------------------

def test_potential_validation():
    with pytest.raises(ValueError):
        PotentialSpec("harmonic", {})
    with pytest.raises(ValueError):
        PotentialSpec("harmonic", {"omega": -1})
    with pytest.raises(ValueError):
        PotentialSpec("harmonic", {"omega": 1, "omgea": 2})
    with pytest.raises(ValueError):
        PotentialSpec("cubic")
    with pytest.raises(ValueError):
        PotentialSpec.pointer_coupling(1.0, (2.0, 1.0))


def test_pointer_coupling_window():
    g = build_grid(2, 8.0, 32, [(0, "x"), (1, "x")])
    pot = PotentialSpec.pointer_coupling(2.0, (1.0, 2.0))
    assert not pot.active(0.5) and pot.active(1.0) and not pot.active(2.0)
    assert np.all(pot.evaluate(g, (1, 1), 0.5) == 0)
    V = pot.evaluate(g, (1, 1), 1.5)
    assert V[-1, -1] > 0 and V[0, -1] < 0


def test_box_walls_shape(grid1d):
    V = PotentialSpec.box_walls(4.0, 30.0).evaluate(grid1d, (1.0,))
    assert V[np.argmin(np.abs(grid1d.coords))] < 1e-6
    assert abs(V[0] - 30.0) < 1e-6


def test_double_well_minima(grid1d):
    V = PotentialSpec.double_well(2.0, 5.0).evaluate(grid1d, (1.0,))
    x = grid1d.coords
    assert abs(V[np.argmin(np.abs(x - 2.5))]) < 1e-12
    assert abs(V[np.argmin(np.abs(x))] - 2.0) < 1e-12


def test_masses_positive():
    with pytest.raises(ValueError):
        HamiltonianParams((1.0, 0.0))


# evolution --------------------------------------------------------------------

@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 4.0])
def test_free_gaussian_width(packet, free1, t):
    dt = 0.01
    out = evolve_schrodinger(packet, free1, dt, int(round(t / dt)))
    exact = math.sqrt(1 + (t / 2) ** 2)
    assert abs(gaussian_width(out) / exact - 1) < 1e-6
    assert math.isclose(out.time, t)


def test_harmonic_ground_state_stationary():
    g = build_grid(1, 10.0, 128, [(0, "x")])
    H = HamiltonianParams((1.0,), PotentialSpec.harmonic(1.0))
    psi = gaussian_packet(g, 0.0, 0.0, 1 / math.sqrt(2))
    period = 2 * math.pi
    n = 2000
    out = evolve_schrodinger(psi, H, period / n, n)
    assert np.max(np.abs(probability_density(out) - probability_density(psi))) < 1e-8


def test_zero_steps_identity(packet, free1):
    assert evolve_schrodinger(packet, free1, 0.01, 0) is packet


def test_dt_above_bound_rejected(packet, free1):
    bound = max_stable_dt(packet.grid, free1)
    with pytest.raises(ValueError):
        evolve_schrodinger(packet, free1, 1.01 * bound, 1)
    evolve_schrodinger(packet, free1, 0.99 * bound, 1)


def test_bad_step_count(packet, free1):
    with pytest.raises(ValueError):
        evolve_schrodinger(packet, free1, 0.01, -1)


def test_nan_detected(packet, free1, monkeypatch):
    prop = SplitStepPropagator(packet.grid, free1, 0.01)
    monkeypatch.setattr(prop, "step", lambda amps, t: amps * np.nan)
    with pytest.raises(NumericalError):
        evolve_schrodinger(packet, free1, 0.01, 3, prop)


def test_time_reversal(free1):
    g = build_grid(1, 6.0, 64, [(0, "x")])
    H = HamiltonianParams((1.0,), PotentialSpec.double_well(1.0, 4.0))
    psi = gaussian_packet(g, 0.5, 1.5, 0.7)
    fwd = evolve_schrodinger(psi, H, 0.005, 400)
    back = evolve_schrodinger(fwd, H, -0.005, 400)
    assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-8
    assert abs(back.time) < 1e-12


def test_unitarity_and_energy_harmonic():
    g = build_grid(1, 10.0, 128, [(0, "x")])
    H = HamiltonianParams((1.0,), PotentialSpec.harmonic(1.0))
    psi = gaussian_packet(g, 1.0, 0.0, 1 / math.sqrt(2))
    out = evolve_schrodinger(psi, H, 1e-3, 10_000)
    assert abs(out.norm() - 1) < 1e-9
    e0, e1 = expected_energy(psi, H), expected_energy(out, H)
    assert abs(e0 - 1.0) < 1e-6  # coherent state: omega/2 + x0^2/2
    assert abs(e1 - e0) / e0 < 1e-6


def test_two_particle_product_evolves_independently():
    g = build_grid(2, 10.0, 64, [(0, "x"), (1, "x")])
    g1 = build_grid(1, 10.0, 64, [(0, "x")])
    H2 = HamiltonianParams((1.0, 2.0), PotentialSpec.harmonic(1.0))
    f = gaussian_packet(g1, 1.0, 0.5, 0.8)
    h = gaussian_packet(g1, -1.0, 0.0, 0.6)
    psi = WaveFunction(g, np.outer(f.amplitudes, h.amplitudes))
    out = evolve_schrodinger(psi, H2, 0.01, 100)
    f1 = evolve_schrodinger(f, HamiltonianParams((1.0,), PotentialSpec.harmonic(1.0)), 0.01, 100)
    h1 = evolve_schrodinger(h, HamiltonianParams((2.0,), PotentialSpec.harmonic(1.0)), 0.01, 100)
    np.testing.assert_allclose(out.amplitudes, np.outer(f1.amplitudes, h1.amplitudes), atol=1e-12)


_g = build_grid(1, 8.0, 64, [(0, "x")])
_H = HamiltonianParams((1.0,), PotentialSpec.harmonic(1.0))


@st.composite
def states(draw):
    x0 = draw(st.floats(-2, 2))
    k0 = draw(st.floats(-3, 3))
    w = draw(st.floats(0.5, 1.0))
    return gaussian_packet(_g, x0, k0, w)


@given(states(), states(), st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False))
def test_linearity(p1, p2, a, b):
    combo = WaveFunction(_g, a * p1.amplitudes + b * p2.amplitudes)
    lhs = evolve_schrodinger(combo, _H, 0.01, 50).amplitudes
    rhs = a * evolve_schrodinger(p1, _H, 0.01, 50).amplitudes + b * evolve_schrodinger(p2, _H, 0.01, 50).amplitudes
    assert np.max(np.abs(lhs - rhs)) < 1e-8


@given(states(), st.integers(1, 200))
def test_norm_preserved(psi, n):
    out = evolve_schrodinger(psi, _H, 0.01, n)
    assert abs(out.norm() - 1) < 1e-9


@given(states())
def test_deterministic(psi):
    a = evolve_schrodinger(psi, _H, 0.01, 20)
    b = evolve_schrodinger(psi, _H, 0.01, 20)
    assert np.array_equal(a.amplitudes, b.amplitudes)
