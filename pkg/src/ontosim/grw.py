"""GRW spontaneous localization interleaved with Schrodinger evolution.

A hit on particle k centred at x multiplies psi by the square root of the
localization Gaussian

    L(x_k - x) = (2 pi sigma^2)^(-d/2) exp(-(x_k - x)^2 / (2 sigma^2))

in particle k's d physical axes and renormalizes.  The centre is drawn from
p(x) = ||L^(1/2) psi||^2, which is the marginal density of particle k
convolved with L.  On the periodic grid L is periodized (summed over images),
so p integrates to one for any sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from . import rng as rngmod
from .numerics import (GridSpec, HamiltonianParams, NumericalError, SplitStepPropagator, WaveFunction,
                       marginal_density, probability_density)

MIN_PRE_NORM_SQ = 1e-30

# Reference values; the rate is stored as the reciprocal of the single-particle
# localization time of ~1e15 s.
LAMBDA_SI = 1e-15  # 1/s
SIGMA_SI = 1e-7  # m


@dataclass(frozen=True)
class CollapseParams:
    lambda_rate: float
    sigma_loc: float

    def __post_init__(self):
        if not self.lambda_rate > 0 or not math.isfinite(self.lambda_rate):
            raise ValueError(f"lambda_rate must be positive, got {self.lambda_rate}")
        if not self.sigma_loc > 0 or not math.isfinite(self.sigma_loc):
            raise ValueError(f"sigma_loc must be positive, got {self.sigma_loc}")

    def check_resolvable(self, grid: GridSpec) -> None:
        _check_sigma(grid, self.sigma_loc)


def _check_sigma(grid: GridSpec, sigma: float) -> None:
    if sigma < 2.0 * grid.spacing:
        raise ValueError(f"sigma_loc={sigma} is not resolvable on a grid with dx={grid.spacing} "
                         f"(need sigma >= 2 dx)")


@dataclass(frozen=True)
class CollapseEvent:
    time: float
    particle_index: int
    center: tuple[float, ...]
    pre_norm: float
    post_norm: float
    applied_time: float | None = None
    forced: bool = False


@dataclass
class FlashHistory:
    events: list[CollapseEvent] = field(default_factory=list)
    seed: int | None = None
    params: CollapseParams | None = None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def validate(self) -> None:
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("flash history is not strictly ordered in time")

    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    def centers(self) -> np.ndarray:
        if not self.events:
            return np.empty((0, 0))
        return np.array([e.center for e in self.events])


def draw_jump_schedule(n_particles: int, lambda_rate: float, T: float, seed: int) -> list[tuple[float, int]]:
    """Poisson process of total rate ``n_particles * lambda_rate`` on [0, T]
    with each jump assigned to a uniformly chosen particle."""
    if n_particles < 1:
        raise ValueError(f"need at least one particle, got {n_particles}")
    if not lambda_rate > 0:
        raise ValueError(f"lambda_rate must be positive, got {lambda_rate}")
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    if T == 0:
        return []
    gen = rngmod.stream(seed, "grw/schedule")
    count = int(gen.poisson(n_particles * lambda_rate * T))
    times = np.sort(gen.uniform(0.0, T, size=count))
    particles = gen.integers(0, n_particles, size=count)
    return [(float(t), int(k)) for t, k in zip(times, particles)]


def periodic_gaussian(grid: GridSpec, offsets: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian of width ``sigma`` summed over periodic images."""
    period = 2.0 * grid.extent
    n_img = int(math.ceil(8.0 * sigma / period)) + 1
    d = np.mod(np.asarray(offsets, dtype=float) + 0.5 * period, period) - 0.5 * period
    total = np.zeros_like(d)
    for n in range(-n_img, n_img + 1):
        total += np.exp(-((d + n * period) ** 2) / (2.0 * sigma**2))
    return total / math.sqrt(2.0 * math.pi * sigma**2)


def collapse_center_density(psi: WaveFunction, k: int, sigma: float) -> np.ndarray:
    """p(x) on particle ``k``'s physical-space grid (axes in x, y, z order)."""
    grid = psi.grid
    _check_sigma(grid, sigma)
    p = marginal_density(psi, k)
    kernel_hat = sfft.fft(periodic_gaussian(grid, grid.spacing * np.arange(grid.points), sigma)) * grid.spacing
    for axis in range(p.ndim):
        shape = [1] * p.ndim
        shape[axis] = grid.points
        p = sfft.ifft(sfft.fft(p, axis=axis) * kernel_hat.reshape(shape), axis=axis).real
    return np.clip(p, 0.0, None)


def sample_collapse_centers(psi: WaveFunction, k: int, sigma: float, n: int,
                            gen: np.random.Generator) -> np.ndarray:
    """``n`` centres from p(x): inverse CDF over grid cells plus in-cell jitter."""
    grid = psi.grid
    p = collapse_center_density(psi, k, sigma)
    cdf = np.cumsum(p.ravel())
    cdf /= cdf[-1]
    u = gen.random(n)
    jitter = gen.random((n, p.ndim)) - 0.5
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    cells = np.stack(np.unravel_index(flat, p.shape), axis=1)
    return grid.wrap(grid.coords[cells] + jitter * grid.spacing)


def localization_amplitude(grid: GridSpec, k: int, center: Sequence[float], sigma: float) -> np.ndarray:
    """sqrt(L(x_k - center)) on the full configuration grid."""
    axes = grid.particle_axes(k)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if center.shape != (len(axes),):
        raise ValueError(f"centre needs {len(axes)} coordinate(s) for particle {k}, got {center.shape}")
    if not grid.contains(center[None, :])[0]:
        raise ValueError(f"centre {center} lies outside the grid")
    factor = np.ones([1] * grid.dims)
    for axis, c in zip(axes, center):
        factor = factor * np.sqrt(periodic_gaussian(grid, grid.axis_mesh(axis) - c, sigma))
    return factor


def _localize(psi: WaveFunction, k: int, center, sigma: float) -> tuple[np.ndarray, float, float]:
    hit = np.asarray(psi.amplitudes) * localization_amplitude(psi.grid, k, center, sigma)
    pre_sq = float(np.sum(np.abs(hit) ** 2) * psi.grid.cell_volume())
    if not pre_sq >= MIN_PRE_NORM_SQ:
        raise NumericalError(f"collapse at {tuple(np.atleast_1d(center))} leaves norm^2 {pre_sq:.3g}; "
                             f"centre is effectively impossible")
    pre = math.sqrt(pre_sq)
    hit = hit / pre
    post = math.sqrt(float(np.sum(np.abs(hit) ** 2) * psi.grid.cell_volume()))
    return hit, pre, post


def apply_collapse(psi: WaveFunction, k: int, center, sigma: float) -> WaveFunction:
    """Instantaneous GRW hit on particle ``k`` at ``center``; returns the
    renormalized state."""
    _check_sigma(psi.grid, sigma)
    amps, _, _ = _localize(psi, k, center, sigma)
    return psi.replace(amps)


def tail_mass(psi: WaveFunction, center, radius: float, particle: int | None = None) -> float:
    """Probability farther than ``radius`` from ``center`` (minimum-image
    distance on the periodic grid).

    With ``particle`` set, the distance is taken in that particle's physical
    space using its marginal; otherwise in the full configuration space.  On
    a single axis cells are split exactly at the radius.
    """
    grid = psi.grid
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return 1.0
    rho = probability_density(psi) if particle is None else marginal_density(psi, particle)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if center.shape != (rho.ndim,):
        raise ValueError(f"centre needs {rho.ndim} coordinates, got {center.shape}")
    period = 2.0 * grid.extent
    offsets = [np.mod(grid.coords - c + 0.5 * period, period) - 0.5 * period for c in center]
    dx = grid.spacing
    total = float(rho.sum()) * dx**rho.ndim
    # summing the outside directly keeps tiny tails from cancelling to zero
    if rho.ndim == 1:
        lo = np.maximum(offsets[0] - 0.5 * dx, -radius)
        hi = np.minimum(offsets[0] + 0.5 * dx, radius)
        outside = float(np.sum(rho * (dx - np.clip(hi - lo, 0.0, None))))
    else:
        dist2 = sum(o.reshape([-1 if a == i else 1 for a in range(rho.ndim)]) ** 2
                    for i, o in enumerate(offsets))
        outside = float(np.sum(np.where(dist2 > radius**2, rho, 0.0))) * dx**rho.ndim
    return float(min(1.0, max(0.0, outside / total)))


def run_grw(psi0: WaveFunction, H: HamiltonianParams, params: CollapseParams, T: float, seed: int,
            dt: float, forced: Iterable[tuple[float, int]] = (),
            on_step: Callable[[float, WaveFunction], None] | None = None,
            on_collapse: Callable[[CollapseEvent, WaveFunction, WaveFunction], None] | None = None,
            ) -> tuple[WaveFunction, FlashHistory]:
    """Schrodinger evolution interrupted by GRW hits.

    Spontaneous jump times come from ``draw_jump_schedule``; ``forced`` adds
    hits at fixed (time, particle) pairs, e.g. a detection.  Each hit is applied
    at the first step boundary at or after its time.  Times are measured from
    ``psi0.time``.  ``on_step(t, psi)`` is called at every boundary after that
    boundary's hits; ``on_collapse(event, before, after)`` once per hit.
    """
    grid = psi0.grid
    params.check_resolvable(grid)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    schedule = [(t, k, False) for t, k in draw_jump_schedule(grid.n_particles, params.lambda_rate, T, seed)]
    for t, k in forced:
        if not 0 <= t <= T:
            raise ValueError(f"forced hit at t={t} lies outside [0, {T}]")
        if not 0 <= k < grid.n_particles:
            raise ValueError(f"forced hit on unknown particle {k}")
        schedule.append((float(t), int(k), True))
    schedule.sort(key=lambda e: e[0])
    by_boundary: dict[int, list[tuple[float, int, bool]]] = {}
    for t, k, is_forced in schedule:
        b = min(n_steps, max(0, int(math.ceil(t / dt - 1e-9))))
        by_boundary.setdefault(b, []).append((t, k, is_forced))

    centers_rng = rngmod.stream(seed, "grw/centers")
    prop = SplitStepPropagator(grid, H, dt)
    history = FlashHistory([], seed, params)
    amps = np.array(psi0.amplitudes)
    for step in range(n_steps + 1):
        t_now = psi0.time + step * dt
        hits = by_boundary.get(step, ())
        psi = None
        if hits or on_step is not None:
            psi = psi0.replace(amps, t_now)
        for t_hit, k, is_forced in hits:
            center = sample_collapse_centers(psi, k, params.sigma_loc, 1, centers_rng)[0]
            new_amps, pre, post = _localize(psi, k, center, params.sigma_loc)
            after = psi.replace(new_amps)
            event = CollapseEvent(psi0.time + t_hit, k, tuple(float(c) for c in center), pre, post, t_now, is_forced)
            history.events.append(event)
            if on_collapse is not None:
                on_collapse(event, psi, after)
            psi, amps = after, new_amps
        if on_step is not None:
            on_step(t_now, psi)
        if step < n_steps:
            amps = prop.step(amps, t_now)
            if (step + 1) % 256 == 0 and not np.all(np.isfinite(amps)):
                raise NumericalError(f"non-finite amplitudes at t={t_now + dt}")
    return psi0.replace(amps, psi0.time + n_steps * dt), history
