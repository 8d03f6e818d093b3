"""Guiding-equation trajectories and |psi|^2 ensembles.

Velocities are ``(1/m) Im(grad psi / psi)`` with psi and its spectral gradient
interpolated off-grid by periodic cubic B-splines (real and imaginary parts
separately).  The wave function is advanced on a half-step timeline so a
fourth-order Runge-Kutta step of size dt finds psi at t, t + dt/2 and t + dt
without interpolating in time.  Only the node safeguard substeps blend psi
linearly in time between stored half steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from . import rng as rngmod
from .numerics import (GridSpec, HamiltonianParams, NumericalError, SplitStepPropagator,
                       WaveFunction, probability_density)

NODE_EPS = 1e-12
MAX_HALVINGS = 8

STATUS_OK = "ok"
STATUS_NODE_ABORT = "node_abort"


class NodeProximityError(RuntimeError):
    """|psi|^2 at a requested point is below the node threshold."""


@dataclass(frozen=True)
class ParticleConfiguration:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1)
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    def particle(self, grid: GridSpec, k: int) -> np.ndarray:
        return self.positions[list(grid.particle_axes(k))]

    def validate(self, grid: GridSpec) -> None:
        if self.positions.shape != (grid.dims,):
            raise ValueError(f"configuration has {self.positions.size} coordinates, grid has {grid.dims} axes")
        if not grid.contains(self.positions):
            raise ValueError(f"configuration {self.positions} lies outside [-{grid.extent}, {grid.extent})")


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    dt: float
    member: int = 0
    status: str = STATUS_OK
    substeps: int = 0

    def __len__(self) -> int:
        return len(self.times)

    def sample(self, i: int) -> ParticleConfiguration:
        return ParticleConfiguration(self.positions[i], float(self.times[i]))

    @property
    def samples(self) -> list[ParticleConfiguration]:
        return [self.sample(i) for i in range(len(self))]

    @property
    def final(self) -> ParticleConfiguration:
        return self.sample(len(self) - 1)

    def is_continuous(self, v_max: float) -> bool:
        if len(self) < 2:
            return True
        if not np.all(np.diff(self.times) > 0):
            return False
        steps = np.abs(np.diff(self.positions, axis=0)).max(axis=1)
        return bool(np.all(steps < v_max * np.diff(self.times)))


def velocity_bound(grid: GridSpec, masses: Sequence[float]) -> float:
    """Largest speed the grid can represent, pi / (dx * m_min)."""
    return math.pi / (grid.spacing * min(masses))


@dataclass
class EquilibriumEnsemble:
    members: np.ndarray
    seed: int
    source: WaveFunction

    def __len__(self) -> int:
        return len(self.members)

    def configurations(self) -> list[ParticleConfiguration]:
        t = self.source.time
        return [ParticleConfiguration(p, t) for p in self.members]


class PsiInterpolant:
    """Off-grid psi and grad psi from one grid state."""

    def __init__(self, psi: WaveFunction):
        grid = psi.grid
        self.grid = grid
        amps = np.asarray(psi.amplitudes)
        spec = sfft.fftn(amps)
        k = grid.wavenumbers
        fields = [amps]
        for axis in range(grid.dims):
            shape = [1] * grid.dims
            shape[axis] = grid.points
            fields.append(sfft.ifftn(1j * k.reshape(shape) * spec))
        self._coeffs = []
        for f in fields:
            self._coeffs.append(ndimage.spline_filter(f.real, order=3, mode="grid-wrap"))
            self._coeffs.append(ndimage.spline_filter(f.imag, order=3, mode="grid-wrap"))
        self.eps = NODE_EPS * float(probability_density(psi).max())

    def values(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """psi at ``points`` (n, D) and grad psi (n, D)."""
        idx = self.grid.to_index(points).T
        out = [ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False)
               for c in self._coeffs]
        psi = out[0] + 1j * out[1]
        grad = np.stack([out[2 + 2 * a] + 1j * out[3 + 2 * a] for a in range(self.grid.dims)], axis=1)
        return psi, grad


def _guided(psi: np.ndarray, grad: np.ndarray, eps: float, inv_mass: np.ndarray):
    dens = psi.real**2 + psi.imag**2
    near = dens < eps
    safe = np.where(near, 1.0, dens)
    # Im(grad psi / psi) = Im(conj(psi) grad psi) / |psi|^2
    v = (psi.real[:, None] * grad.imag - psi.imag[:, None] * grad.real) / safe[:, None]
    return v * inv_mass, near


def _inverse_axis_masses(grid: GridSpec, masses: Sequence[float]) -> np.ndarray:
    if len(masses) != grid.n_particles:
        raise ValueError(f"{len(masses)} masses for {grid.n_particles} particles")
    return np.array([1.0 / masses[p] for p, _ in grid.layout])


def velocity_field(psi: WaveFunction, config, masses: Sequence[float] | None = None) -> np.ndarray:
    """Guiding-equation velocity (hbar = 1) at one configuration or an (n, D)
    array of them.  Raises ``NodeProximityError`` where |psi|^2 falls below
    ``NODE_EPS * max|psi|^2``."""
    grid = psi.grid
    if masses is None:
        masses = (1.0,) * grid.n_particles
    if isinstance(config, ParticleConfiguration):
        config = config.positions
    pts = np.asarray(config, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, grid.dims)
    interp = PsiInterpolant(psi)
    v, near = _guided(*interp.values(pts), interp.eps, _inverse_axis_masses(grid, masses))
    if near.any():
        raise NodeProximityError(f"{int(near.sum())} point(s) within the node threshold, first at {pts[near][0]}")
    return v[0] if single else v


@dataclass
class EnsembleRun:
    """Arrays behind a set of trajectories sharing one psi timeline."""

    times: np.ndarray
    positions: np.ndarray  # (members, samples, D)
    status: np.ndarray  # (members,) object
    abort_index: np.ndarray  # first sample index not reached, or len(times)
    substeps: np.ndarray
    dt: float
    final_psi: WaveFunction

    @property
    def n_members(self) -> int:
        return self.positions.shape[0]

    @property
    def ok(self) -> np.ndarray:
        return self.status == STATUS_OK

    def trajectory(self, i: int) -> Trajectory:
        n = int(self.abort_index[i])
        return Trajectory(self.times[:n], self.positions[i, :n], self.dt, i,
                          str(self.status[i]), int(self.substeps[i]))

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n_members)]

    def final_positions(self, only_ok: bool = True) -> np.ndarray:
        final = self.positions[:, -1]
        return final[self.ok] if only_ok else final


def _steps_for(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    return n


def run_ensemble(psi0: WaveFunction, H: HamiltonianParams, initial: np.ndarray, dt: float, T: float,
                 stride: int = 1,
                 on_step: Callable[[float, WaveFunction, np.ndarray], None] | None = None) -> EnsembleRun:
    """Integrate every row of ``initial`` (n, D) along the guiding equation.

    Positions are recorded every ``stride`` steps plus the final step.
    ``on_step(t, psi, positions)`` sees each full step.
    """
    grid = psi0.grid
    pos = np.array(initial, dtype=float).reshape(-1, grid.dims)
    if not np.all(grid.contains(pos)):
        raise ValueError("initial configurations must lie inside the grid")
    n_steps = _steps_for(T, dt)
    inv_mass = _inverse_axis_masses(grid, H.masses)
    prop = SplitStepPropagator(grid, H, 0.5 * dt)

    record = sorted(set(range(0, n_steps + 1, max(1, stride))) | {n_steps})
    slot = {s: i for i, s in enumerate(record)}
    n_members = pos.shape[0]
    times = np.array([psi0.time + s * dt for s in record])
    out = np.empty((n_members, len(record), grid.dims))
    out[:, 0] = pos
    status = np.full(n_members, STATUS_OK, dtype=object)
    abort_index = np.full(n_members, len(record))
    substeps = np.zeros(n_members, dtype=int)
    alive = np.ones(n_members, dtype=bool)

    psi_a = psi0
    c_a = PsiInterpolant(psi_a)
    for step in range(n_steps):
        t = psi0.time + step * dt
        amps_m = prop.step(np.asarray(psi_a.amplitudes), t)
        amps_b = prop.step(amps_m, t + 0.5 * dt)
        psi_m = psi_a.replace(amps_m, t + 0.5 * dt)
        psi_b = psi_a.replace(amps_b, psi0.time + (step + 1) * dt)
        c_m, c_b = PsiInterpolant(psi_m), PsiInterpolant(psi_b)

        idx = np.flatnonzero(alive)
        if idx.size:
            x = pos[idx]
            k1, n1 = _guided(*c_a.values(x), c_a.eps, inv_mass)
            k2, n2 = _guided(*c_m.values(x + 0.5 * dt * k1), c_m.eps, inv_mass)
            k3, n3 = _guided(*c_m.values(x + 0.5 * dt * k2), c_m.eps, inv_mass)
            k4, n4 = _guided(*c_b.values(x + dt * k3), c_b.eps, inv_mass)
            new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = n1 | n2 | n3 | n4 | ~np.all(np.isfinite(new), axis=1)
            pos[idx[~bad]] = new[~bad]
            for j in idx[bad]:
                result, used = _substep(pos[j], dt, (c_a, c_m, c_b), inv_mass)
                substeps[j] += used
                if result is None:
                    alive[j] = False
                    status[j] = STATUS_NODE_ABORT
                    # samples up to and including the last recorded one before this step stay valid
                    abort_index[j] = sum(1 for s in record if s <= step)
                else:
                    pos[j] = result

        if (step + 1) in slot:
            out[:, slot[step + 1]] = pos
        if on_step is not None:
            on_step(psi_b.time, psi_b, pos.copy())
        psi_a, c_a = psi_b, c_b

    if not np.all(np.isfinite(np.asarray(psi_a.amplitudes))):
        raise NumericalError("wave function became non-finite during trajectory integration")
    return EnsembleRun(times, out, status, abort_index, substeps, dt, psi_a)


def _blend(interps, s: float, x: np.ndarray):
    """psi, grad psi, eps at fractional step time s in [0, 1] (piecewise linear)."""
    c_a, c_m, c_b = interps
    lo, hi, w = (c_a, c_m, 2 * s) if s <= 0.5 else (c_m, c_b, 2 * s - 1)
    p0, g0 = lo.values(x)
    if w == 0:
        return p0, g0, lo.eps
    p1, g1 = hi.values(x)
    return (1 - w) * p0 + w * p1, (1 - w) * g0 + w * g1, (1 - w) * lo.eps + w * hi.eps


def _substep(x0: np.ndarray, dt: float, interps, inv_mass: np.ndarray):
    """Retry one step with dt/2, dt/4, ... dt/2**MAX_HALVINGS.

    Returns (position or None, substeps used).
    """
    def f(s, x):
        psi, grad, eps = _blend(interps, s, x)
        v, near = _guided(psi, grad, eps, inv_mass)
        return None if near.any() else v

    used = 0
    for level in range(1, MAX_HALVINGS + 1):
        h = 1.0 / 2**level
        hdt = h * dt
        x = x0[None, :].copy()
        for i in range(2**level):
            s = i * h
            k1 = f(s, x)
            k2 = None if k1 is None else f(s + h / 2, x + 0.5 * hdt * k1)
            k3 = None if k2 is None else f(s + h / 2, x + 0.5 * hdt * k2)
            k4 = None if k3 is None else f(s + h, x + hdt * k3)
            if k4 is None:
                break
            x = x + hdt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            used += 1
        else:
            if np.all(np.isfinite(x)):
                return x[0], used
    return None, used


def integrate_trajectory(psi0: WaveFunction, H: HamiltonianParams, config0, dt: float, T: float) -> Trajectory:
    if not isinstance(config0, ParticleConfiguration):
        config0 = ParticleConfiguration(config0, psi0.time)
    config0.validate(psi0.grid)
    return run_ensemble(psi0, H, config0.positions[None, :], dt, T).trajectory(0)


def evolve_ensemble(psi0: WaveFunction, H: HamiltonianParams, ensemble, dt: float, T: float,
                    stride: int = 1) -> list[Trajectory]:
    members = ensemble.members if isinstance(ensemble, EquilibriumEnsemble) else np.asarray(ensemble)
    return run_ensemble(psi0, H, members, dt, T, stride=stride).trajectories()


def sample_equilibrium(psi: WaveFunction, n: int, seed: int) -> EquilibriumEnsemble:
    """``n`` configurations drawn i.i.d. from the |psi|^2 dx^D mass function.

    Member ``i`` consumes its own stream ``bohm/member/<i>``: one uniform picks
    the cell by inverse CDF, D more jitter the point uniformly inside it.
    """
    if n < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n}")
    grid = psi.grid
    mass = probability_density(psi).ravel()
    cdf = np.cumsum(mass)
    cdf /= cdf[-1]
    u = np.empty(n)
    jitter = np.empty((n, grid.dims))
    for i in range(n):
        draws = rngmod.stream(seed, f"bohm/member/{i}").random(1 + grid.dims)
        u[i] = draws[0]
        jitter[i] = draws[1:] - 0.5
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), mass.size - 1)
    cells = np.stack(np.unravel_index(flat, grid.shape), axis=1)
    pos = grid.coords[cells] + jitter * grid.spacing
    return EquilibriumEnsemble(grid.wrap(pos), int(seed), psi)
