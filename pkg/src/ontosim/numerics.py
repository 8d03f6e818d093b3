"""Configuration-space grids, wave functions and split-step Schrodinger evolution.

Natural units throughout: hbar = 1.  A grid axis is one coordinate of one
particle; ``GridSpec.layout`` records which.  The domain of every axis is the
periodic interval [-L, L) sampled at ``x_j = -L + j*dx``.

The propagator is second-order Strang splitting,

    exp(-i V dt/2) F^-1 exp(-i T(k) dt) F exp(-i V dt/2),

with the potential evaluated at the step midpoint so that time-windowed
couplings switch on and off at the right step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Mapping, Sequence

import numpy as np
from scipy import fft as sfft

AXIS_NAMES = ("x", "y", "z")
MAX_DIMS = 3
MIN_POINTS = 16


class NumericalError(RuntimeError):
    """Raised when a state stops being finite or becomes degenerate."""


def _parse_particle(p) -> int:
    if isinstance(p, str):
        if not p.startswith("p") or not p[1:].isdigit():
            raise ValueError(f"bad particle label {p!r}; expected 'p<index>'")
        return int(p[1:])
    return int(p)


@dataclass(frozen=True)
class GridSpec:
    dims: int
    extent: float
    points: int
    layout: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if not 1 <= self.dims <= MAX_DIMS:
            raise ValueError(f"dims must be in 1..{MAX_DIMS}, got {self.dims}")
        if not self.extent > 0 or not math.isfinite(self.extent):
            raise ValueError(f"extent must be positive and finite, got {self.extent}")
        m = self.points
        if m < MIN_POINTS or m & (m - 1):
            raise ValueError(f"points must be a power of two >= {MIN_POINTS}, got {m}")
        if len(self.layout) != self.dims:
            raise ValueError(f"layout has {len(self.layout)} entries for {self.dims} axes")
        seen = set()
        for particle, axis in self.layout:
            if particle < 0:
                raise ValueError(f"negative particle index {particle}")
            if axis not in AXIS_NAMES:
                raise ValueError(f"spatial axis must be one of {AXIS_NAMES}, got {axis!r}")
            if (particle, axis) in seen:
                raise ValueError(f"axis ({particle}, {axis}) appears twice in layout")
            seen.add((particle, axis))
        owners = {p for p, _ in self.layout}
        if owners != set(range(len(owners))):
            raise ValueError(f"particles must be numbered 0..N-1, got {sorted(owners)}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.points

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dims

    @property
    def n_particles(self) -> int:
        return 1 + max(p for p, _ in self.layout)

    @property
    def coords(self) -> np.ndarray:
        return -self.extent + self.spacing * np.arange(self.points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.points, d=self.spacing)

    def particle_axes(self, k: int) -> tuple[int, ...]:
        """Grid axes owned by particle ``k``, ordered x, y, z."""
        if not 0 <= k < self.n_particles:
            raise ValueError(f"particle index {k} out of range for {self.n_particles} particles")
        owned = [(AXIS_NAMES.index(ax), i) for i, (p, ax) in enumerate(self.layout) if p == k]
        return tuple(i for _, i in sorted(owned))

    def spatial_axes(self, k: int) -> tuple[str, ...]:
        return tuple(self.layout[i][1] for i in self.particle_axes(k))

    def axis_mesh(self, axis: int) -> np.ndarray:
        """Coordinates of one grid axis, shaped to broadcast against the grid."""
        shape = [1] * self.dims
        shape[axis] = self.points
        return self.coords.reshape(shape)

    def cell_volume(self, naxes: int | None = None) -> float:
        return self.spacing ** (self.dims if naxes is None else naxes)

    def to_index(self, positions) -> np.ndarray:
        """Fractional grid index of physical coordinates."""
        return (np.asarray(positions, dtype=float) + self.extent) / self.spacing

    def contains(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        return np.all((pos >= -self.extent) & (pos < self.extent), axis=-1)

    def wrap(self, positions) -> np.ndarray:
        """Map coordinates back into [-L, L)."""
        width = 2.0 * self.extent
        return np.mod(np.asarray(positions, dtype=float) + self.extent, width) - self.extent


def build_grid(dims: int, extent: float, points: int, layout: Sequence) -> GridSpec:
    """Validated grid; ``layout`` entries are ``(particle, axis)`` with particle
    given as an int or as ``"p<k>"``."""
    if dims > MAX_DIMS:
        raise ValueError(f"at most {MAX_DIMS} grid axes are supported, got {dims}")
    parsed = tuple((_parse_particle(p), str(ax)) for p, ax in layout)
    return GridSpec(int(dims), float(extent), int(points), parsed)


def integrate(values: np.ndarray, grid: GridSpec) -> float:
    """Riemann sum of a field over ``values.ndim`` grid axes."""
    return float(np.sum(values) * grid.cell_volume(values.ndim))


@dataclass(frozen=True)
class WaveFunction:
    grid: GridSpec
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128, copy=True)
        if amps.shape != self.grid.shape:
            raise ValueError(f"amplitudes shape {amps.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(amps)):
            raise NumericalError(f"non-finite amplitudes at t={self.time}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "time", float(self.time))

    def norm(self) -> float:
        return math.sqrt(integrate(np.abs(self.amplitudes) ** 2, self.grid))

    def replace(self, amplitudes: np.ndarray, time: float | None = None) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes, self.time if time is None else time)


def normalize(psi: WaveFunction) -> WaveFunction:
    n = psi.norm()
    if not n > 0 or not math.isfinite(n):
        raise NumericalError(f"cannot normalize a state of norm {n}")
    return psi.replace(psi.amplitudes / n)


def probability_density(psi: WaveFunction) -> np.ndarray:
    amps = psi.amplitudes
    return amps.real**2 + amps.imag**2


def marginal_density(psi: WaveFunction, k: int) -> np.ndarray:
    """|psi|^2 with every axis not owned by particle ``k`` integrated out.

    The result is indexed by particle ``k``'s spatial axes in x, y, z order.
    """
    grid = psi.grid
    keep = grid.particle_axes(k)
    drop = tuple(i for i in range(grid.dims) if i not in keep)
    rho = probability_density(psi)
    if drop:
        rho = rho.sum(axis=drop) * grid.cell_volume(len(drop))
    # sum() keeps the surviving axes in grid order; reorder to spatial order
    surviving = [i for i in range(grid.dims) if i in keep]
    return np.transpose(rho, [surviving.index(i) for i in keep])


_POTENTIAL_PARAMS: dict[str, dict[str, float | None]] = {
    "free": {},
    "harmonic": {"omega": None},
    "double_well": {"barrier": None, "separation": None},
    "box_walls": {"width": None, "height": 50.0, "edge": 0.0},
    "pointer_coupling": {"g": None, "t_on": 0.0, "t_off": None, "steepness": 0.5},
}


@dataclass(frozen=True)
class PotentialSpec:
    """Analytic potential.

    ``box_walls`` is a smoothed square well of the given width and wall height
    (``edge`` = 0 picks width/20 as the smoothing length).  ``pointer_coupling``
    is ``g * tanh(x_s / steepness) * x_p`` between ``t_on`` and ``t_off``, with
    grid axis 0 the system and axis 1 the pointer.
    """

    kind: str = "free"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _POTENTIAL_PARAMS:
            raise ValueError(f"unknown potential kind {self.kind!r}; one of {sorted(_POTENTIAL_PARAMS)}")
        schema = _POTENTIAL_PARAMS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        resolved = {}
        for name, default in schema.items():
            if name in self.params:
                value = float(self.params[name])
            elif default is None:
                raise ValueError(f"potential {self.kind} requires parameter {name!r}")
            else:
                value = float(default)
            if not math.isfinite(value):
                raise ValueError(f"{self.kind}.{name} must be finite")
            resolved[name] = value
        object.__setattr__(self, "params", resolved)
        p = resolved
        positive = {
            "harmonic": ("omega",),
            "double_well": ("barrier", "separation"),
            "box_walls": ("width", "height"),
            "pointer_coupling": ("steepness",),
        }.get(self.kind, ())
        for name in positive:
            if not p[name] > 0:
                raise ValueError(f"{self.kind}.{name} must be > 0, got {p[name]}")
        if self.kind == "box_walls" and p["edge"] < 0:
            raise ValueError("box_walls.edge must be >= 0")
        if self.kind == "pointer_coupling":
            if not p["t_off"] > p["t_on"] >= 0:
                raise ValueError(f"pointer_coupling window must satisfy 0 <= t_on < t_off, got ({p['t_on']}, {p['t_off']})")

    @classmethod
    def free(cls) -> "PotentialSpec":
        return cls("free")

    @classmethod
    def harmonic(cls, omega: float) -> "PotentialSpec":
        return cls("harmonic", {"omega": omega})

    @classmethod
    def double_well(cls, barrier: float, separation: float) -> "PotentialSpec":
        return cls("double_well", {"barrier": barrier, "separation": separation})

    @classmethod
    def box_walls(cls, width: float, height: float = 50.0, edge: float = 0.0) -> "PotentialSpec":
        return cls("box_walls", {"width": width, "height": height, "edge": edge})

    @classmethod
    def pointer_coupling(cls, g: float, window: tuple[float, float], steepness: float = 0.5) -> "PotentialSpec":
        return cls("pointer_coupling", {"g": g, "t_on": window[0], "t_off": window[1], "steepness": steepness})

    @property
    def time_dependent(self) -> bool:
        return self.kind == "pointer_coupling"

    def active(self, t: float) -> bool:
        if self.kind != "pointer_coupling":
            return True
        return self.params["t_on"] <= t < self.params["t_off"]

    def evaluate(self, grid: GridSpec, masses: Sequence[float], t: float = 0.0) -> np.ndarray:
        p = self.params
        V = np.zeros(grid.shape)
        if self.kind == "free" or not self.active(t):
            return V
        if self.kind == "pointer_coupling":
            if grid.dims < 2:
                raise ValueError("pointer_coupling needs a system axis and a pointer axis")
            s = np.tanh(grid.axis_mesh(0) / p["steepness"])
            return V + p["g"] * s * grid.axis_mesh(1)
        for axis, (particle, _) in enumerate(grid.layout):
            x = grid.axis_mesh(axis)
            if self.kind == "harmonic":
                V = V + 0.5 * masses[particle] * p["omega"] ** 2 * x**2
            elif self.kind == "double_well":
                V = V + p["barrier"] * ((2.0 * x / p["separation"]) ** 2 - 1.0) ** 2
            elif self.kind == "box_walls":
                edge = p["edge"] or p["width"] / 20.0
                inside = 0.5 * (np.tanh((x + p["width"] / 2) / edge) - np.tanh((x - p["width"] / 2) / edge))
                V = V + p["height"] * (1.0 - inside)
        return V


@dataclass(frozen=True)
class HamiltonianParams:
    masses: tuple[float, ...]
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    hbar: ClassVar[float] = 1.0

    def __post_init__(self):
        masses = tuple(float(m) for m in self.masses)
        if not masses:
            raise ValueError("at least one mass is required")
        if not all(m > 0 and math.isfinite(m) for m in masses):
            raise ValueError(f"all masses must be positive, got {masses}")
        object.__setattr__(self, "masses", masses)

    def axis_masses(self, grid: GridSpec) -> tuple[float, ...]:
        if len(self.masses) != grid.n_particles:
            raise ValueError(f"{len(self.masses)} masses for {grid.n_particles} particles")
        return tuple(self.masses[p] for p, _ in grid.layout)

    def potential_states(self, grid: GridSpec) -> list[np.ndarray]:
        """Every distinct potential array the evolution can see."""
        if self.potential.time_dependent:
            p = self.potential.params
            states = [self.potential.evaluate(grid, self.masses, p["t_on"]),
                      self.potential.evaluate(grid, self.masses, p["t_off"])]
        else:
            states = [self.potential.evaluate(grid, self.masses)]
        for V in states:
            if not np.all(np.isfinite(V)):
                raise ValueError(f"potential {self.potential.kind} is not finite on the grid")
        return states


def kinetic_symbol(grid: GridSpec, H: HamiltonianParams) -> np.ndarray:
    """T(k) = sum over axes of k^2 / (2 m_axis), on the FFT frequency grid."""
    k = grid.wavenumbers
    T = np.zeros(grid.shape)
    for axis, m in enumerate(H.axis_masses(grid)):
        shape = [1] * grid.dims
        shape[axis] = grid.points
        T = T + (k**2).reshape(shape) / (2.0 * m)
    return T


def max_stable_dt(grid: GridSpec, H: HamiltonianParams) -> float:
    """Largest admissible |dt|: the phase any single Fourier mode or grid point
    may pick up per step is capped at pi, i.e.

        |dt| * (max T(k) + max V - min V) <= pi.
    """
    t_max = sum((np.pi / grid.spacing) ** 2 / (2.0 * m) for m in H.axis_masses(grid))
    states = H.potential_states(grid)
    v_span = max(float(V.max()) for V in states) - min(float(V.min()) for V in states)
    return math.pi / (t_max + v_span)


class SplitStepPropagator:
    """Reusable Strang-split stepper for a fixed (grid, H, dt)."""

    def __init__(self, grid: GridSpec, H: HamiltonianParams, dt: float):
        if dt == 0 or not math.isfinite(dt):
            raise ValueError(f"dt must be finite and non-zero, got {dt}")
        bound = max_stable_dt(grid, H)
        if abs(dt) > bound:
            raise ValueError(f"|dt| = {abs(dt)} exceeds the split-step bound {bound:.6g}")
        self.grid = grid
        self.H = H
        self.dt = float(dt)
        self._kinetic = np.exp(-1j * self.dt * kinetic_symbol(grid, H))
        self._half_phase: dict[bool, np.ndarray] = {}

    def _potential_phase(self, t: float) -> np.ndarray:
        on = self.H.potential.active(t)
        if on not in self._half_phase:
            V = self.H.potential.evaluate(self.grid, self.H.masses, t)
            self._half_phase[on] = np.exp(-0.5j * self.dt * V)
        return self._half_phase[on]

    def step(self, amps: np.ndarray, t: float) -> np.ndarray:
        """Advance raw amplitudes from ``t`` to ``t + dt``."""
        half = self._potential_phase(t + 0.5 * self.dt)
        return half * sfft.ifftn(self._kinetic * sfft.fftn(half * amps))


def evolve_schrodinger(psi: WaveFunction, H: HamiltonianParams, dt: float, n_steps: int,
                       propagator: SplitStepPropagator | None = None) -> WaveFunction:
    """Advance ``psi`` by ``n_steps`` steps of size ``dt``.

    Negative ``dt`` runs the evolution backwards.  Raises ``ValueError`` when
    ``|dt|`` exceeds ``max_stable_dt`` and ``NumericalError`` if the state
    stops being finite.
    """
    if n_steps < 0 or int(n_steps) != n_steps:
        raise ValueError(f"n_steps must be a non-negative integer, got {n_steps}")
    if propagator is None:
        propagator = SplitStepPropagator(psi.grid, H, dt)
    if n_steps == 0:
        return psi
    amps = np.array(psi.amplitudes)
    for i in range(int(n_steps)):
        amps = propagator.step(amps, psi.time + i * dt)
        if (i + 1) % 256 == 0 and not np.all(np.isfinite(amps)):
            raise NumericalError(f"non-finite amplitudes after step {i + 1} (t={psi.time + (i + 1) * dt})")
    if not np.all(np.isfinite(amps)):
        raise NumericalError(f"non-finite amplitudes after step {n_steps}")
    return psi.replace(amps, psi.time + n_steps * dt)


def expected_energy(psi: WaveFunction, H: HamiltonianParams) -> float:
    """<H> with the kinetic part evaluated spectrally."""
    grid = psi.grid
    amps = psi.amplitudes
    spec = sfft.fftn(amps)
    weight = np.abs(spec) ** 2
    kinetic = float(np.sum(weight * kinetic_symbol(grid, H)) / np.sum(weight))
    V = H.potential.evaluate(grid, H.masses, psi.time)
    potential = integrate(V * probability_density(psi), grid) / psi.norm() ** 2
    return kinetic + potential
