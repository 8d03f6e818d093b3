"""Primitive-ontology variables extracted from runs.

GRWm: the matter density m_t(x) = sum_k m_k rho_k(x) on physical space, where
rho_k is particle k's marginal.  GRWf: the flash record.  Bohm: which side of
a boundary each particle is on.

Density frames serialize to CSV (coordinates then value) and to a binary
layout: a little-endian header ``uint32 dims, uint32 M, float64 dx,
float64 time`` followed by M**dims float64 values in C order.  The grid is
recovered as x_j = -M*dx/2 + j*dx.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bohm import EnsembleRun
from .grw import CollapseEvent, FlashHistory
from .numerics import GridSpec, WaveFunction, marginal_density

HEADER = struct.Struct("<IIdd")
PRE = "pre-collapse"
POST = "post-collapse"


@dataclass
class MatterDensityField:
    grid: GridSpec
    values: np.ndarray
    time: float
    note: str = ""

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def total(self) -> float:
        return float(self.values.sum()) * self.grid.spacing**self.ndim


def _physical_axes(grid: GridSpec) -> tuple[str, ...]:
    axes = {grid.spatial_axes(k) for k in range(grid.n_particles)}
    if len(axes) != 1:
        raise ValueError(f"particles live in different physical spaces: {sorted(axes)}")
    return axes.pop()


def matter_density(psi: WaveFunction, masses: Sequence[float]) -> MatterDensityField:
    grid = psi.grid
    if len(masses) != grid.n_particles:
        raise ValueError(f"{len(masses)} masses for {grid.n_particles} particles")
    _physical_axes(grid)
    values = sum(m * marginal_density(psi, k) for k, m in enumerate(masses))
    return MatterDensityField(grid, np.clip(values, 0.0, None), psi.time)


@dataclass
class DensityTimeSeries:
    frames: list[MatterDensityField] = field(default_factory=list)
    frame_interval: float = 0.0

    def __len__(self) -> int:
        return len(self.frames)

    def append(self, frame: MatterDensityField) -> None:
        if self.frames and frame.time < self.frames[-1].time:
            raise ValueError(f"frame at t={frame.time} precedes the last frame at t={self.frames[-1].time}")
        self.frames.append(frame)

    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])


class DensityRecorder:
    """Hooks for ``run_grw`` that keep a frame every ``frame_every`` steps
    plus a pre/post pair around every collapse."""

    def __init__(self, masses: Sequence[float], dt: float, frame_every: int = 10):
        if frame_every < 1:
            raise ValueError("frame_every must be >= 1")
        self.masses = tuple(masses)
        self.frame_every = frame_every
        self.series = DensityTimeSeries([], frame_every * dt)
        self._step = 0

    def on_step(self, t: float, psi: WaveFunction) -> None:
        if self._step % self.frame_every == 0:
            self.series.append(matter_density(psi, self.masses))
        self._step += 1

    def on_collapse(self, event: CollapseEvent, before: WaveFunction, after: WaveFunction) -> None:
        pre = matter_density(before, self.masses)
        pre.note = PRE
        post = matter_density(after, self.masses)
        post.note = POST
        self.series.append(pre)
        self.series.append(post)

    def finish(self, psi: WaveFunction) -> DensityTimeSeries:
        """Make sure the final state is the last frame."""
        if not self.series.frames or self.series.frames[-1].time < psi.time:
            self.series.append(matter_density(psi, self.masses))
        return self.series


def half_space_mass(fld: MatterDensityField, boundary: float, axis: int = 0) -> tuple[float, float]:
    """Field integral on either side of ``x[axis] = boundary``; the cell that
    straddles the boundary is split in proportion."""
    grid = fld.grid
    dx = grid.spacing
    if not -grid.extent <= boundary <= grid.extent:
        raise ValueError(f"boundary {boundary} outside the grid")
    lower = grid.coords - 0.5 * dx
    frac_left = np.clip((boundary - lower) / dx, 0.0, 1.0)
    other = tuple(a for a in range(fld.ndim) if a != axis)
    profile = fld.values.sum(axis=other) if other else fld.values
    vol = dx**fld.ndim
    left = float(np.sum(profile * frac_left)) * vol
    right = float(np.sum(profile * (1.0 - frac_left))) * vol
    return left, right


@dataclass
class DelocationReport:
    event_time: float
    boundary: float
    before: tuple[float, float]
    after: tuple[float, float]
    elapsed: float
    frames: tuple[int, int]

    @property
    def transferred(self) -> float:
        """Mass that changed sides."""
        return abs(self.after[0] - self.before[0])

    def as_dict(self) -> dict:
        return {
            "event_time": self.event_time,
            "boundary": self.boundary,
            "before": list(self.before),
            "after": list(self.after),
            "elapsed": self.elapsed,
            "transferred": self.transferred,
            "frames": list(self.frames),
        }


def delocation_report(series: DensityTimeSeries, boundary: float, event) -> DelocationReport:
    """Half-space masses in the frames bracketing ``event`` (a CollapseEvent
    or a time).  Recorded pre/post collapse frames are used when present."""
    if not series.frames:
        raise ValueError("empty density series")
    if isinstance(event, CollapseEvent):
        t = event.applied_time if event.applied_time is not None else event.time
    else:
        t = float(event)
    times = series.times()
    if not times[0] <= t <= times[-1]:
        raise ValueError(f"event at t={t} lies outside the series span [{times[0]}, {times[-1]}]")
    tol = 1e-9 * max(1.0, abs(t))
    i_before = None
    for i, f in enumerate(series.frames):
        if f.note == PRE and abs(f.time - t) <= tol:
            i_before = i
            break
    if i_before is None:
        i_before = int(np.flatnonzero(times <= t + tol)[-1])
    i_after = min(i_before + 1, len(series) - 1)
    fb, fa = series.frames[i_before], series.frames[i_after]
    return DelocationReport(t, boundary, half_space_mass(fb, boundary), half_space_mass(fa, boundary),
                            fa.time - fb.time, (i_before, i_after))


@dataclass
class FlashRecord:
    history: FlashHistory
    edges: tuple[float, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return len(self.history)


def extract_flashes(history: FlashHistory, edges: Sequence[float] = (0.0,), axis: int = 0) -> FlashRecord:
    """Validated flash record with counts per region of physical space, the
    regions being cut at ``edges`` along spatial axis ``axis``."""
    history.validate()
    edges = tuple(sorted(float(e) for e in edges))
    if history.events:
        coord = np.array([e.center[axis] for e in history.events])
        counts = np.bincount(np.searchsorted(edges, coord, side="right"), minlength=len(edges) + 1)
    else:
        counts = np.zeros(len(edges) + 1, dtype=int)
    return FlashRecord(history, edges, counts)


def bohm_sides(run: EnsembleRun, boundary: float = 0.0, axis: int = 0) -> np.ndarray:
    """+1/-1 side of ``boundary`` for every member and recorded sample."""
    return np.where(run.positions[:, :, axis] >= boundary, 1, -1)


def side_changes(run: EnsembleRun, boundary: float = 0.0, axis: int = 0) -> np.ndarray:
    """Number of side switches per member over its valid samples."""
    sides = bohm_sides(run, boundary, axis)
    changes = np.zeros(run.n_members, dtype=int)
    for i in range(run.n_members):
        n = int(run.abort_index[i])
        changes[i] = int(np.count_nonzero(np.diff(sides[i, :n])))
    return changes


def _fmt(x: float) -> str:
    return repr(float(x))


def write_density_csv(fld: MatterDensityField, path: Path) -> None:
    coords = fld.grid.coords
    names = ["x", "y", "z"][: fld.ndim]
    lines = [",".join(names + ["value"])]
    for idx in np.ndindex(*fld.values.shape):
        lines.append(",".join([_fmt(coords[i]) for i in idx] + [_fmt(fld.values[idx])]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def encode_density(fld: MatterDensityField) -> bytes:
    header = HEADER.pack(fld.ndim, fld.grid.points, fld.grid.spacing, fld.time)
    return header + np.ascontiguousarray(fld.values, dtype="<f8").tobytes()


def decode_density(blob: bytes) -> tuple[np.ndarray, float, float]:
    """Returns (values, dx, time)."""
    dims, m, dx, t = HEADER.unpack_from(blob)
    count = m**dims
    expected = HEADER.size + 8 * count
    if len(blob) != expected:
        raise ValueError(f"density blob has {len(blob)} bytes, header implies {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=HEADER.size).reshape((m,) * dims)
    return values.copy(), dx, t


def write_density_binary(fld: MatterDensityField, path: Path) -> None:
    Path(path).write_bytes(encode_density(fld))


def read_density_binary(path: Path) -> tuple[np.ndarray, float, float]:
    return decode_density(Path(path).read_bytes())


def density_grid_from_header(m: int, dx: float) -> np.ndarray:
    extent = 0.5 * m * dx
    return -extent + dx * np.arange(m)


def field_is_consistent(fld: MatterDensityField, masses: Sequence[float], rtol: float = 1e-6) -> bool:
    return bool(np.all(fld.values >= 0)) and math.isclose(fld.total(), sum(masses), rel_tol=rtol)
