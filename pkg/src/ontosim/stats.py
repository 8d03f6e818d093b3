"""Goodness-of-fit utilities and pass/fail reports."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .numerics import GridSpec, WaveFunction, integrate, probability_density

SIGNIFICANCE = 0.01
MIN_EXPECTED = 5.0


def ks_critical(n: int, alpha: float = SIGNIFICANCE) -> float:
    """Asymptotic one-sample KS critical value; 1.63/sqrt(n) at 1%."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(n)


@dataclass
class TestReport:
    __test__ = False

    name: str
    statistic: float
    threshold: float
    sample_size: int
    passed: bool
    seed: int | None = None
    relation: str = "<"

    @classmethod
    def check(cls, name: str, statistic: float, threshold: float, sample_size: int,
              seed: int | None = None, relation: str = "<") -> "TestReport":
        ops = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal, "==": np.equal}
        if relation not in ops:
            raise ValueError(f"unknown relation {relation!r}")
        passed = bool(ops[relation](statistic, threshold))
        return cls(name, float(statistic), float(threshold), int(sample_size), passed, seed, relation)

    def as_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.statistic:.6g} {self.relation} {self.threshold:.6g} (n={self.sample_size})"


def grid_cdf(density: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear CDF of a 1D grid density treated as uniform within
    each cell; returns (cell edges, CDF at edges)."""
    density = np.asarray(density, dtype=float)
    if density.ndim != 1:
        raise ValueError("grid_cdf needs a one-dimensional density")
    edges = np.append(grid.coords, grid.coords[-1] + grid.spacing) - 0.5 * grid.spacing
    mass = np.clip(density, 0.0, None)
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    return edges, cdf / cdf[-1]


def ks_distance(samples: Sequence[float], cdf) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``.

    ``cdf`` is a callable or a tabulated ``(x, F)`` pair interpolated
    linearly; tabulated CDFs must cover every sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ValueError(f"need at least 10 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain NaN or infinite values")
    x = np.sort(x)
    if callable(cdf):
        F = np.asarray(cdf(x), dtype=float)
    else:
        grid_x, grid_F = (np.asarray(a, dtype=float) for a in cdf)
        if grid_x.shape != grid_F.shape or grid_x.size < 2:
            raise ValueError("tabulated cdf needs matching x and F arrays")
        if np.any(np.diff(grid_x) <= 0) or np.any(np.diff(grid_F) < 0):
            raise ValueError("tabulated cdf must be monotone on a strictly increasing grid")
        if x[0] < grid_x[0] or x[-1] > grid_x[-1]:
            raise ValueError(f"samples span [{x[0]}, {x[-1]}] outside the cdf support "
                             f"[{grid_x[0]}, {grid_x[-1]}]")
        F = np.interp(x, grid_x, grid_F)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass
class ChiSquareResult:
    statistic: float
    pvalue: float
    dof: int
    observed: np.ndarray
    expected: np.ndarray


def merge_bins(observed, expected, min_expected: float = MIN_EXPECTED):
    """Merge adjacent bins left to right until each expected count reaches
    ``min_expected``; a short tail joins the last full bin."""
    obs_out, exp_out = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_out.append(acc_o)
            exp_out.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if obs_out:
            obs_out[-1] += acc_o
            exp_out[-1] += acc_e
        else:
            obs_out.append(acc_o)
            exp_out.append(acc_e)
    return np.array(obs_out), np.array(exp_out)


def chi_square_counts(observed, expected, ddof: int = 0, min_expected: float = MIN_EXPECTED) -> ChiSquareResult:
    """Pearson chi-square after merging sparse bins.

    Degrees of freedom are ``bins - 1 - ddof``; the p-value is the regularized
    upper incomplete gamma Q(dof/2, stat/2).
    """
    obs = np.asarray(observed, dtype=float).ravel()
    exp = np.asarray(expected, dtype=float).ravel()
    if obs.shape != exp.shape:
        raise ValueError(f"observed has {obs.size} bins, expected has {exp.size}")
    if np.any(exp < 0) or np.any(obs < 0):
        raise ValueError("counts must be non-negative")
    obs, exp = merge_bins(obs, exp, min_expected)
    if np.any(exp <= 0):
        raise ValueError("an expected bin is zero after merging")
    dof = obs.size - 1 - ddof
    if dof < 1:
        raise ValueError(f"chi-square needs at least one degree of freedom, got {dof}")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    p = float(special.gammaincc(dof / 2.0, stat / 2.0))
    return ChiSquareResult(stat, p, dof, obs, exp)


def region_mask(grid: GridSpec, region) -> np.ndarray:
    if callable(region):
        mesh = [grid.axis_mesh(a) for a in range(grid.dims)]
        mask = np.broadcast_to(np.asarray(region(*mesh), dtype=bool), grid.shape)
    else:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != grid.shape:
            raise ValueError(f"region mask shape {mask.shape} does not match grid {grid.shape}")
    return mask


def branch_mass(psi: WaveFunction, region: np.ndarray | Callable) -> float:
    """Probability in ``region`` (a boolean mask or a predicate of the axis
    coordinates)."""
    mask = region_mask(psi.grid, region)
    if not mask.any():
        raise ValueError("region contains no grid points")
    return integrate(np.where(mask, probability_density(psi), 0.0), psi.grid)


def binomial_sigma(n: int, p: float) -> float:
    return math.sqrt(p * (1.0 - p) / n)
