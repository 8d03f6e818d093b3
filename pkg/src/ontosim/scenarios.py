"""Initial states, scenario documents and their validation.

A scenario document is JSON with ``schema_version`` 1.  Missing keys take the
defaults in ``DEFAULTS``; unknown keys are errors in strict mode and warnings
otherwise.  Semantic problems are collected and reported together.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

import numpy as np
from scipy import special

from .grw import LAMBDA_SI, SIGMA_SI, CollapseParams
from .numerics import (GridSpec, HamiltonianParams, PotentialSpec, WaveFunction, build_grid, max_stable_dt,
                       normalize)

SCHEMA_VERSION = 1
ONTOLOGIES = ("bohm", "grwm", "grwf", "schrodinger", "all")
GRW_ONTOLOGIES = ("grwm", "grwf", "all")
SUPPORT_WIDTHS = 5.0
POINTER_SEPARATION_WIDTHS = 6.0
MAX_SLIT_OVERLAP = 0.5


class ScenarioError(ValueError):
    """Config document is malformed or inconsistent; ``problems`` lists all findings."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# initial states ---------------------------------------------------------------

def _gaussian(x: np.ndarray, x0: float, k0: float, width: float) -> np.ndarray:
    return (2.0 * np.pi * width**2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4.0 * width**2) + 1j * k0 * x)


def _check_support(grid: GridSpec, center: float, width: float, what: str) -> None:
    if abs(center) + SUPPORT_WIDTHS * width > grid.extent:
        raise ValueError(f"{what} at {center} with width {width} is closer than "
                         f"{SUPPORT_WIDTHS:g} widths to the boundary at +/-{grid.extent}")


def gaussian_packet(grid: GridSpec, x0=0.0, k0=0.0, width=1.0) -> WaveFunction:
    """Product of Gaussians exp(-(x - x0)^2 / (4 width^2) + i k0 x), one per
    axis; ``width`` is the standard deviation of |psi|^2.  Scalars broadcast."""
    x0s, k0s, widths = (np.broadcast_to(np.asarray(v, dtype=float), (grid.dims,)) for v in (x0, k0, width))
    if np.any(widths <= 0):
        raise ValueError("packet width must be positive")
    amps = np.ones([1] * grid.dims, dtype=complex)
    for axis in range(grid.dims):
        _check_support(grid, x0s[axis], widths[axis], "packet")
        amps = amps * _gaussian(grid.axis_mesh(axis), x0s[axis], k0s[axis], widths[axis])
    return normalize(WaveFunction(grid, np.broadcast_to(amps, grid.shape)))


def slit_overlap(separation: float, width: float) -> float:
    """<g(x - d/2) | g(x + d/2)> for two real normalized Gaussians."""
    return math.exp(-separation**2 / (8.0 * width**2))


def double_slit(grid: GridSpec, separation=4.0, width=0.5, k0=0.0) -> WaveFunction:
    """Equal superposition of coherent Gaussians at +/- separation/2."""
    if grid.dims != 1:
        raise ValueError("the double slit is a one-axis scenario")
    if not separation > 4.0 * width:
        raise ValueError(f"separation {separation} must exceed 4 * width = {4 * width}")
    if slit_overlap(separation, width) > MAX_SLIT_OVERLAP:
        raise ValueError("slits overlap too much to be distinct")
    _check_support(grid, separation / 2.0, width, "slit packet")
    x = grid.coords
    amps = _gaussian(x, separation / 2.0, k0, width) + _gaussian(x, -separation / 2.0, k0, width)
    return normalize(WaveFunction(grid, amps))


def smooth_box(x: np.ndarray, lo: float, hi: float, edge: float) -> np.ndarray:
    """Indicator of [lo, hi] with error-function walls of scale ``edge``."""
    return 0.5 * (special.erf((x - lo) / edge) - special.erf((x - hi) / edge))


def split_box(grid: GridSpec, width=4.0, k0=8.0, edge=0.75, gap=1.0) -> WaveFunction:
    """A box of ``width`` cut at x = 0 by a partition of thickness ``gap``;
    the right half moves at momentum +k0 and the left half at -k0.

    The walls are error functions, so the momentum content of each half
    decays like exp(-k^2 edge^2 / 4) away from +/-k0; with k0 * edge >= 6 the
    halves leave essentially no slow component near the partition.
    """
    if grid.dims != 1:
        raise ValueError("the split box is a one-axis scenario")
    if not 0 <= gap < width:
        raise ValueError("gap must lie in [0, width)")
    if not edge > 0:
        raise ValueError("edge must be positive")
    _check_support(grid, width / 2.0, edge, "box wall")
    x = grid.coords
    right = smooth_box(x, gap / 2.0, width / 2.0, edge)
    left = smooth_box(x, -width / 2.0, -gap / 2.0, edge)
    return normalize(WaveFunction(grid, right * np.exp(1j * k0 * x) + left * np.exp(-1j * k0 * x)))


def pointer_state(grid: GridSpec, offset=4.0, system_width=0.5, pointer_width=1.0,
                  weight_plus=0.5) -> WaveFunction:
    """(c+ |system at +offset> + c- |system at -offset>) x |pointer at 0>.

    Grid axis 0 is the system coordinate, axis 1 the pointer.
    """
    if grid.dims != 2:
        raise ValueError("the pointer model needs exactly two grid axes")
    if not 0 < weight_plus < 1:
        raise ValueError("weight_plus must lie strictly between 0 and 1")
    _check_support(grid, offset, system_width, "system branch")
    _check_support(grid, 0.0, pointer_width, "pointer")
    if slit_overlap(2 * offset, system_width) > 1e-6:
        raise ValueError("system branches overlap")
    x1, x2 = grid.axis_mesh(0), grid.axis_mesh(1)
    system = (math.sqrt(weight_plus) * _gaussian(x1, offset, 0.0, system_width)
              + math.sqrt(1.0 - weight_plus) * _gaussian(x1, -offset, 0.0, system_width))
    return normalize(WaveFunction(grid, system * _gaussian(x2, 0.0, 0.0, pointer_width)))


CONSTRUCTORS: dict[str, tuple[Callable[..., WaveFunction], dict[str, Any]]] = {
    "gaussian_packet": (gaussian_packet, {"x0": 0.0, "k0": 0.0, "width": 1.0}),
    "double_slit": (double_slit, {"separation": 4.0, "width": 0.5, "k0": 0.0}),
    "split_box": (split_box, {"width": 4.0, "k0": 8.0, "edge": 0.75, "gap": 1.0}),
    "pointer_state": (pointer_state, {"offset": 4.0, "system_width": 0.5, "pointer_width": 1.0,
                                      "weight_plus": 0.5}),
}


# documents -------------------------------------------------------------------

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": "unnamed",
    "initial_state": {"constructor": "gaussian_packet"},
    "grid": {"extent": 20.0, "points": 256, "layout": [[0, "x"]]},
    "masses": [1.0],
    "potential": {"kind": "free"},
    "ontology": "bohm",
    "horizon": 1.0,
    "dt": 0.01,
    "ensemble_size": 1000,
    "realizations": 1,
    "seed": 0,
    "collapse": None,
    "detection": [],
    "analysis": {"boundary": 0.0, "histogram_axis": None, "resolution_threshold": 0.999},
    "output": {"frame_every": 10, "trajectory_stride": 10, "histogram_bins": 80},
}
COLLAPSE_KEYS = {"lambda_rate", "sigma_loc", "si"}
SI_DEFAULTS = {"lambda_per_s": LAMBDA_SI, "sigma_m": SIGMA_SI, "time_unit_s": 1.0}
# keys that change statistics or presentation but not the physical setup
# sections whose keys depend on a selector and are checked after merging
OPEN_SECTIONS = ("initial_state", "potential")
RUN_ONLY_KEYS = ("name", "ontology", "seed", "ensemble_size", "realizations", "output")


@dataclass
class ScenarioSpec:
    name: str
    constructor: str
    state_params: dict[str, Any]
    grid: GridSpec
    hamiltonian: HamiltonianParams
    ontology: str
    horizon: float
    dt: float
    ensemble_size: int
    realizations: int
    seed: int
    collapse: CollapseParams | None
    detection: list[tuple[float, int]]
    analysis: dict[str, Any]
    output: dict[str, Any]
    si: dict[str, float]
    document: dict[str, Any]
    warnings: list[str] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def initial_state(self) -> WaveFunction:
        fn, _ = CONSTRUCTORS[self.constructor]
        return fn(self.grid, **self.state_params)

    @property
    def scenario_hash(self) -> str:
        return scenario_hash(self.document)

    def with_overrides(self, **changes) -> "ScenarioSpec":
        """Re-validated copy with top-level document keys replaced."""
        doc = copy.deepcopy(self.document)
        doc.update(changes)
        return spec_from_document(doc)

    def si_summary(self) -> dict[str, float]:
        """Unit mapping recorded in manifests."""
        out = dict(self.si)
        out["lambda_si_in_sim_units"] = self.si["lambda_per_s"] * self.si["time_unit_s"]
        out["expected_events_at_si_rate"] = out["lambda_si_in_sim_units"] * self.grid.n_particles * self.horizon
        if self.collapse is not None:
            out["length_unit_m"] = self.si["sigma_m"] / self.collapse.sigma_loc
            out["expected_events"] = self.collapse.lambda_rate * self.grid.n_particles * self.horizon
        return out


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(document: dict[str, Any]) -> str:
    physical = {k: v for k, v in document.items() if k not in RUN_ONLY_KEYS}
    return hashlib.sha256(canonical_json(physical).encode("utf-8")).hexdigest()


def _merge(defaults: dict, given: dict, path: str, strict: bool, problems: list[str], warnings: list[str]) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            msg = f"unknown key {where!r}"
            (problems if strict else warnings).append(msg)
            continue
        if isinstance(defaults.get(key), dict) and isinstance(value, dict) and key not in OPEN_SECTIONS:
            out[key] = _merge(defaults[key], value, where, strict, problems, warnings)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_document(text: str) -> dict[str, Any]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario document must be a JSON object"])
    return doc


def load_scenario(text: str, strict: bool = True) -> ScenarioSpec:
    return spec_from_document(parse_document(text), strict=strict)


def _number(doc: dict, key: str, problems: list[str], positive: bool = True) -> float:
    try:
        value = float(doc[key])
    except (TypeError, ValueError):
        problems.append(f"{key} must be a number, got {doc[key]!r}")
        return math.nan
    if not math.isfinite(value) or (positive and not value > 0):
        problems.append(f"{key} must be {'positive and ' if positive else ''}finite, got {doc[key]!r}")
    return value


def spec_from_document(raw: dict[str, Any], strict: bool = True) -> ScenarioSpec:
    problems: list[str] = []
    warnings: list[str] = []
    doc = _merge(DEFAULTS, raw, "", strict, problems, warnings)

    if doc["schema_version"] != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}, got {doc['schema_version']!r}")

    grid = None
    g = doc["grid"]
    try:
        grid = build_grid(len(g["layout"]), g["extent"], g["points"], g["layout"])
    except (TypeError, ValueError) as exc:
        problems.append(f"grid: {exc}")

    H = None
    try:
        pot = dict(doc["potential"])
        kind = pot.pop("kind", "free")
        H = HamiltonianParams(tuple(doc["masses"]), PotentialSpec(kind, pot))
        if grid is not None:
            H.axis_masses(grid)
    except (TypeError, ValueError) as exc:
        problems.append(f"hamiltonian: {exc}")
        H = None

    init = dict(doc["initial_state"])
    constructor = init.pop("constructor", None)
    state_params: dict[str, Any] = {}
    if constructor not in CONSTRUCTORS:
        problems.append(f"initial_state.constructor {constructor!r} is not one of {sorted(CONSTRUCTORS)}")
        constructor = None
    else:
        defaults = CONSTRUCTORS[constructor][1]
        state_params = _merge(defaults, init, "initial_state", strict, problems, warnings)

    ontology = doc["ontology"]
    if ontology not in ONTOLOGIES:
        problems.append(f"ontology {ontology!r} is not one of {ONTOLOGIES}")

    horizon = _number(doc, "horizon", problems)
    dt = _number(doc, "dt", problems)
    if math.isfinite(horizon) and math.isfinite(dt) and dt > 0:
        n = round(horizon / dt)
        if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
            problems.append(f"horizon {horizon} must be a positive whole number of steps dt={dt}")
        if grid is not None and H is not None:
            try:
                bound = max_stable_dt(grid, H)
                if dt > bound:
                    problems.append(f"dt={dt} exceeds the split-step bound {bound:.6g} for this grid and potential")
            except ValueError as exc:
                problems.append(f"potential: {exc}")

    for key in ("ensemble_size", "realizations"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool) or doc[key] < 1:
            problems.append(f"{key} must be a positive integer, got {doc[key]!r}")
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
        problems.append(f"seed must be a non-negative integer, got {doc['seed']!r}")

    collapse = None
    si = dict(SI_DEFAULTS)
    cdoc = doc["collapse"]
    if cdoc is not None:
        if not isinstance(cdoc, dict):
            problems.append("collapse must be an object or null")
        else:
            for key in sorted(set(cdoc) - COLLAPSE_KEYS):
                (problems if strict else warnings).append(f"unknown key 'collapse.{key}'")
            si = _merge(SI_DEFAULTS, cdoc.get("si", {}), "collapse.si", strict, problems, warnings)
            try:
                collapse = CollapseParams(float(cdoc["lambda_rate"]), float(cdoc["sigma_loc"]))
                if grid is not None:
                    collapse.check_resolvable(grid)
            except KeyError as exc:
                problems.append(f"collapse needs {exc.args[0]!r}")
            except (TypeError, ValueError) as exc:
                problems.append(f"collapse: {exc}")
    if ontology in GRW_ONTOLOGIES and cdoc is None:
        problems.append(f"ontology {ontology!r} needs a collapse section")

    detection: list[tuple[float, int]] = []
    for i, hit in enumerate(doc["detection"] or []):
        try:
            t, k = float(hit["time"]), int(hit["particle"])
            unknown = set(hit) - {"time", "particle"}
            if unknown:
                (problems if strict else warnings).append(f"unknown key(s) {sorted(unknown)} in detection[{i}]")
            if math.isfinite(horizon) and not 0 <= t <= horizon:
                problems.append(f"detection[{i}] time {t} outside [0, {horizon}]")
            if grid is not None and not 0 <= k < grid.n_particles:
                problems.append(f"detection[{i}] particle {k} does not exist")
            detection.append((t, k))
        except (KeyError, TypeError, ValueError):
            problems.append(f"detection[{i}] must be an object with numeric 'time' and integer 'particle'")
    if detection and cdoc is None:
        problems.append("detection hits need a collapse section for sigma_loc")

    out = doc["output"]
    for key in ("frame_every", "trajectory_stride", "histogram_bins"):
        if not isinstance(out[key], int) or out[key] < 1:
            problems.append(f"output.{key} must be a positive integer, got {out[key]!r}")
    analysis = doc["analysis"]
    if grid is not None and analysis["histogram_axis"] is not None:
        if not 0 <= int(analysis["histogram_axis"]) < grid.dims:
            problems.append(f"analysis.histogram_axis {analysis['histogram_axis']} is not a grid axis")

    if grid is not None and H is not None and constructor is not None and not problems:
        try:
            CONSTRUCTORS[constructor][0](grid, **state_params)
        except (TypeError, ValueError) as exc:
            problems.append(f"initial_state: {exc}")
        problems.extend(_scenario_checks(constructor, state_params, grid, H, collapse, detection))

    if problems:
        raise ScenarioError(problems)

    resolved = copy.deepcopy(doc)
    resolved["initial_state"] = {"constructor": constructor, **state_params}
    if cdoc is not None:
        resolved["collapse"] = {"lambda_rate": collapse.lambda_rate, "sigma_loc": collapse.sigma_loc, "si": si}
    return ScenarioSpec(
        name=str(doc["name"]), constructor=constructor, state_params=state_params, grid=grid, hamiltonian=H,
        ontology=ontology, horizon=horizon, dt=dt, ensemble_size=doc["ensemble_size"],
        realizations=doc["realizations"], seed=doc["seed"], collapse=collapse, detection=detection,
        analysis=dict(analysis), output=dict(out), si=si, document=resolved, warnings=warnings,
    )


def _scenario_checks(constructor, params, grid, H, collapse, detection) -> list[str]:
    problems = []
    if constructor == "pointer_state":
        pot = H.potential
        if pot.kind != "pointer_coupling":
            problems.append("pointer_state needs a pointer_coupling potential")
        else:
            tau = pot.params["t_off"] - pot.params["t_on"]
            split = abs(pot.params["g"]) * tau**2 / H.masses[grid.layout[1][0]]
            need = POINTER_SEPARATION_WIDTHS * params["pointer_width"]
            if split < need:
                problems.append(f"pointer branches separate by {split:.3g} by the end of the window; "
                                f"need >= {need:.3g} ({POINTER_SEPARATION_WIDTHS:g} pointer widths)")
        if collapse is not None and collapse.sigma_loc * 4 > 2 * params["offset"]:
            problems.append("sigma_loc must be well below the system branch separation")
    if constructor == "split_box" and detection:
        t_d = min(t for t, _ in detection)
        drift = 2.0 * params["k0"] * t_d / H.masses[0]
        if drift < 3.0 * params["width"]:
            problems.append(f"box halves have moved apart by {drift:.3g} at detection; need >= 3 box widths")
        if collapse is not None and drift < 8.0 * collapse.sigma_loc:
            problems.append(f"box halves have moved apart by {drift:.3g} at detection; need >= 8 sigma_loc")
    return problems


# built-ins -------------------------------------------------------------------

def builtin_names() -> list[str]:
    files = resources.files("ontosim").joinpath("data").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def builtin_document(name: str) -> dict[str, Any]:
    if name not in builtin_names():
        raise ScenarioError([f"no built-in scenario {name!r}; available: {builtin_names()}"])
    text = resources.files("ontosim").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return parse_document(text)


def builtin(name: str, **changes) -> ScenarioSpec:
    doc = builtin_document(name)
    for key, value in changes.items():
        set_path(doc, key, value)
    return spec_from_document(doc)


def set_path(doc: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted key path, creating objects as needed.
    Double underscores also separate levels so paths can be keyword names."""
    parts = dotted.replace("__", ".").split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def einstein_box(width: float = 4.0, k0: float = 8.0, detection_time: float = 1.0,
                 sigma_loc: float = 1.0, **changes) -> ScenarioSpec:
    """Box of ``width`` split into halves moving apart at +/-k0, with a forced
    GRW hit at ``detection_time``."""
    return builtin("einstein_box", **{
        "initial_state.width": width, "initial_state.k0": k0, "collapse.sigma_loc": sigma_loc,
        "detection": [{"time": detection_time, "particle": 0}], **changes})


def pointer_measurement(g: float = 7.0, window: tuple[float, float] = (0.0, 1.0), **changes) -> ScenarioSpec:
    """System (axis 0) in a two-branch superposition coupled to a pointer
    (axis 1) through g * tanh(x_s / steepness) * x_p during ``window``."""
    return builtin("pointer_measurement", **{
        "potential.g": g, "potential.t_on": window[0], "potential.t_off": window[1], **changes})
