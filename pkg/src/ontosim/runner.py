"""Scenario runs, manifests, comparisons and plot data.

Output layout of a run directory::

    manifest.json
    bohm/trajectories.csv        member,time,<coords>   sorted by member then time
    bohm/members.csv             member,status,substeps,side_changes
    bohm/landing_histogram.csv   bin_center,count,expected
    grw/realizations.csv         one summary row per GRW realization
    grwm/frames.csv              frame index (time, note, half-space masses)
    grwm/frames/frame_NNNN.csv   matter density of realization 0 (+ .bin)
    grwf/flashes.csv             flashes of realization 0
    schrodinger/frames...        as grwm, without collapses
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .bohm import run_ensemble, sample_equilibrium
from .fields import (DensityRecorder, DensityTimeSeries, delocation_report, encode_density,
                     extract_flashes, half_space_mass, matter_density, write_density_csv)
from .grw import run_grw
from .numerics import (SplitStepPropagator, WaveFunction, evolve_schrodinger, expected_energy,
                       probability_density)
from .outputs import OutputDir, read_csv, sha256_file
from .rng import derive_seed
from .scenarios import (ScenarioError, ScenarioSpec, builtin_document, builtin_names, parse_document,
                        set_path, spec_from_document)
from .stats import TestReport, binomial_sigma, grid_cdf, ks_critical, ks_distance

MANIFEST_SCHEMA = 1
KS_LIMIT = 0.02
ONTOLOGY_SETS = {"all": ("bohm", "grwm", "grwf")}
PLOT_KINDS = ("landing-histogram", "trajectory-fan", "density-frames", "flash-scatter")
FAN_MEMBERS = 100


class MissingOutputError(FileNotFoundError):
    pass


# helpers ----------------------------------------------------------------------

def axis_profile(psi: WaveFunction, axis: int) -> np.ndarray:
    """|psi|^2 integrated over every grid axis except ``axis``."""
    rho = probability_density(psi)
    other = tuple(a for a in range(rho.ndim) if a != axis)
    if not other:
        return rho
    return rho.sum(axis=other) * psi.grid.spacing ** len(other)


def upper_mass(psi: WaveFunction, axis: int, boundary: float) -> float:
    """Probability that grid coordinate ``axis`` exceeds ``boundary``."""
    grid = psi.grid
    prof = axis_profile(psi, axis)
    frac_above = np.clip((grid.coords + 0.5 * grid.spacing - boundary) / grid.spacing, 0.0, 1.0)
    return float(np.sum(prof * frac_above) / np.sum(prof))


def ks_against_grid(samples: np.ndarray, density: np.ndarray, grid) -> float:
    edges, cdf = grid_cdf(density, grid)
    x = np.asarray(samples, dtype=float)
    # the last half cell belongs to cell 0 across the periodic seam
    x = np.where(x >= edges[-1], x - 2.0 * grid.extent, x)
    return ks_distance(x, (edges, cdf))


def coordinate_names(spec: ScenarioSpec) -> list[str]:
    return [f"p{p}_{ax}" for p, ax in spec.grid.layout]


def _histogram_axis(spec: ScenarioSpec) -> int:
    h = spec.analysis.get("histogram_axis")
    return spec.grid.dims - 1 if h is None else int(h)


def resolve_spec(scenario, overrides: Sequence[str] | dict | None = None, seed: int | None = None,
                 ontology: str | None = None, frames: int | None = None, strict: bool = True) -> ScenarioSpec:
    """Build a spec from a path, built-in name, document dict or spec, then
    apply ``key=value`` overrides (values parsed as JSON when possible)."""
    if isinstance(scenario, ScenarioSpec):
        doc = copy.deepcopy(scenario.document)
    elif isinstance(scenario, dict):
        doc = copy.deepcopy(scenario)
    else:
        text = str(scenario)
        path = Path(text)
        if path.suffix == ".json" or path.exists():
            try:
                doc = parse_document(path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ScenarioError([f"cannot read scenario {text!r}: {exc}"]) from None
        elif text in builtin_names():
            doc = builtin_document(text)
        else:
            raise ScenarioError([f"{text!r} is neither a scenario file nor a built-in ({builtin_names()})"])
    items = overrides.items() if isinstance(overrides, dict) else (_split_override(o) for o in overrides or ())
    for key, value in items:
        set_path(doc, key, value)
    if seed is not None:
        doc["seed"] = int(seed)
    if ontology is not None:
        doc["ontology"] = ontology
    spec = spec_from_document(doc, strict=strict)
    if frames is not None:
        if frames < 1:
            raise ScenarioError([f"--frames must be >= 1, got {frames}"])
        doc = copy.deepcopy(spec.document)
        doc["output"]["frame_every"] = max(1, math.ceil(spec.n_steps / frames))
        spec = spec_from_document(doc, strict=strict)
    return spec


def _split_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ScenarioError([f"override {text!r} is not of the form key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


# manifest ---------------------------------------------------------------------

@dataclass
class RunManifest:
    scenario_name: str
    scenario_hash: str
    scenario: dict
    si_mapping: dict
    seed: int
    ontology: str
    ontologies: list[str]
    rng_streams: list[str]
    reports: list[dict]
    metrics: dict[str, dict]
    outputs: dict[str, str]
    timings: dict[str, float]
    delocation_report: dict | None = None
    warnings: list[str] = field(default_factory=list)
    schema_version: int = MANIFEST_SCHEMA
    package_version: str = __version__

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.reports)

    def report_lines(self) -> list[str]:
        return [TestReport(**r).line() for r in self.reports]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d.pop("passed", None)
        return cls(**d)


# pipelines --------------------------------------------------------------------

def _write_series(out: OutputDir, prefix: str, series: DensityTimeSeries, boundary: float) -> None:
    index = []
    for i, frame in enumerate(series.frames):
        rel = f"{prefix}/frames/frame_{i:04d}"
        write_density_csv(frame, out.path(rel + ".csv"))
        out.register(rel + ".csv")
        out.write_bytes(rel + ".bin", encode_density(frame))
        left, right = half_space_mass(frame, boundary)
        index.append((i, frame.time, frame.note, left, right))
    out.write_csv(f"{prefix}/frames.csv", ["frame", "time", "note", "left_mass", "right_mass"], index)


def _run_schrodinger(spec: ScenarioSpec, psi0: WaveFunction, out: OutputDir, reports: list, seed: int) -> dict:
    H, boundary = spec.hamiltonian, spec.analysis["boundary"]
    prop = SplitStepPropagator(spec.grid, H, spec.dt)
    every = spec.output["frame_every"]
    series = DensityTimeSeries([], every * spec.dt)
    psi, done = psi0, 0
    series.append(matter_density(psi, H.masses))
    while done < spec.n_steps:
        n = min(every, spec.n_steps - done)
        psi = evolve_schrodinger(psi, H, spec.dt, n, prop)
        done += n
        series.append(matter_density(psi, H.masses))
    _write_series(out, "schrodinger", series, boundary)

    norm_drift = abs(psi.norm() - 1.0)
    metrics: dict[str, Any] = {"norm_drift": norm_drift, "steps": spec.n_steps}
    reports.append(TestReport.check("schrodinger.norm_drift", norm_drift, 1e-9, spec.n_steps, seed))
    if not H.potential.time_dependent:
        e0, e1 = expected_energy(psi0, H), expected_energy(psi, H)
        drift = abs(e1 - e0) / max(abs(e0), 1e-300)
        metrics.update(energy_initial=e0, energy_final=e1, energy_drift=drift)
        reports.append(TestReport.check("schrodinger.energy_drift", drift, 1e-6, spec.n_steps, seed))
    left, right = half_space_mass(series.frames[-1], boundary)
    metrics["half_space_mass"] = [left, right]
    if spec.constructor == "pointer_state":
        plus = upper_mass(psi, 0, boundary)
        metrics["branch_mass"] = [plus, 1.0 - plus]
        reports.append(TestReport.check("schrodinger.both_branches_present", min(plus, 1 - plus), 0.45, 1, seed, ">"))
    if spec.constructor == "split_box":
        total = left + right
        reports.append(TestReport.check("schrodinger.half_space_balance", abs(left / total - 0.5), 1e-3, 1, seed))
    return metrics


def _run_bohm(spec: ScenarioSpec, psi0: WaveFunction, out: OutputDir, reports: list, seed: int) -> dict:
    grid, H = spec.grid, spec.hamiltonian
    boundary = spec.analysis["boundary"]
    ens = sample_equilibrium(psi0, spec.ensemble_size, seed)
    sides = np.where(ens.members[:, 0] >= boundary, 1, -1)
    changes = np.zeros(len(ens), dtype=int)

    def track(t, psi, pos):
        nonlocal sides
        now = np.where(pos[:, 0] >= boundary, 1, -1)
        changes[:] += now != sides
        sides = now

    run = run_ensemble(psi0, H, ens.members, spec.dt, spec.horizon,
                       stride=spec.output["trajectory_stride"], on_step=track)
    n = run.n_members
    ok = run.ok
    n_ok = int(ok.sum())
    aborts = n - n_ok
    metrics: dict[str, Any] = {"n": n_ok, "node_aborts": aborts, "delocation": 0.0}
    reports.append(TestReport.check("bohm.node_abort_fraction", aborts / n, 1e-3, n, seed))

    final = run.positions[ok, -1]
    h_axis = _histogram_axis(spec)
    if n_ok >= 10:
        ks = {a: ks_against_grid(final[:, a], axis_profile(run.final_psi, a), grid) for a in range(grid.dims)}
        limit = max(KS_LIMIT, ks_critical(n_ok))
        for a, d in ks.items():
            reports.append(TestReport.check(f"bohm.ks_axis{a}", d, limit, n_ok, seed))
        metrics["ks_distance"] = ks[h_axis]

    if grid.dims == 1 and n_ok > 1:
        order = np.argsort(run.positions[ok, 0, 0])
        ordered = run.positions[ok][order][:, :, 0]
        violations = int(np.count_nonzero(np.diff(ordered, axis=0) < 0))
        reports.append(TestReport.check("bohm.order_violations", violations, 0, n_ok, seed, "=="))
    crossings = int(changes[ok].sum())
    metrics["side_changes_total"] = crossings
    if spec.constructor in ("double_slit", "split_box"):
        reports.append(TestReport.check("bohm.axis_crossings", crossings, 0, n_ok, seed, "=="))
    if spec.constructor == "pointer_state":
        plus = final[:, 1] < 0.0
        w = spec.state_params["weight_plus"]
        p_hat = float(plus.mean())
        z = abs(p_hat - w) / binomial_sigma(n_ok, w)
        consistent = float(np.mean((final[:, 0] > boundary) == plus))
        metrics.update(branch_frequency_plus=p_hat, branch_weight_plus=w, branch_consistency=consistent)
        reports.append(TestReport.check("bohm.branch_frequency_z", z, 3.0, n_ok, seed))
        reports.append(TestReport.check("bohm.branch_consistency", consistent, 1.0, n_ok, seed, "=="))

    names = coordinate_names(spec)
    rows = []
    for i in range(n):
        for s in range(int(run.abort_index[i])):
            rows.append((i, run.times[s], *run.positions[i, s]))
    out.write_csv("bohm/trajectories.csv", ["member", "time", *names], rows)
    out.write_csv("bohm/members.csv", ["member", "status", "substeps", "side_changes"],
                  [(i, run.status[i], run.substeps[i], changes[i]) for i in range(n)])
    bins = spec.output["histogram_bins"]
    edges = np.linspace(-grid.extent, grid.extent, bins + 1)
    counts, _ = np.histogram(final[:, h_axis], bins=edges)
    prof = axis_profile(run.final_psi, h_axis)
    cell = np.clip(np.searchsorted(edges, grid.coords, side="right") - 1, 0, bins - 1)
    expected = np.bincount(cell, weights=prof, minlength=bins) / prof.sum() * n_ok
    centers = 0.5 * (edges[1:] + edges[:-1])
    out.write_csv("bohm/landing_histogram.csv", ["bin_center", "count", "expected"],
                  zip(centers, counts, expected))
    return metrics


class _RealizationTracker:
    def __init__(self, spec: ScenarioSpec, recorder: DensityRecorder | None):
        self.spec = spec
        self.recorder = recorder
        self.boundary = spec.analysis["boundary"]
        self.threshold = spec.analysis["resolution_threshold"]
        self.pointer = spec.constructor == "pointer_state"
        self.resolution_time: float | None = None
        self.transferred = 0.0
        self.pre_detection: tuple[float, float] | None = None
        self.far_side: float | None = None
        self.max_norm_error = 0.0
        self.flashes: list[tuple[float, int, float]] = []

    def on_step(self, t: float, psi: WaveFunction) -> None:
        if self.recorder is not None:
            self.recorder.on_step(t, psi)
        if self.pointer and self.resolution_time is None:
            plus = upper_mass(psi, 0, self.boundary)
            if max(plus, 1.0 - plus) > self.threshold:
                self.resolution_time = t

    def on_collapse(self, event, before: WaveFunction, after: WaveFunction) -> None:
        if self.recorder is not None:
            self.recorder.on_collapse(event, before, after)
        masses = self.spec.hamiltonian.masses
        lb, rb = half_space_mass(matter_density(before, masses), self.boundary)
        la, ra = half_space_mass(matter_density(after, masses), self.boundary)
        self.transferred += abs(la / (la + ra) - lb / (lb + rb))
        self.max_norm_error = max(self.max_norm_error, abs(event.post_norm - 1.0))
        self.flashes.append((event.applied_time, event.particle_index, event.center[0]))
        if event.forced and self.far_side is None:
            total_b, total_a = lb + rb, la + ra
            self.pre_detection = (lb / total_b, rb / total_b)
            self.far_side = (ra if event.center[0] < self.boundary else la) / total_a


def _run_grw(spec: ScenarioSpec, psi0: WaveFunction, out: OutputDir, reports: list, seed: int,
             want_m: bool, want_f: bool) -> tuple[dict, dict, dict | None]:
    H, params, boundary = spec.hamiltonian, spec.collapse, spec.analysis["boundary"]
    pointer = spec.constructor == "pointer_state"
    rows, trackers, first = [], [], None
    for r in range(spec.realizations):
        seed_r = derive_seed(seed, f"grw/realization/{r}")
        recorder = DensityRecorder(H.masses, spec.dt, spec.output["frame_every"]) if r == 0 and want_m else None
        tr = _RealizationTracker(spec, recorder)
        psi_T, history = run_grw(psi0, H, params, spec.horizon, seed_r, spec.dt, forced=spec.detection,
                                 on_step=tr.on_step, on_collapse=tr.on_collapse)
        left, right = half_space_mass(matter_density(psi_T, H.masses), boundary)
        plus = upper_mass(psi_T, 0, boundary) if pointer else None
        selected = "" if plus is None else ("plus" if plus > 0.5 else "minus")
        rows.append((r, seed_r, len(history), sum(e.forced for e in history.events), left, right,
                     tr.transferred, tr.resolution_time, selected, tr.far_side))
        trackers.append(tr)
        if r == 0:
            first = (history, recorder, psi_T)

    header = ["realization", "seed", "n_events", "n_forced", "left_mass", "right_mass", "transferred",
              "resolution_time", "selected", "far_side_mass"]
    out.write_csv("grw/realizations.csv", header, rows)

    R = spec.realizations
    n_events = np.array([row[2] for row in rows])
    total_events = int(n_events.sum())
    if total_events:
        err = max(t.max_norm_error for t in trackers)
        reports.append(TestReport.check("grw.post_norm_error", err, 1e-12, total_events, seed, "<="))
    shared: dict[str, Any] = {"n": R, "events_mean": float(n_events.mean()),
                              "expected_events": params.lambda_rate * spec.grid.n_particles * spec.horizon}
    if pointer:
        resolved = [t.resolution_time is not None and t.resolution_time < spec.horizon / 2 for t in trackers]
        frac = float(np.mean(resolved))
        reports.append(TestReport.check("grw.resolved_before_half_horizon", frac, 0.95, R, seed, ">="))
        shared["resolved_fraction"] = frac
        shared["branch_frequency_plus"] = float(np.mean([row[8] == "plus" for row in rows]))
        shared["branch_weight_plus"] = spec.state_params["weight_plus"]
    if spec.detection:
        pre = [t.pre_detection for t in trackers if t.pre_detection is not None]
        far = [t.far_side for t in trackers if t.far_side is not None]
        if pre:
            dev = max(abs(p[0] - 0.5) for p in pre) if spec.constructor == "split_box" else None
            if dev is not None:
                reports.append(TestReport.check("grwm.pre_detection_balance", dev, 1e-3, len(pre), seed))
            reports.append(TestReport.check("grwm.far_side_mass", max(far), 1e-4, len(far), seed))
            shared["far_side_mass_max"] = max(far)

    history, recorder, psi_T = first
    deloc = None
    m_metrics = f_metrics = None
    if want_m:
        series = recorder.finish(psi_T)
        _write_series(out, "grwm", series, boundary)
        if history.events:
            target = next((e for e in history.events if e.forced), history.events[0])
            deloc = delocation_report(series, boundary, target).as_dict()
        m_metrics = dict(shared, mean_delocation=float(np.mean([t.transferred for t in trackers])),
                         frames=len(series))
    if want_f:
        n_cols = max(len(spec.grid.spatial_axes(k)) for k in range(spec.grid.n_particles))
        axes = ["x", "y", "z"][:n_cols]
        out.write_csv("grwf/flashes.csv",
                      ["time", "particle_index", *[f"center_{a}" for a in axes], "pre_norm", "post_norm",
                       "applied_time", "forced"],
                      [(e.time, e.particle_index, *e.center, *[""] * (n_cols - len(e.center)), e.pre_norm,
                        e.post_norm, e.applied_time, int(e.forced)) for e in history.events])
        record = extract_flashes(history, edges=(boundary,))
        f_metrics = dict(shared, flash_count_mean=float(n_events.mean()), flash_count=record.total,
                         flash_region_counts=[int(c) for c in record.counts], delocation=None)
        if pointer:
            conc = _flash_concordance(rows, trackers, spec)
            f_metrics["flash_branch_concordance"] = conc
            if conc is not None:
                reports.append(TestReport.check("grwf.flash_branch_concordance", conc, 0.9, R, seed, ">="))
    return m_metrics, f_metrics, deloc


def _flash_concordance(rows, trackers, spec: ScenarioSpec) -> float | None:
    """Share of post-resolution flashes that land in the selected branch:
    system flashes on the selected side, pointer flashes (once the coupling
    window has closed) on the side the pointer was pushed to."""
    t_off = spec.hamiltonian.potential.params["t_off"]
    hits = agree = 0
    for row, tr in zip(rows, trackers):
        if tr.resolution_time is None:
            continue
        plus = row[8] == "plus"
        for t, k, x in tr.flashes:
            if t <= tr.resolution_time or (k == 1 and t < t_off):
                continue
            hits += 1
            agree += (x > tr.boundary) == plus if k == 0 else (x < 0.0) == plus
    return agree / hits if hits else None


# run ---------------------------------------------------------------------------

def run(scenario, overrides=None, seed: int | None = None, out_dir: Path | str = "out",
        ontology: str | None = None, frames: int | None = None, strict: bool = True) -> RunManifest:
    t_start = time.perf_counter()
    spec = resolve_spec(scenario, overrides, seed, ontology, frames, strict)
    return run_spec(spec, out_dir, t_start)


def run_spec(spec: ScenarioSpec, out_dir: Path | str, t_start: float | None = None) -> RunManifest:
    t_start = time.perf_counter() if t_start is None else t_start
    out = OutputDir(Path(out_dir))
    psi0 = spec.initial_state()
    ontologies = list(ONTOLOGY_SETS.get(spec.ontology, (spec.ontology,)))
    reports: list[TestReport] = []
    metrics: dict[str, dict] = {}
    timings: dict[str, float] = {}
    streams: list[str] = []
    deloc = None
    if "schrodinger" in ontologies:
        t0 = time.perf_counter()
        metrics["schrodinger"] = _run_schrodinger(spec, psi0, out, reports, spec.seed)
        timings["schrodinger"] = time.perf_counter() - t0
    if "bohm" in ontologies:
        t0 = time.perf_counter()
        metrics["bohm"] = _run_bohm(spec, psi0, out, reports, spec.seed)
        streams.append(f"bohm/member/<0..{spec.ensemble_size - 1}>")
        timings["bohm"] = time.perf_counter() - t0
    want_m, want_f = "grwm" in ontologies, "grwf" in ontologies
    if want_m or want_f:
        t0 = time.perf_counter()
        m, f, deloc = _run_grw(spec, psi0, out, reports, spec.seed, want_m, want_f)
        if want_m:
            metrics["grwm"] = m
        if want_f:
            metrics["grwf"] = f
        streams += [f"grw/realization/<0..{spec.realizations - 1}> -> seed_r",
                    "seed_r: grw/schedule", "seed_r: grw/centers"]
        timings["grw"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start

    manifest = RunManifest(
        scenario_name=spec.name, scenario_hash=spec.scenario_hash, scenario=spec.document,
        si_mapping=spec.si_summary(), seed=spec.seed, ontology=spec.ontology, ontologies=ontologies,
        rng_streams=streams, reports=[r.as_dict() for r in reports], metrics=metrics,
        outputs=dict(sorted(out.files.items())), timings=timings, delocation_report=deloc,
        warnings=list(spec.warnings))
    (out.root / "manifest.json").write_text(json.dumps(manifest.as_dict(), indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    return manifest


def rerun(manifest_path: Path | str, out_dir: Path | str) -> tuple[RunManifest, list[str]]:
    """Re-run from a manifest alone; returns the new manifest and the output
    files whose checksums differ (or are missing on either side)."""
    old = RunManifest.load(Path(manifest_path))
    new = run_spec(spec_from_document(old.scenario), out_dir)
    keys = sorted(set(old.outputs) | set(new.outputs))
    mismatched = [k for k in keys if old.outputs.get(k) != new.outputs.get(k)]
    return new, mismatched


def verify_outputs(manifest_path: Path | str) -> list[str]:
    """Files listed in the manifest that are missing or changed on disk."""
    path = Path(manifest_path)
    m = RunManifest.load(path)
    bad = []
    for rel, digest in m.outputs.items():
        f = path.parent / rel
        if not f.exists() or sha256_file(f) != digest:
            bad.append(rel)
    return bad


# compare -----------------------------------------------------------------------

@dataclass
class ComparisonReport:
    scenario_hash: str
    entries: list[dict]
    differences: list[dict]
    branch_checks: list[dict]

    @property
    def identical(self) -> bool:
        return all(d["difference"] == 0 for d in self.differences)

    @property
    def agreement(self) -> bool:
        return all(c["passed"] for c in self.branch_checks)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["identical"] = self.identical
        d["agreement"] = self.agreement
        return d

    def text(self) -> str:
        keys = ["branch_frequency_plus", "ks_distance", "delocation", "mean_delocation", "flash_count_mean",
                "events_mean", "n"]
        lines = [f"scenario {self.scenario_hash[:12]}",
                 "  ".join([f"{'run':<28}", f"{'ontology':<12}"] + [f"{k:>22}" for k in keys])]
        for e in self.entries:
            cells = []
            for k in keys:
                v = e["metrics"].get(k)
                cells.append(f"{'-' if v is None else format(v, '.6g'):>22}")
            lines.append("  ".join([f"{e['run'][-28:]:<28}", f"{e['ontology']:<12}"] + cells))
        for c in self.branch_checks:
            flag = "PASS" if c["passed"] else "FAIL"
            lines.append(f"[{flag}] branch frequency {c['a']} vs {c['b']}: z = {c['z']:.3g} (limit 3)")
        if self.differences:
            lines.append("identical metrics" if self.identical else
                         f"{sum(d['difference'] != 0 for d in self.differences)} metric difference(s)")
        return "\n".join(lines)


def _numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v is not None


def compare(manifest_paths: Sequence[Path | str]) -> ComparisonReport:
    if not manifest_paths:
        raise ValueError("compare needs at least one manifest")
    manifests = [(str(p), RunManifest.load(Path(p))) for p in manifest_paths]
    hashes = {m.scenario_hash for _, m in manifests}
    if len(hashes) != 1:
        listing = ", ".join(f"{p}: {m.scenario_hash[:12]}" for p, m in manifests)
        raise ScenarioError([f"manifests come from different scenarios ({listing})"])
    labels = [Path(p).parent.name or p for p, _ in manifests]
    if len(set(labels)) != len(labels):
        labels = [p for p, _ in manifests]
    entries = [{"run": label, "ontology": ont, "seed": m.seed, "metrics": met}
               for label, (_, m) in zip(labels, manifests) for ont, met in sorted(m.metrics.items())]

    differences = []
    by_ont: dict[str, list[dict]] = {}
    for e in entries:
        by_ont.setdefault(e["ontology"], []).append(e)
    for ont, group in sorted(by_ont.items()):
        base = group[0]
        for other in group[1:]:
            for k in sorted(set(base["metrics"]) | set(other["metrics"])):
                a, b = base["metrics"].get(k), other["metrics"].get(k)
                if _numeric(a) and _numeric(b):
                    diff = float(b) - float(a)
                else:
                    diff = 0 if a == b else None
                differences.append({"ontology": ont, "metric": k, "a": base["run"], "b": other["run"],
                                    "difference": diff})

    checks = []
    with_freq = [e for e in entries if _numeric(e["metrics"].get("branch_frequency_plus"))]
    for i, ea in enumerate(with_freq):
        for eb in with_freq[i + 1:]:
            if ea["ontology"] == eb["ontology"] and ea["run"] == eb["run"]:
                continue
            pa, na = ea["metrics"]["branch_frequency_plus"], ea["metrics"]["n"]
            pb, nb = eb["metrics"]["branch_frequency_plus"], eb["metrics"]["n"]
            # pooled proportion keeps the joint sigma positive for extreme samples
            pool = (pa * na + pb * nb) / (na + nb)
            sigma = math.sqrt(pool * (1 - pool) * (1 / na + 1 / nb))
            z = 0.0 if pa == pb else (abs(pa - pb) / sigma if sigma > 0 else math.inf)
            checks.append({"a": f"{ea['run']}:{ea['ontology']}", "b": f"{eb['run']}:{eb['ontology']}",
                           "pa": pa, "pb": pb, "z": z, "passed": z <= 3.0})
    return ComparisonReport(hashes.pop(), entries, differences, checks)


# plots -------------------------------------------------------------------------

def _require(root: Path, manifest: RunManifest, rel: str, kind: str) -> Path:
    p = root / rel
    if rel not in manifest.outputs or not p.exists():
        raise MissingOutputError(f"{kind} needs {rel}, which this run did not produce")
    return p


def _write_dat(path: Path, header: str, lines: Iterable[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"# {header}\n" + "".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def emit_plots(manifest_path: Path | str, kind: str, out_dir: Path | str | None = None) -> list[Path]:
    """Whitespace-separated columnar files for gnuplot under ``<run>/plots``."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; one of {PLOT_KINDS}")
    mpath = Path(manifest_path)
    root = mpath.parent
    manifest = RunManifest.load(mpath)
    dest = Path(out_dir) if out_dir is not None else root / "plots"

    if kind == "landing-histogram":
        _, rows = read_csv(_require(root, manifest, "bohm/landing_histogram.csv", kind))
        return [_write_dat(dest / "landing_histogram.dat", "bin_center count",
                           (f"{r[0]} {r[1]}" for r in rows))]
    if kind == "flash-scatter":
        header, rows = read_csv(_require(root, manifest, "grwf/flashes.csv", kind))
        col = header.index("center_x")
        return [_write_dat(dest / "flash_scatter.dat", "t x", (f"{r[0]} {r[col]}" for r in rows))]
    if kind == "trajectory-fan":
        header, rows = read_csv(_require(root, manifest, "bohm/trajectories.csv", kind))
        lines, last = [], None
        for r in rows:
            member = int(r[0])
            if member >= FAN_MEMBERS:
                break
            if last is not None and member != last:
                lines += ["", ""]
            lines.append(" ".join(r[1:]))
            last = member
        return [_write_dat(dest / "trajectory_fan.dat", " ".join(header[1:]) + " (one block per member)", lines)]
    # density frames
    prefix = "grwm" if "grwm/frames.csv" in manifest.outputs else "schrodinger"
    _, index = read_csv(_require(root, manifest, f"{prefix}/frames.csv", kind))
    written = []
    for row in index:
        i, t = int(row[0]), row[1]
        header, rows = read_csv(_require(root, manifest, f"{prefix}/frames/frame_{i:04d}.csv", kind))
        written.append(_write_dat(dest / f"density_frame_{i:04d}.dat", f"{' '.join(header)} (t = {t})",
                                  (" ".join(r) for r in rows)))
    return written
