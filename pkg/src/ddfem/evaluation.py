"""Error metrics, extrapolation / basis-size studies, CSV reports and field dumps."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._binio import Reader, Writer, read_bytes
from .assembly import DG, ComponentLibrary, CouplingConfig, ReducedSystem, assemble
from .basis import SplitBasis, compute_pod, split_port_basis
from .errors import ArchiveError, DDFEMError, MetricError, with_context
from .fom import BurgersProblem, PoissonFOM, StateField, solve_burgers_fom
from .grid import DIRICHLET, PERIODIC, GlobalLayout, build_dof_map, build_layout
from .reduced import integrate_burgers_reduced, reconstruct_global, solve_poisson_reduced
from .sampler import SnapshotSet

FIELD_MAGIC = b"DDFFLD01"

CSV_COLUMNS = [
    "name", "problem", "formulation", "rows", "cols", "n_cells", "epsilon", "r_total",
    "eta", "rel_l2_final", "rel_l2_max", "dof_fom", "dof_reduced", "dof_ratio",
    "max_interface_jump", "constraint_residual", "n_saves", "timestamp",
]
TIMING_COLUMNS = ["name", "offline_seconds", "online_seconds", "fom_seconds"]


def relative_l2_error(approx, reference) -> float:
    """``||a - b||_2 / ||b||_2`` over all components jointly."""
    a = np.asarray(getattr(approx, "values", approx), dtype=float).ravel()
    b = np.asarray(getattr(reference, "values", reference), dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ref = np.linalg.norm(b)
    if ref == 0.0 or not np.isfinite(ref):
        raise MetricError("relative error undefined for a zero (or non-finite) reference")
    return float(np.linalg.norm(a - b) / ref)


@dataclass
class RunReport:
    name: str
    problem: str
    formulation: str
    rows: int
    cols: int
    n_cells: int
    epsilon: float | None
    r_total: int
    dof_fom: int
    dof_reduced: int
    errors: list = field(default_factory=list)  # one per saved time (Poisson: a single entry)
    times: list = field(default_factory=list)
    eta: float | None = None
    max_interface_jump: float = 0.0
    constraint_residual: float = 0.0
    offline_seconds: float = 0.0
    online_seconds: float = 0.0
    fom_seconds: float = 0.0
    spectra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if not all(np.isfinite(e) for e in self.errors):
            raise MetricError(f"{self.name}: non-finite error in report")

    @property
    def dof_ratio(self) -> float:
        return self.dof_fom / self.dof_reduced

    @property
    def final_error(self) -> float:
        return float(self.errors[-1])

    @property
    def max_error(self) -> float:
        return float(max(self.errors))

    def row(self) -> dict:
        return {
            "name": self.name, "problem": self.problem, "formulation": self.formulation,
            "rows": self.rows, "cols": self.cols, "n_cells": self.n_cells,
            "epsilon": "untruncated" if self.epsilon is None else self.epsilon,
            "r_total": self.r_total, "eta": "" if self.eta is None else self.eta,
            "rel_l2_final": self.final_error, "rel_l2_max": self.max_error,
            "dof_fom": self.dof_fom, "dof_reduced": self.dof_reduced, "dof_ratio": self.dof_ratio,
            "max_interface_jump": self.max_interface_jump,
            "constraint_residual": self.constraint_residual,
            "n_saves": len(self.errors), "timestamp": self.timestamp,
        }


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(reports, columns=CSV_COLUMNS, getter=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rep in reports:
        row = getter(rep) if getter else rep.row()
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def emit_csv(reports, path) -> None:
    """One row per report, fixed header, floats at 17 significant digits."""
    _write_text(path, csv_text(reports))


def emit_timings_csv(reports, path) -> None:
    """Wall-clock figures live apart from the deterministic report CSV."""
    def getter(rep):
        return {"name": rep.name, "offline_seconds": rep.offline_seconds,
                "online_seconds": rep.online_seconds, "fom_seconds": rep.fom_seconds}
    _write_text(path, csv_text(reports, TIMING_COLUMNS, getter))


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArchiveError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- field dumps
#
# magic, label, rows, cols, n_cells, n_components, n_global (u64), values
# (n_global x n_components, column-major f64), CRC-32.

def save_field(state: StateField, path, label: str = "") -> int:
    layout, dm = state.layout, state.dofmap
    w = Writer(FIELD_MAGIC)
    w.text(label)
    w.u32(layout.rows)
    w.u32(layout.cols)
    w.u32(dm.grid.n_cells)
    w.u32(state.n_components)
    w.u64(dm.n_global)
    w.f64(state.values.reshape(state.n_components, dm.n_global).T)
    return w.write(path)


def load_field(path) -> dict:
    rd = Reader(read_bytes(path), FIELD_MAGIC, "field")
    label = rd.text()
    rows, cols, nc, comps = rd.u32(), rd.u32(), rd.u32(), rd.u32()
    n_global = rd.u64()
    values = rd.f64((n_global, comps))
    rd.done()
    return {"label": label, "rows": rows, "cols": cols, "n_cells": nc,
            "n_components": comps, "values": values.T.ravel()}


# ---------------------------------------------------------------- case runs

def _spectra(library: ComponentLibrary) -> dict:
    out = {}
    for etype, b in library.bases.items():
        if isinstance(b, SplitBasis):
            out[f"{etype}/interior"] = b.interior.singular_values.tolist()
            out[f"{etype}/port_vertical"] = b.ports["left"].singular_values.tolist()
            out[f"{etype}/port_horizontal"] = b.ports["bottom"].singular_values.tolist()
        else:
            out[etype] = b.singular_values.tolist()
    return out


def _r_total(library: ComponentLibrary) -> int:
    b = next(iter(library.bases.values()))
    return b.r_total if isinstance(b, SplitBasis) else b.r


@dataclass(frozen=True)
class CaseSpec:
    """What to solve on each layout of a study.

    Poisson: ``source(layout) -> callable``.  Burgers: ``ic(layout) -> callable``
    plus the time-stepping parameters.
    """

    problem: str = "poisson"
    source: Callable | None = None
    ic: Callable | None = None
    dt: float = 0.01
    t_final: float = 0.3
    save_every: int = 5
    nu: float = 1e-3
    dt_multiplier: int = 1
    cg_rtol: float = 1e-12


@dataclass
class CaseResult:
    report: RunReport
    fom_fields: list
    rom_fields: list


def run_case(layout: GlobalLayout, library: ComponentLibrary, coupling: CouplingConfig,
             case: CaseSpec, *, name: str = "", epsilon: float | None = None,
             threads: int = 1, config: dict | None = None) -> CaseResult:
    """Assemble, solve reduced and full order, and compare."""
    grid = library.grid
    dm = build_dof_map(layout, grid)
    t0 = time.perf_counter()
    system = assemble(layout, library, coupling, dofmap=dm, threads=threads)
    offline = time.perf_counter() - t0
    base = dict(name=name or f"{case.problem}-{layout.rows}x{layout.cols}", problem=case.problem,
                formulation=coupling.formulation, rows=layout.rows, cols=layout.cols,
                n_cells=grid.n_cells, epsilon=epsilon, r_total=_r_total(library),
                dof_reduced=system.n_red, eta=coupling.eta if coupling.formulation == DG else None,
                offline_seconds=offline, spectra=_spectra(library), config=dict(config or {}))
    if case.problem == "poisson":
        return _poisson_case(system, dm, case, base)
    return _burgers_case(system, dm, case, base)


def _poisson_case(system: ReducedSystem, dm, case: CaseSpec, base: dict) -> CaseResult:
    source = case.source(system.layout)
    t0 = time.perf_counter()
    state = solve_poisson_reduced(system, source, rtol=case.cg_rtol)
    rec = reconstruct_global(system, state)
    online = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref = PoissonFOM(system.layout, system.grid, rtol=case.cg_rtol).solve(source)
    fom_s = time.perf_counter() - t0
    report = RunReport(**base, dof_fom=dm.n_free, errors=[relative_l2_error(rec.field, ref)],
                       times=[0.0], max_interface_jump=rec.max_interface_jump,
                       online_seconds=online, fom_seconds=fom_s)
    return CaseResult(report, [ref], [rec.field])


def _burgers_case(system: ReducedSystem, dm, case: CaseSpec, base: dict) -> CaseResult:
    problem = BurgersProblem(system.layout, system.grid, case.ic(system.layout), case.dt,
                             case.t_final, case.nu, case.save_every)
    t0 = time.perf_counter()
    traj = integrate_burgers_reduced(system, problem, dt_multiplier=case.dt_multiplier)
    online = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref = solve_burgers_fom(problem, dm)
    fom_s = time.perf_counter() - t0
    ref_by_t = {round(t / case.dt): s for t, s in zip(ref.times, ref.states)}
    errors, times, fom_fields = [], [], []
    for t, f in zip(traj.times, traj.fields):
        key = round(t / case.dt)
        if key in ref_by_t:
            errors.append(relative_l2_error(f, ref_by_t[key]))
            times.append(float(t))
            fom_fields.append(ref_by_t[key])
    report = RunReport(**base, dof_fom=2 * dm.n_global, errors=errors, times=times,
                       constraint_residual=traj.max_constraint_residual,
                       online_seconds=online, fom_seconds=fom_s)
    return CaseResult(report, fom_fields, traj.fields)


# ------------------------------------------------------------------- studies

def train_library(snapshots: SnapshotSet, *, epsilon: float | None = None, fixed_r: int | None = None,
                  port_split: bool = True) -> ComponentLibrary:
    if port_split:
        basis = split_port_basis(snapshots, epsilon=epsilon, fixed_r=fixed_r)
    else:
        basis = compute_pod(snapshots, epsilon=epsilon, fixed_r=fixed_r)
    return ComponentLibrary.single(basis)


def run_extrapolation_study(library: ComponentLibrary, layouts, coupling: CouplingConfig,
                            case: CaseSpec, *, bc_kind: str | None = None, epsilon: float | None = None,
                            threads: int = 1, config: dict | None = None) -> list[RunReport]:
    """Solve every layout with the same trained library; smallest layouts first."""
    bc = bc_kind or (PERIODIC if case.problem == "burgers" else DIRICHLET)
    reports = []
    for rows, cols in sorted(layouts, key=lambda rc: (rc[0] * rc[1], rc)):
        layout = build_layout(rows, cols, bc_kind=bc)
        try:
            res = run_case(layout, library, coupling, case, name=f"extrapolation-{rows}x{cols}",
                           epsilon=epsilon, threads=threads, config=config)
        except DDFEMError as exc:
            raise with_context(exc, f"layout {rows}x{cols}")
        reports.append(res.report)
    return reports


def run_basis_sweep(snapshots: SnapshotSet, epsilons, layout: GlobalLayout, coupling: CouplingConfig,
                    case: CaseSpec, *, port_split: bool = True, threads: int = 1,
                    config: dict | None = None) -> list[RunReport]:
    """One report per energy threshold, sorted by threshold (``>= 1`` means untruncated)."""
    def key(eps):
        return float("inf") if eps is None else float(eps)

    reports = []
    for eps in sorted(epsilons, key=key):
        eps_ = None if eps is None or eps >= 1.0 else float(eps)
        library = train_library(snapshots, epsilon=eps_, port_split=port_split)
        label = "untruncated" if eps_ is None else format(eps_, "g")
        try:
            res = run_case(layout, library, coupling, case, name=f"sweep-{label}", epsilon=eps_,
                           threads=threads, config=config)
        except DDFEMError as exc:
            raise with_context(exc, f"epsilon {label}")
        reports.append(res.report)
    return reports

