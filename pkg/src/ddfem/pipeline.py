"""Config-driven pipeline stages behind the ``ddfem`` command line.

Each stage reads its prerequisites from the output directory, writes its
artifacts atomically and leaves a JSON manifest with the config echo, seeds,
tolerances, input/output CRCs and singular-value spectra.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from ._binio import file_crc
from .assembly import DG, STRONG, ComponentLibrary, CouplingConfig
from .basis import SplitBasis, compute_pod, load_basis, save_basis, split_port_basis
from .config import PipelineConfig, parse_config
from .errors import CompatibilityError, ConfigError, MissingPrerequisiteError
from .evaluation import (CaseSpec, RunReport, emit_csv, emit_timings_csv, run_basis_sweep, run_case,
                         run_extrapolation_study, save_field)
from .grid import ElementGrid, GlobalLayout, build_layout
from .linalg import RESIDUAL_CHECK
from .sampler import (SourceSample, SpiralParams, generate_burgers_patch_snapshots,
                      generate_poisson_patch_snapshots, load_snapshots, sample_burgers_ic,
                      save_snapshots, zero_source)

log = logging.getLogger("ddfem")

SNAPSHOT_FILE = "snapshots.ddfsnp"
BASIS_FILE = "basis.ddfbas"
REPORT_FILE = "report.csv"
TIMINGS_FILE = "timings.csv"
SWEEP_FILE = "sweep.csv"
ECHO_FILE = "config.echo"
FIELDS_DIR = "fields"

REPRODUCIBLE = ("poisson-spiral", "burgers-extrapolation")


def resolve_threads(n: int) -> int:
    return max(1, os.cpu_count() or 1) if n == 0 else n


@dataclass(frozen=True)
class Workspace:
    root: Path

    @classmethod
    def create(cls, cfg: PipelineConfig, out: str | os.PathLike | None = None) -> "Workspace":
        root = Path(out if out is not None else cfg["output.dir"])
        root.mkdir(parents=True, exist_ok=True)
        return cls(root)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str, producer: str) -> Path:
        path = self.root / name
        if not path.is_file():
            raise MissingPrerequisiteError(path, producer)
        return path


def write_echo(cfg: PipelineConfig, ws: Workspace) -> Path:
    path = ws / ECHO_FILE
    path.write_text(cfg.echo(), encoding="utf-8")
    return path


def _crcs(paths) -> dict:
    return {Path(p).name: f"{file_crc(p):08x}" for p in paths}


def write_manifest(ws: Workspace, command: str, cfg: PipelineConfig, *, inputs=(), outputs=(),
                   spectra: dict | None = None, extra: dict | None = None) -> Path:
    manifest = {
        "tool": "ddfem",
        "version": __version__,
        "command": command,
        "created_at": time.time(),
        "config": cfg.as_dict(),
        "seeds": {"train.seed": cfg["train.seed"], "solve.ic_seed": cfg["solve.ic_seed"]},
        "tolerances": {
            "solve.cg_rtol": cfg["solve.cg_rtol"],
            "linear_residual_check": RESIDUAL_CHECK,
            "coupling.constraint_tol": cfg["coupling.constraint_tol"],
            "basis.epsilon": cfg["basis.epsilon"],
        },
        "inputs": _crcs(inputs),
        "outputs": _crcs(outputs),
        "singular_values": spectra or {},
    }
    if extra:
        manifest.update(extra)
    path = ws / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -------------------------------------------------------------- config glue

def element_grid(cfg: PipelineConfig) -> ElementGrid:
    return ElementGrid(cfg["grid.n_cells"])


def layout_of(cfg: PipelineConfig, rows: int | None = None, cols: int | None = None) -> GlobalLayout:
    return build_layout(rows or cfg["layout.rows"], cols or cfg["layout.cols"], bc_kind=cfg["layout.bc"])


def coupling_of(cfg: PipelineConfig) -> CouplingConfig:
    return CouplingConfig(cfg["coupling.formulation"], cfg["coupling.eta"], cfg["coupling.constraint_tol"])


def source_for(cfg: PipelineConfig, layout: GlobalLayout):
    kind = cfg["solve.source"]
    if kind == "spiral":
        return SpiralParams(cfg["solve.spiral_omega"], (layout.cols / 2.0, layout.rows / 2.0),
                            cfg["solve.spiral_gamma"])
    if kind == "sinusoidal":
        return SourceSample((cfg["solve.k1"], cfg["solve.k2"]), cfg["solve.theta"])
    return zero_source


def ic_for(cfg: PipelineConfig, layout: GlobalLayout):
    rng = np.random.default_rng(cfg["solve.ic_seed"])
    return sample_burgers_ic(rng, cfg["train.K_max"], extent=(float(layout.cols), float(layout.rows)))


def case_of(cfg: PipelineConfig) -> CaseSpec:
    return CaseSpec(problem=cfg["problem"], source=lambda lay: source_for(cfg, lay),
                    ic=lambda lay: ic_for(cfg, lay), dt=cfg["train.dt"], t_final=cfg["train.t_final"],
                    save_every=cfg["train.save_every"], nu=cfg["train.nu"],
                    dt_multiplier=cfg["solve.dt_multiplier"], cg_rtol=cfg["solve.cg_rtol"])


def spectra_of(basis) -> dict:
    if isinstance(basis, SplitBasis):
        return {"interior": basis.interior.singular_values.tolist(),
                "port_vertical": basis.ports["left"].singular_values.tolist(),
                "port_horizontal": basis.ports["bottom"].singular_values.tolist()}
    return {"monolithic": basis.singular_values.tolist()}


def train_basis(snapshots, cfg: PipelineConfig):
    kw = dict(epsilon=cfg.epsilon, fixed_r=cfg["basis.fixed_r"])
    if cfg["basis.port_split"]:
        return split_port_basis(snapshots, **kw)
    return compute_pod(snapshots, **kw)


# ------------------------------------------------------------------ stages

def cmd_gen_data(cfg: PipelineConfig, out=None, threads: int | None = None) -> Path:
    ws = Workspace.create(cfg, out)
    write_echo(cfg, ws)
    grid = element_grid(cfg)
    nthreads = resolve_threads(cfg["threads"] if threads is None else threads)
    if cfg["problem"] == "poisson":
        log.info("generating %d Poisson patch samples (n_cells=%d)", cfg["train.n_samples"], grid.n_cells)
        snaps = generate_poisson_patch_snapshots(cfg["train.n_samples"], grid, cfg.seed)
    else:
        log.info("generating %d Burgers patch runs (n_cells=%d)", cfg["train.n_runs"], grid.n_cells)
        snaps = generate_burgers_patch_snapshots(
            cfg["train.n_runs"], grid, cfg["train.dt"], cfg["train.t_final"], cfg["train.save_every"],
            cfg.seed, k_max=cfg["train.K_max"], nu=cfg["train.nu"], threads=nthreads)
    path = ws / SNAPSHOT_FILE
    save_snapshots(snaps, path)
    write_manifest(ws, "gen-data", cfg, outputs=[path],
                   extra={"n_snapshots": snaps.n_snapshots, "family": snaps.family})
    return path


def cmd_train(cfg: PipelineConfig, out=None, threads: int | None = None) -> Path:
    ws = Workspace.create(cfg, out)
    src = ws.require(SNAPSHOT_FILE, "gen-data")
    snaps = load_snapshots(src)
    if snaps.n_cells != cfg["grid.n_cells"]:
        raise CompatibilityError(f"{src} holds n_cells={snaps.n_cells} snapshots, config asks for "
                                 f"grid.n_cells={cfg['grid.n_cells']}; rerun `ddfem gen-data`")
    if (snaps.fields_per_snapshot == 2) != (cfg["problem"] == "burgers"):
        raise CompatibilityError(f"{src} holds {snaps.family} snapshots, config problem is {cfg['problem']}")
    write_echo(cfg, ws)
    basis = train_basis(snaps, cfg)
    path = ws / BASIS_FILE
    save_basis(basis, path)
    r = basis.r_total if isinstance(basis, SplitBasis) else basis.r
    log.info("trained %s basis with %d element coordinates", "split" if cfg["basis.port_split"] else
             "monolithic", r)
    write_manifest(ws, "train", cfg, inputs=[src], outputs=[path], spectra=spectra_of(basis),
                   extra={"r_total": r})
    return path


def _dump_fields(ws: Workspace, result) -> list[Path]:
    paths = []
    fields_dir = ws / FIELDS_DIR
    for i, (fom_f, rom_f) in enumerate(zip(result.fom_fields, result.rom_fields)):
        t = result.report.times[i]
        for tag, f in (("fom", fom_f), ("rom", rom_f)):
            p = fields_dir / f"{result.report.name}-{tag}-{i:04d}.ddffld"
            save_field(f, p, label=f"{tag} t={t!r}")
            paths.append(p)
    return paths


def cmd_solve(cfg: PipelineConfig, out=None, threads: int | None = None) -> list[RunReport]:
    ws = Workspace.create(cfg, out)
    src = ws.require(BASIS_FILE, "train")
    basis = load_basis(src, n_cells=cfg["grid.n_cells"])
    if basis.n_components != (2 if cfg["problem"] == "burgers" else 1):
        raise CompatibilityError(f"{src} has {basis.n_components} component(s); "
                                 f"config problem is {cfg['problem']}")
    write_echo(cfg, ws)
    nthreads = resolve_threads(cfg["threads"] if threads is None else threads)
    layout = layout_of(cfg)
    result = run_case(layout, ComponentLibrary.single(basis), coupling_of(cfg), case_of(cfg),
                      name=f"{cfg['problem']}-{cfg['solve.source'] if cfg['problem'] == 'poisson' else 'ic'}"
                           f"-{cfg['coupling.formulation']}-{layout.rows}x{layout.cols}",
                      epsilon=cfg.epsilon, threads=nthreads, config=cfg.as_dict())
    rep = result.report
    log.info("%s: rel L2 error %.3e (final), DOF ratio %.2f", rep.name, rep.final_error, rep.dof_ratio)
    outputs = [ws / REPORT_FILE]
    emit_csv([rep], ws / REPORT_FILE)
    emit_timings_csv([rep], ws / TIMINGS_FILE)
    if cfg["output.dump_fields"]:
        outputs += _dump_fields(ws, result)
    write_manifest(ws, "solve", cfg, inputs=[src], outputs=outputs, spectra=spectra_of(basis),
                   extra={"dof_fom": rep.dof_fom, "dof_reduced": rep.dof_reduced,
                          "rel_l2_final": rep.final_error, "rel_l2_max": rep.max_error})
    return [rep]


def cmd_sweep(cfg: PipelineConfig, out=None, threads: int | None = None) -> list[RunReport]:
    """Basis-size sweep on the configured layout, then the layout extrapolation study."""
    ws = Workspace.create(cfg, out)
    src = ws.require(SNAPSHOT_FILE, "gen-data")
    snaps = load_snapshots(src, n_cells=cfg["grid.n_cells"])
    write_echo(cfg, ws)
    nthreads = resolve_threads(cfg["threads"] if threads is None else threads)
    coupling, case = coupling_of(cfg), case_of(cfg)
    reports = run_basis_sweep(snaps, cfg["sweep.epsilons"], layout_of(cfg), coupling, case,
                              port_split=cfg["basis.port_split"], threads=nthreads, config=cfg.as_dict())
    library = ComponentLibrary.single(train_basis(snaps, cfg))
    reports += run_extrapolation_study(library, cfg["sweep.layouts"], coupling, case,
                                       bc_kind=cfg["layout.bc"], epsilon=cfg.epsilon, threads=nthreads,
                                       config=cfg.as_dict())
    emit_csv(reports, ws / SWEEP_FILE)
    emit_timings_csv(reports, ws / "sweep-timings.csv")
    write_manifest(ws, "sweep", cfg, inputs=[src], outputs=[ws / SWEEP_FILE])
    return reports


# --------------------------------------------------------------- reproduce

POISSON_SPIRAL = """\
problem = poisson
grid.n_cells = 16
train.n_samples = 500
train.seed = 0
basis.epsilon = 0.9999
layout.rows = 8
layout.cols = 8
layout.bc = dirichlet_zero
"""

BURGERS_EXTRAPOLATION = """\
problem = burgers
grid.n_cells = 16
train.n_runs = 200
train.seed = 0
train.K_max = 4
train.dt = 0.01
train.t_final = 0.3
train.save_every = 5
train.nu = 0.001
basis.epsilon = 0.9999
basis.port_split = true
layout.rows = 4
layout.cols = 4
layout.bc = periodic
coupling.formulation = constrained_residual
"""

BOUNDS = {
    "poisson-spiral": {"spiral": 0.05, "sinusoidal": 0.01, "dof_ratio": 10.0},
    "burgers-extrapolation": {"final": 0.05, "constraint": 1e-10},
}


@dataclass
class Check:
    label: str
    value: float
    bound: float
    upper: bool = True

    @property
    def passed(self) -> bool:
        return self.value <= self.bound if self.upper else self.value >= self.bound

    def line(self) -> str:
        op = "<=" if self.upper else ">="
        return f"{'PASS' if self.passed else 'FAIL'}  {self.label}: {self.value:.4g} {op} {self.bound:g}"


def pinned_config(name: str, overrides: PipelineConfig | None = None) -> PipelineConfig:
    if name not in REPRODUCIBLE:
        raise ConfigError(f"unknown reproduction {name!r}; choose one of {', '.join(REPRODUCIBLE)}")
    cfg = parse_config(POISSON_SPIRAL if name == "poisson-spiral" else BURGERS_EXTRAPOLATION)
    if overrides is not None and overrides.explicit:
        cfg = cfg.replace(**overrides.overrides())
    return cfg


def cmd_reproduce(name: str, out=None, threads: int | None = None,
                  overrides: PipelineConfig | None = None) -> tuple[list[RunReport], list[Check]]:
    cfg = pinned_config(name, overrides)
    ws = Workspace.create(cfg, out)
    if name == "poisson-spiral":
        reports, checks = _reproduce_poisson(cfg, ws, threads)
    else:
        reports, checks = _reproduce_burgers(cfg, ws, threads)
    emit_csv(reports, ws / "reproduce.csv")
    emit_timings_csv(reports, ws / "reproduce-timings.csv")
    write_manifest(ws, "reproduce", cfg, outputs=[ws / "reproduce.csv"],
                   extra={"reproduction": name, "checks": [c.line() for c in checks]})
    return reports, checks


def _reproduce_poisson(cfg: PipelineConfig, ws: Workspace, threads):
    bounds = BOUNDS["poisson-spiral"]
    cmd_gen_data(cfg, ws.root, threads)
    reports, checks = [], []
    variants = ((STRONG, True), (DG, False))
    for formulation, split in variants:
        sub = ws.root / formulation
        sub.mkdir(exist_ok=True)
        (sub / SNAPSHOT_FILE).write_bytes((ws / SNAPSHOT_FILE).read_bytes())
        vcfg = cfg.replace(**{"coupling.formulation": formulation, "basis.port_split": split})
        cmd_train(vcfg, sub, threads)
        for source in ("spiral", "sinusoidal"):
            scfg = vcfg.replace(**{"solve.source": source})
            sdir = sub / source
            sdir.mkdir(exist_ok=True)
            (sdir / BASIS_FILE).write_bytes((sub / BASIS_FILE).read_bytes())
            rep = cmd_solve(scfg, sdir, threads)[0]
            reports.append(rep)
            checks.append(Check(f"{formulation} {source} rel L2 error", rep.final_error, bounds[source]))
            if source == "spiral":
                checks.append(Check(f"{formulation} DOF ratio", rep.dof_ratio, bounds["dof_ratio"], upper=False))
    return reports, checks


def _reproduce_burgers(cfg: PipelineConfig, ws: Workspace, threads):
    bounds = BOUNDS["burgers-extrapolation"]
    cmd_gen_data(cfg, ws.root, threads)
    cmd_train(cfg, ws.root, threads)
    rep = cmd_solve(cfg, ws.root, threads)[0]
    checks = [Check("final-time rel L2 error", rep.final_error, bounds["final"]),
              Check("max constraint residual", rep.constraint_residual, bounds["constraint"])]
    return [rep], checks

