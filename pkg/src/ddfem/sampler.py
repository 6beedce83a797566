"""Randomized training configurations and element-restricted patch snapshots.

Every sample draws from its own child stream of ``SeedSequence(seed)`` so
results are independent of generation order and thread count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._binio import Reader, Writer, read_bytes
from .errors import CompatibilityError, DegenerateDataError, NumericalError, with_context
from .fom import BurgersProblem, PoissonFOM, solve_burgers_fom
from .grid import DIRICHLET, PERIODIC, ElementGrid, build_layout

SNAPSHOT_MAGIC = b"DDFSNP01"
SAMPLER_VERSION = "1"


# ------------------------------------------------------------------ sources

@dataclass(frozen=True)
class SourceSample:
    k: tuple[float, float]
    theta: float

    def __post_init__(self):
        if not (abs(self.k[0]) <= 0.5 and abs(self.k[1]) <= 0.5 and 0.0 <= self.theta <= 1.0):
            raise ValueError(f"source sample out of range: k={self.k}, theta={self.theta}")

    def __call__(self, x, y):
        return eval_sinusoidal_source(self, x, y)


def sample_poisson_source(rng: np.random.Generator) -> SourceSample:
    k = rng.uniform(-0.5, 0.5, size=2)
    theta = rng.uniform(0.0, 1.0)
    return SourceSample((float(k[0]), float(k[1])), float(theta))


def eval_sinusoidal_source(sample: SourceSample, x, y):
    """``sin(2 pi (k . x + theta))``."""
    k1, k2 = sample.k
    return np.sin(2.0 * np.pi * (k1 * np.asarray(x) + k2 * np.asarray(y) + sample.theta))


@dataclass(frozen=True)
class SpiralParams:
    omega: float = 0.5
    center: tuple[float, float] = (0.5, 0.5)
    gamma: float = 1.0

    def __call__(self, x, y):
        return eval_spiral_source(self, x, y)


def eval_spiral_source(params: SpiralParams, x, y):
    """Radially oscillating spiral ``sin(2 pi (omega r + gamma phi / 2 pi))``.

    ``phi`` is the polar angle about the center; at the center ``phi`` is 0.
    """
    dx = np.asarray(x, dtype=float) - params.center[0]
    dy = np.asarray(y, dtype=float) - params.center[1]
    r = np.hypot(dx, dy)
    phi = np.where(r > 0, np.arctan2(dy, dx), 0.0)
    return np.sin(2.0 * np.pi * (params.omega * r + params.gamma * phi / (2.0 * np.pi)))


def zero_source(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


# ------------------------------------------------------------ Burgers ICs

@dataclass(frozen=True, eq=False)
class BurgersIcSample:
    """Truncated random Fourier field on a periodic box of size ``extent``.

    ``coeffs`` has shape (2 components, 2 [cos, sin], m, n) with mode indices
    ``m = 0..mx`` and ``n = -ny..ny``; ``offsets`` are the component means.
    """

    k_max: int
    extent: tuple[float, float]
    coeffs: np.ndarray
    offsets: np.ndarray

    def __call__(self, x, y):
        return evaluate_burgers_ic(self, x, y)

    def max_bound(self) -> float:
        """Upper bound on max |u|, |v| over the whole plane."""
        return float(np.max(np.abs(self.offsets) + np.abs(self.coeffs).sum(axis=(1, 2, 3))))


def _mode_counts(k_max: int, extent) -> tuple[int, int]:
    # patch-scale wavenumbers: a box twice as wide gets twice as many modes
    return int(round(k_max * extent[0] / 2.0)), int(round(k_max * extent[1] / 2.0))


def sample_burgers_ic(rng: np.random.Generator, k_max: int = 4,
                      extent: tuple[float, float] = (2.0, 2.0)) -> BurgersIcSample:
    if k_max < 1:
        raise ValueError("K_max must be >= 1")
    mx, ny = _mode_counts(k_max, extent)
    m = np.arange(mx + 1)[:, None]
    n = np.arange(-ny, ny + 1)[None, :]
    decay = 1.0 / (1.0 + (2.0 * m / extent[0]) ** 2 + (2.0 * n / extent[1]) ** 2)
    # (0, 0) is the mean; (0, n<0) duplicates (0, -n)
    decay = np.where((m == 0) & (n <= 0), 0.0, decay)
    coeffs = rng.standard_normal((2, 2, mx + 1, 2 * ny + 1)) * decay
    offsets = rng.uniform(-0.25, 0.25, size=2)
    sample = BurgersIcSample(k_max, (float(extent[0]), float(extent[1])), coeffs, offsets)
    bound = sample.max_bound()
    if bound > 1.0:
        sample = BurgersIcSample(k_max, sample.extent, coeffs / bound, offsets / bound)
    return sample


def evaluate_burgers_ic(sample: BurgersIcSample, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mx = sample.coeffs.shape[2] - 1
    ny = (sample.coeffs.shape[3] - 1) // 2
    lx, ly = sample.extent
    out = [np.full(x.shape, sample.offsets[k]) for k in range(2)]
    for i, m in enumerate(range(mx + 1)):
        for j, n in enumerate(range(-ny, ny + 1)):
            if not np.any(sample.coeffs[:, :, i, j]):
                continue
            phase = 2.0 * np.pi * (m * x / lx + n * y / ly)
            c, s = np.cos(phase), np.sin(phase)
            for k in range(2):
                out[k] = out[k] + sample.coeffs[k, 0, i, j] * c + sample.coeffs[k, 1, i, j] * s
    return out[0], out[1]


def constant_ic(u0: float, v0: float):
    def ic(x, y):
        return np.full(np.shape(x), float(u0)), np.full(np.shape(x), float(v0))
    return ic


# ---------------------------------------------------------------- snapshots

@dataclass(frozen=True, eq=False)
class SnapshotSet:
    element_type: str
    n_cells: int
    fields_per_snapshot: int
    data: np.ndarray  # (fields * (n_cells+1)^2, n_snapshots), one column per element restriction
    seed: int
    family: str = "poisson"
    sampler_version: str = SAMPLER_VERSION
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        rows = self.fields_per_snapshot * (self.n_cells + 1) ** 2
        if self.data.ndim != 2 or self.data.shape[0] != rows:
            raise ValueError(f"snapshot data must have {rows} rows, got shape {self.data.shape}")
        if self.data.shape[1] < 1:
            raise DegenerateDataError("snapshot set is empty")
        if not np.all(np.isfinite(self.data)):
            raise NumericalError("snapshot set contains non-finite entries")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    @property
    def grid(self) -> ElementGrid:
        return ElementGrid(self.n_cells)


def _children(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def poisson_patch_snapshots_from_sources(sources, grid: ElementGrid) -> np.ndarray:
    """Solve each source on a 2x2 zero-Dirichlet patch; 4 columns per source."""
    fom = PoissonFOM(build_layout(2, 2, bc_kind=DIRICHLET), grid)
    cols = []
    for i, src in enumerate(sources):
        try:
            field_ = fom.solve(src)
        except NumericalError as exc:
            raise with_context(exc, f"sample {i}")
        cols.append(field_.element_values())
    return np.vstack(cols).T.copy()


def generate_poisson_patch_snapshots(n_samples: int, grid: ElementGrid, seed: int,
                                     element_type: str = "square") -> SnapshotSet:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sources = [sample_poisson_source(rng) for rng in _children(seed, n_samples)]
    data = poisson_patch_snapshots_from_sources(sources, grid)
    return SnapshotSet(element_type, grid.n_cells, 1, data, seed, family="poisson")


def burgers_patch_snapshots_from_ics(ics, grid: ElementGrid, dt: float, t_final: float,
                                     save_every: int, nu: float = 1e-3,
                                     threads: int = 1) -> np.ndarray:
    """Run each IC on a periodic 2x2 patch; 4 columns per saved time, (u; v) stacked."""
    layout = build_layout(2, 2, bc_kind=PERIODIC)

    def run(item):
        i, ic = item
        problem = BurgersProblem(layout, grid, ic, dt, t_final, nu, save_every)
        try:
            traj = solve_burgers_fom(problem)
        except NumericalError as exc:
            raise with_context(exc, f"run {i}")
        return np.vstack([s.element_values() for s in traj.states])

    items = list(enumerate(ics))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(run, items))
    else:
        blocks = [run(it) for it in items]
    return np.vstack(blocks).T.copy()


def generate_burgers_patch_snapshots(n_runs: int, grid: ElementGrid, dt: float, t_final: float,
                                     save_every: int, seed: int, *, k_max: int = 4,
                                     nu: float = 1e-3, threads: int = 1,
                                     element_type: str = "square") -> SnapshotSet:
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    ics = [sample_burgers_ic(rng, k_max) for rng in _children(seed, n_runs)]
    data = burgers_patch_snapshots_from_ics(ics, grid, dt, t_final, save_every, nu, threads)
    return SnapshotSet(element_type, grid.n_cells, 2, data, seed, family="burgers")


# ----------------------------------------------------------------- archive

def save_snapshots(snapshots: SnapshotSet, path) -> int:
    """Write the binary archive plus a JSON provenance sidecar; returns the archive CRC."""
    w = Writer(SNAPSHOT_MAGIC)
    w.text(snapshots.element_type)
    w.u32(snapshots.n_cells)
    w.u32(snapshots.fields_per_snapshot)
    w.u64(snapshots.n_snapshots)
    w.u64(snapshots.seed)
    w.f64(snapshots.data)
    crc = w.write(path)
    meta = {
        "family": snapshots.family,
        "sampler_version": snapshots.sampler_version,
        "tool_version": __version__,
        "seed": snapshots.seed,
        "generated_at": snapshots.timestamp,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return crc


def load_snapshots(path, *, n_cells: int | None = None) -> SnapshotSet:
    r = Reader(read_bytes(path), SNAPSHOT_MAGIC, "snapshot")
    etype = r.text()
    nc = r.u32()
    fields_ = r.u32()
    count = r.u64()
    seed = r.u64()
    data = r.f64((fields_ * (nc + 1) ** 2, count))
    r.done()
    if n_cells is not None and nc != n_cells:
        raise CompatibilityError(f"snapshot archive has n_cells={nc}, expected {n_cells}")
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return SnapshotSet(etype, nc, fields_, data, seed,
                       family=meta.get("family", "poisson" if fields_ == 1 else "burgers"),
                       sampler_version=meta.get("sampler_version", SAMPLER_VERSION),
                       timestamp=meta.get("generated_at", 0.0))
