"""POD compression of snapshot sets into element bases.

A basis is either monolithic (one orthonormal block over every element DOF)
or split: an interior block, one shared port block per edge orientation
(traces exclude the two corner nodes) and unreduced corner values.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._binio import Reader, Writer, read_bytes
from .errors import CompatibilityError, DegenerateDataError
from .grid import SIDES, ElementGrid
from .sampler import SnapshotSet

BASIS_MAGIC = b"DDFBAS01"
UNTRUNCATED = 1.0
PORT_CLASS = {"left": "vertical", "right": "vertical", "bottom": "horizontal", "top": "horizontal"}


@dataclass(frozen=True, eq=False)
class PodBasis:
    element_type: str
    n_cells: int
    modes: np.ndarray  # (rows, r), orthonormal columns
    singular_values: np.ndarray  # all p values, non-increasing
    n_components: int = 1
    block: str = "monolithic"

    @property
    def r(self) -> int:
        return self.modes.shape[1]

    @property
    def p(self) -> int:
        return self.singular_values.shape[0]

    @property
    def energy_fraction(self) -> float:
        energy = self.singular_values**2
        return float(energy[:self.r].sum() / energy.sum())

    def project(self, values: np.ndarray) -> np.ndarray:
        return project(self, values)

    def reconstruct(self, coords: np.ndarray) -> np.ndarray:
        return reconstruct(self, coords)


@dataclass(frozen=True, eq=False)
class PortBasis(PodBasis):
    edge_class: str = "vertical"


def _truncation_rank(sigma: np.ndarray, epsilon: float | None, fixed_r: int | None) -> int:
    p = sigma.shape[0]
    if fixed_r is not None:
        if not 1 <= fixed_r <= p:
            raise ValueError(f"fixed_r={fixed_r} outside [1, {p}]")
        return int(fixed_r)
    if epsilon is None or epsilon >= UNTRUNCATED:
        return p
    if not 0.0 < epsilon:
        raise ValueError(f"energy threshold must be in (0, 1], got {epsilon}")
    energy = np.cumsum(sigma**2)
    return int(min(np.searchsorted(energy, epsilon * energy[-1], side="left") + 1, p))


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(modes), axis=0)  # first index wins exact ties
    signs = np.sign(modes[idx, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    return modes * signs


def pod(matrix: np.ndarray, *, epsilon: float | None = None, fixed_r: int | None = None):
    """Return ``(modes, singular_values)`` of a snapshot matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        raise DegenerateDataError("empty snapshot matrix")
    if not np.all(np.isfinite(matrix)):
        raise DegenerateDataError("snapshot matrix has non-finite entries")
    if not np.any(matrix):
        raise DegenerateDataError("snapshot matrix is identically zero")
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    r = _truncation_rank(s, epsilon, fixed_r)
    return _fix_signs(u[:, :r]), s


def compute_pod(snapshots, *, epsilon: float | None = None, fixed_r: int | None = None,
                element_type: str | None = None) -> PodBasis:
    """POD basis of a :class:`SnapshotSet` (or a bare matrix).

    ``epsilon`` keeps the fewest modes whose energy fraction reaches it;
    ``epsilon >= 1`` (or neither option) keeps all ``p`` modes.
    """
    if isinstance(snapshots, SnapshotSet):
        data, nc, comps = snapshots.data, snapshots.n_cells, snapshots.fields_per_snapshot
        etype = element_type or snapshots.element_type
    else:
        data, nc, comps, etype = np.asarray(snapshots), 0, 1, element_type or "matrix"
    modes, sigma = pod(data, epsilon=epsilon, fixed_r=fixed_r)
    return PodBasis(etype, nc, modes, sigma, comps)


def project(basis: PodBasis, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != basis.modes.shape[0]:
        raise ValueError(f"field has {values.shape[0]} rows, basis expects {basis.modes.shape[0]}")
    return basis.modes.T @ values


def reconstruct(basis: PodBasis, coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] != basis.r:
        raise ValueError(f"got {coords.shape[0]} coordinates, basis has r={basis.r}")
    return basis.modes @ coords


# ---------------------------------------------------------------- split bases

def _rows(nodes: np.ndarray, n_local: int, n_comp: int) -> np.ndarray:
    return np.concatenate([k * n_local + nodes for k in range(n_comp)])


@dataclass(frozen=True, eq=False)
class SplitBasis:
    element_type: str
    n_cells: int
    n_components: int
    interior: PodBasis
    ports: dict  # side -> PortBasis; facing sides share one object

    @property
    def grid(self) -> ElementGrid:
        return ElementGrid(self.n_cells)

    def side_rows(self, side: str) -> np.ndarray:
        g = self.grid
        return _rows(g.edge_interior(side), g.n_nodes, self.n_components)

    @property
    def interior_rows(self) -> np.ndarray:
        g = self.grid
        return _rows(g.interior_nodes, g.n_nodes, self.n_components)

    @property
    def corner_rows(self) -> np.ndarray:
        g = self.grid
        return _rows(g.corners, g.n_nodes, self.n_components)

    @property
    def r_total(self) -> int:
        return self.interior.r + sum(self.ports[s].r for s in SIDES) + self.corner_rows.size

    @cached_property
    def column_blocks(self) -> dict:
        """Column slices of :meth:`element_matrix` per block."""
        out, start = {}, 0
        for name, width in [("interior", self.interior.r)] + [(s, self.ports[s].r) for s in SIDES] + [
                ("corners", self.corner_rows.size)]:
            out[name] = slice(start, start + width)
            start += width
        return out

    @cached_property
    def element_matrix(self) -> np.ndarray:
        """Block-diagonal element basis: [interior | left | right | bottom | top | corners]."""
        rows = self.n_components * self.grid.n_nodes
        phi = np.zeros((rows, self.r_total))
        cb, cols = self.column_blocks, np.arange(self.r_total)
        phi[np.ix_(self.interior_rows, cols[cb["interior"]])] = self.interior.modes
        for s in SIDES:
            phi[np.ix_(self.side_rows(s), cols[cb[s]])] = self.ports[s].modes
        phi[self.corner_rows, cols[cb["corners"]]] = 1.0
        phi.setflags(write=False)
        return phi


def split_port_basis(snapshots: SnapshotSet, *, epsilon: float | None = None,
                     fixed_r: int | None = None) -> SplitBasis:
    """Interior POD basis plus one pooled port basis per edge orientation.

    Traces of left and right sides feed the ``vertical`` class, bottom and
    top the ``horizontal`` class, so both neighbours of a shared edge see the
    same port modes.
    """
    grid = snapshots.grid
    n_local, comps = grid.n_nodes, snapshots.fields_per_snapshot
    data = snapshots.data
    etype, nc = snapshots.element_type, snapshots.n_cells

    def clip(mat):
        return None if fixed_r is None else min(fixed_r, min(mat.shape))

    interior_rows = _rows(grid.interior_nodes, n_local, comps)
    modes, sigma = pod(data[interior_rows], epsilon=epsilon, fixed_r=clip(data[interior_rows]))
    interior = PodBasis(etype, nc, modes, sigma, comps, block="interior")

    ports = {}
    for edge_class, sides in (("vertical", ("left", "right")), ("horizontal", ("bottom", "top"))):
        traces = np.hstack([data[_rows(grid.edge_interior(s), n_local, comps)] for s in sides])
        if traces.size == 0:
            raise DegenerateDataError(f"empty trace set for {edge_class} ports")
        modes, sigma = pod(traces, epsilon=epsilon, fixed_r=clip(traces))
        port = PortBasis(etype, nc, modes, sigma, comps, block=f"port_{edge_class}",
                         edge_class=edge_class)
        for s in sides:
            ports[s] = port
    return SplitBasis(etype, nc, comps, interior, ports)


def check_grid(basis, n_cells: int) -> None:
    _check_n_cells(basis.element_type, basis.n_cells, n_cells)


def _check_n_cells(element_type: str, trained: int, used: int) -> None:
    if trained != used:
        raise CompatibilityError(
            f"basis for element type {element_type!r} was trained with n_cells={trained}, "
            f"layout uses n_cells={used}")


def element_matrix(basis) -> np.ndarray:
    return basis.element_matrix if isinstance(basis, SplitBasis) else basis.modes


# ----------------------------------------------------------------- archive
#
# Layout after the magic: element-type id, n_cells, r, p (of the first block),
# then the block descriptor: kind (0 monolithic, 1 split), n_components,
# block count and per block (name, rows, r, p); then every block's singular
# values, then every block's modes column-major, then CRC-32.

def _blocks(basis) -> list[tuple[str, PodBasis]]:
    if isinstance(basis, SplitBasis):
        return [("interior", basis.interior)] + [(f"port_{s}", basis.ports[s]) for s in SIDES]
    return [("monolithic", basis)]


def save_basis(basis, path) -> int:
    blocks = _blocks(basis)
    first = blocks[0][1]
    w = Writer(BASIS_MAGIC)
    w.text(basis.element_type)
    w.u32(basis.n_cells)
    w.u32(first.r)
    w.u32(first.p)
    w.u8(1 if isinstance(basis, SplitBasis) else 0)
    w.u32(basis.n_components)
    w.u32(len(blocks))
    for name, b in blocks:
        w.text(name)
        w.u32(b.modes.shape[0])
        w.u32(b.r)
        w.u32(b.p)
    for _, b in blocks:
        w.f64(b.singular_values)
    for _, b in blocks:
        w.f64(b.modes)
    return w.write(path)


def load_basis(path, *, n_cells: int | None = None):
    rd = Reader(read_bytes(path), BASIS_MAGIC, "basis")
    etype = rd.text()
    nc = rd.u32()
    rd.u32()
    rd.u32()
    kind = rd.u8()
    comps = rd.u32()
    n_blocks = rd.u32()
    desc = [(rd.text(), rd.u32(), rd.u32(), rd.u32()) for _ in range(n_blocks)]
    sigmas = [rd.f64((p,)) for _, _, _, p in desc]
    modes = [rd.f64((rows, r)) for _, rows, r, _ in desc]
    rd.done()
    if n_cells is not None:
        _check_n_cells(etype, nc, n_cells)
    if kind == 0:
        return PodBasis(etype, nc, modes[0], sigmas[0], comps)
    interior = PodBasis(etype, nc, modes[0], sigmas[0], comps, block="interior")
    ports, shared = {}, {}
    for (name, *_), m, s in zip(desc[1:], modes[1:], sigmas[1:]):
        side = name.removeprefix("port_")
        cls = PORT_CLASS[side]
        key = (cls, m.tobytes(), s.tobytes())
        if key not in shared:
            shared[key] = PortBasis(etype, nc, m, s, comps, block=f"port_{cls}", edge_class=cls)
        ports[side] = shared[key]
    return SplitBasis(etype, nc, comps, interior, ports)
