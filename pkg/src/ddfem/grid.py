"""Reference element grid, element tilings and global node bookkeeping.

Local node ``(a, b)`` of an element sits at row ``a`` (y) and column ``b``
(x); its flat index is ``a * (n_cells + 1) + b``.  Elements of an ``M x N``
layout are numbered row-major, element ``(r, c)`` covering
``[c, c + 1] x [r, r + 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import LayoutError, ResolutionError

DIRICHLET = "dirichlet_zero"
PERIODIC = "periodic"
BC_KINDS = (DIRICHLET, PERIODIC)
SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class ElementGrid:
    n_cells: int

    def __post_init__(self):
        if not isinstance(self.n_cells, (int, np.integer)) or self.n_cells < 2:
            raise ResolutionError(f"n_cells must be an integer >= 2, got {self.n_cells!r}")
        if (1.0 / self.n_cells) * self.n_cells != 1.0:
            # keeps h * n_cells == 1 exact in float64
            raise ResolutionError(f"n_cells={self.n_cells} has an inexact float64 spacing")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n_side(self) -> int:
        return self.n_cells + 1

    @property
    def n_nodes(self) -> int:
        return self.n_side**2

    @cached_property
    def node_coords(self) -> np.ndarray:
        t = np.arange(self.n_side) * self.h
        yy, xx = np.meshgrid(t, t, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def index(self, a, b):
        return np.asarray(a) * self.n_side + np.asarray(b)

    def side_nodes(self, side: str) -> np.ndarray:
        """Nodes of one element edge, ordered by increasing tangential coordinate."""
        n, s = self.n_cells, np.arange(self.n_side)
        if side == "left":
            return self.index(s, 0)
        if side == "right":
            return self.index(s, n)
        if side == "bottom":
            return self.index(0, s)
        if side == "top":
            return self.index(n, s)
        raise KeyError(side)

    def inner_row(self, side: str) -> np.ndarray:
        """Nodes one cell inward from ``side``, aligned with ``side_nodes``."""
        n, s = self.n_cells, np.arange(self.n_side)
        return {
            "left": self.index(s, 1),
            "right": self.index(s, n - 1),
            "bottom": self.index(1, s),
            "top": self.index(n - 1, s),
        }[side]

    def edge_interior(self, side: str) -> np.ndarray:
        return self.side_nodes(side)[1:-1]

    @cached_property
    def corners(self) -> np.ndarray:
        n = self.n_cells
        # bottom-left, bottom-right, top-left, top-right
        return self.index(np.array([0, 0, n, n]), np.array([0, n, 0, n]))

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        s = np.arange(1, self.n_cells)
        a, b = np.meshgrid(s, s, indexing="ij")
        return self.index(a.ravel(), b.ravel())

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.interior_nodes] = False
        return np.flatnonzero(mask)


def build_element_grid(n_cells: int) -> ElementGrid:
    return ElementGrid(int(n_cells) if isinstance(n_cells, (int, np.integer)) else n_cells)


@dataclass(frozen=True)
class Edge:
    """Shared edge between element ``a`` (left/below) and ``b`` (right/above)."""

    id: int
    orientation: str  # "vertical" or "horizontal"
    a: int
    b: int
    wrap: bool = False

    @property
    def sides(self) -> tuple[str, str]:
        return ("right", "left") if self.orientation == "vertical" else ("top", "bottom")


@dataclass(frozen=True)
class GlobalLayout:
    rows: int
    cols: int
    element_type: dict = field(hash=False, compare=True)
    bc_kind: str = DIRICHLET
    self_wrap: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise LayoutError(f"layout must be at least 1x1, got {self.rows}x{self.cols}")
        if self.bc_kind not in BC_KINDS:
            raise LayoutError(f"unknown bc_kind {self.bc_kind!r}")
        missing = [
            (r, c)
            for r in range(self.rows)
            for c in range(self.cols)
            if (r, c) not in self.element_type
        ]
        if missing:
            raise LayoutError(f"layout incomplete: no element type for cells {missing[:5]}")
        extra = [k for k in self.element_type if not (0 <= k[0] < self.rows and 0 <= k[1] < self.cols)]
        if extra:
            raise LayoutError(f"element types given for cells outside the layout: {extra[:5]}")
        if self.bc_kind == PERIODIC and min(self.rows, self.cols) < 2 and not self.self_wrap:
            raise LayoutError(
                "periodic layouts need rows >= 2 and cols >= 2 unless self_wrap is set"
            )

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def periodic(self) -> bool:
        return self.bc_kind == PERIODIC

    def element_id(self, r: int, c: int) -> int:
        return r * self.cols + c

    def element_rc(self, e: int) -> tuple[int, int]:
        return divmod(e, self.cols)

    def type_of(self, e: int) -> str:
        return self.element_type[self.element_rc(e)]

    @property
    def types(self) -> list[str]:
        return sorted(set(self.element_type.values()))

    @cached_property
    def edges(self) -> list[Edge]:
        """Internal edges (plus wrap-around edges when periodic): vertical first, then horizontal."""
        M, N = self.rows, self.cols
        out: list[Edge] = []
        last_c = N if self.periodic else N - 1
        for r in range(M):
            for c in range(last_c):
                out.append(Edge(len(out), "vertical", self.element_id(r, c),
                                self.element_id(r, (c + 1) % N), wrap=c == N - 1))
        last_r = M if self.periodic else M - 1
        for r in range(last_r):
            for c in range(N):
                out.append(Edge(len(out), "horizontal", self.element_id(r, c),
                                self.element_id((r + 1) % M, c), wrap=r == M - 1))
        return out

    def outer_sides(self, e: int) -> list[str]:
        """Sides of element ``e`` lying on the Dirichlet boundary."""
        if self.periodic:
            return []
        r, c = self.element_rc(e)
        out = []
        if c == 0:
            out.append("left")
        if c == self.cols - 1:
            out.append("right")
        if r == 0:
            out.append("bottom")
        if r == self.rows - 1:
            out.append("top")
        return out

    def translated(self, dr: int, dc: int) -> "GlobalLayout":
        """Relabel a periodic layout by a grid translation."""
        types = {
            ((r + dr) % self.rows, (c + dc) % self.cols): t for (r, c), t in self.element_type.items()
        }
        return GlobalLayout(self.rows, self.cols, types, self.bc_kind, self.self_wrap)


def build_layout(rows: int, cols: int, uniform_type: str = "square", bc_kind: str = DIRICHLET,
                 *, types: dict | None = None, self_wrap: bool = False) -> GlobalLayout:
    if types is None:
        types = {(r, c): uniform_type for r in range(rows) for c in range(cols)}
    return GlobalLayout(rows, cols, dict(types), bc_kind, self_wrap)


@dataclass(frozen=True, eq=False)
class DofMap:
    layout: GlobalLayout
    grid: ElementGrid
    local_to_global: np.ndarray  # (n_elements, n_local)
    n_global: int
    global_shape: tuple[int, int]  # node rows, node cols of the global grid
    free: np.ndarray  # bool mask over global nodes
    interface_sets: list  # (Edge, side-A locals, side-B locals)
    interior_sets: list
    interface_local: list
    outer_boundary_sets: list

    @property
    def free_index(self) -> np.ndarray:
        return np.flatnonzero(self.free)

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    @cached_property
    def multiplicity(self) -> np.ndarray:
        return np.bincount(self.local_to_global.ravel(), minlength=self.n_global)

    @cached_property
    def global_coords(self) -> np.ndarray:
        rows, cols = self.global_shape
        h = self.grid.h
        yy, xx = np.meshgrid(np.arange(rows) * h, np.arange(cols) * h, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def element_coords(self, e: int) -> np.ndarray:
        r, c = self.layout.element_rc(e)
        return self.grid.node_coords + np.array([c, r], dtype=float)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Global nodal vector -> (n_elements, n_local) element-local copies."""
        return np.asarray(values)[self.local_to_global]

    def gather(self, local: np.ndarray) -> np.ndarray:
        """Average element-local copies back onto global nodes."""
        out = np.zeros(self.n_global)
        np.add.at(out, self.local_to_global, local)
        return out / self.multiplicity

    def edge(self, edge_id: int):
        return self.interface_sets[edge_id]


def build_dof_map(layout: GlobalLayout, grid: ElementGrid) -> DofMap:
    M, N, n = layout.rows, layout.cols, grid.n_cells
    if layout.periodic:
        g_rows, g_cols = M * n, N * n
    else:
        g_rows, g_cols = M * n + 1, N * n + 1
    a, b = np.divmod(np.arange(grid.n_nodes), grid.n_side)
    l2g = np.empty((layout.n_elements, grid.n_nodes), dtype=np.int64)
    for e in range(layout.n_elements):
        r, c = layout.element_rc(e)
        gi = (r * n + a) % g_rows
        gj = (c * n + b) % g_cols
        l2g[e] = gi * g_cols + gj
    n_global = g_rows * g_cols

    free = np.ones(n_global, dtype=bool)
    if not layout.periodic:
        gi, gj = np.divmod(np.arange(n_global), g_cols)
        free[(gi == 0) | (gi == g_rows - 1) | (gj == 0) | (gj == g_cols - 1)] = False

    interface_sets = []
    for edge in layout.edges:
        sa, sb = edge.sides
        interface_sets.append((edge, grid.side_nodes(sa), grid.side_nodes(sb)))

    interior_sets, interface_local, outer_sets = [], [], []
    for e in range(layout.n_elements):
        on_outer = ~free[l2g[e]]
        outer = np.flatnonzero(on_outer)
        shared = np.zeros(grid.n_nodes, dtype=bool)
        for edge, la, lb in interface_sets:
            if edge.a == e:
                shared[la] = True
            if edge.b == e:
                shared[lb] = True
        shared &= ~on_outer
        interface_local.append(np.flatnonzero(shared))
        interior_sets.append(np.flatnonzero(~shared & ~on_outer))
        outer_sets.append(outer)

    return DofMap(layout, grid, l2g, n_global, (g_rows, g_cols), free, interface_sets,
                  interior_sets, interface_local, outer_sets)


def interface_trace_indices(layout: GlobalLayout, grid: ElementGrid, edge_id: int):
    """Paired local node lists ``(side A, side B)`` for one interface edge."""
    edges = layout.edges
    if not 0 <= edge_id < len(edges):
        raise KeyError(f"unknown edge_id {edge_id} (layout has {len(edges)} interface edges)")
    sa, sb = edges[edge_id].sides
    return grid.side_nodes(sa), grid.side_nodes(sb)
