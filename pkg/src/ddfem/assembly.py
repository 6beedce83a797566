"""Global reduced systems from a library of trained element bases.

Three couplings are supported:

``strong_condensation``
    Shared port coordinates per interface edge plus one value per free cross
    point; element interior coordinates are condensed out (Schur complement).
``dg_penalty``
    Symmetric interior penalty on every interface edge in reduced
    coordinates; Dirichlet sides are imposed the same way (Nitsche).
``constrained_residual``
    Element coordinates tied by nodal continuity constraints ``C c = 0``;
    solutions live in the orthonormal null space ``Z`` of ``C``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import SplitBasis, check_grid, element_matrix
from .errors import CondensationError, ConfigError, InfeasibleCouplingError, LayoutError
from .fom import edge_mass, element_loads, element_stiffness
from .grid import SIDES, DofMap, ElementGrid, GlobalLayout, build_dof_map

STRONG = "strong_condensation"
DG = "dg_penalty"
CONSTRAINED = "constrained_residual"
FORMULATIONS = (STRONG, DG, CONSTRAINED)


@dataclass(frozen=True, eq=False)
class ComponentLibrary:
    bases: dict  # element type -> PodBasis | SplitBasis

    def __post_init__(self):
        if not self.bases:
            raise ConfigError("component library is empty")
        cells = {b.n_cells for b in self.bases.values()}
        comps = {b.n_components for b in self.bases.values()}
        if len(cells) != 1:
            raise ConfigError(f"library entries disagree on n_cells: {sorted(cells)}")
        if len(comps) != 1:
            raise ConfigError(f"library entries disagree on component count: {sorted(comps)}")

    @classmethod
    def single(cls, basis, element_type: str | None = None) -> "ComponentLibrary":
        return cls({element_type or basis.element_type: basis})

    @property
    def n_cells(self) -> int:
        return next(iter(self.bases.values())).n_cells

    @property
    def n_components(self) -> int:
        return next(iter(self.bases.values())).n_components

    @property
    def grid(self) -> ElementGrid:
        return ElementGrid(self.n_cells)

    @property
    def is_split(self) -> bool:
        return all(isinstance(b, SplitBasis) for b in self.bases.values())

    def __getitem__(self, element_type: str):
        try:
            return self.bases[element_type]
        except KeyError:
            raise LayoutError(f"no trained basis for element type {element_type!r}") from None

    def check(self, layout: GlobalLayout) -> None:
        for t in layout.types:
            check_grid(self[t], self.n_cells)


@dataclass(frozen=True)
class CouplingConfig:
    formulation: str = CONSTRAINED
    eta: float = 10.0
    constraint_tol: float = 1e-10

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r}; choose from {FORMULATIONS}")
        if not self.eta > 0:
            raise ConfigError(f"penalty eta must be positive, got {self.eta}")
        if not self.constraint_tol > 0:
            raise ConfigError(f"constraint_tol must be positive, got {self.constraint_tol}")


@dataclass(frozen=True, eq=False)
class Condensation:
    """Static-condensation data: skeleton numbering and per-type element blocks."""

    n_ports: int
    n_vertices: int
    edge_cols: dict  # edge id -> slice of port coordinates
    vertex_of: dict  # global node -> skeleton column
    element_cols: list  # per element: skeleton columns touched
    element_lift: list  # per element: (|B| x len(cols)) boundary-value map
    blocks: dict  # element type -> dict(phi, chol, k_ib, schur)
    boundary_nodes: np.ndarray
    interior_nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    formulation: str
    dofmap: DofMap
    library: ComponentLibrary
    n_red: int
    operator: np.ndarray | None = None
    offsets: np.ndarray | None = None  # element coordinate block starts (dg / constrained)
    element_operators: dict = field(default_factory=dict)  # type -> Phi^T A Phi
    constraint: np.ndarray | None = None
    null: "NullSpace | None" = None
    constraint_rank: int = 0
    condensation: Condensation | None = None
    eta: float | None = None

    @property
    def layout(self) -> GlobalLayout:
        return self.dofmap.layout

    @property
    def grid(self) -> ElementGrid:
        return self.dofmap.grid

    @property
    def n_components(self) -> int:
        return self.library.n_components

    def phi(self, e: int) -> np.ndarray:
        return element_matrix(self.library[self.layout.type_of(e)])

    def element_slice(self, e: int) -> slice:
        return slice(int(self.offsets[e]), int(self.offsets[e + 1]))

    @property
    def nullspace(self) -> np.ndarray | None:
        return None if self.null is None else self.null.matrix

    @property
    def n_element_coords(self) -> int:
        return int(self.offsets[-1]) if self.offsets is not None else 0


def _offsets(layout: GlobalLayout, library: ComponentLibrary) -> np.ndarray:
    sizes = [element_matrix(library[layout.type_of(e)]).shape[1] for e in range(layout.n_elements)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def _projected_stiffness(library: ComponentLibrary, types, threads: int = 1) -> dict:
    stiff = element_stiffness(library.grid)

    def one(t):
        phi = element_matrix(library[t])
        return t, phi.T @ stiff @ phi

    types = list(types)
    if threads > 1 and len(types) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return dict(pool.map(one, types))
    return dict(map(one, types))


def _require_poisson(library: ComponentLibrary, what: str) -> None:
    if library.n_components != 1:
        raise ConfigError(f"{what} is implemented for the scalar Poisson problem only")


# ------------------------------------------------------------- strong coupling

def _condense_type(basis: SplitBasis, grid: ElementGrid, etype: str, element: int) -> dict:
    stiff = element_stiffness(grid)
    inner, bnd = grid.interior_nodes, grid.boundary_nodes
    phi = basis.interior.modes
    k_ii = phi.T @ stiff[np.ix_(inner, inner)] @ phi
    try:
        chol = sla.cho_factor(k_ii, lower=True)
    except np.linalg.LinAlgError:
        raise CondensationError(
            f"interior block of element {element} (type {etype!r}) is singular", element=element
        ) from None
    k_ib = phi.T @ stiff[np.ix_(inner, bnd)]
    schur = stiff[np.ix_(bnd, bnd)] - k_ib.T @ sla.cho_solve(chol, k_ib)
    return {"phi": phi, "chol": chol, "k_ib": k_ib, "schur": 0.5 * (schur + schur.T)}


def assemble_strong(layout: GlobalLayout, library: ComponentLibrary,
                    dofmap: DofMap | None = None) -> ReducedSystem:
    """Static condensation onto shared port coordinates and cross-point values."""
    _require_poisson(library, "strong condensation")
    if layout.periodic:
        raise LayoutError("strong condensation is implemented for dirichlet_zero layouts")
    if not library.is_split:
        raise ConfigError("strong condensation needs interior + port bases (basis.port_split = true)")
    library.check(layout)
    grid = library.grid
    dm = dofmap or build_dof_map(layout, grid)

    edge_cols, start = {}, 0
    for edge in layout.edges:
        r_port = library[layout.type_of(edge.a)].ports[edge.sides[0]].r
        edge_cols[edge.id] = slice(start, start + r_port)
        start += r_port
    n_ports = start

    vertex_of = {}
    for e in range(layout.n_elements):
        for g in dm.local_to_global[e, grid.corners]:
            if dm.free[g] and g not in vertex_of:
                vertex_of[int(g)] = n_ports + len(vertex_of)
    n_skel = n_ports + len(vertex_of)

    bnd = grid.boundary_nodes
    pos = {int(node): i for i, node in enumerate(bnd)}
    side_edge = {}
    for edge in layout.edges:
        sa, sb = edge.sides
        side_edge[(edge.a, sa)] = edge
        side_edge[(edge.b, sb)] = edge

    blocks = {}
    element_cols, element_lift = [], []
    for e in range(layout.n_elements):
        etype = layout.type_of(e)
        if etype not in blocks:
            blocks[etype] = _condense_type(library[etype], grid, etype, e)
        cols, pieces = [], []
        for side in SIDES:
            edge = side_edge.get((e, side))
            if edge is None:
                continue
            psi = library[layout.type_of(edge.a)].ports[side].modes
            rows = [pos[int(n)] for n in grid.edge_interior(side)]
            pieces.append((rows, len(cols), psi))
            cols.extend(range(edge_cols[edge.id].start, edge_cols[edge.id].stop))
        for local in grid.corners:
            g = int(dm.local_to_global[e, local])
            if g in vertex_of:
                pieces.append(([pos[int(local)]], len(cols), np.ones((1, 1))))
                cols.append(vertex_of[g])
        lift = np.zeros((bnd.size, len(cols)))
        for rows, c0, block in pieces:
            lift[np.ix_(rows, np.arange(c0, c0 + block.shape[1]))] = block
        element_cols.append(np.array(cols, dtype=np.int64))
        element_lift.append(lift)

    K = np.zeros((n_skel, n_skel))
    for e in range(layout.n_elements):
        cols, lift = element_cols[e], element_lift[e]
        if cols.size:
            K[np.ix_(cols, cols)] += lift.T @ blocks[layout.type_of(e)]["schur"] @ lift
    K = 0.5 * (K + K.T)
    cond = Condensation(n_ports, len(vertex_of), edge_cols, vertex_of, element_cols, element_lift,
                        blocks, bnd, grid.interior_nodes)
    return ReducedSystem(STRONG, dm, library, n_skel, operator=K, condensation=cond)


def uncondensed_operator(system: ReducedSystem) -> np.ndarray:
    """Full reduced operator over [interior coords of every element | skeleton]."""
    cond = system.condensation
    layout, grid = system.layout, system.grid
    stiff = element_stiffness(grid)
    inner, bnd = cond.interior_nodes, cond.boundary_nodes
    a_bb = stiff[np.ix_(bnd, bnd)]
    sizes = [cond.blocks[layout.type_of(e)]["phi"].shape[1] for e in range(layout.n_elements)]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n_int = int(off[-1])
    n = n_int + system.n_red
    K = np.zeros((n, n))
    for e in range(layout.n_elements):
        blk = cond.blocks[layout.type_of(e)]
        phi = blk["phi"]
        ie = np.arange(off[e], off[e + 1])
        K[np.ix_(ie, ie)] += phi.T @ stiff[np.ix_(inner, inner)] @ phi
        cols = n_int + cond.element_cols[e]
        lift = cond.element_lift[e]
        if cols.size:
            coupling = blk["k_ib"] @ lift
            K[np.ix_(ie, cols)] += coupling
            K[np.ix_(cols, ie)] += coupling.T
            K[np.ix_(cols, cols)] += lift.T @ a_bb @ lift
    return K


# ----------------------------------------------------------------- DG coupling

def _face_traces(phi: np.ndarray, grid: ElementGrid, side: str):
    trace = phi[grid.side_nodes(side)]
    normal = (trace - phi[grid.inner_row(side)]) / grid.h
    return trace, normal


def _face_matrix(jump: np.ndarray, avg: np.ndarray, mass: np.ndarray, sigma: float) -> np.ndarray:
    mj = mass @ jump
    ma = mass @ avg
    return -avg.T @ mj - jump.T @ ma + sigma * jump.T @ mj


def assemble_dg(layout: GlobalLayout, library: ComponentLibrary, eta: float = 10.0,
                dofmap: DofMap | None = None, *, weak_dirichlet: bool = True,
                threads: int = 1) -> ReducedSystem:
    """Symmetric interior-penalty coupling of per-element reduced blocks.

    The jump penalty weight is ``eta / h`` with ``h`` the element grid spacing.
    With ``weak_dirichlet`` the outer sides of a Dirichlet layout receive the
    same consistency/symmetry/penalty terms against the zero boundary value.
    """
    _require_poisson(library, "DG coupling")
    if not eta > 0:
        raise ConfigError(f"penalty eta must be positive, got {eta}")
    library.check(layout)
    grid = library.grid
    dm = dofmap or build_dof_map(layout, grid)
    off = _offsets(layout, library)
    n = int(off[-1])
    blocks = _projected_stiffness(library, layout.types, threads)
    mass = edge_mass(grid)
    sigma = eta / grid.h

    K = np.zeros((n, n))
    for e in range(layout.n_elements):
        s = slice(off[e], off[e + 1])
        K[s, s] += blocks[layout.type_of(e)]
    for edge in layout.edges:
        sa, sb = edge.sides
        ta, ga = _face_traces(element_matrix(library[layout.type_of(edge.a)]), grid, sa)
        tb, gb = _face_traces(element_matrix(library[layout.type_of(edge.b)]), grid, sb)
        idx = np.r_[off[edge.a]:off[edge.a + 1], off[edge.b]:off[edge.b + 1]]
        face = _face_matrix(np.hstack([ta, -tb]), 0.5 * np.hstack([ga, -gb]), mass, sigma)
        if edge.a == edge.b:
            # self-wrap edge: both sides map onto the same coordinates
            ra = ta.shape[1]
            face = face[:ra, :ra] + face[:ra, ra:] + face[ra:, :ra] + face[ra:, ra:]
            idx = idx[:ra]
        K[np.ix_(idx, idx)] += face
    if weak_dirichlet:
        for e in range(layout.n_elements):
            phi = element_matrix(library[layout.type_of(e)])
            s = slice(off[e], off[e + 1])
            for side in layout.outer_sides(e):
                t, g = _face_traces(phi, grid, side)
                K[s, s] += _face_matrix(t, g, mass, sigma)
    K = 0.5 * (K + K.T)
    return ReducedSystem(DG, dm, library, n, operator=K, offsets=off, element_operators=blocks,
                         eta=eta)


# ---------------------------------------------------------- constrained coupling

@dataclass(frozen=True, eq=False)
class NullSpace:
    """Orthonormal basis of ``null(C)`` stored blockwise.

    Coordinates that no constraint touches contribute unit vectors; only the
    ``active`` columns need an explicit basis ``z_active``.
    """

    n: int
    active: np.ndarray
    z_active: np.ndarray

    @property
    def inactive(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.active] = False
        return np.flatnonzero(mask)

    @property
    def dim(self) -> int:
        return self.inactive.size + self.z_active.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """Dense ``Z`` with columns [inactive unit vectors | active null vectors]."""
        inactive = self.inactive
        Z = np.zeros((self.n, self.dim))
        Z[inactive, np.arange(inactive.size)] = 1.0
        Z[np.ix_(self.active, np.arange(inactive.size, self.dim))] = self.z_active
        return Z

    def project(self, coords: np.ndarray) -> np.ndarray:
        """Orthogonal projection ``Z Z^T c``."""
        out = np.array(coords, dtype=float, copy=True)
        ca = out[self.active]
        out[self.active] = self.z_active @ (self.z_active.T @ ca)
        return out

    def lift(self, y: np.ndarray) -> np.ndarray:
        """``Z y``."""
        inactive = self.inactive
        out = np.zeros(self.n)
        out[inactive] = y[:inactive.size]
        out[self.active] = self.z_active @ y[inactive.size:]
        return out

    def restrict(self, coords: np.ndarray) -> np.ndarray:
        """``Z^T c``."""
        return np.concatenate([coords[self.inactive], self.z_active.T @ coords[self.active]])


def _constraint_rows(layout: GlobalLayout, library: ComponentLibrary, dm: DofMap,
                     off: np.ndarray, dirichlet: bool) -> np.ndarray:
    grid = library.grid
    n = int(off[-1])
    n_loc, comps = grid.n_nodes, library.n_components

    def rows(nodes):
        return np.concatenate([k * n_loc + nodes for k in range(comps)])

    chunks = []
    for edge in layout.edges:
        sa, sb = edge.sides
        pa = element_matrix(library[layout.type_of(edge.a)])[rows(grid.side_nodes(sa))]
        pb = element_matrix(library[layout.type_of(edge.b)])[rows(grid.side_nodes(sb))]
        block = np.zeros((pa.shape[0], n))
        block[:, off[edge.a]:off[edge.a + 1]] += pa
        block[:, off[edge.b]:off[edge.b + 1]] -= pb
        chunks.append(block)
    if dirichlet and not layout.periodic:
        for e in range(layout.n_elements):
            outer = dm.outer_boundary_sets[e]
            if outer.size:
                block = np.zeros((outer.size * comps, n))
                block[:, off[e]:off[e + 1]] = element_matrix(library[layout.type_of(e)])[rows(outer)]
                chunks.append(block)
    return np.vstack(chunks) if chunks else np.zeros((0, n))


def _nullspace(C: np.ndarray, tol: float) -> tuple[NullSpace, int]:
    n = C.shape[1]
    active = np.flatnonzero(np.any(C != 0.0, axis=0))
    if active.size == 0:
        return NullSpace(n, active, np.zeros((0, 0))), 0
    _, s, vt = np.linalg.svd(C[:, active], full_matrices=True)
    rank = int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
    return NullSpace(n, active, vt[rank:].T.copy()), rank


def _infeasible(rank: int, n: int) -> InfeasibleCouplingError:
    return InfeasibleCouplingError(
        f"continuity constraints leave no admissible coordinates (rank {rank} of {n}); "
        "increase the basis size (epsilon / fixed_r), enable basis.port_split, "
        "or loosen coupling.constraint_tol")


def build_continuity_constraints(layout: GlobalLayout, library: ComponentLibrary,
                                 dofmap: DofMap | None = None, *, tol: float = 1e-10,
                                 dirichlet: bool = True):
    """Nodal continuity constraints and an orthonormal basis of their null space.

    Returns ``(C, Z, rank)``.  ``C`` keeps one row per paired interface node
    and component (plus Dirichlet rows on outer sides); ``rank`` counts the
    singular values of ``C`` above ``tol * sigma_max`` and ``Z`` spans the
    complement of the retained row space.
    """
    library.check(layout)
    dm = dofmap or build_dof_map(layout, library.grid)
    off = _offsets(layout, library)
    C = _constraint_rows(layout, library, dm, off, dirichlet)
    ns, rank = _nullspace(C, tol)
    if ns.dim == 0:
        raise _infeasible(rank, ns.n)
    return C, ns.matrix, rank


def assemble_constrained(layout: GlobalLayout, library: ComponentLibrary, tol: float = 1e-10,
                         dofmap: DofMap | None = None, *, threads: int = 1) -> ReducedSystem:
    """Constrained coupling; for Poisson the operator is ``Z^T blockdiag(Phi^T A Phi) Z``."""
    library.check(layout)
    dm = dofmap or build_dof_map(layout, library.grid)
    off = _offsets(layout, library)
    C = _constraint_rows(layout, library, dm, off, dirichlet=True)
    ns, rank = _nullspace(C, tol)
    if ns.dim == 0:
        raise _infeasible(rank, ns.n)
    operator, blocks = None, {}
    if library.n_components == 1:
        blocks = _projected_stiffness(library, layout.types, threads)
        Z = ns.matrix
        KZ = np.empty_like(Z)
        for e in range(layout.n_elements):
            s = slice(off[e], off[e + 1])
            KZ[s] = blocks[layout.type_of(e)] @ Z[s]
        operator = Z.T @ KZ
        operator = 0.5 * (operator + operator.T)
    return ReducedSystem(CONSTRAINED, dm, library, ns.dim, operator=operator, offsets=off,
                         element_operators=blocks, constraint=C, null=ns, constraint_rank=rank)


def assemble(layout: GlobalLayout, library: ComponentLibrary, coupling: CouplingConfig,
             *, dofmap: DofMap | None = None, threads: int = 1) -> ReducedSystem:
    if coupling.formulation == STRONG:
        return assemble_strong(layout, library, dofmap)
    if coupling.formulation == DG:
        return assemble_dg(layout, library, coupling.eta, dofmap, threads=threads)
    return assemble_constrained(layout, library, coupling.constraint_tol, dofmap, threads=threads)


# ------------------------------------------------------------------ loads

@dataclass(frozen=True, eq=False)
class ReducedLoad:
    vector: np.ndarray  # right-hand side of the solved system
    element_vector: np.ndarray | None = None  # stacked Phi_e^T b_e (dg / constrained)
    interior: list | None = None  # per element Phi_I^T b_I (strong)


def reduced_load(system: ReducedSystem, source, loads: np.ndarray | None = None) -> ReducedLoad:
    """Project element load vectors ``M_e f_e`` into the system's coordinates."""
    layout = system.layout
    if loads is None:
        loads = element_loads(system.dofmap, source)
    if system.formulation == STRONG:
        cond = system.condensation
        vec = np.zeros(system.n_red)
        interior = []
        for e in range(layout.n_elements):
            blk = cond.blocks[layout.type_of(e)]
            b_i = blk["phi"].T @ loads[e, cond.interior_nodes]
            interior.append(b_i)
            cols = cond.element_cols[e]
            if cols.size:
                g = loads[e, cond.boundary_nodes] - blk["k_ib"].T @ sla.cho_solve(blk["chol"], b_i)
                vec[cols] += cond.element_lift[e].T @ g
        return ReducedLoad(vec, interior=interior)
    stacked = np.concatenate([system.phi(e).T @ loads[e] for e in range(layout.n_elements)])
    if system.formulation == DG:
        return ReducedLoad(stacked, element_vector=stacked)
    return ReducedLoad(system.null.restrict(stacked), element_vector=stacked)
