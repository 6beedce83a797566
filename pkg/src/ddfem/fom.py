"""Full-order reference solvers.

Poisson uses bilinear (Q1) finite elements on the merged global grid with
homogeneous Dirichlet data; the load is the consistent mass matrix applied
to the nodal interpolant of the source.  Burgers uses second-order central
differences of the conservative form on a periodic grid, advanced with the
explicit midpoint rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DivergenceError, LayoutError, SolverError, StabilityError
from .grid import DofMap, ElementGrid, GlobalLayout, build_dof_map
from .linalg import RESIDUAL_CHECK, solve_spd

Source = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class StateField:
    dofmap: DofMap
    n_components: int
    values: np.ndarray

    def __post_init__(self):
        expected = self.n_components * self.dofmap.n_global
        if self.values.shape != (expected,):
            raise ValueError(f"StateField needs {expected} values, got {self.values.shape}")

    @property
    def layout(self) -> GlobalLayout:
        return self.dofmap.layout

    def component(self, k: int) -> np.ndarray:
        n = self.dofmap.n_global
        return self.values[k * n:(k + 1) * n]

    def as_grid(self, k: int = 0) -> np.ndarray:
        return self.component(k).reshape(self.dofmap.global_shape)

    def element_values(self) -> np.ndarray:
        """(n_elements, n_components * n_local) element-restricted copies, components stacked."""
        return np.hstack([self.dofmap.scatter(self.component(k)) for k in range(self.n_components)])


# --------------------------------------------------------------------- Poisson

def _stiffness_1d(n: int, h: float) -> np.ndarray:
    k = np.zeros((n + 1, n + 1))
    for i in range(n):
        k[i:i + 2, i:i + 2] += np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    return k


def _mass_1d(n: int, h: float) -> np.ndarray:
    m = np.zeros((n + 1, n + 1))
    for i in range(n):
        m[i:i + 2, i:i + 2] += np.array([[2.0, 1.0], [1.0, 2.0]]) * h / 6.0
    return m


@lru_cache(maxsize=None)
def _element_matrices(n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    h = 1.0 / n_cells
    k1, m1 = _stiffness_1d(n_cells, h), _mass_1d(n_cells, h)
    stiff = np.kron(m1, k1) + np.kron(k1, m1)
    mass = np.kron(m1, m1)
    stiff.setflags(write=False)
    mass.setflags(write=False)
    return stiff, mass


def element_stiffness(grid: ElementGrid) -> np.ndarray:
    """Q1 stiffness of one unconstrained reference element, cached per resolution."""
    return _element_matrices(grid.n_cells)[0]


def element_mass(grid: ElementGrid) -> np.ndarray:
    return _element_matrices(grid.n_cells)[1]


def edge_mass(grid: ElementGrid) -> np.ndarray:
    """P1 mass matrix along one element edge."""
    return _mass_1d(grid.n_cells, grid.h)


def _assemble_global(dofmap: DofMap, local: np.ndarray) -> sp.csr_matrix:
    n_el, n_loc = dofmap.local_to_global.shape
    rows = np.repeat(dofmap.local_to_global, n_loc, axis=1).ravel()
    cols = np.tile(dofmap.local_to_global, (1, n_loc)).ravel()
    vals = np.tile(local.ravel(), n_el)
    return sp.coo_matrix((vals, (rows, cols)), shape=(dofmap.n_global,) * 2).tocsr()


def assemble_poisson_operator(layout: GlobalLayout, grid: ElementGrid,
                              dofmap: DofMap | None = None) -> sp.csr_matrix:
    """Stiffness operator on the free (non-Dirichlet) global nodes."""
    if layout.periodic:
        raise LayoutError("the Poisson operator is defined for dirichlet_zero layouts only")
    dofmap = dofmap or build_dof_map(layout, grid)
    full = _assemble_global(dofmap, element_stiffness(grid))
    idx = dofmap.free_index
    return full[idx][:, idx].tocsr()


def element_loads(dofmap: DofMap, source: Source) -> np.ndarray:
    """(n_elements, n_local) element load vectors ``M_e f_e``."""
    mass = element_mass(dofmap.grid)
    out = np.empty(dofmap.local_to_global.shape)
    for e in range(dofmap.layout.n_elements):
        xy = dofmap.element_coords(e)
        out[e] = mass @ np.asarray(source(xy[:, 0], xy[:, 1]), dtype=float)
    return out


def assemble_load(dofmap: DofMap, source: Source) -> np.ndarray:
    out = np.zeros(dofmap.n_global)
    np.add.at(out, dofmap.local_to_global, element_loads(dofmap, source))
    return out


@dataclass(frozen=True, eq=False)
class PoissonProblem:
    layout: GlobalLayout
    grid: ElementGrid
    source: Source
    bc: str = "dirichlet_zero"


class PoissonFOM:
    """Factor-once Poisson solver for many right-hand sides on one layout."""

    def __init__(self, layout: GlobalLayout, grid: ElementGrid, *, method: str = "auto",
                 rtol: float = 1e-12):
        self.layout, self.grid = layout, grid
        self.dofmap = build_dof_map(layout, grid)
        self.operator = assemble_poisson_operator(layout, grid, self.dofmap)
        self.method, self.rtol = method, rtol
        self._solve = None
        n = self.operator.shape[0]
        if method == "auto" and 0 < n <= 2000:
            # small systems: factor once, reuse for every source
            factor = sla.cho_factor(self.operator.toarray(), lower=True)
            self._solve = lambda b: sla.cho_solve(factor, b)

    def solve(self, source: Source) -> StateField:
        dm = self.dofmap
        b = assemble_load(dm, source)[dm.free_index]
        u = np.zeros(dm.n_global)
        if np.any(b != 0.0):
            if self._solve is not None:
                x = self._solve(b)
                res = np.linalg.norm(self.operator @ x - b) / np.linalg.norm(b)
                if res > RESIDUAL_CHECK or not np.all(np.isfinite(x)):
                    raise SolverError("Poisson solve missed the residual contract", residual=res)
            else:
                x = solve_spd(self.operator, b, method=self.method, rtol=self.rtol)
            u[dm.free_index] = x
        return StateField(dm, 1, u)


def solve_poisson_fom(problem: PoissonProblem, *, method: str = "auto") -> StateField:
    return PoissonFOM(problem.layout, problem.grid, method=method).solve(problem.source)


# --------------------------------------------------------------------- Burgers

@dataclass(frozen=True, eq=False)
class BurgersProblem:
    layout: GlobalLayout
    grid: ElementGrid
    ic: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    dt: float
    t_final: float
    nu: float = 1e-3
    save_every: int = 1

    def __post_init__(self):
        if not self.layout.periodic:
            raise LayoutError("Burgers problems require a periodic layout")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 < self.dt <= self.t_final:
            raise ValueError("need 0 < dt <= t_final")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def save_steps(self) -> list[int]:
        steps = list(range(0, self.n_steps + 1, self.save_every))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def append(self, t: float, state) -> None:
        self.times.append(t)
        self.states.append(state)


def initial_state(problem: BurgersProblem, dofmap: DofMap | None = None) -> StateField:
    dm = dofmap or build_dof_map(problem.layout, problem.grid)
    xy = dm.global_coords
    u, v = problem.ic(xy[:, 0], xy[:, 1])
    return StateField(dm, 2, np.concatenate([np.broadcast_to(u, xy[:, 0].shape),
                                             np.broadcast_to(v, xy[:, 0].shape)]).astype(float))


def burgers_rhs_arrays(u: np.ndarray, v: np.ndarray, h: float, nu: float):
    """Semi-discrete right-hand side on periodic 2-D arrays indexed ``[y, x]``."""

    def ddx(f):
        return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * h)

    def ddy(f):
        return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * h)

    def lap(f):
        return (np.roll(f, -1, axis=0) + np.roll(f, 1, axis=0) + np.roll(f, -1, axis=1)
                + np.roll(f, 1, axis=1) - 4.0 * f) / (h * h)

    uv = u * v
    du = -ddx(0.5 * u * u) - ddy(uv) + nu * lap(u)
    dv = -ddx(uv) - ddy(0.5 * v * v) + nu * lap(v)
    return du, dv


def burgers_rhs_values(values: np.ndarray, dofmap: DofMap, nu: float) -> np.ndarray:
    shape = dofmap.global_shape
    n = dofmap.n_global
    du, dv = burgers_rhs_arrays(values[:n].reshape(shape), values[n:].reshape(shape),
                                dofmap.grid.h, nu)
    return np.concatenate([du.ravel(), dv.ravel()])


def burgers_rhs(state: StateField, problem: BurgersProblem) -> StateField:
    if not state.layout.periodic:
        raise LayoutError("burgers_rhs needs a periodic layout")
    return StateField(state.dofmap, 2, burgers_rhs_values(state.values, state.dofmap, problem.nu))


def stability_limit(max_speed: float, h: float, nu: float) -> float:
    limit = h * h / (4.0 * nu)
    if max_speed > 0:
        limit = min(limit, 0.5 * h / max_speed)
    return limit


def check_stability(values: np.ndarray, h: float, nu: float, dt: float, step: int) -> None:
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"non-finite velocity at step {step}", step=step)
    speed = float(np.max(np.abs(values))) if values.size else 0.0
    limit = stability_limit(speed, h, nu)
    if dt > limit:
        raise StabilityError(
            f"dt={dt:.4g} exceeds stability limit {limit:.4g} (max|velocity|={speed:.4g}) at step {step}",
            step=step)


def rk2_step(values: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    half = values + 0.5 * dt * rhs(values)
    return values + dt * rhs(half)


def solve_burgers_fom(problem: BurgersProblem, dofmap: DofMap | None = None) -> Trajectory:
    dm = dofmap or build_dof_map(problem.layout, problem.grid)
    h, nu, dt = problem.grid.h, problem.nu, problem.dt
    values = initial_state(problem, dm).values.copy()
    saves = set(problem.save_steps())
    traj = Trajectory()
    traj.append(0.0, StateField(dm, 2, values.copy()))

    def rhs(x):
        return burgers_rhs_values(x, dm, nu)

    for step in range(1, problem.n_steps + 1):
        check_stability(values, h, nu, dt, step)
        values = rk2_step(values, rhs, dt)
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"non-finite velocity after step {step}", step=step)
        if step in saves:
            traj.append(step * dt, StateField(dm, 2, values.copy()))
    return traj
