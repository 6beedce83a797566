"""Online solves of assembled reduced systems and reconstruction of global fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import CONSTRAINED, STRONG, ReducedLoad, ReducedSystem, reduced_load
from .errors import DivergenceError, LayoutError, NumericalError
from .fom import (BurgersProblem, StateField, burgers_rhs_values, check_stability, initial_state,
                  rk2_step)
from .linalg import solve_spd

DENSE_LIMIT = 4000


@dataclass(frozen=True, eq=False)
class ReducedState:
    coords: np.ndarray  # skeleton coordinates (strong) or stacked element coordinates
    t: float = 0.0
    interior: list | None = None  # strong: per-element interior coordinates

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise DivergenceError("reduced state has non-finite coordinates")


def solve_linear_reduced(system: ReducedSystem, rhs: np.ndarray, *, rtol: float = 1e-12) -> ReducedState:
    """Dense Cholesky up to 4000 unknowns, Jacobi-CG above; residual checked at 1e-10."""
    if system.operator is None:
        raise NumericalError(f"{system.formulation} system carries no linear operator")
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return ReducedState(np.zeros(system.operator.shape[0]))
    method = "cholesky" if system.operator.shape[0] <= DENSE_LIMIT else "cg"
    x = solve_spd(system.operator, rhs, method=method, rtol=rtol, dense_limit=DENSE_LIMIT,
                  maxiter=max(1000, 10 * system.operator.shape[0]))
    return ReducedState(x)


def recover_interior(system: ReducedSystem, port_state: ReducedState, load: ReducedLoad) -> ReducedState:
    """Back-substitute element interior coordinates from solved skeleton values."""
    if system.formulation != STRONG:
        raise NumericalError("interior recovery applies to strong_condensation systems only")
    cond = system.condensation
    layout = system.layout
    interior = []
    for e in range(layout.n_elements):
        blk = cond.blocks[layout.type_of(e)]
        rhs = load.interior[e].copy()
        cols = cond.element_cols[e]
        if cols.size:
            rhs -= blk["k_ib"] @ (cond.element_lift[e] @ port_state.coords[cols])
        interior.append(sla.cho_solve(blk["chol"], rhs))
    return ReducedState(port_state.coords, port_state.t, interior)


def solve_poisson_reduced(system: ReducedSystem, source=None, *, load: ReducedLoad | None = None,
                          rtol: float = 1e-12) -> ReducedState:
    """Load, solve and (for constrained / strong systems) lift back to element coordinates."""
    if load is None:
        load = reduced_load(system, source)
    state = solve_linear_reduced(system, load.vector, rtol=rtol)
    if system.formulation == STRONG:
        return recover_interior(system, state, load)
    if system.formulation == CONSTRAINED:
        return ReducedState(system.null.lift(state.coords), state.t)
    return state


# -------------------------------------------------------------- reconstruction

@dataclass(frozen=True, eq=False)
class Reconstruction:
    field: StateField  # single-valued global field (shared nodes averaged)
    element_values: np.ndarray  # (n_elements, n_components * n_local), two-sided at interfaces
    max_interface_jump: float


def element_fields(system: ReducedSystem, state: ReducedState) -> np.ndarray:
    layout = system.layout
    if system.formulation == STRONG:
        cond = system.condensation
        out = np.zeros((layout.n_elements, system.grid.n_nodes))
        for e in range(layout.n_elements):
            blk = cond.blocks[layout.type_of(e)]
            out[e, cond.interior_nodes] = blk["phi"] @ state.interior[e]
            cols = cond.element_cols[e]
            if cols.size:
                out[e, cond.boundary_nodes] = cond.element_lift[e] @ state.coords[cols]
        return out
    c = state.coords
    return np.vstack([system.phi(e) @ c[system.element_slice(e)] for e in range(layout.n_elements)])


def _component_l2g(system: ReducedSystem) -> np.ndarray:
    dm = system.dofmap
    return np.hstack([k * dm.n_global + dm.local_to_global for k in range(system.n_components)])


def _gather(system: ReducedSystem, local: np.ndarray) -> np.ndarray:
    l2g = _component_l2g(system)
    size = system.n_components * system.dofmap.n_global
    out = np.zeros(size)
    np.add.at(out, l2g, local)
    return out / np.bincount(l2g.ravel(), minlength=size)


def reconstruct_global(system: ReducedSystem, state: ReducedState) -> Reconstruction:
    local = element_fields(system, state)
    values = _gather(system, local)
    jump = _max_pair_jump(system, local)
    return Reconstruction(StateField(system.dofmap, system.n_components, values), local, jump)


def _max_pair_jump(system: ReducedSystem, local: np.ndarray) -> float:
    grid, comps = system.grid, system.n_components
    worst = 0.0
    for edge in system.layout.edges:
        sa, sb = edge.sides
        for k in range(comps):
            a = local[edge.a, k * grid.n_nodes + grid.side_nodes(sa)]
            b = local[edge.b, k * grid.n_nodes + grid.side_nodes(sb)]
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


# ---------------------------------------------------------------- Burgers

def constraint_residual(system: ReducedSystem, coords: np.ndarray) -> float:
    """``||C c|| / ||c||`` (0 for a zero state)."""
    norm = np.linalg.norm(coords)
    if system.constraint is None or norm == 0:
        return 0.0
    return float(np.linalg.norm(system.constraint @ coords) / norm)


class BurgersReducedStepper:
    """Explicit midpoint stepping of constrained element coordinates.

    Each stage reconstructs the conforming global field, evaluates the
    full-order right-hand side, projects it element by element and then
    onto the null space of the continuity constraints.
    """

    def __init__(self, system: ReducedSystem, nu: float):
        if system.formulation != CONSTRAINED:
            raise NumericalError("reduced Burgers stepping needs a constrained_residual system")
        if not system.layout.periodic:
            raise LayoutError("reduced Burgers stepping needs a periodic layout")
        if system.n_components != 2:
            raise NumericalError("reduced Burgers stepping needs a two-component (u, v) library")
        self.system, self.nu = system, nu
        self.l2g = _component_l2g(system)
        self.size = 2 * system.dofmap.n_global
        self.counts = np.bincount(self.l2g.ravel(), minlength=self.size)
        layout = system.layout
        self.groups = {}
        for e in range(layout.n_elements):
            self.groups.setdefault(layout.type_of(e), []).append(e)
        self.phis = {t: system.phi(es[0]) for t, es in self.groups.items()}
        self.null = system.null

    def _element_matrix(self, coords: np.ndarray) -> dict:
        sys_ = self.system
        return {t: np.vstack([coords[sys_.element_slice(e)] for e in es]) for t, es in self.groups.items()}

    def reconstruct(self, coords: np.ndarray) -> np.ndarray:
        local = np.empty((self.system.layout.n_elements, self.l2g.shape[1]))
        for t, cmat in self._element_matrix(coords).items():
            local[self.groups[t]] = cmat @ self.phis[t].T
        out = np.zeros(self.size)
        np.add.at(out, self.l2g, local)
        return out / self.counts

    def project_field(self, values: np.ndarray) -> np.ndarray:
        """Element-wise projection of a global field, then onto ``null(C)``."""
        sys_ = self.system
        local = values[self.l2g]
        coords = np.empty(sys_.n_element_coords)
        for t, es in self.groups.items():
            proj = local[es] @ self.phis[t]
            for i, e in enumerate(es):
                coords[sys_.element_slice(e)] = proj[i]
        return self.null.project(coords)

    def rhs(self, coords: np.ndarray) -> np.ndarray:
        values = self.reconstruct(coords)
        return self.project_field(burgers_rhs_values(values, self.system.dofmap, self.nu))

    def step(self, state: ReducedState, dt: float, step_index: int = 0) -> ReducedState:
        values = self.reconstruct(state.coords)
        check_stability(values, self.system.grid.h, self.nu, dt, step_index)
        return ReducedState(rk2_step(state.coords, self.rhs, dt), state.t + dt)


def step_burgers_reduced(system: ReducedSystem, state: ReducedState, dt: float, nu: float = 1e-3) -> ReducedState:
    return BurgersReducedStepper(system, nu).step(state, dt)


@dataclass
class ReducedTrajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    constraint_residuals: list = field(default_factory=list)
    max_constraint_residual: float = 0.0


def integrate_burgers_reduced(system: ReducedSystem, problem: BurgersProblem, *,
                              dt_multiplier: int = 1) -> ReducedTrajectory:
    """Project the initial condition and march to ``problem.t_final``.

    ``dt_multiplier`` enlarges the step (experiment only); saves happen on the
    full-order save times that the enlarged step lands on.
    """
    stepper = BurgersReducedStepper(system, problem.nu)
    u0 = initial_state(problem, system.dofmap)
    state = ReducedState(stepper.project_field(u0.values), 0.0)
    dt = problem.dt * dt_multiplier
    n_steps = problem.n_steps // dt_multiplier
    fom_saves = set(problem.save_steps())
    traj = ReducedTrajectory()

    def record(step, st):
        res = constraint_residual(system, st.coords)
        traj.times.append(step * dt)
        traj.states.append(st)
        traj.fields.append(StateField(system.dofmap, 2, stepper.reconstruct(st.coords)))
        traj.constraint_residuals.append(res)
        traj.max_constraint_residual = max(traj.max_constraint_residual, res)

    record(0, state)
    for step in range(1, n_steps + 1):
        state = stepper.step(state, dt, step)
        res = constraint_residual(system, state.coords)
        traj.max_constraint_residual = max(traj.max_constraint_residual, res)
        if step * dt_multiplier in fom_saves or step == n_steps:
            record(step, state)
    return traj
