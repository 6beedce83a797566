import numpy as np
import pytest

from ddfem.assembly import (ComponentLibrary, assemble_constrained, assemble_dg, assemble_strong,
                            reduced_load)
from ddfem.basis import compute_pod, split_port_basis
from ddfem.errors import LayoutError, NumericalError
from ddfem.fom import BurgersProblem, solve_burgers_fom
from ddfem.grid import PERIODIC, ElementGrid, build_layout
from ddfem.reduced import (BurgersReducedStepper, ReducedState, constraint_residual,
                           integrate_burgers_reduced, reconstruct_global, recover_interior,
                           solve_linear_reduced, solve_poisson_reduced)
from ddfem.sampler import SnapshotSet, constant_ic, sample_burgers_ic

from conftest import rel

GRID = ElementGrid(8)


@pytest.fixture(scope="module")
def burgers_full():
    # random columns span the whole (u, v) element space, so no truncation at all
    data = np.random.default_rng(5).standard_normal((2 * GRID.n_nodes, 2 * 2 * GRID.n_nodes))
    return compute_pod(SnapshotSet("square", 8, 2, data, 5, family="burgers"), epsilon=1.0)


@pytest.fixture(scope="module")
def burgers_trunc():
    # noise orthogonal to the two constant fields plus dominant constant columns,
    # so the truncated span contains every constant state exactly
    n = GRID.n_nodes
    const = np.zeros((2 * n, 2))
    const[:n, 0] = const[n:, 1] = 1.0 / np.sqrt(n)
    noise = np.random.default_rng(6).standard_normal((2 * n, 400))
    noise -= const @ (const.T @ noise)
    data = np.hstack([100.0 * const, noise])
    return compute_pod(SnapshotSet("square", 8, 2, data, 6, family="burgers"), fixed_r=120)


def periodic_system(basis, M=2):
    return assemble_constrained(build_layout(M, M, bc_kind=PERIODIC), ComponentLibrary.single(basis))


def test_zero_rhs(mono_full):
    sysm = assemble_dg(build_layout(2, 2), ComponentLibrary.single(mono_full))
    st = solve_linear_reduced(sysm, np.zeros(sysm.n_red))
    assert not np.any(st.coords)
    rec = reconstruct_global(sysm, st)
    assert not np.any(rec.field.values)


def test_identity_and_dense_oracle(mono_full, rng):
    sysm = assemble_dg(build_layout(2, 2), ComponentLibrary.single(mono_full))
    b = rng.standard_normal(sysm.n_red)
    ident = type(sysm)(sysm.formulation, sysm.dofmap, sysm.library, sysm.n_red,
                       operator=np.eye(sysm.n_red), offsets=sysm.offsets)
    np.testing.assert_allclose(solve_linear_reduced(ident, b).coords, b, rtol=1e-14)
    x = solve_linear_reduced(sysm, b).coords
    ref = np.linalg.solve(sysm.operator, b)
    assert rel(x, ref) <= 1e-10
    assert np.linalg.norm(sysm.operator @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_no_operator_rejected(mono_full):
    sysm = assemble_dg(build_layout(1, 1), ComponentLibrary.single(mono_full))
    bare = type(sysm)(sysm.formulation, sysm.dofmap, sysm.library, sysm.n_red)
    with pytest.raises(NumericalError):
        solve_linear_reduced(bare, np.ones(sysm.n_red))


def test_recover_interior_residual(poisson_snaps8):
    sb = split_port_basis(poisson_snaps8, fixed_r=6)
    sysm = assemble_strong(build_layout(3, 3), ComponentLibrary.single(sb))
    src = lambda x, y: np.sin(x) * np.cos(0.7 * y) + 0.2
    load = reduced_load(sysm, src)
    st = solve_poisson_reduced(sysm, load=load)
    cond = sysm.condensation
    for e in range(sysm.layout.n_elements):
        blk = cond.blocks[sysm.layout.type_of(e)]
        k_ii = blk["chol"][0]
        lower = blk["chol"][1]
        L = np.tril(k_ii) if lower else np.triu(k_ii).T
        ub = cond.element_lift[e] @ st.coords[cond.element_cols[e]]
        res = L @ (L.T @ st.interior[e]) + blk["k_ib"] @ ub - load.interior[e]
        assert np.linalg.norm(res) <= 1e-10 * max(1.0, np.linalg.norm(load.interior[e]))
    with pytest.raises(NumericalError):
        recover_interior(assemble_dg(build_layout(1, 1), ComponentLibrary.single(
            compute_pod(poisson_snaps8, fixed_r=4))), st, load)


def test_burgers_untruncated_matches_fom(burgers_full):
    lay = build_layout(2, 2, bc_kind=PERIODIC)
    ic = sample_burgers_ic(np.random.default_rng(11), 4, extent=(2, 2))
    prob = BurgersProblem(lay, GRID, ic, 0.01, 0.1, 1e-3, save_every=5)
    ref = solve_burgers_fom(prob)
    sysm = periodic_system(burgers_full)
    traj = integrate_burgers_reduced(sysm, prob)
    assert traj.times == pytest.approx(ref.times)
    for got, want in zip(traj.fields, ref.states):
        assert rel(got.values, want.values) <= 1e-8
    assert traj.max_constraint_residual <= 1e-10


def test_burgers_constant_state(burgers_trunc, burgers_full):
    for basis in (burgers_full, burgers_trunc):
        sysm = periodic_system(basis)
        prob = BurgersProblem(sysm.layout, GRID, constant_ic(0.4, -0.25), 0.01, 0.05)
        stepper = BurgersReducedStepper(sysm, prob.nu)
        c0 = stepper.project_field(np.concatenate([np.full(sysm.dofmap.n_global, 0.4),
                                                   np.full(sysm.dofmap.n_global, -0.25)]))
        traj = integrate_burgers_reduced(sysm, prob)
        np.testing.assert_allclose(traj.states[-1].coords, c0, atol=1e-12)


def test_burgers_truncated_constraints(burgers_trunc):
    sysm = periodic_system(burgers_trunc, 3)
    ic = sample_burgers_ic(np.random.default_rng(4), 4, extent=(3, 3))
    traj = integrate_burgers_reduced(sysm, BurgersProblem(sysm.layout, GRID, ic, 0.01, 0.05))
    assert traj.max_constraint_residual <= 1e-10
    for st in traj.states:
        assert constraint_residual(sysm, st.coords) <= 1e-10
        rec = reconstruct_global(sysm, st)
        assert rec.max_interface_jump <= 1e-10 * max(1.0, np.abs(rec.field.values).max())


def test_burgers_mean_conserved_untruncated(burgers_full):
    sysm = periodic_system(burgers_full)
    ic = sample_burgers_ic(np.random.default_rng(9), 4, extent=(2, 2))
    traj = integrate_burgers_reduced(sysm, BurgersProblem(sysm.layout, GRID, ic, 0.01, 0.1))
    n = sysm.dofmap.n_global
    m0 = traj.fields[0].values.reshape(2, n).mean(axis=1)
    m1 = traj.fields[-1].values.reshape(2, n).mean(axis=1)
    np.testing.assert_allclose(m1, m0, atol=1e-8)


def test_burgers_zero_coords(burgers_full):
    sysm = periodic_system(burgers_full)
    st = ReducedState(np.zeros(sysm.n_element_coords))
    assert not np.any(reconstruct_global(sysm, st).field.values)
    assert constraint_residual(sysm, st.coords) == 0.0


def test_burgers_stepper_rejects(mono_full, burgers_full):
    with pytest.raises(NumericalError):
        BurgersReducedStepper(assemble_dg(build_layout(2, 2), ComponentLibrary.single(mono_full)), 1e-3)
    sysm = assemble_constrained(build_layout(2, 2), ComponentLibrary.single(burgers_full))
    with pytest.raises(LayoutError):
        BurgersReducedStepper(sysm, 1e-3)


def test_non_finite_state_rejected():
    from ddfem.errors import DivergenceError
    with pytest.raises(DivergenceError):
        ReducedState(np.array([0.0, np.nan]))
