import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddfem.assembly import DG, STRONG, ComponentLibrary, CouplingConfig
from ddfem.basis import compute_pod
from ddfem.errors import ArchiveError, MetricError
from ddfem.evaluation import (CSV_COLUMNS, CaseSpec, RunReport, csv_text, emit_csv,
                              emit_timings_csv, load_field, read_csv, relative_l2_error,
                              run_basis_sweep, run_case, run_extrapolation_study, save_field)
from ddfem.fom import StateField
from ddfem.grid import PERIODIC, ElementGrid, build_dof_map, build_layout
from ddfem.sampler import SourceSample

SRC = CaseSpec("poisson", source=lambda layout: SourceSample((0.2, 0.4), 0.3))


def report(name="r", errors=(0.1,), **kw):
    base = dict(name=name, problem="poisson", formulation=DG, rows=2, cols=2, n_cells=8,
                epsilon=0.999, r_total=10, dof_fom=225, dof_reduced=40, errors=list(errors),
                timestamp=1.0)
    base.update(kw)
    return RunReport(**base)


def test_relative_error_examples():
    assert relative_l2_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert relative_l2_error([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert relative_l2_error([3.0, 4.5], [3.0, 4.0]) == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.integers(0, 2**31))
def test_relative_error_summation_oracle(vals, seed):
    b = np.array(vals) + 1.0 + np.abs(vals).max()  # non-zero reference
    a = b + np.random.default_rng(seed).standard_normal(b.size)
    num = sum((x - y) ** 2 for x, y in zip(a, b)) ** 0.5
    den = sum(y * y for y in b) ** 0.5
    assert relative_l2_error(a, b) == pytest.approx(num / den, rel=1e-12)


def test_relative_error_zero_reference():
    with pytest.raises(MetricError):
        relative_l2_error([1.0], [0.0])
    with pytest.raises(MetricError):
        relative_l2_error([1.0], [np.inf])
    with pytest.raises(ValueError):
        relative_l2_error([1.0, 2.0], [1.0])


def test_report_invariants():
    r = report(errors=[0.3, 0.1, 0.2])
    assert r.dof_ratio == 225 / 40
    assert r.final_error == 0.2 and r.max_error == 0.3
    with pytest.raises(MetricError):
        report(errors=[np.nan])


def test_csv_header_only(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv([], path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_csv_round_trip(tmp_path):
    x = 0.1 + 0.2
    reps = [report("a", errors=[x]), report("b", errors=[1 / 3], epsilon=None, eta=10.0)]
    path = tmp_path / "out.csv"
    emit_csv(reps, path)
    rows = read_csv(path)
    assert [r["name"] for r in rows] == ["a", "b"]
    assert float(rows[0]["rel_l2_final"]) == x
    assert float(rows[1]["rel_l2_final"]) == 1 / 3
    assert rows[1]["epsilon"] == "untruncated"
    assert float(rows[0]["dof_ratio"]) == 225 / 40
    assert list(rows[0]) == CSV_COLUMNS
    emit_timings_csv(reps, tmp_path / "t.csv")
    assert next(csv.reader(io.StringIO((tmp_path / "t.csv").read_text())))[0] == "name"


def test_csv_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ArchiveError):
        emit_csv([report()], blocker / "sub" / "out.csv")


def test_field_dump_round_trip(tmp_path, rng):
    dm = build_dof_map(build_layout(2, 3, bc_kind=PERIODIC), ElementGrid(4))
    f = StateField(dm, 2, rng.standard_normal(2 * dm.n_global))
    path = tmp_path / "f.ddffld"
    save_field(f, path, "t=0.1")
    got = load_field(path)
    assert got["label"] == "t=0.1" and (got["rows"], got["cols"]) == (2, 3)
    np.testing.assert_array_equal(got["values"], f.values)
    raw = bytearray(path.read_bytes())
    raw[-6] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ArchiveError):
        load_field(path)


def test_dof_ratio_constant_dg(poisson_snaps8):
    lib = ComponentLibrary.single(compute_pod(poisson_snaps8, fixed_r=10))
    reps = run_extrapolation_study(lib, [(8, 8), (4, 4), (6, 6)], CouplingConfig(DG), SRC)
    assert [(r.rows, r.cols) for r in reps] == [(4, 4), (6, 6), (8, 8)]
    ratios = [r.dof_ratio for r in reps]
    assert max(ratios) / min(ratios) <= 1.05
    for r in reps:
        assert r.dof_ratio == r.dof_fom / r.dof_reduced


def test_run_case_strong(split_full):
    res = run_case(build_layout(2, 2), ComponentLibrary.single(split_full), CouplingConfig(STRONG), SRC)
    assert res.report.final_error <= 1e-8
    assert res.report.dof_fom == 15 * 15
    assert len(res.fom_fields) == len(res.rom_fields) == 1


def test_sweep_sorted_and_monotone(poisson_snaps8):
    reps = run_basis_sweep(poisson_snaps8, [1.0, 0.99, 0.9999], build_layout(2, 2),
                           CouplingConfig(STRONG), SRC)
    assert [r.epsilon for r in reps] == [0.99, 0.9999, None]
    errs = [r.final_error for r in reps]
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] <= 1e-8


def test_csv_text_deterministic():
    reps = [report("a"), report("b", errors=[2.0 / 7.0])]
    assert csv_text(reps) == csv_text(reps)
