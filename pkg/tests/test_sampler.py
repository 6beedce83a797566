import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddfem.errors import CorruptArchiveError, NumericalError, UnsupportedVersionError
from ddfem.fom import PoissonFOM
from ddfem.grid import DIRICHLET, ElementGrid, build_layout
from ddfem.sampler import (SnapshotSet, SourceSample, SpiralParams, burgers_patch_snapshots_from_ics,
                           constant_ic, eval_sinusoidal_source, eval_spiral_source,
                           generate_burgers_patch_snapshots, generate_poisson_patch_snapshots,
                           load_snapshots, poisson_patch_snapshots_from_sources, sample_burgers_ic,
                           sample_poisson_source, save_snapshots, zero_source)


def test_source_sampling_deterministic():
    a = sample_poisson_source(np.random.default_rng(5))
    b = sample_poisson_source(np.random.default_rng(5))
    assert a == b


def test_source_ranges_and_theta_mean():
    rng = np.random.default_rng(0)
    samples = [sample_poisson_source(rng) for _ in range(10_000)]
    k = np.array([s.k for s in samples])
    th = np.array([s.theta for s in samples])
    assert np.all(np.abs(k) <= 0.5)
    assert np.all((th >= 0) & (th <= 1))
    assert 0.47 <= th.mean() <= 0.53


def test_source_range_validated():
    with pytest.raises(ValueError):
        SourceSample((0.6, 0.0), 0.5)


def test_sinusoidal_values():
    x = np.linspace(0, 3, 7)
    np.testing.assert_allclose(eval_sinusoidal_source(SourceSample((0, 0), 0.25), x, x), 1.0)
    assert abs(eval_sinusoidal_source(SourceSample((0.5, 0), 0.0), 1.0, 0.3)) <= 1e-15
    assert abs(eval_sinusoidal_source(SourceSample((0.25, 0.25), 0.5), 1.0, 1.0)) <= 1e-15


def test_spiral_values():
    assert abs(eval_spiral_source(SpiralParams(1.0, (0.0, 0.0), 0.0), 1.0, 0.0)) <= 1e-15
    p = SpiralParams(0.7, (0.5, 0.5), 1.3)
    assert eval_spiral_source(p, 0.5, 0.5) == 0.0
    q = SpiralParams(0.7, (0.2, -0.1), 0.0)
    r = 0.37
    a = eval_spiral_source(q, 0.2 + r, -0.1)
    b = eval_spiral_source(q, 0.2 + r * np.cos(1.1), -0.1 + r * np.sin(1.1))
    assert abs(a - b) <= 1e-15


def test_burgers_ic_periodic_and_bounded():
    for seed in range(20):
        ic = sample_burgers_ic(np.random.default_rng(seed), 4)
        y = np.linspace(0, 2, 9)
        u0, v0 = ic(np.zeros_like(y), y)
        u1, v1 = ic(np.full_like(y, 2.0), y)
        np.testing.assert_allclose(u0, u1, atol=1e-12)
        np.testing.assert_allclose(v0, v1, atol=1e-12)
        xx, yy = np.meshgrid(np.linspace(0, 2, 65), np.linspace(0, 2, 65))
        u, v = ic(xx, yy)
        assert max(np.abs(u).max(), np.abs(v).max()) <= 1.0
        assert np.all(np.abs(ic.offsets) <= 0.25)


def test_burgers_ic_deterministic():
    a = sample_burgers_ic(np.random.default_rng(9))
    b = sample_burgers_ic(np.random.default_rng(9))
    assert a.coeffs.tobytes() == b.coeffs.tobytes()
    assert a.offsets.tobytes() == b.offsets.tobytes()


def test_burgers_ic_decay():
    # amplitudes before rescaling follow 1 / (1 + m^2 + n^2) at patch scale
    ic = sample_burgers_ic(np.random.default_rng(1), k_max=4)
    assert ic.coeffs.shape == (2, 2, 5, 9)
    assert np.all(ic.coeffs[:, :, 0, :5] == 0)  # (0, n <= 0) unused


def test_poisson_snapshot_count(grid8):
    assert generate_poisson_patch_snapshots(1, grid8, seed=1).n_snapshots == 4


def test_poisson_zero_control(grid8):
    data = poisson_patch_snapshots_from_sources([SourceSample((0.2, 0.1), 0.3), zero_source], grid8)
    assert data.shape == (81, 8)
    assert not np.any(data[:, 4:])
    assert np.any(data[:, :4])


def test_poisson_columns_match_resolve(grid8):
    snaps = generate_poisson_patch_snapshots(3, grid8, seed=11)
    children = np.random.SeedSequence(11).spawn(3)
    src = sample_poisson_source(np.random.default_rng(children[1]))
    u = PoissonFOM(build_layout(2, 2, bc_kind=DIRICHLET), grid8).solve(src)
    for j in range(4):
        np.testing.assert_array_equal(snaps.data[:, 4 + j], u.dofmap.scatter(u.values)[j])


def test_burgers_snapshot_count_and_constant_run():
    g = ElementGrid(4)
    data = burgers_patch_snapshots_from_ics([constant_ic(0.3, -0.1)], g, 0.05, 0.1, 2)
    assert data.shape == (2 * 25, 8)  # saves at {0, T}
    np.testing.assert_allclose(data[:25], 0.3, atol=1e-14)
    np.testing.assert_allclose(data[25:], -0.1, atol=1e-14)


def test_burgers_snapshots_bounded_and_thread_independent():
    g = ElementGrid(8)
    a = generate_burgers_patch_snapshots(6, g, 0.02, 0.2, 5, seed=4, threads=1)
    b = generate_burgers_patch_snapshots(6, g, 0.02, 0.2, 5, seed=4, threads=3)
    assert a.data.tobytes() == b.data.tobytes()
    assert np.all(np.isfinite(a.data)) and np.abs(a.data).max() <= 1.0
    assert a.n_snapshots == 4 * 6 * 3


def test_snapshot_rejects_nonfinite():
    with pytest.raises(NumericalError):
        SnapshotSet("square", 2, 1, np.full((9, 1), np.nan), 0)


def test_archive_roundtrip(tmp_path, grid8):
    snaps = generate_poisson_patch_snapshots(2, grid8, seed=8)
    p = tmp_path / "s.ddfsnp"
    crc1 = save_snapshots(snaps, p)
    back = load_snapshots(p)
    assert back.data.tobytes() == snaps.data.tobytes()
    assert (back.element_type, back.n_cells, back.seed, back.family) == ("square", 8, 8, "poisson")
    meta = json.loads((tmp_path / "s.ddfsnp.json").read_text())
    assert meta["seed"] == 8
    crc2 = save_snapshots(generate_poisson_patch_snapshots(2, grid8, seed=8), p)
    assert crc1 == crc2


def test_archive_layout(tmp_path):
    # header fields at their documented offsets
    data = np.arange(18, dtype=float).reshape(9, 2)
    p = tmp_path / "s.ddfsnp"
    save_snapshots(SnapshotSet("sq", 2, 1, data, 77), p)
    raw = p.read_bytes()
    assert raw[:8] == b"DDFSNP01"
    assert int.from_bytes(raw[8:12], "little") == 2 and raw[12:14] == b"sq"
    assert int.from_bytes(raw[14:18], "little") == 2
    assert int.from_bytes(raw[18:22], "little") == 1
    assert int.from_bytes(raw[22:30], "little") == 2
    assert int.from_bytes(raw[30:38], "little") == 77
    body = np.frombuffer(raw[38:-4], dtype="<f8")
    np.testing.assert_array_equal(body, data.ravel(order="F"))


def test_archive_corruption(tmp_path, grid8):
    p = tmp_path / "s.ddfsnp"
    save_snapshots(generate_poisson_patch_snapshots(1, grid8, seed=1), p)
    raw = p.read_bytes()
    (tmp_path / "t.ddfsnp").write_bytes(raw[:-10])
    with pytest.raises(CorruptArchiveError):
        load_snapshots(tmp_path / "t.ddfsnp")
    (tmp_path / "v.ddfsnp").write_bytes(b"DDFSNP02" + raw[8:])
    with pytest.raises(UnsupportedVersionError):
        load_snapshots(tmp_path / "v.ddfsnp")


@given(st.integers(0, 2**32))
@settings(max_examples=25, deadline=None)
def test_seeded_sources_deterministic(seed):
    a = [sample_poisson_source(r) for r in map(np.random.default_rng, np.random.SeedSequence(seed).spawn(3))]
    b = [sample_poisson_source(r) for r in map(np.random.default_rng, np.random.SeedSequence(seed).spawn(3))]
    assert a == b
