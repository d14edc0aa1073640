"""Unit tests for the grid white-noise field."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ym2 import noise as N
from ym2.groups import algebra_coords, make_group
from ym2.transport import PerturbationOneForm


@pytest.fixture(scope="module")
def su2():
    return make_group("su2")


@pytest.fixture(scope="module")
def u1():
    return make_group("u1")


def window(nx=8, ny=8):
    return N.GridWindow(-0.5, 0.5, -0.5, 0.5, nx, ny)


def test_window_requires_origin_inside():
    with pytest.raises(N.GeometryError):
        N.GridWindow(0.0, 1.0, -1.0, 1.0, 4, 4)
    with pytest.raises(N.GeometryError):
        N.GridWindow(-1.0, 1.0, 0.1, 1.0, 4, 4)


def test_window_requires_axis_gridlines():
    # x = 0 falls mid-cell for this spacing
    with pytest.raises(N.GeometryError):
        N.GridWindow(-0.3, 0.5, -0.5, 0.5, 4, 4)


def test_alignment_queries():
    w = window()
    assert w.col_of(0.0) == 4 and w.row_of(0.0) == 4
    assert w.col_of(-0.5) == 0 and w.col_of(0.5) == 8
    with pytest.raises(N.GeometryError):
        w.col_of(0.3)
    with pytest.raises(N.GeometryError):
        w.col_of(0.625)


def test_sampling_is_deterministic(su2):
    w = window()
    a = N.sample_field(su2, w, seed=42)
    b = N.sample_field(su2, w, seed=42)
    assert np.array_equal(a.cells, b.cells)
    c = N.sample_field(su2, w, seed=43)
    assert not np.array_equal(a.cells, c.cells)


def test_memory_budget(su2):
    w = N.GridWindow(-1.0, 1.0, -1.0, 1.0, 4096, 4096)
    with pytest.raises(N.GeometryError):
        N.sample_field(su2, w, seed=0, max_cells=1 << 20)


def test_region_variance_and_covariance(su2):
    w = window()
    field = N.NoiseField.sample(su2, w, seed=7, batch=(100_000,))
    b1 = N.GridRegion.from_rect(w, -0.25, 0.25, -0.25, 0.25)  # area 0.25
    v = field.region_coords(b1)[:, 0]
    assert abs(v.var(ddof=1) - 0.25) < 0.005
    b2 = N.GridRegion.from_rect(w, 0.25, 0.5, 0.25, 0.5)
    u = field.region_coords(b2)[:, 0]
    assert abs(np.mean(u * v)) < 0.005


def test_region_additivity(su2):
    w = window()
    field = N.sample_field(su2, w, seed=9)
    left = N.GridRegion.from_rect(w, -0.5, 0.0, -0.25, 0.25)
    right = N.GridRegion.from_rect(w, 0.0, 0.5, -0.25, 0.25)
    both = left.union(right)
    assert np.max(np.abs(N.f_region(field, both)
                         - (N.f_region(field, left)
                            + N.f_region(field, right)))) < 1e-13
    assert np.allclose(
        N.f_region(field, N.GridRegion.empty(w)), 0.0)


@given(st.integers(0, 6), st.integers(1, 3))
@settings(max_examples=25, deadline=None)
def test_region_additivity_property(col_split, rows):
    su2 = make_group("su2")
    w = window()
    field = N.sample_field(su2, w, seed=3)
    c0, c1 = 1, 8
    split = min(max(c0 + col_split, c0 + 1), c1 - 1)
    y0, y1 = -0.25, -0.25 + rows * w.h_y

    def rect(ca, cb):
        return N.GridRegion(w, {c: ((w.row_of(y0), w.row_of(y1)),)
                                for c in range(ca, cb)})

    whole = rect(c0, c1)
    parts = rect(c0, split).union(rect(split, c1))
    assert whole.area == parts.area
    gap = N.f_region(field, whole) - N.f_region(field, parts)
    assert np.max(np.abs(gap)) < 1e-13


def test_region_union_rejects_overlap():
    w = window()
    a = N.GridRegion.from_rect(w, -0.25, 0.25, 0.0, 0.25)
    b = N.GridRegion.from_rect(w, 0.0, 0.5, 0.0, 0.25)
    with pytest.raises(N.GeometryError):
        a.union(b)


def test_fhat_signs_and_splits(su2):
    w = window()
    field = N.sample_field(su2, w, seed=13)
    upper = N.GridRegion.from_rect(w, -0.25, 0.25, 0.0, 0.375)
    lower = N.GridRegion.from_rect(w, -0.25, 0.25, -0.375, 0.0)
    assert np.allclose(N.f_hat_region(field, upper),
                       N.f_region(field, upper))
    assert np.allclose(N.f_hat_region(field, lower),
                       -N.f_region(field, lower))
    both = upper.union(lower)
    assert np.allclose(N.f_hat_region(field, both),
                       N.f_region(field, upper) - N.f_region(field, lower))


def test_fhat_isometry_in_law(su2):
    w = window()
    field = N.NoiseField.sample(su2, w, seed=17, batch=(100_000,))
    region = N.GridRegion.from_rect(w, -0.25, 0.375, -0.375, 0.25)
    plain = field.region_coords(region)[:, 0]
    flipped = field.region_coords(region, signed=True)[:, 0]
    v1, v2 = plain.var(ddof=1), flipped.var(ddof=1)
    se = v1 * math.sqrt(2.0 / len(plain))
    assert abs(v1 - v2) < 3 * se + 3 * se


def test_refinement_contract(su2):
    w = window()
    field = N.sample_field(su2, w, seed=21)
    region = N.GridRegion.from_rect(w, -0.5, 0.5, -0.5, 0.5)
    before = N.f_region(field, region).copy()
    parts = N.refine_column_strip(field, (2, 3), substeps=1)
    assert len(parts) == 1
    cell_val = field.cells[2, 3]
    assert np.allclose(algebra_coords(su2, parts[0]), cell_val)
    parts = N.refine_column_strip(field, (2, 3), substeps=4)
    total = algebra_coords(su2, sum(parts))
    assert np.max(np.abs(total - cell_val)) < 1e-12
    again = N.refine_column_strip(field, (2, 3), substeps=4)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))
    # refinement never changes region queries
    assert np.array_equal(before, N.f_region(field, region))


def test_refinement_variance(su2):
    w = window()
    field = N.NoiseField.sample(su2, w, seed=23, batch=(2_000,))
    fine = field.fine_cells(4)
    target = w.cell_area / 4
    sample = fine[..., 0].ravel()
    assert abs(sample.var(ddof=1) - target) / target < 0.02


def test_shifted_view_zero_eta_is_identity(su2):
    w = window()
    field = N.sample_field(su2, w, seed=31)
    eta = PerturbationOneForm.zero(su2, w)
    view = N.shifted_field_view(field, eta)
    assert np.array_equal(view.cells, field.cells)
    assert np.array_equal(view.fine_cells(3), field.fine_cells(3))


def test_shifted_view_abelian_exact(u1):
    w = window()
    field = N.sample_field(u1, w, seed=33)
    q = N.GridRegion.from_rect(w, 0.0, 0.25, 0.0, 0.25)
    eta = PerturbationOneForm.insertion_pair(u1, w, 0.0, 0.25, 0.25,
                                             np.array([1.0]))
    view = N.shifted_field_view(field, eta)
    # inside the box, eta_y = -xi: the drift subtraction adds +|Q| overall
    got = view.region_coords(q)[0]
    want = field.region_coords(q)[0] + q.area
    assert abs(got - want) < 1e-12


def test_shifted_view_window_mismatch(su2):
    field = N.sample_field(su2, window(), seed=1)
    other = PerturbationOneForm.zero(su2, window(nx=4, ny=4))
    with pytest.raises(N.GeometryError):
        N.shifted_field_view(field, other)


def test_shifted_view_reweighted_law(su2):
    """Weighted samples of the shifted field recover the plain Gaussian law."""
    w = window()
    n = 60_000
    field = N.NoiseField.sample(su2, w, seed=35, batch=(n,))
    eta = PerturbationOneForm.insertion_pair(su2, w, 0.0, 0.25, 0.25,
                                             np.array([1.0, 0.0, 0.0]))
    view = N.shifted_field_view(field, eta)
    region = N.GridRegion.from_rect(w, 0.0, 0.375, -0.25, 0.25)
    vals = view.region_coords(region)[:, 0]
    pairing = eta.pairing_coords(field.cells)
    weights = np.exp(pairing - 0.5 * eta.norm_sq())
    order = np.argsort(vals)
    cdf_emp = np.cumsum(weights[order]) / weights.sum()
    std = math.sqrt(region.area)
    cdf_ref = 0.5 * (1.0 + np.vectorize(math.erf)(
        vals[order] / (std * math.sqrt(2.0))))
    dstat = np.max(np.abs(cdf_emp - cdf_ref))
    n_eff = weights.sum() ** 2 / np.sum(weights**2)
    # Kolmogorov-Smirnov at the 1% level
    assert dstat * math.sqrt(n_eff) < 1.63


def test_dump_restore_roundtrip(tmp_path, su2):
    w = window()
    field = N.sample_field(su2, w, seed=99)
    path = tmp_path / "field.ym2"
    N.dump_field(field, path)
    back = N.restore_field(su2, path)
    assert np.array_equal(back.cells, field.cells)
    assert back.seed == field.seed
    assert back.window == field.window
    # refinement replays identically after restore
    a = N.refine_column_strip(field, (1, 1), 3)
    b = N.refine_column_strip(back, (1, 1), 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_dump_rejects_batched(su2):
    field = N.NoiseField.sample(su2, window(), seed=1, batch=(4,))
    with pytest.raises(ValueError):
        N.dump_field(field, "/tmp/should-not-exist.ym2")


def test_restore_rejects_wrong_group(tmp_path, su2, u1):
    field = N.sample_field(su2, window(), seed=1)
    path = tmp_path / "f.ym2"
    N.dump_field(field, path)
    with pytest.raises(ValueError):
        N.restore_field(u1, path)
