import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from georom.errors import DegenerateShapeError
from georom.shapes import (INLET, OUTLET, STENOSIS_RANGES, WALL, BifurcationParams,
                           L0, L1, Shape, StenosisParams, bifurcation_base, bifurcation_displacement,
                           generate_bifurcation_shape, generate_stenosis_shape, is_simple, latin_hypercube,
                           lower_wall, read_shape_csv, rectangle_shape, self_intersections, signed_area,
                           split_samples, upper_wall, write_shape_csv)


def test_lhs_one_sample_per_stratum_n4():
    for seed in (0, 1, 2**40 + 3):
        x = latin_hypercube(4, [[0.0, 1.0]], seed)[:, 0]
        assert sorted(np.floor(x * 4).astype(int).tolist()) == [0, 1, 2, 3]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**63 - 1))
def test_lhs_stratification_property(n, seed):
    ranges = np.array(STENOSIS_RANGES)
    x = latin_hypercube(n, ranges, seed)
    lo, hi = ranges[:, 0], ranges[:, 1]
    strata = np.floor((x - lo) / (hi - lo) * n).astype(int)
    strata = np.minimum(strata, n - 1)
    for d in range(x.shape[1]):
        assert sorted(strata[:, d].tolist()) == list(range(n))


def test_lhs_determinism_and_errors():
    a = latin_hypercube(10, STENOSIS_RANGES, 42)
    assert np.array_equal(a, latin_hypercube(10, STENOSIS_RANGES, 42))
    assert not np.array_equal(a, latin_hypercube(10, STENOSIS_RANGES, 43))
    with pytest.raises(ValueError):
        latin_hypercube(0, STENOSIS_RANGES, 1)
    with pytest.raises(ValueError):
        latin_hypercube(3, [], 1)


def test_stenosis_dataset_500_split():
    x = latin_hypercube(500, STENOSIS_RANGES, 7)
    assert x.shape == (500, 4)
    assert x[:, :2].min() >= 0.8 and x[:, :2].max() <= 2.0
    assert x[:, 2:].min() >= 6.0 and x[:, 2:].max() <= 14.0
    tr, va, te = split_samples(500, 400, 50)
    assert (len(tr), len(va), len(te)) == (400, 50, 50)
    assert len(set(tr) | set(va) | set(te)) == 500


def test_bump_peak_height():
    p = StenosisParams(2.0, 2.0, 10.0, 10.0)
    assert lower_wall(10.0, p) == pytest.approx(1 / math.sqrt(2 * math.pi * 4), abs=1e-15)
    assert 1 / math.sqrt(2 * math.pi * 4) == pytest.approx(0.19947, abs=1e-5)


def test_inlet_tail_within_stated_range():
    # holds for the parts of the range away from the sigma=2, mu=6 corner
    for s in (0.8, 1.2, 1.6):
        for mu in (6.0, 10.0):
            p = StenosisParams(s, s, mu, mu)
            assert lower_wall(0.0, p) < 1e-3
            assert upper_wall(0.0, p) > L0 - 1e-3


@pytest.mark.xfail(strict=True, reason="1e-3 tail bound is false at sigma=2, mu=6: "
                                       "exp(-4.5)/sqrt(8 pi) = 2.2e-3")
def test_inlet_tail_bound_at_range_corner():
    p = StenosisParams(2.0, 2.0, 6.0, 6.0)
    assert lower_wall(0.0, p) < 1e-3


def test_stenosis_shape_walls_and_counts():
    p = StenosisParams(1.0, 1.5, 8.0, 12.0)
    s = generate_stenosis_shape(p, 360)
    assert len(s) == 360
    bot = s.points[s.labels == WALL]
    assert np.all(np.isin(s.labels, [INLET, WALL, OUTLET]))
    lo = s.points[:, 1] < 1.0
    wall_lo = (s.labels == WALL) & lo
    assert np.allclose(s.points[wall_lo, 1], lower_wall(s.points[wall_lo, 0], p), atol=1e-14)
    wall_up = (s.labels == WALL) & ~lo
    assert np.allclose(s.points[wall_up, 1], upper_wall(s.points[wall_up, 0], p), atol=1e-14)
    assert np.all(s.points[s.labels == INLET, 0] == 0.0)
    assert np.all(s.points[s.labels == OUTLET, 0] == L1)
    assert signed_area(s.points) > 0
    assert is_simple(s)
    assert len(bot) > 0


def test_stenosis_mirror_symmetry():
    p = StenosisParams(0.9, 1.7, 7.0, 12.5)
    q = StenosisParams(1.7, 0.9, 12.5, 7.0)
    a = generate_stenosis_shape(p, 200).points
    b = generate_stenosis_shape(q, 200).points
    refl = np.column_stack([b[:, 0], L0 - b[:, 1]])
    # reflection reverses orientation, compare as point sets matched on x
    ka = np.lexsort((a[:, 1], a[:, 0]))
    kb = np.lexsort((refl[:, 1], refl[:, 0]))
    assert np.max(np.abs(a[ka] - refl[kb])) < 1e-12


def test_stenosis_touching_walls_rejected():
    with pytest.raises(DegenerateShapeError):
        # outside the sampling range on purpose: narrow bumps on both walls
        generate_stenosis_shape(StenosisParams(0.15, 0.15, 10.0, 10.0), 100, check_range=False)
    with pytest.raises(ValueError):
        generate_stenosis_shape(StenosisParams(3.0, 1.0, 10.0, 10.0), 100)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.8, 2.0), st.floats(0.8, 2.0), st.floats(6.0, 14.0), st.floats(6.0, 14.0))
def test_stenosis_shapes_simple(s1, s2, m1, m2):
    assert is_simple(generate_stenosis_shape(StenosisParams(s1, s2, m1, m2), 132))


def test_shape_invariants():
    with pytest.raises(DegenerateShapeError):
        Shape([[0, 0], [1, 0]], [2, 2])
    with pytest.raises(DegenerateShapeError):
        Shape([[0, 0], [0, 0], [1, 1]], [2, 2, 2])
    with pytest.raises(DegenerateShapeError):
        Shape([[0, 0], [1, 0], [1, 1]], [2, 2])


def test_bifurcation_base_580_and_simple():
    b = bifurcation_base(n_points=580)
    assert len(b) == 580
    assert 2 * len(b) == 1160
    assert is_simple(b)
    assert signed_area(b.points) > 0
    assert len(b.control_indices) == 4
    assert set(np.unique(b.labels)) == {INLET, WALL, OUTLET}


def test_bifurcation_zero_displacement_identity():
    b = bifurcation_base(0.25)
    s = generate_bifurcation_shape(BifurcationParams(np.zeros((4, 2))), b)
    assert np.array_equal(s.points, b.points)


def test_bifurcation_single_control_decay():
    b = bifurcation_base(0.2)
    d = np.zeros((4, 2))
    d[0] = [0.0, 0.5]
    disp = bifurcation_displacement(BifurcationParams(d), b)
    c = b.points[b.control_indices[0]]
    assert np.allclose(disp[b.control_indices[0]], [0.0, 0.5], atol=1e-12)
    r = np.hypot(*(b.points - c).T)
    mag = np.hypot(*disp.T)
    # decays with distance; beyond 6 mm the boundary moves < 1% of the control displacement
    assert mag[r > 6.0].max() < 0.01 * 0.5
    far = np.argsort(r)
    assert mag[far[-50:]].max() < mag[far[:5]].min()
    # inlet/outlet unmoved
    io = (b.labels != WALL) & (np.roll(b.labels, 1) != WALL)
    assert np.all(mag[io] == 0.0)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=8, max_size=8))
def test_bifurcation_shapes_simple(vals):
    b = bifurcation_base(0.3)
    s = generate_bifurcation_shape(BifurcationParams.from_array(vals), b)
    assert len(self_intersections(s)) == 0


def test_bifurcation_out_of_range():
    b = bifurcation_base(0.3)
    d = np.zeros((4, 2))
    d[1, 0] = 0.6
    with pytest.raises(ValueError):
        generate_bifurcation_shape(BifurcationParams(d), b)


def test_rectangle_shape():
    s = rectangle_shape(24)
    assert len(s) == 24
    assert np.allclose(s.points[0], [0, 0])


def test_shape_csv_round_trip(tmp_path):
    s = generate_stenosis_shape(StenosisParams(1.0, 1.2, 9.0, 11.0), 60)
    write_shape_csv(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x,y,tag"
    t = read_shape_csv(tmp_path / "s.csv")
    assert np.array_equal(t.points, s.points) and np.array_equal(t.labels, s.labels)
