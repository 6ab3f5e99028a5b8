import numpy as np
import pytest

from roughpme.engine.errors import PathError
from roughpme.signals.path_io import read_path_csv, write_path_csv
from roughpme.signals.roughpath import (
    HolderMetricParams, SmoothPath, coarsen, dyadic_pair_grid, holder_distance, holder_distance_parts,
    reverse, sample_brownian, schauder_path, shift, stratonovich_lift, zero_path,
)


def test_brownian_sample_is_seeded():
    a = sample_brownian(3, 2, 32, 1.0)
    b = sample_brownian(3, 2, 32, 1.0)
    c = sample_brownian(4, 2, 32, 1.0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.all(a.values[0] == 0.0)


def test_brownian_increment_statistics():
    steps, horizon = 20000, 2.0
    path = sample_brownian(11, 1, steps, horizon)
    increments = np.diff(path.values[:, 0])
    variance = horizon / steps
    assert abs(np.mean(increments)) < 4.0 * np.sqrt(variance / steps)
    assert np.var(increments) == pytest.approx(variance, rel=0.05)


def test_path_validation():
    with pytest.raises(PathError):
        SmoothPath(np.array([0.1, 1.0]), np.zeros(2))
    with pytest.raises(PathError):
        SmoothPath(np.array([0.0, 0.5, 0.5]), np.zeros(3))
    with pytest.raises(PathError):
        SmoothPath(np.array([0.0, 1.0]), np.array([0.0, np.nan]))


def test_evaluate_and_velocity():
    path = SmoothPath(np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0, 0.0]))
    assert path.evaluate(0.25) == pytest.approx([0.5])
    assert path.velocity(0.1) == pytest.approx([2.0])
    assert path.velocity(0.5) == pytest.approx([-2.0])
    assert path.native_mesh == pytest.approx(0.5)


def test_aligned_grid_keeps_kinks_and_extra_nodes():
    path = SmoothPath(np.array([0.0, 0.3, 1.0]), np.array([0.0, 1.0, 0.0]))
    grid = path.aligned_grid(0.0, 1.0, 0.25, extra_nodes=[0.55])
    assert np.any(np.isclose(grid, 0.3))
    assert np.any(np.isclose(grid, 0.55))
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.max(np.diff(grid)) <= 0.25 + 1e-12


def test_lift_is_geometric_and_satisfies_chen():
    lift = stratonovich_lift(sample_brownian(5, 3, 50, 1.0))
    s, u, t = 0.113, 0.5, 0.87
    area = lift.area(s, t)
    inc = lift.increment(s, t)
    assert np.max(np.abs(0.5 * (area + area.T) - 0.5 * np.outer(inc, inc))) < 1e-12
    chen = lift.area(s, u) + lift.area(u, t) + np.outer(lift.increment(s, u), lift.increment(u, t))
    assert np.max(np.abs(area - chen)) < 1e-12


def test_area_of_a_straight_line_is_symmetric():
    path = SmoothPath(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [1.0, 2.0]]))
    area = stratonovich_lift(path).area(0.0, 1.0)
    assert area == pytest.approx(0.5 * np.outer([1.0, 2.0], [1.0, 2.0]))


def test_dyadic_pair_grid():
    pairs = dyadic_pair_grid(1.0, 0.125)
    assert len(pairs) == 1 + 2 + 4 + 8
    assert pairs[0] == (0.0, 1.0)
    with pytest.raises(PathError):
        dyadic_pair_grid(1.0, 2.0)


def test_holder_alpha_range():
    with pytest.raises(PathError):
        HolderMetricParams(1.0 / 3.0, ((0.0, 1.0),))
    with pytest.raises(PathError):
        HolderMetricParams(0.5, ())


def test_holder_distance_axioms():
    metric = HolderMetricParams(0.4, dyadic_pair_grid(1.0, 1.0 / 64))
    a = stratonovich_lift(sample_brownian(1, 2, 64, 1.0))
    b = stratonovich_lift(sample_brownian(2, 2, 64, 1.0))
    c = stratonovich_lift(sample_brownian(3, 2, 64, 1.0))
    assert holder_distance(a, a, metric) == 0.0
    assert holder_distance(a, b, metric) == holder_distance(b, a, metric)
    assert holder_distance(a, b, metric) > 0.0
    ab, _ = holder_distance_parts(a, b, metric)
    bc, _ = holder_distance_parts(b, c, metric)
    ac, _ = holder_distance_parts(a, c, metric)
    assert ac <= ab + bc + 1e-12


def test_holder_distance_rejects_mismatched_paths():
    metric = HolderMetricParams(0.4, dyadic_pair_grid(1.0, 0.25))
    with pytest.raises(PathError):
        holder_distance(stratonovich_lift(zero_path(1, 1.0)), stratonovich_lift(zero_path(2, 1.0)), metric)


def test_coarsen_interpolates_on_the_coarse_nodes():
    path = sample_brownian(9, 1, 64, 1.0)
    coarse = coarsen(path, 1.0 / 8)
    assert coarse.times.size == 9
    assert np.allclose(coarse.values, path.evaluate(coarse.times))
    assert coarsen(path, path.native_mesh) is path
    with pytest.raises(PathError):
        coarsen(path, 1.0 / 128)


def test_reverse_and_shift():
    path = sample_brownian(4, 2, 40, 1.0)
    back = reverse(path, 0.6)
    assert back.horizon == pytest.approx(0.6)
    for s in (0.0, 0.17, 0.6):
        assert np.allclose(back.evaluate(s), path.evaluate(0.6 - s))
    later = shift(path, 0.25)
    assert later.horizon == pytest.approx(0.75)
    for r in (0.0, 0.3, 0.75):
        assert np.allclose(later.evaluate(r), path.evaluate(r + 0.25))
    with pytest.raises(PathError):
        shift(path, 1.0)
    with pytest.raises(PathError):
        reverse(path, 1.5)


def test_path_file_keeps_values_exactly(tmp_path):
    path = sample_brownian(8, 2, 16, 0.5)
    target = tmp_path / "driver.csv"
    write_path_csv(path, target)
    loaded = read_path_csv(target)
    assert np.array_equal(loaded.times, path.times)
    assert np.array_equal(loaded.values, path.values)


def test_bad_path_file(tmp_path):
    target = tmp_path / "bad.csv"
    target.write_text("time,z1\n0.0,0.0\n1.0,1.0\n")
    with pytest.raises(PathError):
        read_path_csv(target)
    with pytest.raises(PathError):
        read_path_csv(tmp_path / "missing.csv")
    target.write_text("t,z1,w\n0.0,0.0,0.0\n1.0,1.0,1.0\n")
    with pytest.raises(PathError):
        read_path_csv(target)


def test_path_file_header(tmp_path):
    target = tmp_path / "driver.csv"
    write_path_csv(sample_brownian(8, 2, 4, 0.5), target)
    assert target.read_text().splitlines()[0] == "t, z1, z2"
    target.write_text("t,z1,z2\n0.0,0.0,0.0\n1.0,1.0,-1.0\n")
    assert read_path_csv(target).n == 2


def test_schauder_interpolants_are_partial_sums():
    fine = schauder_path(2, 64, 1.0)
    assert np.all(fine.values[0] == 0.0)
    assert fine.values[-1] == pytest.approx([1.0, 0.5])
    assert np.allclose(coarsen(fine, 1.0 / 8).values, schauder_path(2, 8, 1.0).values)
    with pytest.raises(PathError):
        schauder_path(1, 48, 1.0)


def test_schauder_ladder_distance_decreases():
    fine = schauder_path(2, 64, 1.0)
    metric = HolderMetricParams(0.4, dyadic_pair_grid(1.0, fine.native_mesh))
    lift = stratonovich_lift(fine)
    distances = [holder_distance(stratonovich_lift(coarsen(fine, 2.0 ** -level)), lift, metric)
                 for level in range(1, 6)]
    assert all(b < a for a, b in zip(distances, distances[1:]))
