import numpy as np
import pytest

from sidforge.continuity import (
    IdSpace,
    continuity_report,
    flatten_to_linear,
    intra_class_dispersion,
    nicc,
    nics,
    null_dispersion,
    permuted_assignments,
    sid_coordinates,
)
from sidforge.hsom import semantic_id

GRID = IdSpace(kind="grid", bounds=(4, 6))


def _uniform_assignments(n_categories, per_category, seed):
    rng = np.random.default_rng(seed)
    coords, categories = {}, {}
    for c in range(n_categories):
        for j in range(per_category):
            poi = f"p{c}_{j}"
            coords[poi] = [float(rng.integers(4)), float(rng.integers(6))]
            categories[poi] = f"cat{c}"
    return coords, categories


def _clustered_assignments(seed):
    """Four categories, each around its own corner of the 4x6 grid."""
    rng = np.random.default_rng(seed)
    corners = [(0, 0), (0, 5), (3, 0), (3, 5)]
    coords, categories = {}, {}
    for c, (row, col) in enumerate(corners):
        for j in range(15):
            poi = f"p{c}_{j}"
            dr, dc = rng.integers(0, 2, size=2)
            coords[poi] = [float(abs(row - dr)), float(abs(col - dc))]
            categories[poi] = f"cat{c}"
    return coords, categories


def test_uniform_assignments_score_about_one():
    coords, categories = _uniform_assignments(10, 30, seed=0)
    result = nicc(coords, categories, GRID, samples=10_000, seed=0)
    assert 0.9 <= result.global_avg <= 1.1


@pytest.mark.parametrize("seed", range(3))
def test_clustered_ids_beat_permuted_ids(seed):
    coords, categories = _clustered_assignments(seed)
    shuffled = permuted_assignments(coords, seed)
    clustered = continuity_report(coords, categories, GRID, samples=200, seed=seed)
    permuted = continuity_report(shuffled, categories, GRID, samples=200, seed=seed)
    assert clustered.global_avg_nicc < permuted.global_avg_nicc
    assert clustered.global_avg_nics > permuted.global_avg_nics


def test_ratios_are_scale_free():
    coords, categories = _clustered_assignments(0)
    scaled = {poi: [2.0 * v for v in point] for poi, point in coords.items()}
    base = continuity_report(coords, categories, GRID, samples=200, seed=3)
    doubled = continuity_report(scaled, categories, GRID.scaled(2.0), samples=200, seed=3)
    assert doubled.global_avg_nicc == pytest.approx(base.global_avg_nicc, rel=1e-12)
    assert doubled.global_avg_nics == pytest.approx(base.global_avg_nics, rel=1e-12)


def test_single_member_categories_are_undefined():
    coords = {"a": [0.0, 0.0], "b": [1.0, 1.0], "c": [2.0, 2.0]}
    categories = {"a": "x", "b": "x", "c": "y"}
    result = nicc(coords, categories, GRID, samples=100)
    assert result.undefined == ["y"]
    assert result.per_category["y"].nicc is None
    assert result.global_avg == pytest.approx(result.per_category["x"].nicc)


def test_argument_validation():
    coords = {"a": [0.0, 0.0], "b": [1.0, 1.0]}
    with pytest.raises(ValueError):
        nicc(coords, {"a": "x", "b": "x"}, GRID, samples=99)
    with pytest.raises(ValueError):
        nics(coords, {"a": "x", "b": "x"}, GRID, samples=100)


def test_null_is_seeded():
    assert null_dispersion(GRID, 5, 200, seed=1) == null_dispersion(GRID, 5, 200, seed=1)


def test_id_space_parsing():
    assert str(IdSpace.parse("grid:4x6")) == "grid:4x6"
    assert IdSpace.parse("linear:24").bounds == (24,)
    assert IdSpace.for_grids([(4, 6), (8, 8)], None).bounds == (4, 6, 8, 8)
    with pytest.raises(ValueError):
        IdSpace.parse("torus:4x6")
    with pytest.raises(ValueError):
        IdSpace(kind="linear", bounds=(4, 6))


def test_sid_coordinates_and_linear_flattening():
    sids = {"p": semantic_id([(1, 2, 3), (2, 1, 0)])}
    assert sid_coordinates(sids, 1) == {"p": [2.0, 3.0]}
    assert sid_coordinates(sids, None) == {"p": [2.0, 3.0, 1.0, 0.0]}
    assert flatten_to_linear({"p": [2.0, 3.0]}, 6) == {"p": [15.0]}


def test_permutation_keeps_the_coordinate_multiset():
    coords, _ = _clustered_assignments(1)
    shuffled = permuted_assignments(coords, seed=5)
    assert sorted(map(tuple, shuffled.values())) == sorted(map(tuple, coords.values()))
    assert set(shuffled) == set(coords)


def test_report_ranks_top_categories_by_size():
    coords = {"a": [0.0, 0.0], "b": [1.0, 1.0], "c": [2.0, 2.0], "d": [3.0, 3.0]}
    categories = {"a": "x", "b": "x", "c": "x", "d": "y"}
    report = continuity_report(coords, categories, GRID, samples=100, top_categories=1)
    assert report.top_categories == ["x"]
    assert report.per_category["y"].nics is not None


def test_intra_class_dispersion_of_a_square():
    centroid, dispersion = intra_class_dispersion([[0, 0], [0, 2], [2, 0], [2, 2]])
    np.testing.assert_allclose(centroid, [1.0, 1.0])
    assert dispersion == pytest.approx(np.sqrt(2.0))
    _, single = intra_class_dispersion([[3.0, 4.0]])
    assert single == 0.0
    with pytest.raises(ValueError):
        intra_class_dispersion(np.empty((0, 2)))
