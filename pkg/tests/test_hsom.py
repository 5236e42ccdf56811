import math

import numpy as np
import pytest

from sidforge.errors import FrozenLayerError, UnfrozenModelError
import sidforge.hsom
from sidforge.hsom import (
    HsomModel,
    SomLayer,
    SomSchedule,
    assign_sids,
    batch_update,
    find_bmu,
    find_bmus,
    init_layer,
    model_from_records,
    model_to_records,
    neighborhood,
    parse_sid,
    quantize,
    quantize_batch,
    render_sid,
    topology_permutation_test,
    train_hsom,
    train_layer,
)
from sidforge.model.config import HsomConfig


def _clustered(seed, per_cluster=40, spread=0.3, offset=5.0):
    rng = np.random.default_rng(seed)
    centres = offset * np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    points = np.vstack([c + spread * rng.normal(size=(per_cluster, 2)) for c in centres])
    labels = np.repeat(np.arange(len(centres)), per_cluster)
    return points, labels


def _brute_force_update(prototypes, coords, batch, sigma, eta, eps):
    k_nodes = len(prototypes)
    bmus = []
    for r in batch:
        best, best_d = 0, math.inf
        for k in range(k_nodes):
            d = float(np.sum((r - prototypes[k]) ** 2))
            if d < best_d:
                best, best_d = k, d
        bmus.append(best)
    updated = prototypes.copy()
    for k in range(k_nodes):
        numerator = np.zeros(prototypes.shape[1])
        mass = 0.0
        for r, b in zip(batch, bmus):
            h = math.exp(-float(np.sum((coords[k] - coords[b]) ** 2)) / (2 * sigma * sigma))
            numerator += h * (r - prototypes[k])
            mass += h
        updated[k] = prototypes[k] + eta * numerator / (mass + eps)
    return updated


@pytest.mark.parametrize("trial", range(20))
def test_batch_update_matches_double_loop(trial):
    rng = np.random.default_rng(trial)
    height, width, dim = 3, 4, 5
    layer = SomLayer(height=height, width=width, prototypes=rng.normal(size=(height * width, dim)))
    batch = rng.normal(size=(int(rng.integers(1, 30)), dim))
    sigma, eta = float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.05, 1.0))
    expected = _brute_force_update(layer.prototypes.copy(), layer.coordinates, batch, sigma, eta, 1e-9)
    batch_update(layer, batch, sigma, eta, 1e-9)
    np.testing.assert_allclose(layer.prototypes, expected, rtol=0, atol=1e-10)


def test_bmu_ties_go_to_first_node():
    layer = SomLayer(height=1, width=3, prototypes=np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
    assert find_bmu(layer, np.zeros(2)) == (0, 1)
    assert list(find_bmus(layer, np.array([[0.1, 0.0], [0.9, 0.0]]))) == [1, 0]


def test_neighborhood_is_gaussian_on_the_lattice():
    assert neighborhood((1, 1), (1, 1), 0.5) == 1.0
    assert neighborhood((0, 0), (0, 2), 1.0) == pytest.approx(math.exp(-2.0))
    with pytest.raises(ValueError):
        neighborhood((0, 0), (0, 1), 0.0)


def test_schedule_endpoints():
    schedule = SomSchedule.for_grid((4, 6), HsomConfig(epochs=10))
    assert schedule.sigma(0) == pytest.approx(3.0)
    assert schedule.sigma(9) == pytest.approx(0.5)
    assert schedule.eta(0) == pytest.approx(0.5)
    assert schedule.eta(9) == pytest.approx(0.01)


def test_render_sid_example():
    codes = [(1, 1, 2), (2, 2, 3), (3, 4, 5), (4, 1, 1)]
    assert render_sid(codes) == "<A_1_2><B_2_3><C_4_5><D_1_1>"
    assert render_sid(codes, 2) == "<A_1_2><B_2_3><C_4_5><D_1_1><Z#2>"
    assert parse_sid("<A_1_2><B_2_3><C_4_5><D_1_1><Z#2>") == (codes, 2)


def test_render_sid_limits():
    with pytest.raises(ValueError):
        render_sid([(i + 1, 0, 0) for i in range(27)])
    with pytest.raises(ValueError):
        parse_sid("<A_1_2>junk")
    with pytest.raises(ValueError):
        parse_sid("<B_1_2>")


def test_frozen_layer_refuses_updates():
    layer = init_layer((2, 2), np.zeros((3, 2)), 0.1, np.random.default_rng(0)).freeze()
    with pytest.raises(FrozenLayerError):
        batch_update(layer, np.ones((2, 2)), 1.0, 0.5)


def test_quantize_needs_frozen_model():
    layer = init_layer((2, 2), np.zeros((3, 2)), 0.1, np.random.default_rng(0))
    with pytest.raises(UnfrozenModelError):
        quantize(HsomModel(layers=[layer]), np.zeros(2))


def test_collisions_get_disambiguators_in_poi_order():
    layer = SomLayer(height=1, width=1, prototypes=np.zeros((1, 2))).freeze()
    sids = assign_sids(HsomModel(layers=[layer]), ["b", "a", "c"], np.random.default_rng(0).normal(size=(3, 2)))
    assert {poi: sid.disambiguator for poi, sid in sids.items()} == {"a": 0, "b": 1, "c": 2}
    assert sids["a"].rendered == "<A_0_0>"
    assert sids["b"].rendered == "<A_0_0><Z#1>"
    assert len({sid.rendered for sid in sids.values()}) == 3


def test_residuals_contract_and_errors_do_not_grow():
    points, _ = _clustered(0)
    config = HsomConfig(grids=[(4, 6), (3, 3)], epochs=20, batch_size=64)
    model, reports = train_hsom(points, config, seed=0)
    assert model.frozen
    for report in reports:
        assert report.final_error <= report.initial_error
    _, residuals = quantize_batch(model, points)
    assert np.mean(np.linalg.norm(residuals, axis=1)) < np.mean(np.linalg.norm(points, axis=1))


def test_quantize_trace_ends_at_batch_residual():
    points, _ = _clustered(1)
    model, _ = train_hsom(points, HsomConfig(grids=[(2, 2), (2, 2)], epochs=5), seed=1)
    codes, trace = quantize(model, points[0])
    nodes, residuals = quantize_batch(model, points[:1])
    assert [layer.node(n) for layer, n in zip(model.layers, nodes[0])] == [c[1:] for c in codes]
    np.testing.assert_allclose(trace.residuals[-1], residuals[0])
    assert len(trace.residuals) == 3


def test_training_is_seeded():
    points, _ = _clustered(2)
    config = HsomConfig(grids=[(3, 3)], epochs=5)
    first, _ = train_hsom(points, config, seed=4)
    second, _ = train_hsom(points, config, seed=4)
    assert first.digest() == second.digest()


def test_model_records_restore_model():
    points, _ = _clustered(3)
    model, _ = train_hsom(points, HsomConfig(grids=[(2, 3)], epochs=3), seed=0)
    restored = model_from_records(model_to_records(model))
    assert restored.digest() == model.digest()
    assert restored.frozen


def test_bmu_layout_preserves_cluster_topology():
    # wide clusters, so each one covers several nodes
    points, labels = _clustered(0, spread=1.0, offset=3.0)
    model, _ = train_hsom(points, HsomConfig(grids=[(4, 6)], epochs=30, batch_size=64), seed=0)
    nodes, _ = quantize_batch(model, points)
    test = topology_permutation_test(model.layers[0], nodes[:, 0], labels, 999, np.random.default_rng(0))
    assert test.observed < test.null.mean()
    assert test.p_value < 0.01


def test_train_layer_freezes_and_lowers_error():
    points, _ = _clustered(5)
    rng = np.random.default_rng(0)
    layer = init_layer((4, 6), points, 0.1, rng)
    report = train_layer(layer, points, SomSchedule(epochs=15, sigma_start=3.0), rng, batch_size=32)
    assert layer.frozen
    assert report.epochs_run == 15
    assert report.grid == (4, 6)
    assert report.final_error < report.initial_error


def test_train_layer_with_no_epochs_keeps_the_initialization():
    points, _ = _clustered(6)
    rng = np.random.default_rng(0)
    layer = init_layer((2, 2), points, 0.1, rng)
    before = layer.prototypes.copy()
    report = train_layer(layer, points, SomSchedule(epochs=0, sigma_start=1.0), rng)
    assert layer.frozen
    assert report.epochs_run == 0
    assert report.final_error == report.initial_error
    np.testing.assert_array_equal(layer.prototypes, before)


def test_vanishing_neighborhood_moves_only_the_bmu_onto_the_item():
    rng = np.random.default_rng(7)
    layer = SomLayer(height=3, width=3, prototypes=rng.normal(size=(9, 4)))
    before = layer.prototypes.copy()
    item = rng.normal(size=4)
    bmu = int(find_bmus(layer, item)[0])
    batch_update(layer, item, sigma=1e-6, eta=1.0, eps=0.0)
    np.testing.assert_allclose(layer.prototypes[bmu], item, rtol=0, atol=1e-12)
    others = np.arange(9) != bmu
    np.testing.assert_allclose(layer.prototypes[others], before[others], rtol=0, atol=1e-9)


def test_shared_bmu_lands_on_the_batch_mean():
    prototypes = np.array([[0.0, 0.0], [10.0, 10.0], [-10.0, 10.0], [10.0, -10.0]])
    layer = SomLayer(height=2, width=2, prototypes=prototypes.copy())
    batch = np.random.default_rng(8).normal(0.5, 0.2, size=(6, 2))
    assert set(find_bmus(layer, batch)) == {0}
    batch_update(layer, batch, sigma=1e-3, eta=1.0, eps=1e-9)
    np.testing.assert_allclose(layer.prototypes[0], batch.mean(axis=0), rtol=0, atol=1e-8)
    np.testing.assert_array_equal(layer.prototypes[1:], prototypes[1:])


def test_items_on_their_prototype_are_a_fixed_point():
    rng = np.random.default_rng(9)
    layer = SomLayer(height=2, width=3, prototypes=rng.normal(size=(6, 3)))
    before = layer.prototypes.copy()
    batch_update(layer, np.repeat(before[4][None, :], 5, axis=0), sigma=1e-3, eta=0.7)
    np.testing.assert_allclose(layer.prototypes, before, rtol=0, atol=1e-12)


def test_training_later_layers_keeps_earlier_layers_fixed(monkeypatch):
    trained = []
    checks = []
    real_train_layer = sidforge.hsom.train_layer

    def recording_train_layer(layer, *args, **kwargs):
        earlier = [done.digest() for done in trained]
        report = real_train_layer(layer, *args, **kwargs)
        checks.append(earlier == [done.digest() for done in trained])
        trained.append(layer)
        return report

    monkeypatch.setattr(sidforge.hsom, "train_layer", recording_train_layer)
    points, _ = _clustered(4)
    model, _ = train_hsom(points, HsomConfig(grids=[(2, 3), (2, 2), (2, 2)], epochs=4), seed=0)
    assert len(checks) == 3 and all(checks)
    assert [layer.digest() for layer in model.layers] == [layer.digest() for layer in trained]
