from collections import Counter

import pytest

from sidforge.errors import LeakageError
from sidforge.features import (
    build_feature_table,
    build_feature_vector,
    build_vocabulary,
    from_record,
    index_training_visits,
    region_code,
    temporal_feature,
    to_record,
    top_visitors,
    visitor_feature,
)
from sidforge.model.schema import DatasetSplit, Trajectory

from .conftest import BASE_TIME, checkin


def test_region_code_shared_by_nearby_points():
    code = region_code(40.7128, -74.0060, 6)
    assert code.endswith("00+")
    assert len(code) == 9
    assert region_code(40.7129, -74.0061, 6) == code
    assert region_code(40.7128, -74.0060, 10) != code


def test_region_code_rejects_odd_lengths():
    with pytest.raises(ValueError):
        region_code(40.7, -74.0, 3)


def test_temporal_feature_breaks_ties_by_lower_slot():
    hours = [9, 9, 10, 23]
    onehot = temporal_feature([BASE_TIME + h * 3600 for h in hours], top_n=2)
    assert [i for i, bit in enumerate(onehot) if bit] == [9, 10]


def test_temporal_feature_applies_utc_offset():
    onehot = temporal_feature([BASE_TIME + 23 * 3600], utc_offset_minutes=60)
    assert onehot[0] == 1
    assert sum(onehot) == 1


def test_temporal_feature_needs_visits():
    with pytest.raises(ValueError):
        temporal_feature([])


def test_top_visitors_orders_by_count_then_id():
    assert top_visitors(Counter({"u3": 2, "u1": 2, "u2": 5}), top_n=2) == ["u2", "u1"]


def test_visitor_feature_refuses_unseen_poi(small_split):
    index = index_training_visits(small_split)
    with pytest.raises(LeakageError):
        visitor_feature("never-seen", index, small_split.user_vocabulary)


def test_category_label_ties_break_alphabetically():
    trajectory = Trajectory(user="u1", entries=(
        checkin("u1", "p1", 0, category="Cafe"),
        checkin("u1", "p1", 1, category="Bar"),
    ))
    split = DatasetSplit(train=[trajectory], poi_vocabulary=["p1"], user_vocabulary=["u1"])
    assert index_training_visits(split)["p1"].category == "Bar"


def test_feature_table_blocks(small_split):
    table = build_feature_table(small_split, plus_code_length=6, top_n=10)
    vocab = table.vocabulary
    assert table.pois == sorted(small_split.poi_vocabulary)
    matrix = table.matrix()
    assert matrix.shape == (len(table.vectors), vocab.width)
    offsets = vocab.block_offsets()
    for row in matrix:
        start, stop = offsets["category"]
        assert row[start:stop].sum() == 1
        start, stop = offsets["region"]
        assert row[start:stop].sum() == 1
        start, stop = offsets["temporal"]
        assert 1 <= row[start:stop].sum() <= 10
        start, stop = offsets["visitor"]
        assert 1 <= row[start:stop].sum() <= 10


def test_feature_table_uses_train_visitors_only(small_split):
    table = build_feature_table(small_split)
    train_users = {t.user for t in small_split.train}
    assert set(table.vocabulary.users) <= train_users


def test_compact_record_restores_vector(small_split):
    table = build_feature_table(small_split)
    vector = table.vectors[0]
    record = to_record(vector, table.vocabulary, table.categories[vector.poi])
    assert record["category"] == table.categories[vector.poi]
    assert from_record(record, table.vocabulary) == vector


def test_feature_vector_matches_hand_assembled_blocks():
    split = DatasetSplit(
        train=[
            Trajectory(user="u1", entries=(
                checkin("u1", "p1", 9, category="Cafe"),
                checkin("u1", "p2", 10, category="Bar", lat=41.70),
            )),
            Trajectory(user="u2", entries=(
                checkin("u2", "p1", 9, category="Cafe"),
                checkin("u2", "p2", 12, category="Bar", lat=41.70),
            )),
        ],
        poi_vocabulary=["p1", "p2"],
        user_vocabulary=["u1", "u2"],
    )
    index = index_training_visits(split)
    vocab = build_vocabulary(index, plus_code_length=6)
    assert vocab.categories == ["Bar", "Cafe"]
    home = region_code(40.70, -74.00, 6)

    p1 = build_feature_vector("p1", index, vocab)
    assert p1.category_onehot == [0, 1]
    assert p1.region_onehot == [int(r == home) for r in vocab.regions]
    assert [i for i, bit in enumerate(p1.temporal_onehot) if bit] == [9]
    assert p1.visitor_onehot == [1, 1]

    p2 = build_feature_vector("p2", index, vocab)
    assert p2.category_onehot == [1, 0]
    assert p2.region_onehot == [int(r != home) for r in vocab.regions]
    assert [i for i, bit in enumerate(p2.temporal_onehot) if bit] == [10, 12]
    assert len(p2.concatenated) == 2 + 2 + 24 + 2

    with pytest.raises(LeakageError):
        build_feature_vector("p3", index, vocab)
