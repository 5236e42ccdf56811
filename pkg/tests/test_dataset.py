import math

import pytest

from sidforge.dataset import (
    activity_groups,
    build_trajectories,
    load_checkins,
    parse_timestamp,
    preprocess,
    split_chronological,
    synth_generate,
    write_checkins,
)
from sidforge.errors import EmptyDatasetError
from sidforge.model.config import SynthConfig

from .conftest import BASE_TIME, checkin


def test_parse_timestamp_formats():
    assert parse_timestamp("1333238400") == BASE_TIME
    assert parse_timestamp("Tue Apr 03 18:00:09 +0000 2012") == BASE_TIME + 2 * 86400 + 18 * 3600 + 9
    assert parse_timestamp("2012-04-01T00:00:00Z") == BASE_TIME


def test_load_checkins_collects_rejects(tmp_path):
    path = tmp_path / "checkins.csv"
    path.write_text(
        "user,poi,category,timestamp,lat,lon\n"
        "u1,p1,Cafe,1333238400,40.7,-74.0\n"
        "u1,p2,Bar,1333242000,abc,-74.0\n"
        "u2,p1,Cafe,1333245600,40.7,-74.0\n"
    )
    result = load_checkins(path)
    assert len(result.records) == 2
    assert len(result.rejects) == 1
    assert result.rejects[0].line == 3
    assert result.rejects[0].column == "lat"


def test_load_checkins_rejects_out_of_range_latitude(tmp_path):
    path = tmp_path / "checkins.tsv"
    path.write_text("user\tpoi\tcategory\ttimestamp\tlat\tlon\nu1\tp1\tCafe\t1333238400\t95.0\t-74.0\n")
    result = load_checkins(path)
    assert result.records == []
    assert result.rejects[0].column == "lat"


def test_load_checkins_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkins(tmp_path / "absent.csv")


def test_load_checkins_missing_column(tmp_path):
    path = tmp_path / "checkins.csv"
    path.write_text("user,poi,timestamp,lat,lon\nu1,p1,1333238400,40.7,-74.0\n")
    with pytest.raises(ValueError, match="category"):
        load_checkins(path)


def test_write_then_load_keeps_records(tmp_path, small_synth):
    records = small_synth.records[:50]
    path = write_checkins(records, tmp_path / "out.csv")
    loaded = load_checkins(path)
    assert loaded.rejects == []
    assert [(r.user, r.poi, r.timestamp) for r in loaded.records] == [(r.user, r.poi, r.timestamp) for r in records]


def test_preprocess_repeats_until_stable():
    records = [
        checkin("u1", "p1", 1), checkin("u1", "p1", 2), checkin("u1", "p3", 3),
        checkin("u2", "p3", 4), checkin("u2", "p2", 5),
    ]
    # dropping p2 drops u2, which leaves p3 with one visit
    kept = preprocess(records, min_poi_visits=2, min_user_records=2)
    assert [(r.user, r.poi) for r in kept] == [("u1", "p1"), ("u1", "p1")]


def test_preprocess_empty_result_raises():
    with pytest.raises(EmptyDatasetError):
        preprocess([checkin("u1", "p1", 1)], min_poi_visits=2, min_user_records=1)


def test_preprocess_thresholds_hold(small_synth):
    kept = preprocess(small_synth.records, min_poi_visits=10, min_user_records=10)
    pois, users = {}, {}
    for r in kept:
        pois[r.poi] = pois.get(r.poi, 0) + 1
        users[r.user] = users.get(r.user, 0) + 1
    assert min(pois.values()) >= 10
    assert min(users.values()) >= 10


def test_build_trajectories_greedy_windows():
    records = [checkin("a", f"p{i}", h) for i, h in enumerate([0, 1, 23, 25, 30, 60])]
    trajectories = build_trajectories(records, delta_hours=24)
    assert [len(t.entries) for t in trajectories] == [3, 2]
    assert trajectories[1].start == BASE_TIME + 25 * 3600


def test_build_trajectories_window_is_inclusive():
    trajectories = build_trajectories([checkin("a", "p1", 0), checkin("a", "p2", 24)], delta_hours=24)
    assert len(trajectories) == 1


def test_build_trajectories_skips_duplicate_timestamps():
    records = [checkin("a", "p1", 0), checkin("a", "p2", 0), checkin("a", "p3", 1)]
    (trajectory,) = build_trajectories(records)
    assert [e.poi for e in trajectory.entries] == ["p1", "p3"]


def test_build_trajectories_rejects_bad_window():
    with pytest.raises(ValueError):
        build_trajectories([], delta_hours=0)


def test_split_is_chronological_and_leak_free(small_split):
    assert small_split.train
    train_end = max(t.end for t in small_split.train)
    later = small_split.validation + small_split.test
    assert all(t.end > train_end for t in later)
    vocab = set(small_split.poi_vocabulary)
    users = set(small_split.user_vocabulary)
    for trajectory in later:
        assert trajectory.user in users
        assert all(e.poi in vocab for e in trajectory.entries)


@pytest.mark.parametrize("ratios", [(0.8, 0.1), (0.8, 0.3, 0.1), (1.0, 0.0, 0.0)])
def test_split_rejects_bad_ratios(small_split, ratios):
    with pytest.raises(ValueError):
        split_chronological(small_split.train, ratios)


def test_synth_generate_is_deterministic():
    config = SynthConfig(n_clusters=3, n_users=5, n_pois=9, span_days=10, sessions_per_user=4, seed=3)
    first, second = synth_generate(config), synth_generate(config)
    assert first.records == second.records
    assert first.ledger == second.ledger
    assert sorted(first.clusters()) == [0, 1, 2]


def test_synth_categories_follow_clusters(small_synth):
    by_cluster = {}
    for record in small_synth.records:
        by_cluster.setdefault(small_synth.ledger[record.poi], set()).add(record.category)
    assert all(len(names) == 1 for names in by_cluster.values())


def test_activity_groups_partition_users(small_split):
    labels = activity_groups(small_split)
    assert set(labels) == set(small_split.user_vocabulary)
    counts = {name: list(labels.values()).count(name) for name in ("very_active", "normal", "inactive")}
    n_edge = math.floor(len(labels) * 0.3 + 1e-9)
    assert counts["very_active"] == counts["inactive"] == n_edge
