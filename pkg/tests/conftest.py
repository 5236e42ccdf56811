"""Shared fixtures: a small planted-cluster corpus and a tiny pipeline config."""

from pathlib import Path

import pytest
import yaml

from sidforge.dataset import build_trajectories, preprocess, split_chronological, synth_generate
from sidforge.model.config import SynthConfig
from sidforge.model.schema import CheckinRecord

BASE_TIME = 1333238400


def checkin(user, poi, hours, category="Cafe", lat=40.70, lon=-74.00):
    """Check-in `hours` after the base time."""
    return CheckinRecord(
        user=user, poi=poi, category=category,
        timestamp=BASE_TIME + int(hours * 3600), lat=lat, lon=lon,
    )


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(SynthConfig(
        n_clusters=4, n_users=20, n_pois=24, span_days=60,
        sessions_per_user=20, home_affinity=0.9, seed=0,
    ))


@pytest.fixture(scope="session")
def small_split(small_synth):
    kept = preprocess(small_synth.records, min_poi_visits=10, min_user_records=10)
    return split_chronological(build_trajectories(kept, 24.0), (0.8, 0.1, 0.1))


TINY_CONFIG = {
    "seed": 7,
    "ingest": {
        "synth": {"n_clusters": 4, "n_users": 20, "n_pois": 24, "span_days": 60,
                  "sessions_per_user": 20, "home_affinity": 0.9, "seed": 0},
    },
    "encoder": {"hidden": 16, "dim": 8, "epochs": 3, "batch_size": 16},
    "hsom": {"grids": [[2, 3], [2, 2]], "epochs": 5, "batch_size": 32},
    "continuity": {"samples": 100, "layer": 1},
    "prompts": {"k": 5, "max_history": 20, "system_text": "List {k} POIs."},
    "rewards": {"k": 5, "target_length": 16},
    "simulate": {"env": "synth:12x4", "steps": 6, "group": 4, "k": 5, "eval_every": 3,
                 "ablations": ["no_rr"]},
}


@pytest.fixture
def tiny_config_path(tmp_path) -> Path:
    path = tmp_path / "tiny.yaml"
    config = dict(TINY_CONFIG, work_dir=str(tmp_path / "run"))
    path.write_text(yaml.safe_dump(config))
    return path
