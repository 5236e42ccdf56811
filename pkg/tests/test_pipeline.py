"""Statistical checks of the default pipeline on the synthetic corpus across seeds."""

import json

import pytest

from sidforge.model.config import load_config
from sidforge.pipeline import PipelineRunner

SEEDS = range(20)


@pytest.fixture(scope="module")
def seeded_runs(tmp_path_factory):
    """Work directories of the default chain up to continuity, one per master seed."""
    root = tmp_path_factory.mktemp("seeds")
    runs = {}
    for seed in SEEDS:
        config = load_config().with_overrides({"seed": seed, "work_dir": root / str(seed)})
        PipelineRunner(config).run_all(stop_after="continuity")
        runs[seed] = config.work_dir
    return runs


def _report(work_dir, stage):
    return json.loads((work_dir / stage / "report.json").read_text())


def test_first_layer_keeps_categories_together(seeded_runs):
    p_values = [_report(seeded_runs[seed], "quantize")["topology"]["p_value"] for seed in SEEDS]
    significant = sum(p < 0.01 for p in p_values)
    assert significant >= 0.95 * len(p_values), p_values


def test_sid_space_beats_permuted_assignments(seeded_runs):
    for seed in range(10):
        report = _report(seeded_runs[seed], "continuity")
        permuted = report["baselines"]["permuted"]
        assert report["global_avg_nicc"] < permuted["global_avg_nicc"], seed
        assert report["global_avg_nics"] > permuted["global_avg_nics"], seed
