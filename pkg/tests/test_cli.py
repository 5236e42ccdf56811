import json

import pytest
import yaml
from click.testing import CliRunner

from sidforge.cli import cli, parse_grids
from sidforge.model.config import PipelineConfig, load_config
from sidforge.pipeline import PipelineRunner
from sidforge.stages import STAGE_HANDLERS

DETERMINISTIC_ARTIFACTS = [
    "ingest/train.jsonl",
    "quantize/sids.jsonl",
    "prompts/test.jsonl",
    "continuity/report.json",
    "simulate/report.json",
    "evaluate/report.json",
]


def _run_all(config_path, *extra):
    result = CliRunner().invoke(cli, ["--config", str(config_path), *extra, "all"])
    assert result.exit_code == 0, result.output
    return result


def test_all_writes_every_stage(tiny_config_path):
    result = _run_all(tiny_config_path)
    work_dir = load_config(tiny_config_path).work_dir
    for name in STAGE_HANDLERS:
        assert f"✓ {name}:" in result.output
        assert (work_dir / name).is_dir()
    sids = [json.loads(line) for line in (work_dir / "quantize" / "sids.jsonl").read_text().splitlines()]
    assert "_meta" in sids[0]
    assert len({r["sid"] for r in sids[1:]}) == len(sids) - 1
    report = json.loads((work_dir / "evaluate" / "report.json").read_text())
    assert set(report["simulate"]["runs"]) == {"default", "no_rr"}


def test_same_seed_gives_identical_artifacts(tmp_path, tiny_config_path):
    config = yaml.safe_load(tiny_config_path.read_text())
    outputs = []
    for name in ("first", "second"):
        config["work_dir"] = str(tmp_path / name)
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(config))
        _run_all(path)
        outputs.append({a: (tmp_path / name / a).read_bytes() for a in DETERMINISTIC_ARTIFACTS})
    assert outputs[0] == outputs[1]


def test_missing_upstream_artifact_names_the_stage(tiny_config_path):
    result = CliRunner().invoke(cli, ["--config", str(tiny_config_path), "featurize"])
    assert result.exit_code != 0
    assert "run the 'ingest' stage first" in result.output


def test_changed_upstream_config_is_refused_unless_forced(tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    assert runner.invoke(cli, [*base, "ingest"]).exit_code == 0
    result = runner.invoke(cli, [*base, "ingest", "--delta-hours", "12"])
    assert result.exit_code == 0
    config = load_config(tiny_config_path)
    assert runner.invoke(cli, [*base, "featurize"]).exit_code != 0
    forced = runner.invoke(cli, [*base, "--force", "featurize"])
    assert forced.exit_code == 0, forced.output
    assert (config.work_dir / "featurize" / "features.jsonl").exists()


def test_downstream_flags_keep_upstream_artifacts_valid(tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    for stage in ("ingest", "featurize", "encode", "quantize"):
        assert runner.invoke(cli, [*base, stage]).exit_code == 0
    result = runner.invoke(cli, [*base, "continuity", "--samples", "150", "--layer", "all"])
    assert result.exit_code == 0, result.output
    report = json.loads((load_config(tiny_config_path).work_dir / "continuity" / "report.json").read_text())
    assert report["layer"] is None
    assert report["null_samples"] == 150
    assert report["space"] == "grid:2x3x2x2"


def test_seed_comes_from_environment(tiny_config_path):
    runner = CliRunner()
    result = runner.invoke(cli, ["--config", str(tiny_config_path), "ingest"], env={"SIDFORGE_SEED": "99"})
    assert result.exit_code == 0, result.output
    summary = json.loads((load_config(tiny_config_path).work_dir / "ingest" / "summary.json").read_text())
    assert summary["_meta"]["config"]["seed"] == 99


def test_json_logs_flag(tiny_config_path):
    result = CliRunner().invoke(cli, ["--config", str(tiny_config_path), "--json", "ingest"])
    assert result.exit_code == 0, result.output


def test_bad_flags_are_usage_errors(tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    assert runner.invoke(cli, [*base, "quantize", "--grids", "4by6"]).exit_code == 2
    assert runner.invoke(cli, [*base, "ingest", "--input", "x.csv", "--seed-synth", "1"]).exit_code == 2
    assert runner.invoke(cli, [*base, "featurize", "--plus-code-len", "5"]).exit_code == 2


def test_parse_grids():
    assert parse_grids("4x6, 8X8") == [(4, 6), (8, 8)]


def test_config_overrides_and_digest_scope():
    config = PipelineConfig()
    changed = config.with_overrides({"simulate.steps": 3, "hsom.epochs": None})
    assert changed.simulate.steps == 3
    assert changed.hsom.epochs == config.hsom.epochs
    assert changed.digest(["ingest", "hsom"]) == config.digest(["ingest", "hsom"])
    assert changed.digest() != config.digest()
    assert config.with_overrides({}, clear=["continuity.layer"]).continuity.layer is None
    with pytest.raises(ValueError):
        config.with_overrides({"hsom.nope": 1})


def test_runner_stops_after_requested_stage(tiny_config_path):
    runner = PipelineRunner(load_config(tiny_config_path))
    results = runner.run_all(stop_after="featurize")
    assert list(results) == ["ingest", "featurize"]
    with pytest.raises(ValueError):
        runner.run_stage("nope")


def test_global_work_dir_survives_stage_flags(tmp_path, tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path), "--work-dir", str(tmp_path / "elsewhere")]
    result = runner.invoke(cli, [*base, "ingest"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "elsewhere" / "ingest" / "summary.json").exists()
    result = runner.invoke(cli, [*base, "featurize"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "elsewhere" / "featurize" / "features.jsonl").exists()
    assert not load_config(tiny_config_path).work_dir.exists()


def test_stage_inputs_and_outputs_can_live_anywhere(tmp_path, tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    work_dir = load_config(tiny_config_path).work_dir
    assert runner.invoke(cli, [*base, "all", "--stop-after", "quantize"]).exit_code == 0
    moved = tmp_path / "moved"
    moved.mkdir()
    (work_dir / "ingest").rename(moved / "split")
    (work_dir / "quantize").rename(moved / "ids")

    def ok(*args):
        result = runner.invoke(cli, [*base, *map(str, args)])
        assert result.exit_code == 0, result.output

    ok("featurize", "--split", moved / "split", "--out", moved / "feat")
    assert (moved / "feat" / "vocabulary.json").exists()
    ok("encode", "--features", moved / "feat" / "features.jsonl")
    (work_dir / "encode").rename(moved / "enc")
    ok("quantize", "--embeddings", moved / "enc" / "embeddings.jsonl")
    assert (work_dir / "quantize" / "sids.jsonl").exists()
    ok("continuity", "--sids", moved / "ids" / "sids.jsonl", "--categories", moved / "feat" / "features.jsonl")
    assert (work_dir / "continuity" / "report.json").exists()
    ok("prompts", "--split", moved / "split" / "train.jsonl", "--sids", moved / "ids" / "sids.jsonl",
       "--out", moved / "qa")
    assert {p.name for p in (moved / "qa").iterdir()} == {"train.jsonl", "validation.jsonl", "test.jsonl"}


def test_explicit_input_without_artifacts_names_the_stage(tmp_path, tiny_config_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = CliRunner().invoke(cli, ["--config", str(tiny_config_path), "quantize", "--embeddings", str(empty)])
    assert result.exit_code != 0
    assert "run the 'encode' stage first" in result.output


def test_stage_seed_flags_are_recorded(tiny_config_path):
    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    work_dir = load_config(tiny_config_path).work_dir
    assert runner.invoke(cli, [*base, "all", "--stop-after", "quantize"]).exit_code == 0
    reruns = (
        ("simulate", "simulate", 6),
        ("continuity", "continuity", 5),
        ("quantize", "hsom", 4),
        ("encode", "encoder", 3),
    )
    for stage, section, seed in reruns:
        result = runner.invoke(cli, [*base, stage, "--seed", str(seed)])
        assert result.exit_code == 0, result.output
        name = "embeddings.jsonl" if stage == "encode" else "report.json"
        path = work_dir / stage / name
        if name.endswith(".jsonl"):
            meta = json.loads(path.read_text().splitlines()[0])["_meta"]
        else:
            meta = json.loads(path.read_text())["_meta"]
        assert meta["config"][section]["seed"] == seed


def test_failed_stage_publishes_nothing(monkeypatch, tiny_config_path):
    from sidforge.stages.featurize import FeaturizeStage

    runner = CliRunner()
    base = ["--config", str(tiny_config_path)]
    work_dir = load_config(tiny_config_path).work_dir
    assert runner.invoke(cli, [*base, "ingest"]).exit_code == 0
    assert runner.invoke(cli, [*base, "featurize"]).exit_code == 0
    before = {p.name: p.read_bytes() for p in (work_dir / "featurize").iterdir()}

    def broken(self, filename, payload):
        raise RuntimeError("disk full")

    monkeypatch.setattr(FeaturizeStage, "write_json", broken)
    result = runner.invoke(cli, [*base, "featurize", "--plus-code-len", "4"])
    assert result.exit_code != 0
    assert "disk full" in result.output
    assert {p.name: p.read_bytes() for p in (work_dir / "featurize").iterdir()} == before
    assert not (work_dir / ".featurize.partial").exists()
