"""
Base stage handler.

A stage reads the artifacts of the stages it requires, does its work and
writes its own artifacts under <work_dir>/<stage name>/. Every artifact
carries a metadata header with the digest of the config sections the stage
and its upstream stages depend on.

Upstream artifacts can also be taken from explicit paths (`inputs`, keyed by
the producing stage) and outputs sent to another directory (`out_dir`).
Outputs are staged in a hidden sibling directory and moved into place only
when the whole stage succeeds.
"""

import logging
import shutil
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Mapping, Optional, Tuple

import pandas as pd

from .. import __version__, artifacts
from ..model.config import PipelineConfig, derive_seed
from ..model.schema import ArtifactMeta, DatasetSplit, SemanticId, Trajectory

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "test")


class BaseStage(ABC):
    """Base class for pipeline stages."""

    name: ClassVar[str]
    version: ClassVar[str] = "1"
    requires: ClassVar[Tuple[str, ...]] = ()
    sections: ClassVar[Tuple[str, ...]] = ()
    # artifact an explicit input file path stands for; siblings are found next to it
    primary: ClassVar[Optional[str]] = None
    # config section whose optional `seed` replaces the derived stage seed
    seed_section: ClassVar[Optional[str]] = None

    def __init__(
        self,
        config: PipelineConfig,
        force: bool = False,
        progress: bool = False,
        inputs: Optional[Mapping[str, Path]] = None,
        out_dir: Optional[Path] = None,
    ):
        """
        Args:
            config: Validated pipeline configuration
            force: Accept upstream artifacts produced under another config
            progress: Show progress bars in training loops
            inputs: Upstream artifact paths (file or directory) keyed by producing stage
            out_dir: Directory for this stage's artifacts instead of <work_dir>/<name>
        """
        self.config = config
        self.work_dir = Path(config.work_dir)
        self.force = force
        self.progress = progress
        self.inputs = {stage: Path(p) for stage, p in (inputs or {}).items()}
        self.output_dir = Path(out_dir) if out_dir is not None else self.work_dir / self.name
        self._staging: Optional[Path] = None
        self.seed = self._stage_seed()

    def _stage_seed(self) -> int:
        if self.seed_section is not None:
            explicit = getattr(self.config, self.seed_section).seed
            if explicit is not None:
                return explicit
        return derive_seed(self.config.seed, self.name)

    @classmethod
    def lineage(cls) -> List[str]:
        """Config sections this stage and everything upstream depend on."""
        from . import get_stage_handler

        sections = set(cls.sections)
        for upstream in cls.requires:
            sections.update(get_stage_handler(upstream).lineage())
        return sorted(sections)

    @classmethod
    def expected_digest(cls, config: PipelineConfig) -> str:
        return config.digest(cls.lineage())

    def path(self, filename: str) -> Path:
        """Where this stage writes `filename`."""
        return (self._staging or self.output_dir) / filename

    def input_path(self, stage: str, filename: str) -> Path:
        """Where the artifact `filename` of an upstream stage is read from."""
        from . import get_stage_handler

        given = self.inputs.get(stage)
        if given is None:
            return self.work_dir / stage / filename
        if given.is_dir():
            return given / filename
        if filename == get_stage_handler(stage).primary:
            return given
        return given.parent / filename

    def execute(self) -> Dict[str, Path]:
        """Run the stage with staged outputs; nothing is moved into place on failure."""
        staging = self.output_dir.with_name(f".{self.output_dir.name}.partial")
        shutil.rmtree(staging, ignore_errors=True)
        self._staging = staging
        try:
            outputs = self.run()
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        finally:
            self._staging = None
        return artifacts.publish_dir(staging, self.output_dir, outputs)

    def meta(self) -> ArtifactMeta:
        return ArtifactMeta(
            stage=self.name,
            stage_version=self.version,
            config_digest=self.expected_digest(self.config),
            config=self.config.model_dump(mode="json", include=set(self.lineage()) | {"seed"}),
            created_by=f"sidforge {__version__}",
        )

    def _upstream(self, stage: str, filename: str) -> Tuple[Path, str]:
        from . import get_stage_handler

        path = artifacts.require(self.input_path(stage, filename), stage)
        return path, get_stage_handler(stage).expected_digest(self.config)

    def read_jsonl(self, stage: str, filename: str) -> List[Dict[str, Any]]:
        path, expected = self._upstream(stage, filename)
        meta, records = artifacts.read_jsonl(path)
        artifacts.check_digest(meta, expected, path, self.force)
        return records

    def read_json(self, stage: str, filename: str) -> Dict[str, Any]:
        path, expected = self._upstream(stage, filename)
        meta, payload = artifacts.read_json(path)
        artifacts.check_digest(meta, expected, path, self.force)
        return payload

    def write_jsonl(self, filename: str, records) -> Path:
        return artifacts.write_jsonl(self.path(filename), records, self.meta())

    def write_json(self, filename: str, payload: Dict[str, Any]) -> Path:
        return artifacts.write_json(self.path(filename), payload, self.meta())

    def write_csv(self, filename: str, frame: pd.DataFrame) -> Path:
        return artifacts.write_csv(self.path(filename), frame)

    def load_split(self) -> DatasetSplit:
        summary = self.read_json("ingest", "summary.json")
        parts = {
            name: [Trajectory.from_record(r) for r in self.read_jsonl("ingest", f"{name}.jsonl")]
            for name in SPLIT_NAMES
        }
        return DatasetSplit(
            **parts,
            poi_vocabulary=summary["poi_vocabulary"],
            user_vocabulary=summary["user_vocabulary"],
            removed_validation=summary["removed"]["validation"],
            removed_test=summary["removed"]["test"],
        )

    def load_sids(self) -> Dict[str, SemanticId]:
        from ..hsom import semantic_id

        table = {}
        for record in self.read_jsonl("quantize", "sids.jsonl"):
            sid = semantic_id([tuple(c) for c in record["codes"]], record["disambiguator"])
            if sid.rendered != record["sid"]:
                raise ValueError(f"SID of {record['poi']} does not match its codes")
            table[record["poi"]] = sid
        return table

    def load_categories(self) -> Dict[str, str]:
        return {r["poi"]: r["category"] for r in self.read_jsonl("featurize", "features.jsonl")}

    @abstractmethod
    def run(self) -> Dict[str, Path]:
        """Execute the stage and return its artifact paths keyed by a short label."""
        raise NotImplementedError
