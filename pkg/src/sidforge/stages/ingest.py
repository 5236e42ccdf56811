"""Ingest stage: check-ins to chronological trajectory splits."""

import logging
from pathlib import Path
from typing import Dict

from ..dataset import build_trajectories, load_checkins, preprocess, split_chronological, synth_generate
from .base import SPLIT_NAMES, BaseStage

logger = logging.getLogger(__name__)

MAX_REPORTED_REJECTS = 20


class IngestStage(BaseStage):
    name = "ingest"
    sections = ("ingest",)
    primary = "train.jsonl"

    def run(self) -> Dict[str, Path]:
        settings = self.config.ingest
        outputs = {}
        rejects = []
        if settings.input is not None:
            loaded = load_checkins(settings.input, settings.columns, settings.separator)
            records, rejects = loaded.records, loaded.rejects
            source = str(settings.input)
        else:
            corpus = synth_generate(settings.synth)
            records = corpus.records
            source = f"synth:{settings.synth.seed}"
            outputs["ledger"] = self.write_jsonl(
                "ledger.jsonl",
                ({"poi": poi, "cluster": cluster} for poi, cluster in sorted(corpus.ledger.items())),
            )

        kept = preprocess(records, settings.min_poi_visits, settings.min_user_records)
        trajectories = build_trajectories(kept, settings.delta_hours)
        split = split_chronological(trajectories, settings.ratios)

        for name, items in split.splits().items():
            outputs[name] = self.write_jsonl(f"{name}.jsonl", (t.to_record() for t in items))
        outputs["summary"] = self.write_json("summary.json", {
            "source": source,
            "records_loaded": len(records),
            "records_rejected": len(rejects),
            "rejects": [
                {"line": e.line, "column": e.column, "reason": e.reason}
                for e in rejects[:MAX_REPORTED_REJECTS]
            ],
            "records_kept": len(kept),
            "trajectories": {name: len(split.splits()[name]) for name in SPLIT_NAMES},
            "removed": {"validation": split.removed_validation, "test": split.removed_test},
            "poi_vocabulary": split.poi_vocabulary,
            "user_vocabulary": split.user_vocabulary,
        })
        return outputs
