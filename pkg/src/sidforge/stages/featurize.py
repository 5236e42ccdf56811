"""Featurize stage: one-hot semantic vectors per training POI."""

from pathlib import Path
from typing import Dict

from ..features import build_feature_table, to_record
from .base import BaseStage


class FeaturizeStage(BaseStage):
    name = "featurize"
    requires = ("ingest",)
    sections = ("features",)
    primary = "features.jsonl"

    def run(self) -> Dict[str, Path]:
        settings = self.config.features
        table = build_feature_table(
            self.load_split(),
            plus_code_length=settings.plus_code_length,
            utc_offset_minutes=settings.utc_offset_minutes,
            top_n=settings.top_n,
        )
        vocab = table.vocabulary
        return {
            "features": self.write_jsonl(
                "features.jsonl",
                (to_record(v, vocab, table.categories[v.poi]) for v in table.vectors),
            ),
            "vocabulary": self.write_json("vocabulary.json", {
                **vocab.model_dump(mode="json"),
                "block_widths": vocab.block_widths(),
                "block_offsets": {k: list(v) for k, v in vocab.block_offsets().items()},
                "width": vocab.width,
            }),
        }
