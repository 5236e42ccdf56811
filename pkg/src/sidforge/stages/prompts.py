"""Prompts stage: QA prompts with long- and short-term memory per trajectory."""

from pathlib import Path
from typing import Dict

from ..prompting import PromptBuilder, PromptSettings, prompt_record
from .base import BaseStage


class PromptsStage(BaseStage):
    name = "prompts"
    requires = ("ingest", "quantize")
    sections = ("prompts", "features")

    def run(self) -> Dict[str, Path]:
        settings = self.config.prompts
        offset = self.config.features.utc_offset_minutes
        split = self.load_split()
        builder = PromptBuilder(
            [t for items in split.splits().values() for t in items],
            self.load_sids(),
            PromptSettings(
                k=settings.k,
                max_history=settings.max_history,
                days_per_section=settings.days_per_section,
                system_text=settings.system_text,
                utc_offset_minutes=offset,
            ),
        )
        return {
            name: self.write_jsonl(
                f"{name}.jsonl",
                (prompt_record(builder.build(t), offset) for t in items),
            )
            for name, items in split.splits().items()
        }
