"""Score stage: reward breakdowns for completions of the test prompts."""

import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterator, List

from .. import artifacts
from ..rewards import parse_completion, render_completion, resolve_weights, summarize, total_reward
from .base import BaseStage

logger = logging.getLogger(__name__)

POPULARITY_THINK = "recommending the most visited POIs"


class ScoreStage(BaseStage):
    name = "score"
    requires = ("prompts", "ingest", "quantize")
    sections = ("rewards",)

    def _popularity_completions(self) -> List[Dict[str, Any]]:
        """One completion per test prompt listing the k most visited train POIs."""
        k = self.config.rewards.k
        sids = self.load_sids()
        split = self.load_split()
        visits = Counter(e.poi for t in split.train for e in t.entries)
        top = [poi for poi, _ in sorted(visits.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]
        text = render_completion([sids[poi].rendered for poi in top], POPULARITY_THINK)
        return [
            {"user": p["user"], "completion": text, "ground_truth_sid": p["ground_truth_sid"]}
            for p in self.read_jsonl("prompts", "test.jsonl")
        ]

    def _completions(self) -> List[Dict[str, Any]]:
        path = self.config.rewards.completions
        if path is None:
            logger.info("no completions given, scoring the popularity baseline")
            return self._popularity_completions()
        if not Path(path).exists():
            raise FileNotFoundError(f"Completions file not found: {path}")
        _, records = artifacts.read_jsonl(path)
        return records

    def run(self) -> Dict[str, Path]:
        settings = self.config.rewards
        weights = resolve_weights(settings.weights, settings.k, settings.target_length)
        completions = self._completions()
        breakdowns = []

        def rows() -> Iterator[Dict[str, Any]]:
            for index, record in enumerate(completions):
                text = record["completion"]
                breakdown = total_reward(text, record["ground_truth_sid"], weights)
                breakdowns.append(breakdown)
                yield {
                    "index": index,
                    "user": record.get("user"),
                    "ground_truth_sid": record["ground_truth_sid"],
                    "items": parse_completion(text, weights.k).items,
                    **breakdown.model_dump(mode="json"),
                }

        path = self.write_jsonl("breakdowns.jsonl", rows())
        logger.info("scored %d completions: %s", len(breakdowns),
                    ", ".join(f"{k}={v:.4f}" for k, v in summarize(breakdowns).items()))
        return {"breakdowns": path}
