"""Encode stage: contrastive embeddings of the feature vectors."""

from pathlib import Path
from typing import Dict

import numpy as np

from ..encoder import train_encoder
from ..features import from_record
from ..model.schema import FeatureVocabulary
from .base import BaseStage


class EncodeStage(BaseStage):
    name = "encode"
    requires = ("featurize",)
    sections = ("encoder",)
    primary = "embeddings.jsonl"
    seed_section = "encoder"

    def run(self) -> Dict[str, Path]:
        payload = self.read_json("featurize", "vocabulary.json")
        vocab = FeatureVocabulary.model_validate(
            {key: payload[key] for key in FeatureVocabulary.model_fields}
        )
        vectors = [from_record(r, vocab) for r in self.read_jsonl("featurize", "features.jsonl")]
        matrix = np.array([v.concatenated for v in vectors], dtype=np.float64)
        result = train_encoder(matrix, self.config.encoder, seed=self.seed, progress=self.progress)
        return {
            "embeddings": self.write_jsonl(
                "embeddings.jsonl",
                ({"poi": v.poi, "embedding": row.tolist()} for v, row in zip(vectors, result.embeddings)),
            ),
            "encoder": self.write_json("encoder.json", {
                "enabled": result.params is not None,
                "params": result.params.to_record() if result.params is not None else None,
                "digest": result.params.digest() if result.params is not None else None,
                "loss_history": result.loss_history,
            }),
        }
