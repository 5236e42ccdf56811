"""Quantize stage: residual SOM training and the SID table."""

import logging
from pathlib import Path
from typing import Dict

import numpy as np

from ..hsom import assign_sids, model_to_records, quantize_batch, topology_permutation_test, train_hsom
from .base import BaseStage

logger = logging.getLogger(__name__)

TOPOLOGY_PERMUTATIONS = 999


class QuantizeStage(BaseStage):
    name = "quantize"
    requires = ("encode",)
    sections = ("hsom",)
    primary = "sids.jsonl"
    seed_section = "hsom"

    def run(self) -> Dict[str, Path]:
        records = self.read_jsonl("encode", "embeddings.jsonl")
        pois = [r["poi"] for r in records]
        embeddings = np.array([r["embedding"] for r in records], dtype=np.float64)
        model, layer_reports = train_hsom(embeddings, self.config.hsom, seed=self.seed, progress=self.progress)
        sids = assign_sids(model, pois, embeddings)
        nodes, final_residuals = quantize_batch(model, embeddings)

        categories = self.load_categories()
        labels = [categories[p] for p in pois]
        topology = None
        if len(set(labels)) > 1:
            test = topology_permutation_test(
                model.layers[0], nodes[:, 0], labels, TOPOLOGY_PERMUTATIONS, np.random.default_rng(self.seed),
            )
            topology = {
                "labels": "category",
                "observed": test.observed,
                "null_mean": float(test.null.mean()),
                "p_value": test.p_value,
                "permutations": TOPOLOGY_PERMUTATIONS,
            }

        report = {
            "n_pois": len(pois),
            "layers": [r.to_record() for r in layer_reports],
            "residual_norm": {
                "initial": float(np.mean(np.linalg.norm(embeddings, axis=1))),
                "final": float(np.mean(np.linalg.norm(final_residuals, axis=1))),
            },
            "collisions": sum(1 for sid in sids.values() if sid.disambiguator > 0),
            "model_digest": model.digest(),
            "topology": topology,
        }
        logger.info("assigned %d SIDs, mean residual norm %.4f -> %.4f", len(sids),
                    report["residual_norm"]["initial"], report["residual_norm"]["final"])
        return {
            "sids": self.write_jsonl("sids.jsonl", (sid.to_record(poi) for poi, sid in sids.items())),
            "model": self.write_jsonl("hsom.jsonl", model_to_records(model)),
            "report": self.write_json("report.json", report),
        }
