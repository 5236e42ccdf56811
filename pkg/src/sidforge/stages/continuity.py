"""Continuity stage: NICC/NICS of the SID space against its baselines."""

import logging
from pathlib import Path
from typing import Any, Dict

import pandas as pd

from ..continuity import (
    IdSpace,
    continuity_report,
    flatten_to_linear,
    permuted_assignments,
    report_rows,
    sid_coordinates,
)
from .base import BaseStage

logger = logging.getLogger(__name__)


def _summary(report) -> Dict[str, Any]:
    return {
        "space": report.space,
        "global_avg_nicc": report.global_avg_nicc,
        "global_avg_nics": report.global_avg_nics,
    }


class ContinuityStage(BaseStage):
    name = "continuity"
    requires = ("quantize", "featurize")
    sections = ("continuity",)
    seed_section = "continuity"

    def run(self) -> Dict[str, Path]:
        settings = self.config.continuity
        sids = self.load_sids()
        categories = self.load_categories()
        grids = [(r["height"], r["width"]) for r in self.read_jsonl("quantize", "hsom.jsonl")]
        layer = settings.layer
        if layer is not None and layer > len(grids):
            raise ValueError(f"continuity layer {layer} exceeds the {len(grids)} SID layers")
        space = IdSpace.parse(settings.space) if settings.space else IdSpace.for_grids(grids, layer)

        coords = sid_coordinates(sids, layer)
        kwargs = dict(samples=settings.samples, seed=self.seed, layer=layer,
                      top_categories=settings.top_categories)
        report = continuity_report(coords, categories, space, **kwargs)
        permuted = continuity_report(permuted_assignments(coords, self.seed), categories, space, **kwargs)
        baselines = {"permuted": _summary(permuted)}
        if layer is not None and space.kind == "grid" and space.dims == 2:
            height, width = space.bounds
            linear_space = IdSpace(kind="linear", bounds=(height * width,))
            linear = continuity_report(flatten_to_linear(coords, width), categories, linear_space, **kwargs)
            baselines["linear"] = _summary(linear)

        payload = report.model_dump(mode="json")
        payload["baselines"] = baselines
        return {
            "report": self.write_json("report.json", payload),
            "per_category": self.write_csv("per_category.csv", pd.DataFrame(report_rows(report))),
        }
