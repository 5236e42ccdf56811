"""Simulate stage: toy GRPO runs under the configured reward weights and ablations."""

import logging
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from ..model.schema import EvalReport
from ..rewards import resolve_weights
from ..rftsim import make_env, parse_env, train_toy, uniform_mrr
from .base import BaseStage

logger = logging.getLogger(__name__)


def _summary(report: EvalReport) -> Dict[str, Any]:
    return {"acc_at": {str(k): v for k, v in report.acc_at.items()}, "mrr": report.mrr}


class SimulateStage(BaseStage):
    name = "simulate"
    requires = ("quantize",)
    sections = ("simulate",)
    seed_section = "simulate"

    def run(self) -> Dict[str, Path]:
        settings = self.config.simulate
        n_items, n_contexts = parse_env(settings.env)
        table = sorted(sid.rendered for sid in self.load_sids().values())
        if len(table) < n_items:
            logger.warning("SID table has %d entries, fewer than %d; using synthetic SIDs",
                           len(table), n_items)
            table = None
        env = make_env(n_items, n_contexts, seed=self.seed, items=table)

        runs: Dict[str, Any] = {}
        curves: List[pd.DataFrame] = []
        for name in [settings.weights, *[a for a in settings.ablations if a != settings.weights]]:
            weights = resolve_weights(name, settings.k, settings.target_length)
            run = train_toy(env, settings, weights, seed=self.seed, progress=self.progress)
            runs[name] = {
                "weights": list(weights.as_tuple()),
                **_summary(run.report),
                "greedy": _summary(run.greedy_report),
                "decoded": _summary(run.decoded_report),
                "m": run.report.m,
                "final_mean_distinct": run.final_mean_distinct,
            }
            curve = pd.DataFrame(run.curve)
            curve.insert(0, "run", name)
            curves.append(curve)

        return {
            "curve": self.write_csv("curve.csv", pd.concat(curves, ignore_index=True)),
            "report": self.write_json("report.json", {
                "env": settings.env,
                "steps": settings.steps,
                "group": settings.group,
                "uniform_mrr": uniform_mrr(n_items, settings.k),
                "primary": settings.weights,
                "eval_lists": settings.eval_lists,
                "decode_draws": settings.decode_draws,
                "runs": runs,
            }),
        }
