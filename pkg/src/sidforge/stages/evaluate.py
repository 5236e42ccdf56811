"""Evaluate stage: Acc@k/MRR of the scored lists, overall and per user activity group."""

from pathlib import Path
from typing import Any, Dict, List, Optional

from ..dataset import ACTIVITY_GROUPS, activity_groups
from ..rftsim import evaluate_rankings
from .base import BaseStage


class EvaluateStage(BaseStage):
    name = "evaluate"
    requires = ("score", "ingest", "simulate")
    sections = ()

    def run(self) -> Dict[str, Path]:
        cutoff = self.config.rewards.k
        ks = sorted({k for k in (1, 5, 10) if k <= cutoff} | {cutoff})
        rows = self.read_jsonl("score", "breakdowns.jsonl")
        groups = activity_groups(self.load_split())

        def report(selected: List[Dict[str, Any]]) -> Optional[Dict[str, Any]]:
            if not selected:
                return None
            result = evaluate_rankings([r["items"] for r in selected], [r["ground_truth_sid"] for r in selected],
                                       ks=ks, cutoff=cutoff)
            return {"acc_at": {str(k): v for k, v in result.acc_at.items()}, "mrr": result.mrr, "m": result.m}

        by_group = {
            name: report([r for r in rows if groups.get(r.get("user")) == name])
            for name in ACTIVITY_GROUPS
        }
        simulate = self.read_json("simulate", "report.json")
        return {
            "report": self.write_json("report.json", {
                "lists": report(rows),
                "activity_groups": by_group,
                "simulate": {
                    "uniform_mrr": simulate["uniform_mrr"],
                    "runs": {
                        name: {
                            "mrr": run["mrr"],
                            "acc_at": run["acc_at"],
                            "greedy_mrr": run["greedy"]["mrr"],
                            "decoded_mrr": run["decoded"]["mrr"],
                        }
                        for name, run in simulate["runs"].items()
                    },
                },
            }),
        }
