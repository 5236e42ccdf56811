"""Stage handlers registry."""

from typing import Dict, Type

from .base import BaseStage
from .continuity import ContinuityStage
from .encode import EncodeStage
from .evaluate import EvaluateStage
from .featurize import FeaturizeStage
from .ingest import IngestStage
from .prompts import PromptsStage
from .quantize import QuantizeStage
from .score import ScoreStage
from .simulate import SimulateStage

# Execution order of the `all` chain
STAGE_HANDLERS: Dict[str, Type[BaseStage]] = {
    "ingest": IngestStage,
    "featurize": FeaturizeStage,
    "encode": EncodeStage,
    "quantize": QuantizeStage,
    "continuity": ContinuityStage,
    "prompts": PromptsStage,
    "score": ScoreStage,
    "simulate": SimulateStage,
    "evaluate": EvaluateStage,
}


def get_stage_handler(name: str) -> Type[BaseStage]:
    """Return the stage handler class for the given stage name."""
    handler_cls = STAGE_HANDLERS.get(name)
    if handler_cls is None:
        raise ValueError(f"Unknown stage: {name}")
    return handler_cls
