"""
Pipeline runner.

Runs one stage, or the whole chain in order, against a shared configuration.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from .model.config import PipelineConfig
from .stages import STAGE_HANDLERS, get_stage_handler

logger = logging.getLogger(__name__)


class PipelineRunner:
    """Run pipeline stages for one configuration and work directory."""

    def __init__(self, config: PipelineConfig, force: bool = False, progress: bool = False):
        self.config = config
        self.force = force
        self.progress = progress

    @property
    def stages(self) -> List[str]:
        return list(STAGE_HANDLERS)

    def run_stage(
        self,
        name: str,
        inputs: Optional[Mapping[str, Path]] = None,
        out_dir: Optional[Path] = None,
    ) -> Dict[str, Path]:
        """
        Run a single stage.

        Args:
            name: Stage name
            inputs: Upstream artifact paths keyed by producing stage
            out_dir: Output directory instead of <work_dir>/<name>

        Returns:
            Artifact paths written by the stage, keyed by label
        """
        handler = get_stage_handler(name)(
            self.config, force=self.force, progress=self.progress, inputs=inputs, out_dir=out_dir
        )
        logger.info("running stage %s (digest %s)", name, handler.expected_digest(self.config)[:12])
        outputs = handler.execute()
        logger.info("stage %s wrote %d artifact(s) to %s", name, len(outputs), handler.output_dir)
        return outputs

    def run_all(self, stop_after: Optional[str] = None) -> Dict[str, Dict[str, Path]]:
        """Run the chain in order, optionally stopping after `stop_after`."""
        if stop_after is not None:
            get_stage_handler(stop_after)
        results = {}
        for name in self.stages:
            results[name] = self.run_stage(name)
            if name == stop_after:
                break
        return results
