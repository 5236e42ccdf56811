"""
Pipeline configuration.

One YAML file, nested by stage, validated into PipelineConfig. The shipped
default lives in sidforge/config/default.yaml.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config" / "default.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ColumnMapping(_Section):
    """Header names of the check-in columns in a delimited input file."""
    user: str = "user"
    poi: str = "poi"
    category: str = "category"
    timestamp: str = "timestamp"
    lat: str = "lat"
    lon: str = "lon"


class SynthConfig(_Section):
    """Planted-cluster synthetic corpus."""
    n_clusters: int = Field(4, ge=1)
    n_users: int = Field(40, ge=1)
    n_pois: int = Field(60, ge=1)
    span_days: int = Field(120, ge=1)
    sessions_per_user: int = Field(30, ge=1)
    home_affinity: float = Field(0.85, ge=0.0, le=1.0)
    seed: int = 0


class IngestConfig(_Section):
    input: Optional[Path] = None
    separator: Optional[str] = None
    columns: ColumnMapping = Field(default_factory=ColumnMapping)
    delta_hours: float = Field(24.0, gt=0.0)
    min_poi_visits: int = Field(10, ge=1)
    min_user_records: int = Field(10, ge=1)
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    synth: SynthConfig = Field(default_factory=SynthConfig)


class FeaturesConfig(_Section):
    plus_code_length: int = 6
    utc_offset_minutes: int = 0
    top_n: int = Field(10, ge=1, le=10)


class EncoderConfig(_Section):
    enabled: bool = True
    hidden: int = Field(256, ge=1)
    dim: int = Field(64, ge=2)
    tau: float = Field(0.1, gt=0.0)
    noise_std: float = Field(0.1, ge=0.0)
    batch_size: int = Field(128, ge=1)
    learning_rate: float = Field(1e-2, gt=0.0)
    epochs: int = Field(30, ge=0)
    loss_window: int = Field(5, ge=1)
    seed: Optional[int] = Field(None, description="overrides the seed derived from the master seed")


class HsomConfig(_Section):
    grids: List[Tuple[int, int]] = Field(default_factory=lambda: [(4, 6), (4, 6), (8, 8), (8, 8)])
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(256, ge=1)
    sigma_end: float = Field(0.5, gt=0.0)
    eta_start: float = Field(0.5, gt=0.0)
    eta_end: float = Field(0.01, gt=0.0)
    eps: float = Field(1e-9, ge=0.0)
    init_scale: float = Field(0.1, ge=0.0)
    movement_tol: Optional[float] = Field(None, gt=0.0)
    seed: Optional[int] = Field(None, description="overrides the seed derived from the master seed")

    @field_validator("grids")
    @classmethod
    def _check_grids(cls, grids: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        if not grids:
            raise ValueError("at least one SOM layer is required")
        if len(grids) > 26:
            raise ValueError(f"at most 26 layers can be rendered, got {len(grids)}")
        for height, width in grids:
            if height < 1 or width < 1:
                raise ValueError(f"invalid grid {height}x{width}")
        return grids


class ContinuityConfig(_Section):
    space: Optional[str] = Field(None, description="e.g. 'grid:4x6'; defaults to the layer's grid")
    layer: Optional[int] = Field(1, ge=1, description="None evaluates concatenated coordinates")
    samples: int = Field(1000, ge=100)
    top_categories: int = Field(10, ge=1)
    seed: Optional[int] = Field(None, description="overrides the seed derived from the master seed")


class PromptsConfig(_Section):
    k: int = Field(10, ge=1)
    max_history: int = Field(200, ge=0)
    days_per_section: float = Field(30.0, gt=0.0)
    system_text: str = ""


class RewardsConfig(_Section):
    weights: str = "default"
    k: int = Field(10, ge=1)
    target_length: int = Field(512, ge=1)
    completions: Optional[Path] = None


class SimulateConfig(_Section):
    env: str = "synth:50x20"
    steps: int = Field(500, ge=0)
    group: int = Field(8, ge=2)
    k: int = Field(10, ge=1)
    weights: str = "default"
    temperature: float = Field(1.0, gt=0.0)
    learning_rate: float = Field(0.1, gt=0.0)
    kl_coeff: float = Field(0.01, ge=0.0)
    eval_every: int = Field(50, ge=1)
    eval_lists: int = Field(64, ge=1, description="sampled lists per context behind the reported MRR")
    decode_draws: int = Field(100, ge=1, description="single-item draws per context for the sampled decoder")
    with_replacement: bool = False
    target_length: int = Field(64, ge=1)
    ablations: List[str] = Field(default_factory=list)
    seed: Optional[int] = Field(None, description="overrides the seed derived from the master seed")


class PipelineConfig(_Section):
    """Full pipeline configuration; every artifact echoes it in its header."""
    seed: int = 0
    work_dir: Path = Path("runs/default")
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    hsom: HsomConfig = Field(default_factory=HsomConfig)
    continuity: ContinuityConfig = Field(default_factory=ContinuityConfig)
    prompts: PromptsConfig = Field(default_factory=PromptsConfig)
    rewards: RewardsConfig = Field(default_factory=RewardsConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def digest(self, sections: Optional[Iterable[str]] = None) -> str:
        """
        SHA-256 of the canonical JSON dump of `sections` (all by default) plus
        the master seed. Paths are excluded so runs can move.
        """
        payload = self.model_dump(mode="json", exclude={"work_dir"})
        payload["ingest"].pop("input", None)
        payload["rewards"].pop("completions", None)
        if sections is not None:
            wanted = set(sections) | {"seed"}
            payload = {key: value for key, value in payload.items() if key in wanted}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Dict[str, Any], clear: Iterable[str] = ()) -> "PipelineConfig":
        """
        Apply dotted-key overrides, e.g. {"hsom.epochs": 10}. None values are
        skipped; keys listed in `clear` are set to None.
        """
        data = self.model_dump(mode="python")
        cleared = {key: None for key in clear}
        for dotted, value in {**overrides, **cleared}.items():
            if value is None and dotted not in cleared:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            if leaf not in node:
                raise ValueError(f"Unknown config key: {dotted}")
            node[leaf] = value
        return PipelineConfig.model_validate(data)


def derive_seed(master: int, name: str) -> int:
    """Stage sub-seed: first 8 bytes of sha256('<master>:<name>')."""
    digest = hashlib.sha256(f"{master}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def load_config(config_path: Optional[Path] = None) -> PipelineConfig:
    """Load a YAML config file; the packaged default is used when no path is given."""
    if config_path is None:
        config_path = DEFAULT_CONFIG_PATH
    with open(config_path, "r") as f:
        data = yaml.safe_load(f) or {}
    return PipelineConfig.model_validate(data)
