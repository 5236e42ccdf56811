"""
Record and report schema shared across pipeline stages.

Defines the structure for:
- Check-in records, trajectories and chronological splits
- POI feature vectors and their block vocabulary
- Prompt instances, parsed completions and reward breakdowns
- Evaluation and semantic-continuity reports
- The metadata header carried by every artifact
"""

from typing import Any, ClassVar, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class CheckinRecord(BaseModel):
    """One check-in: user u visits POI p of category c at time t and location g."""
    model_config = ConfigDict(frozen=True)

    user: str = Field(..., min_length=1, description="User identifier")
    poi: str = Field(..., min_length=1, description="POI identifier")
    category: str = Field(..., description="Category label")
    timestamp: int = Field(..., gt=0, description="UTC seconds")
    lat: float = Field(..., ge=-90.0, le=90.0, description="Latitude in degrees")
    lon: float = Field(..., ge=-180.0, le=180.0, description="Longitude in degrees")


class Trajectory(BaseModel):
    """A user's check-ins inside one time window, strictly ascending in time."""
    model_config = ConfigDict(frozen=True)

    user: str
    entries: Tuple[CheckinRecord, ...]

    @model_validator(mode="after")
    def _check_entries(self) -> "Trajectory":
        if len(self.entries) < 2:
            raise ValueError("a trajectory needs at least 2 check-ins")
        for prev, cur in zip(self.entries, self.entries[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError(
                    f"entries not strictly ascending at {prev.timestamp} -> {cur.timestamp}"
                )
        for entry in self.entries:
            if entry.user != self.user:
                raise ValueError(f"entry of user {entry.user} in trajectory of {self.user}")
        return self

    @property
    def start(self) -> int:
        return self.entries[0].timestamp

    @property
    def end(self) -> int:
        return self.entries[-1].timestamp

    @property
    def span_seconds(self) -> int:
        return self.end - self.start

    def to_record(self) -> Dict[str, Any]:
        """Serialize as {user, entries:[{poi, category, timestamp, lat, lon}]}."""
        return {
            "user": self.user,
            "entries": [
                entry.model_dump(exclude={"user"}) for entry in self.entries
            ],
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "Trajectory":
        user = record["user"]
        return cls(
            user=user,
            entries=tuple(CheckinRecord(user=user, **entry) for entry in record["entries"]),
        )


class DatasetSplit(BaseModel):
    """Chronological train/validation/test split with the train vocabularies."""
    train: List[Trajectory] = Field(default_factory=list)
    validation: List[Trajectory] = Field(default_factory=list)
    test: List[Trajectory] = Field(default_factory=list)
    poi_vocabulary: List[str] = Field(default_factory=list, description="Sorted train POIs")
    user_vocabulary: List[str] = Field(default_factory=list, description="Sorted train users")
    removed_validation: int = Field(0, ge=0, description="Validation trajectories dropped as unseen")
    removed_test: int = Field(0, ge=0, description="Test trajectories dropped as unseen")

    @model_validator(mode="after")
    def _check_leakage(self) -> "DatasetSplit":
        pois = set(self.poi_vocabulary)
        users = set(self.user_vocabulary)
        for name in ("validation", "test"):
            for trajectory in getattr(self, name):
                if trajectory.user not in users:
                    raise ValueError(f"{name} user {trajectory.user} absent from train")
                for entry in trajectory.entries:
                    if entry.poi not in pois:
                        raise ValueError(f"{name} POI {entry.poi} absent from train")
        return self

    def splits(self) -> Dict[str, List[Trajectory]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


class FeatureVocabulary(BaseModel):
    """Frozen block vocabularies; block order is category, region, temporal, visitor."""
    categories: List[str]
    regions: List[str]
    users: List[str]
    n_slots: int = 24
    plus_code_length: int = 6
    utc_offset_minutes: int = 0
    top_n: int = 10

    BLOCKS: ClassVar[Tuple[str, ...]] = ("category", "region", "temporal", "visitor")

    def block_widths(self) -> Dict[str, int]:
        return {
            "category": len(self.categories),
            "region": len(self.regions),
            "temporal": self.n_slots,
            "visitor": len(self.users),
        }

    def block_offsets(self) -> Dict[str, Tuple[int, int]]:
        """Half-open [start, stop) column range of each block in the concatenation."""
        offsets = {}
        start = 0
        for name, width in self.block_widths().items():
            offsets[name] = (start, start + width)
            start += width
        return offsets

    @property
    def width(self) -> int:
        return sum(self.block_widths().values())


class FeatureVector(BaseModel):
    """Concatenated one-hot semantic representation of a POI."""
    poi: str
    category_onehot: List[int]
    region_onehot: List[int]
    temporal_onehot: List[int]
    visitor_onehot: List[int]

    @model_validator(mode="after")
    def _check_blocks(self) -> "FeatureVector":
        for name in ("category_onehot", "region_onehot", "temporal_onehot", "visitor_onehot"):
            block = getattr(self, name)
            if any(bit not in (0, 1) for bit in block):
                raise ValueError(f"{name} must be binary")
        if sum(self.category_onehot) != 1:
            raise ValueError("category block must have exactly one bit set")
        if sum(self.region_onehot) != 1:
            raise ValueError("region block must have exactly one bit set")
        if not 1 <= sum(self.temporal_onehot) <= 10:
            raise ValueError("temporal block must have between 1 and 10 bits set")
        if not 1 <= sum(self.visitor_onehot) <= 10:
            raise ValueError("visitor block must have between 1 and 10 bits set")
        return self

    @property
    def concatenated(self) -> List[int]:
        return (
            self.category_onehot + self.region_onehot
            + self.temporal_onehot + self.visitor_onehot
        )


class PromptInstance(BaseModel):
    """A QA prompt built from long-term and short-term memory of one user."""
    user: str
    system_text: str
    history_block: List[str] = Field(default_factory=list, description="Rendered long-term check-ins")
    current_block: List[str] = Field(default_factory=list, description="Rendered short-term check-ins")
    target_time: int = Field(..., gt=0)
    ground_truth_sid: str
    k: int = Field(10, ge=1)


class ParsedCompletion(BaseModel):
    """A model completion split into reasoning text and answer items."""
    syntax_ok: bool
    items: List[str] = Field(default_factory=list)
    think_text: str = ""
    output_length: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _items_need_syntax(self) -> "ParsedCompletion":
        if not self.syntax_ok and self.items:
            raise ValueError("items must be empty when syntax is invalid")
        return self


class RewardWeights(BaseModel):
    """Weights of the five list rewards plus list length and target output length."""
    model_config = ConfigDict(frozen=True)

    w_format: float = Field(0.4, ge=0.0)
    w_rr: float = Field(0.42, ge=0.0)
    w_soft: float = Field(0.12, ge=0.0)
    w_distinct: float = Field(0.06, ge=0.0)
    w_length: float = Field(0.2, ge=0.0)
    k: int = Field(10, ge=1)
    target_length: int = Field(512, ge=1)

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.w_format, self.w_rr, self.w_soft, self.w_distinct, self.w_length)

    def max_total(self) -> float:
        return self.w_format + self.w_rr + self.w_soft + self.k * self.w_distinct + self.w_length


class RewardBreakdown(BaseModel):
    """The five reward components of a completion and their weighted sum."""
    format: float
    rr: float
    soft: float
    distinct: float
    length: float
    total: float
    rank: Optional[int] = Field(None, ge=1, description="Rank of the ground truth, None if absent")


class EvalReport(BaseModel):
    """Acc@k and MRR@cutoff over m test cases."""
    acc_at: Dict[int, float]
    mrr: float = Field(..., ge=0.0, le=1.0)
    m: int = Field(..., ge=0)
    cutoff: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _check_ordering(self) -> "EvalReport":
        previous = 0.0
        for k in sorted(self.acc_at):
            value = self.acc_at[k]
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"acc@{k}={value} outside [0, 1]")
            if value < previous:
                raise ValueError(f"acc@{k} decreases with k")
            previous = value
        if 1 in self.acc_at and self.acc_at[1] > self.mrr:
            raise ValueError("acc@1 exceeds MRR")
        if self.cutoff in self.acc_at and self.mrr > self.acc_at[self.cutoff]:
            raise ValueError(f"MRR exceeds acc@{self.cutoff}")
        return self


class CategoryContinuity(BaseModel):
    """Continuity statistics of one category in ID space."""
    size: int = Field(..., ge=1)
    centroid: List[float]
    sigma_c: float = Field(..., ge=0.0)
    sigma_random: Optional[float] = Field(None, ge=0.0)
    nicc: Optional[float] = Field(None, ge=0.0, description="None for classes of size 1")
    separation: Optional[float] = Field(None, ge=0.0, description="Mean centroid distance to other classes")
    nics: Optional[float] = Field(None, ge=0.0)


class ContinuityReport(BaseModel):
    """Null-referenced compactness and separation of categories in ID space."""
    space: str
    layer: Optional[int] = Field(None, description="SID layer evaluated, None for concatenated codes")
    per_category: Dict[str, CategoryContinuity] = Field(default_factory=dict)
    global_avg_nicc: Optional[float] = Field(None, ge=0.0)
    global_avg_nics: Optional[float] = Field(None, ge=0.0)
    delta_inter: Optional[float] = Field(None, ge=0.0)
    delta_random: Optional[float] = Field(None, ge=0.0)
    undefined_categories: List[str] = Field(default_factory=list)
    top_categories: List[str] = Field(default_factory=list)
    null_samples: int = Field(..., ge=1)
    seed: int


class ArtifactMeta(BaseModel):
    """Metadata header written as the first line of every artifact."""
    stage: str
    stage_version: str
    config_digest: str
    config: Dict[str, Any] = Field(default_factory=dict)
    created_by: str


class SemanticId(BaseModel):
    """Per-layer grid coordinates of a POI plus a collision disambiguator."""
    model_config = ConfigDict(frozen=True)

    codes: Tuple[Tuple[int, int, int], ...] = Field(..., description="(layer, row, col), layers numbered from 1")
    disambiguator: int = Field(0, ge=0)
    rendered: str

    def layer_code(self, layer: int) -> Tuple[int, int]:
        _, row, col = self.codes[layer - 1]
        return row, col

    def to_record(self, poi: str) -> Dict[str, Any]:
        return {
            "poi": poi,
            "sid": self.rendered,
            "codes": [list(c) for c in self.codes],
            "disambiguator": self.disambiguator,
        }
