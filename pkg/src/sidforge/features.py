"""
POI semantic features.

Each POI becomes the concatenation of four binary blocks: its category, the
Plus Code cell it lies in, its top visiting hours and its top visitors. All
statistics come from the training split only.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from openlocationcode import openlocationcode as olc

from .errors import LeakageError
from .model.schema import DatasetSplit, FeatureVector, FeatureVocabulary

logger = logging.getLogger(__name__)

PAIR_CODE_LENGTHS = (2, 4, 6, 8, 10)
N_SLOTS = 24


@dataclass
class PoiVisits:
    """Training-split statistics of one POI."""
    category: str
    lat: float
    lon: float
    timestamps: List[int] = field(default_factory=list)
    visitors: Counter = field(default_factory=Counter)


def region_code(lat: float, lon: float, code_length: int = 6) -> str:
    """Plus Code of the cell containing (lat, lon), padded to the full 8+ format."""
    if code_length not in PAIR_CODE_LENGTHS:
        raise ValueError(f"code_length must be one of {PAIR_CODE_LENGTHS}, got {code_length}")
    return olc.encode(lat, lon, code_length)


def hour_slots(timestamps: Sequence[int], utc_offset_minutes: int = 0) -> np.ndarray:
    seconds = np.asarray(timestamps, dtype=np.int64) + utc_offset_minutes * 60
    return (seconds // 3600) % N_SLOTS


def temporal_feature(timestamps: Sequence[int], utc_offset_minutes: int = 0, top_n: int = 10) -> List[int]:
    """
    One-hot over the 24 hour-of-day slots with the top `top_n` busiest slots set.

    Ties are broken by the lower slot index; empty slots are never set.
    """
    if len(timestamps) == 0:
        raise ValueError("temporal_feature needs at least one visit")
    counts = np.bincount(hour_slots(timestamps, utc_offset_minutes), minlength=N_SLOTS)
    ranked = sorted((slot for slot in range(N_SLOTS) if counts[slot] > 0),
                    key=lambda slot: (-counts[slot], slot))
    onehot = [0] * N_SLOTS
    for slot in ranked[:top_n]:
        onehot[slot] = 1
    return onehot


def top_visitors(visitors: Counter, top_n: int = 10) -> List[str]:
    """Most frequent visitors, ties broken by user id."""
    return [user for user, _ in sorted(visitors.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]


def visitor_feature(
    poi: str,
    train_visits: Dict[str, PoiVisits],
    users: Sequence[str],
    top_n: int = 10,
) -> List[int]:
    """One-hot over the train user vocabulary with the POI's top visitors set."""
    if poi not in train_visits:
        raise LeakageError(f"POI {poi} has no training visits")
    position = {user: i for i, user in enumerate(users)}
    onehot = [0] * len(users)
    for user in top_visitors(train_visits[poi].visitors, top_n):
        onehot[position[user]] = 1
    return onehot


def index_training_visits(split: DatasetSplit) -> Dict[str, PoiVisits]:
    """
    Collect per-POI visit statistics from the training split.

    A POI's category is its most frequent label (ties broken alphabetically);
    its coordinates are those of its first training check-in.
    """
    labels: Dict[str, Counter] = defaultdict(Counter)
    index: Dict[str, PoiVisits] = {}
    for trajectory in split.train:
        for entry in trajectory.entries:
            labels[entry.poi][entry.category] += 1
            if entry.poi not in index:
                index[entry.poi] = PoiVisits(category="", lat=entry.lat, lon=entry.lon)
            visits = index[entry.poi]
            visits.timestamps.append(entry.timestamp)
            visits.visitors[entry.user] += 1
    for poi, visits in index.items():
        visits.category = sorted(labels[poi].items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
    return dict(sorted(index.items()))


def build_vocabulary(
    index: Dict[str, PoiVisits],
    plus_code_length: int = 6,
    utc_offset_minutes: int = 0,
    top_n: int = 10,
) -> FeatureVocabulary:
    """Freeze the block vocabularies from the training index."""
    categories = sorted({v.category for v in index.values()})
    regions = sorted({region_code(v.lat, v.lon, plus_code_length) for v in index.values()})
    users = sorted({u for v in index.values() for u in v.visitors})
    return FeatureVocabulary(
        categories=categories,
        regions=regions,
        users=users,
        n_slots=N_SLOTS,
        plus_code_length=plus_code_length,
        utc_offset_minutes=utc_offset_minutes,
        top_n=top_n,
    )


def build_feature_vector(poi: str, index: Dict[str, PoiVisits], vocab: FeatureVocabulary) -> FeatureVector:
    if poi not in index:
        raise LeakageError(f"POI {poi} has no training visits")
    visits = index[poi]
    category = [0] * len(vocab.categories)
    category[vocab.categories.index(visits.category)] = 1
    region = [0] * len(vocab.regions)
    region[vocab.regions.index(region_code(visits.lat, visits.lon, vocab.plus_code_length))] = 1
    return FeatureVector(
        poi=poi,
        category_onehot=category,
        region_onehot=region,
        temporal_onehot=temporal_feature(visits.timestamps, vocab.utc_offset_minutes, vocab.top_n),
        visitor_onehot=visitor_feature(poi, index, vocab.users, vocab.top_n),
    )


def build_feature_table(
    split: DatasetSplit,
    plus_code_length: int = 6,
    utc_offset_minutes: int = 0,
    top_n: int = 10,
) -> "FeatureTable":
    """Feature vectors for every training POI, sorted by POI id."""
    index = index_training_visits(split)
    vocab = build_vocabulary(index, plus_code_length, utc_offset_minutes, top_n)
    vectors = [build_feature_vector(poi, index, vocab) for poi in index]
    logger.info(
        "built %d feature vectors of width %d (%s)",
        len(vectors), vocab.width,
        ", ".join(f"{name}={width}" for name, width in vocab.block_widths().items()),
    )
    return FeatureTable(
        vectors=vectors,
        vocabulary=vocab,
        categories={poi: v.category for poi, v in index.items()},
    )


@dataclass
class FeatureTable:
    vectors: List[FeatureVector]
    vocabulary: FeatureVocabulary
    categories: Dict[str, str]

    @property
    def pois(self) -> List[str]:
        return [v.poi for v in self.vectors]

    def matrix(self) -> np.ndarray:
        return np.array([v.concatenated for v in self.vectors], dtype=np.float64)


def to_record(vector: FeatureVector, vocab: FeatureVocabulary, category: Optional[str] = None) -> Dict[str, Any]:
    """Compact JSON form: block indices instead of full one-hot vectors."""
    record = {
        "poi": vector.poi,
        "blocks": {
            "category_index": vector.category_onehot.index(1),
            "region_code": vocab.regions[vector.region_onehot.index(1)],
            "temporal_slots": [i for i, bit in enumerate(vector.temporal_onehot) if bit],
            "visitor_ids": [vocab.users[i] for i, bit in enumerate(vector.visitor_onehot) if bit],
        },
    }
    if category is not None:
        record["category"] = category
    return record


def from_record(record: Dict[str, Any], vocab: FeatureVocabulary) -> FeatureVector:
    blocks = record["blocks"]

    def onehot(width: int, positions: Sequence[int]) -> List[int]:
        bits = [0] * width
        for i in positions:
            bits[i] = 1
        return bits

    users = {user: i for i, user in enumerate(vocab.users)}
    return FeatureVector(
        poi=record["poi"],
        category_onehot=onehot(len(vocab.categories), [blocks["category_index"]]),
        region_onehot=onehot(len(vocab.regions), [vocab.regions.index(blocks["region_code"])]),
        temporal_onehot=onehot(vocab.n_slots, blocks["temporal_slots"]),
        visitor_onehot=onehot(len(vocab.users), [users[u] for u in blocks["visitor_ids"]]),
    )
