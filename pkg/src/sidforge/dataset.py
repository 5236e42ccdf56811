"""
Check-in ingest, preprocessing, trajectory construction and chronological splits.

Also generates the planted-cluster synthetic corpus used as desk-scale oracle data.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import EmptyDatasetError, RowParseError
from .model.config import ColumnMapping, SynthConfig
from .model.schema import CheckinRecord, DatasetSplit, Trajectory

logger = logging.getLogger(__name__)

# Foursquare dumps write "Tue Apr 03 18:00:09 +0000 2012"
FOURSQUARE_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"
SYNTH_EPOCH = 1333238400  # 2012-04-01T00:00:00Z
CATEGORY_NAMES = [
    "Coffee Shop", "Park", "Office", "Bar", "Gym",
    "Museum", "Train Station", "Grocery Store",
]


@dataclass
class LoadResult:
    """Parsed records plus the rows rejected on the way."""
    records: List[CheckinRecord]
    rejects: List[RowParseError] = field(default_factory=list)


@dataclass
class SynthCorpus:
    """Synthetic check-ins with the planted ground truth."""
    records: List[CheckinRecord]
    ledger: Dict[str, int]
    config: SynthConfig

    @property
    def emitted(self) -> int:
        return len(self.records)

    def clusters(self) -> Dict[int, List[str]]:
        groups: Dict[int, List[str]] = defaultdict(list)
        for poi, cluster in sorted(self.ledger.items()):
            groups[cluster].append(poi)
        return dict(groups)


def parse_timestamp(value: str) -> int:
    """Epoch seconds from a numeric string, a Foursquare date or an ISO-8601 date."""
    text = value.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return int(float(text))
    except ValueError:
        pass
    try:
        return int(datetime.strptime(text, FOURSQUARE_TIME_FORMAT).timestamp())
    except ValueError:
        pass
    parsed = pd.to_datetime(text, utc=True)
    if pd.isna(parsed):
        raise ValueError(f"unparseable timestamp '{text}'")
    return int(parsed.timestamp())


def _parse_row(row: Dict[str, str], columns: ColumnMapping, line: int) -> CheckinRecord:
    try:
        timestamp = parse_timestamp(row[columns.timestamp])
    except (ValueError, OverflowError) as e:
        raise RowParseError(line, columns.timestamp, str(e))
    values = {}
    for name in ("lat", "lon"):
        column = getattr(columns, name)
        try:
            values[name] = float(row[column])
        except ValueError:
            raise RowParseError(line, column, f"not a number: '{row[column]}'")
        if not math.isfinite(values[name]):
            raise RowParseError(line, column, f"not finite: '{row[column]}'")
    try:
        return CheckinRecord(
            user=row[columns.user].strip(),
            poi=row[columns.poi].strip(),
            category=row[columns.category].strip(),
            timestamp=timestamp,
            lat=values["lat"],
            lon=values["lon"],
        )
    except ValidationError as e:
        error = e.errors()[0]
        field_name = str(error["loc"][0]) if error["loc"] else "?"
        column = getattr(columns, field_name, field_name)
        raise RowParseError(line, column, error["msg"])


def load_checkins(
    path: Path,
    columns: Optional[ColumnMapping] = None,
    separator: Optional[str] = None,
) -> LoadResult:
    """
    Parse a delimited check-in file with a header row.

    Args:
        path: CSV or TSV file
        columns: Header names of the six check-in columns
        separator: Field separator; inferred from the suffix when omitted

    Returns:
        LoadResult with the parsed records and one RowParseError per rejected row
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Check-in file not found: {path}")
    columns = columns or ColumnMapping()
    if separator is None:
        separator = "\t" if path.suffix.lower() in (".tsv", ".txt") else ","

    frame = pd.read_csv(path, sep=separator, dtype=str, keep_default_na=False)
    missing = [c for c in columns.model_dump().values() if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} lacks columns {missing}; found {list(frame.columns)}")

    records = []
    rejects = []
    for index, row in enumerate(frame.to_dict(orient="records")):
        line = index + 2  # 1-based, after the header
        try:
            records.append(_parse_row(row, columns, line))
        except RowParseError as e:
            rejects.append(e)

    if rejects:
        logger.warning("rejected %d of %d rows in %s (first: %s)",
                       len(rejects), len(frame), path, rejects[0])
    logger.info("loaded %d check-ins from %s", len(records), path)
    return LoadResult(records=records, rejects=rejects)


def write_checkins(records: Sequence[CheckinRecord], path: Path, separator: str = ",") -> Path:
    """Write records as a delimited file readable by load_checkins."""
    frame = pd.DataFrame([r.model_dump() for r in records],
                         columns=["user", "poi", "category", "timestamp", "lat", "lon"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep=separator, index=False, float_format="%.7f")
    return path


def preprocess(
    records: Sequence[CheckinRecord],
    min_poi_visits: int = 10,
    min_user_records: int = 10,
) -> List[CheckinRecord]:
    """
    Drop POIs with fewer than `min_poi_visits` visits and users with fewer than
    `min_user_records` records, repeating until neither filter removes anything.
    """
    current = list(records)
    rounds = 0
    while True:
        rounds += 1
        poi_counts = Counter(r.poi for r in current)
        kept = [r for r in current if poi_counts[r.poi] >= min_poi_visits]
        user_counts = Counter(r.user for r in kept)
        kept = [r for r in kept if user_counts[r.user] >= min_user_records]
        if len(kept) == len(current):
            break
        current = kept

    if not current:
        raise EmptyDatasetError(
            f"no check-ins left after filtering POIs < {min_poi_visits} visits "
            f"and users < {min_user_records} records"
        )
    logger.info("preprocess kept %d of %d check-ins after %d rounds",
                len(current), len(records), rounds)
    return current


def build_trajectories(records: Iterable[CheckinRecord], delta_hours: float = 24.0) -> List[Trajectory]:
    """
    Split each user's check-ins greedily into windows of at most `delta_hours`.

    A window starts at its first record; a record that would stretch the span
    beyond the limit opens the next window. Single-record windows are dropped.
    Check-ins of one user sharing a timestamp keep only the first.
    """
    if delta_hours <= 0:
        raise ValueError(f"delta_hours must be positive, got {delta_hours}")
    delta = delta_hours * 3600.0

    by_user: Dict[str, List[CheckinRecord]] = defaultdict(list)
    for record in records:
        by_user[record.user].append(record)

    trajectories = []
    duplicates = 0
    dropped = 0
    for user in sorted(by_user):
        ordered = sorted(by_user[user], key=lambda r: (r.timestamp, r.poi, r.category))
        window: List[CheckinRecord] = []
        for record in ordered:
            if window and record.timestamp == window[-1].timestamp:
                duplicates += 1
                continue
            if window and record.timestamp - window[0].timestamp > delta:
                if len(window) >= 2:
                    trajectories.append(Trajectory(user=user, entries=tuple(window)))
                else:
                    dropped += 1
                window = []
            window.append(record)
        if len(window) >= 2:
            trajectories.append(Trajectory(user=user, entries=tuple(window)))
        elif window:
            dropped += 1

    if duplicates:
        logger.warning("skipped %d check-ins sharing a timestamp with the previous one", duplicates)
    logger.info("built %d trajectories, dropped %d single check-ins", len(trajectories), dropped)
    return trajectories


def _validate_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3:
        raise ValueError(f"expected 3 split ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    return tuple(float(r) for r in ratios)


def split_chronological(
    trajectories: Sequence[Trajectory],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
) -> DatasetSplit:
    """
    Cut the global time order of check-ins at the given ratios and assign each
    trajectory to the part holding its last check-in. Validation and test
    trajectories with users or POIs unseen in train are removed.
    """
    train_ratio, val_ratio, _ = _validate_ratios(ratios)
    if not trajectories:
        raise EmptyDatasetError("no trajectories to split")

    timestamps = np.sort(np.array([e.timestamp for t in trajectories for e in t.entries], dtype=np.int64))
    n = len(timestamps)
    n_train = int(math.floor(n * train_ratio + 1e-9))
    n_val = int(math.floor(n * (train_ratio + val_ratio) + 1e-9))
    train_cut = timestamps[n_train - 1] if n_train > 0 else -1
    val_cut = timestamps[n_val - 1] if n_val > 0 else -1

    parts: Dict[str, List[Trajectory]] = {"train": [], "validation": [], "test": []}
    for trajectory in sorted(trajectories, key=lambda t: (t.end, t.user, t.start)):
        if trajectory.end <= train_cut:
            parts["train"].append(trajectory)
        elif trajectory.end <= val_cut:
            parts["validation"].append(trajectory)
        else:
            parts["test"].append(trajectory)

    users = {t.user for t in parts["train"]}
    pois = {e.poi for t in parts["train"] for e in t.entries}

    def seen(trajectory: Trajectory) -> bool:
        return trajectory.user in users and all(e.poi in pois for e in trajectory.entries)

    validation = [t for t in parts["validation"] if seen(t)]
    test = [t for t in parts["test"] if seen(t)]
    split = DatasetSplit(
        train=parts["train"],
        validation=validation,
        test=test,
        poi_vocabulary=sorted(pois),
        user_vocabulary=sorted(users),
        removed_validation=len(parts["validation"]) - len(validation),
        removed_test=len(parts["test"]) - len(test),
    )
    logger.info(
        "split %d/%d/%d trajectories (removed %d validation, %d test as unseen)",
        len(split.train), len(split.validation), len(split.test),
        split.removed_validation, split.removed_test,
    )
    return split


def _category_name(cluster: int) -> str:
    name = CATEGORY_NAMES[cluster % len(CATEGORY_NAMES)]
    rounds = cluster // len(CATEGORY_NAMES)
    return f"{name} {rounds + 1}" if rounds else name


def synth_generate(config: SynthConfig) -> SynthCorpus:
    """
    Generate check-ins with planted POI clusters.

    Each cluster has its own category, a geographic centre and a preferred
    hour of day. Users have a home cluster and pick POIs from it with
    probability `home_affinity`. The ledger maps every POI to its cluster.
    """
    if config.n_pois < config.n_clusters:
        raise ValueError(f"n_pois ({config.n_pois}) must be >= n_clusters ({config.n_clusters})")
    rng = np.random.default_rng(config.seed)
    n_clusters = config.n_clusters

    pois = [f"p{i:04d}" for i in range(config.n_pois)]
    ledger = {poi: i % n_clusters for i, poi in enumerate(pois)}
    members: Dict[int, List[str]] = defaultdict(list)
    for poi in pois:
        members[ledger[poi]].append(poi)

    centres = [(40.55 + 0.2 * (c // 3), -74.15 + 0.2 * (c % 3)) for c in range(n_clusters)]
    preferred_hour = [(7 + 5 * c) % 24 for c in range(n_clusters)]
    locations = {}
    for poi in pois:
        lat0, lon0 = centres[ledger[poi]]
        offset = rng.uniform(-0.01, 0.01, size=2)
        locations[poi] = (round(lat0 + offset[0], 6), round(lon0 + offset[1], 6))

    records = []
    n_days = config.span_days
    for u in range(config.n_users):
        user = f"u{u:03d}"
        home = u % n_clusters
        days = rng.choice(n_days, size=config.sessions_per_user, replace=config.sessions_per_user > n_days)
        seen_times = set()
        for day in np.sort(days):
            hour = preferred_hour[home] + rng.normal(0.0, 1.5)
            t = SYNTH_EPOCH + int(day) * 86400 + int(max(hour, 0.0) * 3600)
            for _ in range(int(rng.integers(2, 6))):
                if rng.random() < config.home_affinity:
                    cluster = home
                else:
                    cluster = int(rng.integers(n_clusters))
                poi = members[cluster][int(rng.integers(len(members[cluster])))]
                while t in seen_times:
                    t += 1
                seen_times.add(t)
                lat, lon = locations[poi]
                records.append(CheckinRecord(
                    user=user, poi=poi, category=_category_name(ledger[poi]),
                    timestamp=t, lat=lat, lon=lon,
                ))
                t += int(rng.integers(20, 150)) * 60

    records.sort(key=lambda r: (r.timestamp, r.user, r.poi))
    logger.info("generated %d synthetic check-ins (%d users, %d POIs, %d clusters)",
                len(records), config.n_users, config.n_pois, n_clusters)
    return SynthCorpus(records=records, ledger=ledger, config=config)


ACTIVITY_GROUPS = ("very_active", "normal", "inactive")


def activity_groups(split: DatasetSplit, share: float = 0.3) -> Dict[str, str]:
    """
    Label users by their number of training trajectories: the top `share`
    are very_active, the bottom `share` inactive, the rest normal.
    """
    if not 0.0 < share <= 0.5:
        raise ValueError(f"share must be in (0, 0.5], got {share}")
    counts = Counter(t.user for t in split.train)
    ranked = sorted(split.user_vocabulary, key=lambda u: (-counts[u], u))
    n = len(ranked)
    n_edge = int(math.floor(n * share + 1e-9))
    labels = {}
    for position, user in enumerate(ranked):
        if position < n_edge:
            labels[user] = "very_active"
        elif position >= n - n_edge:
            labels[user] = "inactive"
        else:
            labels[user] = "normal"
    return labels
