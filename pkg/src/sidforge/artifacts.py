"""
Artifact IO.

JSON-lines artifacts start with a {"_meta": {...}} line; JSON documents carry
the same block under "_meta". Files are written to a temporary sibling and
renamed into place so a failed write never leaves a partial artifact. A stage
stages all of its files in one directory and publishes them together.
"""

import contextlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import pandas as pd

from .errors import DigestMismatchError, MissingArtifactError
from .model.schema import ArtifactMeta

logger = logging.getLogger(__name__)

META_KEY = "_meta"


def dumps(payload: Any) -> str:
    """Deterministic single-line JSON."""
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


@contextlib.contextmanager
def atomic_path(path: Path) -> Iterator[Path]:
    """Yield a temporary path that replaces `path` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]], meta: Optional[ArtifactMeta] = None) -> Path:
    count = 0
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            if meta is not None:
                f.write(dumps({META_KEY: meta.model_dump(mode="json")}) + "\n")
            for record in records:
                f.write(dumps(record) + "\n")
                count += 1
    logger.debug("wrote %d records to %s", count, path)
    return Path(path)


def read_jsonl(path: Path) -> Tuple[Optional[ArtifactMeta], List[Dict[str, Any]]]:
    meta = None
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if META_KEY in payload and len(payload) == 1:
                meta = ArtifactMeta.model_validate(payload[META_KEY])
                continue
            records.append(payload)
    return meta, records


def write_json(path: Path, payload: Dict[str, Any], meta: Optional[ArtifactMeta] = None) -> Path:
    document = dict(payload)
    if meta is not None:
        document[META_KEY] = meta.model_dump(mode="json")
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
    return Path(path)


def read_json(path: Path) -> Tuple[Optional[ArtifactMeta], Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    meta_payload = document.pop(META_KEY, None)
    meta = ArtifactMeta.model_validate(meta_payload) if meta_payload else None
    return meta, document


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    with atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False, float_format="%.10g")
    return Path(path)


def require(path: Path, producing_stage: str) -> Path:
    """Raise MissingArtifactError naming the producing stage when `path` is absent."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producing_stage)
    return path


def check_digest(meta: Optional[ArtifactMeta], expected: str, path: Path, force: bool = False) -> None:
    """Refuse artifacts produced under another config unless forced."""
    found = meta.config_digest if meta is not None else "<none>"
    if found == expected:
        return
    if force:
        logger.warning("accepting %s with mismatched config digest %s", path, found[:12])
        return
    raise DigestMismatchError(path, expected, found)


def publish_dir(staging: Path, target: Path, outputs: Dict[str, Path]) -> Dict[str, Path]:
    """Move every file in `staging` into `target` and remap `outputs` to the final paths."""
    staging, target = Path(staging), Path(target)
    target.mkdir(parents=True, exist_ok=True)
    if staging.exists():
        for staged in sorted(staging.iterdir()):
            os.replace(staged, target / staged.name)
        staging.rmdir()
    return {label: target / Path(p).name for label, p in outputs.items()}
