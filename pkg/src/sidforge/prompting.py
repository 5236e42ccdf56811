"""
Trajectory prompts.

A prompt pairs long-term memory (the user's earlier subsections of history)
with short-term memory (the current trajectory without its last check-in)
and asks for the POI of the held-out last check-in.
"""

import logging
import math
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .model.schema import CheckinRecord, PromptInstance, SemanticId, Trajectory

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
TIME_FORMAT = "%Y-%m-%d %H:%M"
_TASK = re.compile(r"at (\d{4}-\d{2}-\d{2} \d{2}:\d{2}), which POI will the user visit next\?")


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(min(1.0, a))))


def split_long_term(trajectories: Sequence[Trajectory], days_per_section: float = 30.0) -> List[List[Trajectory]]:
    """
    Partition a user's time-ordered trajectories into ceil(span_days / days_per_section)
    contiguous subsections of roughly equal record count.
    """
    if not trajectories:
        return []
    ordered = sorted(trajectories, key=lambda t: (t.start, t.end))
    span_days = (max(t.end for t in ordered) - ordered[0].start) / 86400.0
    n_sections = max(1, math.ceil(span_days / days_per_section))
    total = sum(len(t.entries) for t in ordered)
    sections: List[List[Trajectory]] = [[] for _ in range(n_sections)]
    seen = 0
    for trajectory in ordered:
        sections[min(n_sections - 1, seen * n_sections // total)].append(trajectory)
        seen += len(trajectory.entries)
    return sections


@dataclass
class PromptSettings:
    k: int = 10
    max_history: int = 200
    days_per_section: float = 30.0
    system_text: str = ""
    utc_offset_minutes: int = 0


def format_time(timestamp: int, utc_offset_minutes: int = 0) -> str:
    moment = datetime.fromtimestamp(timestamp, tz=timezone.utc) + timedelta(minutes=utc_offset_minutes)
    return moment.strftime(TIME_FORMAT)


def render_block(
    entries: Sequence[CheckinRecord],
    sids: Mapping[str, SemanticId],
    utc_offset_minutes: int = 0,
) -> List[str]:
    """One "(time, SID, category, d.dd km)" line per check-in; the first distance is 0.00."""
    lines = []
    previous: Optional[CheckinRecord] = None
    for entry in entries:
        distance = 0.0 if previous is None else haversine(previous.lat, previous.lon, entry.lat, entry.lon)
        lines.append(
            f"({format_time(entry.timestamp, utc_offset_minutes)}, {sids[entry.poi].rendered}, "
            f"{entry.category}, {distance:.2f} km)"
        )
        previous = entry
    return lines


def build_prompt(
    trajectory: Trajectory,
    history: Sequence[Trajectory],
    sids: Mapping[str, SemanticId],
    settings: PromptSettings,
) -> PromptInstance:
    """
    Prompt for the last check-in of `trajectory`, with `history` as long-term memory.

    Only the most recent `max_history` history check-ins are kept.
    """
    if len(trajectory.entries) < 2:
        raise ValueError("a prompt needs a trajectory with at least 2 check-ins")
    *current, target = trajectory.entries
    past = [e for t in sorted(history, key=lambda t: t.start) for e in t.entries if e.timestamp < current[0].timestamp]
    if settings.max_history == 0:
        past = []
    elif len(past) > settings.max_history:
        past = past[-settings.max_history:]
    return PromptInstance(
        user=trajectory.user,
        system_text=settings.system_text.replace("{k}", str(settings.k)),
        history_block=render_block(past, sids, settings.utc_offset_minutes),
        current_block=render_block(current, sids, settings.utc_offset_minutes),
        target_time=target.timestamp,
        ground_truth_sid=sids[target.poi].rendered,
        k=settings.k,
    )


def render_prompt(instance: PromptInstance, utc_offset_minutes: int = 0) -> str:
    lines = ["<history>", *instance.history_block, "</history>",
             "<current>", *instance.current_block, "</current>"]
    lines.append(
        f"Given the data, at {format_time(instance.target_time, utc_offset_minutes)}, "
        f"which POI will the user visit next? Recommend {instance.k} POIs."
    )
    return "\n".join(lines)


def parse_prompt(text: str) -> Dict[str, Any]:
    """Recover the history lines, current lines and target time from a rendered prompt."""
    lines = text.split("\n")
    try:
        h0, h1 = lines.index("<history>"), lines.index("</history>")
        c0, c1 = lines.index("<current>"), lines.index("</current>")
    except ValueError:
        raise ValueError("prompt lacks history/current blocks")
    match = _TASK.search(text)
    if match is None:
        raise ValueError("prompt lacks a task sentence")
    return {
        "history": lines[h0 + 1:h1],
        "current": lines[c0 + 1:c1],
        "target_time": match.group(1),
    }


def prompt_record(instance: PromptInstance, utc_offset_minutes: int = 0) -> Dict[str, Any]:
    return {
        "user": instance.user,
        "system": instance.system_text,
        "prompt": render_prompt(instance, utc_offset_minutes),
        "ground_truth_sid": instance.ground_truth_sid,
        "target_time": instance.target_time,
        "k": instance.k,
    }


class PromptBuilder:
    """
    Builds prompts for any trajectory of a user, growing long-term memory
    one subsection at a time over all of the user's trajectories.
    """

    def __init__(
        self,
        trajectories: Sequence[Trajectory],
        sids: Mapping[str, SemanticId],
        settings: PromptSettings,
    ):
        self.sids = sids
        self.settings = settings
        by_user: Dict[str, List[Trajectory]] = {}
        for trajectory in trajectories:
            by_user.setdefault(trajectory.user, []).append(trajectory)
        self.sections = {
            user: split_long_term(items, settings.days_per_section)
            for user, items in sorted(by_user.items())
        }
        self._section_of: Dict[tuple, int] = {}
        for user, sections in self.sections.items():
            for i, section in enumerate(sections):
                for trajectory in section:
                    self._section_of[(user, trajectory.start)] = i

    def history_for(self, trajectory: Trajectory) -> List[Trajectory]:
        """Trajectories of every subsection strictly before the one holding `trajectory`."""
        position = self._section_of.get((trajectory.user, trajectory.start))
        if position is None:
            raise KeyError(f"trajectory of {trajectory.user} at {trajectory.start} is unknown")
        return [t for section in self.sections[trajectory.user][:position] for t in section]

    def build(self, trajectory: Trajectory) -> PromptInstance:
        return build_prompt(trajectory, self.history_for(trajectory), self.sids, self.settings)
