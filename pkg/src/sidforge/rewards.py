"""
Recommendation-driven rewards for list completions.

A completion is "<think>...</think><answer>SID, SID, ...</answer>". It is
scored by five rewards: list format, reciprocal rank of the ground truth,
soft accuracy, number of distinct items and output length.
"""

import logging
import re
from typing import Dict, List, Optional, Sequence, Union

from .model.schema import ParsedCompletion, RewardBreakdown, RewardWeights

logger = logging.getLogger(__name__)

_COMPLETION = re.compile(r"\A\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*\Z", re.DOTALL)
_SID_TOKEN = re.compile(r"<([A-Z])_\d+_\d+>|<Z#\d+>")
_TAGS = ("<think>", "</think>", "<answer>", "</answer>")

DEFAULT_WEIGHTS = (0.4, 0.42, 0.12, 0.06, 0.2)
ABLATIONS = {
    "no_format": 0,
    "no_rr": 1,
    "no_soft": 2,
    "no_distinct": 3,
    "no_len": 4,
}
PRESETS = ("default", "unit", *ABLATIONS)


def _sid_items(answer: str) -> List[str]:
    """Group adjacent SID tokens into items; an 'A' layer token always opens a new item."""
    items: List[str] = []
    end = -1
    for token in _SID_TOKEN.finditer(answer):
        opens = token.group(1) == "A" or token.start() != end or not items
        if opens:
            items.append(token.group(0))
        else:
            items[-1] += token.group(0)
        end = token.end()
    return items


def parse_completion(text: Union[str, bytes], k: int = 10) -> ParsedCompletion:
    """
    Split a completion into reasoning and answer items. Never raises: any
    malformed input gives syntax_ok=False and no items.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    elif not isinstance(text, str):
        text = str(text)
    output_length = len(text.split())
    match = _COMPLETION.match(text)
    if match is None or any(text.count(tag) != 1 for tag in _TAGS):
        return ParsedCompletion(syntax_ok=False, output_length=output_length)
    items = _sid_items(match.group(2))
    if not items:
        return ParsedCompletion(syntax_ok=False, think_text=match.group(1), output_length=output_length)
    return ParsedCompletion(
        syntax_ok=True,
        items=items,
        think_text=match.group(1),
        output_length=output_length,
    )


def render_completion(items: Sequence[str], think: str = "") -> str:
    return f"<think>{think}</think><answer>{', '.join(items)}</answer>"


def ground_truth_rank(parsed: ParsedCompletion, gt: str) -> Optional[int]:
    """1-based position of the first occurrence of gt, None if absent."""
    try:
        return parsed.items.index(gt) + 1
    except ValueError:
        return None


def format_reward(parsed: ParsedCompletion, k: int) -> float:
    return 1.0 if parsed.syntax_ok and len(parsed.items) == k else 0.0


def rr_reward(parsed: ParsedCompletion, gt: str, k: int) -> float:
    rank = ground_truth_rank(parsed, gt)
    if rank is None or format_reward(parsed, k) == 0.0:
        return 0.0
    return 1.0 / rank


def soft_acc_reward(parsed: ParsedCompletion, gt: str) -> float:
    # only the tag syntax is required here, not the list length
    return 1.0 if parsed.syntax_ok and gt in parsed.items else 0.0


def distinct_reward(parsed: ParsedCompletion, k: int) -> float:
    if format_reward(parsed, k) == 0.0:
        return 0.0
    return float(len(set(parsed.items)))


def length_reward(parsed: ParsedCompletion, target_length: int) -> float:
    if target_length < 1:
        raise ValueError(f"target_length must be >= 1, got {target_length}")
    # an unparseable completion earns nothing, however long
    if not parsed.syntax_ok:
        return 0.0
    return min(1.0, parsed.output_length / target_length)


def total_reward(text: Union[str, bytes], gt: str, weights: RewardWeights) -> RewardBreakdown:
    """Weighted sum of the five rewards."""
    parsed = parse_completion(text, weights.k)
    components = (
        format_reward(parsed, weights.k),
        rr_reward(parsed, gt, weights.k),
        soft_acc_reward(parsed, gt),
        distinct_reward(parsed, weights.k),
        length_reward(parsed, weights.target_length),
    )
    total = sum(w * c for w, c in zip(weights.as_tuple(), components))
    return RewardBreakdown(
        format=components[0],
        rr=components[1],
        soft=components[2],
        distinct=components[3],
        length=components[4],
        total=total,
        rank=ground_truth_rank(parsed, gt),
    )


def score_group(texts: Sequence[Union[str, bytes]], gt: str, weights: RewardWeights) -> List[RewardBreakdown]:
    return [total_reward(text, gt, weights) for text in texts]


def _renormalized(zeroed: int) -> List[float]:
    """Drop one term and rescale the rest so the weight sum is unchanged."""
    full = sum(DEFAULT_WEIGHTS)
    rest = [0.0 if i == zeroed else w for i, w in enumerate(DEFAULT_WEIGHTS)]
    scale = full / sum(rest)
    return [w * scale for w in rest]


def resolve_weights(weights: str = "default", k: int = 10, target_length: int = 512) -> RewardWeights:
    """
    Weights from a preset name or five comma-separated numbers.

    Presets: default; unit (1 for each term, 1/k for distinct so a full
    distinct list scores 1); no_format, no_rr, no_soft, no_distinct, no_len
    (one term removed, the rest rescaled to the default weight sum).
    """
    weights = weights.strip()
    if weights == "default":
        values = list(DEFAULT_WEIGHTS)
    elif weights == "unit":
        values = [1.0, 1.0, 1.0, 1.0 / k, 1.0]
    elif weights in ABLATIONS:
        values = _renormalized(ABLATIONS[weights])
    else:
        try:
            values = [float(v) for v in weights.split(",")]
        except ValueError:
            raise ValueError(f"Unknown reward weights '{weights}'; use one of {PRESETS} or w1,w2,w3,w4,w5")
        if len(values) != 5:
            raise ValueError(f"expected 5 comma-separated weights, got {len(values)}")
    return RewardWeights(
        w_format=values[0],
        w_rr=values[1],
        w_soft=values[2],
        w_distinct=values[3],
        w_length=values[4],
        k=k,
        target_length=target_length,
    )


def summarize(breakdowns: Sequence[RewardBreakdown]) -> Dict[str, float]:
    """Mean of each reward component over a batch."""
    if not breakdowns:
        return {}
    fields = ("format", "rr", "soft", "distinct", "length", "total")
    return {f: sum(getattr(b, f) for b in breakdowns) / len(breakdowns) for f in fields}
