"""
Semantic continuity of ID spaces.

NICC compares each category's dispersion around its centroid with the
dispersion of equally many uniform random points in the same space. NICS
compares the mean distance between category centroids with the same
statistic for uniformly placed centroids. Both nulls are Monte Carlo
estimates seeded from the master seed.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .model.schema import CategoryContinuity, ContinuityReport, SemanticId

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100


@dataclass(frozen=True)
class IdSpace:
    """
    A discrete coordinate space: `linear` is {0..N-1}, `grid` is the lattice
    {0..H-1} x {0..W-1} (or a product of several lattices for concatenated codes).
    Points are lattice indices times `spacing`.
    """
    kind: str
    bounds: Tuple[int, ...]
    spacing: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "grid"):
            raise ValueError(f"unknown ID space kind '{self.kind}'")
        if not self.bounds or any(b < 1 for b in self.bounds):
            raise ValueError(f"ID space bounds must be positive, got {self.bounds}")
        if self.kind == "linear" and len(self.bounds) != 1:
            raise ValueError(f"a linear space has one bound, got {self.bounds}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @classmethod
    def parse(cls, text: str) -> "IdSpace":
        """'grid:4x6', 'grid:4x6x8x8' or 'linear:24'."""
        kind, _, dims = text.partition(":")
        try:
            bounds = tuple(int(d) for d in dims.lower().split("x"))
        except ValueError:
            raise ValueError(f"invalid ID space '{text}'")
        return cls(kind=kind.strip().lower(), bounds=bounds)

    @classmethod
    def for_grids(cls, grids: Sequence[Tuple[int, int]], layer: Optional[int] = 1) -> "IdSpace":
        if layer is None:
            return cls(kind="grid", bounds=tuple(int(b) for grid in grids for b in grid))
        return cls(kind="grid", bounds=tuple(int(b) for b in grids[layer - 1]))

    @property
    def dims(self) -> int:
        return len(self.bounds)

    def scaled(self, factor: float) -> "IdSpace":
        return IdSpace(kind=self.kind, bounds=self.bounds, spacing=self.spacing * factor)

    def sample_uniform(self, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        """Uniform lattice points with array shape `shape + (dims,)`."""
        points = rng.integers(0, np.asarray(self.bounds), size=tuple(shape) + (self.dims,))
        return points.astype(np.float64) * self.spacing

    def __str__(self) -> str:
        return f"{self.kind}:{'x'.join(str(b) for b in self.bounds)}"


def intra_class_dispersion(coords: np.ndarray) -> Tuple[np.ndarray, float]:
    """Centroid and mean Euclidean distance of the points to it."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[0] == 0:
        raise ValueError("cannot compute the dispersion of an empty class")
    centroid = coords.mean(axis=0)
    return centroid, float(np.mean(np.linalg.norm(coords - centroid, axis=1)))


def null_dispersion(space: IdSpace, size: int, samples: int, seed: int) -> float:
    """Expected dispersion of `size` uniform points, averaged over `samples` draws."""
    rng = np.random.default_rng([seed, size])
    points = space.sample_uniform((samples, size), rng)
    centroids = points.mean(axis=1, keepdims=True)
    return float(np.mean(np.linalg.norm(points - centroids, axis=-1)))


def mean_pairwise_distance(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    return float(d[np.triu_indices(len(points), k=1)].mean())


def null_separation(space: IdSpace, n_classes: int, samples: int, seed: int) -> float:
    """Expected mean pairwise distance of `n_classes` uniformly placed centroids."""
    rng = np.random.default_rng([seed, n_classes, 1])
    points = space.sample_uniform((samples, n_classes), rng)
    return float(np.mean([mean_pairwise_distance(draw) for draw in points]))


def _group(assignments: Mapping[str, Sequence[float]], categories: Mapping[str, str]) -> Dict[str, np.ndarray]:
    groups: Dict[str, List[Sequence[float]]] = {}
    for poi in sorted(assignments):
        if poi not in categories:
            continue
        groups.setdefault(categories[poi], []).append(assignments[poi])
    return {c: np.asarray(points, dtype=np.float64) for c, points in sorted(groups.items())}


def _check_samples(samples: int) -> None:
    if samples < MIN_SAMPLES:
        raise ValueError(f"at least {MIN_SAMPLES} null samples are required, got {samples}")


@dataclass
class NiccResult:
    per_category: Dict[str, CategoryContinuity] = field(default_factory=dict)
    global_avg: Optional[float] = None
    undefined: List[str] = field(default_factory=list)


def nicc(
    assignments: Mapping[str, Sequence[float]],
    categories: Mapping[str, str],
    space: IdSpace,
    samples: int = 1000,
    seed: int = 0,
) -> NiccResult:
    """
    Normalized intra-class compactness R = sigma_c / sigma_random per category.

    Categories with a single POI are undefined and left out of the global mean.
    """
    _check_samples(samples)
    result = NiccResult()
    null_cache: Dict[int, float] = {}
    ratios = []
    for category, points in _group(assignments, categories).items():
        centroid, sigma_c = intra_class_dispersion(points)
        size = len(points)
        entry = CategoryContinuity(size=size, centroid=centroid.tolist(), sigma_c=sigma_c)
        if size >= 2:
            if size not in null_cache:
                null_cache[size] = null_dispersion(space, size, samples, seed)
            sigma_random = null_cache[size]
            entry.sigma_random = sigma_random
            if sigma_random > 0:
                entry.nicc = sigma_c / sigma_random
                ratios.append(entry.nicc)
        if entry.nicc is None:
            result.undefined.append(category)
        result.per_category[category] = entry
    result.global_avg = float(np.mean(ratios)) if ratios else None
    return result


@dataclass
class NicsResult:
    ratio: float
    delta_inter: float
    delta_random: float
    separation: Dict[str, float] = field(default_factory=dict)


def nics(
    assignments: Mapping[str, Sequence[float]],
    categories: Mapping[str, str],
    space: IdSpace,
    samples: int = 1000,
    seed: int = 0,
) -> NicsResult:
    """Normalized inter-class separation S = delta_inter / delta_random."""
    _check_samples(samples)
    groups = _group(assignments, categories)
    if len(groups) < 2:
        raise ValueError(f"NICS needs at least 2 categories, got {len(groups)}")
    names = list(groups)
    centroids = np.array([groups[c].mean(axis=0) for c in names])
    delta_inter = mean_pairwise_distance(centroids)
    delta_random = null_separation(space, len(names), samples, seed)
    if delta_random <= 0:
        raise ValueError(f"space {space} has a single point; NICS is undefined")
    d = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=-1)
    separation = {c: float(d[i].sum() / (len(names) - 1)) for i, c in enumerate(names)}
    return NicsResult(
        ratio=delta_inter / delta_random,
        delta_inter=delta_inter,
        delta_random=delta_random,
        separation=separation,
    )


def continuity_report(
    assignments: Mapping[str, Sequence[float]],
    categories: Mapping[str, str],
    space: IdSpace,
    samples: int = 1000,
    seed: int = 0,
    layer: Optional[int] = 1,
    top_categories: int = 10,
) -> ContinuityReport:
    """NICC and NICS together, with per-category separation normalized by the NICS null."""
    compactness = nicc(assignments, categories, space, samples, seed)
    report = ContinuityReport(
        space=str(space),
        layer=layer,
        per_category=compactness.per_category,
        global_avg_nicc=compactness.global_avg,
        undefined_categories=compactness.undefined,
        null_samples=samples,
        seed=seed,
    )
    if len(compactness.per_category) >= 2:
        separation = nics(assignments, categories, space, samples, seed)
        report.global_avg_nics = separation.ratio
        report.delta_inter = separation.delta_inter
        report.delta_random = separation.delta_random
        for category, entry in report.per_category.items():
            entry.separation = separation.separation[category]
            entry.nics = separation.separation[category] / separation.delta_random
    ranked = sorted(report.per_category.items(), key=lambda kv: (-kv[1].size, kv[0]))
    report.top_categories = [c for c, _ in ranked[:top_categories]]
    logger.info("continuity on %s: NICC %s, NICS %s (%d categories, %d undefined)",
                space, _fmt(report.global_avg_nicc), _fmt(report.global_avg_nics),
                len(report.per_category), len(report.undefined_categories))
    return report


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def sid_coordinates(sids: Mapping[str, SemanticId], layer: Optional[int] = 1) -> Dict[str, List[float]]:
    """Grid coordinates of one SID layer, or all layers concatenated when layer is None."""
    coords = {}
    for poi, sid in sids.items():
        if layer is None:
            coords[poi] = [float(v) for _, row, col in sid.codes for v in (row, col)]
        else:
            coords[poi] = [float(v) for v in sid.layer_code(layer)]
    return coords


def flatten_to_linear(coords: Mapping[str, Sequence[float]], width: int) -> Dict[str, List[float]]:
    """Row-major 1-D index row * width + col of 2-D grid coordinates."""
    return {poi: [float(point[0] * width + point[1])] for poi, point in coords.items()}


def permuted_assignments(coords: Mapping[str, Sequence[float]], seed: int = 0) -> Dict[str, List[float]]:
    """The same coordinate multiset dealt to POIs in random order."""
    pois = sorted(coords)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pois))
    return {poi: list(coords[pois[j]]) for poi, j in zip(pois, order)}


def report_rows(report: ContinuityReport) -> List[Dict[str, object]]:
    """Flat per-category rows for CSV export."""
    return [
        {
            "category": category,
            "size": entry.size,
            "sigma_c": entry.sigma_c,
            "sigma_random": entry.sigma_random,
            "nicc": entry.nicc,
            "separation": entry.separation,
            "nics": entry.nics,
            "top": category in report.top_categories,
        }
        for category, entry in report.per_category.items()
    ]
