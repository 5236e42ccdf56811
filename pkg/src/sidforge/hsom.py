"""
Residual hierarchical self-organizing map.

Layer l is a 2-D lattice of prototypes trained with the batch SOM rule on the
residuals left by layers 1..l-1. A POI's semantic ID is the sequence of its
best-matching grid coordinates, one per layer.
"""

import hashlib
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import FrozenLayerError, UnfrozenModelError
from .model.config import HsomConfig
from .model.schema import SemanticId

logger = logging.getLogger(__name__)

MAX_LAYERS = 26
_TOKEN = re.compile(r"<([A-Z])_(\d+)_(\d+)>")
_DISAMBIGUATOR = re.compile(r"<Z#(\d+)>")


@dataclass
class SomLayer:
    """A height x width lattice; node k sits at (k // width, k % width)."""
    height: int
    width: int
    prototypes: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"invalid grid {self.height}x{self.width}")
        if self.prototypes.shape[0] != self.height * self.width:
            raise ValueError(
                f"{self.prototypes.shape[0]} prototypes for a {self.height}x{self.width} grid"
            )

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def coordinates(self) -> np.ndarray:
        rows, cols = np.divmod(np.arange(self.size), self.width)
        return np.stack([rows, cols], axis=1)

    def node(self, index: int) -> Tuple[int, int]:
        row, col = divmod(int(index), self.width)
        return row, col

    def freeze(self) -> "SomLayer":
        self.frozen = True
        self.prototypes.setflags(write=False)
        return self

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.height}x{self.width}".encode())
        h.update(np.ascontiguousarray(self.prototypes, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass
class ResidualTrace:
    """r^(0) = input, r^(l) = r^(l-1) - w_{c^(l)}."""
    residuals: List[np.ndarray] = field(default_factory=list)


@dataclass
class LayerReport:
    layer: int
    grid: Tuple[int, int]
    epochs_run: int
    initial_error: float
    final_error: float

    def to_record(self) -> Dict[str, Any]:
        return {
            "layer": self.layer,
            "grid": list(self.grid),
            "epochs_run": self.epochs_run,
            "initial_error": self.initial_error,
            "final_error": self.final_error,
        }


@dataclass
class HsomModel:
    layers: List[SomLayer] = field(default_factory=list)

    @property
    def frozen(self) -> bool:
        return bool(self.layers) and all(layer.frozen for layer in self.layers)

    @property
    def grids(self) -> List[Tuple[int, int]]:
        return [(layer.height, layer.width) for layer in self.layers]

    def digest(self) -> str:
        return hashlib.sha256("".join(layer.digest() for layer in self.layers).encode()).hexdigest()


@dataclass
class SomSchedule:
    """Exponential sigma decay and linear learning-rate decay over the epoch budget."""
    epochs: int
    sigma_start: float
    sigma_end: float = 0.5
    eta_start: float = 0.5
    eta_end: float = 0.01

    @classmethod
    def for_grid(cls, grid: Tuple[int, int], config: HsomConfig) -> "SomSchedule":
        return cls(
            epochs=config.epochs,
            sigma_start=max(grid) / 2.0,
            sigma_end=config.sigma_end,
            eta_start=config.eta_start,
            eta_end=config.eta_end,
        )

    def _fraction(self, epoch: int) -> float:
        return epoch / (self.epochs - 1) if self.epochs > 1 else 0.0

    def sigma(self, epoch: int) -> float:
        return self.sigma_start * (self.sigma_end / self.sigma_start) ** self._fraction(epoch)

    def eta(self, epoch: int) -> float:
        return self.eta_start + (self.eta_end - self.eta_start) * self._fraction(epoch)


def init_layer(
    grid: Tuple[int, int],
    residual_sample: np.ndarray,
    scale: float,
    rng: np.random.Generator,
) -> SomLayer:
    """Prototypes drawn around the residual mean: mean + scale * N(0, I)."""
    residual_sample = np.asarray(residual_sample, dtype=np.float64)
    if residual_sample.ndim != 2 or residual_sample.shape[0] == 0:
        raise ValueError("init_layer needs a non-empty 2-D residual sample")
    height, width = grid
    mean = residual_sample.mean(axis=0)
    noise = rng.standard_normal((height * width, residual_sample.shape[1]))
    return SomLayer(height=height, width=width, prototypes=mean + scale * noise)


def squared_distances(layer: SomLayer, batch: np.ndarray) -> np.ndarray:
    diff = batch[:, None, :] - layer.prototypes[None, :, :]
    return np.einsum("bkd,bkd->bk", diff, diff)


def find_bmus(layer: SomLayer, batch: np.ndarray) -> np.ndarray:
    """Node index of the nearest prototype per row; the first (row-major) node wins ties."""
    return np.argmin(squared_distances(layer, np.atleast_2d(batch)), axis=1)


def find_bmu(layer: SomLayer, residual: np.ndarray) -> Tuple[int, int]:
    return layer.node(find_bmus(layer, residual)[0])


def neighborhood(u_k: Sequence[float], u_bmu: Sequence[float], sigma: float) -> float:
    """Gaussian lattice neighborhood exp(-|u_k - u_bmu|^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d2 = float(np.sum((np.asarray(u_k, dtype=np.float64) - np.asarray(u_bmu, dtype=np.float64)) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def neighborhood_matrix(layer: SomLayer, sigma: float) -> np.ndarray:
    """K x K matrix of neighborhood weights between all node pairs."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    coords = layer.coordinates.astype(np.float64)
    d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def batch_update(
    layer: SomLayer,
    batch: np.ndarray,
    sigma: float,
    eta: float,
    eps: float = 1e-9,
) -> SomLayer:
    """
    One batch SOM step, in place:
        dw_k = sum_i h(k, bmu_i) (r_i - w_k) / (sum_i h(k, bmu_i) + eps)
        w_k += eta * dw_k
    BMUs are taken against the prototypes before the step.
    """
    if layer.frozen:
        raise FrozenLayerError(f"layer {layer.height}x{layer.width} is frozen")
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("batch_update needs a non-empty batch")
    bmus = find_bmus(layer, batch)
    weights = neighborhood_matrix(layer, sigma)[:, bmus]  # K x B
    mass = weights.sum(axis=1)
    numerator = weights @ batch - mass[:, None] * layer.prototypes
    denominator = (mass + eps)[:, None]
    delta = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)
    layer.prototypes += eta * delta
    return layer


def quantization_error(layer: SomLayer, residuals: np.ndarray) -> float:
    """Mean Euclidean distance from each residual to its BMU prototype."""
    bmus = find_bmus(layer, residuals)
    return float(np.mean(np.linalg.norm(residuals - layer.prototypes[bmus], axis=1)))


def train_layer(
    layer: SomLayer,
    residuals: np.ndarray,
    schedule: SomSchedule,
    rng: np.random.Generator,
    batch_size: int = 256,
    eps: float = 1e-9,
    movement_tol: Optional[float] = None,
    index: int = 1,
    progress: bool = False,
) -> LayerReport:
    """Run the epoch budget (or stop early on small prototype movement), then freeze."""
    residuals = np.asarray(residuals, dtype=np.float64)
    initial = quantization_error(layer, residuals)
    epochs_run = 0
    for epoch in tqdm(range(schedule.epochs), desc=f"som layer {index}", disable=not progress):
        sigma, eta = schedule.sigma(epoch), schedule.eta(epoch)
        before = layer.prototypes.copy()
        order = rng.permutation(residuals.shape[0])
        for start in range(0, len(order), batch_size):
            batch_update(layer, residuals[order[start:start + batch_size]], sigma, eta, eps)
        epochs_run = epoch + 1
        movement = float(np.max(np.abs(layer.prototypes - before)))
        logger.debug("layer %d epoch %d sigma %.3f eta %.3f movement %.3g",
                     index, epoch, sigma, eta, movement)
        if movement_tol is not None and movement < movement_tol:
            logger.info("layer %d converged after %d epochs", index, epochs_run)
            break
    layer.freeze()
    report = LayerReport(
        layer=index,
        grid=(layer.height, layer.width),
        epochs_run=epochs_run,
        initial_error=initial,
        final_error=quantization_error(layer, residuals),
    )
    logger.info("layer %d (%dx%d) quantization error %.4f -> %.4f",
                index, layer.height, layer.width, report.initial_error, report.final_error)
    return report


def train_hsom(
    embeddings: np.ndarray,
    config: HsomConfig,
    seed: int = 0,
    progress: bool = False,
) -> Tuple[HsomModel, List[LayerReport]]:
    """
    Train the layers one after another; each layer sees the residuals left by
    the frozen layers before it.
    """
    residuals = np.asarray(embeddings, dtype=np.float64).copy()
    if residuals.ndim != 2 or residuals.shape[0] == 0:
        raise ValueError(f"expected a non-empty 2-D embedding matrix, got shape {residuals.shape}")
    rng = np.random.default_rng(seed)
    model = HsomModel()
    reports = []
    for index, grid in enumerate(config.grids, start=1):
        grid = tuple(grid)
        scale = config.init_scale * float(residuals.std())
        layer = init_layer(grid, residuals, scale, rng)
        report = train_layer(
            layer, residuals, SomSchedule.for_grid(grid, config), rng,
            batch_size=config.batch_size, eps=config.eps,
            movement_tol=config.movement_tol, index=index, progress=progress,
        )
        model.layers.append(layer)
        reports.append(report)
        residuals = residuals - layer.prototypes[find_bmus(layer, residuals)]
    return model, reports


def _require_frozen(model: HsomModel) -> None:
    if not model.frozen:
        raise UnfrozenModelError("all SOM layers must be trained and frozen before quantizing")


def quantize(model: HsomModel, embedding: np.ndarray) -> Tuple[List[Tuple[int, int, int]], ResidualTrace]:
    """Codes (layer, row, col) of one embedding and its residual trace."""
    _require_frozen(model)
    residual = np.asarray(embedding, dtype=np.float64)
    trace = ResidualTrace(residuals=[residual.copy()])
    codes = []
    for index, layer in enumerate(model.layers, start=1):
        bmu = int(find_bmus(layer, residual)[0])
        codes.append((index, *layer.node(bmu)))
        residual = residual - layer.prototypes[bmu]
        trace.residuals.append(residual)
    return codes, trace


def quantize_batch(model: HsomModel, embeddings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """BMU node indices (n x L) and the final residuals (n x d)."""
    _require_frozen(model)
    residuals = np.asarray(embeddings, dtype=np.float64).copy()
    nodes = np.zeros((residuals.shape[0], len(model.layers)), dtype=np.int64)
    for l, layer in enumerate(model.layers):
        nodes[:, l] = find_bmus(layer, residuals)
        residuals -= layer.prototypes[nodes[:, l]]
    return nodes, residuals


def render_sid(codes: Sequence[Tuple[int, int, int]], disambiguator: int = 0) -> str:
    """
    "<A_r_c><B_r_c>..." with one letter per layer, plus "<Z#n>" when n > 0.

    >>> render_sid([(1, 1, 2), (2, 2, 3), (3, 4, 5), (4, 1, 1)])
    '<A_1_2><B_2_3><C_4_5><D_1_1>'
    """
    if len(codes) > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers can be rendered, got {len(codes)}")
    if disambiguator < 0:
        raise ValueError(f"disambiguator must be >= 0, got {disambiguator}")
    parts = []
    for position, (layer, row, col) in enumerate(codes, start=1):
        if layer != position:
            raise ValueError(f"code {position} is labelled layer {layer}")
        parts.append(f"<{string.ascii_uppercase[layer - 1]}_{row}_{col}>")
    if disambiguator:
        parts.append(f"<Z#{disambiguator}>")
    return "".join(parts)


def parse_sid(text: str) -> Tuple[List[Tuple[int, int, int]], int]:
    """Inverse of render_sid."""
    disambiguator = 0
    match = _DISAMBIGUATOR.search(text)
    body = text
    if match is not None:
        if match.end() != len(text):
            raise ValueError(f"disambiguator must be the last token: {text!r}")
        disambiguator = int(match.group(1))
        body = text[:match.start()]
    codes = []
    position = 0
    for token in _TOKEN.finditer(body):
        if token.start() != position:
            raise ValueError(f"unexpected text in semantic ID {text!r}")
        layer = string.ascii_uppercase.index(token.group(1)) + 1
        codes.append((layer, int(token.group(2)), int(token.group(3))))
        position = token.end()
    if not codes or position != len(body):
        raise ValueError(f"not a semantic ID: {text!r}")
    if [c[0] for c in codes] != list(range(1, len(codes) + 1)):
        raise ValueError(f"layers out of order in {text!r}")
    return codes, disambiguator


def semantic_id(codes: Sequence[Tuple[int, int, int]], disambiguator: int = 0) -> SemanticId:
    return SemanticId(
        codes=tuple(tuple(c) for c in codes),
        disambiguator=disambiguator,
        rendered=render_sid(codes, disambiguator),
    )


def assign_sids(model: HsomModel, pois: Sequence[str], embeddings: np.ndarray) -> Dict[str, SemanticId]:
    """
    Quantize every POI; POIs sharing a code sequence get disambiguators
    0, 1, 2, ... in ascending POI-id order.
    """
    nodes, _ = quantize_batch(model, embeddings)
    groups: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
    for i, row in enumerate(nodes):
        groups[tuple(int(n) for n in row)].append(i)

    table: Dict[str, SemanticId] = {}
    collisions = 0
    for key, members in groups.items():
        codes = [(l + 1, *model.layers[l].node(n)) for l, n in enumerate(key)]
        for rank, i in enumerate(sorted(members, key=lambda i: pois[i])):
            table[pois[i]] = semantic_id(codes, rank)
        collisions += len(members) - 1
    if collisions:
        logger.info("%d POIs needed a disambiguator token", collisions)
    return dict(sorted(table.items()))


def model_to_records(model: HsomModel) -> List[Dict[str, Any]]:
    return [
        {
            "layer": index,
            "height": layer.height,
            "width": layer.width,
            "prototypes": layer.prototypes.tolist(),
        }
        for index, layer in enumerate(model.layers, start=1)
    ]


def model_from_records(records: Sequence[Dict[str, Any]]) -> HsomModel:
    model = HsomModel()
    for record in sorted(records, key=lambda r: r["layer"]):
        layer = SomLayer(
            height=int(record["height"]),
            width=int(record["width"]),
            prototypes=np.asarray(record["prototypes"], dtype=np.float64),
        )
        model.layers.append(layer.freeze())
    return model


def intra_cluster_grid_distance(coords: np.ndarray, labels: Sequence[Any]) -> float:
    """Mean over clusters (size >= 2) of the mean pairwise grid distance of members."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    means = []
    for label in np.unique(labels):
        members = coords[labels == label]
        if len(members) < 2:
            continue
        d = np.sqrt(np.sum((members[:, None, :] - members[None, :, :]) ** 2, axis=-1))
        upper = np.triu_indices(len(members), k=1)
        means.append(d[upper].mean())
    if not means:
        raise ValueError("no cluster has two or more members")
    return float(np.mean(means))


@dataclass
class PermutationTest:
    observed: float
    null: np.ndarray
    p_value: float


def topology_permutation_test(
    layer: SomLayer,
    nodes: Sequence[int],
    labels: Sequence[Any],
    n_permutations: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> PermutationTest:
    """
    Compare intra-cluster grid distance of the BMU nodes against random
    relabellings of the lattice positions.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    nodes = np.asarray(nodes, dtype=np.int64)
    coords = layer.coordinates
    observed = intra_cluster_grid_distance(coords[nodes], labels)
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        shuffled = coords[rng.permutation(layer.size)]
        null[i] = intra_cluster_grid_distance(shuffled[nodes], labels)
    p_value = (1.0 + float(np.sum(null <= observed))) / (n_permutations + 1.0)
    return PermutationTest(observed=observed, null=null, p_value=p_value)
