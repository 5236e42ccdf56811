"""
Contrastive feature encoder.

A one-hidden-layer ReLU network trained with InfoNCE on pairs of
noise-augmented views of the POI feature vectors. Gradients are analytic;
the trained network is frozen and its outputs feed the quantizer.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .errors import EncoderDivergedError, ZeroNormError
from .model.config import EncoderConfig

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class EncoderParams:
    """Weights of input -> ReLU hidden -> latent, plus augmentation settings."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    noise_std: float = 0.1
    temperature: float = 0.1

    def __post_init__(self):
        if self.w2.shape[1] < 2:
            raise ValueError(f"latent width must be >= 2, got {self.w2.shape[1]}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            **{name: a.copy() for name, a in self.arrays().items()},
            noise_std=self.noise_std,
            temperature=self.temperature,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, name), dtype=np.float64).tobytes())
        return h.hexdigest()

    def to_record(self) -> Dict[str, Any]:
        """Plain-JSON checkpoint (floats written with full precision)."""
        return {
            "noise_std": self.noise_std,
            "temperature": self.temperature,
            "shapes": {name: list(a.shape) for name, a in self.arrays().items()},
            **{name: a.tolist() for name, a in self.arrays().items()},
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "EncoderParams":
        return cls(
            **{name: np.asarray(record[name], dtype=np.float64) for name in PARAM_NAMES},
            noise_std=float(record["noise_std"]),
            temperature=float(record["temperature"]),
        )


@dataclass
class EncoderResult:
    params: Optional[EncoderParams]
    embeddings: np.ndarray
    loss_history: List[float] = field(default_factory=list)


def init_encoder(
    input_dim: int,
    hidden: int = 256,
    dim: int = 64,
    noise_std: float = 0.1,
    temperature: float = 0.1,
    rng: Optional[np.random.Generator] = None,
) -> EncoderParams:
    """He-initialized weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return EncoderParams(
        w1=rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, dim)),
        b2=np.zeros(dim),
        noise_std=noise_std,
        temperature=temperature,
    )


def augment(x: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """x + N(0, noise_std^2 I). A draw is made even for noise_std == 0 so streams stay aligned."""
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    return x + noise_std * rng.standard_normal(np.shape(x))


def forward(params: EncoderParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (pre-activation hidden, latent)."""
    pre = x @ params.w1 + params.b1
    z = np.maximum(pre, 0.0) @ params.w2 + params.b2
    return pre, z


def encode(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    return forward(params, np.asarray(x, dtype=np.float64))[1]


def _positive_index(m: int) -> np.ndarray:
    n = m // 2
    return (np.arange(m) + n) % m


def _normalize(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormError(f"{int(np.sum(norms == 0.0))} latent vectors have zero norm")
    return z / norms[:, None], norms


def _softmax_terms(z: np.ndarray, tau: float):
    m = z.shape[0]
    if m % 2 or m < 2:
        raise ValueError(f"InfoNCE needs an even number (>= 2) of views, got {m}")
    u, norms = _normalize(z)
    logits = (u @ u.T) / tau
    np.fill_diagonal(logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    denom = exp.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0]) + shift[:, 0]
    return u, norms, logits, exp / denom, log_denom


def infonce_loss(z: np.ndarray, tau: float) -> float:
    """
    InfoNCE over 2N latents where row i and row i+N are views of the same sample.

    Every other row in the batch is a negative for the anchor.
    """
    _, _, logits, _, log_denom = _softmax_terms(np.asarray(z, dtype=np.float64), tau)
    pos = _positive_index(z.shape[0])
    per_anchor = log_denom - logits[np.arange(z.shape[0]), pos]
    return float(per_anchor.mean())


def infonce_latent_gradient(z: np.ndarray, tau: float) -> np.ndarray:
    """dL/dz for the InfoNCE loss above."""
    m = z.shape[0]
    u, norms, _, probs, _ = _softmax_terms(z, tau)
    grad_logits = probs.copy()
    grad_logits[np.arange(m), _positive_index(m)] -= 1.0
    grad_logits /= m
    grad_u = (grad_logits + grad_logits.T) @ u / tau
    radial = np.sum(u * grad_u, axis=1, keepdims=True)
    return (grad_u - u * radial) / norms[:, None]


def infonce_objective(params: EncoderParams, views: np.ndarray) -> float:
    return infonce_loss(encode(params, views), params.temperature)


def infonce_gradient(params: EncoderParams, views: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Exact gradient of the InfoNCE loss w.r.t. every encoder parameter.

    `views` stacks the two augmented copies of a batch: rows [0, N) and [N, 2N).
    """
    views = np.asarray(views, dtype=np.float64)
    pre, z = forward(params, views)
    hidden = np.maximum(pre, 0.0)
    grad_z = infonce_latent_gradient(z, params.temperature)
    grad_hidden = (grad_z @ params.w2.T) * (pre > 0.0)
    return {
        "w1": views.T @ grad_hidden,
        "b1": grad_hidden.sum(axis=0),
        "w2": hidden.T @ grad_z,
        "b2": grad_z.sum(axis=0),
    }


def step_size(base: float, epoch: int, epochs: int) -> float:
    """Halve the step every third of the epoch budget."""
    if epochs <= 0:
        return base
    return base * 0.5 ** min(2, (3 * epoch) // epochs)


def train_encoder(
    features: np.ndarray,
    config: EncoderConfig,
    seed: int = 0,
    progress: bool = False,
) -> EncoderResult:
    """
    Train the encoder by plain gradient descent and embed every feature row.

    With the encoder disabled, the raw features are returned as embeddings.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"expected a non-empty 2-D feature matrix, got shape {features.shape}")
    if not config.enabled:
        logger.info("encoder disabled, using raw features as embeddings")
        return EncoderResult(params=None, embeddings=features.copy())

    rng = np.random.default_rng(seed)
    params = init_encoder(
        features.shape[1], config.hidden, config.dim,
        noise_std=config.noise_std, temperature=config.tau, rng=rng,
    )
    n = features.shape[0]
    history: List[float] = []
    for epoch in tqdm(range(config.epochs), desc="encoder", disable=not progress):
        lr = step_size(config.learning_rate, epoch, config.epochs)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = features[order[start:start + config.batch_size]]
            views = np.vstack([
                augment(batch, config.noise_std, rng),
                augment(batch, config.noise_std, rng),
            ])
            loss = infonce_objective(params, views)
            if not np.isfinite(loss):
                raise EncoderDivergedError(
                    "InfoNCE loss is not finite",
                    {"epoch": epoch, "batch_start": start, "loss": loss, "lr": lr},
                )
            for name, grad in infonce_gradient(params, views).items():
                getattr(params, name)[...] -= lr * grad
            if not params.is_finite():
                raise EncoderDivergedError("encoder weights are not finite", {"epoch": epoch, "lr": lr})
            losses.append(loss)
        history.append(float(np.mean(losses)))
        logger.debug("encoder epoch %d loss %.6f lr %.4g", epoch, history[-1], lr)

    window = config.loss_window
    if len(history) >= 2 * window and np.mean(history[-window:]) > np.mean(history[-2 * window:-window]):
        logger.warning("encoder loss rose over the last %d epochs", window)
    if history:
        logger.info("encoder trained %d epochs, loss %.4f -> %.4f", len(history), history[0], history[-1])
    return EncoderResult(params=params, embeddings=encode(params, features), loss_history=history)
