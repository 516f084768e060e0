"""Seed-deterministic float32 toy transformer.

Small enough to run exhaustive equivalence checks against the streaming cache
engine, deterministic enough to freeze golden outputs. Pre-norm blocks, RMS
normalization without learned scale, tanh-form GELU, no biases, rotary
positions applied to queries and keys inside attention. All activations and
weights are float32; golden files pin a checksum of the exact byte stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .masks import MaskMatrix
from .rope import PositionMap, RotaryConfig, rotate_many


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    vocab_size: int = 64
    ffn_mult: int = 4
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("n_layers", "n_heads", "head_dim", "vocab_size", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even for rotary positions")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim

    def rotary(self) -> RotaryConfig:
        return RotaryConfig(head_dim=self.head_dim)


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    embed: np.ndarray
    layers: tuple[LayerWeights, ...]
    unembed: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        """All arrays in the documented fill order."""
        out = [self.embed]
        for l in self.layers:
            out.extend([l.wq, l.wk, l.wv, l.wo, l.w1, l.w2])
        out.append(self.unembed)
        return out


def init_weights(config: ModelConfig) -> ModelWeights:
    """Fill order (one PCG64 stream from config.seed, numpy default_rng):
    embedding, then per layer wq, wk, wv, wo, w1, w2, then unembedding.
    Embedding is unit normal; every matrix is normal with std 1/sqrt(fan_in),
    fan_in being the input dimension of the matmul. Drawn in float64, stored
    float32."""
    rng = np.random.default_rng(config.seed)
    d, v, f = config.model_dim, config.vocab_size, config.ffn_mult * config.model_dim

    def mat(rows: int, cols: int) -> np.ndarray:
        return (rng.standard_normal((rows, cols)) / np.sqrt(rows)).astype(np.float32)

    embed = rng.standard_normal((v, d)).astype(np.float32)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            wq=mat(d, d), wk=mat(d, d), wv=mat(d, d), wo=mat(d, d),
            w1=mat(d, f), w2=mat(f, d),
        ))
    unembed = mat(d, v)
    return ModelWeights(config, embed, tuple(layers), unembed)


def weights_checksum(weights: ModelWeights) -> str:
    """SHA-256 over the float32 byte stream of all arrays in fill order."""
    h = hashlib.sha256()
    for a in weights.arrays():
        h.update(np.ascontiguousarray(a, dtype=np.float32).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def rms_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    denom = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + np.float32(eps))
    return (x / denom).astype(np.float32)


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh form, evaluated in float32
    x = x.astype(np.float32)
    c = np.float32(np.sqrt(2.0 / np.pi))
    return (0.5 * x * (1.0 + np.tanh(c * (x + np.float32(0.044715) * x ** 3)))).astype(np.float32)


def masked_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax in float32. With the -1e9 sentinel the exponentials of
    masked cells underflow to exactly 0, so masked columns contribute nothing,
    not merely something small."""
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp((scores - m).astype(np.float32))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def split_heads(x: np.ndarray, n_heads: int, head_dim: int) -> np.ndarray:
    return x.reshape(x.shape[0], n_heads, head_dim)


def attention_layer(
    x: np.ndarray,
    layer: LayerWeights,
    mask_data: np.ndarray,
    position_ids: np.ndarray,
    config: ModelConfig,
) -> np.ndarray:
    """One pre-norm attention block (residual included)."""
    h = rms_norm(x)
    rot = config.rotary()
    q = split_heads(h @ layer.wq, config.n_heads, config.head_dim)
    k = split_heads(h @ layer.wk, config.n_heads, config.head_dim)
    v = split_heads(h @ layer.wv, config.n_heads, config.head_dim)
    q = rotate_many(q, position_ids[:, None], rot)
    k = rotate_many(k, position_ids[:, None], rot)
    scale = np.float32(1.0 / np.sqrt(config.head_dim))
    scores = np.einsum("qhd,khd->hqk", q, k).astype(np.float32) * scale
    scores = scores + mask_data[None, :, :].astype(np.float32)
    attn = masked_softmax(scores)
    ctx = np.einsum("hqk,khd->qhd", attn, v).astype(np.float32)
    ctx = ctx.reshape(x.shape[0], config.model_dim)
    return (x + ctx @ layer.wo).astype(np.float32)


def ffn_layer(x: np.ndarray, layer: LayerWeights) -> np.ndarray:
    h = rms_norm(x)
    return (x + gelu(h @ layer.w1) @ layer.w2).astype(np.float32)


def forward(
    token_ids: "list[int] | np.ndarray",
    mask: MaskMatrix,
    positions: PositionMap,
    weights: ModelWeights,
) -> np.ndarray:
    """Full-sequence forward pass. Returns (n, vocab) float32 logits."""
    ids = np.asarray(token_ids, dtype=np.int64)
    cfg = weights.config
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token ids must be a nonempty 1-d sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must be in [0, {cfg.vocab_size})")
    if mask.n != ids.size:
        raise ValueError(f"mask is {mask.n}x{mask.n}, sequence has {ids.size} tokens")
    if len(positions) != ids.size:
        raise ValueError(f"position map covers {len(positions)} tokens, sequence has {ids.size}")
    x = weights.embed[ids].astype(np.float32)
    for layer in weights.layers:
        x = attention_layer(x, layer, mask.data, positions.ids, cfg)
        x = ffn_layer(x, layer)
    x = rms_norm(x)
    return (x @ weights.unembed).astype(np.float32)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

class SamplerMode(Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"


@dataclass(frozen=True)
class SamplerConfig:
    mode: SamplerMode = SamplerMode.GREEDY
    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def next_token(
    logits_row: np.ndarray,
    sampler: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> int:
    """Pick one token id from a logits row.

    Greedy takes the argmax with ties broken toward the lowest id. Sampling
    keeps the top-k logits, truncates to the smallest nucleus reaching top_p of
    their softmax mass, applies the temperature, then draws with the given
    generator (or a fresh one from the sampler seed)."""
    row = np.asarray(logits_row, dtype=np.float32).ravel()
    if row.size == 0:
        raise ValueError("empty logits row")
    finite = np.isfinite(row)
    if not finite.any():
        raise ValueError("no token has finite probability")
    if sampler.mode == SamplerMode.GREEDY:
        safe = np.where(finite, row, -np.inf)
        return int(np.argmax(safe))

    if rng is None:
        rng = sampler.make_rng()
    # top-k, deterministic order: logit descending, id ascending on ties
    order = np.lexsort((np.arange(row.size), -row))
    order = order[finite[order]][: min(sampler.top_k, int(finite.sum()))]
    base = _softmax64(row[order])
    keep = int(np.searchsorted(np.cumsum(base), sampler.top_p) + 1)
    keep = min(keep, order.size)
    survivors = order[:keep]
    final = _softmax64(row[survivors] / np.float32(sampler.temperature))
    return int(rng.choice(survivors, p=final / final.sum()))


def _softmax64(x: np.ndarray) -> np.ndarray:
    e = np.exp(np.asarray(x, dtype=np.float64) - float(np.max(x)))
    return e / e.sum()
