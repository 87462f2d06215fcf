"""Minimal causal decoder-only transformer in float64 numpy.

Activations are row-major: a sequence of T tokens is a ``(T, D)`` matrix and
projections are applied as ``x @ W`` with ``W`` stored ``(in, out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContextOverflow, EmptyInput, NumericalError, UnknownToken, WeightError

NORM_PLACEMENTS = ("pre", "post")
POSITIONAL_SCHEMES = ("rotary", "learned-absolute", "none")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    vocab_size: int = 512
    max_context: int = 4096
    norm_placement: str = "pre"
    positional_scheme: str = "rotary"
    ff_dim: int = 0  # 0 means 4 * hidden_dim
    norm_eps: float = 1e-5
    rope_base: float = 10000.0

    def __post_init__(self) -> None:
        for name in ("num_layers", "hidden_dim", "num_heads", "vocab_size", "max_context"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.num_heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.norm_placement not in NORM_PLACEMENTS:
            raise ValueError(f"norm_placement must be one of {NORM_PLACEMENTS}")
        if self.positional_scheme not in POSITIONAL_SCHEMES:
            raise ValueError(f"positional_scheme must be one of {POSITIONAL_SCHEMES}")
        if self.positional_scheme == "rotary" and self.head_dim % 2:
            raise ValueError("rotary positions need an even head dimension")
        if self.ff_dim == 0:
            object.__setattr__(self, "ff_dim", 4 * self.hidden_dim)
        if self.ff_dim < 1:
            raise ValueError("ff_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "vocab_size": self.vocab_size,
            "max_context": self.max_context,
            "norm_placement": self.norm_placement,
            "positional_scheme": self.positional_scheme,
            "ff_dim": self.ff_dim,
            "norm_eps": self.norm_eps,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass(frozen=True)
class LayerWeights:
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    ff_in: np.ndarray
    ff_in_bias: np.ndarray
    ff_out: np.ndarray
    ff_out_bias: np.ndarray

    FIELDS = (
        "ln1_scale", "ln1_shift", "w_query", "w_key", "w_value", "w_out",
        "ln2_scale", "ln2_shift", "ff_in", "ff_in_bias", "ff_out", "ff_out_bias",
    )

    @staticmethod
    def shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
        d, f = config.hidden_dim, config.ff_dim
        return {
            "ln1_scale": (d,), "ln1_shift": (d,),
            "w_query": (d, d), "w_key": (d, d), "w_value": (d, d), "w_out": (d, d),
            "ln2_scale": (d,), "ln2_shift": (d,),
            "ff_in": (d, f), "ff_in_bias": (f,), "ff_out": (f, d), "ff_out_bias": (d,),
        }


@dataclass(frozen=True)
class WeightSet:
    token_embedding: np.ndarray
    position_embedding: np.ndarray | None
    layers: tuple[LayerWeights, ...]
    final_scale: np.ndarray
    final_shift: np.ndarray
    output_head: np.ndarray

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every parameter array in the fixed serialization order."""
        out = [("token_embedding", self.token_embedding)]
        if self.position_embedding is not None:
            out.append(("position_embedding", self.position_embedding))
        for i, layer in enumerate(self.layers):
            out.extend((f"layers.{i}.{name}", getattr(layer, name)) for name in LayerWeights.FIELDS)
        out.extend([
            ("final_scale", self.final_scale),
            ("final_shift", self.final_shift),
            ("output_head", self.output_head),
        ])
        return out

    def validate(self, config: ModelConfig) -> None:
        expected = dict(weight_shapes(config))
        got = self.arrays()
        if [name for name, _ in got] != list(expected):
            raise WeightError("weight set layout does not match config")
        for name, arr in got:
            if arr.shape != expected[name]:
                raise WeightError(f"{name}: shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise WeightError(f"{name}: contains non-finite values")


def weight_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, v = config.hidden_dim, config.vocab_size
    shapes: list[tuple[str, tuple[int, ...]]] = [("token_embedding", (v, d))]
    if config.positional_scheme == "learned-absolute":
        shapes.append(("position_embedding", (config.max_context, d)))
    layer_shapes = LayerWeights.shapes(config)
    for i in range(config.num_layers):
        shapes.extend((f"layers.{i}.{name}", layer_shapes[name]) for name in LayerWeights.FIELDS)
    shapes.extend([("final_scale", (d,)), ("final_shift", (d,)), ("output_head", (d, v))])
    return shapes


def weights_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> WeightSet:
    frozen = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        frozen[name] = arr
    layers = tuple(
        LayerWeights(**{name: frozen[f"layers.{i}.{name}"] for name in LayerWeights.FIELDS})
        for i in range(config.num_layers)
    )
    weights = WeightSet(
        token_embedding=frozen["token_embedding"],
        position_embedding=frozen.get("position_embedding"),
        layers=layers,
        final_scale=frozen["final_scale"],
        final_shift=frozen["final_shift"],
        output_head=frozen["output_head"],
    )
    weights.validate(config)
    return weights


def init_weights(config: ModelConfig, seed: int, scale: float = 0.05) -> WeightSet:
    """Seeded random weights: matrices and biases uniform in [-scale, scale].

    Norm gains are drawn around 1 so that normalization does not crush the
    residual stream.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in weight_shapes(config):
        values = rng.uniform(-scale, scale, size=shape)
        if name.endswith("scale") and len(shape) == 1:
            values = values + 1.0
        arrays[name] = values
    return weights_from_arrays(config, arrays)


def zero_block_weights(config: ModelConfig) -> WeightSet:
    """Weights whose attention and feedforward sub-modules output exactly zero."""
    arrays = {}
    for name, shape in weight_shapes(config):
        arrays[name] = np.ones(shape) if name.endswith("scale") and len(shape) == 1 else np.zeros(shape)
    return weights_from_arrays(config, arrays)


@dataclass
class ForwardResult:
    logits: np.ndarray
    hidden_states: tuple[np.ndarray, ...] | None = None
    attentions: np.ndarray | None = None  # (L, heads, T, T)
    tokens: tuple[int, ...] = field(default=())


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def stable_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) matrix, True on the strictly upper triangle (masked cells)."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def rotary(x: np.ndarray, positions: np.ndarray, base: float) -> np.ndarray:
    """Rotate-half rotary embedding on the last axis of ``(..., T, head_dim)``."""
    half = x.shape[-1] // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / x.shape[-1])
    angles = positions[:, None].astype(np.float64) * inv_freq[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def multi_head_attention(
    x: np.ndarray, layer: LayerWeights, config: ModelConfig, positions: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Causal scaled dot-product attention; returns (output, maps of shape (H, T, T))."""
    t = x.shape[0]
    h, hd = config.num_heads, config.head_dim
    q = (x @ layer.w_query).reshape(t, h, hd).transpose(1, 0, 2)
    k = (x @ layer.w_key).reshape(t, h, hd).transpose(1, 0, 2)
    v = (x @ layer.w_value).reshape(t, h, hd).transpose(1, 0, 2)
    if config.positional_scheme == "rotary":
        q = rotary(q, positions, config.rope_base)
        k = rotary(k, positions, config.rope_base)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(hd)
    scores = np.where(causal_mask(t)[None], -np.inf, scores)
    probs = stable_softmax(scores)
    context = (probs @ v).transpose(1, 0, 2).reshape(t, config.hidden_dim)
    return context @ layer.w_out, probs


def feed_forward(x: np.ndarray, layer: LayerWeights) -> np.ndarray:
    return gelu(x @ layer.ff_in + layer.ff_in_bias) @ layer.ff_out + layer.ff_out_bias


def _check_finite(x: np.ndarray, layer_index: int, stage: str) -> None:
    if not np.all(np.isfinite(x)):
        position = int(np.argwhere(~np.isfinite(x))[0][0])
        raise NumericalError(
            f"non-finite value after {stage} in layer {layer_index} at position {position}",
            layer=layer_index,
            position=position,
        )


def attention_block(
    layer_input: np.ndarray,
    layer_index: int,
    config: ModelConfig,
    weights: WeightSet,
    positions: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One transformer block. Returns the block output and its (H, T, T) attention maps.

    post-norm: a = LN(Attn(z) + z);  z' = LN(FF(a) + a)
    pre-norm:  a = z + Attn(LN(z));  z' = a + FF(LN(a))
    """
    if layer_input.ndim != 2 or layer_input.shape[1] != config.hidden_dim:
        raise ValueError(f"layer input must be (seq, {config.hidden_dim}), got {layer_input.shape}")
    if not 0 <= layer_index < config.num_layers:
        raise IndexError(f"layer index {layer_index} out of range")
    layer = weights.layers[layer_index]
    if positions is None:
        positions = np.arange(layer_input.shape[0])
    eps = config.norm_eps
    z = layer_input
    _check_finite(z, layer_index, "input")
    if config.norm_placement == "post":
        attn_out, maps = multi_head_attention(z, layer, config, positions)
        _check_finite(attn_out, layer_index, "attention")
        a = layer_norm(attn_out + z, layer.ln1_scale, layer.ln1_shift, eps)
        out = layer_norm(feed_forward(a, layer) + a, layer.ln2_scale, layer.ln2_shift, eps)
    else:
        attn_out, maps = multi_head_attention(
            layer_norm(z, layer.ln1_scale, layer.ln1_shift, eps), layer, config, positions
        )
        _check_finite(attn_out, layer_index, "attention")
        a = z + attn_out
        out = a + feed_forward(layer_norm(a, layer.ln2_scale, layer.ln2_shift, eps), layer)
    _check_finite(out, layer_index, "feedforward")
    return out, maps


def _validate_tokens(tokens: Iterable[int], config: ModelConfig) -> np.ndarray:
    ids = np.asarray(list(tokens) if not isinstance(tokens, np.ndarray) else tokens)
    if ids.size == 0:
        raise EmptyInput("token sequence is empty")
    if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise UnknownToken("tokens must be a flat sequence of integer ids")
    bad = (ids < 0) | (ids >= config.vocab_size)
    if bad.any():
        raise UnknownToken(f"token id {int(ids[bad][0])} outside vocabulary of {config.vocab_size}")
    if ids.size > config.max_context:
        raise ContextOverflow(f"sequence length {ids.size} exceeds max_context {config.max_context}")
    return ids.astype(np.int64)


def embed(ids: np.ndarray, config: ModelConfig, weights: WeightSet) -> np.ndarray:
    x = weights.token_embedding[ids]
    if config.positional_scheme == "learned-absolute":
        x = x + weights.position_embedding[: ids.size]
    return x


def final_vector(z_last: np.ndarray, config: ModelConfig, weights: WeightSet) -> np.ndarray:
    """Pre-norm stacks get a closing normalization; post-norm outputs are already normalized."""
    if config.norm_placement == "pre":
        return layer_norm(z_last, weights.final_scale, weights.final_shift, config.norm_eps)
    return z_last


def forward(
    tokens: Sequence[int] | np.ndarray,
    config: ModelConfig,
    weights: WeightSet,
    *,
    hidden_states: bool = False,
    attentions: bool = False,
) -> ForwardResult:
    """Run the decoder over ``tokens`` and return final-position logits.

    With ``hidden_states`` the result carries L+1 ``(T, D)`` matrices, index 0
    being the embedding layer. With ``attentions`` it carries an
    ``(L, heads, T, T)`` array of row-stochastic lower-triangular maps.
    """
    ids = _validate_tokens(tokens, config)
    positions = np.arange(ids.size)
    z = embed(ids, config, weights)
    states = [z] if hidden_states else None
    maps = [] if attentions else None
    for layer_index in range(config.num_layers):
        z, layer_maps = attention_block(z, layer_index, config, weights, positions)
        if states is not None:
            states.append(z)
        if maps is not None:
            maps.append(layer_maps)
    logits = final_vector(z[-1], config, weights) @ weights.output_head
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits", layer=config.num_layers, position=ids.size - 1)
    return ForwardResult(
        logits=logits,
        hidden_states=tuple(states) if states is not None else None,
        attentions=np.stack(maps) if maps is not None else None,
        tokens=tuple(int(i) for i in ids),
    )


def count_masked_scores(seq_len: int, fillers: int = 0) -> int:
    """Number of masked (strictly upper-triangular) scores for T + M positions."""
    if seq_len < 1 or fillers < 0:
        raise ValueError("need seq_len >= 1 and fillers >= 0")
    n = seq_len + fillers
    return n * (n - 1) // 2


def count_total_scores(seq_len: int, fillers: int = 0) -> int:
    return (seq_len + fillers) ** 2


def greedy_decode(
    prompt: Sequence[int],
    config: ModelConfig,
    weights: WeightSet,
    max_new: int,
    stop_ids: Iterable[int] = (),
) -> list[int]:
    """Append argmax tokens until a stop id is produced or ``max_new`` tokens exist.

    Returns only the generated ids; a produced stop id is included.
    """
    if max_new < 1:
        raise ValueError("max_new must be at least 1")
    seq = list(prompt)
    if not seq:
        raise EmptyInput("prompt is empty")
    stops = set(stop_ids)
    generated: list[int] = []
    while len(generated) < max_new:
        if len(seq) + 1 > config.max_context:
            raise ContextOverflow(
                f"decoding would exceed max_context {config.max_context} after {len(generated)} tokens"
            )
        logits = forward(seq, config, weights).logits
        nxt = int(np.argmax(logits))
        generated.append(nxt)
        seq.append(nxt)
        if nxt in stops:
            break
    return generated
