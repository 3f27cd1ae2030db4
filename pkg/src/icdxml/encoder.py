"""Transformer encoder with learned absolute positions and attention capture."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import Chunk
from .numerics import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    intermediate_size: int = 256
    hidden_dropout: float = 0.1
    attention_dropout: float = 0.1
    max_len: int = 128
    vocab_size: int = 205
    segment_types: int = 2
    initializer_range: float = 0.02
    layer_norm_eps: float = 1e-12

    def validate(self) -> None:
        problems = []
        for name in ("hidden_size", "num_heads", "intermediate_size", "vocab_size", "segment_types"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.num_layers < 0:
            problems.append("num_layers must be non-negative")
        if self.max_len < 2:
            problems.append("max_len must be at least 2")
        if self.num_heads > 0 and self.hidden_size % self.num_heads:
            problems.append("hidden_size must be divisible by num_heads")
        for name in ("hidden_dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                problems.append(f"{name} must be in [0, 1)")
        if problems:
            raise ValueError("invalid encoder config: " + "; ".join(problems))

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> "EncoderConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


PRESETS = {
    "desk": EncoderConfig(),
    "small": EncoderConfig(
        hidden_size=512, num_layers=8, num_heads=8, intermediate_size=2048, max_len=1024,
        vocab_size=20005,
    ),
    "big": EncoderConfig(
        hidden_size=768, num_layers=12, num_heads=12, intermediate_size=3072, max_len=1024,
        vocab_size=20005,
    ),
}


def truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std^2) samples redrawn until they fall inside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class EncoderParams:
    """Named learnable tensors of the encoder plus its pretraining heads."""

    def __init__(self, config: EncoderConfig, weights: dict[str, Tensor]):
        self.config = config
        self.weights = weights

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]

    def __iter__(self):
        return iter(self.weights)

    def items(self):
        return self.weights.items()

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config,
            {k: nx.parameter(v.data.copy(), name=k) for k, v in self.weights.items()},
        )

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            self.config,
            {k: nx.parameter(v.data.astype(dtype), name=k) for k, v in self.weights.items()},
        )


def _shapes(cfg: EncoderConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    d, ff = cfg.hidden_size, cfg.intermediate_size
    spec: dict[str, tuple[tuple[int, ...], str]] = {
        "emb.token": ((cfg.vocab_size, d), "normal"),
        "emb.position": ((cfg.max_len, d), "normal"),
        "emb.segment": ((cfg.segment_types, d), "normal"),
        "emb.ln.gamma": ((d,), "ones"),
        "emb.ln.beta": ((d,), "zeros"),
    }
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            spec[p + f"attn.{proj}.weight"] = ((d, d), "normal")
            spec[p + f"attn.{proj}.bias"] = ((d,), "zeros")
        spec[p + "ln1.gamma"] = ((d,), "ones")
        spec[p + "ln1.beta"] = ((d,), "zeros")
        spec[p + "ffn.in.weight"] = ((d, ff), "normal")
        spec[p + "ffn.in.bias"] = ((ff,), "zeros")
        spec[p + "ffn.out.weight"] = ((ff, d), "normal")
        spec[p + "ffn.out.bias"] = ((d,), "zeros")
        spec[p + "ln2.gamma"] = ((d,), "ones")
        spec[p + "ln2.beta"] = ((d,), "zeros")
    spec.update(
        {
            "mlm.dense.weight": ((d, d), "normal"),
            "mlm.dense.bias": ((d,), "zeros"),
            "mlm.ln.gamma": ((d,), "ones"),
            "mlm.ln.beta": ((d,), "zeros"),
            "mlm.out.bias": ((cfg.vocab_size,), "zeros"),
            "pool.weight": ((d, d), "normal"),
            "pool.bias": ((d,), "zeros"),
            "nsp.weight": ((d, 1), "normal"),
            "nsp.bias": ((1,), "zeros"),
        }
    )
    return spec


def init_encoder(config: EncoderConfig, seed: int = 0, dtype=None) -> EncoderParams:
    config.validate()
    dtype = dtype or nx.default_dtype()
    rng = np.random.default_rng(seed)
    weights = {}
    for name, (shape, kind) in _shapes(config).items():
        if kind == "normal":
            arr = truncated_normal(rng, shape, config.initializer_range, dtype)
        elif kind == "ones":
            arr = np.ones(shape, dtype=dtype)
        else:
            arr = np.zeros(shape, dtype=dtype)
        weights[name] = nx.parameter(arr, name=name)
    return EncoderParams(config, weights)


def extend_positions(params: EncoderParams, new_max: int, seed: int = 0) -> EncoderParams:
    """Grow the positional table to ``new_max`` rows; old rows are kept verbatim."""
    cfg = params.config
    if new_max <= cfg.max_len:
        raise ValueError(f"new_max={new_max} must exceed current max_len={cfg.max_len}")
    old = params["emb.position"].data
    rng = np.random.default_rng(seed)
    fresh = truncated_normal(rng, (new_max - cfg.max_len, cfg.hidden_size), cfg.initializer_range, old.dtype)
    out = params.copy()
    out.config = replace(cfg, max_len=new_max)
    out.weights["emb.position"] = nx.parameter(np.concatenate([old, fresh]), name="emb.position")
    return out


@dataclass
class EncoderOutput:
    hidden: Tensor
    attentions: list[np.ndarray] | None = None


def _as_batch(inputs) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    if isinstance(inputs, Chunk):
        return inputs.ids[None], inputs.mask[None], inputs.segments[None], True
    ids, mask, segments = inputs
    ids, mask, segments = np.asarray(ids), np.asarray(mask), np.asarray(segments)
    if ids.ndim == 1:
        return ids[None], mask[None], segments[None], True
    return ids, mask, segments, False


def embed(params: EncoderParams, inputs, train: bool = False, rng=None) -> Tensor:
    """Token + position + segment embeddings, layer-normed, with dropout in training."""
    cfg = params.config
    ids, _, segments, single = _as_batch(inputs)
    n = ids.shape[-1]
    if n > cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    x = (
        nx.embedding(params["emb.token"], ids)
        + params["emb.position"][:n]
        + nx.embedding(params["emb.segment"], segments)
    )
    x = nx.layer_norm(x, params["emb.ln.gamma"], params["emb.ln.beta"], cfg.layer_norm_eps)
    x = nx.dropout(x, cfg.hidden_dropout, rng, train)
    return x[0] if single else x


def _self_attention(params, prefix, x, key_mask, cfg, train, rng):
    b, n, d = x.shape
    h, dh = cfg.num_heads, cfg.head_dim

    def heads(t):
        return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

    q = heads(nx.linear(x, params[prefix + "q.weight"], params[prefix + "q.bias"]))
    k = heads(nx.linear(x, params[prefix + "k.weight"], params[prefix + "k.bias"]))
    v = heads(nx.linear(x, params[prefix + "v.weight"], params[prefix + "v.bias"]))
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    probs = nx.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    attn = nx.dropout(probs, cfg.attention_dropout, rng, train)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    out = nx.linear(ctx, params[prefix + "o.weight"], params[prefix + "o.bias"])
    return out, probs.data


def encoder_forward(
    params: EncoderParams,
    inputs,
    train: bool = False,
    rng: np.random.Generator | None = None,
    capture_attention: bool = False,
) -> EncoderOutput:
    """Run the post-norm transformer stack.

    ``inputs`` is a :class:`Chunk` or an ``(ids, mask, segments)`` triple of
    ``[B, N]`` arrays.  Hidden states come back as ``[N, d]`` for a single
    chunk and ``[B, N, d]`` for a batch; attention maps as ``[B, heads, N, N]``.
    """
    cfg = params.config
    ids, mask, segments, single = _as_batch(inputs)
    key_mask = mask.astype(bool)
    if not key_mask.any(axis=-1).all():
        raise ValueError("every sequence needs at least one unmasked position")
    x = embed(params, (ids, mask, segments), train, rng)
    attentions = [] if capture_attention else None
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        attn_out, probs = _self_attention(params, p + "attn.", x, key_mask, cfg, train, rng)
        if attentions is not None:
            attentions.append(probs)
        x = nx.layer_norm(
            x + nx.dropout(attn_out, cfg.hidden_dropout, rng, train),
            params[p + "ln1.gamma"], params[p + "ln1.beta"], cfg.layer_norm_eps,
        )
        ff = nx.linear(
            nx.gelu(nx.linear(x, params[p + "ffn.in.weight"], params[p + "ffn.in.bias"])),
            params[p + "ffn.out.weight"], params[p + "ffn.out.bias"],
        )
        x = nx.layer_norm(
            x + nx.dropout(ff, cfg.hidden_dropout, rng, train),
            params[p + "ln2.gamma"], params[p + "ln2.beta"], cfg.layer_norm_eps,
        )
    if single:
        x = x[0]
    return EncoderOutput(x, attentions)


def mlm_logits(params: EncoderParams, hidden: Tensor) -> Tensor:
    """Vocabulary logits for ``[T, d]`` hidden rows; the decoder is tied to the token table."""
    cfg = params.config
    t = nx.gelu(nx.linear(hidden, params["mlm.dense.weight"], params["mlm.dense.bias"]))
    t = nx.layer_norm(t, params["mlm.ln.gamma"], params["mlm.ln.beta"], cfg.layer_norm_eps)
    return t @ params["emb.token"].T + params["mlm.out.bias"]


def nsp_logit(params: EncoderParams, h_cls: Tensor) -> Tensor:
    """Is-next logit from the ``[B, d]`` CLS states."""
    pooled = nx.tanh(nx.linear(h_cls, params["pool.weight"], params["pool.bias"]))
    return nx.linear(pooled, params["nsp.weight"], params["nsp.bias"]).reshape(-1)
