"""Numpy forward pass of a multi-modal temporal-spatial vision transformer.

Each modality's ``(T, H, W, C)`` seasonal stack is cut into ``1 x 8 x 8``
tokens and embedded. Tokens go through a spatial encoder (attention among the
tokens of one season) and then a temporal encoder (attention among the seasons
of one patch). A transformer decoder lets the optical stream attend to the
radar stream, the decoded tokens are averaged over seasons, and a per-token MLP
emits ``8 x 8 x K`` logits that are folded back to an ``(H, W, K)`` map.

Only inference is implemented. Parameters are a flat ``dict`` of float32
arrays keyed by dotted names; compute runs in float64.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .raster import atomic_write_bytes, map_tiles
from .sampler import make_rng

LN_EPS = 1e-6
CROSS_MODES = ("s2_queries", "s1_queries", "bidirectional")


@dataclass(frozen=True)
class ModelConfig:
    patch_t: int = 1
    patch_hw: int = 8
    embed_dim: int = 192
    spatial_layers: int = 2
    temporal_layers: int = 2
    decoder_layers: int = 2
    heads: int = 6
    mlp_ratio: int = 4
    num_classes: int = 8
    channels: dict = field(default_factory=lambda: {"s1": 5, "s2": 10})
    seasons: int = 4
    image_size: int = 128
    share_encoders: bool = True
    pos_embedding: str = "learned"  # or "none"
    cross_attention: str = "s2_queries"

    def __post_init__(self):
        if self.patch_t != 1:
            raise ValueError("only single-season tokens (patch_t=1) are supported")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.image_size % self.patch_hw:
            raise ValueError("patch_hw must divide image_size")
        if self.pos_embedding not in ("learned", "none"):
            raise ValueError(f"unknown pos_embedding {self.pos_embedding!r}")
        if self.cross_attention not in CROSS_MODES:
            raise ValueError(f"cross_attention must be one of {CROSS_MODES}")
        if set(self.channels) != {"s1", "s2"}:
            raise ValueError("channels must give counts for 's1' and 's2'")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_hw

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TokenTensor:
    """Tokens shaped ``(T, S, D)`` with ``S = gh * gw`` spatial positions."""

    tokens: np.ndarray
    gh: int
    gw: int
    modality: str

    @property
    def T(self) -> int:
        return self.tokens.shape[0]

    @property
    def N(self) -> int:
        return self.tokens.shape[0] * self.tokens.shape[1]


# --------------------------------------------------------------------------
# parameter layout


def _enc_layer_shapes(prefix: str, d: int, r: int) -> Iterator[tuple[str, tuple]]:
    yield f"{prefix}.ln1.g", (d,)
    yield f"{prefix}.ln1.b", (d,)
    yield f"{prefix}.attn.qkv.w", (d, 3 * d)
    yield f"{prefix}.attn.qkv.b", (3 * d,)
    yield f"{prefix}.attn.out.w", (d, d)
    yield f"{prefix}.attn.out.b", (d,)
    yield f"{prefix}.ln2.g", (d,)
    yield f"{prefix}.ln2.b", (d,)
    yield from _mlp_shapes(f"{prefix}.mlp", d, r * d, d)


def _mlp_shapes(prefix, d_in, d_hidden, d_out):
    yield f"{prefix}.fc1.w", (d_in, d_hidden)
    yield f"{prefix}.fc1.b", (d_hidden,)
    yield f"{prefix}.fc2.w", (d_hidden, d_out)
    yield f"{prefix}.fc2.b", (d_out,)


def _dec_layer_shapes(prefix: str, d: int, r: int):
    yield f"{prefix}.ln1.g", (d,)
    yield f"{prefix}.ln1.b", (d,)
    yield f"{prefix}.self.qkv.w", (d, 3 * d)
    yield f"{prefix}.self.qkv.b", (3 * d,)
    yield f"{prefix}.self.out.w", (d, d)
    yield f"{prefix}.self.out.b", (d,)
    yield f"{prefix}.ln2.g", (d,)
    yield f"{prefix}.ln2.b", (d,)
    yield f"{prefix}.cross.q.w", (d, d)
    yield f"{prefix}.cross.q.b", (d,)
    yield f"{prefix}.cross.kv.w", (d, 2 * d)
    yield f"{prefix}.cross.kv.b", (2 * d,)
    yield f"{prefix}.cross.out.w", (d, d)
    yield f"{prefix}.cross.out.b", (d,)
    yield f"{prefix}.ln3.g", (d,)
    yield f"{prefix}.ln3.b", (d,)
    yield from _mlp_shapes(f"{prefix}.mlp", d, r * d, d)


def encoder_prefix(config: ModelConfig, stage: str, modality: str) -> str:
    return f"enc.{stage}" if config.share_encoders else f"enc.{modality}.{stage}"


def decoder_streams(config: ModelConfig) -> tuple[str, ...]:
    """Names of the query streams the decoder produces."""
    if config.cross_attention == "s2_queries":
        return ("s2",)
    if config.cross_attention == "s1_queries":
        return ("s1",)
    return ("s2", "s1")


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered mapping of every parameter name to its shape."""
    d, r, p, K = config.embed_dim, config.mlp_ratio, config.patch_hw, config.num_classes
    shapes: dict[str, tuple] = {}
    for m in ("s1", "s2"):
        shapes[f"embed.{m}.w"] = (p * p * config.channels[m], d)
        shapes[f"embed.{m}.b"] = (d,)
    if config.pos_embedding == "learned":
        shapes["pos.spatial"] = (config.grid * config.grid, d)
        shapes["pos.temporal"] = (config.seasons, d)
    mods = ("s1", "s2") if not config.share_encoders else ("s1",)
    for m in mods:
        for stage, depth in (("spatial", config.spatial_layers), ("temporal", config.temporal_layers)):
            for i in range(depth):
                shapes.update(_enc_layer_shapes(f"{encoder_prefix(config, stage, m)}.{i}", d, r))
    for q in decoder_streams(config):
        for i in range(config.decoder_layers):
            shapes.update(_dec_layer_shapes(f"dec.{q}.{i}", d, r))
    shapes["head.norm.g"] = (d,)
    shapes["head.norm.b"] = (d,)
    shapes.update(_mlp_shapes("head", d, d, p * p * K))
    return shapes


def param_count(config: ModelConfig) -> int:
    return int(sum(math.prod(s) for s in param_shapes(config).values()))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded parameters: weights ~ U(+-1/sqrt(fan_in)), zero biases, unit norms."""
    params = {}
    for k, (name, shape) in enumerate(param_shapes(config).items()):
        rng = make_rng(seed, k)
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.startswith("pos."):
            arr = rng.uniform(-0.02, 0.02, size=shape)
        elif name.endswith(".w"):
            bound = 1.0 / math.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(np.float32)
    return params


def check_params(params: dict, config: ModelConfig) -> None:
    shapes = param_shapes(config)
    if set(params) != set(shapes):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise ValueError(f"parameter names mismatch; missing={missing[:5]} extra={extra[:5]}")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")


def save_params(params: dict, config: ModelConfig, path) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian f32).

    The manifest lists tensors in parameter order with byte offsets, and embeds
    the model config.
    """
    path = os.fspath(path)
    entries, blobs, offset = [], [], 0
    for name in param_shapes(config):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "f32"})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"config": config.to_dict(), "payload": os.path.basename(path) + ".bin", "tensors": entries}
    atomic_write_bytes(path + ".bin", b"".join(blobs))
    atomic_write_bytes(path + ".json", (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_params(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    path = os.fspath(path)
    if path.endswith(".json"):
        path = path[:-5]
    with open(path + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = ModelConfig.from_dict(manifest["config"])
    with open(os.path.join(os.path.dirname(os.path.abspath(path)), manifest["payload"]), "rb") as fh:
        blob = fh.read()
    params = {}
    for e in manifest["tensors"]:
        n = math.prod(e["shape"])
        if e["offset"] + 4 * n > len(blob):
            raise ValueError(f"payload truncated at tensor {e['name']}")
        params[e["name"]] = np.frombuffer(blob, "<f4", n, e["offset"]).reshape(e["shape"]).copy()
    check_params(params, config)
    return params, config


# --------------------------------------------------------------------------
# building blocks


def _w(params, name):
    return np.asarray(params[name], dtype=np.float64)


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def mlp(x, params, prefix):
    h = gelu(x @ _w(params, f"{prefix}.fc1.w") + _w(params, f"{prefix}.fc1.b"))
    return h @ _w(params, f"{prefix}.fc2.w") + _w(params, f"{prefix}.fc2.b")


def _split_heads(x, heads):
    B, L, D = x.shape
    return x.reshape(B, L, heads, D // heads).transpose(0, 2, 1, 3)


def attend(q, k, v, heads, record=None):
    """Multi-head scaled dot-product attention on ``(B, L, D)`` projections."""
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(qh.shape[-1])
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    if record is not None:
        record.append(probs)
    out = probs @ vh
    B, H, L, dh = out.shape
    return out.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def self_attention(x, params, prefix, heads, record=None):
    D = x.shape[-1]
    qkv = x @ _w(params, f"{prefix}.qkv.w") + _w(params, f"{prefix}.qkv.b")
    q, k, v = qkv[..., :D], qkv[..., D : 2 * D], qkv[..., 2 * D :]
    out = attend(q, k, v, heads, record)
    return out @ _w(params, f"{prefix}.out.w") + _w(params, f"{prefix}.out.b")


def cross_attention(x, mem, params, prefix, heads, record=None):
    D = x.shape[-1]
    q = x @ _w(params, f"{prefix}.q.w") + _w(params, f"{prefix}.q.b")
    kv = mem @ _w(params, f"{prefix}.kv.w") + _w(params, f"{prefix}.kv.b")
    out = attend(q, kv[..., :D], kv[..., D:], heads, record)
    return out @ _w(params, f"{prefix}.out.w") + _w(params, f"{prefix}.out.b")


def encoder_layer(x, params, prefix, heads, record=None):
    """Pre-norm block; attention runs along axis 1 of ``(B, L, D)``."""
    h = layer_norm(x, _w(params, f"{prefix}.ln1.g"), _w(params, f"{prefix}.ln1.b"))
    x = x + self_attention(h, params, f"{prefix}.attn", heads, record)
    h = layer_norm(x, _w(params, f"{prefix}.ln2.g"), _w(params, f"{prefix}.ln2.b"))
    return x + mlp(h, params, f"{prefix}.mlp")


def decoder_layer(x, mem, params, prefix, heads, record=None):
    h = layer_norm(x, _w(params, f"{prefix}.ln1.g"), _w(params, f"{prefix}.ln1.b"))
    x = x + self_attention(h, params, f"{prefix}.self", heads, record)
    h = layer_norm(x, _w(params, f"{prefix}.ln2.g"), _w(params, f"{prefix}.ln2.b"))
    x = x + cross_attention(h, mem, params, f"{prefix}.cross", heads, record)
    h = layer_norm(x, _w(params, f"{prefix}.ln3.g"), _w(params, f"{prefix}.ln3.b"))
    return x + mlp(h, params, f"{prefix}.mlp")


# --------------------------------------------------------------------------
# stages


def patchify(x: np.ndarray, p: int) -> np.ndarray:
    """``(T, H, W, C)`` -> ``(T, gh*gw, p*p*C)`` in (row-block, col-block) order."""
    T, H, W, C = x.shape
    if H % p or W % p:
        raise ValueError(f"spatial size {H}x{W} is not divisible by patch size {p}")
    gh, gw = H // p, W // p
    blocks = x.reshape(T, gh, p, gw, p, C).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(T, gh * gw, p * p * C)


def unpatchify(t: np.ndarray, gh: int, gw: int, p: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    T, S, F = t.shape
    C = F // (p * p)
    return t.reshape(T, gh, gw, p, p, C).transpose(0, 1, 3, 2, 4, 5).reshape(T, gh * p, gw * p, C)


def tokenize(x: np.ndarray, params: dict, config: ModelConfig, modality: str) -> TokenTensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError("input must be (T, H, W, C)")
    T, H, W, C = x.shape
    if T != config.seasons:
        raise ValueError(f"expected {config.seasons} seasons, got {T}")
    if C != config.channels[modality]:
        raise ValueError(f"{modality}: expected {config.channels[modality]} channels, got {C}")
    p = config.patch_hw
    if H > config.image_size or W > config.image_size:
        raise ValueError(f"input {H}x{W} exceeds image_size {config.image_size}")
    flat = patchify(x, p)
    tok = flat @ _w(params, f"embed.{modality}.w") + _w(params, f"embed.{modality}.b")
    return TokenTensor(tok, H // p, W // p, modality)


def _spatial_pos(params, config, gh, gw):
    G = config.grid
    table = _w(params, "pos.spatial").reshape(G, G, -1)
    return table[:gh, :gw].reshape(gh * gw, -1)


def encode_spatial(tokens: TokenTensor, params: dict, config: ModelConfig, record=None) -> TokenTensor:
    """Self-attention among the spatial tokens of each season."""
    x = tokens.tokens
    if config.pos_embedding == "learned":
        x = x + _spatial_pos(params, config, tokens.gh, tokens.gw)[None]
    prefix = encoder_prefix(config, "spatial", tokens.modality)
    for i in range(config.spatial_layers):
        x = encoder_layer(x, params, f"{prefix}.{i}", config.heads, record)
    return dataclasses.replace(tokens, tokens=x)


def encode_temporal(tokens: TokenTensor, params: dict, config: ModelConfig, record=None) -> TokenTensor:
    """Self-attention among the seasons of each spatial position."""
    x = tokens.tokens
    if config.pos_embedding == "learned":
        x = x + _w(params, "pos.temporal")[: tokens.T, None, :]
    x = x.transpose(1, 0, 2)  # (S, T, D)
    prefix = encoder_prefix(config, "temporal", tokens.modality)
    for i in range(config.temporal_layers):
        x = encoder_layer(x, params, f"{prefix}.{i}", config.heads, record)
    return dataclasses.replace(tokens, tokens=x.transpose(1, 0, 2))


def _decode(query: TokenTensor, memory: TokenTensor, params, config, stream, record):
    T, S, D = query.tokens.shape
    x = query.tokens.reshape(1, T * S, D)
    mem = memory.tokens.reshape(1, -1, D)
    for i in range(config.decoder_layers):
        x = decoder_layer(x, mem, params, f"dec.{stream}.{i}", config.heads, record)
    return x.reshape(T, S, D)


def decode_fuse(s1: TokenTensor, s2: TokenTensor, params: dict, config: ModelConfig, record=None) -> TokenTensor:
    """Fuse modalities with cross-attention decoder layers.

    In the default ``s2_queries`` mode the optical tokens form the decoded
    stream and attend to the radar tokens; ``bidirectional`` averages both
    directions.
    """
    if s1.tokens.shape != s2.tokens.shape or (s1.gh, s1.gw) != (s2.gh, s2.gw):
        raise ValueError("s1 and s2 token layouts differ")
    outs = []
    for stream in decoder_streams(config):
        q, kv = (s2, s1) if stream == "s2" else (s1, s2)
        outs.append(_decode(q, kv, params, config, stream, record))
    fused = outs[0] if len(outs) == 1 else sum(outs) / len(outs)
    return TokenTensor(fused, s2.gh, s2.gw, "fused")


def segment_head(tokens: TokenTensor, params: dict, config: ModelConfig) -> np.ndarray:
    """Season-averaged tokens -> per-token MLP -> ``(H, W, K)`` logits."""
    x = tokens.tokens.mean(axis=0)  # (S, D)
    x = layer_norm(x, _w(params, "head.norm.g"), _w(params, "head.norm.b"))
    out = mlp(x, params, "head")  # (S, p*p*K)
    return unpatchify(out[None], tokens.gh, tokens.gw, config.patch_hw)[0]


def forward(s1, s2, params: dict, config: ModelConfig, record=None) -> np.ndarray:
    """Logits ``(H, W, K)`` for one pair of normalized ``(T, H, W, C)`` stacks."""
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if s1.shape[:3] != s2.shape[:3]:
        raise ValueError("s1 and s2 inputs differ in (T, H, W)")
    enc = {}
    for name, x in (("s1", s1), ("s2", s2)):
        t = tokenize(x, params, config, name)
        t = encode_spatial(t, params, config, record)
        enc[name] = encode_temporal(t, params, config, record)
    fused = decode_fuse(enc["s1"], enc["s2"], params, config, record)
    return segment_head(fused, params, config)


def forward_tiled(s1, s2, params: dict, config: ModelConfig, window: int | None = None, threads: int = 1) -> np.ndarray:
    """Run :func:`forward` independently on each window of a larger scene.

    Windows are laid out row-major from the top-left; scene height and width
    must be multiples of the patch size.
    """
    window = window or config.image_size
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    T, H, W, _ = s2.shape
    if H % config.patch_hw or W % config.patch_hw or window % config.patch_hw:
        raise ValueError("scene and window sizes must be multiples of the patch size")
    out = np.zeros((H, W, config.num_classes), dtype=np.float64)

    def run(win):
        sl = win.slices
        return win, forward(s1[:, sl[0], sl[1]], s2[:, sl[0], sl[1]], params, config)

    for win, logits in map_tiles(run, (H, W), window, threads):
        out[win.slices] = logits
    return out


def layer_param_total(config: ModelConfig, kind: str) -> int:
    """Parameter count of a single encoder or decoder layer."""
    d, r = config.embed_dim, config.mlp_ratio
    gen = _enc_layer_shapes("x", d, r) if kind == "encoder" else _dec_layer_shapes("x", d, r)
    return int(sum(math.prod(s) for _, s in gen))
