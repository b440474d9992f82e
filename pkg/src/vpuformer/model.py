"""Prompt-conditioned segmentation network.

Patch-embedding front end with previous-mask fusion, stacked dual
cross-attention blocks whose gates keep the strongest mutual response per
channel, and a multi-scale 1x1-conv decoder producing a probability map.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .pue import ImagePlane, PromptVector
from .tensor import (ConfigError, ShapeError, Tensor, concat, gelu, layer_norm,
                     matmul, sigmoid, softmax_lastdim, upsample_bilinear)

CHECKPOINT_MAGIC = b"VPUF"
CHECKPOINT_VERSION = 1


class CheckpointError(IOError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    patch: int = 4
    d_model: int = 64
    heads: int = 2
    dma_layers: int = 3
    decoder_scales: tuple[int, ...] = (4, 8, 16)
    max_prompts: int = 8
    ffn_mult: int = 2
    learnable_pos: bool = True

    def __post_init__(self):
        if self.input_size % self.patch != 0:
            raise ConfigError("input_size must be divisible by patch")
        for s in self.decoder_scales:
            if self.input_size % s != 0 or s < self.patch:
                raise ConfigError(f"bad decoder scale {s}")
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        if len(self.decoder_scales) != self.dma_layers:
            raise ConfigError("one decoder scale per attention layer")

    @property
    def grid(self) -> int:
        return self.input_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    @property
    def prompt_len(self) -> int:
        return 2 * self.input_size + 2

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size, "patch": self.patch,
            "d_model": self.d_model, "heads": self.heads,
            "dma_layers": self.dma_layers,
            "decoder_scales": list(self.decoder_scales),
            "max_prompts": self.max_prompts, "ffn_mult": self.ffn_mult,
            "learnable_pos": self.learnable_pos,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        if "decoder_scales" in d:
            d["decoder_scales"] = tuple(d["decoder_scales"])
        return ModelConfig(**d)


def sinusoidal_positions(grid: int, d_model: int) -> np.ndarray:
    """Fixed 2-D sin/cos encodings over the token grid, shape (grid^2, d)."""
    half = d_model // 2
    ys, xs = np.mgrid[0:grid, 0:grid]

    def enc(coord, dims):
        out = np.zeros((grid * grid, dims))
        c = coord.reshape(-1).astype(np.float64)
        for k in range(dims // 2):
            freq = (2 * np.pi / grid) * (k + 1)
            out[:, 2 * k] = np.sin(freq * c)
            out[:, 2 * k + 1] = np.cos(freq * c)
        return out

    pos = np.concatenate([enc(xs, half), enc(ys, d_model - half)], axis=1)
    return pos


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0,
                zero_head: bool = True) -> dict[str, Tensor]:
    """Fan-in symmetric-uniform weights, zero biases.

    With `zero_head` the decoder head starts at exactly zero, which pins the
    untrained probability map to 0.5 everywhere.
    """
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    p: dict[str, np.ndarray] = {}
    patch_in = cfg.patch * cfg.patch * 3
    p["patch_embed.w"] = _uniform(rng, patch_in, (patch_in, d))
    p["patch_embed.b"] = np.zeros(d)
    p["mask_fuse.w"] = _uniform(rng, 1, (1, d))
    p["prompt_proj.w"] = _uniform(rng, cfg.prompt_len, (cfg.prompt_len, d))
    p["prompt_proj.b"] = np.zeros(d)
    if cfg.learnable_pos:
        p["pos"] = 0.1 * rng.standard_normal((cfg.tokens, d))
    hidden = cfg.ffn_mult * d
    for layer in range(cfg.dma_layers):
        for blk in ("mhsa", "mhca_qv", "mhca_vq"):
            for w in ("wq", "wk", "wv", "wo"):
                p[f"l{layer}.{blk}.{w}"] = _uniform(rng, d, (d, d))
            p[f"l{layer}.{blk}.bo"] = np.zeros(d)
        for side in ("qv", "vq"):
            p[f"l{layer}.ln_{side}.g"] = np.ones(d)
            p[f"l{layer}.ln_{side}.b"] = np.zeros(d)
            p[f"l{layer}.ffn_{side}.w1"] = _uniform(rng, d, (d, hidden))
            p[f"l{layer}.ffn_{side}.b1"] = np.zeros(hidden)
            p[f"l{layer}.ffn_{side}.w2"] = _uniform(rng, hidden, (hidden, d))
            p[f"l{layer}.ffn_{side}.b2"] = np.zeros(d)
    for i in range(len(cfg.decoder_scales)):
        p[f"dec{i}.align.w"] = _uniform(rng, d, (d, d))
        p[f"dec{i}.align.b"] = np.zeros(d)
    head_in = len(cfg.decoder_scales) * d
    if zero_head:
        p["head.w"] = np.zeros((head_in, 1))
    else:
        p["head.w"] = _uniform(rng, head_in, (head_in, 1))
    p["head.b"] = np.zeros(1)
    p["p2cl.wq"] = _uniform(rng, d, (d, head_in))
    p["p2cl.bq"] = np.zeros(head_in)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True)
            for k, v in params.items()}


@dataclass
class ForwardState:
    f_v: Tensor
    q_raw: np.ndarray
    q_prime: Tensor
    fused: Tensor          # pre-head concatenated decoder feature, (L4, scales*d)
    per_layer_dual: list[Tensor]
    logits: Tensor         # (input, input)
    prob: Tensor           # sigmoid(logits)

    @property
    def prob_map(self) -> np.ndarray:
        return self.prob.numpy()


def _avg_pool_tokens(x: np.ndarray, grid: int, factor: int) -> np.ndarray:
    return x.reshape(grid // factor, factor, grid // factor, factor).mean(axis=(1, 3))


def image_encode(image: ImagePlane, prev_mask: np.ndarray,
                 params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Patch embedding + 1x1-fused previous mask + positional encodings."""
    if image.height != cfg.input_size or image.width != cfg.input_size:
        raise ShapeError(f"image must be {cfg.input_size}px square")
    prev_mask = np.asarray(prev_mask, dtype=np.float64)
    if prev_mask.shape != (cfg.input_size, cfg.input_size):
        raise ShapeError("prev_mask size mismatch")
    g, pch = cfg.grid, cfg.patch
    patches = image.data.reshape(g, pch, g, pch, 3).transpose(0, 2, 1, 3, 4)
    patches = patches.reshape(cfg.tokens, pch * pch * 3)
    dtype = params["patch_embed.w"].dtype
    emb = matmul(Tensor(patches.astype(dtype)), params["patch_embed.w"]) \
        + params["patch_embed.b"]
    pooled = _avg_pool_tokens(prev_mask, cfg.input_size, pch).reshape(cfg.tokens, 1)
    emb = emb + matmul(Tensor(pooled.astype(dtype)), params["mask_fuse.w"])
    if cfg.learnable_pos:
        pos = params["pos"]
    else:
        pos = Tensor(sinusoidal_positions(g, cfg.d_model).astype(dtype))
    return emb + pos


def prompt_project(q_raw: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    w = params["prompt_proj.w"]
    if q_raw.ndim != 2 or q_raw.shape[1] != w.shape[0]:
        raise ShapeError(f"prompt rows must have length {w.shape[0]}")
    return matmul(Tensor(q_raw.astype(w.dtype)), w) + params["prompt_proj.b"]


def _mha(queries: Tensor, keys: Tensor, values: Tensor,
         params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    d = queries.shape[-1]
    dh = d // heads
    q = matmul(queries, params[f"{prefix}.wq"])
    k = matmul(keys, params[f"{prefix}.wk"])
    v = matmul(values, params[f"{prefix}.wv"])
    nq, nk = q.shape[0], k.shape[0]
    q = q.reshape(nq, heads, dh).transpose(1, 0, 2)
    k = k.reshape(nk, heads, dh).transpose(1, 0, 2)
    v = v.reshape(nk, heads, dh).transpose(1, 0, 2)
    att = softmax_lastdim(matmul(q, k.transpose(0, 2, 1)) * (1.0 / float(np.sqrt(dh))))
    out = matmul(att, v).transpose(1, 0, 2).reshape(nq, d)
    return matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def iif_merge(fhat_qv: Tensor, fhat_vq: Tensor, f_v: Tensor,
              params: dict[str, Tensor] | None = None) -> Tensor:
    """Gate by the strongest per-channel response on each side, then merge."""
    if fhat_qv.shape[-1] != f_v.shape[-1] or fhat_vq.shape[-1] != f_v.shape[-1]:
        raise ShapeError("channel dimensions disagree")
    g_qv = sigmoid(fhat_qv.max(axis=0))
    g_vq = sigmoid(fhat_vq.max(axis=0))
    f_iqv = g_qv * f_v
    f_ivq = g_vq * f_v
    return f_v * (1.0 + f_iqv + f_ivq)


def dma_block(q_in: Tensor, f_v: Tensor, qp: Tensor,
              params: dict[str, Tensor], cfg: ModelConfig,
              layer_idx: int) -> tuple[Tensor, Tensor]:
    """One dual cross-attention block; returns (merged visual, prompt state)."""
    if qp.shape[0] == 0:
        raise ShapeError("at least one prompt is required")
    pre = f"l{layer_idx}"
    q1 = q_in + qp
    q_prime = _mha(q1, q1, q1, params, f"{pre}.mhsa", cfg.heads)
    f_qv = _mha(q_prime, f_v, f_v, params, f"{pre}.mhca_qv", cfg.heads) + qp
    f_vq = _mha(f_v, q_prime, q_prime, params, f"{pre}.mhca_vq", cfg.heads) + f_v
    fhat_qv = _ffn(layer_norm(f_qv, params[f"{pre}.ln_qv.g"],
                              params[f"{pre}.ln_qv.b"]), params, f"{pre}.ffn_qv")
    fhat_vq = _ffn(layer_norm(f_vq, params[f"{pre}.ln_vq.g"],
                              params[f"{pre}.ln_vq.b"]), params, f"{pre}.ffn_vq")
    return iif_merge(fhat_qv, fhat_vq, f_v), q_prime


def _ffn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    h = gelu(matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    return matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def multiscale_decode(per_layer_dual: list[Tensor], params: dict[str, Tensor],
                      cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Pool each layer to its pyramid stride, align, re-upsample, fuse.

    Returns (logits at full resolution, pre-head fused tokens).
    """
    if len(per_layer_dual) != len(cfg.decoder_scales):
        raise ConfigError("need one feature per decoder scale")
    g = cfg.grid
    g4 = cfg.input_size // 4
    maps = []
    for i, (fd, scale) in enumerate(zip(per_layer_dual, cfg.decoder_scales)):
        gs = cfg.input_size // scale
        pool = g // gs
        x = fd  # (L, D)
        if pool > 1:
            x = x.reshape(gs, pool, gs, pool, cfg.d_model).mean(axis=(1, 3))
            x = x.reshape(gs * gs, cfg.d_model)
        x = matmul(x, params[f"dec{i}.align.w"]) + params[f"dec{i}.align.b"]
        spatial = x.reshape(gs, gs, cfg.d_model).transpose(2, 0, 1)
        if g4 > gs:
            spatial = upsample_bilinear(spatial, g4 // gs)
        maps.append(spatial)
    fused_sp = concat(maps, axis=0)  # (scales*D, g4, g4)
    fused = fused_sp.transpose(1, 2, 0).reshape(g4 * g4, len(maps) * cfg.d_model)
    logits4 = matmul(fused, params["head.w"]) + params["head.b"]
    logits_sp = logits4.reshape(g4, g4, 1).transpose(2, 0, 1)
    logits = upsample_bilinear(logits_sp, 4).reshape(cfg.input_size, cfg.input_size)
    return logits, fused


def model_forward(image: ImagePlane, prev_mask: np.ndarray,
                  prompts: list[PromptVector], params: dict[str, Tensor],
                  cfg: ModelConfig) -> ForwardState:
    if not 1 <= len(prompts) <= cfg.max_prompts:
        raise ShapeError(f"need between 1 and {cfg.max_prompts} prompts")
    q_raw = np.stack([p.flatten() for p in prompts])
    qp = prompt_project(q_raw, params)
    f_v = image_encode(image, prev_mask, params, cfg)
    q_state = Tensor(np.zeros_like(qp.data))
    duals: list[Tensor] = []
    f = f_v
    for layer in range(cfg.dma_layers):
        f, q_state = dma_block(q_state, f, qp, params, cfg, layer)
        duals.append(f)
    logits, fused = multiscale_decode(duals, params, cfg)
    prob = sigmoid(logits)
    return ForwardState(f_v=f_v, q_raw=q_raw, q_prime=q_state, fused=fused,
                        per_layer_dual=duals, logits=logits, prob=prob)


# -- checkpoint IO -----------------------------------------------------------

def save_checkpoint(params: dict[str, Tensor], cfg: ModelConfig, path) -> None:
    """Binary checkpoint: magic, u16 version, JSON manifest, f32 LE payload."""
    names = sorted(params)
    blobs = [params[n].data.astype("<f4").tobytes() for n in names]
    offsets = []
    off = 0
    for b in blobs:
        offsets.append(off)
        off += len(b)
    payload = b"".join(blobs)
    manifest = {
        "config": cfg.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].shape), "offset": o}
                    for n, o in zip(names, offsets)],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        fh.write(payload)


def load_checkpoint(path, dtype=np.float64) -> tuple[dict[str, Tensor], ModelConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a VPUF checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", raw, 6)
    try:
        manifest = json.loads(raw[10:10 + mlen])
    except ValueError as exc:
        raise CheckpointError("corrupt manifest") from exc
    payload = raw[10 + mlen:]
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError("payload digest mismatch")
    params: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError("truncated payload")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
    cfg = ModelConfig.from_dict(manifest["config"])
    return params, cfg
