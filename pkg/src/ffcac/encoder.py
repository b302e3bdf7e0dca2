"""Multi-level embedding extractor.

A patch sequence is linearly embedded, a class token is prepended, learned
positions are added, and the tokens run through pre-norm transformer blocks
(attention + feed-forward, both with residual paths). Every block's output
is tapped: each tap is layer-normed, affine-scaled, and mean-pooled over
token positions into one feature vector per block. A small MLP + softmax
turns the concatenated block features into convex fusion weights, and the
final embedding is the weighted sum of the block features.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import weights_io
from .audio import LogMelSpectrogram, PatchSequence, patch_split
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, WeightsShapeError

PARAM_INIT_POS_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    blocks: int = 2
    dim: int = 32
    heads: int = 4
    mlp_hidden: int = 64
    fusion_hidden: int = 32
    z_max: int = 32
    patch_dim: int = 256
    use_fusion: bool = True
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError(f"need at least one block, got {self.blocks}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("dim", "heads", "mlp_hidden", "fusion_hidden", "z_max", "patch_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name} must be positive")


@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    feat_gain: Tensor
    feat_bias: Tensor


@dataclass
class MeeParams:
    patch_weight: Tensor
    patch_bias: Tensor
    cls_token: Tensor
    pos_table: Tensor
    blocks: list[BlockParams]
    fusion_w1: Tensor | None = None
    fusion_b1: Tensor | None = None
    fusion_w2: Tensor | None = None
    fusion_b2: Tensor | None = None

    def named_tensors(self):
        """(name, tensor) pairs in the canonical container order."""
        yield "patch_embed.weight", self.patch_weight
        yield "patch_embed.bias", self.patch_bias
        yield "cls_token", self.cls_token
        yield "pos_table", self.pos_table
        for i, b in enumerate(self.blocks):
            prefix = f"block{i}"
            yield f"{prefix}.ln1.gain", b.ln1_gain
            yield f"{prefix}.ln1.bias", b.ln1_bias
            yield f"{prefix}.attn.wq", b.wq
            yield f"{prefix}.attn.bq", b.bq
            yield f"{prefix}.attn.wk", b.wk
            yield f"{prefix}.attn.bk", b.bk
            yield f"{prefix}.attn.wv", b.wv
            yield f"{prefix}.attn.bv", b.bv
            yield f"{prefix}.attn.wo", b.wo
            yield f"{prefix}.attn.bo", b.bo
            yield f"{prefix}.ln2.gain", b.ln2_gain
            yield f"{prefix}.ln2.bias", b.ln2_bias
            yield f"{prefix}.ffn.w1", b.w1
            yield f"{prefix}.ffn.b1", b.b1
            yield f"{prefix}.ffn.w2", b.w2
            yield f"{prefix}.ffn.b2", b.b2
            yield f"{prefix}.feature_norm.gain", b.feat_gain
            yield f"{prefix}.feature_norm.bias", b.feat_bias
        if self.fusion_w1 is not None:
            yield "fusion.w1", self.fusion_w1
            yield "fusion.b1", self.fusion_b1
            yield "fusion.w2", self.fusion_w2
            yield "fusion.b2", self.fusion_b2

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


@dataclass
class EmbeddingOutput:
    """Embedding plus the intermediates the fusion stage produced."""

    e: Tensor  # (D,)
    fusion_weights: Tensor | None = None  # (L,), convex
    concat: Tensor | None = None  # (L*D,) pre-fusion concatenation
    block_features: list[Tensor] = field(default_factory=list)


def param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; the single source for init, container
    validation, and parameter counting."""
    d, h = cfg.dim, cfg.mlp_hidden
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("patch_embed.weight", (cfg.patch_dim, d)),
        ("patch_embed.bias", (d,)),
        ("cls_token", (d,)),
        ("pos_table", (cfg.z_max + 1, d)),
    ]
    for i in range(cfg.blocks):
        prefix = f"block{i}"
        shapes += [
            (f"{prefix}.ln1.gain", (d,)),
            (f"{prefix}.ln1.bias", (d,)),
            (f"{prefix}.attn.wq", (d, d)),
            (f"{prefix}.attn.bq", (d,)),
            (f"{prefix}.attn.wk", (d, d)),
            (f"{prefix}.attn.bk", (d,)),
            (f"{prefix}.attn.wv", (d, d)),
            (f"{prefix}.attn.bv", (d,)),
            (f"{prefix}.attn.wo", (d, d)),
            (f"{prefix}.attn.bo", (d,)),
            (f"{prefix}.ln2.gain", (d,)),
            (f"{prefix}.ln2.bias", (d,)),
            (f"{prefix}.ffn.w1", (d, h)),
            (f"{prefix}.ffn.b1", (h,)),
            (f"{prefix}.ffn.w2", (h, d)),
            (f"{prefix}.ffn.b2", (d,)),
            (f"{prefix}.feature_norm.gain", (d,)),
            (f"{prefix}.feature_norm.bias", (d,)),
        ]
    if cfg.use_fusion:
        shapes += [
            ("fusion.w1", (cfg.blocks * d, cfg.fusion_hidden)),
            ("fusion.b1", (cfg.fusion_hidden,)),
            ("fusion.w2", (cfg.fusion_hidden, cfg.blocks)),
            ("fusion.b2", (cfg.blocks,)),
        ]
    return shapes


def _init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
    if name.endswith(".gain"):
        values = np.ones(shape)
    elif name.endswith((".bias", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
        values = np.zeros(shape)
    elif name in ("cls_token", "pos_table"):
        values = rng.normal(0.0, PARAM_INIT_POS_STD, shape)
    else:
        fan_in = shape[0]
        values = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)
    return Tensor(values, requires_grad=True)


def init_mee_params(cfg: EncoderConfig, seed: int) -> MeeParams:
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xC0DE))))
    flat = {name: _init_tensor(name, shape, rng) for name, shape in param_shapes(cfg)}
    return params_from_dict(flat, cfg)


def params_from_dict(flat: dict[str, Tensor], cfg: EncoderConfig) -> MeeParams:
    blocks = []
    for i in range(cfg.blocks):
        p = f"block{i}"
        blocks.append(
            BlockParams(
                ln1_gain=flat[f"{p}.ln1.gain"],
                ln1_bias=flat[f"{p}.ln1.bias"],
                wq=flat[f"{p}.attn.wq"],
                bq=flat[f"{p}.attn.bq"],
                wk=flat[f"{p}.attn.wk"],
                bk=flat[f"{p}.attn.bk"],
                wv=flat[f"{p}.attn.wv"],
                bv=flat[f"{p}.attn.bv"],
                wo=flat[f"{p}.attn.wo"],
                bo=flat[f"{p}.attn.bo"],
                ln2_gain=flat[f"{p}.ln2.gain"],
                ln2_bias=flat[f"{p}.ln2.bias"],
                w1=flat[f"{p}.ffn.w1"],
                b1=flat[f"{p}.ffn.b1"],
                w2=flat[f"{p}.ffn.w2"],
                b2=flat[f"{p}.ffn.b2"],
                feat_gain=flat[f"{p}.feature_norm.gain"],
                feat_bias=flat[f"{p}.feature_norm.bias"],
            )
        )
    return MeeParams(
        patch_weight=flat["patch_embed.weight"],
        patch_bias=flat["patch_embed.bias"],
        cls_token=flat["cls_token"],
        pos_table=flat["pos_table"],
        blocks=blocks,
        fusion_w1=flat.get("fusion.w1"),
        fusion_b1=flat.get("fusion.b1"),
        fusion_w2=flat.get("fusion.w2"),
        fusion_b2=flat.get("fusion.b2"),
    )


# ---------------------------------------------------------------------------
# forward passes


def _affine_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    return ad.layer_norm(x, axis=1, eps=eps) * gain + bias


def _attention(h: Tensor, bp: BlockParams, cfg: EncoderConfig) -> Tensor:
    q = ad.matmul(h, bp.wq) + bp.bq
    k = ad.matmul(h, bp.wk) + bp.bk
    v = ad.matmul(h, bp.wv) + bp.bv
    dh = cfg.dim // cfg.heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    outs = []
    for i in range(cfg.heads):
        lo, hi = i * dh, (i + 1) * dh
        qs = ad.slice_axis(q, 1, lo, hi)
        ks = ad.slice_axis(k, 1, lo, hi)
        vs = ad.slice_axis(v, 1, lo, hi)
        scores = ad.scale(ad.matmul(qs, ad.transpose(ks)), inv_sqrt)
        outs.append(ad.matmul(ad.softmax(scores, axis=1), vs))
    return ad.matmul(ad.concat(outs, axis=1), bp.wo) + bp.bo


def _feed_forward(h: Tensor, bp: BlockParams) -> Tensor:
    return ad.matmul(ad.gelu(ad.matmul(h, bp.w1) + bp.b1), bp.w2) + bp.b2


def encoder_forward(patches, params: MeeParams, cfg: EncoderConfig) -> list[Tensor]:
    """Run the block stack; return the per-block pooled feature vectors."""
    mat = patches.patches if isinstance(patches, PatchSequence) else np.asarray(patches)
    z, pd = mat.shape
    if z > cfg.z_max:
        raise DimensionError(f"{z} patches exceed positional table length {cfg.z_max}")
    if pd != cfg.patch_dim:
        raise DimensionError(f"patch dim {pd} != configured {cfg.patch_dim}")
    x = ad.matmul(Tensor(mat), params.patch_weight) + params.patch_bias
    tokens = ad.concat([ad.reshape(params.cls_token, (1, cfg.dim)), x], axis=0)
    tokens = tokens + ad.slice_axis(params.pos_table, 0, 0, z + 1)

    feats = []
    for bp in params.blocks:
        attended = tokens + _attention(_affine_norm(tokens, bp.ln1_gain, bp.ln1_bias, cfg.ln_eps), bp, cfg)
        tokens = attended + _feed_forward(_affine_norm(attended, bp.ln2_gain, bp.ln2_bias, cfg.ln_eps), bp)
        tapped = ad.layer_norm(tokens, axis=1, eps=cfg.ln_eps) * bp.feat_gain + bp.feat_bias
        feats.append(ad.mean(tapped, axis=0))
    return feats


def fuse(block_features: list[Tensor], params: MeeParams) -> EmbeddingOutput:
    """Convex combination of block features, weighted by an MLP + softmax
    over the concatenated features."""
    n_blocks = len(block_features)
    dim = block_features[0].shape[0]
    stack = ad.concat([ad.reshape(f, (1, dim)) for f in block_features], axis=0)
    eprime = ad.reshape(stack, (1, n_blocks * dim))
    hidden = ad.relu(ad.matmul(eprime, params.fusion_w1) + params.fusion_b1)
    logits = ad.matmul(hidden, params.fusion_w2) + params.fusion_b2
    weights = ad.softmax(logits, axis=1)
    e = ad.reshape(ad.matmul(weights, stack), (dim,))
    return EmbeddingOutput(
        e=e,
        fusion_weights=ad.reshape(weights, (n_blocks,)),
        concat=ad.reshape(eprime, (n_blocks * dim,)),
        block_features=block_features,
    )


def mee_forward(lms: LogMelSpectrogram, params: MeeParams, cfg: EncoderConfig,
                s_f: int, s_t: int, stride: int) -> EmbeddingOutput:
    """patch_split -> encoder -> fusion (or last-block feature when fusion
    is disabled)."""
    seq = patch_split(lms, s_f, s_t, stride)
    feats = encoder_forward(seq, params, cfg)
    if not cfg.use_fusion:
        return EmbeddingOutput(e=feats[-1], block_features=feats)
    return fuse(feats, params)


def extract_embedding(patches, params: MeeParams, cfg: EncoderConfig) -> np.ndarray:
    """Forward-only embedding of a pre-split patch matrix."""
    with ad.no_grad():
        feats = encoder_forward(patches, params, cfg)
        if not cfg.use_fusion:
            return feats[-1].values.copy()
        return fuse(feats, params).e.values.copy()


# ---------------------------------------------------------------------------
# serialization


def serialize_params(params: MeeParams, dtype: str = "f32") -> bytes:
    return weights_io.serialize_container(
        [(name, t.values) for name, t in params.named_tensors()], dtype=dtype
    )


def save_params(path, params: MeeParams, dtype: str = "f32") -> None:
    Path(path).write_bytes(serialize_params(params, dtype))


def load_params(path, cfg: EncoderConfig) -> MeeParams:
    """Read a weight container and validate it against the config.

    Missing, unexpected, and wrongly-shaped tensors are all reported in one
    error so a mismatched config is diagnosable in a single pass.
    """
    tensors, _ = weights_io.load_container(path)
    expected = dict(param_shapes(cfg))
    missing = [n for n in expected if n not in tensors]
    unexpected = [n for n in tensors if n not in expected]
    bad_shape = [
        f"{n} (container {tensors[n].shape}, config {expected[n]})"
        for n in expected
        if n in tensors and tensors[n].shape != expected[n]
    ]
    problems = []
    if missing:
        problems.append("missing: " + ", ".join(missing))
    if unexpected:
        problems.append("unexpected: " + ", ".join(unexpected))
    if bad_shape:
        problems.append("shape mismatch: " + "; ".join(bad_shape))
    if problems:
        raise WeightsShapeError("weight container does not fit config — " + " | ".join(problems))
    flat = {n: Tensor(tensors[n], requires_grad=True) for n in tensors}
    return params_from_dict(flat, cfg)


def params_checksum(params: MeeParams, dtype: str = "f32") -> str:
    return hashlib.sha256(serialize_params(params, dtype)).hexdigest()


# ---------------------------------------------------------------------------
# complexity accounting


@dataclass(frozen=True)
class ComplexityReport:
    num_params: int  # extractor + classifier
    num_params_extractor: int
    num_params_classifier: int
    macs: int


def count_params_macs(cfg: EncoderConfig, num_classes: int) -> ComplexityReport:
    """Exact parameter census plus an analytic multiply-accumulate count
    for one clip forward pass at the configured patch budget.

    MACs cover the affine maps and matrix products: patch embedding, the
    q/k/v/output projections, attention score and value products, the
    feed-forward maps, the layer-norm affines (one MAC per element), the
    fusion MLP and weighted sum, and the classifier scores. Softmax, GELU,
    and pooling adds are not counted.
    """
    cfg.validate()
    if num_classes < 0:
        raise ConfigError(f"num_classes must be >= 0, got {num_classes}")
    n_extract = 0
    for _, shape in param_shapes(cfg):
        n_extract += int(np.prod(shape))
    n_classifier = cfg.dim * num_classes

    z = cfg.z_max
    t = z + 1
    d, h = cfg.dim, cfg.mlp_hidden
    per_block = (
        4 * t * d * d  # q, k, v, output projections
        + 2 * t * t * d  # attention scores + weighted values (all heads)
        + t * d * h + t * h * d  # feed-forward
        + 2 * t * d  # block layer-norm affines
        + t * d  # feature-norm affine
    )
    macs = z * cfg.patch_dim * d + cfg.blocks * per_block
    if cfg.use_fusion:
        macs += cfg.blocks * d * cfg.fusion_hidden + cfg.fusion_hidden * cfg.blocks + cfg.blocks * d
    macs += d * num_classes
    return ComplexityReport(
        num_params=n_extract + n_classifier,
        num_params_extractor=n_extract,
        num_params_classifier=n_classifier,
        macs=macs,
    )
