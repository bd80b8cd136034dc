"""The fusion network: multi-head attention, nine fusion strategies, a
pre-norm Transformer encoder, four pooling strategies, and task heads.

All ops are written against the trailing two axes, so every function accepts
either a single sequence [L, d] or a padded batch [B, L, d] with a validity
mask. Padding is excluded from attention (additive key mask) and from
pooling (masked means / masked softmax), so permuting or padding a batch
never changes a sample's output.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .alignment import AlignedPair
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .rng import DropoutRng, substream

__all__ = [
    "FUSION_STRATEGIES", "POOLING_STRATEGIES", "ModelConfig", "ModelWeights",
    "init_weights", "multi_head_attention", "gated_residual", "fuse",
    "encoder_layer", "pool_sequence", "forward", "forward_batch",
    "pad_pairs", "NEG_INF",
]

FUSION_STRATEGIES = (
    "concat", "mean", "sum", "prod", "self_attn",
    "cross_attn", "gated_cross_attn", "bi_cross_attn", "gated_bi_cross_attn",
)
POOLING_STRATEGIES = ("mean", "cls", "attn", "gated_attn")
NEG_INF = -1e9  # additive mask value excluding padded keys


@dataclass
class ModelConfig:
    d_model: int = 768
    n_heads: int = 12
    d_ff: int = 3072
    n_layers: int = 1
    fusion: str = "gated_cross_attn"
    query_modality: str = "audio"  # which stream asks in cross-attention
    pooling: str = "mean"
    task: str = "classify"  # "classify" | "regress"
    dropout_rate: float = 0.1
    seed: int = 0
    max_len: int = 512

    def validate(self) -> None:
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} must be a positive multiple of "
                f"n_heads {self.n_heads}"
            )
        if self.n_layers < 1:
            raise ContractError(f"n_layers must be >= 1, got {self.n_layers}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.fusion not in FUSION_STRATEGIES:
            raise ContractError(f"unknown fusion strategy {self.fusion!r}")
        if self.pooling not in POOLING_STRATEGIES:
            raise ContractError(f"unknown pooling strategy {self.pooling!r}")
        if self.task not in ("classify", "regress"):
            raise ContractError(f"unknown task {self.task!r}")
        if self.query_modality not in ("audio", "text"):
            raise ContractError(f"query_modality must be audio or text")
        if self.max_len < 2:
            raise ContractError(f"max_len must be >= 2, got {self.max_len}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def out_dim(self) -> int:
        return 2 if self.task == "classify" else 1

    @classmethod
    def desk_scale(cls, **overrides) -> "ModelConfig":
        """Small configuration for CPU-scale experiments and tests."""
        base = cls(d_model=64, n_heads=4, d_ff=256, max_len=512)
        return replace(base, **overrides)

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        return replace(cls(), **overrides)


class ModelWeights:
    """Named parameter tensors for one model instance.

    Construction order (and therefore RNG consumption) is fixed, so the same
    (config, seed) always yields bit-identical weights.
    """

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        gen = substream(seed, "init")
        self._build(gen)

    # -- construction -----------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data.astype(self.dtype), requires_grad=True,
                                   dtype=self.dtype)

    def _xavier(self, gen, fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-limit, limit, size=(fan_in, fan_out))

    def _build_attn(self, gen, prefix: str) -> None:
        d, dh = self.config.d_model, self.config.head_dim
        for h in range(self.config.n_heads):
            for proj in ("wq", "wk", "wv"):
                self._param(f"{prefix}.h{h}.{proj}", self._xavier(gen, d, dh))
                self._param(f"{prefix}.h{h}.{proj[1]}b", np.zeros(dh))
        self._param(f"{prefix}.wo", self._xavier(gen, d, d))
        self._param(f"{prefix}.bo", np.zeros(d))

    def _build_encoder(self, gen, prefix: str) -> None:
        d, dff = self.config.d_model, self.config.d_ff
        self._param(f"{prefix}.ln1.g", np.ones(d))
        self._param(f"{prefix}.ln1.b", np.zeros(d))
        self._build_attn(gen, f"{prefix}.attn")
        self._param(f"{prefix}.ln2.g", np.ones(d))
        self._param(f"{prefix}.ln2.b", np.zeros(d))
        self._param(f"{prefix}.ff.w1", self._xavier(gen, d, dff))
        self._param(f"{prefix}.ff.b1", np.zeros(dff))
        self._param(f"{prefix}.ff.w2", self._xavier(gen, dff, d))
        self._param(f"{prefix}.ff.b2", np.zeros(d))

    def _build(self, gen) -> None:
        cfg = self.config
        d = cfg.d_model
        # position table starts at zero so an untrained model is position-free
        self._param("pos", np.zeros((cfg.max_len, d)))
        if cfg.fusion in ("cross_attn", "gated_cross_attn"):
            self._build_attn(gen, "fuse.attn")
            if cfg.fusion == "gated_cross_attn":
                self._param("fuse.gate.w", np.zeros((d, d)))
                self._param("fuse.gate.b", np.zeros(d))
        elif cfg.fusion in ("bi_cross_attn", "gated_bi_cross_attn"):
            for branch in ("a2t", "t2a"):
                self._build_attn(gen, f"fuse.{branch}.attn")
                if cfg.fusion == "gated_bi_cross_attn":
                    self._param(f"fuse.{branch}.gate.w", np.zeros((d, d)))
                    self._param(f"fuse.{branch}.gate.b", np.zeros(d))
        for i in range(cfg.n_layers):
            self._build_encoder(gen, f"enc.{i}")
        if cfg.fusion in ("bi_cross_attn", "gated_bi_cross_attn"):
            for i in range(cfg.n_layers):
                self._build_encoder(gen, f"encb.{i}")
        if cfg.pooling == "cls":
            self._param("cls", gen.normal(0.0, 0.02, size=(1, d)))
        elif cfg.pooling == "attn":
            self._param("pool.w", np.zeros((1, d)))
        elif cfg.pooling == "gated_attn":
            self._param("pool.w", np.zeros((1, d)))
            self._param("pool.gw", np.zeros((1, d)))
            self._param("pool.gb", np.zeros(1))
        hidden = max(d // 2, 1)
        self._param("head.w1", self._xavier(gen, d, hidden))
        self._param("head.b1", np.zeros(hidden))
        self._param("head.w2", self._xavier(gen, hidden, cfg.out_dim))
        self._param("head.b2", np.zeros(cfg.out_dim))

    # -- access -------------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def tensors(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, data in snap.items():
            self.params[name].data = data.copy()


def init_weights(config: ModelConfig, seed: int | None = None,
                 dtype=np.float32) -> ModelWeights:
    return ModelWeights(config, config.seed if seed is None else seed, dtype=dtype)


# --- core ops ------------------------------------------------------------


def _key_additive_mask(mask: np.ndarray | None) -> np.ndarray | None:
    """[.., Lk] validity mask -> additive [.., 1, Lk] mask for score rows."""
    if mask is None:
        return None
    return ((1.0 - mask) * NEG_INF)[..., None, :].astype(np.float32)


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor,
    weights: ModelWeights, prefix: str,
    key_mask: np.ndarray | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Scaled dot-product attention per head, heads concatenated, projected.

    `key_mask` is a validity mask over the key axis ([Lk] or [B, Lk]);
    padded keys receive zero attention weight.
    """
    cfg = weights.config
    if q.data.shape[-1] != cfg.d_model or k.data.shape[-1] != cfg.d_model:
        raise DimensionError(
            f"attention inputs must have width {cfg.d_model}, got "
            f"{q.data.shape} and {k.data.shape}"
        )
    if k.data.shape[-2] != v.data.shape[-2]:
        raise DimensionError(
            f"key/value lengths differ: {k.data.shape} vs {v.data.shape}"
        )
    scale = 1.0 / np.sqrt(cfg.head_dim)
    additive = _key_additive_mask(key_mask)
    head_outs = []
    for h in range(cfg.n_heads):
        qh = ad.add(ad.matmul(q, weights[f"{prefix}.h{h}.wq"]),
                    weights[f"{prefix}.h{h}.qb"])
        kh = ad.add(ad.matmul(k, weights[f"{prefix}.h{h}.wk"]),
                    weights[f"{prefix}.h{h}.kb"])
        vh = ad.add(ad.matmul(v, weights[f"{prefix}.h{h}.wv"]),
                    weights[f"{prefix}.h{h}.vb"])
        scores = ad.mul(ad.matmul(qh, kh, transpose_b=True), scale)
        probs = ad.softmax_rows(scores, additive_mask=additive)
        if collect_attention is not None:
            collect_attention.append(probs.data.copy())
        head_outs.append(ad.matmul(probs, vh))
    merged = ad.concat(head_outs, axis=-1)
    return ad.add(ad.matmul(merged, weights[f"{prefix}.wo"]), weights[f"{prefix}.bo"])


def gated_residual(h_att: Tensor, a: Tensor, w_g: Tensor, b_g: Tensor) -> Tensor:
    """Elementwise convex blend: sigmoid gate of the attended stream decides
    how much of it replaces the original query stream."""
    if h_att.data.shape != a.data.shape:
        raise DimensionError(
            f"gated_residual shapes differ: {h_att.data.shape} vs {a.data.shape}"
        )
    gate = ad.sigmoid(ad.add(ad.matmul(h_att, w_g), b_g))
    # G*H + (1-G)*A, written as A + G*(H - A)
    return ad.add(a, ad.mul(gate, ad.sub(h_att, a)))


def _masked_mean_tokens(x: Tensor, mask: np.ndarray | None,
                        keepdims: bool) -> Tensor:
    """Mean over the token axis (-2), ignoring padded positions."""
    if mask is None:
        return ad.mean_axis(x, axis=-2, keepdims=keepdims)
    m3 = ad.constant(mask[..., None], dtype=x.data.dtype)
    num = ad.mean_axis(ad.mul(x, m3), axis=-2, keepdims=keepdims)
    den = ad.mean_axis(m3, axis=-2, keepdims=keepdims)
    return ad.div(num, den)


def fuse(
    audio: Tensor, text: Tensor,
    config: ModelConfig, weights: ModelWeights,
    mask: np.ndarray | None = None,
    collect_attention: list | None = None,
) -> list[tuple[Tensor, np.ndarray | None]]:
    """Combine the two aligned streams; returns one fused (stream, mask) per
    branch (two branches only for the bidirectional strategies).

    The elementwise strategies require equal sequence lengths; concat and
    self_attn tolerate a length mismatch.
    """
    strategy = config.fusion
    la, lt = audio.data.shape[-2], text.data.shape[-2]
    if strategy in ("mean", "sum", "prod") and la != lt:
        raise ContractError(
            f"{strategy} fusion requires equal-length sequences, got "
            f"audio length {la} and text length {lt}"
        )
    if strategy == "concat":
        fused = ad.concat([audio, text], axis=-2)
        out_mask = None if mask is None else np.concatenate([mask, mask], axis=-1)
        return [(fused, out_mask)]
    if strategy == "mean":
        return [(ad.mul(ad.add(audio, text), 0.5), mask)]
    if strategy == "sum":
        return [(ad.add(audio, text), mask)]
    if strategy == "prod":
        return [(ad.mul(audio, text), mask)]
    if strategy == "self_attn":
        pooled_a = _masked_mean_tokens(audio, mask, keepdims=True)
        pooled_t = _masked_mean_tokens(text, mask, keepdims=True)
        fused = ad.concat([pooled_a, pooled_t], axis=-2)
        out_mask = None if mask is None else np.ones(
            mask.shape[:-1] + (2,), dtype=np.float32)
        return [(fused, out_mask)]
    if strategy in ("cross_attn", "gated_cross_attn"):
        query, kv = (audio, text) if config.query_modality == "audio" else (text, audio)
        h_att = multi_head_attention(query, kv, kv, weights, "fuse.attn",
                                     key_mask=mask,
                                     collect_attention=collect_attention)
        if strategy == "gated_cross_attn":
            h_att = gated_residual(h_att, query, weights["fuse.gate.w"],
                                   weights["fuse.gate.b"])
        return [(h_att, mask)]
    if strategy in ("bi_cross_attn", "gated_bi_cross_attn"):
        branches = []
        for name, (query, kv) in (("a2t", (audio, text)), ("t2a", (text, audio))):
            h_att = multi_head_attention(query, kv, kv, weights,
                                         f"fuse.{name}.attn", key_mask=mask,
                                         collect_attention=collect_attention)
            if strategy == "gated_bi_cross_attn":
                h_att = gated_residual(h_att, query,
                                       weights[f"fuse.{name}.gate.w"],
                                       weights[f"fuse.{name}.gate.b"])
            branches.append((h_att, mask))
        return branches
    raise ContractError(f"unknown fusion strategy {strategy!r}")


def encoder_layer(
    x: Tensor, weights: ModelWeights, prefix: str,
    train: bool = False, dropout_rng: DropoutRng | None = None,
    mask: np.ndarray | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Pre-norm residual block: x + Attn(LN(x)), then x + FF(LN(x))."""
    cfg = weights.config
    rate = cfg.dropout_rate if (train and dropout_rng is not None) else 0.0

    normed = ad.layer_norm(x, weights[f"{prefix}.ln1.g"], weights[f"{prefix}.ln1.b"])
    attended = multi_head_attention(normed, normed, normed, weights,
                                    f"{prefix}.attn", key_mask=mask,
                                    collect_attention=collect_attention)
    if rate > 0.0:
        attended = ad.dropout(attended, rate, dropout_rng, train=True)
    x = ad.add(x, attended)

    normed = ad.layer_norm(x, weights[f"{prefix}.ln2.g"], weights[f"{prefix}.ln2.b"])
    hidden = ad.gelu(ad.add(ad.matmul(normed, weights[f"{prefix}.ff.w1"]),
                            weights[f"{prefix}.ff.b1"]))
    ff = ad.add(ad.matmul(hidden, weights[f"{prefix}.ff.w2"]),
                weights[f"{prefix}.ff.b2"])
    if rate > 0.0:
        ff = ad.dropout(ff, rate, dropout_rng, train=True)
    return ad.add(x, ff)


def pool_sequence(
    x: Tensor, strategy: str, weights: ModelWeights,
    mask: np.ndarray | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Aggregate the token axis to one vector per sequence.

    With strategy "cls" the classification token must already be row 0
    (forward prepends it). Returns [d] for a single sequence, [B, d] for a
    batch.
    """
    if strategy == "mean":
        return _masked_mean_tokens(x, mask, keepdims=False)
    if strategy == "cls":
        return ad.mean_axis(ad.narrow(x, -2, 0, 1), axis=-2)
    if strategy in ("attn", "gated_attn"):
        scores = ad.matmul(weights["pool.w"], x, transpose_b=True)  # [.., 1, L]
        additive = None if mask is None else \
            ((1.0 - mask) * NEG_INF)[..., None, :].astype(np.float32)
        probs = ad.softmax_rows(scores, additive_mask=additive)
        if strategy == "gated_attn":
            gates = ad.sigmoid(ad.add(
                ad.matmul(weights["pool.gw"], x, transpose_b=True),
                weights["pool.gb"]))
            raw = ad.mul(probs, gates)
            total = ad.mul(ad.mean_axis(raw, axis=-1, keepdims=True),
                           float(raw.data.shape[-1]))
            probs = ad.div(raw, total)
        if collect_attention is not None:
            collect_attention.append(probs.data.copy())
        pooled = ad.matmul(probs, x)  # [.., 1, d]
        return ad.mean_axis(pooled, axis=-2)
    raise ContractError(f"unknown pooling strategy {strategy!r}")


def _head(v: Tensor, weights: ModelWeights) -> Tensor:
    hidden = ad.gelu(ad.add(ad.matmul(v, weights["head.w1"]), weights["head.b1"]))
    return ad.add(ad.matmul(hidden, weights["head.w2"]), weights["head.b2"])


def _with_positions(x: Tensor, weights: ModelWeights) -> Tensor:
    length = x.data.shape[-2]
    cfg = weights.config
    if length > cfg.max_len:
        raise ContractError(
            f"sequence length {length} exceeds max_len {cfg.max_len}"
        )
    return ad.add(x, ad.narrow(weights["pos"], 0, 0, length))


def forward_batch(
    audio: Tensor, text: Tensor, mask: np.ndarray | None,
    config: ModelConfig, weights: ModelWeights,
    train: bool = False, dropout_rng: DropoutRng | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Full model on a padded batch: fuse -> encoders -> pool -> head.

    Returns logits [B, 2] (classify) or raw scores [B, 1] (regress).
    """
    branches = fuse(audio, text, config, weights, mask=mask,
                    collect_attention=collect_attention)
    pooled = []
    for branch_idx, (x, branch_mask) in enumerate(branches):
        stack = "enc" if branch_idx == 0 else "encb"
        if config.pooling == "cls":
            lead = x.data.shape[:-2] + (1,)
            cls_rows = ad.gather_rows(weights["cls"],
                                      np.zeros(lead, dtype=np.int64))
            x = ad.concat([cls_rows, x], axis=-2)
            if branch_mask is not None:
                ones = np.ones(branch_mask.shape[:-1] + (1,), dtype=np.float32)
                branch_mask = np.concatenate([ones, branch_mask], axis=-1)
        x = _with_positions(x, weights)
        for i in range(config.n_layers):
            x = encoder_layer(x, weights, f"{stack}.{i}", train=train,
                              dropout_rng=dropout_rng, mask=branch_mask,
                              collect_attention=collect_attention)
        pooled.append(pool_sequence(x, config.pooling, weights,
                                    mask=branch_mask,
                                    collect_attention=collect_attention))
    v = pooled[0] if len(pooled) == 1 else ad.mul(ad.add(pooled[0], pooled[1]), 0.5)
    return _head(v, weights)


def forward(
    pair: AlignedPair, config: ModelConfig, weights: ModelWeights,
    train: bool = False, dropout_rng: DropoutRng | None = None,
    collect_attention: list | None = None,
) -> Tensor:
    """Single-sample forward; returns logits [2] or score [1]."""
    pair.validate()
    if pair.audio.shape[1] != config.d_model:
        raise DimensionError(
            f"pair dim {pair.audio.shape[1]} != model d_model {config.d_model}"
        )
    audio = ad.constant(pair.audio[None, :, :])
    text = ad.constant(pair.text[None, :, :])
    out = forward_batch(audio, text, None, config, weights, train=train,
                        dropout_rng=dropout_rng,
                        collect_attention=collect_attention)
    return ad.mean_axis(out, axis=0)  # [1, out] -> [out]


def pad_pairs(pairs: Sequence[AlignedPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into padded [B, Lmax, d] arrays plus a validity mask."""
    if not pairs:
        raise ContractError("cannot pad an empty batch")
    dims = {p.audio.shape[1] for p in pairs}
    if len(dims) != 1:
        raise DimensionError(f"pairs carry mixed dims {sorted(dims)}")
    d = dims.pop()
    lmax = max(len(p) for p in pairs)
    b = len(pairs)
    audio = np.zeros((b, lmax, d), dtype=np.float32)
    text = np.zeros((b, lmax, d), dtype=np.float32)
    mask = np.zeros((b, lmax), dtype=np.float32)
    for i, p in enumerate(pairs):
        n = len(p)
        audio[i, :n] = p.audio
        text[i, :n] = p.text
        mask[i, :n] = 1.0
    return audio, text, mask
