"""Frozen Transformer encoder, its adapter-augmented twin, and a CTC head.

Block layout (pre-LN)::

    h = h + attn(ln1(h));   h = adapter_1(h)
    h = h + ffn(ln2(h));    h = adapter_2(h)

followed by a final layer norm. An adapter is the residual bottleneck
``h + up(gelu(down(h)))``; its up-projection starts at exactly zero, so a
fresh adapter encoder reproduces the teacher bit for bit. This bottleneck
form is an assumption about the adapter internals, not a verified copy of
any published architecture.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ctc as _ctc
from .errors import CheckpointShapeError, ConfigError, ContractError
from .tensorcore import Tensor, add, as_tensor, gelu, layer_norm, matmul, reshape, softmax, transpose


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 26
    num_blocks: int = 4
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_frames: int = 1024
    adapter_bottleneck: int = 16
    positional: bool = True
    # fixed input standardisation applied to log-mel values
    feat_mean: float = 0.0
    feat_std: float = 4.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if not 0 < self.adapter_bottleneck < self.model_dim:
            raise ConfigError("adapter_bottleneck must be in (0, model_dim)")
        if self.feat_std <= 0:
            raise ConfigError("feat_std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(T: int, D: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(D // 2)[None, :]
    ang = pos / (10000.0 ** (2 * i / D))
    pe = np.zeros((T, D))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : D - D // 2])
    return pe


def _dense(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))


def init_encoder_params(cfg: EncoderConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    D, F = cfg.model_dim, cfg.ffn_dim
    p = {"in.w": _dense(rng, cfg.n_mels, D), "in.b": np.zeros(D)}
    for i in range(cfg.num_blocks):
        b = f"block{i}."
        for n in ("q", "k", "v", "o"):
            p[b + n + ".w"] = _dense(rng, D, D)
            p[b + n + ".b"] = np.zeros(D)
        p[b + "ff1.w"] = _dense(rng, D, F)
        p[b + "ff1.b"] = np.zeros(F)
        p[b + "ff2.w"] = _dense(rng, F, D)
        p[b + "ff2.b"] = np.zeros(D)
        for n in ("ln1", "ln2"):
            p[b + n + ".g"] = np.ones(D)
            p[b + n + ".b"] = np.zeros(D)
    p["final_ln.g"] = np.ones(D)
    p["final_ln.b"] = np.zeros(D)
    return {k: Tensor(v, name=k) for k, v in p.items()}


def init_adapter_params(cfg: EncoderConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    D, b = cfg.model_dim, cfg.adapter_bottleneck
    p = {}
    for i in range(cfg.num_blocks):
        for j in (1, 2):
            a = f"block{i}.adapter{j}."
            p[a + "down.w"] = _dense(rng, D, b)
            p[a + "down.b"] = np.zeros(b)
            p[a + "up.w"] = np.zeros((b, D))
            p[a + "up.b"] = np.zeros(D)
    return {k: Tensor(v, name=k, requires_grad=True) for k, v in p.items()}


def params_checksum(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k].data).tobytes())
    return h.hexdigest()


def _features(feats) -> Tensor:
    x = getattr(feats, "frames", feats)
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _attention(p, pre, h, cfg: EncoderConfig):
    B, T, D = h.shape
    H = cfg.num_heads
    dh = D // H

    def heads(name):
        z = add(matmul(h, p[pre + name + ".w"]), p[pre + name + ".b"])
        return transpose(reshape(z, (B, T, H, dh)), (0, 2, 1, 3))

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, T, D))
    return add(matmul(ctx, p[pre + "o.w"]), p[pre + "o.b"])


def _adapter(a, pre, h):
    z = gelu(add(matmul(h, a[pre + "down.w"]), a[pre + "down.b"]))
    return add(h, add(matmul(z, a[pre + "up.w"]), a[pre + "up.b"]))


def encoder_forward(params, adapters, feats, cfg: EncoderConfig) -> Tensor:
    """Run the encoder on (T, F) or (B, T, F) features; adapters may be None."""
    x = _features(feats)
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[2] != cfg.n_mels:
        raise ContractError(f"expected features (..., T, {cfg.n_mels}), got {x.shape}")
    T = x.shape[1]
    if T > cfg.max_frames:
        raise ContractError(f"{T} frames exceeds max_frames={cfg.max_frames}")
    p = params
    xin = (x - cfg.feat_mean) * (1.0 / cfg.feat_std)
    h = add(matmul(xin, p["in.w"]), p["in.b"])
    if cfg.positional:
        h = add(h, Tensor(sinusoidal_positions(T, cfg.model_dim)))
    for i in range(cfg.num_blocks):
        b = f"block{i}."
        h = add(h, _attention(p, b, layer_norm(h, p[b + "ln1.g"], p[b + "ln1.b"], cfg.ln_eps), cfg))
        if adapters is not None:
            h = _adapter(adapters, b + "adapter1.", h)
        z = layer_norm(h, p[b + "ln2.g"], p[b + "ln2.b"], cfg.ln_eps)
        z = add(matmul(gelu(add(matmul(z, p[b + "ff1.w"]), p[b + "ff1.b"])), p[b + "ff2.w"]), p[b + "ff2.b"])
        h = add(h, z)
        if adapters is not None:
            h = _adapter(adapters, b + "adapter2.", h)
    h = layer_norm(h, p["final_ln.g"], p["final_ln.b"], cfg.ln_eps)
    return reshape(h, h.shape[1:]) if single else h


class _Module:
    kind = ""

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise CheckpointShapeError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointShapeError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
        for k, t in params.items():
            t.data = np.array(state[k], dtype=np.float64)
            t.grad = None


class PretrainedEncoder(_Module):
    """The frozen teacher. No parameter ever requires a gradient."""

    kind = "encoder"

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.params = init_encoder_params(cfg, seed)

    def parameters(self):
        return self.params

    def encode(self, feats) -> Tensor:
        return encoder_forward(self.params, None, feats, self.cfg)

    __call__ = encode

    def checksum(self) -> str:
        return params_checksum(self.params)


class AdapterEncoder(_Module):
    """Student: a private copy of the teacher's weights plus trainable adapters."""

    kind = "adapter_encoder"

    def __init__(self, teacher: PretrainedEncoder, seed: int = 1):
        self.cfg = teacher.cfg
        self.seed = seed
        self.base = {k: Tensor(v.data.copy(), name=k) for k, v in teacher.params.items()}
        self.adapters = init_adapter_params(self.cfg, seed)

    def parameters(self):
        out = {"base." + k: v for k, v in self.base.items()}
        out.update({"adapter." + k: v for k, v in self.adapters.items()})
        return out

    def encode(self, feats) -> Tensor:
        return encoder_forward(self.base, self.adapters, feats, self.cfg)

    __call__ = encode

    def base_checksum(self) -> str:
        return params_checksum(self.base)

    def adapter_checksum(self) -> str:
        return params_checksum(self.adapters)

    def set_trainable(self, flag: bool) -> None:
        for t in self.adapters.values():
            t.requires_grad = flag


def encode_pre(teacher: PretrainedEncoder, feats) -> Tensor:
    return teacher.encode(feats)


def encode_adp(student: AdapterEncoder, feats) -> Tensor:
    return student.encode(feats)


class CTCHead(_Module):
    """Per-frame affine map to ``vocab_size + 1`` classes; the last class is blank."""

    kind = "ctc_head"

    def __init__(self, model_dim: int, vocab_size: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.model_dim = model_dim
        self.vocab_size = vocab_size
        self.seed = seed
        self.w = Tensor(rng.normal(0.0, 0.02, size=(model_dim, vocab_size + 1)), requires_grad=True, name="w")
        self.b = Tensor(np.zeros(vocab_size + 1), requires_grad=True, name="b")

    @property
    def n_classes(self) -> int:
        return self.vocab_size + 1

    @property
    def blank(self) -> int:
        return self.vocab_size

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def logits(self, emb) -> Tensor:
        return ctc_logits(self, emb)

    __call__ = logits

    def checksum(self) -> str:
        return params_checksum(self.parameters())

    def clone(self) -> "CTCHead":
        return copy.deepcopy(self)


def ctc_logits(head: CTCHead, emb) -> Tensor:
    emb = as_tensor(emb)
    if emb.shape[-1] != head.model_dim:
        raise ContractError(f"embedding width {emb.shape[-1]} != head input {head.model_dim}")
    return add(matmul(emb, head.w), head.b)


ctc_loss = _ctc.ctc_loss
greedy_decode = _ctc.greedy_decode


@dataclass
class ModelCheckpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def to_checkpoint(model, **metadata) -> ModelCheckpoint:
    if isinstance(model, CTCHead):
        cfg = {"model_dim": model.model_dim, "vocab_size": model.vocab_size, "seed": model.seed}
    else:
        cfg = dict(model.cfg.to_dict(), seed=model.seed)
    return ModelCheckpoint(model.kind, cfg, model.state_dict(), dict(metadata))


def from_checkpoint(ckpt: ModelCheckpoint):
    """Rebuild a model object of the recorded kind and load its parameters."""
    cfg = dict(ckpt.config)
    seed = cfg.pop("seed", 0)
    if ckpt.kind == "ctc_head":
        m = CTCHead(cfg["model_dim"], cfg["vocab_size"], seed)
    elif ckpt.kind in ("encoder", "adapter_encoder"):
        teacher = PretrainedEncoder(EncoderConfig(**cfg), 0)
        m = teacher if ckpt.kind == "encoder" else AdapterEncoder(teacher, seed)
        m.seed = seed
    else:
        raise ConfigError(f"unknown checkpoint kind {ckpt.kind!r}")
    m.load_state_dict(ckpt.params)
    if ckpt.kind == "adapter_encoder":
        m.set_trainable(False)
    return m
