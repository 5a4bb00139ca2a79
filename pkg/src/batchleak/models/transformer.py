"""Decoder-only char transformer with a per-sequence KV cache.

Decode runs one new token per sequence per forward.  Each batch row has its
own cache, and attention only ever reads the row's own cache, so the only
coupling between rows is through the activation quantizers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..quant import QuantConfig, QuantLinear, quantized_linear
from ..tensor import Rng, seq_sum
from .common import init_uniform, layer_norm, relu


class CacheOverflow(ValueError):
    pass


@dataclass(frozen=True)
class TransformerSpec:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 64
    d_ff: int = 0  # 0 means 4 * d_model

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers < 1 or self.max_seq_len < 1:
            raise ValueError("n_layers and max_seq_len must be positive")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def lm_param_shapes(spec: TransformerSpec) -> list[tuple[str, tuple]]:
    d, f = spec.d_model, spec.d_ff
    shapes = [("tok_emb", (spec.vocab_size, d)), ("pos_emb", (spec.max_seq_len, d))]
    for i in range(spec.n_layers):
        p = f"h{i}."
        shapes += [
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "qkv.w", (d, 3 * d)), (p + "qkv.b", (3 * d,)),
            (p + "proj.w", (d, d)), (p + "proj.b", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
            (p + "fc1.w", (d, f)), (p + "fc1.b", (f,)),
            (p + "fc2.w", (f, d)), (p + "fc2.b", (d,)),
        ]
    shapes += [("lnf.g", (d,)), ("lnf.b", (d,)), ("head.w", (d, spec.vocab_size))]
    return shapes


class KvCache:
    """Keys/values for one sequence, all layers.  Append-only."""

    def __init__(self, spec: TransformerSpec):
        shape = (spec.n_layers, spec.max_seq_len, spec.n_heads, spec.head_dim)
        self.keys = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.length = 0

    @property
    def capacity(self) -> int:
        return self.keys.shape[1]

    def copy(self) -> "KvCache":
        new = KvCache.__new__(KvCache)
        new.keys = self.keys.copy()
        new.values = self.values.copy()
        new.length = self.length
        return new


class TransformerLM:
    kind = "lm"

    def __init__(self, spec: TransformerSpec, params: dict[str, np.ndarray], vocab: str | None = None):
        self.spec = spec
        self.vocab = vocab
        expected = lm_param_shapes(spec)
        self.params = {}
        for name, shape in expected:
            arr = np.ascontiguousarray(params[name], dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr
        self.linears = {}
        for i in range(spec.n_layers):
            for part in ("qkv", "proj", "fc1", "fc2"):
                name = f"h{i}.{part}"
                self.linears[name] = QuantLinear(self.params[name + ".w"], self.params[name + ".b"], name)
        self.linears["head"] = QuantLinear(self.params["head.w"], None, "head")

    @classmethod
    def init(cls, spec: TransformerSpec, seed: int = 0, vocab: str | None = None) -> "TransformerLM":
        rng = Rng(seed)
        params = {}
        for name, shape in lm_param_shapes(spec):
            if name.endswith(".g"):
                params[name] = np.ones(shape, np.float32)
            elif name.endswith(".b"):
                params[name] = np.zeros(shape, np.float32)
            else:
                std = 0.02
                if name.endswith("proj.w") or name.endswith("fc2.w"):
                    std = 0.02 / np.sqrt(2 * spec.n_layers)
                params[name] = init_uniform(rng, shape, std)
        return cls(spec, params, vocab)

    @property
    def quantized_layers(self) -> list[str]:
        return list(self.linears)

    def new_cache(self) -> KvCache:
        return KvCache(self.spec)


def _attend(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: np.float32) -> np.ndarray:
    """Causal attention of one query (H, hd) over T cached positions (T, H, hd)."""
    k = keys.transpose(1, 0, 2)  # (H, T, hd)
    v = values.transpose(1, 0, 2)
    scores = np.add.accumulate(q[:, None, :] * k, axis=2)[..., -1] * scale  # (H, T)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    p = e / seq_sum(e, axis=1)[:, None]
    return np.add.accumulate(p[:, :, None] * v, axis=1)[:, -1, :]


def forward_lm(model: TransformerLM, tokens, caches: list[KvCache], cfg: QuantConfig, recorder=None) -> np.ndarray:
    """One decode step for a batch of sequences; returns (batch, vocab) logits.

    ``tokens[r]`` is the next token of sequence ``r`` and ``caches[r]`` holds
    that sequence's history; each cache grows by one position.
    """
    spec = model.spec
    tokens = [int(t) for t in tokens]
    if len(tokens) != len(caches) or not tokens:
        raise ValueError("need exactly one token per cache")
    for t in tokens:
        if not 0 <= t < spec.vocab_size:
            raise ValueError(f"token {t} outside vocabulary")
    pos = [c.length for c in caches]
    if max(pos) >= spec.max_seq_len:
        raise CacheOverflow(f"sequence length would exceed max_seq_len={spec.max_seq_len}")
    P = model.params
    H, hd, d = spec.n_heads, spec.head_dim, spec.d_model
    scale = np.float32(1.0 / np.sqrt(hd))

    x = P["tok_emb"][tokens] + P["pos_emb"][pos]
    for i in range(spec.n_layers):
        pre = f"h{i}."
        h = layer_norm(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
        qkv = quantized_linear(h, model.linears[pre + "qkv"], cfg, recorder)
        att = np.empty_like(x)
        for r, cache in enumerate(caches):
            q = qkv[r, :d].reshape(H, hd)
            t = pos[r]
            cache.keys[i, t] = qkv[r, d:2 * d].reshape(H, hd)
            cache.values[i, t] = qkv[r, 2 * d:].reshape(H, hd)
            att[r] = _attend(q, cache.keys[i, : t + 1], cache.values[i, : t + 1], scale).reshape(d)
        x = x + quantized_linear(att, model.linears[pre + "proj"], cfg, recorder)
        h = layer_norm(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
        u = relu(quantized_linear(h, model.linears[pre + "fc1"], cfg, recorder))
        x = x + quantized_linear(u, model.linears[pre + "fc2"], cfg, recorder)
    for cache in caches:
        cache.length += 1
    h = layer_norm(x, P["lnf.g"], P["lnf.b"])
    return quantized_linear(h, model.linears["head"], cfg, recorder)
