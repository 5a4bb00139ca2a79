"""Residual MLP classifiers whose depth counts quantized linear layers.

depth 1:  logits = head(x)
depth D:  h = in(x);  D-2 blocks  h += relu(fc_k(LN(h)));  logits = head(LN(h))
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..quant import QuantConfig, QuantLinear, quantized_linear
from ..tensor import Rng, as_tensor
from .common import init_uniform, layer_norm, relu


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int = 64
    hidden_dim: int = 64
    depth: int = 3
    n_classes: int = 10
    bias: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def n_blocks(self) -> int:
        return max(0, self.depth - 2)

    def to_dict(self) -> dict:
        return asdict(self)


def cls_param_shapes(spec: ClassifierSpec) -> list[tuple[str, tuple]]:
    h = spec.hidden_dim
    shapes = []

    def lin(name, n_in, n_out):
        shapes.append((name + ".w", (n_in, n_out)))
        if spec.bias:
            shapes.append((name + ".b", (n_out,)))

    def ln(name):
        shapes.append((name + ".g", (h,)))
        if spec.bias:
            shapes.append((name + ".b", (h,)))

    if spec.depth == 1:
        lin("head", spec.input_dim, spec.n_classes)
        return shapes
    lin("in", spec.input_dim, h)
    for k in range(spec.n_blocks):
        ln(f"b{k}.ln")
        lin(f"b{k}.fc", h, h)
    ln("lnf")
    lin("head", h, spec.n_classes)
    return shapes


class MLPClassifier:
    kind = "classifier"

    def __init__(self, spec: ClassifierSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = {}
        for name, shape in cls_param_shapes(spec):
            arr = np.ascontiguousarray(params[name], dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr
        names = ["head"] if spec.depth == 1 else ["in"] + [f"b{k}.fc" for k in range(spec.n_blocks)] + ["head"]
        self.linears = {n: QuantLinear(self.params[n + ".w"], self.params.get(n + ".b"), n) for n in names}

    @classmethod
    def init(cls, spec: ClassifierSpec, seed: int = 0) -> "MLPClassifier":
        rng = Rng(seed)
        params = {}
        for name, shape in cls_param_shapes(spec):
            if name.endswith(".g"):
                params[name] = np.ones(shape, np.float32)
            elif name.endswith(".b"):
                params[name] = np.zeros(shape, np.float32)
            else:
                std = 1.0 / np.sqrt(shape[0])
                if ".fc" in name:
                    std /= np.sqrt(max(1, spec.n_blocks))
                params[name] = init_uniform(rng, shape, std)
        return cls(spec, params)

    @property
    def quantized_layers(self) -> list[str]:
        return list(self.linears)


def forward_classifier(model: MLPClassifier, inputs, cfg: QuantConfig, recorder=None) -> np.ndarray:
    """Batched forward; ``inputs`` is (batch, input_dim).  Returns (batch, n_classes)."""
    x = as_tensor(inputs)
    if x.ndim == 1:
        x = x[None, :]
    P = model.params
    spec = model.spec
    if spec.depth == 1:
        return quantized_linear(x, model.linears["head"], cfg, recorder)
    h = quantized_linear(x, model.linears["in"], cfg, recorder)
    for k in range(spec.n_blocks):
        z = layer_norm(h, P[f"b{k}.ln.g"], P.get(f"b{k}.ln.b"))
        h = h + relu(quantized_linear(z, model.linears[f"b{k}.fc"], cfg, recorder))
    z = layer_norm(h, P["lnf.g"], P.get("lnf.b"))
    return quantized_linear(z, model.linears["head"], cfg, recorder)
