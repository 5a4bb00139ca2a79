"""Leak measurement for a quantization config, and a table of framework defaults."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import FULL, observe
from .models.classifier import MLPClassifier, forward_classifier
from .models.transformer import TransformerLM, forward_lm
from .quant import Granularity, QuantConfig
from .tensor import Rng, l2_distance

LEAKS = "leaks"
ISOLATED = "isolated"


@dataclass(frozen=True)
class LeakReport:
    granularity: str
    format: str
    trials: int
    leak_fraction: float  # share of trials with delta > 0
    mean_delta: float
    max_delta: float

    @property
    def verdict(self) -> str:
        return ISOLATED if self.max_delta == 0.0 else LEAKS

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("granularity", self.granularity),
            ("format", self.format),
            ("trials", str(self.trials)),
            ("leak fraction", f"{self.leak_fraction:.4f}"),
            ("mean delta", f"{self.mean_delta:.6g}"),
            ("max delta", f"{self.max_delta:.6g}"),
            ("verdict", self.verdict),
        ]


def _lm_observation(model: TransformerLM, adv, other, cfg: QuantConfig) -> np.ndarray:
    # Teacher-forced two-row decode; the adversary's full logits at every step.
    caches = [model.new_cache(), model.new_cache()]
    out = [forward_lm(model, [a, o], caches, cfg)[0] for a, o in zip(adv, other)]
    return np.concatenate([observe(z, FULL, i).payload() for i, z in enumerate(out)])


def _cls_observation(model: MLPClassifier, a, x, cfg: QuantConfig) -> np.ndarray:
    return observe(forward_classifier(model, np.stack([a, x]), cfg)[0], FULL, 0).payload()


def trial_delta(model, cfg: QuantConfig, rng: Rng, max_len: int = 4) -> float:
    """Draw one (a, s, c) triple and return ||obs(a | s) - obs(a | c)||.

    Classifier inputs are uniform in [0, 1).  LM rows are random token
    sequences of a shared random length in 1..max_len.
    """
    if isinstance(model, TransformerLM):
        V = model.spec.vocab_size
        n = rng.integers(1, min(max_len, model.spec.max_seq_len) + 1)
        a, s, c = (rng.integers(0, V, size=n) for _ in range(3))
        return l2_distance(_lm_observation(model, a, s, cfg), _lm_observation(model, a, c, cfg))
    if isinstance(model, MLPClassifier):
        d = model.spec.input_dim
        a, s, c = (rng.random(d).astype(np.float32) for _ in range(3))
        return l2_distance(_cls_observation(model, a, s, cfg), _cls_observation(model, a, c, cfg))
    raise TypeError(f"unsupported model type {type(model).__name__}")


def measure_leak(model, cfg: QuantConfig, trials: int, rng: Rng) -> LeakReport:
    """Run ``trials`` independent triples (trial k uses ``rng.spawn(k)``)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    deltas = [trial_delta(model, cfg, rng.spawn(k)) for k in range(trials)]
    leaky = sum(d > 0.0 for d in deltas)
    return LeakReport(
        granularity=cfg.granularity.value,
        format=cfg.format.value if cfg.enabled else "none",
        trials=trials,
        leak_fraction=leaky / trials,
        mean_delta=math.fsum(deltas) / trials,
        max_delta=max(deltas),
    )


@dataclass(frozen=True)
class FrameworkEntry:
    framework: str
    configuration: str
    precision: str
    setting: str  # "Default", or "Opt." when a specific flag or variant is needed
    granularity: str  # activation granularity as labelled in the table

    @property
    def granularity_key(self) -> Granularity:
        return Granularity(self.granularity.lower())

    @property
    def vulnerable(self) -> bool:
        return self.granularity_key is Granularity.PER_TENSOR


_TABLE = [
    ("vLLM", "--quantization fp8 (online)", "W8A8 FP8", "Default", "Per-tensor"),
    ("SGLang", "--torchao-config fp8dq-per_tensor", "W8A8 FP8", "Opt.", "Per-tensor"),
    ("ONNX RT", "quantize_dynamic()", "W8A8 INT8", "Default", "Per-tensor"),
    ("PyTorch", "torch.ao.quantization...PerTensor", "W8A8 FP8/INT8", "Default", "Per-tensor"),
    ("SGLang", "--torchao-config fp8dq-per_row", "W8A8 FP8", "Opt.", "Per-token"),
    ("SGLang", "--torchao-config int8dq", "W8A8 INT8", "Default", "Per-token"),
    ("SGLang", "--quantization w8a8_fp8/int8", "W8A8 FP8/INT8", "Default", "Per-token"),
    ("vLLM", "W8A8 FP8/INT8 (llm-compressor)", "W8A8 FP8/INT8", "Default", "Per-token"),
    ("DeepSpeed", "ZeroQuant W8A8", "W8A8 INT8", "Default", "Per-token"),
]


def framework_table() -> list[FrameworkEntry]:
    """Dynamic activation-quantization setups of common serving stacks."""
    return [FrameworkEntry(*row) for row in _TABLE]


def expected_verdict(granularity: str) -> str:
    """Verdict implied by the framework table for a granularity."""
    flags = {e.vulnerable for e in framework_table() if e.granularity_key.value == granularity}
    if not flags:  # "none": nothing is quantized, so nothing is shared
        return ISOLATED
    return LEAKS if flags == {True} else ISOLATED


_FIELDS = ["framework", "configuration", "precision", "setting", "granularity", "vulnerable"]


def table_rows(entries=None) -> list[list[str]]:
    entries = framework_table() if entries is None else entries
    return [[*(str(v) for v in asdict(e).values()), "yes" if e.vulnerable else "no"] for e in entries]


def table_csv(entries=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    w.writerows(table_rows(entries))
    return buf.getvalue()


def format_table(header, rows) -> str:
    """Left-aligned text table with two-space gutters."""
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
