"""Tiny trainers.  Autograd comes from torch; inference never touches it.

Initial weights come from :class:`~batchleak.tensor.Rng`, minibatches are
drawn from a child stream, and torch runs single-threaded, so a seed fixes
the trained weights bit-for-bit on a given machine.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..tensor import Rng
from .classifier import ClassifierSpec, MLPClassifier
from .common import LN_EPS
from .corpus import Corpus
from .transformer import TransformerLM, TransformerSpec


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: object
    steps: int
    final_loss: float  # training loss of the last minibatch (nan when steps == 0)
    eval_loss: float  # held-out cross-entropy (LM) or loss on the eval split
    baseline_loss: float  # ln(V) or ln(n_classes)
    eval_accuracy: float | None = None


@contextlib.contextmanager
def _single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def _to_torch(params: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    return {k: torch.tensor(v, dtype=torch.float32, requires_grad=True) for k, v in params.items()}


def _to_numpy(params: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
    return {k: v.detach().numpy().astype(np.float32).copy() for k, v in params.items()}


def _lr_at(step: int, steps: int, peak: float) -> float:
    warm = max(1, min(100, steps // 10))
    if step < warm:
        return peak * (step + 1) / warm
    frac = (step - warm) / max(1, steps - warm)
    return peak * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))


def lm_logits_torch(P: dict[str, torch.Tensor], spec: TransformerSpec, idx: torch.Tensor) -> torch.Tensor:
    """Full-sequence causal forward mirroring :func:`forward_lm` in float."""
    B, T = idx.shape
    d, H, hd = spec.d_model, spec.n_heads, spec.head_dim
    eps = float(LN_EPS)
    x = P["tok_emb"][idx] + P["pos_emb"][:T]
    mask = torch.triu(torch.ones(T, T, dtype=torch.bool), diagonal=1)
    for i in range(spec.n_layers):
        p = f"h{i}."
        h = F.layer_norm(x, (d,), P[p + "ln1.g"], P[p + "ln1.b"], eps)
        qkv = h @ P[p + "qkv.w"] + P[p + "qkv.b"]
        q, k, v = (t.view(B, T, H, hd).transpose(1, 2) for t in qkv.split(d, dim=-1))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, d)
        x = x + y @ P[p + "proj.w"] + P[p + "proj.b"]
        h = F.layer_norm(x, (d,), P[p + "ln2.g"], P[p + "ln2.b"], eps)
        x = x + torch.relu(h @ P[p + "fc1.w"] + P[p + "fc1.b"]) @ P[p + "fc2.w"] + P[p + "fc2.b"]
    h = F.layer_norm(x, (d,), P["lnf.g"], P["lnf.b"], eps)
    return h @ P["head.w"]


def _heldout_windows(ids: np.ndarray, seq_len: int, max_windows: int = 64) -> np.ndarray:
    n = min(max_windows, (len(ids) - 1) // seq_len)
    return np.stack([ids[i * seq_len: i * seq_len + seq_len + 1] for i in range(n)])


def lm_heldout_loss(model: TransformerLM, corpus: Corpus, seq_len: int | None = None) -> float:
    seq_len = seq_len or model.spec.max_seq_len
    win = torch.tensor(_heldout_windows(corpus.heldout_ids, seq_len))
    P = {k: torch.tensor(v) for k, v in model.params.items()}
    with torch.no_grad(), _single_thread():
        logits = lm_logits_torch(P, model.spec, win[:, :-1])
        loss = F.cross_entropy(logits.reshape(-1, model.spec.vocab_size), win[:, 1:].reshape(-1))
    return float(loss)


def train_char_lm(corpus: Corpus, spec: TransformerSpec, steps: int, seed: int = 0,
                  batch_size: int = 32, lr: float = 3e-3, label_smoothing: float = 0.1,
                  log=None) -> TrainResult:
    """Train a char LM on the corpus' training slice with Adam.

    Label smoothing keeps top-1 probabilities away from 1.  Without it the
    template corpus drives p_top to 1 - 1e-6 at most positions and the top-1
    log-probability the attacker observes stops moving by more than ~1e-7.
    """
    if spec.vocab_size != corpus.vocab.size:
        raise ValueError(f"spec vocab {spec.vocab_size} != corpus vocab {corpus.vocab.size}")
    model = TransformerLM.init(spec, seed, vocab=corpus.vocab.chars)
    rng = Rng(seed).spawn(1)
    train = corpus.train_ids
    T = spec.max_seq_len
    last = float("nan")
    with _single_thread():
        P = _to_torch(model.params)
        opt = torch.optim.Adam(P.values(), lr=lr, betas=(0.9, 0.95))
        for step in range(steps):
            starts = rng.integers(0, len(train) - T - 1, size=batch_size)
            batch = torch.tensor(np.stack([train[s: s + T + 1] for s in starts]))
            logits = lm_logits_torch(P, spec, batch[:, :-1])
            loss = F.cross_entropy(logits.reshape(-1, spec.vocab_size), batch[:, 1:].reshape(-1),
                                   label_smoothing=label_smoothing)
            last = loss.item()
            if not math.isfinite(last):
                raise TrainingDiverged(f"loss became {last} at step {step} (lr={lr})")
            for g in opt.param_groups:
                g["lr"] = _lr_at(step, steps, lr)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(P.values(), 1.0)
            opt.step()
            if log and (step % 500 == 0 or step == steps - 1):
                log(f"step {step:5d}  loss {last:.4f}")
        trained = TransformerLM(spec, _to_numpy(P), corpus.vocab.chars)
    return TrainResult(trained, steps, last, lm_heldout_loss(trained, corpus), math.log(spec.vocab_size))


def classifier_logits_torch(P: dict[str, torch.Tensor], spec: ClassifierSpec, x: torch.Tensor) -> torch.Tensor:
    eps = float(LN_EPS)
    h_dim = (spec.hidden_dim,)
    if spec.depth == 1:
        return x @ P["head.w"] + P.get("head.b", 0.0)
    h = x @ P["in.w"] + P.get("in.b", 0.0)
    for k in range(spec.n_blocks):
        z = F.layer_norm(h, h_dim, P[f"b{k}.ln.g"], P.get(f"b{k}.ln.b"), eps)
        h = h + torch.relu(z @ P[f"b{k}.fc.w"] + P.get(f"b{k}.fc.b", 0.0))
    z = F.layer_norm(h, h_dim, P["lnf.g"], P.get("lnf.b"), eps)
    return z @ P["head.w"] + P.get("head.b", 0.0)


def train_classifier(spec: ClassifierSpec, x: np.ndarray, y: np.ndarray, steps: int, seed: int = 0,
                     batch_size: int = 64, lr: float = 2e-3, x_eval=None, y_eval=None, log=None) -> TrainResult:
    """Train a residual MLP classifier with Adam on (x, y)."""
    model = MLPClassifier.init(spec, seed)
    rng = Rng(seed).spawn(1)
    xt = torch.tensor(np.asarray(x, dtype=np.float32))
    yt = torch.tensor(np.asarray(y, dtype=np.int64))
    last = float("nan")
    with _single_thread():
        P = _to_torch(model.params)
        opt = torch.optim.Adam(P.values(), lr=lr)
        for step in range(steps):
            idx = torch.tensor(rng.integers(0, len(xt), size=batch_size))
            loss = F.cross_entropy(classifier_logits_torch(P, spec, xt[idx]), yt[idx])
            last = loss.item()
            if not math.isfinite(last):
                raise TrainingDiverged(f"loss became {last} at step {step} (lr={lr})")
            for g in opt.param_groups:
                g["lr"] = _lr_at(step, steps, lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log and (step % 200 == 0 or step == steps - 1):
                log(f"step {step:5d}  loss {last:.4f}")
        trained = MLPClassifier(spec, _to_numpy(P))
        if x_eval is None:
            x_eval, y_eval = x, y
        with torch.no_grad():
            P2 = {k: torch.tensor(v) for k, v in trained.params.items()}
            logits = classifier_logits_torch(P2, spec, torch.tensor(np.asarray(x_eval, dtype=np.float32)))
            ev = torch.tensor(np.asarray(y_eval, dtype=np.int64))
            eval_loss = float(F.cross_entropy(logits, ev))
            acc = float((logits.argmax(dim=1) == ev).float().mean())
    return TrainResult(trained, steps, last, eval_loss, math.log(spec.n_classes), acc)
