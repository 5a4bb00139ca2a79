"""Batched serving simulator.

A :class:`Session` co-locates one adversary sequence with one other
sequence (the victim, or an attacker-chosen candidate when probing) for the
whole decode phase.  Only the adversary row's output ever leaves a forward
pass, as an :class:`Observation`; victim logits are dropped on the spot.

With ``batch_size`` N > 2 the adversary row is replicated N-2 times, so the
batch still holds exactly one foreign row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .models.classifier import MLPClassifier, forward_classifier
from .models.transformer import TransformerLM, forward_lm
from .quant import QuantConfig, QuantParams
from .tensor import log_softmax_top1


class Role(str, Enum):
    ADVERSARY = "adversary"
    VICTIM = "victim"
    CANDIDATE = "candidate"


class SessionError(RuntimeError):
    pass


class ReplayMismatch(SessionError):
    """Greedy replay of the adversary sequence diverged from the recorded tokens."""


TOP1 = "top1-logprob"
FULL = "full-logits"


@dataclass(frozen=True)
class Observation:
    mode: str
    step: int
    token_id: int
    logprob: float | None = None
    logits: np.ndarray | None = field(default=None, compare=False, repr=False)

    def payload(self) -> np.ndarray:
        if self.mode == TOP1:
            return np.array([self.logprob], dtype=np.float64)
        return np.asarray(self.logits, dtype=np.float64)


def observe(logits_row: np.ndarray, mode: str, step: int) -> Observation:
    token, lp = log_softmax_top1(logits_row)
    if mode == TOP1:
        return Observation(TOP1, step, token, lp)
    if mode == FULL:
        return Observation(FULL, step, token, lp, np.array(logits_row, dtype=np.float32))
    raise ValueError(f"unknown observation mode {mode!r}")


@dataclass
class LayerRecord:
    name: str
    params: list[QuantParams] | None
    lo: float
    hi: float

    @property
    def range(self) -> float:
        return self.hi - self.lo


class ScaleProfile:
    """Per-layer quantization parameters seen during one forward pass."""

    def __init__(self):
        self.records: list[LayerRecord] = []

    def record(self, name: str, x: np.ndarray, params) -> None:
        self.records.append(LayerRecord(name, params, float(x.min()), float(x.max())))

    def __len__(self):
        return len(self.records)

    def scales(self) -> np.ndarray:
        """First scale of each layer; falls back to range/255 when unquantized."""
        return np.array([r.params[0].scale if r.params else r.range / 255.0 for r in self.records])

    def ranges(self) -> np.ndarray:
        return np.array([r.range for r in self.records])


@dataclass(frozen=True)
class SessionTemplate:
    """Everything needed to (re)create an identical serving session."""

    model: TransformerLM
    cfg: QuantConfig
    adversary_prompt: tuple[int, ...] = (0,)
    batch_size: int = 2
    obs_mode: str = TOP1
    seed: int = 0

    def __post_init__(self):
        if not self.adversary_prompt:
            raise ValueError("adversary prompt needs at least one token")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class Session:
    """One persistent batch: adversary row(s) plus at most one other row.

    Prompt tokens before the last are decoded with the adversary alone; the
    last prompt token is the adversary's input at the first co-located step.
    """

    def __init__(self, template: SessionTemplate, other: Role | None = Role.VICTIM):
        self.template = template
        self.other = other if template.batch_size > 1 else None
        n_adv = template.batch_size - 1 if self.other else template.batch_size
        self.roles = [Role.ADVERSARY] * n_adv + ([self.other] if self.other else [])
        self.caches = [template.model.new_cache() for _ in self.roles]
        self.finished = [False] * len(self.roles)
        self.step_index = 0
        adv = self.caches[:n_adv]
        for tok in template.adversary_prompt[:-1]:
            forward_lm(template.model, [tok] * n_adv, adv, template.cfg)
        self.next_adversary = template.adversary_prompt[-1]

    def clone(self) -> "Session":
        new = Session.__new__(Session)
        new.template = self.template
        new.other = self.other
        new.roles = list(self.roles)
        new.caches = [c.copy() for c in self.caches]
        new.finished = list(self.finished)
        new.step_index = self.step_index
        new.next_adversary = self.next_adversary
        return new

    def finish_other(self) -> None:
        if self.other:
            self.finished[-1] = True


def decode_step(session: Session, new_tokens, recorder=None) -> Observation:
    """Advance every row by one token; return the adversary row's observation.

    ``new_tokens`` is ``(adversary_token, other_token)``, or just
    ``(adversary_token,)`` for a batch of one.  Replica rows reuse the
    adversary token.
    """
    new_tokens = [int(t) for t in new_tokens]
    expected = 2 if session.other else 1
    if len(new_tokens) != expected:
        raise SessionError(f"expected {expected} tokens, got {len(new_tokens)}")
    if session.other and session.finished[-1]:
        raise SessionError("the co-located sequence has finished and cannot take new tokens")
    n_adv = len(session.roles) - (1 if session.other else 0)
    row_tokens = [new_tokens[0]] * n_adv + new_tokens[1:]
    logits = forward_lm(session.template.model, row_tokens, session.caches, session.template.cfg, recorder)
    obs = observe(logits[0], session.template.obs_mode, session.step_index)
    session.step_index += 1
    session.next_adversary = obs.token_id  # greedy
    return obs


@dataclass
class Transcript:
    """What the adversary saw while co-located with the victim."""

    observations: list[Observation]
    adversary_tokens: list[int]  # token fed by the adversary at each step

    def __len__(self):
        return len(self.observations)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "token_id", "top1_logprob"])
            for o in self.observations:
                w.writerow([o.step, o.token_id, format(o.logprob, ".18g")])


def run_victim_session(session: Session, secret) -> Transcript:
    """Feed the victim's secret one token per step while the adversary decodes greedily."""
    secret = [int(t) for t in secret]
    if session.caches[0].length + len(secret) > session.template.model.spec.max_seq_len:
        raise SessionError("secret does not fit in max_seq_len")
    observations, fed = [], []
    for s in secret:
        a = session.next_adversary
        fed.append(a)
        observations.append(decode_step(session, [a, s]))
    session.finish_other()
    return Transcript(observations, fed)


def replay_context(template: SessionTemplate, context, adversary_tokens=None, access: str = "white-box") -> Session:
    """Session with ``context`` already decoded in the candidate row.

    White-box pairs the context with the recorded adversary tokens.
    Black-box regenerates the adversary tokens by greedy decoding and checks
    them against ``adversary_tokens`` when given.
    """
    session = Session(template, Role.CANDIDATE)
    for j, s in enumerate(context):
        if access == "white-box":
            a = adversary_tokens[j]
        elif access == "black-box":
            a = session.next_adversary
            if adversary_tokens is not None and j < len(adversary_tokens) and adversary_tokens[j] != a:
                raise ReplayMismatch(f"greedy replay fed token {a} at step {j}, transcript has {adversary_tokens[j]}")
        else:
            raise ValueError(f"unknown access mode {access!r}")
        decode_step(session, [a, s])
    return session


def probe_with_candidate(template: SessionTemplate, context, candidate: int, adversary_tokens=None,
                         access: str = "white-box", state: Session | None = None) -> Observation:
    """Adversary observation for the batch (adversary state, context + candidate).

    ``state`` is an optional white-box checkpoint already holding ``context``
    (from :func:`replay_context`); it is cloned, never modified.
    """
    i = len(context)
    if access == "white-box" and (adversary_tokens is None or len(adversary_tokens) <= i):
        raise SessionError("white-box probing needs the adversary token for every step up to the probe")
    if state is not None:
        if access != "white-box" or state.step_index != i:
            raise SessionError("checkpoint does not match the probe context")
        session = state.clone()
    else:
        session = replay_context(template, context, adversary_tokens, access)
    a = adversary_tokens[i] if access == "white-box" else session.next_adversary
    if access == "black-box" and adversary_tokens is not None and len(adversary_tokens) > i and adversary_tokens[i] != a:
        raise ReplayMismatch(f"greedy replay fed token {a} at step {i}, transcript has {adversary_tokens[i]}")
    return decode_step(session, [a, candidate])


def classify_pair(model: MLPClassifier, probe, x, cfg: QuantConfig, record_scales: bool = False,
                  batch_size: int = 2) -> tuple[Observation, ScaleProfile | None]:
    """One batched classifier forward of [probe (replicated), x]; observe the probe row."""
    probe = np.asarray(probe, dtype=np.float32).reshape(-1)
    x = np.asarray(x, dtype=np.float32).reshape(-1)
    rows = np.stack([probe] * max(1, batch_size - 1) + [x])
    profile = ScaleProfile() if record_scales else None
    logits = forward_classifier(model, rows, cfg, profile)
    return observe(logits[0], FULL, 0), profile
