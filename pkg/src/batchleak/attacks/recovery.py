"""Token-by-token recovery of a co-batched victim's sequence.

At step i the adversary recorded one observation while batched with the
victim's token s_i.  Re-running that step with a candidate t in the victim's
place reproduces the observation bit-exactly iff t's activations set the
same quantization parameters as s_i did.  Candidates are tried in prior order
and the first one whose distance to the record is below epsilon wins.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..engine import (
    Session,
    SessionTemplate,
    Transcript,
    decode_step,
    probe_with_candidate,
    replay_context,
)
from ..models.transformer import KvCache, TransformerLM, forward_lm
from ..quant import QuantConfig
from ..tensor import l2_distance

PRIOR_SOURCES = ("model", "unigram-initial", "none")
ACCESS_MODES = ("white-box", "black-box")


@dataclass(frozen=True)
class RecoveryConfig:
    epsilon: float = 1e-6
    max_queries_per_token: int | None = None  # None: the whole vocabulary
    prior_source: str = "model"
    access: str = "white-box"
    timeout_s: float | None = None  # wall-clock budget per sequence

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.prior_source not in PRIOR_SOURCES:
            raise ValueError(f"prior_source must be one of {PRIOR_SOURCES}")
        if self.access not in ACCESS_MODES:
            raise ValueError(f"access must be one of {ACCESS_MODES}")
        if self.max_queries_per_token is not None and self.max_queries_per_token < 1:
            raise ValueError("max_queries_per_token must be >= 1")


@dataclass
class TokenGuess:
    token: int
    queries: int
    matched: bool  # a candidate fell below epsilon
    exhausted: bool = False  # query budget ran out before a match
    timed_out: bool = False  # wall-clock deadline hit
    distance: float = 0.0


@dataclass
class RecoveryResult:
    tokens: list[int] = field(default_factory=list)
    queries: list[int] = field(default_factory=list)
    correct: list[bool] = field(default_factory=list)
    matched: list[bool] = field(default_factory=list)
    timeouts: list[bool] = field(default_factory=list)
    elapsed_ms: list[float] = field(default_factory=list)
    truth: list[int] | None = None

    @property
    def completed(self) -> bool:
        """False when the wall-clock budget stopped the run early."""
        n = len(self.truth) if self.truth is not None else len(self.tokens)
        return len(self.tokens) == n and not any(self.timeouts)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct)) if self.correct else float("nan")

    def add(self, guess: TokenGuess, elapsed_ms: float) -> None:
        i = len(self.tokens)
        self.tokens.append(guess.token)
        self.queries.append(guess.queries)
        self.matched.append(guess.matched)
        self.timeouts.append(guess.timed_out)
        self.elapsed_ms.append(elapsed_ms)
        if self.truth is not None:
            self.correct.append(guess.token == self.truth[i])


class LanguagePrior:
    """Candidate ordering: sentence-initial distribution, LM next-token prior, or id order."""

    def __init__(self, model: TransformerLM, source: str = "model", initial: np.ndarray | None = None):
        if source not in PRIOR_SOURCES:
            raise ValueError(f"unknown prior source {source!r}")
        if source == "unigram-initial" and initial is None:
            raise ValueError("unigram-initial prior needs a sentence-initial distribution")
        self.model = model
        self.source = source
        self.initial = None if initial is None else np.asarray(initial, dtype=np.float64)
        self._cache: KvCache | None = None
        self._fed: list[int] = []
        self._logits: np.ndarray | None = None
        self._none = QuantConfig("none")

    def _next_logits(self, prefix: list[int]) -> np.ndarray:
        if self._fed != prefix[: len(self._fed)] or self._cache is None:
            self._cache, self._fed = self.model.new_cache(), []
        for t in prefix[len(self._fed):]:
            self._logits = forward_lm(self.model, [t], [self._cache], self._none)[0]
            self._fed.append(t)
        return self._logits

    def order(self, prefix) -> np.ndarray:
        """Candidate ids, most likely first; ties keep the lower id first."""
        V = self.model.spec.vocab_size
        prefix = [int(t) for t in prefix]
        if self.source == "none":
            return np.arange(V)
        if not prefix:
            if self.source == "unigram-initial":
                return np.argsort(-self.initial, kind="stable")
            return np.arange(V)
        return np.argsort(-self._next_logits(prefix).astype(np.float64), kind="stable")


class Prober:
    """Issues candidate probes for one transcript and counts every one of them.

    White-box keeps a checkpoint of the session after the recovered prefix
    (the attacker runs the model locally), so each probe is a single decode
    step.  Black-box replays the whole sequence per query, like an API call.
    """

    def __init__(self, template: SessionTemplate, transcript: Transcript, access: str = "white-box"):
        self.template = template
        self.transcript = transcript
        self.access = access
        self.queries = 0
        self._context: list[int] = []
        self._state: Session | None = replay_context(template, [], None, access) if access == "white-box" else None

    def probe(self, context, candidate: int):
        self.queries += 1
        context = [int(t) for t in context]
        adv = self.transcript.adversary_tokens
        if self.access == "black-box":
            return probe_with_candidate(self.template, context, candidate, adv, "black-box")
        if context != self._context:
            self._state = replay_context(self.template, context, adv, "white-box")
            self._context = list(context)
        return probe_with_candidate(self.template, context, candidate, adv, "white-box", state=self._state)

    def commit(self, token: int) -> None:
        """Extend the white-box checkpoint with a recovered token."""
        if self.access == "white-box":
            i = len(self._context)
            decode_step(self._state, [self.transcript.adversary_tokens[i], token])
            self._context.append(int(token))


def _search(i: int, order, transcript: Transcript, prefix, prober: Prober, cfg: RecoveryConfig,
            deadline: float | None) -> TokenGuess:
    target = transcript.observations[i].payload()
    budget = cfg.max_queries_per_token or len(order)
    start = prober.queries
    best_tok, best_d = int(order[0]), float("inf")
    for cand in order[:budget]:
        if deadline is not None and time.monotonic() > deadline:
            return TokenGuess(best_tok, prober.queries - start, False, timed_out=True, distance=best_d)
        obs = prober.probe(prefix, int(cand))
        d = l2_distance(target, obs.payload())
        if d < cfg.epsilon:
            return TokenGuess(int(cand), prober.queries - start, True, distance=d)
        if d < best_d:
            best_tok, best_d = int(cand), d
    exhausted = budget < len(order)
    return TokenGuess(best_tok, prober.queries - start, False, exhausted=exhausted, distance=best_d)


def recover_first_token(transcript: Transcript, prior: LanguagePrior, prober: Prober, cfg: RecoveryConfig,
                        deadline: float | None = None) -> TokenGuess:
    """Recover s_1: scan the (optionally prior-ordered) vocabulary."""
    if len(transcript) == 0:
        raise ValueError("transcript is empty")
    return _search(0, prior.order([]), transcript, [], prober, cfg, deadline)


def recover_token_at(i: int, transcript: Transcript, prefix, prior: LanguagePrior, prober: Prober,
                     cfg: RecoveryConfig, deadline: float | None = None) -> TokenGuess:
    """Recover s_{i+1} (0-based ``i``) given the recovered prefix of length i."""
    if len(prefix) != i:
        raise ValueError(f"prefix has {len(prefix)} tokens, expected {i}")
    return _search(i, prior.order(prefix), transcript, list(prefix), prober, cfg, deadline)


def recover_sequence(template: SessionTemplate, transcript: Transcript, cfg: RecoveryConfig,
                     prior: LanguagePrior, n: int | None = None, truth=None) -> RecoveryResult:
    """Chain the per-position searches over the first ``n`` transcript steps."""
    n = len(transcript) if n is None else n
    result = RecoveryResult(truth=None if truth is None else [int(t) for t in truth][:n])
    prober = Prober(template, transcript, cfg.access)
    deadline = None if cfg.timeout_s is None else time.monotonic() + cfg.timeout_s
    for i in range(n):
        t0 = time.perf_counter()
        if i == 0:
            guess = recover_first_token(transcript, prior, prober, cfg, deadline)
        else:
            guess = recover_token_at(i, transcript, result.tokens, prior, prober, cfg, deadline)
        result.add(guess, (time.perf_counter() - t0) * 1000.0)
        if guess.timed_out:
            break
        prober.commit(guess.token)
    return result


RESULT_COLUMNS = ["position", "true_token", "recovered_token", "queries", "matched_below_epsilon", "elapsed_ms"]


def write_results_csv(path, results: list[RecoveryResult], with_timing: bool = False, run_ids=None) -> None:
    """One row per (run, position).  ``elapsed_ms`` is 0 unless ``with_timing``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run"] + RESULT_COLUMNS)
        for k, res in enumerate(results):
            run = k if run_ids is None else run_ids[k]
            for p, tok in enumerate(res.tokens):
                true = "" if res.truth is None else res.truth[p]
                ms = f"{res.elapsed_ms[p]:.3f}" if with_timing else "0"
                w.writerow([run, p + 1, true, tok, res.queries[p], int(res.matched[p]), ms])
