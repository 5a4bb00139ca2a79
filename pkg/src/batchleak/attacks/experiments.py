"""Experiment loops shared by the command line and the acceptance suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..engine import Session, SessionTemplate, classify_pair, run_victim_session
from ..models.classifier import MLPClassifier
from ..quant import QuantConfig
from ..tensor import Rng
from .classification import (
    PurityReport,
    infer_class,
    knn_class_purity,
    scale_profile,
    score_candidates,
    select_probe,
)
from .recovery import LanguagePrior, RecoveryConfig, RecoveryResult, recover_sequence


def run_llm_attack(template: SessionTemplate, secrets, rcfg: RecoveryConfig, prior: LanguagePrior,
                   progress=None) -> list[RecoveryResult]:
    """Co-batch each secret with the adversary, then recover it from the transcript."""
    results = []
    for k, secret in enumerate(secrets):
        transcript = run_victim_session(Session(template), secret)
        results.append(recover_sequence(template, transcript, rcfg, prior, truth=secret))
        if progress:
            progress(k, results[-1])
    return results


@dataclass
class LlmSummary:
    runs: int
    completed: int
    accuracy: float
    mean_queries: float
    position_queries: list[float]  # mean queries at positions 1..L over completed runs
    chance: float


def chance_agreement(recovered, secrets) -> float:
    """Token agreement between each recovery and every *other* run's secret.

    This is the accuracy an attack would score if its output carried no
    information about its own victim.  Pairs are compared over their common
    prefix length.
    """
    n = len(recovered)
    if n < 2:
        return float("nan")
    hits = total = 0
    for i in range(n):
        r = np.asarray(recovered[i])
        for j in range(n):
            if i != j:
                m = min(len(r), len(secrets[j]))
                hits += int(np.sum(r[:m] == np.asarray(secrets[j][:m])))
                total += m
    return hits / total if total else float("nan")


def summarize_llm(results: list[RecoveryResult]) -> LlmSummary:
    """Timed-out runs count towards ``runs`` but not towards the means."""
    done = [r for r in results if r.completed]
    if not done:
        return LlmSummary(len(results), 0, float("nan"), float("nan"), [], float("nan"))
    flat_q = [q for r in done for q in r.queries]
    acc = float(np.mean([c for r in done for c in r.correct]))
    longest = max(len(r.queries) for r in done)
    per_pos = [float(np.mean([r.queries[p] for r in done if len(r.queries) > p])) for p in range(longest)]
    chance = chance_agreement([r.tokens for r in done], [r.truth for r in done])
    return LlmSummary(len(results), len(done), acc, float(np.mean(flat_q)), per_pos, chance)


@dataclass
class ClsRun:
    run: int
    secret: int
    secret_label: int
    probe: int  # index into the probe pool; the last entry is the blank image
    top: int
    top_label: int
    predicted: int
    secret_rank: int | None  # 1-based rank of the secret, None when excluded
    top_score: float

    @property
    def correct(self) -> bool:
        """Exact recovery when the secret is a candidate, else class match."""
        if self.secret_rank is not None:
            return self.top == self.secret
        return self.predicted == self.secret_label


def probe_pool(x: np.ndarray, size: int) -> np.ndarray:
    """The first ``size`` samples plus an all-zero input."""
    return np.concatenate([x[:size], np.zeros((1, x.shape[1]), dtype=np.float32)])


def run_cls_attack(model: MLPClassifier, cfg: QuantConfig, x, y, *, candidates: int = 200,
                   include_secret: bool = True, probe: str = "layer-diverse", runs: int = 10,
                   pool_size: int = 50, rank: str = "top1", seed: int = 0, progress=None) -> list[ClsRun]:
    """Score candidates against a secret co-batched with a probe, ``runs`` times.

    Probes come from the first ``pool_size`` samples (plus a blank input);
    secrets and candidates are drawn from the rest.  Run k uses the stream
    ``Rng(seed).spawn(k)``.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    pool = probe_pool(x, pool_size)
    avail = len(x) - pool_size
    need = candidates if include_secret else candidates + 1
    if avail < need:
        raise ValueError(f"dataset has {avail} non-probe samples, need {need}")
    fixed_probe = select_probe(pool, model, probe, cfg) if probe == "layer-diverse" else None
    profiles: dict[int, np.ndarray] = {}
    out = []
    for k in range(runs):
        rng = Rng(seed).spawn(k)
        idx = rng.choice(avail, need) + pool_size
        if include_secret:
            cands, secret = idx, int(idx[rng.integers(0, candidates)])
        else:
            cands, secret = idx[1:], int(idx[0])
        p = fixed_probe if fixed_probe is not None else select_probe(pool, model, probe, cfg, rng)
        obs, _ = classify_pair(model, pool[p], x[secret], cfg)
        ranked = score_candidates(model, pool[p], obs, x[cands], cfg, candidate_ids=cands)
        prof = None
        if rank.startswith("cluster"):
            for c in cands:
                if int(c) not in profiles:
                    profiles[int(c)] = scale_profile(model, x[c], cfg).scales()
            prof = np.zeros((len(x), len(next(iter(profiles.values())))))
            for c, v in profiles.items():
                prof[c] = v
        predicted = infer_class(ranked, y, rank, profiles=prof, rng=rng.spawn(1))
        order = [s.candidate for s in ranked]
        srank = order.index(secret) + 1 if include_secret else None
        out.append(ClsRun(k, secret, int(y[secret]), int(p), order[0], int(y[order[0]]), predicted, srank,
                          ranked[0].score))
        if progress:
            progress(k, out[-1])
    return out


def profile_purity(model: MLPClassifier, cfg: QuantConfig, x, y, k: int = 10) -> PurityReport:
    """kNN class purity of per-layer scale profiles, each input run alone."""
    prof = np.array([scale_profile(model, xi, cfg).scales() for xi in np.asarray(x, dtype=np.float32)])
    return knn_class_purity(prof, y, k)


CLS_COLUMNS = ["run", "secret_index", "secret_label", "probe", "top1_candidate", "top1_label",
               "predicted_label", "secret_rank", "top1_score", "correct"]


def write_cls_csv(path, runs: list[ClsRun]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLS_COLUMNS)
        for r in runs:
            w.writerow([r.run, r.secret, r.secret_label, r.probe, r.top, r.top_label, r.predicted,
                        "" if r.secret_rank is None else r.secret_rank, format(r.top_score, ".18g"),
                        int(r.correct)])
