"""Candidate scoring against a co-batched classifier input, plus scale-profile analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import ScaleProfile, classify_pair
from ..models.classifier import MLPClassifier, forward_classifier
from ..quant import QuantConfig
from ..tensor import Rng, l2_distance

PROBE_STRATEGIES = ("random", "layer-diverse")
RANKING_STRATEGIES = ("top1", "top3", "cluster-closest", "cluster-top3")


@dataclass(frozen=True)
class CandidateScore:
    candidate: int
    score: float


def score_candidates(model: MLPClassifier, probe, secret_obs, candidates, cfg: QuantConfig,
                     candidate_ids=None, batch_size: int = 2) -> list[CandidateScore]:
    """Rank candidates by ||obs(probe | secret) - obs(probe | candidate)||, ascending.

    Ties go to the lower candidate id.
    """
    candidates = np.asarray(candidates, dtype=np.float32)
    ids = np.arange(len(candidates)) if candidate_ids is None else np.asarray(candidate_ids)
    target = secret_obs.payload()
    scores = []
    for cid, c in zip(ids, candidates):
        obs, _ = classify_pair(model, probe, c, cfg, batch_size=batch_size)
        scores.append(CandidateScore(int(cid), l2_distance(target, obs.payload())))
    return sorted(scores, key=lambda s: (s.score, s.candidate))


def scale_profile(model: MLPClassifier, x, cfg: QuantConfig) -> ScaleProfile:
    """Profile of ``x`` run on its own."""
    profile = ScaleProfile()
    forward_classifier(model, np.asarray(x, dtype=np.float32).reshape(1, -1), cfg, profile)
    return profile


def select_probe(pool, model: MLPClassifier, strategy: str, cfg: QuantConfig, rng: Rng | None = None) -> int:
    """Index of the probe to use.

    ``random`` picks uniformly with ``rng``.  ``layer-diverse`` runs each
    probe alone and picks the one with the smallest mean activation range
    over the quantized layers (lowest index on ties).
    """
    pool = np.asarray(pool, dtype=np.float32)
    if len(pool) == 0:
        raise ValueError("probe pool is empty")
    if strategy == "random":
        if rng is None:
            raise ValueError("random probe selection needs an rng")
        return rng.integers(0, len(pool))
    if strategy == "layer-diverse":
        means = [scale_profile(model, p, cfg).ranges().mean() for p in pool]
        return int(np.argmin(means))
    raise ValueError(f"unknown probe strategy {strategy!r}")


@dataclass
class PurityReport:
    per_class: dict[int, float]
    overall: float
    baseline: float
    k: int


def knn_class_purity(profiles, labels, k: int = 10) -> PurityReport:
    """Fraction of each sample's k nearest profiles (Euclidean) sharing its label.

    Distance ties resolve to the lower sample index.  ``baseline`` is
    1 / n_classes.
    """
    X = np.asarray(profiles, dtype=np.float64)
    y = np.asarray(labels)
    n = len(X)
    if X.ndim != 2 or n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} equal-length profiles")
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    same = np.empty(n)
    for i in range(n):
        row = d2[i].copy()
        row[i] = np.inf
        nn = np.argsort(row, kind="stable")[:k]
        same[i] = np.mean(y[nn] == y[i])
    classes = np.unique(y)
    per_class = {int(c): float(same[y == c].mean()) for c in classes}
    return PurityReport(per_class, float(same.mean()), 1.0 / len(classes), k)


def _kmeans(X: np.ndarray, k: int, rng: Rng, iters: int = 25) -> np.ndarray:
    k = min(k, len(X))
    centres = X[rng.choice(len(X), k)]
    assign = np.zeros(len(X), dtype=np.int64)
    for _ in range(iters):
        d = ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d, axis=1)
        for j in range(k):
            if np.any(assign == j):
                centres[j] = X[assign == j].mean(axis=0)
    return assign


def _majority(labels) -> int:
    vals, counts = np.unique(np.asarray(labels), return_counts=True)
    return int(vals[np.argmax(counts)])


def infer_class(ranked: list[CandidateScore], labels, strategy: str = "top1", profiles=None,
                rng: Rng | None = None, pool: int = 100, n_clusters: int = 10) -> int:
    """Predict the secret's class from a ranked candidate list.

    ``top1``/``top3`` vote over the best candidates.  The cluster strategies
    group the best ``pool`` candidates by scale profile and vote within the
    cluster with the lowest mean score, or the cluster holding most of the
    top three.
    """
    labels = np.asarray(labels)
    order = [s.candidate for s in ranked]
    if strategy == "top1":
        return int(labels[order[0]])
    if strategy == "top3":
        return _majority(labels[order[:3]])
    if strategy not in RANKING_STRATEGIES:
        raise ValueError(f"unknown ranking strategy {strategy!r}")
    if profiles is None or rng is None:
        raise ValueError("cluster strategies need candidate profiles and an rng")
    top = order[:pool]
    assign = _kmeans(np.asarray(profiles, dtype=np.float64)[top], n_clusters, rng)
    scores = np.array([s.score for s in ranked[:pool]])
    if strategy == "cluster-closest":
        means = {c: scores[assign == c].mean() for c in np.unique(assign)}
        best = min(means, key=lambda c: (means[c], c))
    else:
        best = _majority(assign[:3])
    members = np.asarray(top)[assign == best]
    return _majority(labels[members])
