import csv

import numpy as np
import pytest

from batchleak.attacks import (
    infer_class,
    knn_class_purity,
    run_cls_attack,
    scale_profile,
    score_candidates,
    select_probe,
    write_cls_csv,
)
from batchleak.attacks.classification import CandidateScore
from batchleak.engine import classify_pair
from batchleak.models import ClassifierSpec, MLPClassifier, blob_splits
from batchleak.quant import QuantConfig
from batchleak.tensor import Rng

PER_TENSOR = QuantConfig.parse("per-tensor", "int8")


@pytest.fixture(scope="module")
def model():
    return MLPClassifier.init(ClassifierSpec(depth=6), 3)


@pytest.fixture(scope="module")
def data():
    return blob_splits(0, 100, 300)[1]


def test_singleton_candidate(model, data):
    x, _ = data
    obs, _ = classify_pair(model, x[0], x[5], PER_TENSOR)
    ranked = score_candidates(model, x[0], obs, x[5:6], PER_TENSOR)
    assert ranked == [CandidateScore(0, 0.0)]


def test_scores_sorted_with_id_ties(model, data):
    x, _ = data
    obs, _ = classify_pair(model, x[0], x[5], PER_TENSOR)
    cands = np.stack([x[7], x[5], x[5], x[9]])
    ranked = score_candidates(model, x[0], obs, cands, PER_TENSOR)
    assert [r.candidate for r in ranked[:2]] == [1, 2]
    assert ranked[0].score == ranked[1].score == 0.0
    assert all(a.score <= b.score for a, b in zip(ranked, ranked[1:]))


def test_layer_diverse_picks_blank_on_bias_free_model(data):
    x, _ = data
    m = MLPClassifier.init(ClassifierSpec(depth=6, bias=False), 0)
    pool = np.concatenate([x[:10], np.zeros((1, 64), np.float32)])
    assert select_probe(pool, m, "layer-diverse", PER_TENSOR) == 10
    assert len(scale_profile(m, x[0], PER_TENSOR)) == 6


def test_random_probe_is_seeded(model, data):
    x, _ = data
    a = select_probe(x[:20], model, "random", PER_TENSOR, Rng(1))
    assert a == select_probe(x[:20], model, "random", PER_TENSOR, Rng(1))
    with pytest.raises(ValueError):
        select_probe(x[:20], model, "random", PER_TENSOR)
    with pytest.raises(ValueError):
        select_probe(x[:20], model, "loudest", PER_TENSOR)
    with pytest.raises(ValueError):
        select_probe(x[:0], model, "layer-diverse", PER_TENSOR)


def test_purity_trivial_cases():
    labels = np.repeat(np.arange(2), 20)
    same = knn_class_purity(np.zeros((40, 3)), labels, k=10)
    # all distances tie, so neighbours are the lowest indices: class 0 for everyone
    assert same.per_class[0] == 1.0 and same.per_class[1] == 0.0 and same.overall == 0.5
    assert same.baseline == 0.5
    sep = np.concatenate([np.zeros((20, 3)), np.full((20, 3), 100.0)])
    assert knn_class_purity(sep, labels, k=10).overall == 1.0
    with pytest.raises(ValueError):
        knn_class_purity(np.zeros((5, 2)), np.zeros(5), k=10)


def test_infer_class_strategies():
    labels = np.array([0, 1, 1, 2, 2, 2])
    ranked = [CandidateScore(i, float(i)) for i in [0, 1, 2, 3, 4, 5]]
    assert infer_class(ranked, labels, "top1") == 0
    assert infer_class(ranked, labels, "top3") == 1
    prof = np.array([[0.0], [0.1], [0.1], [5.0], [5.0], [5.0]])
    got = infer_class(ranked, labels, "cluster-closest", profiles=prof, rng=Rng(0), pool=6, n_clusters=2)
    assert got in (0, 1)
    with pytest.raises(ValueError):
        infer_class(ranked, labels, "cluster-top3")
    with pytest.raises(ValueError):
        infer_class(ranked, labels, "vote")


def test_exact_recovery_runner(model, data, tmp_path):
    x, y = data
    runs = run_cls_attack(model, PER_TENSOR, x, y, candidates=30, runs=3, pool_size=10)
    # the secret reproduces its own observation, so the best score is exactly 0
    assert all(r.top_score == 0.0 and r.secret_rank >= 1 for r in runs)
    again = run_cls_attack(model, PER_TENSOR, x, y, candidates=30, runs=3, pool_size=10)
    assert runs == again
    excl = run_cls_attack(model, PER_TENSOR, x, y, candidates=30, runs=3, pool_size=10, include_secret=False,
                          rank="cluster-top3")
    assert all(r.secret_rank is None and r.top != r.secret for r in excl)
    path = tmp_path / "c.csv"
    write_cls_csv(path, runs)
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "run" and len(rows) == 4
    with pytest.raises(ValueError):
        run_cls_attack(model, PER_TENSOR, x[:20], y[:20], candidates=30, pool_size=10)


def test_per_token_gives_no_signal(model, data):
    x, _ = data
    cfg = QuantConfig.parse("per-token", "int8")
    obs, _ = classify_pair(model, x[0], x[5], cfg)
    ranked = score_candidates(model, x[0], obs, x[5:40], cfg)
    assert all(r.score == 0.0 for r in ranked)
