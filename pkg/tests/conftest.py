"""Shared fixtures: trained toy models are cached in the pytest cache dir."""

from __future__ import annotations

import hashlib
import inspect

import pytest

from batchleak.models import ClassifierSpec, Corpus, TransformerSpec, blob_splits, load_model, save_model
from batchleak.models import train as train_mod

ACCEPTANCE_LINES: list[str] = []

LM_STEPS = 3000
CLS_STEPS = 1500


def _cache_key(*parts) -> str:
    # Retrain whenever the trainer source or the settings change.
    h = hashlib.sha256(inspect.getsource(train_mod).encode())
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _cached(request, name, key, build):
    path = request.config.cache.mkdir("batchleak-models") / f"{name}-{key}.qlk"
    if not path.exists():
        tmp = path.with_suffix(".tmp")
        save_model(build(), tmp)
        tmp.replace(path)
    return load_model(path)


@pytest.fixture(scope="session")
def corpus():
    return Corpus.embedded()


@pytest.fixture(scope="session")
def blob_data():
    return blob_splits(0)


@pytest.fixture(scope="session")
def trained_lm(request, corpus):
    spec = TransformerSpec(vocab_size=corpus.vocab.size)
    key = _cache_key("lm", spec, LM_STEPS, 0)
    return _cached(request, "lm", key, lambda: train_mod.train_char_lm(corpus, spec, LM_STEPS, seed=0).model)


@pytest.fixture(scope="session")
def trained_classifiers(request, blob_data):
    (x, y), _ = blob_data
    out = {}
    for depth in (3, 18, 50):
        spec = ClassifierSpec(depth=depth)
        key = _cache_key("cls", spec, CLS_STEPS, 0)
        out[depth] = _cached(request, f"cls{depth}", key,
                             lambda spec=spec: train_mod.train_classifier(spec, x, y, CLS_STEPS, seed=0).model)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
