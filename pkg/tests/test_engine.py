import csv

import numpy as np
import pytest

from batchleak.engine import (
    FULL,
    TOP1,
    ReplayMismatch,
    Role,
    Session,
    SessionError,
    SessionTemplate,
    classify_pair,
    decode_step,
    probe_with_candidate,
    replay_context,
    run_victim_session,
)
from batchleak.models import ClassifierSpec, MLPClassifier, TransformerLM, TransformerSpec
from batchleak.quant import QuantConfig
from batchleak.tensor import l2_distance

PER_TENSOR = QuantConfig.parse("per-tensor", "int8")


@pytest.fixture(scope="module")
def lm():
    return TransformerLM.init(TransformerSpec(vocab_size=40, max_seq_len=24), 7)


@pytest.fixture(scope="module")
def template(lm):
    return SessionTemplate(lm, PER_TENSOR, adversary_prompt=(1, 2))


SECRET = [5, 17, 33, 0, 21, 8]


def test_transcript_shape(template):
    tr = run_victim_session(Session(template), SECRET)
    assert len(tr) == len(SECRET) == len(tr.adversary_tokens)
    assert tr.adversary_tokens[0] == 2
    # the adversary decodes greedily: each fed token is the previous top-1
    assert tr.adversary_tokens[1:] == [o.token_id for o in tr.observations[:-1]]
    assert all(o.mode == TOP1 and o.logits is None for o in tr.observations)


def test_only_adversary_output_is_returned(template):
    s = Session(template)
    obs = decode_step(s, [2, 9])
    assert s.roles == [Role.ADVERSARY, Role.VICTIM]
    assert isinstance(obs.logprob, float)
    solo = Session(SessionTemplate(template.model, QuantConfig.parse("none"), (1, 2)))
    paired = Session(SessionTemplate(template.model, QuantConfig.parse("none"), (1, 2)))
    assert decode_step(solo, [2, 9]) == decode_step(paired, [2, 30])


@pytest.mark.parametrize("access", ["white-box", "black-box"])
def test_true_token_reproduces_transcript(template, access):
    tr = run_victim_session(Session(template), SECRET)
    for i in range(len(SECRET)):
        obs = probe_with_candidate(template, SECRET[:i], SECRET[i], tr.adversary_tokens, access)
        assert obs == tr.observations[i]
        assert l2_distance(obs.payload(), tr.observations[i].payload()) == 0.0


def test_checkpoint_probe_matches_fresh_replay(template):
    tr = run_victim_session(Session(template), SECRET)
    state = replay_context(template, SECRET[:3], tr.adversary_tokens)
    fresh = probe_with_candidate(template, SECRET[:3], 11, tr.adversary_tokens)
    cloned = probe_with_candidate(template, SECRET[:3], 11, tr.adversary_tokens, state=state)
    assert fresh == cloned
    assert state.step_index == 3  # the checkpoint itself is untouched


def test_loud_candidate_is_detected(lm):
    params = dict(lm.params)
    emb = params["tok_emb"].copy()
    emb[39] *= 200.0
    params["tok_emb"] = emb
    loud = TransformerLM(lm.spec, params)
    t = SessionTemplate(loud, PER_TENSOR, (1, 2))
    tr = run_victim_session(Session(t), [5])
    obs = probe_with_candidate(t, [], 39, tr.adversary_tokens)
    assert l2_distance(obs.payload(), tr.observations[0].payload()) > 1e-6


def test_black_box_detects_divergent_transcript(template):
    tr = run_victim_session(Session(template), SECRET)
    wrong = list(tr.adversary_tokens)
    wrong[1] = (wrong[1] + 1) % 40
    with pytest.raises(ReplayMismatch):
        probe_with_candidate(template, SECRET[:2], 3, wrong, "black-box")


def test_session_errors(template):
    s = Session(template)
    with pytest.raises(SessionError):
        decode_step(s, [1])
    s.finish_other()
    with pytest.raises(SessionError):
        decode_step(s, [1, 2])
    with pytest.raises(SessionError):
        probe_with_candidate(template, [1, 2], 3, [2], "white-box")
    with pytest.raises(SessionError):
        run_victim_session(Session(template), [1] * 30)
    with pytest.raises(ValueError):
        SessionTemplate(template.model, PER_TENSOR, adversary_prompt=())


def test_replicated_adversary_rows(lm):
    t3 = SessionTemplate(lm, PER_TENSOR, (1, 2), batch_size=3)
    s = Session(t3)
    assert s.roles == [Role.ADVERSARY, Role.ADVERSARY, Role.VICTIM]
    tr = run_victim_session(s, SECRET)
    obs = probe_with_candidate(t3, SECRET[:2], SECRET[2], tr.adversary_tokens)
    assert obs == tr.observations[2]


def test_full_logit_observation(lm):
    t = SessionTemplate(lm, PER_TENSOR, (1,), obs_mode=FULL)
    tr = run_victim_session(Session(t), SECRET[:2])
    assert tr.observations[0].payload().shape == (40,)


def test_transcript_csv(tmp_path, template):
    tr = run_victim_session(Session(template), SECRET)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "token_id", "top1_logprob"]
    assert len(rows) == len(SECRET) + 1
    assert float(rows[1][2]) == tr.observations[0].logprob


def test_classify_pair_profile():
    m = MLPClassifier.init(ClassifierSpec(depth=7), 0)
    rng = np.random.default_rng(0)
    p, x = rng.random((2, 64), dtype=np.float32)
    obs, prof = classify_pair(m, p, x, PER_TENSOR, record_scales=True)
    assert obs.mode == FULL and obs.logits.shape == (10,)
    assert len(prof) == 7 and prof.scales().shape == (7,)
    again, none = classify_pair(m, p, x, PER_TENSOR)
    assert none is None and np.array_equal(again.logits, obs.logits)
