import json

import numpy as np
import pytest

from mvcl.encoder import EncoderConfig
from mvcl.matcher import MatchConfig
from mvcl.synthetic import SyntheticSpec, make_corpus
from mvcl.trainer import TrainConfig

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def small_config(**overrides) -> TrainConfig:
    """A desk-sized model that trains in a few milliseconds per step."""
    enc = overrides.pop("encoder", EncoderConfig(kind="lookup_recurrent", d=8, hidden=4))
    match = overrides.pop("match", MatchConfig(h_rnn=4, mlp_hidden=8))
    base = dict(encoder=enc, match=match, batch_size=4, total_steps=6, eval_every=3, l1=4,
                learning_rate=3e-3)
    base.update(overrides)
    return TrainConfig(**base)


def write_embeddings(corpus, path, d=6, seed=0):
    """Random per-token vectors for every case, in the embeddings.jsonl layout."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(corpus.cases):
            vecs = rng.normal(size=(corpus.cases[cid].token_count, d)).round(6).tolist()
            fh.write(json.dumps({"id": cid, "vectors": vecs}) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synthetic():
    return make_corpus(SyntheticSpec(n_train=8, n_validation=4, n_test=4, seed=11))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
