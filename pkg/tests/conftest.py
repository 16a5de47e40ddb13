import numpy as np
import pytest
from hypothesis import settings

from candplan.config import RunConfig
from candplan.scenario import generate_corpus, to_ego_frame
from candplan.training import train
from candplan.vocabulary import build_vocabulary

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(range(500, 540), 0.5)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocabulary([to_ego_frame(s, s.expert.points) for s in small_corpus], 8, seed=0)


@pytest.fixture(scope="session")
def small_cfg():
    return RunConfig(k=8, steps=20, warmup_steps=5, hidden=32, wm_hidden=16)


@pytest.fixture(scope="session")
def small_model(small_corpus, small_vocab, small_cfg):
    return train(small_cfg, small_corpus, small_vocab.anchors, log_every=0)
