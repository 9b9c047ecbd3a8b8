import numpy as np
import pytest
import torch

from mmie.data import CorpusSpec, corpus_meta, generate_corpus, write_corpus

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def _write_splits(tmp_dir, spec: CorpusSpec) -> dict:
    splits = generate_corpus(spec)
    meta = corpus_meta(spec)
    paths = {}
    for name, samples in zip(("train", "val", "test"), splits):
        path = tmp_dir / f"{name}.jsonl"
        write_corpus(samples, path, meta=meta)
        paths[name] = str(path)
    paths["spec"] = spec
    return paths


@pytest.fixture(scope="session")
def tiny_ner_corpus(tmp_path_factory):
    """Small on-disk splits for fast integration tests."""
    spec = CorpusSpec(task="ner", num_train=64, num_val=32, num_test=32,
                      seed=7, visual_dependency=0.5)
    return _write_splits(tmp_path_factory.mktemp("ner-corpus"), spec)


@pytest.fixture(scope="session")
def tiny_re_corpus(tmp_path_factory):
    spec = CorpusSpec(task="re", num_train=64, num_val=32, num_test=32,
                      seed=9, visual_dependency=0.5)
    return _write_splits(tmp_path_factory.mktemp("re-corpus"), spec)
