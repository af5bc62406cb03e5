from __future__ import annotations

import pytest

from synthcorpus import Corpus, make_corpus

from vic.core import load_manifest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Corpus:
    return make_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def manifest(corpus):
    return load_manifest(corpus.manifest_path)
