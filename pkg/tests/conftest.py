import pytest

from helpers import CORPUS_ROOT
from vexploit.corpus import load_corpus


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(CORPUS_ROOT)
