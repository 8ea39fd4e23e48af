import pytest

from promptsearch.datasets import generate_math_dataset
from promptsearch.oracles import NgramOracle
from promptsearch.oracles.planted import oracle_for_task

TINY_CORPUS = "the cat sat\nthe cat ran\nthe dog sat\na dog ran far"


@pytest.fixture
def ngram():
    return NgramOracle(TINY_CORPUS, order=2)


@pytest.fixture
def add_dataset():
    return generate_math_dataset("add_two", seed=0)


@pytest.fixture
def planted_add(add_dataset):
    return oracle_for_task("add_two", add_dataset)
