import pytest

from fairrobust import data as dt
from fairrobust import model as mdl


@pytest.fixture(scope="session")
def tiny_dataset():
    """Seeded 6-user x 8-item dataset with a built-in consumer utility gap."""
    return dt.synth_generate(11, 6, 8, mean_interactions=5, group_bias=1.0)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    return dt.temporal_split(tiny_dataset)


@pytest.fixture(scope="session")
def tiny_params(tiny_split):
    return mdl.bpr_train(tiny_split, mdl.RecModelConfig(d=4, layers=2, epochs=3, seed=1))


@pytest.fixture(scope="session")
def small_dataset():
    """40 users x 25 items, biased enough for attacks to find signal."""
    return dt.synth_generate(7, 40, 25, mean_interactions=12, group_bias=1.5, popularity_skew=1.2)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return dt.temporal_split(small_dataset)


@pytest.fixture(scope="session")
def small_params(small_split):
    return mdl.bpr_train(small_split, mdl.RecModelConfig(d=8, layers=2, epochs=10, seed=1))
