import numpy as np
import pytest

from partwise.core import VehicleCategory, default_catalog
from partwise.harness import PipelineConfig, train_bundle
from partwise.synth import NoiseConfig, default_templates, generate_dataset


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def templates():
    return default_templates()


@pytest.fixture(scope="session")
def clean_dataset(templates):
    """Small zero-noise dataset: 10 scenes per category."""
    mix = {c: 10 for c in VehicleCategory}
    return generate_dataset(mix, templates, NoiseConfig.none(), seed=11)


@pytest.fixture(scope="session")
def clean_bundle(clean_dataset):
    """Models trained on the full clean dataset."""
    return train_bundle(clean_dataset.scenes, clean_dataset.catalog, PipelineConfig(), seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
