import sys

import numpy as np
import pytest
from hypothesis import settings

from mdpretrain.geom import ComplexSnapshot
from mdpretrain.model import MDModel, ModelConfig

settings.register_profile("ci", max_examples=30, deadline=None)
settings.load_profile("ci")


def random_snapshot(rng: np.random.Generator, n_ligand: int = 4, n_receptor: int = 6,
                    feature_dim: int = 4, scale: float = 2.0) -> ComplexSnapshot:
    positions = rng.normal(scale=scale, size=(n_ligand + n_receptor, 3))
    features = rng.normal(size=(n_ligand + n_receptor, feature_dim))
    elements = ["C"] * (n_ligand + n_receptor)
    return ComplexSnapshot.build(elements, n_ligand, features, positions)


def tiny_config(**kw) -> ModelConfig:
    base = dict(feature_dim=4, prompt_dim=4, hidden=8, layers=2, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model():
    return MDModel(tiny_config(), seed=3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(results):
        terminalreporter.write_line(results[criterion][1])
