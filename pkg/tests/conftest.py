"""Shared fixtures: synthetic datasets and models trained once per session."""
import numpy as np
import pytest

from attrikit.data import make_bars, make_blobs
from attrikit.models import TrainConfig, build, train


@pytest.fixture(scope="session")
def blobs_train():
    return make_blobs(n=200, seed=21)


@pytest.fixture(scope="session")
def blobs_eval():
    return make_blobs(n=200, seed=22)


@pytest.fixture(scope="session")
def bars_train():
    return make_bars(n=400, seed=11)


@pytest.fixture(scope="session")
def bars_eval():
    return make_bars(n=240, seed=12)


@pytest.fixture(scope="session")
def logistic_blobs(blobs_train):
    model = build("logistic", 2, 2, seed=31)
    result = train(model, blobs_train, TrainConfig(learning_rate=0.3, epochs=30, batch_size=16, seed=31))
    assert result.accuracies[-1] >= 0.95
    return model


@pytest.fixture(scope="session")
def mlp_bars(bars_train):
    """MLP on flattened 8x8 bar/cross images (d=64, 4 classes)."""
    flat = bars_train.inputs.reshape(len(bars_train), -1)
    model = build("mlp", 64, 4, seed=41, hidden=[32])
    result = train(model, (flat, bars_train.labels), TrainConfig(learning_rate=0.2, epochs=20, batch_size=16, seed=41))
    assert result.accuracies[-1] >= 0.95
    return model


@pytest.fixture(scope="session")
def tinycnn_bars(bars_train):
    model = build("tinycnn", (8, 8, 1), 4, seed=51)
    result = train(model, bars_train, TrainConfig(learning_rate=0.15, epochs=14, batch_size=16, seed=51))
    assert result.accuracies[-1] >= 0.9
    return model


@pytest.fixture(scope="session")
def bars16_train():
    # wider bars on a larger canvas give the conv stack a 5x5 feature map,
    # which the localization tests need (the 8x8 variant collapses to 1x1)
    return make_bars(n=400, seed=13, size=16, width=3)


@pytest.fixture(scope="session")
def bars16_eval():
    return make_bars(n=240, seed=14, size=16, width=3)


@pytest.fixture(scope="session")
def tinycnn16_bars(bars16_train):
    model = build("tinycnn", (16, 16, 1), 4, seed=61)
    result = train(model, bars16_train, TrainConfig(learning_rate=0.25, epochs=30, batch_size=16, seed=61))
    assert result.accuracies[-1] >= 0.95
    return model
