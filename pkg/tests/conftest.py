"""Shared fixtures. Session-scoped data is generated once and reused."""

import numpy as np
import pytest

import chaincal as cc


@pytest.fixture(scope="session")
def model():
    return cc.default_model()


@pytest.fixture(scope="session")
def small_dataset(model):
    # 60 clean poses, enough for every unit-level scenario
    return cc.generate(model, 60, seed=3)


@pytest.fixture(scope="session")
def big_dataset(model):
    # 1100 clean poses: 100 held out leaves a 1000-pose training pool
    return cc.generate(model, 1100, seed=11)


@pytest.fixture(scope="session")
def big_split(big_dataset):
    perm = np.random.default_rng(100).permutation(len(big_dataset))
    return perm[:100], perm[100:]
