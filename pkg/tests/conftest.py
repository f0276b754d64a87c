"""Shared fixtures: tiny model configs and a small preprocessed corpus.

Session scope keeps the expensive pieces (synthesis, preprocessing)
to one run; tests must not mutate what they receive.
"""

import numpy as np
import pytest
import torch

from unicardio.model import ModelConfig
from unicardio.signals import preprocess_corpus
from unicardio.synthdata import synth_trimodal


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    """Smallest config that exercises every architectural path."""
    return ModelConfig(
        L=16, C=12, n_modules=2, n_heads=2, kernel_sizes=(1, 3, 5),
        n_diffusion_steps=8,
    )


@pytest.fixture(scope="session")
def corpus():
    """64 tri-modal segments, preprocessed and split."""
    res = synth_trimodal(64, seed=0)
    streams = {m: a.reshape(-1) for m, a in res.signals.items()}
    return preprocess_corpus(streams, res.fs)


@pytest.fixture
def rng():
    return np.random.default_rng(123)
