"""Shared fixtures."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from awbe.raw_image import RawImage  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng: np.random.Generator, height: int, width: int, lo=0.0, hi=1.0) -> RawImage:
    return RawImage(data=rng.uniform(lo, hi, size=(height, width, 3)))


@pytest.fixture
def small_image(rng):
    return random_image(rng, 20, 24)
