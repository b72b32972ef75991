from pathlib import Path

import numpy as np
import pytest

from object_model import ShapeRegistry
from x86_codec import CodeBuffer

from native.region import native_supported

ROOT = Path(__file__).resolve().parent.parent

SITE_BASE = 0x401000
SITE_IC = 0x402023
SITE_HEX = "48 8b 05 1c 10 00 00  48 8b 04 c7  48 89 45 c8"


def pytest_collection_modifyitems(config, items):
    if native_supported():
        return
    skip = pytest.mark.skip(reason="native scenarios need an x86_64 Linux host")
    for item in items:
        if "native" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def ic_site():
    return CodeBuffer.from_hex(SITE_HEX, SITE_BASE)


@pytest.fixture
def shapes():
    return ShapeRegistry()


@pytest.fixture
def rng():
    return np.random.default_rng(20240229)


@pytest.fixture
def corpus_dir():
    return ROOT / "corpus"
