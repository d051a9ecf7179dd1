import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from pisss.dataset import (ClassDef, ClassTaxonomy, Sample,
                           make_synthetic_fixture)
from pisss.models import ArchSpec, build_model


@pytest.fixture(scope="session", autouse=True)
def _torch_threads():
    torch.set_num_threads(2)


@pytest.fixture
def taxonomy3():
    return ClassTaxonomy((
        ClassDef(0, "background", (0, 0, 0), "background"),
        ClassDef(1, "road", (128, 64, 128), "surface"),
        ClassDef(2, "marking", (255, 255, 0), "sign"),
    ))


@pytest.fixture
def fixture_samples():
    return make_synthetic_fixture(seed=1, n=4, dims=(64, 64), num_classes=3)


@pytest.fixture
def rgb_sample(taxonomy3):
    rng = np.random.default_rng(0)
    label = rng.integers(0, 3, size=(48, 64)).astype(np.int64)
    image = rng.integers(0, 256, size=(48, 64, 3)).astype(np.uint8)
    return Sample(image, label, "rgb-0")


@pytest.fixture(scope="session")
def tiny_unet():
    """Small fixed-seed model shared by prediction-path tests."""
    torch.manual_seed(7)
    model = build_model(ArchSpec("unet", "resnet34", num_classes=3))
    model.eval()
    return model
