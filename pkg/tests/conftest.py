import numpy as np
import pytest

from carben import classifier


@pytest.fixture(scope="session")
def shape_splits():
    """Seed-0 synthetic dataset, split 2000 train / 500 test."""
    ds = classifier.synth_shapes(0, 2500)
    train = classifier.LabeledDataset(ds.images[:2000], ds.labels[:2000], ds.class_names, "synth:0:2500[:2000]")
    test = classifier.LabeledDataset(ds.images[2000:], ds.labels[2000:], ds.class_names, "synth:0:2500[2000:]")
    return train, test


@pytest.fixture(scope="session")
def oracle_model(shape_splits):
    """The frozen reference model: seed 0, 5 epochs, lr 0.05, momentum 0.9, batch 32."""
    train, _ = shape_splits
    return classifier.train(train, 5, 0.05, 0.9, 32, 0)


@pytest.fixture(scope="session")
def quick_model():
    """Small fast model for API/CLI plumbing tests."""
    ds = classifier.synth_shapes(3, 240)
    return classifier.train(ds, 2, 0.05, 0.9, 32, 3)


@pytest.fixture()
def rand_image():
    rng = np.random.default_rng(11)
    return (rng.random((3, 16, 16)) * 0.8 + 0.1).astype(np.float32)
