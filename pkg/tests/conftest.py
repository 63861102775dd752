import numpy as np
import pytest

from zslbench.benchmark import final_split
from zslbench.datamodel import DatasetBundle, SplitSpec
from zslbench.splitgen import SyntheticConfig, make_synthetic


@pytest.fixture(scope="session")
def synth():
    return make_synthetic(SyntheticConfig())


@pytest.fixture(scope="session")
def synth_final(synth):
    """The sweep dataset with train+val merged for final training."""
    return synth.with_split(final_split(synth.split))


@pytest.fixture
def tiny_bundle():
    # 3 classes, 2-d features and embeddings, class 2 unseen
    X = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [-1.0, -1.0], [-0.9, -1.1]])
    y = np.array([0, 0, 1, 1, 2, 2])
    E = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    return DatasetBundle(X, y, E, SplitSpec([0, 1], [], [2], [], "tiny"))


def random_instance(rng, n_classes=4, d=5, a=3):
    W = rng.normal(size=(d, a))
    x = rng.normal(size=d)
    E = rng.normal(size=(n_classes, a))
    return W, x, E


def ncm_accuracy(bundle, classes):
    """Nearest-class-mean accuracy on ``classes``, with means taken over
    every image of the class (an oracle: it sees unseen-class images)."""
    classes = np.asarray(sorted(classes))
    idx = np.flatnonzero(np.isin(bundle.labels, classes))
    X, y = bundle.features[idx], bundle.labels[idx]
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    d = ((X[:, None, :] - means[None]) ** 2).sum(-1)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean([np.mean(pred[y == c] == c) for c in classes]))
