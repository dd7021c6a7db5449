import numpy as np
import pytest

from fairfed.dataset import Dataset, split_from_assignment


def random_dataset(rng, n=60, p=3, A=2, scale=1.0):
    """Random data with every (group, label) cell populated."""
    X = scale * rng.standard_normal((n, p))
    a = np.arange(n) % A
    y = (np.arange(n) // A) % 2
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], a[perm], A)


def random_split(rng, K=3, **kw):
    ds = random_dataset(rng, **kw)
    owner = rng.integers(0, K, len(ds))
    owner[:K] = np.arange(K)  # no empty shard
    return ds, split_from_assignment(ds, [np.flatnonzero(owner == k) for k in range(K)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
