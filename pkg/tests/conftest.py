import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_labels(rng, shape, n_labels, p_zero=0.3):
    seg = rng.integers(1, n_labels + 1, size=shape)
    seg[rng.random(shape) < p_zero] = 0
    return seg


def two_slabs(shape=(15, 15, 15), gap=1):
    """Label 1 below x = c, label 2 above x = c + gap, empty plane(s) between."""
    seg = np.zeros(shape, dtype=np.int64)
    c = shape[0] // 2
    seg[:c] = 1
    seg[c + gap:] = 2
    return seg


@pytest.fixture(scope="session")
def tiny_work(tmp_path_factory):
    """A working directory after a full ``voxmerge run`` with the tiny configuration."""
    import json

    from fixtures import TINY_CONFIG
    from voxmerge.cli import main

    root = tmp_path_factory.mktemp("tiny")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    work = root / "work"
    assert main(["--config", str(cfg_path), "run", "--work", str(work)]) == 0
    return cfg_path, work
