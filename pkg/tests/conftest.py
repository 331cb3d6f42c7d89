import numpy as np
import pytest
from hypothesis import settings

from spkinfo.data import QuantizedDataset, SpeakerDataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def small_ds():
    rng = np.random.default_rng(3)
    return SpeakerDataset(4, {"bob": rng.normal(size=(3, 4)), "alice": rng.normal(size=(3, 4))},
                          {"source": "unit", "duration_s": 5.0})


def random_qds(rng, max_m=4, max_bits=3, max_vectors=200, max_speakers=10):
    """Random small quantized dataset with unequal per-speaker counts."""
    m = int(rng.integers(1, max_m + 1))
    bits = int(rng.integers(1, max_bits + 1))
    n = int(rng.integers(1, max_speakers + 1))
    total = int(rng.integers(n, max_vectors + 1))
    sizes = np.bincount(rng.integers(0, n, total - n), minlength=n) + 1
    # skew each speaker's code distribution so entropies are not all maximal
    speakers = {}
    for i, k in enumerate(sizes):
        p = rng.dirichlet(np.full(2**bits, 0.5), size=m)
        speakers[f"s{i}"] = np.array([[rng.choice(2**bits, p=p[j]) for j in range(m)] for _ in range(k)])
    return QuantizedDataset(bits, speakers)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
