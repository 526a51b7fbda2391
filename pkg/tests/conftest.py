import hypothesis
import numpy as np
import pytest

from latticeopt import data, fem, lattice

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("default")


def random_topology(m: int, rng: np.random.Generator, density: float = 0.5) -> lattice.UnitTopology:
    return lattice.UnitTopology(m, (rng.random(4 * m * m) < density).astype(np.uint8))


def stable_random_topologies(m: int, count: int, seed: int, threshold: float = np.inf):
    """Deterministic stream of screening-stable random topologies."""
    rng = np.random.default_rng(seed)
    spec = lattice.GridSpec(m)
    out = []
    while len(out) < count:
        x = random_topology(m, rng)
        volume, res = fem.analyze(x, spec, threshold=threshold)
        if res.stable:
            out.append((x, volume, res.compliance))
    return out


@pytest.fixture(scope="session")
def tiny_dataset_m2():
    return data.generate(2, 400, seed=11)


@pytest.fixture(scope="session")
def small_dataset_m4():
    return data.generate(4, 1200, seed=21)
