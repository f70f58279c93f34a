import numpy as np
import pytest

from pointhop import synthetic
from pointhop.geometry import normalize
from pointhop.tree import TreeConfig, fit_tree

# A reduced cascade that keeps unit tests fast.
SMALL = TreeConfig(
    num_hops=3,
    k_per_hop=(12, 8, 8),
    points_per_hop=(128, 64, 32),
    energy_threshold=1e-3,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_clouds():
    return [normalize(c) for c in synthetic.make_dataset(4, num_points=160, seed=7)]


@pytest.fixture(scope="session")
def small_tree(small_clouds):
    return fit_tree(small_clouds, SMALL)


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory):
    """4-class synthetic xyz tree on disk: 6 train / 3 test clouds per class."""
    from pointhop.io import Dataset, write_xyz_dir

    root = tmp_path_factory.mktemp("toy")
    for split, count, seed in (("train", 6, 0), ("test", 3, 1)):
        clouds = synthetic.make_dataset(count, num_points=200, seed=seed)
        write_xyz_dir(root, Dataset(clouds, list(synthetic.SHAPES), split))
    return root


TOY_OVERRIDES = [
    "--set", "points_per_hop=128,64,32,16",
    "--set", "k_per_hop=12,8,8,8",
    "--set", "input_points=200",
]


# Acceptance verdict lines, echoed again in the terminal summary so they
# survive output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
